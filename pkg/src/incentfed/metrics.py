"""Diagnostics computed from recorded run state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from incentfed import losses
from incentfed.errors import UnsupportedFamily

RATE_FLOOR = 1e-13
BGD_B_SQ_GRID = (1.0, 2.0, 4.0, 8.0)


def consensus_error(x_list, p) -> float:
    """Weighted spread ``sum_i p_i ||x_i - x_bar||^2`` of client iterates.

    Evaluated through the pairwise identity
    ``0.5 * sum_ij p_i p_j ||x_i - x_j||^2`` so that identical iterates give
    exactly zero regardless of rounding in ``x_bar``.
    """
    X = np.asarray(x_list, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    p = np.asarray(p, dtype=np.float64)
    diffs = X[:, None, :] - X[None, :, :]
    return 0.5 * float(np.einsum("i,j,ijk,ijk->", p, p, diffs, diffs))


def global_grad_norm_sq(problems, p_star, x) -> float:
    g = losses.weighted_grad(problems, p_star, x)
    return float(g @ g)


def bregman_gap(problems, p_star, x, x_star) -> float:
    """``D_f(x, x*) = f(x) - f(x*) - grad f(x*)^T (x - x*)`` for convex ``f``."""
    if not all(prob.convex for prob in problems):
        raise UnsupportedFamily("Bregman gap is only defined here for convex families")
    x, x_star = np.asarray(x, dtype=np.float64), np.asarray(x_star, dtype=np.float64)
    g_star = losses.weighted_grad(problems, p_star, x_star)
    return (
        losses.weighted_loss(problems, p_star, x)
        - losses.weighted_loss(problems, p_star, x_star)
        - float(g_star @ (x - x_star))
    )


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: int


def fit_rate(distances, rounds=None, floor: float = RATE_FLOOR) -> RateFit:
    """Least-squares line through ``(r, ln d_r)``; points at or below ``floor`` are dropped."""
    d = np.asarray(distances, dtype=np.float64)
    r = np.arange(d.size, dtype=np.float64) if rounds is None else np.asarray(rounds, dtype=np.float64)
    keep = d > floor
    if keep.sum() < 5:
        raise ValueError(f"rate fit needs at least 5 distances above {floor:g}, got {int(keep.sum())}")
    r, y = r[keep], np.log(d[keep])
    slope, intercept = np.polyfit(r, y, 1)
    resid = y - (slope * r + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if np.ptp(y) == 0.0:
        r_sq = 1.0
    else:
        r_sq = 1.0 - ss_res / ss_tot
    return RateFit(float(slope), float(intercept), float(r_sq), int(keep.sum()))


@dataclass(frozen=True)
class BgdFit:
    g_sq: float
    b_sq: float
    table: tuple  # (b_sq, minimal g_sq) for every grid value


def bgd_fit(problems, p_star, x_samples) -> BgdFit:
    """Fit the bounded-gradient-dissimilarity constants on a coarse ``B^2`` grid.

    For each grid value the smallest feasible ``G^2`` is computed; the reported
    pair has the least ``G^2``, ties going to the smaller ``B^2``.
    """
    xs = list(x_samples)
    if len(xs) < 10:
        raise ValueError("bounded-dissimilarity fit needs at least 10 sample points")
    lhs, rhs = [], []
    for x in xs:
        local = [losses.grad(prob, x) for prob in problems]
        lhs.append(np.mean([g @ g for g in local]))
        rhs.append(global_grad_norm_sq(problems, p_star, x))
    lhs, rhs = np.array(lhs), np.array(rhs)
    table = tuple((b, max(0.0, float(np.max(lhs - b * rhs)))) for b in BGD_B_SQ_GRID)
    b_sq, g_sq = min(table, key=lambda row: (row[1], row[0]))
    return BgdFit(g_sq=g_sq, b_sq=b_sq, table=table)


def delta_0(n0, n_star) -> float:
    """Initial weight-error bound ``(m-1) ||N_0 - N*|| / ||N*||_1``."""
    n0, n_star = np.asarray(n0, dtype=np.float64), np.asarray(n_star, dtype=np.float64)
    return (n0.size - 1) * float(np.linalg.norm(n0 - n_star)) / float(np.sum(np.abs(n_star)))


def weight_error_bounds(trace) -> np.ndarray:
    """Per-round bound ``delta_0 * rho^r`` on ``max_i |p_{i,r} - p_i*|``."""
    return trace.delta_0 * trace.rho ** np.arange(trace.R + 1)


def infeasibility_bound(trace, r_hat: int) -> float:
    """Bound on the round-average of ``||N_r - N*||^2`` over ``r_hat .. R-1``."""
    rho, R = trace.rho, trace.R
    return trace.ne_dist[0] ** 2 * (rho ** (2 * r_hat) - rho ** (2 * R)) / ((1 - rho**2) * (R - r_hat))


def averaged_iterate(trace, r_hat: int) -> np.ndarray:
    """Mean of the per-iteration averages ``x_bar_k`` for ``k = T_r_hat .. T_R - 1``."""
    if trace.x_bar is None:
        raise ValueError("averaged iterate needs a per-iteration trace")
    return trace.x_bar[r_hat * trace.H :].mean(axis=0)


def rounds_to_target(loss_curve, target: float):
    """First round whose loss is at or below ``target``; ``None`` if never."""
    hits = np.flatnonzero(np.asarray(loss_curve) <= target)
    return int(hits[0]) if hits.size else None


def reference_loss(problems, weights, loss_curves) -> tuple[float, str]:
    """``f*`` for target-loss reporting: the convex optimum, else the best loss observed."""
    try:
        _, f_star = losses.global_optimum(problems, weights)
        return float(f_star), "global_optimum"
    except (UnsupportedFamily, ArithmeticError):
        return min(float(np.min(c)) for c in loss_curves), "best_observed"


def target_loss(f_star: float, initial: float, fraction: float) -> float:
    """Loss threshold ``f* + fraction * (initial - f*)``."""
    return f_star + fraction * (initial - f_star)
