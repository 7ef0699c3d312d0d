"""The data-participation Nash game.

Each client ``i`` picks a real-valued training-set size ``N_i`` in a box
``[n_min_i, n_max_i]`` and minimizes its regularized net utility loss

    l_i(N) = theta_i * N_i + (lambda_reg / 2) * N_i**2 - a_i(N)

where ``a_i`` is one of two payoff models built from the clients' class
distributions ``q_i``. The pseudo-gradient ``F_i(N) = dl_i/dN_i`` drives the
projected NE-seeking step performed once per federated round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from incentfed import rng
from incentfed.errors import GameAssumptionError

logger = logging.getLogger(__name__)

NE_MAX_ITER = 10**6


@dataclass(frozen=True)
class ClassProfile:
    """Per-client class distributions, one row per client."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        if q.ndim != 2:
            raise ValueError(f"class profile must be a matrix, got shape {q.shape}")
        m, t = q.shape
        if m < 1 or t < 2:
            raise ValueError(f"need m >= 1 clients and t >= 2 classes, got {q.shape}")
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("class probabilities must lie in [0, 1]")
        if np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("every row of the class profile must sum to 1")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def m(self) -> int:
        return self.q.shape[0]

    @property
    def t(self) -> int:
        return self.q.shape[1]

    def sq_norms(self) -> np.ndarray:
        """Row norms squared, i.e. the diagonal of ``Q Q^T``."""
        return np.einsum("ic,ic->i", self.q, self.q)


@dataclass(frozen=True)
class Discovery:
    """Random discovery payoff ``a(N) = Q Q^T N``."""

    profile: ClassProfile
    name = "discovery"

    def payoff(self, n: np.ndarray) -> np.ndarray:
        q = self.profile.q
        return q @ (q.T @ n)

    def own_marginal(self, n: np.ndarray) -> np.ndarray:
        return self.profile.sq_norms()


@dataclass(frozen=True)
class Coverage:
    """Random coverage payoff ``a_i(N) = 1 - 0.5 sum_c q_ic prod_j (1 - q_jc)^N_j``."""

    profile: ClassProfile
    name = "coverage"

    def _log_base(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log1p(-self.profile.q)

    def _uncovered(self, n: np.ndarray) -> np.ndarray:
        # prod_j (1 - q_jc)^{n_j} per class, with 0^0 = 1.
        log_base = self._log_base()
        with np.errstate(invalid="ignore"):
            terms = np.where(n[:, None] == 0.0, 0.0, n[:, None] * log_base)
        return np.exp(terms.sum(axis=0))

    def payoff(self, n: np.ndarray) -> np.ndarray:
        return 1.0 - 0.5 * (self.profile.q @ self._uncovered(n))

    def own_marginal(self, n: np.ndarray) -> np.ndarray:
        q = self.profile.q
        log_base = self._log_base()
        uncovered = self._uncovered(n)
        with np.errstate(invalid="ignore"):
            terms = q * log_base * uncovered[None, :]
        # q_ic = 1 gives -inf * 0 (or -inf * 1 at n_i = 0); the limit convention takes 0.
        terms = np.where(q == 1.0, 0.0, terms)
        return -0.5 * terms.sum(axis=1)


PAYOFF_MODELS = {"discovery": Discovery, "coverage": Coverage}


@dataclass(frozen=True)
class ParticipationGame:
    payoff: Discovery | Coverage
    theta: np.ndarray
    n_min: np.ndarray
    n_max: np.ndarray
    lambda_reg: float

    def __post_init__(self):
        m = self.payoff.profile.m
        vecs = {}
        for name in ("theta", "n_min", "n_max"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (m,)).copy()
            v.setflags(write=False)
            vecs[name] = v
            object.__setattr__(self, name, v)
        if np.any(vecs["theta"] < 0):
            raise ValueError("cost coefficients theta must be nonnegative")
        if np.any(vecs["n_min"] < 1):
            raise ValueError("lower participation bounds must be at least 1")
        if np.any(vecs["n_min"] >= vecs["n_max"]):
            raise ValueError("need n_min < n_max for every client")
        if not self.lambda_reg > 0:
            raise ValueError("lambda_reg must be positive")
        object.__setattr__(self, "lambda_reg", float(self.lambda_reg))

    @property
    def m(self) -> int:
        return self.payoff.profile.m

    def _check(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        if n.shape != (self.m,):
            raise ValueError(f"strategy profile must have shape ({self.m},), got {n.shape}")
        return n


def payoff(game: ParticipationGame, n) -> np.ndarray:
    return game.payoff.payoff(game._check(n))


def net_utility(game: ParticipationGame, n, regularized: bool = True) -> np.ndarray:
    """Per-client utility loss ``c_i - a_i`` (plus the regularizer if requested)."""
    n = game._check(n)
    loss = game.theta * n - game.payoff.payoff(n)
    if regularized:
        loss = loss + 0.5 * game.lambda_reg * n**2
    return loss


def pseudo_gradient(game: ParticipationGame, n) -> np.ndarray:
    n = game._check(n)
    return game.theta - game.payoff.own_marginal(n) + game.lambda_reg * n


def project_box(game: ParticipationGame, n) -> np.ndarray:
    return np.clip(game._check(n), game.n_min, game.n_max)


def ne_step(game: ParticipationGame, n, gamma_tilde: float) -> np.ndarray:
    """One synchronous projected pseudo-gradient step for all players."""
    if not gamma_tilde > 0:
        raise ValueError("gamma_tilde must be positive")
    n = game._check(n)
    return project_box(game, n - gamma_tilde * pseudo_gradient(game, n))


@dataclass(frozen=True)
class MonotonicityEstimate:
    mu: float
    lipschitz: float
    analytic: bool
    pairs: int

    @property
    def strongly_monotone(self) -> bool:
        return self.mu > 0

    @property
    def max_step(self) -> float:
        """Largest NE step size for which the linear-rate guarantee applies."""
        return self.mu / self.lipschitz**2


def monotonicity_probe(game: ParticipationGame, samples: int = 256, rng_seed: int = 0) -> MonotonicityEstimate:
    """Estimate the strong-monotonicity and Lipschitz moduli of ``F`` on the box.

    Discovery games have Jacobian ``lambda_reg * I`` and are answered exactly.
    Otherwise pairs are sampled: even pairs are two independent uniform points,
    odd pairs are a point and a close neighbour. Half the neighbour pairs are
    pulled toward ``n_min``, where coverage payoffs are steepest.
    """
    if samples < 2:
        raise ValueError("monotonicity probe needs at least 2 samples")
    if isinstance(game.payoff, Discovery):
        lam = game.lambda_reg
        return MonotonicityEstimate(mu=lam, lipschitz=lam, analytic=True, pairs=0)

    gen = rng.stream(rng_seed, "probe")
    lo, hi = game.n_min, game.n_max
    mu, lip, used = np.inf, 0.0, 0
    for s in range(samples):
        u = gen.random(game.m)
        a = lo + (hi - lo) * (u**4 if s % 4 == 1 else u)
        if s % 2 == 0:
            b = lo + (hi - lo) * gen.random(game.m)
        else:
            b = np.clip(a + 1e-3 * (hi - lo) * gen.standard_normal(game.m), lo, hi)
        diff = a - b
        dist_sq = float(diff @ diff)
        if dist_sq == 0.0:
            continue
        dF = pseudo_gradient(game, a) - pseudo_gradient(game, b)
        mu = min(mu, float(dF @ diff) / dist_sq)
        lip = max(lip, float(np.linalg.norm(dF)) / np.sqrt(dist_sq))
        used += 1
    if used == 0:
        raise ValueError("all probe pairs were degenerate")
    if mu <= 0:
        logger.warning("pseudo-gradient is not strongly monotone on the box (mu_hat=%g)", mu)
    return MonotonicityEstimate(mu=float(mu), lipschitz=float(lip), analytic=False, pairs=used)


def discovery_closed_form(game: ParticipationGame) -> np.ndarray:
    """KKT solution of a Discovery game; each player's problem decouples."""
    if not isinstance(game.payoff, Discovery):
        raise TypeError("closed form exists only for the discovery payoff")
    interior = (game.payoff.profile.sq_norms() - game.theta) / game.lambda_reg
    return np.clip(interior, game.n_min, game.n_max)


def solve_ne(
    game: ParticipationGame,
    tol: float = 1e-10,
    *,
    estimate: MonotonicityEstimate | None = None,
    max_iter: int = NE_MAX_ITER,
    probe_samples: int = 256,
    probe_seed: int = 0,
) -> np.ndarray:
    """Iterate the projected step from ``n_min`` until it stalls below ``tol``.

    The step size is ``mu_hat / L_hat**2``. Raises
    :class:`GameAssumptionError` when the probe finds no strong monotonicity,
    when the iteration cap is hit, or when a Discovery game's iterate disagrees
    with its closed form by more than ``10 * tol`` (relative to
    ``max(1, |N*|)``).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if estimate is None:
        estimate = monotonicity_probe(game, probe_samples, probe_seed)
    if not estimate.strongly_monotone:
        raise GameAssumptionError(
            f"NE oracle refuses: mu_hat={estimate.mu:g} <= 0 for {type(game.payoff).__name__} game "
            f"with m={game.m}, lambda_reg={game.lambda_reg:g}"
        )
    step = estimate.max_step
    n = game.n_min.copy()
    for _ in range(max_iter):
        nxt = ne_step(game, n, step)
        moved = np.linalg.norm(nxt - n)
        n = nxt
        if moved <= tol * max(1.0, float(np.linalg.norm(n))):
            break
    else:
        raise GameAssumptionError(
            f"NE iteration did not converge in {max_iter} steps: {type(game.payoff).__name__} game, "
            f"m={game.m}, lambda_reg={game.lambda_reg:g}, step={step:g}, "
            f"mu_hat={estimate.mu:g}, L_hat={estimate.lipschitz:g}"
        )
    if isinstance(game.payoff, Discovery):
        closed = discovery_closed_form(game)
        gap = float(np.linalg.norm(n - closed))
        if gap > 10 * tol * max(1.0, float(np.linalg.norm(closed))):
            raise GameAssumptionError(f"iterative and closed-form NE disagree by {gap:g}")
    return n
