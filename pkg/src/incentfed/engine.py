"""IncentFedAvg: federated averaging with NE-seeking participation levels.

One round ``r``:

1. every client restarts from the broadcast model ``x_hat_r``;
2. client ``i`` draws a fresh subset of ``ceil(N_{i,r})`` samples from its
   pool, without replacement;
3. it runs ``H`` single-sample SGD steps, sampling uniformly with replacement
   from that subset;
4. participation levels move by one projected pseudo-gradient step;
5. the server forms ``p_{r+1} = N_{r+1} / sum(N_{r+1})`` and aggregates the
   client models with those post-update weights (or with ``p_r`` when
   ``aggregate_with="current"``).

Random streams are keyed ``(run_seed, "subset", client, r)`` and
``(run_seed, "sgd", client, r)``; the initial model uses
``(x0_seed, "model_init")``. Execution order and thread count therefore
cannot change a trace.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from incentfed import datagen, game as game_mod, losses, metrics, rng
from incentfed.errors import GameAssumptionError, NumericalAbort

logger = logging.getLogger(__name__)

CSV_FIXED_COLUMNS = ("r", "k_end", "loss", "grad_norm_sq", "ne_dist", "weight_err_max", "e_bar_end")


@dataclass
class FedConfig:
    game: game_mod.ParticipationGame
    data: datagen.DataSpec
    gamma: float
    H: int
    R: int
    family: str = "softmax"
    hidden: int = 8
    gamma_tilde: float | None = None
    n0: np.ndarray | None = None
    x0_seed: int = 0
    run_seed: int = 0
    aggregate_with: str = "next"
    per_iter: bool = False
    record_clients: bool = False
    workers: int = 1
    probe_samples: int = 256
    probe_seed: int = 0
    ne_tol: float = 1e-10
    # Test hook: key every client's streams as client 0.
    shared_client_streams: bool = False

    def initial_profile(self) -> np.ndarray:
        if self.n0 is None:
            return self.game.n_min.copy()
        return np.asarray(self.n0, dtype=np.float64).copy()

    def validate(self, estimate: game_mod.MonotonicityEstimate | None = None) -> list[str]:
        """Raise on invalid settings; return non-fatal warnings."""
        if not self.gamma > 0 or not math.isfinite(self.gamma):
            raise ValueError("gamma must be a finite positive step size")
        if self.H < 1 or self.R < 1:
            raise ValueError("need H >= 1 local steps and R >= 1 rounds")
        if self.gamma_tilde is not None and not self.gamma_tilde > 0:
            raise ValueError("gamma_tilde must be positive")
        if self.aggregate_with not in ("next", "current"):
            raise ValueError("aggregate_with must be 'next' or 'current'")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.data.m != self.game.m:
            raise ValueError("data spec and game disagree on the number of clients")
        n0 = self.initial_profile()
        if n0.shape != (self.game.m,) or np.any(n0 < self.game.n_min) or np.any(n0 > self.game.n_max):
            raise ValueError("initial participation profile n0 must lie inside the box")
        short = [i for i in range(self.game.m) if self.data.full_size[i] < math.ceil(self.game.n_max[i])]
        if short:
            raise ValueError(f"clients {short} have fewer samples than ceil(n_max)")
        warnings = []
        if estimate is not None and self.gamma_tilde is not None and self.gamma_tilde > estimate.max_step:
            warnings.append(
                f"gamma_tilde={self.gamma_tilde:.6g} exceeds mu_hat/L_hat^2={estimate.max_step:.6g}; "
                "the linear-rate guarantee does not apply"
            )
        if estimate is not None and not estimate.strongly_monotone:
            warnings.append(f"pseudo-gradient not strongly monotone on the box (mu_hat={estimate.mu:.6g})")
        return warnings


@dataclass
class RunTrace:
    m: int
    H: int
    R: int
    x_hat: np.ndarray          # (R+1, n)
    N: np.ndarray              # (R+1, m)
    p: np.ndarray              # (R+1, m)
    loss: np.ndarray           # (R+1,)
    grad_norm_sq: np.ndarray   # (R+1,)
    ne_dist: np.ndarray        # (R+1,)
    weight_err_max: np.ndarray # (R+1,)
    e_bar_end: np.ndarray      # (R+1,)
    n_star: np.ndarray | None
    p_star: np.ndarray | None
    mu_hat: float
    L_hat: float
    gamma_tilde: float
    warnings: list[str] = field(default_factory=list)
    # per-iteration, k = 0 .. T_R - 1
    x_bar: np.ndarray | None = None
    e_bar: np.ndarray | None = None
    f_bar: np.ndarray | None = None
    # per round, iterates k = T_r .. T_{r+1} and gradients k = T_r .. T_{r+1}-1
    client_x: list | None = None
    client_g: list | None = None

    @property
    def rho(self) -> float:
        return 1.0 - 0.5 * self.mu_hat * self.gamma_tilde

    @property
    def delta_0(self) -> float | None:
        if self.n_star is None:
            return None
        return metrics.delta_0(self.N[0], self.n_star)

    @property
    def k_end(self) -> np.ndarray:
        return self.H * np.arange(self.R + 1)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            list(CSV_FIXED_COLUMNS)
            + [f"N_{i + 1}" for i in range(self.m)]
            + [f"p_{i + 1}" for i in range(self.m)]
        )
        for r in range(self.R + 1):
            row = [r, int(self.k_end[r])] + [
                _fmt(v)
                for v in (self.loss[r], self.grad_norm_sq[r], self.ne_dist[r], self.weight_err_max[r], self.e_bar_end[r])
            ]
            row += [_fmt(v) for v in self.N[r]] + [_fmt(v) for v in self.p[r]]
            writer.writerow(row)
        return buf.getvalue()

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        out = {
            "m": self.m,
            "H": self.H,
            "R": self.R,
            "n_star": arr(self.n_star),
            "p_star": arr(self.p_star),
            "mu_hat": self.mu_hat,
            "L_hat": self.L_hat,
            "gamma_tilde": self.gamma_tilde,
            "rho": self.rho,
            "delta_0": self.delta_0,
            "warnings": list(self.warnings),
            "rounds": {
                "r": list(range(self.R + 1)),
                "k_end": self.k_end.tolist(),
                "loss": arr(self.loss),
                "grad_norm_sq": arr(self.grad_norm_sq),
                "ne_dist": arr(self.ne_dist),
                "weight_err_max": arr(self.weight_err_max),
                "e_bar_end": arr(self.e_bar_end),
                "N": arr(self.N),
                "p": arr(self.p),
                "x_hat": arr(self.x_hat),
            },
        }
        if self.x_bar is not None:
            out["iterations"] = {"x_bar": arr(self.x_bar), "e_bar": arr(self.e_bar), "f_bar": arr(self.f_bar)}
        return out


def _fmt(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def weights(n) -> np.ndarray:
    """Participation shares ``p_i = N_i / sum_j N_j``."""
    n = np.asarray(n, dtype=np.float64)
    if n.ndim != 1 or n.size == 0:
        raise ValueError("participation profile must be a nonempty vector")
    if np.any(n <= 0) or not np.all(np.isfinite(n)):
        raise ValueError("participation levels must be finite and positive")
    return n / n.sum()


def _check_simplex(p, m) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (m,):
        raise ValueError(f"need {m} weights, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    return p


def aggregate(x_list, p) -> np.ndarray:
    X = np.asarray(x_list, dtype=np.float64)
    p = _check_simplex(p, X.shape[0])
    return p @ X


def local_round(problem, x_start, subset, H, gamma, stream, record: bool = False):
    """Run ``H`` single-sample SGD steps from ``x_start``.

    Sample positions are drawn up front from ``stream``. With ``record=True``
    returns ``(x_end, iterates, gradients)`` with ``H+1`` and ``H`` rows.
    """
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("local round needs a nonempty subset")
    picks = subset[stream.integers(0, subset.size, size=H)]
    x = np.array(x_start, dtype=np.float64)
    xs, gs = ([x.copy()], []) if record else (None, None)
    # Overflow is caught by the finiteness check below.
    with np.errstate(over="ignore", invalid="ignore"):
        for k, j in enumerate(picks):
            g = problem.sample_grads(x, np.array([j]))[0]
            x = x - gamma * g
            if not np.all(np.isfinite(x)):
                raise NumericalAbort(f"non-finite iterate at local step {k}", iteration=k)
            if record:
                xs.append(x.copy())
                gs.append(g)
    if record:
        return x, np.array(xs), np.array(gs)
    return x


def _draw_subset(stream, pool_size: int, n_level: float) -> np.ndarray:
    size = min(int(math.ceil(n_level)), pool_size)
    return stream.choice(pool_size, size=size, replace=False)


def build_problems(config: FedConfig) -> list:
    """Generate every client's full sample pool for ``config``."""
    return datagen.make_datasets(config.data, config.game.payoff.profile, config.family, config.hidden)


def run(config: FedConfig, problems=None) -> RunTrace:
    """Execute IncentFedAvg; ``problems`` overrides dataset generation."""
    g = config.game
    estimate = game_mod.monotonicity_probe(g, config.probe_samples, config.probe_seed)
    warnings = config.validate(estimate)
    gamma_tilde = config.gamma_tilde if config.gamma_tilde is not None else estimate.max_step
    problems = build_problems(config) if problems is None else list(problems)
    if len(problems) != g.m:
        raise ValueError("need one local problem per client")

    try:
        n_star = game_mod.solve_ne(g, config.ne_tol, estimate=estimate)
        p_star = weights(n_star)
    except GameAssumptionError as exc:
        warnings.append(f"NE oracle unavailable: {exc}")
        n_star = p_star = None
    for w in warnings:
        logger.warning(w)

    m, H, R = g.m, config.H, config.R
    x_hat = problems[0].init_params(rng.stream(config.x0_seed, "model_init"))
    N = config.initial_profile()
    p = weights(N)

    rec = {k: [] for k in ("x_hat", "N", "p", "loss", "gn", "e_end")}
    iters = {"x_bar": [], "e_bar": [], "f_bar": []} if config.per_iter else None
    client_x = [] if config.record_clients else None
    client_g = [] if config.record_clients else None
    record = config.per_iter or config.record_clients

    def snapshot(x, N_now, p_now, e_end):
        eval_p = p_star if p_star is not None else p_now
        rec["x_hat"].append(x.copy())
        rec["N"].append(N_now.copy())
        rec["p"].append(p_now.copy())
        with np.errstate(over="ignore", invalid="ignore"):
            rec["loss"].append(losses.weighted_loss(problems, eval_p, x))
            rec["gn"].append(metrics.global_grad_norm_sq(problems, eval_p, x))
        rec["e_end"].append(e_end)

    snapshot(x_hat, N, p, 0.0)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for r in range(R):
            def client_job(i, r=r, x_start=x_hat, N_r=N):
                key = 0 if config.shared_client_streams else i
                subset = _draw_subset(rng.stream(config.run_seed, "subset", key, r), problems[i].sample_count, N_r[i])
                try:
                    return local_round(problems[i], x_start, subset, H, config.gamma,
                                       rng.stream(config.run_seed, "sgd", key, r), record=record)
                except NumericalAbort as exc:
                    raise NumericalAbort(
                        f"non-finite parameters: round {r}, client {i}, iteration {r * H + exc.iteration}",
                        round_index=r, iteration=r * H + exc.iteration, client=i,
                    ) from None

            results = list(pool.map(client_job, range(m))) if pool else [client_job(i) for i in range(m)]
            if record:
                ends = [res[0] for res in results]
                traj = np.stack([res[1] for res in results], axis=1)   # (H+1, m, n)
                grads = np.stack([res[2] for res in results], axis=1)  # (H, m, n)
                if config.record_clients:
                    client_x.append(traj)
                    client_g.append(grads)
                if config.per_iter:
                    eval_p = p_star if p_star is not None else p
                    for k in range(H):
                        xb = p @ traj[k]
                        iters["x_bar"].append(xb)
                        iters["e_bar"].append(metrics.consensus_error(traj[k], p))
                        iters["f_bar"].append(losses.weighted_loss(problems, eval_p, xb))
            else:
                ends = results
            e_end = metrics.consensus_error(np.array(ends), p)

            N_next = game_mod.ne_step(g, N, gamma_tilde)
            p_next = weights(N_next)
            x_hat = aggregate(ends, p_next if config.aggregate_with == "next" else p)
            if not np.all(np.isfinite(x_hat)):
                raise NumericalAbort(f"non-finite aggregate after round {r}", round_index=r, iteration=(r + 1) * H)
            N, p = N_next, p_next
            snapshot(x_hat, N, p, e_end)
    finally:
        if pool:
            pool.shutdown()

    Ns = np.array(rec["N"])
    ps = np.array(rec["p"])
    if n_star is not None:
        ne_dist = np.linalg.norm(Ns - n_star, axis=1)
        w_err = np.max(np.abs(ps - p_star), axis=1)
    else:
        ne_dist = w_err = np.full(R + 1, np.nan)
    trace = RunTrace(
        m=m, H=H, R=R,
        x_hat=np.array(rec["x_hat"]), N=Ns, p=ps,
        loss=np.array(rec["loss"]), grad_norm_sq=np.array(rec["gn"]),
        ne_dist=ne_dist, weight_err_max=w_err, e_bar_end=np.array(rec["e_end"]),
        n_star=n_star, p_star=p_star,
        mu_hat=estimate.mu, L_hat=estimate.lipschitz, gamma_tilde=float(gamma_tilde),
        warnings=warnings, client_x=client_x, client_g=client_g,
    )
    if iters is not None:
        trace.x_bar = np.array(iters["x_bar"])
        trace.e_bar = np.array(iters["e_bar"])
        trace.f_bar = np.array(iters["f_bar"])
    return trace


def trace_json_text(trace: RunTrace, extra: dict | None = None) -> str:
    doc = trace.to_json()
    if extra:
        doc = {**extra, **doc}
    return json.dumps(doc, indent=2, allow_nan=True)
