"""Central finite-difference checks for every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from incentfed import game as game_mod, losses, rng

AFFINE_TOL = 1e-7
SMOOTH_TOL = 1e-6


def central_difference(f, x, h):
    """Gradient of scalar ``f`` at ``x`` by central differences with per-coordinate step ``h``."""
    x = np.asarray(x, dtype=np.float64)
    h = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        out[i] = (f(x + e) - f(x - e)) / (2 * h[i])
    return out


def relative_error(approx, exact) -> float:
    """Normwise ``||a - b|| / max(||a||, ||b||)``; zero when both vanish."""
    approx, exact = np.asarray(approx), np.asarray(exact)
    scale = max(np.linalg.norm(approx), np.linalg.norm(exact))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(approx - exact) / scale)


def pseudo_gradient_fd(game, n, h=1e-5):
    """Own-coordinate central differences of each player's regularized net utility.

    The step grows with ``|n_i|`` above 1 so that rounding in large utilities
    stays below the truncation error.
    """
    n = np.asarray(n, dtype=np.float64)
    fd = np.empty_like(n)
    for i in range(n.size):
        step = h * max(1.0, abs(n[i]))
        e = np.zeros_like(n)
        e[i] = step
        up = game_mod.net_utility(game, n + e)[i]
        down = game_mod.net_utility(game, n - e)[i]
        fd[i] = (up - down) / (2 * step)
    return fd


def loss_grad_fd(problem, x, h=1e-6):
    return central_difference(lambda z: losses.loss(problem, z), x, h)


@dataclass(frozen=True)
class CheckResult:
    family: str
    worst: float
    threshold: float
    points: int

    @property
    def passed(self) -> bool:
        return self.worst <= self.threshold


def check_payoff(game, points: int = 50, seed: int = 0) -> CheckResult:
    gen = rng.stream(seed, "probe", 1)
    worst = 0.0
    for _ in range(points):
        n = game.n_min + (game.n_max - game.n_min) * gen.random(game.m)
        worst = max(worst, relative_error(pseudo_gradient_fd(game, n), game_mod.pseudo_gradient(game, n)))
    affine = isinstance(game.payoff, game_mod.Discovery)
    return CheckResult(game.payoff.name, worst, AFFINE_TOL if affine else SMOOTH_TOL, points)


def _subsample(problem, rows: int):
    if problem.sample_count <= rows:
        return problem
    if isinstance(problem, losses.Quadratic):
        return losses.Quadratic(problem.A[:rows], problem.b[:rows])
    if isinstance(problem, losses.SoftmaxLinear):
        return losses.SoftmaxLinear(problem.features[:rows], problem.labels[:rows], problem.classes)
    return losses.Mlp2(problem.features[:rows], problem.labels[:rows], problem.hidden, problem.classes)


def check_losses(problems, points: int = 50, seed: int = 0, rows: int = 200) -> CheckResult:
    """Check loss gradients at ``points`` random parameters, cycling through clients."""
    problems = [_subsample(p, rows) for p in problems]
    worst = 0.0
    for k in range(points):
        prob = problems[k % len(problems)]
        x = prob.init_params(rng.stream(seed, "model_init", 1, k)) * 5.0
        worst = max(worst, relative_error(loss_grad_fd(prob, x), losses.grad(prob, x)))
    affine = isinstance(problems[0], losses.Quadratic)
    return CheckResult(problems[0].name, worst, AFFINE_TOL if affine else SMOOTH_TOL, points)
