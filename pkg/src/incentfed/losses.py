"""Local objective families.

A local problem is a finite sample set; its loss is the empirical mean of
per-sample losses, so the gradient of the ``j``-th per-sample loss is an
unbiased single-sample oracle when ``j`` is drawn uniformly.

Parameters are always a flat float64 vector. Bias terms are folded in through
a constant feature column, which gives the weight shapes ``t x (d+1)`` for the
linear softmax model and ``M x (d+1)``, ``t x (M+1)`` for the two-layer net.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from incentfed.errors import UnsupportedFamily


def logsumexp(a, axis=1):
    top = a.max(axis=axis, keepdims=True)
    return (top + np.log(np.exp(a - top).sum(axis=axis, keepdims=True))).squeeze(axis)


def softmax(a, axis=1):
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _with_bias(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, order="C")
    a.setflags(write=False)
    return a


def _check_labels(labels, classes, rows):
    if labels.shape != (rows,):
        raise ValueError("need one label per feature row")
    if classes < 2:
        raise ValueError("need at least two classes")
    if rows and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"label ids must lie in [0, {classes})")


@dataclass(frozen=True, eq=False)
class Quadratic:
    """Least squares ``f(x) = ||A x - b||^2 / (2J)``."""

    A: np.ndarray
    b: np.ndarray
    name = "quadratic"
    convex = True

    def __post_init__(self):
        A, b = _frozen(self.A), _frozen(self.b)
        if A.ndim != 2 or b.shape != (A.shape[0],) or A.shape[0] < 1:
            raise ValueError(f"incompatible quadratic data shapes {A.shape}, {b.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def sample_count(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def smoothness(self) -> float:
        return float(np.linalg.norm(self.A, 2) ** 2 / self.sample_count)

    def loss(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r) / self.sample_count

    def grad(self, x):
        return self.A.T @ (self.A @ x - self.b) / self.sample_count

    def sample_grads(self, x, idx):
        rows = self.A[idx]
        return rows * (rows @ x - self.b[idx])[:, None]

    def init_params(self, gen):
        return 0.1 * gen.standard_normal(self.dim)


@dataclass(frozen=True, eq=False)
class SoftmaxLinear:
    """Multinomial logistic regression with mean cross-entropy loss."""

    features: np.ndarray
    labels: np.ndarray
    classes: int
    name = "softmax"
    convex = True

    def __post_init__(self):
        feats = _frozen(self.features)
        labels = _frozen(self.labels, np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError("features must be a nonempty matrix")
        _check_labels(labels, self.classes, feats.shape[0])
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_Z", _frozen(_with_bias(feats)))

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.classes * (self.features.shape[1] + 1)

    def _weights(self, x):
        return x.reshape(self.classes, -1)

    def _residual(self, x, Z, labels):
        S = softmax(Z @ self._weights(x).T, axis=1)
        S[np.arange(len(labels)), labels] -= 1.0
        return S

    def loss(self, x):
        logits = self._Z @ self._weights(x).T
        lse = logsumexp(logits, axis=1)
        return float(np.mean(lse - logits[np.arange(self.sample_count), self.labels]))

    def grad(self, x):
        R = self._residual(x, self._Z, self.labels)
        return (R.T @ self._Z).ravel() / self.sample_count

    def sample_grads(self, x, idx):
        Z = self._Z[idx]
        R = self._residual(x, Z, self.labels[idx])
        return (R[:, :, None] * Z[:, None, :]).reshape(len(idx), -1)

    def hessian(self, x):
        S = softmax(self._Z @ self._weights(x).T, axis=1)
        t, k = self.classes, self._Z.shape[1]
        H = np.zeros((t, k, t, k))
        for a in range(t):
            for c in range(t):
                w = S[:, a] * ((a == c) - S[:, c])
                H[a, :, c, :] = (self._Z * w[:, None]).T @ self._Z
        return H.reshape(t * k, t * k) / self.sample_count

    def predict(self, x):
        return np.argmax(self._Z @ self._weights(x).T, axis=1)

    def init_params(self, gen):
        return 0.1 * gen.standard_normal(self.dim)


@dataclass(frozen=True, eq=False)
class Mlp2:
    """Two-layer tanh network with softmax cross-entropy output."""

    features: np.ndarray
    labels: np.ndarray
    hidden: int
    classes: int
    name = "mlp"
    convex = False

    def __post_init__(self):
        feats = _frozen(self.features)
        labels = _frozen(self.labels, np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError("features must be a nonempty matrix")
        if self.hidden < 1:
            raise ValueError("hidden layer needs at least one unit")
        _check_labels(labels, self.classes, feats.shape[0])
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_Z", _frozen(_with_bias(feats)))

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def _split(self) -> int:
        return self.hidden * (self.features.shape[1] + 1)

    @property
    def dim(self) -> int:
        return self._split + self.classes * (self.hidden + 1)

    def unpack(self, x):
        X1 = x[: self._split].reshape(self.hidden, -1)
        X2 = x[self._split :].reshape(self.classes, self.hidden + 1)
        return X1, X2

    def _forward(self, x, Z):
        X1, X2 = self.unpack(x)
        h = np.tanh(Z @ X1.T)
        hb = np.hstack([h, np.ones((h.shape[0], 1))])
        return h, hb, hb @ X2.T

    def loss(self, x):
        _, _, logits = self._forward(x, self._Z)
        lse = logsumexp(logits, axis=1)
        return float(np.mean(lse - logits[np.arange(self.sample_count), self.labels]))

    def _deltas(self, x, Z, labels):
        _, X2 = self.unpack(x)
        h, hb, logits = self._forward(x, Z)
        delta2 = softmax(logits, axis=1)
        delta2[np.arange(len(labels)), labels] -= 1.0
        delta1 = (delta2 @ X2[:, :-1]) * (1.0 - h**2)
        return hb, delta1, delta2

    def grad(self, x):
        hb, delta1, delta2 = self._deltas(x, self._Z, self.labels)
        g1 = delta1.T @ self._Z
        g2 = delta2.T @ hb
        return np.concatenate([g1.ravel(), g2.ravel()]) / self.sample_count

    def sample_grads(self, x, idx):
        Z = self._Z[idx]
        hb, delta1, delta2 = self._deltas(x, Z, self.labels[idx])
        g1 = (delta1[:, :, None] * Z[:, None, :]).reshape(len(idx), -1)
        g2 = (delta2[:, :, None] * hb[:, None, :]).reshape(len(idx), -1)
        return np.hstack([g1, g2])

    def predict(self, x):
        return np.argmax(self._forward(x, self._Z)[2], axis=1)

    def init_params(self, gen):
        X1 = gen.standard_normal((self.hidden, self.features.shape[1] + 1)) / np.sqrt(self.features.shape[1] + 1)
        X2 = gen.standard_normal((self.classes, self.hidden + 1)) / np.sqrt(self.hidden + 1)
        return np.concatenate([X1.ravel(), X2.ravel()])


LocalProblem = Quadratic | SoftmaxLinear | Mlp2


def _check_x(problem, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.dim,):
        raise ValueError(f"{problem.name} expects parameters of shape ({problem.dim},), got {x.shape}")
    return x


def loss(problem: LocalProblem, x) -> float:
    return problem.loss(_check_x(problem, x))


def grad(problem: LocalProblem, x) -> np.ndarray:
    return problem.grad(_check_x(problem, x))


def stochastic_grad(problem: LocalProblem, x, sample_index: int) -> np.ndarray:
    """Gradient of the single per-sample loss at ``sample_index``."""
    j = int(sample_index)
    if not 0 <= j < problem.sample_count:
        raise IndexError(f"sample index {j} outside [0, {problem.sample_count})")
    return problem.sample_grads(_check_x(problem, x), np.array([j]))[0]


def accuracy(problem: SoftmaxLinear | Mlp2, x) -> float:
    return float(np.mean(problem.predict(_check_x(problem, x)) == problem.labels))


def weighted_loss(problems, p, x) -> float:
    return float(sum(pi * loss(prob, x) for pi, prob in zip(p, problems)))


def weighted_grad(problems, p, x) -> np.ndarray:
    return sum(pi * grad(prob, x) for pi, prob in zip(p, problems))


def gradient_variance(problem: LocalProblem, x) -> float:
    """Mean squared deviation of per-sample gradients from the full gradient."""
    x = _check_x(problem, x)
    G = problem.sample_grads(x, np.arange(problem.sample_count))
    return float(np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))


def variance_bound(problems, x_grid) -> float:
    """Empirical ``nu^2``: worst per-sample gradient variance over clients and grid points."""
    return max(gradient_variance(prob, x) for prob in problems for x in x_grid)


def global_optimum(problems, weights, tol: float = 1e-9, max_iter: int = 200):
    """Minimizer of ``sum_i p_i f_i`` for convex families, returned as ``(x*, f*)``.

    Quadratics use the weighted normal equations. Softmax models use damped
    Newton steps with a least-squares solve, since the Hessian is singular
    along the shift-all-classes direction.
    """
    problems = list(problems)
    weights = np.asarray(weights, dtype=np.float64)
    if len(problems) != len(weights):
        raise ValueError("need one weight per problem")
    kinds = {type(p) for p in problems}
    if len(kinds) != 1:
        raise UnsupportedFamily("global optimum needs a single loss family")
    kind = kinds.pop()
    if kind is Quadratic:
        M = sum(w * p.A.T @ p.A / p.sample_count for w, p in zip(weights, problems))
        v = sum(w * p.A.T @ p.b / p.sample_count for w, p in zip(weights, problems))
        x = np.linalg.lstsq(M, v, rcond=None)[0]
        # One refinement step cleans up the solve's residual.
        x = x - np.linalg.lstsq(M, weighted_grad(problems, weights, x), rcond=None)[0]
    elif kind is SoftmaxLinear:
        x = _newton(problems, weights, tol, max_iter)
    else:
        raise UnsupportedFamily(f"no global optimum for nonconvex family {kind.__name__}")
    g = weighted_grad(problems, weights, x)
    if float(np.linalg.norm(g)) > tol:
        raise ArithmeticError(f"optimum solve stalled at |grad| = {np.linalg.norm(g):.3e}")
    return x, weighted_loss(problems, weights, x)


def _newton(problems, weights, tol, max_iter):
    x = np.zeros(problems[0].dim)
    f = weighted_loss(problems, weights, x)
    for _ in range(max_iter):
        g = weighted_grad(problems, weights, x)
        if np.linalg.norm(g) <= 0.1 * tol:
            break
        H = sum(w * p.hessian(x) for w, p in zip(weights, problems))
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            cand = x - t * step
            fc = weighted_loss(problems, weights, cand)
            if fc <= f - 1e-4 * t * float(g @ step) or t < 1e-3 and fc <= f:
                break
            t *= 0.5
        x, f = cand, fc
    return x
