import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from incentfed import losses as L, metrics as M
from incentfed.errors import UnsupportedFamily


def quad_1d(center):
    return L.Quadratic(np.ones((1, 1)), np.array([center]))


class TestConsensusError:
    def test_identical(self, rng):
        x = rng.standard_normal(5)
        assert M.consensus_error([x, x, x], [0.2, 0.3, 0.5]) == 0.0

    def test_hand_value(self):
        assert M.consensus_error([[0.0], [2.0]], [0.5, 0.5]) == pytest.approx(1.0, rel=1e-15)

    def test_scalar_iterates(self):
        assert M.consensus_error([0.0, 2.0], [0.5, 0.5]) == pytest.approx(1.0)

    def test_matches_definition(self, rng):
        X = rng.standard_normal((4, 3))
        p = rng.dirichlet(np.ones(4))
        xb = p @ X
        assert M.consensus_error(X, p) == pytest.approx(float(p @ ((X - xb) ** 2).sum(axis=1)), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-5, 5))
    def test_homogeneity_and_translation(self, seed, c):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((3, 4))
        p = rng.dirichlet(np.ones(3))
        base = M.consensus_error(X, p)
        assert M.consensus_error(c * X, p) == pytest.approx(c**2 * base, rel=1e-10, abs=1e-14)
        assert M.consensus_error(X + rng.standard_normal(4) * 10, p) == pytest.approx(base, rel=1e-9, abs=1e-14)


class TestGlobalGradNorm:
    def test_hand_instance_is_zero(self):
        probs = [quad_1d(1.0), quad_1d(-1.0)]
        assert M.global_grad_norm_sq(probs, [0.75, 0.25], np.array([0.5])) == 0.0

    def test_single_client(self, rng):
        prob = L.Quadratic(rng.standard_normal((6, 2)), rng.standard_normal(6))
        x = rng.standard_normal(2)
        g = L.grad(prob, x)
        assert M.global_grad_norm_sq([prob], [1.0], x) == pytest.approx(g @ g, rel=1e-15)

    def test_at_optimum(self, rng):
        probs = [L.Quadratic(rng.standard_normal((8, 3)), rng.standard_normal(8)) for _ in range(3)]
        p = np.array([0.5, 0.3, 0.2])
        x, _ = L.global_optimum(probs, p)
        assert M.global_grad_norm_sq(probs, p, x) <= 1e-16


class TestBregman:
    def test_zero_at_reference(self, rng):
        prob = L.Quadratic(rng.standard_normal((5, 2)), rng.standard_normal(5))
        x = rng.standard_normal(2)
        assert M.bregman_gap([prob], [1.0], x, x) == 0.0

    def test_hand_value(self):
        prob = L.Quadratic(np.ones((1, 1)), np.zeros(1))
        assert M.bregman_gap([prob], [1.0], np.array([2.0]), np.array([0.0])) == pytest.approx(2.0)

    def test_equals_optimality_gap(self, rng):
        probs = [L.Quadratic(rng.standard_normal((10, 3)), rng.standard_normal(10)) for _ in range(2)]
        p = np.array([0.4, 0.6])
        xs, fs = L.global_optimum(probs, p)
        x = rng.standard_normal(3)
        assert M.bregman_gap(probs, p, x, xs) == pytest.approx(L.weighted_loss(probs, p, x) - fs, abs=1e-10)

    def test_nonnegative_on_random_convex(self):
        for s in range(100):
            rng = np.random.default_rng(s)
            probs = [L.Quadratic(rng.standard_normal((6, 3)), rng.standard_normal(6)) for _ in range(2)]
            p = rng.dirichlet([1, 1])
            assert M.bregman_gap(probs, p, rng.standard_normal(3), rng.standard_normal(3)) >= -1e-12

    def test_nonconvex_rejected(self, rng):
        prob = L.Mlp2(rng.standard_normal((4, 2)), np.array([0, 1, 0, 1]), 2, 2)
        x = np.zeros(prob.dim)
        with pytest.raises(UnsupportedFamily):
            M.bregman_gap([prob], [1.0], x, x)


class TestFitRate:
    def test_geometric(self):
        fit = M.fit_rate(3.0 * 0.8 ** np.arange(30))
        assert fit.slope == pytest.approx(np.log(0.8), abs=1e-10)
        assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_constant(self):
        fit = M.fit_rate(np.full(10, 2.5))
        assert fit.slope == pytest.approx(0.0, abs=1e-14)
        assert fit.r_squared == 1.0

    def test_floor_truncation(self):
        d = 0.5 ** np.arange(60)
        fit = M.fit_rate(d)
        assert fit.points == 44  # 0.5**43 > 1e-13 > 0.5**44
        assert fit.slope == pytest.approx(np.log(0.5), abs=1e-12)

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="at least 5"):
            M.fit_rate([1.0, 0.5, 0.25, 0.0, 0.0, 0.0])


class TestBgdFit:
    def test_identical_clients(self, rng):
        prob = L.Quadratic(rng.standard_normal((5, 2)), rng.standard_normal(5))
        xs = rng.standard_normal((12, 2))
        for probs, p in (([prob, prob], [0.5, 0.5]), ([prob], [1.0])):
            fit = M.bgd_fit(probs, p, xs)
            assert (fit.b_sq, fit.g_sq) == (1.0, pytest.approx(0.0, abs=1e-12))

    def test_heterogeneous_means(self):
        probs = [quad_1d(1.0), quad_1d(-1.0)]
        xs = [np.zeros(1)] + [np.array([v]) for v in np.linspace(-1, 1, 11)]
        fit = M.bgd_fit(probs, [0.5, 0.5], xs)
        assert fit.g_sq >= 1.0
        for x in xs:
            lhs = np.mean([L.grad(q, x) @ L.grad(q, x) for q in probs])
            assert lhs <= fit.g_sq + fit.b_sq * M.global_grad_norm_sq(probs, [0.5, 0.5], x) + 1e-12

    def test_needs_samples(self):
        with pytest.raises(ValueError):
            M.bgd_fit([quad_1d(0.0)], [1.0], [np.zeros(1)] * 9)


def test_delta_0():
    assert M.delta_0([1.0, 1.0, 1.0], [2.0, 1.0, 1.0]) == pytest.approx(2 * 1.0 / 4.0)


def test_rounds_to_target():
    assert M.rounds_to_target([5, 4, 3, 2], 3) == 2
    assert M.rounds_to_target([5, 4, 3, 2], 1) is None


def test_target_loss():
    assert M.target_loss(1.0, 11.0, 0.1) == pytest.approx(2.0)


def test_reference_loss_fallback(rng):
    prob = L.Mlp2(rng.standard_normal((4, 2)), np.array([0, 1, 0, 1]), 2, 2)
    assert M.reference_loss([prob], [1.0], [[3.0, 2.0], [2.5, 1.5]]) == (1.5, "best_observed")
    quad = [quad_1d(1.0), quad_1d(-1.0)]
    f, source = M.reference_loss(quad, [0.75, 0.25], [[9.0]])
    assert source == "global_optimum" and f == pytest.approx(0.375)
