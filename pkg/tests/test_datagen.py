import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from incentfed import datagen as D, losses as L
from incentfed.game import ClassProfile


def spec(**kw):
    base = dict(m=3, t=4, d=3, full_size=200, dirichlet_alpha=0.5, seed=7)
    base.update(kw)
    return D.DataSpec(**base)


class TestDataSpec:
    def test_broadcasts_sizes(self):
        assert spec().full_size == (200, 200, 200)
        assert spec(full_size=[10, 20, 30]).full_size == (10, 20, 30)

    @pytest.mark.parametrize("kw", [dict(t=1), dict(dirichlet_alpha=0.0), dict(noise_sigma=-1.0),
                                    dict(full_size=0), dict(client_keys=(0, 1))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            spec(**kw)


class TestProfiles:
    def test_large_alpha_is_uniform(self):
        prof = D.sample_profiles(spec(dirichlet_alpha=1e6, m=5))
        np.testing.assert_allclose(prof.q, 0.25, atol=1e-2)

    def test_bit_exact_repeat(self):
        assert D.sample_profiles(spec()).q.tobytes() == D.sample_profiles(spec()).q.tobytes()
        assert not np.array_equal(D.sample_profiles(spec()).q, D.sample_profiles(spec(seed=8)).q)

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 8), st.floats(0.05, 50), st.integers(0, 2**32))
    def test_rows_normalized(self, m, t, alpha, seed):
        q = D.sample_profiles(D.DataSpec(m=m, t=t, d=1, full_size=1, dirichlet_alpha=alpha, seed=seed)).q
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


class TestCosts:
    def test_uniform_rows_bound(self):
        prof = ClassProfile(np.full((6, 10), 0.1))
        for seed in range(20):
            theta = D.sample_costs(prof, seed)
            assert np.all(theta >= 0) and np.all(theta <= 0.1 + 1e-15)

    def test_one_hot(self):
        prof = ClassProfile(np.eye(3))
        theta = D.sample_costs(prof, 3)
        assert np.all((0 <= theta) & (theta <= 1))

    def test_reproducible(self):
        prof = D.sample_profiles(spec())
        assert D.sample_costs(prof, 5).tobytes() == D.sample_costs(prof, 5).tobytes()


class TestDatasets:
    def test_separable_reaches_full_accuracy(self):
        s = spec(m=1, t=2, d=2, full_size=100, noise_sigma=0.0, dirichlet_alpha=1e6)
        (prob,) = D.make_datasets(s, D.sample_profiles(s), "softmax")
        x = np.zeros(prob.dim)
        for _ in range(500):
            x = x - 1.0 * L.grad(prob, x)
        assert L.accuracy(prob, x) == 1.0

    def test_one_hot_profile(self):
        s = spec(m=2, t=3)
        prof = ClassProfile(np.array([[0.0, 1.0, 0.0], [0.2, 0.3, 0.5]]))
        probs = D.make_datasets(s, prof, "softmax")
        assert set(probs[0].labels.tolist()) == {1}

    def test_client_permutation(self):
        base = spec(m=3)
        perm = (2, 0, 1)
        permuted = spec(m=3, client_keys=perm)
        a = D.make_datasets(base, D.sample_profiles(base), "quadratic")
        b = D.make_datasets(permuted, D.sample_profiles(permuted), "quadratic")
        for i, k in enumerate(perm):
            np.testing.assert_array_equal(b[i].A, a[k].A)
            np.testing.assert_array_equal(b[i].b, a[k].b)

    def test_label_marginals(self):
        s = spec(m=3, t=4, full_size=10_000, dirichlet_alpha=2.0)
        prof = D.sample_profiles(s)
        for i, prob in enumerate(D.make_datasets(s, prof, "softmax")):
            counts = np.bincount(prob.labels, minlength=4)
            keep = prof.q[i] > 0
            res = stats.chisquare(counts[keep], prof.q[i][keep] * counts.sum())
            assert res.pvalue > 0.001

    def test_families_share_features(self):
        s = spec()
        prof = D.sample_profiles(s)
        quad, soft, mlp = (D.make_datasets(s, prof, f, hidden=4) for f in D.FAMILIES)
        for a, b, c in zip(quad, soft, mlp):
            np.testing.assert_array_equal(a.A[:, :-1], b.features)
            np.testing.assert_array_equal(b.labels, c.labels)
            np.testing.assert_array_equal(a.b, D.quadratic_targets(b.labels, s.t))

    def test_unknown_family(self):
        s = spec()
        with pytest.raises(ValueError):
            D.make_datasets(s, D.sample_profiles(s), "cnn")

    def test_class_means(self):
        means = D.class_means(4, 2, 0.5)
        np.testing.assert_array_equal(means, [[1.5, 0], [-1.5, 0], [0, 1.5], [0, -1.5]])
        assert np.abs(D.class_means(2, 2, 0.0)).max() == 1.0


@pytest.mark.parametrize("family", D.FAMILIES)
def test_dump_load_round_trip(tmp_path, family):
    s = spec(full_size=[30, 40, 50], client_keys=(4, 1, 9))
    prof = D.sample_profiles(s)
    D.save_datasets(tmp_path / "pool", s, prof, family, hidden=5)
    s2, prof2, loaded = D.load_datasets(tmp_path / "pool")
    assert s2 == s
    np.testing.assert_array_equal(prof2.q, prof.q)
    fresh = D.make_datasets(s, prof, family, hidden=5)
    x = fresh[0].init_params(np.random.default_rng(0))
    for a, b in zip(fresh, loaded):
        assert type(a) is type(b)
        assert L.loss(a, x) == L.loss(b, x)


def test_binary_layout_is_column_major(tmp_path):
    s = spec(m=1, full_size=5)
    prof = D.sample_profiles(s)
    D.save_datasets(tmp_path / "pool", s, prof, "softmax")
    import json
    header = json.loads((tmp_path / "pool.json").read_text())
    raw = (tmp_path / "pool.bin").read_bytes()
    block = header["clients"][0]["features"]
    first_column = np.frombuffer(raw, "<f8", count=5, offset=block["offset"])
    (prob,) = D.make_datasets(s, prof, "softmax")
    np.testing.assert_array_equal(first_column, prob.features[:, 0])
