import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from imchain.diagnostics import (CltVarianceReport, batch_means_variance, chain_variance, clt_variance_plugin,
                                 empirical_mse, ess_is, ess_is_log, ess_kappa, kappa_opt, kappa_scan,
                                 length_regression, poisson_solve)
from imchain.errors import AllZeroWeights, DegenerateVariance, EmptyChain, MeanNotZero, SingularSystem
from imchain.oracle import make_random_spec, metropolis_walk, spec_from_densities
from imchain.replication import OPTIMAL, OSR
from imchain.rng import RandomSource


def neumann(Q, f, K=20_000):
    out, x = f.copy(), f.copy()
    for _ in range(K):
        x = Q @ x
        out += x
    return out


def series_variance(spec, g, K=20_000):
    pt, x, acc = spec.pi_tilde, g.copy(), 0.0
    for _ in range(K):
        x = spec.Q @ x
        acc += pt @ (g * x)
    return pt @ (g * g) + 2 * acc


class TestESS:
    @pytest.mark.parametrize("counts,expected", [([1, 1, 1, 1], 4.0), ([2, 0, 0, 0], 1.0), ([1, 2, 1], 16 / 6)])
    def test_ess_kappa_examples(self, counts, expected):
        assert ess_kappa(counts) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("w,expected", [(np.ones(7), 7.0), ([0, 0, 3.0], 1.0), ([1.0, 3.0], 1.6)])
    def test_ess_is_examples(self, w, expected):
        assert ess_is(w) == pytest.approx(expected, rel=1e-15)

    def test_errors(self):
        with pytest.raises(EmptyChain):
            ess_kappa([0, 0])
        with pytest.raises(AllZeroWeights):
            ess_is([0.0, 0.0])
        with pytest.raises(AllZeroWeights):
            ess_is_log([-np.inf])

    def test_log_version_handles_overflow(self):
        assert ess_is_log([1000.0, 1000.0, -np.inf]) == pytest.approx(2.0)

    @given(arrays(np.int64, st.integers(1, 50), elements=st.integers(0, 9)), st.integers(0, 20))
    def test_kappa_bounds_and_zero_padding(self, counts, pad):
        if counts.sum() == 0:
            return
        e = ess_kappa(counts)
        assert 1.0 - 1e-12 <= e <= np.count_nonzero(counts) + 1e-12
        assert ess_kappa(np.concatenate([counts, np.zeros(pad, dtype=np.int64)])) == e

    @given(arrays(float, st.integers(1, 50), elements=st.floats(0, 1e3)), st.floats(1e-3, 1e3))
    def test_is_scale_invariant(self, w, c):
        if not w.max() > 0:
            return
        assert ess_is(w * c) == pytest.approx(ess_is(w), rel=1e-9)
        assert ess_is(w) <= len(w) + 1e-9


class TestKappaScan:
    def test_equal_weights_integer_counts(self, rng):
        out = kappa_scan(np.full(10, 0.5), [2.0, 4.0, 6.0], rng)
        np.testing.assert_allclose(out["ess_kappa"], 10.0)
        assert out["chain_length"].tolist() == [10, 20, 30]

    def test_converges_to_is_and_linear_length(self, rng):
        w = rng.gamma(0.7, size=10_000)
        kappas = np.geomspace(0.1, 1e3, 30) * len(w) / w.sum()
        out = kappa_scan(w, kappas, rng)
        assert abs(out["ess_kappa"][-1] / out["ess_is"][-1] - 1) < 0.02
        slope, intercept, r2 = length_regression(out["kappa"], out["chain_length"])
        assert r2 > 0.999
        assert slope == pytest.approx(w.sum(), rel=1e-3)

    def test_all_zero(self, rng):
        with pytest.raises(AllZeroWeights):
            kappa_scan(np.zeros(3), [1.0], rng)

    def test_other_law(self, rng):
        out = kappa_scan(np.full(100, 1.0), [2.5], rng, law=OSR)
        assert out["chain_length"][0] > 0


class TestPoisson:
    def test_zero_rhs(self):
        spec = make_random_spec(4, 2, 1)
        np.testing.assert_array_equal(poisson_solve(spec, np.zeros(4)), np.zeros(4))

    def test_iid_chain(self):
        pt = np.array([0.2, 0.3, 0.5])
        Q = np.tile(pt, (3, 1))
        f = np.array([1.0, 2.0, -1.0])
        f -= pt @ f
        np.testing.assert_allclose(poisson_solve(Q, f, pt), f, atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_residual_and_neumann_series(self, seed):
        spec = make_random_spec(4, 2, 100 + seed)
        f = np.random.default_rng(seed).normal(size=4)
        f -= spec.pi_tilde @ f
        H, cond = poisson_solve(spec, f, return_cond=True)
        assert np.abs((np.eye(4) - spec.Q) @ H - f).max() < 1e-10
        assert abs(spec.pi_tilde @ H) < 1e-12
        np.testing.assert_allclose(H, neumann(spec.Q, f), atol=1e-8)
        assert np.isfinite(cond)

    def test_mean_not_zero(self):
        spec = make_random_spec(3, 2, 0)
        with pytest.raises(MeanNotZero):
            poisson_solve(spec, np.ones(3))

    def test_reducible(self):
        with pytest.raises(SingularSystem):
            poisson_solve(np.eye(2), np.array([1.0, -1.0]), np.array([0.5, 0.5]))


class TestCltVariance:
    def test_identical_densities(self):
        spec = make_random_spec(4, 2, 3, identical=True)
        h = np.array([1.0, 0.0, 2.0, -1.0])
        rep = clt_variance_plugin(spec, h)
        assert rep.sigma2_replication == 0.0
        assert rep.sigma2_total == pytest.approx(chain_variance(spec, h - spec.pi @ h), rel=1e-12)

    def test_constant_h(self):
        rep = clt_variance_plugin(make_random_spec(4, 3, 5), np.full(4, 3.0))
        assert rep.sigma2_total == pytest.approx(0.0, abs=1e-20)

    @pytest.mark.parametrize("seed", range(4))
    def test_against_series_and_decomposition(self, seed):
        spec = make_random_spec(4, 3, 100 + seed)
        h = np.array([1.0, -2.0, 0.5, 3.0])
        rep = clt_variance_plugin(spec, h)
        g = spec.ratio * (h - spec.pi @ h)
        assert rep.sigma2_tilde == pytest.approx(series_variance(spec, g), rel=1e-8)
        assert rep.sigma2_total == rep.sigma2_instrumental + rep.sigma2_replication
        assert rep.sigma2_instrumental >= 0 and rep.sigma2_replication >= 0
        assert isinstance(rep, CltVarianceReport)

    def test_law_variance_matches_spec_rows(self):
        spec = make_random_spec(4, 3, 7)
        h = np.array([0.0, 1.0, 4.0, 2.0])
        a = clt_variance_plugin(spec, h)
        b = clt_variance_plugin(spec, h, kappa=spec.kappa, law=OPTIMAL)
        assert a.sigma2_total == pytest.approx(b.sigma2_total, rel=1e-12)

    def test_kappa_opt_formula_and_bound(self):
        for seed in range(10):
            spec = make_random_spec(4, 3, 200 + seed)
            h = np.array([1.0, -2.0, 0.5, 3.0])
            h0 = h - spec.pi @ h
            s_tilde = chain_variance(spec, spec.ratio * h0)
            pt_h2 = spec.pi_tilde @ h0**2
            k = kappa_opt(spec, h)
            assert k == pytest.approx(0.5 * np.sqrt(pt_h2 / s_tilde), rel=1e-14)
            rep = clt_variance_plugin(spec, h, kappa=k, law=OPTIMAL)
            assert rep.sigma2_total <= np.sqrt(pt_h2 * s_tilde) * (1 + 1e-12)

    @pytest.mark.parametrize("a,expected", [(0.5, 0.5), (0.8, 1.0)])
    def test_kappa_opt_special_ratios(self, a, expected):
        # symmetric two-state flip chain, pi == pi~, h = (1, -1): pi~(h0^2) = 1 and
        # s~ = (1 - a) / a, so a = 0.5 gives equality and a = 0.8 gives a factor of 4
        pt = np.array([0.5, 0.5])
        Q = np.array([[1 - a, a], [a, 1 - a]])
        spec = spec_from_densities(Q, pt, pt, 1.0, 1)
        h = np.array([1.0, -1.0])
        assert chain_variance(spec, h) == pytest.approx((1 - a) / a, rel=1e-12)
        assert kappa_opt(spec, h) == pytest.approx(expected, rel=1e-12)

    def test_degenerate(self):
        pt = np.array([0.5, 0.5])
        spec = spec_from_densities(np.tile(pt, (2, 1)), pt, pt, 1.0, 1)
        with pytest.raises(DegenerateVariance):
            kappa_opt(spec, np.array([2.0, 2.0]))


class TestEmpiricalMSE:
    def test_exact_estimator(self):
        assert empirical_mse(lambda src: 1.5, 1.5, 10, 0) == 0.0

    def test_gaussian_estimates(self):
        v, reps = 2.0, 4000
        mse = empirical_mse(lambda src: src.generator().normal(0.0, np.sqrt(v)), 0.0, reps, RandomSource(3))
        assert abs(mse - v) < 4 * v * np.sqrt(2 / reps)

    def test_thread_independent(self):
        run = lambda src: src.generator().normal()  # noqa: E731
        assert empirical_mse(run, 0.0, 50, 4, threads=1) == empirical_mse(run, 0.0, 50, 4, threads=3)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            empirical_mse(lambda s: 0.0, 0.0, 1, 0)


def test_batch_means_on_iid(rng):
    x = rng.normal(size=100_000)
    assert batch_means_variance(x) == pytest.approx(1.0, rel=0.7)
    assert np.isnan(batch_means_variance(np.ones(10)))
