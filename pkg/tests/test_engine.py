import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from imchain.engine import (AugmentedState, RunLengthSample, estimate_imc, estimate_is, expand, expand_arrays,
                            read_sample_csv, run_semi_markov, run_semi_markov_many, tune_kappa, tune_kappa_log,
                            write_sample_csv)
from imchain.errors import AllZeroWeights, DimensionMismatch, DominationViolation, EmptyChain, NonFiniteWeight
from imchain.kernels import FiniteKernel, IIDKernel, RWMKernel
from imchain.model import LogDensity, WeightFunction, finite_density, gaussian_mixture, tempered
from imchain.oracle import make_random_spec
from imchain.replication import BERNOULLI, OPTIMAL, OSR, PseudoMarginalLaw, TwoPointEstimator
from imchain.rng import RandomSource


def finite_setup(spec):
    kernel = FiniteKernel(spec.Q, spec.pi_tilde)
    wf = WeightFunction(spec.kappa, finite_density(spec.pi), finite_density(spec.pi_tilde))
    return kernel, wf


def states_of(sample):
    return sample.points[:, 0].astype(int)


class TestRunSemiMarkov:
    def test_identity_collapse(self):
        g = gaussian_mixture(2, [[1.0, 0.0], [-1.0, 2.0]])
        k = RWMKernel(g, 1.0)
        s = run_semi_markov(k, OPTIMAL, WeightFunction(1.0, g, g), [0.0, 0.0], 2000, 0, RandomSource(3))
        assert np.all(s.counts == 1)
        X, N = expand_arrays(s)
        inst, _ = k.run([0.0, 0.0], 2000, RandomSource(3))
        assert np.array_equal(X, inst) and np.all(N == 0)

    def test_zero_target_gives_empty_chain(self):
        zero = LogDensity(1, lambda X: np.full(len(X), -np.inf))
        g = gaussian_mixture(1, [[0.0]])
        s = run_semi_markov(IIDKernel(g), OPTIMAL, WeightFunction(1.0, zero, g), [0.0], 100, 0, RandomSource(1))
        assert s.total_count == 0
        assert list(expand(s)) == []
        with pytest.raises(EmptyChain):
            estimate_imc(s, lambda X: X[:, 0])

    def test_occupation_matches_target(self):
        spec = make_random_spec(3, 4, 21)
        kernel, wf = finite_setup(spec)
        s = run_semi_markov(kernel, OPTIMAL, wf, [0.0], 1_000_000, 0, RandomSource(5))
        occ = np.zeros((100, 3))
        st_ = states_of(s).reshape(100, -1)
        c = s.counts.reshape(100, -1)
        for j in range(3):
            occ[:, j] = ((st_ == j) * c).sum(axis=1)
        freq = occ.sum(axis=0) / occ.sum()
        # batch-means standard error of each ratio estimate
        batch = occ / occ.sum(axis=1, keepdims=True)
        se = batch.std(axis=0, ddof=1) / np.sqrt(100)
        assert np.all(np.abs(freq - spec.pi) < 4 * se)

    def test_estimators_match_exact_expectation(self):
        spec = make_random_spec(3, 4, 22)
        kernel, wf = finite_setup(spec)
        hv = np.array([2.0, -1.0, 0.5])
        s = run_semi_markov(kernel, OPTIMAL, wf, [0.0], 1_000_000, 0, RandomSource(6))
        h = lambda X: hv[X[:, 0].astype(int)]  # noqa: E731
        for est in (estimate_imc(s, h)[0], estimate_is(s, h)):
            from imchain.diagnostics import clt_variance_plugin

            sd = np.sqrt(clt_variance_plugin(spec, hv).sigma2_total / s.total_count)
            assert abs(est - spec.pi @ hv) < 5 * sd

    def test_lln_rate(self):
        spec = make_random_spec(3, 3, 23)
        kernel, wf = finite_setup(spec)
        hv = np.array([1.0, 0.0, -1.0])
        ns = [10_000, 40_000, 160_000]
        rmse = []
        for n in ns:
            gens = [RandomSource(50 + i, n).generator() for i in range(20)]
            S = run_semi_markov_many(kernel, OPTIMAL, wf, np.zeros((20, 1)), n, 0, gens)
            err = [estimate_imc(s, lambda X: hv[X[:, 0].astype(int)])[0] - spec.pi @ hv for s in S]
            rmse.append(np.sqrt(np.mean(np.square(err))))
        slope = np.polyfit(np.log(ns), np.log(rmse), 1)[0]
        assert -0.65 <= slope <= -0.35

    def test_burn_in_discards(self):
        g = gaussian_mixture(1, [[0.0]])
        k = RWMKernel(g, 1.0)
        wf = WeightFunction(1.0, g, g)
        full = run_semi_markov(k, OPTIMAL, wf, [0.0], 150, 0, RandomSource(2))
        burnt = run_semi_markov(k, OPTIMAL, wf, [0.0], 100, 50, RandomSource(2))
        assert np.array_equal(full.points[50:], burnt.points)

    def test_deterministic(self):
        g = gaussian_mixture(2, [[3.0, 0.0], [-3.0, 0.0]])
        k = RWMKernel(tempered(g, 0.2), 3.0)
        wf = WeightFunction(1.0, g, tempered(g, 0.2))
        a = run_semi_markov(k, OSR, wf, [0.0, 0.0], 1000, 10, RandomSource(9, 1), alpha=1.0)
        b = run_semi_markov(k, OSR, wf, [0.0, 0.0], 1000, 10, RandomSource(9, 1), alpha=1.0)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.counts, b.counts)
        assert a.kappa == b.kappa

    def test_domination_reports_step(self):
        half = LogDensity(1, lambda X: np.where(X[:, 0] > 0, 0.0, -np.inf),
                          sampler=lambda n, g: np.abs(g.standard_normal((n, 1))))
        g = gaussian_mixture(1, [[0.0]])
        with pytest.raises(DominationViolation) as info:
            # points drawn on the whole line, weights computed against the half-line density
            run_semi_markov(IIDKernel(g), OPTIMAL, WeightFunction(1.0, g, half), [1.0], 100, 0,
                            RandomSource(1))
        assert info.value.step is not None

    def test_weight_overflow(self):
        g = gaussian_mixture(1, [[0.0]])
        big = LogDensity(1, lambda X: np.full(len(X), 1e4))
        with pytest.raises(NonFiniteWeight):
            run_semi_markov(IIDKernel(g), OPTIMAL, WeightFunction(1.0, big, g), [0.0], 10, 0, RandomSource(1))

    def test_bernoulli_law(self):
        g = gaussian_mixture(1, [[0.0]])
        wf = WeightFunction(0.5, g, g)
        s = run_semi_markov(IIDKernel(g), BERNOULLI, wf, [0.0], 10_000, 0, RandomSource(4))
        assert set(np.unique(s.counts).tolist()) <= {0, 1}
        assert abs(s.counts.mean() - 0.5) < 4 * 0.5 / 100

    def test_pseudo_marginal_law(self):
        g = gaussian_mixture(1, [[0.0]])
        law = PseudoMarginalLaw(TwoPointEstimator(g))
        s = run_semi_markov(IIDKernel(g), law, WeightFunction(1.0, g, g), [0.0], 10_000, 0, RandomSource(4))
        assert set(np.unique(s.counts).tolist()) <= {0, 1, 2}

    def test_bad_arguments(self):
        g = gaussian_mixture(1, [[0.0]])
        wf = WeightFunction(1.0, g, g)
        with pytest.raises(DimensionMismatch):
            run_semi_markov(IIDKernel(g), OPTIMAL, wf, [0.0, 1.0], 10, 0, RandomSource(1))
        with pytest.raises(ValueError):
            run_semi_markov(IIDKernel(g), OPTIMAL, wf, [0.0], 0, 0, RandomSource(1))


class TestExpand:
    def test_example(self):
        s = RunLengthSample([[1.0], [2.0]], [2, 1], [0.0, 0.0])
        out = [(float(a.x[0]), a.n) for a in expand(s)]
        assert out == [(1.0, 1), (1.0, 0), (2.0, 0)]
        assert isinstance(next(expand(s)), AugmentedState)

    def test_all_zero(self):
        assert list(expand(RunLengthSample([[1.0], [2.0]], [0, 0], [0.0, 0.0]))) == []

    @given(arrays(np.int64, st.integers(1, 40), elements=st.integers(0, 6)))
    def test_length_and_countdown(self, counts):
        pts = np.arange(len(counts), dtype=float)[:, None]
        s = RunLengthSample(pts, counts, np.zeros(len(counts)))
        lazy = list(expand(s))
        X, N = expand_arrays(s)
        assert len(lazy) == counts.sum() == len(X)
        assert np.array_equal(X[:, 0], [a.x[0] for a in lazy])
        assert np.array_equal(N, [a.n for a in lazy])
        for a, b in zip(lazy, lazy[1:]):
            if a.n >= 1:
                assert b.x[0] == a.x[0] and b.n == a.n - 1


class TestTuneKappa:
    def test_equal_weights(self):
        assert tune_kappa(np.full(10, 4.0), 1.0) == pytest.approx(0.25)

    def test_arithmetic(self):
        assert tune_kappa([1.0, 3.0], 2.0) == 1.0

    def test_log_version_agrees(self):
        w = np.random.default_rng(0).gamma(2.0, size=100)
        assert tune_kappa_log(np.log(w), 1.5) == pytest.approx(tune_kappa(w, 1.5), rel=1e-12)

    def test_log_version_survives_overflow(self):
        assert tune_kappa_log(np.array([800.0, 800.0]), 1.0) == pytest.approx(np.exp(-800.0))

    def test_all_zero(self):
        with pytest.raises(AllZeroWeights):
            tune_kappa([0.0, 0.0], 1.0)
        with pytest.raises(AllZeroWeights):
            tune_kappa_log([-np.inf], 1.0)

    def test_realised_length(self, rng):
        n = 100_000
        w = rng.gamma(0.5, 3.0, n)
        k = tune_kappa(w, 1.0)
        c = OPTIMAL.draw(k * w, rng)
        assert abs(c.sum() - n) <= 4 * np.sqrt(n / 4)


class TestEstimators:
    def test_imc_example(self):
        s = RunLengthSample([[1.0], [4.0]], [2, 1], [0.0, 0.0])
        v, k = estimate_imc(s, lambda X: X[:, 0])
        assert v == pytest.approx(2.0) and k == 3

    def test_imc_unit_counts_is_plain_mean(self):
        x = np.random.default_rng(1).normal(size=(50, 1))
        v, _ = estimate_imc(RunLengthSample(x, np.ones(50), np.zeros(50)), lambda X: X[:, 0])
        assert v == pytest.approx(x.mean())

    def test_is_uniform_and_zero_weight(self):
        x = np.array([[3.0], [7.0]])
        assert estimate_is(RunLengthSample(x, [1, 1], [0.0, 0.0]), lambda X: X[:, 0]) == 5.0
        assert estimate_is(RunLengthSample(x, [1, 1], [0.0, -np.inf]), lambda X: X[:, 0]) == 3.0

    def test_is_all_zero(self):
        with pytest.raises(AllZeroWeights):
            estimate_is(RunLengthSample([[1.0]], [0], [-np.inf]), lambda X: X[:, 0])

    def test_vector_valued_h(self):
        s = RunLengthSample([[1.0, 2.0], [3.0, 4.0]], [1, 3], [0.0, 0.0])
        v, _ = estimate_imc(s, lambda X: X)
        np.testing.assert_allclose(v, [2.5, 3.5])


class TestSerialisation:
    def test_round_trip(self, tmp_path):
        g = gaussian_mixture(2, [[0.0, 0.0]])
        s = run_semi_markov(RWMKernel(g, 1.0), OPTIMAL, WeightFunction(1.3, g, tempered(g, 0.5)),
                            [0.0, 0.0], 300, 0, RandomSource(1))
        meta = {"seed": 1, "kappa": s.kappa}
        write_sample_csv(s, tmp_path / "a.csv", meta)
        back, m = read_sample_csv(tmp_path / "a.csv")
        assert m == meta
        assert np.array_equal(back.points, s.points)
        assert np.array_equal(back.counts, s.counts)
        np.testing.assert_allclose(back.log_weights, s.log_weights, rtol=1e-15, atol=1e-15)
        header = (tmp_path / "a.csv").read_text().splitlines()[1]
        assert header == "index,count,weight,x_1,x_2"

    def test_rejects_inconsistent_lengths(self):
        with pytest.raises(DimensionMismatch):
            RunLengthSample([[1.0], [2.0]], [1], [0.0, 0.0])
