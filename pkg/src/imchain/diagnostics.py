"""Effective sample sizes, kappa scans, and asymptotic-variance tools."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import AllZeroWeights, DegenerateVariance, EmptyChain, MeanNotZero, SingularSystem
from .replication import OPTIMAL, ReplicationLaw
from .rng import RandomSource, as_generator


@dataclass
class DiagnosticsReport:
    ess_kappa: float
    ess_is: float
    chain_length: int
    kappa: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class CltVarianceReport:
    """Asymptotic variance split into the instrumental-chain and replication parts."""

    sigma2_total: float
    sigma2_instrumental: float
    sigma2_replication: float
    kappa: float
    sigma2_tilde: float  # variance of rho * h0 along the instrumental chain
    sigma2_hat: float  # pi~-average of h0^2 Var[N | x]


def ess_kappa(counts) -> float:
    """``(sum N)^2 / sum N^2`` over the copy counts."""
    c = np.asarray(counts, dtype=float)
    s = c.sum()
    if not s > 0:
        raise EmptyChain("all replication counts are zero")
    return float(s * s / (c * c).sum())


def ess_is(weights) -> float:
    """Importance-sampling ESS ``(sum w)^2 / sum w^2``; invariant to rescaling ``w``."""
    w = np.asarray(weights, dtype=float)
    top = w.max() if w.size else 0.0
    if not top > 0:
        raise AllZeroWeights("all importance weights are zero")
    w = w / top
    return float(w.sum() ** 2 / (w * w).sum())


def ess_is_log(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    if not (lw > -np.inf).any():
        raise AllZeroWeights("all importance weights are zero")
    return ess_is(np.exp(lw - lw.max()))


def kappa_scan(weights, kappas, rng, law: ReplicationLaw = OPTIMAL, log_weights=None):
    """Redraw counts on a fixed instrumental chain for each kappa.

    ``weights`` are in the kappa = 1 convention; pass ``log_weights`` instead
    when they would overflow. Returns a dict of equal-length arrays with keys
    ``kappa``, ``ess_kappa``, ``ess_is`` and ``chain_length``.
    """
    if log_weights is None:
        w = np.asarray(weights, dtype=float)
        if not w.sum() > 0:
            raise AllZeroWeights("all importance weights are zero")
        with np.errstate(divide="ignore"):
            lw = np.log(w)
    else:
        lw = np.asarray(log_weights, dtype=float)
    base = ess_is_log(lw)
    g = as_generator(rng)
    kappas = np.asarray(kappas, dtype=float)
    ess = np.empty(len(kappas))
    length = np.empty(len(kappas), dtype=np.int64)
    for i, k in enumerate(kappas):
        counts = law.draw(np.exp(np.log(k) + lw), g)
        length[i] = counts.sum()
        ess[i] = ess_kappa(counts) if length[i] > 0 else 0.0
    return {"kappa": kappas, "ess_kappa": ess, "ess_is": np.full(len(kappas), base),
            "chain_length": length}


def _qp(spec_or_q, pi_tilde=None):
    if pi_tilde is None:
        return np.asarray(spec_or_q.Q, dtype=float), np.asarray(spec_or_q.pi_tilde, dtype=float)
    return np.asarray(spec_or_q, dtype=float), np.asarray(pi_tilde, dtype=float)


def poisson_solve(spec, f, pi_tilde=None, return_cond=False, min_gap=1e-6):
    """Solve ``(I - Q) H = f`` with ``pi~ H = 0``.

    ``spec`` is a FiniteChainSpec, or a matrix ``Q`` when ``pi_tilde`` is
    given. Uses the augmented system ``(I - Q + 1 pi~^T) H = f``.
    """
    Q, pt = _qp(spec, pi_tilde)
    f = np.asarray(f, dtype=float)
    if abs(pt @ f) > 1e-10:
        raise MeanNotZero(f"pi~(f) = {pt @ f:.3g}; subtract the mean first")
    mods = np.sort(np.abs(np.linalg.eigvals(Q)))[::-1]
    if len(mods) > 1 and 1.0 - mods[1] < min_gap:
        raise SingularSystem(f"spectral gap {1.0 - mods[1]:.3g} below {min_gap:g}: Q reducible or periodic")
    A = np.eye(len(f)) - Q + np.outer(np.ones(len(f)), pt)
    try:
        H = np.linalg.solve(A, f)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if return_cond:
        return H, float(np.linalg.cond(A))
    return H


def chain_variance(spec, g, pi_tilde=None) -> float:
    """Asymptotic variance ``2 pi~(g H) - pi~(g^2)`` of a centred ``g`` along ``Q``."""
    _, pt = _qp(spec, pi_tilde)
    H = poisson_solve(spec, g, pi_tilde)
    return float(2.0 * pt @ (g * H) - pt @ (g * g))


def clt_variance_plugin(spec, h, kappa=None, law: ReplicationLaw = OPTIMAL) -> CltVarianceReport:
    """Plug-in CLT variance of the expanded-chain average of ``h``.

    With ``kappa=None`` the replication variances are read off the spec's own
    ``R_tilde`` rows at ``spec.kappa``. Otherwise ``law``'s analytic variance
    at ``kappa * pi / pi~`` is used.
    """
    h = np.asarray(h, dtype=float)
    pt = spec.pi_tilde
    h0 = h - spec.pi @ h
    g = spec.ratio * h0
    s_tilde = chain_variance(spec, g)
    if kappa is None:
        kappa = spec.kappa
        n = np.arange(spec.R_tilde.shape[1])
        mean = spec.R_tilde @ n
        var_n = spec.R_tilde @ (n * n) - mean**2
    else:
        var_n = np.asarray(law.variance(kappa * spec.ratio), dtype=float)
    s_hat = float(pt @ (h0 * h0 * var_n))
    inst = kappa * s_tilde
    repl = s_hat / kappa
    return CltVarianceReport(inst + repl, inst, repl, float(kappa), s_tilde, s_hat)


def kappa_opt(spec, h) -> float:
    """Kappa minimising the upper bound ``kappa s~ + pi~(h0^2) / (4 kappa)``."""
    h = np.asarray(h, dtype=float)
    h0 = h - spec.pi @ h
    s_tilde = chain_variance(spec, spec.ratio * h0)
    if not s_tilde > 0:
        raise DegenerateVariance("instrumental-chain variance of rho * h0 is zero")
    return float(0.5 * np.sqrt(spec.pi_tilde @ (h0 * h0) / s_tilde))


def empirical_mse(runner: Callable, true_value, replications: int, rng, threads: int = 1) -> float:
    """Mean over replications of the squared error of ``runner(source)``.

    ``runner`` receives a RandomSource for stream ``r`` of the base seed and
    returns an estimate (scalar or vector; vector errors are summed over
    components). Results are collected in stream order, so the value does not
    depend on ``threads``.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    base = rng if isinstance(rng, RandomSource) else RandomSource(int(rng))
    sources = [base.stream(r) for r in range(replications)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            ests = list(pool.map(runner, sources))
    else:
        ests = [runner(s) for s in sources]
    err = np.asarray(ests, dtype=float) - np.asarray(true_value, dtype=float)
    return float(np.mean(np.sum(err.reshape(replications, -1) ** 2, axis=1)))


def batch_means_variance(values, n_batches: int = 20) -> float:
    """Batch-means estimate of the asymptotic variance of a sample mean.

    A dependence-aware sanity figure only; it is not a bulk ESS.
    """
    v = np.asarray(values, dtype=float)
    b = len(v) // n_batches
    if b < 2:
        return float("nan")
    means = v[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(b * means.var(ddof=1))


def length_regression(kappas, lengths):
    """Least-squares line of chain length on kappa: ``(slope, intercept, r_squared)``."""
    from scipy.stats import linregress

    fit = linregress(np.asarray(kappas, dtype=float), np.asarray(lengths, dtype=float))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
