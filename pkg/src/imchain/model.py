"""Target and instrumental log-densities, and the replication weight.

Every density is unnormalised and handled in log space. A ``LogDensity``
carries two evaluators: a vectorised numpy ``batch`` function used everywhere
outside the chain loops, and an optional scalar ``point`` function with the
uniform signature ``point(x, A, b) -> float`` that the jitted random-walk loop
calls once per step.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from ._accel import njit
from .errors import DimensionMismatch, DominationViolation, InvalidBeta, NonFiniteDensity

_LOG_2PI = float(np.log(2.0 * np.pi))
_EMPTY2 = np.zeros((0, 0))
_EMPTY1 = np.zeros(0)


@dataclass(frozen=True, eq=False)
class LogDensity:
    """Unnormalised log-density on R^dim.

    ``batch`` maps an ``(n, dim)`` array to ``n`` log-values. ``point`` and
    ``params`` (a pair ``(A, b)`` of float arrays) describe the same function
    in a form the jitted kernels can call. ``scale`` multiplies the log-value
    and is how tempering is represented. ``sampler(n, rng)``, when present,
    draws exactly from the normalised density.
    """

    dim: int
    batch: Callable[[np.ndarray], np.ndarray]
    point: Optional[Callable] = None
    params: tuple = field(default=(_EMPTY2, _EMPTY1))
    scale: float = 1.0
    sampler: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise DimensionMismatch(f"dim must be >= 1, got {self.dim}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected points of dimension {self.dim}, got shape {x.shape}")
        out = np.asarray(self.batch(X), dtype=float)
        if self.scale != 1.0:
            out = self.scale * out
        bad = np.isnan(out) | (out == np.inf)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NonFiniteDensity(f"{self.name} log-density returned {out[i]} at {X[i]}")
        return float(out[0]) if single else out

    eval = __call__

    def sample(self, n: int, rng) -> np.ndarray:
        if self.sampler is None:
            raise TypeError(f"{self.name} has no exact sampler")
        return np.asarray(self.sampler(n, rng), dtype=float).reshape(n, self.dim)


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """``log rho_kappa(x) = log kappa + log_target(x) - log_instrumental(x)``."""

    kappa: float
    log_target: LogDensity
    log_instrumental: LogDensity

    def __post_init__(self):
        if not (self.kappa > 0 and np.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa}")
        if self.log_target.dim != self.log_instrumental.dim:
            raise DimensionMismatch("target and instrumental dimensions differ")

    @property
    def dim(self):
        return self.log_target.dim

    def with_kappa(self, kappa) -> "WeightFunction":
        return WeightFunction(kappa, self.log_target, self.log_instrumental)

    def log_weight(self, x, log_target=None, log_instrumental=None):
        """Log-weights of a batch of points; precomputed log-densities may be passed."""
        lt = self.log_target(x) if log_target is None else log_target
        li = self.log_instrumental(x) if log_instrumental is None else log_instrumental
        return log_ratio(lt, li) + np.log(self.kappa)


def log_ratio(log_target, log_instrumental, offset=0):
    """``log_target - log_instrumental`` with 0/0 -> 0 and p/0 an error.

    ``offset`` is added to any step index reported in the error.
    """
    lt = np.asarray(log_target, dtype=float)
    li = np.asarray(log_instrumental, dtype=float)
    zero_t = lt == -np.inf
    bad = (li == -np.inf) & ~zero_t
    if bad.any():
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise DominationViolation("target density is positive where the instrumental density is zero",
                                  step=None if lt.ndim == 0 else i + offset)
    with np.errstate(invalid="ignore"):
        out = np.where(zero_t, -np.inf, lt - li)
    return float(out) if out.ndim == 0 else out


def weight(wf: WeightFunction, x) -> float:
    """Expected replication count ``kappa * pi_U(x) / pi~_U(x)`` at one point."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("weight() takes a single point; use WeightFunction.log_weight for batches")
    lw = log_ratio(wf.log_target(x), wf.log_instrumental(x)) + np.log(wf.kappa)
    return float(np.exp(lw))


def tempered(target: LogDensity, beta: float) -> LogDensity:
    """The density ``target ** beta``; the exact sampler is dropped."""
    if not (0.0 < beta <= 1.0):
        raise InvalidBeta(f"beta must lie in (0, 1], got {beta}")
    if beta == 1.0:
        return target
    return LogDensity(target.dim, target.batch, target.point, target.params,
                      target.scale * beta, None, f"{target.name}^{beta:g}")


# -- Gaussian mixture ---------------------------------------------------------

@njit
def _gm_point(x, means, b):
    # b = (sigma,)
    s2 = b[0] * b[0]
    k, d = means.shape
    best = -np.inf
    q = np.empty(k)
    for i in range(k):
        acc = 0.0
        for j in range(d):
            t = x[j] - means[i, j]
            acc += t * t
        q[i] = -0.5 * acc / s2
        if q[i] > best:
            best = q[i]
    tot = 0.0
    for i in range(k):
        tot += np.exp(q[i] - best)
    return best + np.log(tot) - 0.5 * d * (np.log(2.0 * np.pi) + np.log(s2))


def gaussian_mixture(dim: int, means, scale: float = 1.0) -> LogDensity:
    """``log sum_i N(x; mu_i, scale^2 I)`` evaluated with log-sum-exp.

    Components carry equal weight and the density is left as a plain sum, so
    the attached sampler draws from the same law up to the factor ``1/k``.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if means.size == 0:
        raise DimensionMismatch("gaussian_mixture needs at least one mean")
    if means.shape[1] != dim:
        raise DimensionMismatch(f"means have dimension {means.shape[1]}, expected {dim}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    means = np.ascontiguousarray(means)
    s2 = float(scale) ** 2
    const = -0.5 * dim * (_LOG_2PI + np.log(s2))

    def batch(X):
        sq = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        return logsumexp(-0.5 * sq / s2, axis=1) + const

    def sampler(n, rng):
        comp = rng.integers(0, means.shape[0], size=n)
        return means[comp] + scale * rng.standard_normal((n, dim))

    return LogDensity(dim, batch, _gm_point, (means, np.array([float(scale)])),
                      1.0, sampler, "gaussian_mixture")


# -- ring-bimodal target --------------------------------------------------------

_RING_RADIUS, _RING_WIDTH, _MODE, _MODE_WIDTH = 2.0, 0.1, 3.0, 0.6


@njit
def _ring_point(x, A, b):
    r2 = 0.0
    tot = 0.0
    for j in range(x.shape[0]):
        r2 += x[j] * x[j]
        u = -0.5 * ((x[j] + 3.0) / 0.6) ** 2
        v = -0.5 * ((x[j] - 3.0) / 0.6) ** 2
        m = max(u, v)
        tot += m + np.log(np.exp(u - m) + np.exp(v - m))
    return -0.5 * ((np.sqrt(r2) - 2.0) / 0.1) ** 2 + tot


def _ring_batch(X):
    radial = -0.5 * ((np.linalg.norm(X, axis=1) - _RING_RADIUS) / _RING_WIDTH) ** 2
    u = -0.5 * ((X + _MODE) / _MODE_WIDTH) ** 2
    v = -0.5 * ((X - _MODE) / _MODE_WIDTH) ** 2
    return radial + np.logaddexp(u, v).sum(axis=1)


def ring_bimodal(dim: int) -> LogDensity:
    """Ring of radius 2 times a two-mode product over coordinates (2^dim modes)."""
    if int(dim) < 1:
        raise DimensionMismatch(f"dim must be >= 1, got {dim}")
    return LogDensity(int(dim), _ring_batch, _ring_point, (_EMPTY2, _EMPTY1),
                      1.0, None, "ring_bimodal")


# -- finite state space ---------------------------------------------------------

@njit
def _finite_point(x, A, b):
    return b[int(x[0])]


def finite_density(p) -> LogDensity:
    """Log of a probability vector indexed by ``x[0]`` (states stored as floats)."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or (p < 0).any():
        raise ValueError("p must be a nonnegative vector")
    with np.errstate(divide="ignore"):
        logp = np.log(p)

    def batch(X):
        idx = X[:, 0].astype(np.int64)
        if (idx < 0).any() or (idx >= p.size).any() or (idx != X[:, 0]).any():
            raise DimensionMismatch("finite states must be integer indices in range")
        return logp[idx]

    def sampler(n, rng):
        return rng.choice(p.size, size=n, p=p / p.sum()).astype(float)[:, None]

    return LogDensity(1, batch, _finite_point, (_EMPTY2, logp), 1.0, sampler, "finite")
