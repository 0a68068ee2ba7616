"""Replication-count laws: integer-valued draws whose mean is the weight rho.

All laws take ``rho`` already scaled by kappa. ``draw`` is vectorised: an
array of weights gives one count per entry, a scalar weight with ``size``
gives ``size`` independent counts.
"""
import numpy as np

from .errors import DivisionByZero, DominationViolation, NonFiniteWeight, UnsupportedLaw
from .rng import as_generator


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    bad = ~np.isfinite(rho)
    if bad.any():
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        v = np.atleast_1d(rho)[i]
        raise NonFiniteWeight(f"replication weight is {v}", step=None if rho.ndim == 0 else i)
    if (rho < 0).any():
        raise ValueError("replication weight must be nonnegative")
    return rho


def _shape(rho, size):
    if size is None:
        return rho, rho.shape
    return np.broadcast_to(rho, size), tuple(np.atleast_1d(size))


def _out(counts, scalar):
    return int(counts) if scalar else counts


class ReplicationLaw:
    """Distribution over nonnegative integers with mean ``rho``."""

    name = "abstract"

    def draw(self, rho, rng, size=None):
        raise NotImplementedError

    def mean(self, rho):
        return np.asarray(rho, dtype=float)

    def variance(self, rho):
        raise UnsupportedLaw(f"{self.name} has no closed-form variance")

    def pmf(self, rho, n_max: int):
        raise UnsupportedLaw(f"{self.name} has no closed-form pmf")

    def tail_mean(self, rho, n_max: int) -> float:
        """``sum_{n > n_max} n p(n)``; zero for laws with bounded support."""
        return 0.0

    def __repr__(self):
        return f"{type(self).__name__}()"


class OptimalLaw(ReplicationLaw):
    """``floor(rho) + Bernoulli(frac(rho))``, the minimum-variance integer law."""

    name = "optimal"

    def draw(self, rho, rng, size=None):
        scalar = np.ndim(rho) == 0 and size is None
        rho, shape = _shape(_check_rho(rho), size)
        u = as_generator(rng).random(shape)
        return _out(self.from_uniform(rho, u), scalar)

    @staticmethod
    def from_uniform(rho, u):
        """Counts from given uniforms; ties ``u == frac(rho)`` go to the floor."""
        rho = np.asarray(rho, dtype=float)
        fl = np.floor(rho)
        return fl.astype(np.int64) + (np.asarray(u) < rho - fl)

    def variance(self, rho):
        rho = _check_rho(rho)
        f = rho - np.floor(rho)
        return f * (1.0 - f)

    def pmf(self, rho, n_max):
        rho = float(_check_rho(rho))
        out = np.zeros(n_max + 1)
        fl = int(np.floor(rho))
        f = rho - fl
        if fl <= n_max:
            out[fl] += 1.0 - f
        if fl + 1 <= n_max and f > 0:
            out[fl + 1] += f
        return out


class BernoulliLaw(ReplicationLaw):
    """Keep-or-drop replication; requires ``rho <= 1``."""

    name = "bernoulli_rejection"

    def _check(self, rho):
        rho = _check_rho(rho)
        if (rho > 1.0).any():
            i = int(np.flatnonzero(np.atleast_1d(rho > 1.0))[0])
            raise DominationViolation(f"acceptance probability {np.atleast_1d(rho)[i]} exceeds 1; "
                                      "the envelope constant M is too small",
                                      step=None if rho.ndim == 0 else i)
        return rho

    def draw(self, rho, rng, size=None):
        scalar = np.ndim(rho) == 0 and size is None
        rho, shape = _shape(self._check(rho), size)
        u = as_generator(rng).random(shape)
        return _out((u < rho).astype(np.int64), scalar)

    def variance(self, rho):
        rho = self._check(rho)
        return rho * (1.0 - rho)

    def pmf(self, rho, n_max):
        rho = float(self._check(rho))
        out = np.zeros(max(n_max, 1) + 1)
        out[0], out[1] = 1.0 - rho, rho
        return out[: n_max + 1]


class OSRLaw(ReplicationLaw):
    """Bernoulli-thinned geometric count ``V * S`` of the self-regenerative chain.

    ``V ~ Bernoulli(min(1, rho))`` and ``S`` is geometric on ``{1, 2, ...}``
    with success probability ``min(1, 1/rho)``, so that ``E[V S] = rho``.
    """

    name = "osr"

    @staticmethod
    def parameters(rho):
        rho = _check_rho(rho)
        with np.errstate(divide="ignore", over="ignore"):
            return np.minimum(1.0, rho), np.minimum(1.0, 1.0 / rho)

    def draw(self, rho, rng, size=None):
        scalar = np.ndim(rho) == 0 and size is None
        rho, shape = _shape(_check_rho(rho), size)
        alpha, q = self.parameters(rho)
        g = as_generator(rng)
        v = g.random(shape) < alpha
        s = g.geometric(np.broadcast_to(q, shape))
        return _out(np.where(v, s, 0).astype(np.int64), scalar)

    def variance(self, rho):
        alpha, q = self.parameters(rho)
        return alpha * (2.0 - q) / q**2 - (alpha / q) ** 2

    def pmf(self, rho, n_max):
        alpha, q = (float(v) for v in self.parameters(rho))
        n = np.arange(1, n_max + 1)
        out = np.zeros(n_max + 1)
        out[0] = 1.0 - alpha
        out[1:] = alpha * q * (1.0 - q) ** (n - 1)
        return out

    def tail_mean(self, rho, n_max):
        alpha, q = (float(v) for v in self.parameters(rho))
        # E[S; S > N] = (1-q)^N (N + 1/q) by memorylessness
        return alpha * (1.0 - q) ** n_max * (n_max + 1.0 / q)


OPTIMAL = OptimalLaw()
BERNOULLI = BernoulliLaw()
OSR = OSRLaw()


def draw_optimal(rho, rng, size=None):
    return OPTIMAL.draw(rho, rng, size)


def draw_bernoulli_rejection(target_ratio, M, rng, size=None):
    """Accept (1) with probability ``target_ratio / M``, else 0."""
    if not M > 0:
        raise ValueError("M must be positive")
    return BERNOULLI.draw(np.asarray(target_ratio, dtype=float) / M, rng, size)


def draw_osr(rho, rng, size=None):
    return OSR.draw(rho, rng, size)


def law_pmf(law: ReplicationLaw, rho, n_max: int):
    """Exact probabilities of ``{0..n_max}``; mass beyond ``n_max`` is omitted."""
    return law.pmf(rho, int(n_max))


# -- pseudo-marginal ------------------------------------------------------------

class UnbiasedEstimator:
    """Random nonnegative ``W`` with ``E[W] = pi_U(x)``.

    Subclasses implement ``log_sample`` on a batch of points; ``-inf`` encodes
    ``W = 0``.
    """

    def log_sample(self, X, rng):
        raise NotImplementedError

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        return float(np.exp(self.log_sample(x[None, :], rng)[0]))


class ExactEstimator(UnbiasedEstimator):
    def __init__(self, log_density):
        self.log_density = log_density

    def log_sample(self, X, rng):
        return self.log_density(X)


class TwoPointEstimator(UnbiasedEstimator):
    """``W = pi_U(x) * low`` or ``pi_U(x) * high``, each with probability 1/2."""

    def __init__(self, log_density, low=0.5, high=1.5):
        if low < 0 or not np.isclose(low + high, 2.0, rtol=0, atol=1e-15):
            raise ValueError("two-point factors must be nonnegative and average to 1")
        self.log_density = log_density
        self.low, self.high = float(low), float(high)

    def log_sample(self, X, rng):
        hi = as_generator(rng).random(len(X)) < 0.5
        with np.errstate(divide="ignore"):
            f = np.log(np.where(hi, self.high, self.low))
        return self.log_density(X) + f


class LogNormalEstimator(UnbiasedEstimator):
    """``W = pi_U(x) * exp(sigma Z - sigma^2 / 2)``."""

    def __init__(self, log_density, sigma):
        self.log_density = log_density
        self.sigma = float(sigma)

    def log_sample(self, X, rng):
        z = as_generator(rng).standard_normal(len(X))
        return self.log_density(X) + self.sigma * z - 0.5 * self.sigma**2


class PseudoMarginalLaw(ReplicationLaw):
    """Optimal law applied to ``kappa * W / pi~_U(x)`` with ``W`` an unbiased estimate.

    Its draws need the point itself, so the engine calls :meth:`log_weights`
    first and then the optimal law on the estimated weights.
    """

    name = "pseudo_marginal"

    def __init__(self, estimator: UnbiasedEstimator):
        self.estimator = estimator

    def log_weights(self, X, log_instrumental, rng):
        lw = self.estimator.log_sample(X, rng)
        if np.isnan(lw).any() or (lw == np.inf).any():
            i = int(np.flatnonzero(np.isnan(lw) | (lw == np.inf))[0])
            raise NonFiniteWeight("unbiased estimate is not finite", step=i)
        li = np.asarray(log_instrumental, dtype=float)
        if ((li == -np.inf) & (lw > -np.inf)).any():
            raise DominationViolation("estimate is positive where the instrumental density is zero")
        with np.errstate(invalid="ignore"):
            return np.where(lw == -np.inf, -np.inf, lw - li)

    def draw(self, rho, rng, size=None):
        # rho here is an already-estimated weight
        return OPTIMAL.draw(rho, rng, size)

    def pmf(self, rho, n_max):
        raise UnsupportedLaw("the pseudo-marginal law has no closed-form pmf")


def draw_pseudo_marginal(x, kappa, log_instrumental_at_x, estimator: UnbiasedEstimator, rng):
    """One count from the optimal law at the estimated weight ``kappa W / pi~_U(x)``."""
    if not np.isfinite(log_instrumental_at_x):
        raise DominationViolation("instrumental log-density at x must be finite")
    g = as_generator(rng)
    x = np.asarray(x, dtype=float)
    lw = float(estimator.log_sample(x[None, :], g)[0])
    if np.isnan(lw) or lw == np.inf:
        raise NonFiniteWeight(f"unbiased estimate is {np.exp(lw)}")
    if lw == -np.inf:
        return 0
    return draw_optimal(np.exp(np.log(kappa) + lw - log_instrumental_at_x), g)


def full_pm_weight(u, v, kappa):
    """Weight ``kappa * v / u`` on the space extended by both density estimates."""
    if u == 0:
        raise DivisionByZero("instrumental estimate u is zero")
    if u < 0 or v < 0:
        raise ValueError("density estimates must be nonnegative")
    return kappa * v / u


LAWS = {"optimal": OPTIMAL, "bernoulli_rejection": BERNOULLI, "osr": OSR}
