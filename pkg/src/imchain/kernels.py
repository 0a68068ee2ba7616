"""Instrumental Markov kernels leaving a given density invariant.

Each kernel offers ``step`` (one transition, mostly for tests and
illustration) and ``run_many`` (whole trajectories for a batch of chains).
All random numbers of a trajectory are drawn up front from the chain's own
generator; the loop itself is deterministic given those arrays, which is what
lets the numba and numpy paths consume identical inputs.

Under numba the loop runs chain by chain. Without it the chains advance in
lockstep so every step is one vectorised density evaluation over the batch.
"""
from typing import Sequence

import numpy as np

from . import _accel
from ._accel import njit
from .errors import DimensionMismatch, DominationViolation, IndexOutOfRange, NonFiniteDensity
from .model import LogDensity
from .rng import as_generator


def _check_point(target, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != target.dim:
        raise DimensionMismatch(f"state has shape {x.shape}, kernel dimension is {target.dim}")
    return x


def _mh_accept(log_u, lp_new, lp_old):
    # A zero-density current state accepts any positive-density proposal.
    if lp_new == -np.inf:
        return False
    if lp_old == -np.inf:
        return True
    return log_u < lp_new - lp_old


# -- single steps ---------------------------------------------------------------

def rwm_step(target: LogDensity, x, step_size: float, rng):
    """One Gaussian random-walk Metropolis transition. Returns ``(x_next, accepted)``."""
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    rng = as_generator(rng)
    x = _check_point(target, x)
    y = x + step_size * rng.standard_normal(target.dim)
    ok = _mh_accept(np.log(rng.random()), target(y), target(x))
    return (y, True) if ok else (x.copy(), False)


def independent_mh_step(target: LogDensity, proposal: LogDensity, x, rng):
    """One independence Metropolis-Hastings transition with an exact proposal sampler."""
    rng = as_generator(rng)
    x = _check_point(target, x)
    y = proposal.sample(1, rng)[0]
    lq_y = proposal(y)
    if lq_y == -np.inf:
        raise DominationViolation("proposal sampler returned a point of zero proposal density")
    lw_y = target(y) - lq_y
    lt_x = target(x)
    lw_x = -np.inf if lt_x == -np.inf else lt_x - proposal(x)
    ok = _mh_accept(np.log(rng.random()), lw_y, lw_x)
    return (y, True) if ok else (x.copy(), False)


def iid_step(target: LogDensity, rng):
    """A fresh exact draw from ``target``; the current state is irrelevant."""
    return target.sample(1, as_generator(rng))[0]


def finite_step(spec, state_index: int, rng) -> int:
    """Move from ``state_index`` according to row ``state_index`` of ``spec.Q``."""
    Q = np.asarray(getattr(spec, "Q", spec), dtype=float)
    if not 0 <= state_index < Q.shape[0]:
        raise IndexOutOfRange(f"state {state_index} outside [0, {Q.shape[0]})")
    cum = np.cumsum(Q[state_index])
    u = as_generator(rng).random()
    return int(np.count_nonzero(cum[:-1] <= u))


# -- batched loops --------------------------------------------------------------

_RWM_LOOPS = {}


def _rwm_loop_for(point):
    loop = _RWM_LOOPS.get(point)
    if loop is not None:
        return loop

    @njit
    def loop(X0, Z, U, step, scale, A, b):
        R, n, d = Z.shape
        out = np.empty((R, n, d))
        acc = np.zeros((R, n), dtype=np.bool_)
        for r in range(R):
            x = X0[r].copy()
            lp = scale * point(x, A, b)
            if np.isnan(lp):
                return out, acc, r, -1
            for t in range(n):
                y = x + step * Z[r, t]
                lq = scale * point(y, A, b)
                if np.isnan(lq):
                    return out, acc, r, t
                if lq > -np.inf and (lp == -np.inf or np.log(U[r, t]) < lq - lp):
                    x = y
                    lp = lq
                    acc[r, t] = True
                out[r, t] = x
        return out, acc, -1, -1

    _RWM_LOOPS[point] = loop
    return loop


def rwm_chains(target: LogDensity, X0, Z, U, step_size: float):
    """Random-walk Metropolis for ``R`` chains from pre-drawn noise.

    Parameters
    ----------
    X0 : (R, d) array of starting points.
    Z : (R, n, d) standard normal increments.
    U : (R, n) uniforms for the accept test.

    Returns
    -------
    states : (R, n, d) array, the chain after each of the ``n`` steps.
    accepted : (R, n) boolean array.
    """
    X0 = np.ascontiguousarray(X0, dtype=float)
    R, n, d = Z.shape
    if X0.shape != (R, d) or d != target.dim:
        raise DimensionMismatch(f"X0 shape {X0.shape} incompatible with noise shape {Z.shape}")
    if _accel.USE_NUMBA and target.point is not None:
        A, b = target.params
        out, acc, r, t = _rwm_loop_for(target.point)(X0, Z, U, float(step_size), float(target.scale), A, b)
        if r >= 0:
            raise NonFiniteDensity(f"{target.name} log-density is NaN in chain {r} at step {t}")
        return out, acc
    out = np.empty((R, n, d))
    acc = np.zeros((R, n), dtype=bool)
    X = X0.copy()
    lp = target(X)
    logU = np.log(U)
    for t in range(n):
        Y = X + step_size * Z[:, t]
        lq = target(Y)
        with np.errstate(invalid="ignore"):
            ok = (lq > -np.inf) & ((lp == -np.inf) | (logU[:, t] < lq - lp))
        X = np.where(ok[:, None], Y, X)
        lp = np.where(ok, lq, lp)
        out[:, t] = X
        acc[:, t] = ok
    return out, acc


@njit
def _imh_loop(lw_prop, U, lw0):
    n = lw_prop.shape[0]
    idx = np.empty(n, dtype=np.int64)
    acc = np.zeros(n, dtype=np.bool_)
    cur = -1
    lw = lw0
    for t in range(n):
        lq = lw_prop[t]
        if lq > -np.inf and (lw == -np.inf or np.log(U[t]) < lq - lw):
            cur = t
            lw = lq
            acc[t] = True
        idx[t] = cur
    return idx, acc


def imh_indices(lw_prop, U, lw0):
    """Independence-MH accept loop on precomputed log-weights ``log pi~ - log q``.

    Returns the index of the proposal held after each step (``-1`` while the
    chain still sits at its starting point) and the acceptance flags.
    """
    lw_prop = np.ascontiguousarray(lw_prop, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    if _accel.USE_NUMBA:
        return _imh_loop(lw_prop, U, float(lw0))
    n = lw_prop.shape[0]
    idx = np.empty(n, dtype=np.int64)
    acc = np.zeros(n, dtype=bool)
    cur, lw = -1, float(lw0)
    logU = np.log(U).tolist()
    for t, lq in enumerate(lw_prop.tolist()):
        if _mh_accept(logU[t], lq, lw):
            cur, lw = t, lq
            acc[t] = True
        idx[t] = cur
    return idx, acc


@njit
def _finite_loop(cum, S0, U):
    R, n = U.shape
    m = cum.shape[1]
    out = np.empty((R, n), dtype=np.int64)
    for r in range(R):
        s = S0[r]
        for t in range(n):
            u = U[r, t]
            j = 0
            while j < m - 1 and cum[s, j] <= u:
                j += 1
            s = j
            out[r, t] = s
    return out


def finite_chains(Q, S0, U):
    """Simulate ``R`` chains on ``{0..m-1}`` from pre-drawn uniforms ``U`` of shape (R, n)."""
    Q = np.asarray(Q, dtype=float)
    cum = np.ascontiguousarray(np.cumsum(Q, axis=1))
    S0 = np.ascontiguousarray(S0, dtype=np.int64)
    U = np.ascontiguousarray(U, dtype=float)
    if ((S0 < 0) | (S0 >= Q.shape[0])).any():
        raise IndexOutOfRange("initial state outside the state space")
    if _accel.USE_NUMBA:
        return _finite_loop(cum, S0, U)
    R, n = U.shape
    out = np.empty((R, n), dtype=np.int64)
    s = S0.copy()
    inner = cum[:, :-1]
    for t in range(n):
        s = np.count_nonzero(inner[s] <= U[:, t, None], axis=1)
        out[:, t] = s
    return out


# -- kernel objects -------------------------------------------------------------

class InstrumentalKernel:
    """Base class; ``target`` is the density the kernel leaves invariant."""

    target: LogDensity

    def step(self, x, rng):
        raise NotImplementedError

    def run_many(self, X0, n: int, rngs: Sequence):
        raise NotImplementedError

    def run(self, x0, n: int, rng):
        """Single trajectory of length ``n``; returns ``(states (n, d), accepted (n,))``."""
        x0 = np.asarray(x0, dtype=float).reshape(1, -1)
        states, acc = self.run_many(x0, n, [rng])
        return states[0], acc[0]


class RWMKernel(InstrumentalKernel):
    def __init__(self, target: LogDensity, step_size: float):
        if not step_size > 0:
            raise ValueError("step_size must be positive")
        self.target = target
        self.step_size = float(step_size)

    def step(self, x, rng):
        return rwm_step(self.target, x, self.step_size, rng)

    def run_many(self, X0, n, rngs):
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        d = self.target.dim
        gens = [as_generator(g) for g in rngs]
        Z = np.empty((len(gens), n, d))
        U = np.empty((len(gens), n))
        for r, g in enumerate(gens):
            Z[r] = g.standard_normal((n, d))
            U[r] = g.random(n)
        return rwm_chains(self.target, X0, Z, U, self.step_size)


class IndependentMHKernel(InstrumentalKernel):
    def __init__(self, target: LogDensity, proposal: LogDensity):
        if proposal.sampler is None:
            raise TypeError("independent MH needs a proposal with an exact sampler")
        if proposal.dim != target.dim:
            raise DimensionMismatch("proposal and target dimensions differ")
        self.target = target
        self.proposal = proposal

    def step(self, x, rng):
        return independent_mh_step(self.target, self.proposal, x, rng)

    def log_weights(self, Y):
        lq = self.proposal(Y)
        if (lq == -np.inf).any():
            raise DominationViolation("proposal sampler returned a point of zero proposal density")
        lt = self.target(Y)
        return np.where(lt == -np.inf, -np.inf, lt - lq)

    def run_many(self, X0, n, rngs):
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        out = np.empty((len(rngs), n, self.target.dim))
        acc = np.empty((len(rngs), n), dtype=bool)
        for r, g in enumerate(rngs):
            g = as_generator(g)
            Y = self.proposal.sample(n, g)
            U = g.random(n)
            lw0 = self.log_weights(X0[r:r + 1])[0] if self.target(X0[r]) > -np.inf else -np.inf
            idx, acc[r] = imh_indices(self.log_weights(Y), U, lw0)
            out[r] = np.where((idx >= 0)[:, None], Y[np.maximum(idx, 0)], X0[r])
        return out, acc


class IIDKernel(InstrumentalKernel):
    """``Q(x, .) = target``: every step is an exact independent draw."""

    def __init__(self, target: LogDensity):
        if target.sampler is None:
            raise TypeError("iid kernel needs a density with an exact sampler")
        self.target = target

    def step(self, x, rng):
        return iid_step(self.target, rng), True

    def run_many(self, X0, n, rngs):
        out = np.stack([self.target.sample(n, as_generator(g)) for g in rngs])
        return out, np.ones(out.shape[:2], dtype=bool)


class FiniteKernel(InstrumentalKernel):
    """Explicit stochastic matrix on ``{0..m-1}``; states are stored as 1-d float vectors."""

    def __init__(self, Q, pi_tilde=None):
        from .model import finite_density

        self.Q = np.asarray(Q, dtype=float)
        if self.Q.ndim != 2 or self.Q.shape[0] != self.Q.shape[1]:
            raise DimensionMismatch("Q must be square")
        if pi_tilde is None:
            from .oracle import stationary_exact

            pi_tilde = stationary_exact(self.Q)
        self.target = finite_density(pi_tilde)

    def step(self, x, rng):
        s = int(np.asarray(x).ravel()[0])
        j = finite_step(self.Q, s, rng)
        return np.array([float(j)]), j != s

    def run_many(self, X0, n, rngs):
        S0 = np.asarray(X0, dtype=float).reshape(len(rngs), -1)[:, 0].astype(np.int64)
        U = np.stack([as_generator(g).random(n) for g in rngs])
        S = finite_chains(self.Q, S0, U)
        return S[..., None].astype(float), np.concatenate([S[:, :1] != S0[:, None], S[:, 1:] != S[:, :-1]], axis=1)
