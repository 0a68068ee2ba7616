"""Exact finite-state checks of the importance Markov chain construction.

On a finite state space every object is a matrix: the instrumental kernel
``Q``, the replication law ``R~`` (one row per state), the rejection kernel
``S`` that jumps to the next point receiving at least one copy, and the
augmented kernel ``P`` on pairs ``(x, n)``. The functions here build them
densely and compare the invariant law of ``P`` with its closed form.

Augmented states are flattened as ``x * (n_max + 1) + n``.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (DimensionMismatch, InvalidSpec, NonConvergence, SingularSystem,
                     SupportTooSmall, ZeroAcceptance)
from .replication import OPTIMAL, ReplicationLaw
from .rng import RandomSource

MAX_AUGMENTED = 2000


@dataclass(frozen=True, eq=False)
class FiniteChainSpec:
    Q: np.ndarray
    pi: np.ndarray
    pi_tilde: np.ndarray
    R_tilde: np.ndarray
    kappa: float

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def n_max(self) -> int:
        return self.R_tilde.shape[1] - 1

    @property
    def size(self) -> int:
        return self.m * (self.n_max + 1)

    @property
    def rho_R(self):
        """Probability of at least one copy, ``R~(x, [1, inf))``."""
        return self.R_tilde[:, 1:].sum(axis=1)

    @property
    def ratio(self):
        """``pi / pi~`` (zero where both vanish)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.pi_tilde > 0, self.pi / self.pi_tilde, 0.0)

    def validate(self, row_tol=1e-12, inv_tol=1e-10):
        Q, R = self.Q, self.R_tilde
        m = Q.shape[0]
        if Q.shape != (m, m) or self.pi.shape != (m,) or self.pi_tilde.shape != (m,) or R.shape[0] != m:
            raise DimensionMismatch("inconsistent shapes in FiniteChainSpec")
        if self.size > MAX_AUGMENTED:
            raise InvalidSpec(f"augmented space has {self.size} states, limit is {MAX_AUGMENTED}")
        if (Q < 0).any() or np.abs(Q.sum(axis=1) - 1).max() > row_tol:
            raise InvalidSpec("Q is not row-stochastic")
        for name, v in (("pi", self.pi), ("pi_tilde", self.pi_tilde)):
            if (v < 0).any() or abs(v.sum() - 1) > row_tol:
                raise InvalidSpec(f"{name} is not a probability vector")
        if np.abs(self.pi_tilde @ Q - self.pi_tilde).max() > inv_tol:
            raise InvalidSpec("pi_tilde is not invariant for Q")
        if ((self.pi > 0) & (self.pi_tilde == 0)).any():
            raise InvalidSpec("pi is not dominated by pi_tilde")
        if (R < 0).any() or np.abs(R.sum(axis=1) - 1).max() > row_tol:
            raise InvalidSpec("R_tilde rows are not probability vectors")
        means = R @ np.arange(R.shape[1])
        if np.abs(means - self.kappa * self.ratio).max() > inv_tol:
            raise InvalidSpec("R_tilde means differ from kappa * pi / pi_tilde")
        return self


def spec_from_densities(Q, pi, pi_tilde, kappa=1.0, n_max=None, law: ReplicationLaw = OPTIMAL):
    """Build a spec whose replication rows are ``law``'s pmf at ``kappa * pi / pi~``."""
    Q = np.asarray(Q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    pi_tilde = np.asarray(pi_tilde, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = kappa * np.where(pi_tilde > 0, pi / pi_tilde, 0.0)
    need = int(np.ceil(rho.max() - 1e-12))
    if n_max is None:
        n_max = max(need, 1)
    if n_max < need:
        raise SupportTooSmall(f"n_max={n_max} but weights reach {rho.max():.6g}")
    R = np.stack([law.pmf(r, n_max) for r in rho])
    return FiniteChainSpec(Q, pi, pi_tilde, R, float(kappa)).validate()


def metropolis_walk(pi_tilde, move_prob):
    """Nearest-neighbour Metropolis kernel on ``{0..m-1}`` reversible for ``pi_tilde``.

    From ``i`` the walk proposes ``i - 1`` and ``i + 1`` with probability
    ``move_prob / 2`` each; proposals off the ends are rejected.
    """
    pi_tilde = np.asarray(pi_tilde, dtype=float)
    m = pi_tilde.size
    Q = np.zeros((m, m))
    for i in range(m):
        for j in (i - 1, i + 1):
            if 0 <= j < m:
                Q[i, j] = 0.5 * move_prob * min(1.0, pi_tilde[j] / pi_tilde[i])
        Q[i, i] = 1.0 - Q[i].sum()
    return Q


def make_random_spec(m: int, n_max: int, seed: int, kappa=None, identical=False) -> FiniteChainSpec:
    """Random valid spec with full-support densities and optimal replication rows.

    The weight ratio ``pi / pi~`` is kept within a factor of about six so the
    acceptance probability stays away from zero, and the walk is lazy (moves
    with probability at most 0.25) so total-variation distances stay above
    round-off for the first hundred or so steps. Without an explicit
    ``kappa`` one is drawn so that the largest weight fits in ``n_max``.
    With ``identical=True`` the target equals the instrumental law.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    g = RandomSource(seed).generator()
    pi_tilde = g.uniform(0.5, 1.5, m)
    pi_tilde /= pi_tilde.sum()
    if identical:
        pi = pi_tilde.copy()
    else:
        pi = pi_tilde * g.uniform(0.4, 2.5, m)
        pi /= pi.sum()
    Q = metropolis_walk(pi_tilde, g.uniform(0.05, 0.25))
    ratio = pi / pi_tilde
    if kappa is None:
        kappa = 1.0 if identical else g.uniform(0.5, 1.0) * n_max / ratio.max()
    return spec_from_densities(Q, pi, pi_tilde, kappa, n_max)


def make_reducible_spec(m: int = 2, n_max: int = 1) -> FiniteChainSpec:
    """A spec with ``Q = I``: every state is absorbing, so ``P`` has no unique invariant law."""
    p = np.full(m, 1.0 / m)
    return spec_from_densities(np.eye(m), p, p, 1.0, n_max)


def stationary_exact(Q):
    """Invariant vector of an irreducible stochastic matrix by a linear solve."""
    Q = np.asarray(Q, dtype=float)
    m = Q.shape[0]
    A = np.vstack([(np.eye(m) - Q).T, np.ones(m)])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    v, *_ = np.linalg.lstsq(A, b, rcond=None)
    return v


def s_matrix(spec: FiniteChainSpec):
    """Rejection kernel ``S = (I - Q D(1 - rho))^{-1} Q D(rho)``."""
    rho = spec.rho_R
    A = np.eye(spec.m) - spec.Q * (1.0 - rho)[None, :]
    try:
        if np.linalg.cond(A) > 1e12:
            raise SingularSystem("I - Q D(1 - rho) is singular: some class never accepts")
        return np.linalg.solve(A, spec.Q * rho[None, :])
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def _countdown_part(spec: FiniteChainSpec):
    # rows n >= 1 move deterministically to (x, n - 1)
    k = spec.n_max + 1
    P = np.zeros((spec.size, spec.size))
    for x in range(spec.m):
        for n in range(1, k):
            P[x * k + n, x * k + n - 1] = 1.0
    return P, k


def p_matrix(spec: FiniteChainSpec):
    """Augmented kernel on ``(x, n)`` assembled from ``S`` and the residual-count law."""
    S = s_matrix(spec)
    rho = spec.rho_R
    P, k = _countdown_part(spec)
    reach = (S > 0).any(axis=0)
    if (reach & (rho <= 0)).any():
        raise ZeroAcceptance("S reaches a state that never receives a copy")
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(rho[:, None] > 0, spec.R_tilde[:, 1:] / rho[:, None], 0.0)
    for x in range(spec.m):
        for xp in range(spec.m):
            P[x * k, xp * k: xp * k + k - 1] = S[x, xp] * R[xp]
    return P


def p_matrix_first_hitting(spec: FiniteChainSpec, K: int = 500):
    """Augmented kernel from the direct sum over the first step that keeps a copy.

    ``P((x,0), (x', l-1)) = sum_{k=1..K} [(Q D0)^(k-1) Q](x, x') R~(x', l)``
    with ``D0 = diag(R~(., 0))``, truncated after ``K`` terms.
    """
    T = spec.Q * spec.R_tilde[:, 0][None, :]
    term = spec.Q.copy()
    total = np.zeros_like(term)
    for _ in range(K):
        total += term
        term = T @ term
    P, k = _countdown_part(spec)
    for x in range(spec.m):
        for xp in range(spec.m):
            P[x * k, xp * k: xp * k + k - 1] = total[x, xp] * spec.R_tilde[xp, 1:]
    return P


def bar_pi_closed_form(spec: FiniteChainSpec):
    """``pibar(x, k) = pi~(x) R~(x, (k, inf)) / kappa``, flattened."""
    R = spec.R_tilde
    tail = R[:, ::-1].cumsum(axis=1)[:, ::-1]  # tail[x, n] = R(x, [n, inf))
    above = np.zeros_like(R)
    above[:, :-1] = tail[:, 1:]
    return (spec.pi_tilde[:, None] * above / spec.kappa).ravel()


def first_marginal(bar_pi, spec: FiniteChainSpec):
    return np.asarray(bar_pi).reshape(spec.m, spec.n_max + 1).sum(axis=1)


class StationaryResult(NamedTuple):
    pi: np.ndarray
    second_modulus: float
    iterations: int


def stationary(P, tol=1e-13, max_iter=200_000, gap_tol=1e-8) -> StationaryResult:
    """Invariant law of ``P`` by power iteration from the uniform vector.

    Raises NonConvergence when the unit eigenvalue is not the only one on the
    unit circle (reducible or periodic ``P``) or when the iteration cap is hit.
    """
    P = np.asarray(P, dtype=float)
    mods = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    second = float(mods[1]) if len(mods) > 1 else 0.0
    if second > 1.0 - gap_tol:
        raise NonConvergence(f"second eigenvalue modulus {second:.12g}: invariant law not unique "
                             "or chain periodic")
    v = np.full(P.shape[0], 1.0 / P.shape[0])
    for it in range(1, max_iter + 1):
        w = v @ P
        w /= w.sum()
        if np.abs(w - v).sum() < tol:
            return StationaryResult(w, second, it)
        v = w
    raise NonConvergence(f"power iteration did not reach {tol:g} in {max_iter} iterations")


def tv_decay(P, xi0, bar_pi, K: int):
    """``0.5 * |xi0 P^k - bar_pi|_1`` for ``k = 1..K``."""
    P = np.asarray(P, dtype=float)
    v = np.asarray(xi0, dtype=float)
    bar_pi = np.asarray(bar_pi, dtype=float)
    if v.shape != bar_pi.shape or P.shape != (v.size, v.size):
        raise DimensionMismatch("P, xi0 and bar_pi sizes disagree")
    out = np.empty(K)
    for k in range(K):
        v = v @ P
        out[k] = 0.5 * np.abs(v - bar_pi).sum()
    return out


def log_linear_fit(tv, last: int = 30):
    """Slope and max absolute residual of a least-squares line through ``log tv`` (last points)."""
    y = np.log(np.asarray(tv, dtype=float)[-last:])
    k = np.arange(len(tv))[-last:] + 1.0
    if not np.isfinite(y).all():
        return float("nan"), float("inf")
    coef = np.polyfit(k, y, 1)
    resid = y - np.polyval(coef, k)
    return float(coef[0]), float(np.abs(resid).max())


DEFAULT_TOLERANCES = {
    "s_invariance": 1e-10,
    "invariance": 1e-10,
    "marginal": 1e-10,
    "representations": 1e-12,
    "uniqueness": 1e-10,
    "tv_slope": -1e-3,
    "tv_residual": 0.5,
}


def _check(value, tol, ok):
    return {"pass": bool(ok), "value": float(value), "tol": tol}


def verify_spec(spec: FiniteChainSpec, tolerances=None, tv_lags: int = 60, tv_window: int = 30) -> dict:
    """Run every invariant on one spec and return a JSON-ready report."""
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    checks = {}

    def guarded(name, fn):
        try:
            checks[name] = fn()
        except Exception as exc:  # reported, not raised
            checks[name] = {"pass": False, "error": f"{type(exc).__name__}: {exc}"}

    def s_invariance():
        S = s_matrix(spec)
        nu = spec.rho_R * spec.pi_tilde
        nu /= nu.sum()
        err = np.abs(nu @ S - nu).sum()
        return _check(err, tol["s_invariance"], err <= tol["s_invariance"])

    bar_pi = bar_pi_closed_form(spec)
    state = {}

    def build_p():
        state["P"] = p_matrix(spec)
        err = np.abs(state["P"].sum(axis=1) - 1).max()
        return _check(err, 1e-12, err <= 1e-12)

    def representations():
        err = np.abs(state["P"] - p_matrix_first_hitting(spec)).max()
        return _check(err, tol["representations"], err <= tol["representations"])

    def invariance():
        err = np.abs(bar_pi @ state["P"] - bar_pi).sum()
        return _check(err, tol["invariance"], err <= tol["invariance"])

    def marginal():
        err = np.abs(first_marginal(bar_pi, spec) - spec.pi).sum()
        return _check(err, tol["marginal"], err <= tol["marginal"])

    def uniqueness():
        res = stationary(state["P"])
        err = np.abs(res.pi - bar_pi).sum()
        out = _check(err, tol["uniqueness"], err <= tol["uniqueness"])
        out["second_modulus"] = res.second_modulus
        return out

    def geometric():
        xi0 = np.zeros(spec.size)
        xi0[0] = 1.0
        tv = tv_decay(state["P"], xi0, bar_pi, tv_lags)
        slope, resid = log_linear_fit(tv, tv_window)
        ok = slope < tol["tv_slope"] and resid <= tol["tv_residual"]
        return {"pass": bool(ok), "slope": slope, "max_residual": resid,
                "tol": {"slope": tol["tv_slope"], "residual": tol["tv_residual"]}}

    guarded("s_invariance", s_invariance)
    guarded("p_row_sums", build_p)
    if "P" in state:
        guarded("representations_agree", representations)
        guarded("invariance", invariance)
        guarded("uniqueness", uniqueness)
        guarded("geometric_decay", geometric)
    guarded("marginal", marginal)
    return {
        "m": spec.m,
        "n_max": spec.n_max,
        "kappa": spec.kappa,
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
    }
