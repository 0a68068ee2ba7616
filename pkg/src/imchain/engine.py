"""The importance Markov chain itself.

The instrumental chain is run once; each visited point gets an integer number
of copies drawn from a replication law whose mean is the importance weight.
The result is kept in run-length form ``(points, counts)``; :func:`expand`
unrolls it into the augmented chain ``(X_l, N_l)`` where ``N_l`` counts down
the copies still to come.
"""
import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import AllZeroWeights, DimensionMismatch, EmptyChain, NonFiniteWeight
from .kernels import InstrumentalKernel
from .model import WeightFunction, log_ratio
from .replication import OPTIMAL, PseudoMarginalLaw, ReplicationLaw
from .rng import as_generator


@dataclass
class RunLengthSample:
    """Instrumental points, their copy counts, and their kappa-free log-weights."""

    points: np.ndarray
    counts: np.ndarray
    log_weights: np.ndarray
    kappa: float = 1.0
    accepted: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        n = len(self.points)
        if len(self.counts) != n or len(self.log_weights) != n:
            raise DimensionMismatch("points, counts and weights must have equal length")
        if (self.counts < 0).any():
            raise ValueError("counts must be nonnegative")

    def __len__(self):
        return len(self.points)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    @property
    def dim(self):
        return self.points.shape[1]


class AugmentedState(NamedTuple):
    x: np.ndarray
    n: int


def run_semi_markov(kernel: InstrumentalKernel, law: ReplicationLaw, wf: WeightFunction, x0,
                    n_steps: int, burn_in: int = 0, rng=None, alpha: Optional[float] = None
                    ) -> RunLengthSample:
    """Run the instrumental chain and draw a copy count for every point.

    Parameters
    ----------
    kernel : instrumental kernel; its invariant density should be
        ``wf.log_instrumental``.
    law : replication law applied to ``kappa * rho_U(x)``.
    wf : weight function; its ``kappa`` is used unless ``alpha`` is given.
    x0 : starting point (not recorded).
    n_steps, burn_in : recorded and discarded instrumental steps.
    rng : Generator, RandomSource or int seed. Kernel noise is drawn first,
        then estimator noise (pseudo-marginal law only), then the counts.
    alpha : when set, kappa is tuned so the expected expanded length is
        ``alpha * n_steps``.

    Returns
    -------
    RunLengthSample
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    return run_semi_markov_many(kernel, law, wf, x0[None, :], n_steps, burn_in, [rng], alpha)[0]


def run_semi_markov_many(kernel: InstrumentalKernel, law: ReplicationLaw, wf: WeightFunction, X0,
                         n_steps: int, burn_in: int = 0, rngs=(), alpha: Optional[float] = None):
    """Independent replications of :func:`run_semi_markov`, one generator per chain.

    The instrumental chains are advanced by a single ``kernel.run_many`` call.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[1] != wf.dim or len(X0) != len(rngs):
        raise DimensionMismatch(f"X0 has shape {X0.shape}; expected ({len(rngs)}, {wf.dim})")
    gens = [as_generator(r) for r in rngs]
    states, acc = kernel.run_many(X0, burn_in + n_steps, gens)
    out = []
    for r, g in enumerate(gens):
        points = states[r, burn_in:]
        li = wf.log_instrumental(points)
        if isinstance(law, PseudoMarginalLaw):
            logw = law.log_weights(points, li, g)
            draw_law = OPTIMAL
        else:
            logw = log_ratio(wf.log_target(points), li)
            draw_law = law
        kappa = wf.kappa if alpha is None else tune_kappa_log(logw, alpha)
        with np.errstate(over="ignore"):
            rho = np.exp(np.log(kappa) + logw)
        if not np.isfinite(rho).all():
            i = int(np.flatnonzero(~np.isfinite(rho))[0])
            raise NonFiniteWeight(f"weight overflow ({logw[i]} in log space)", step=i)
        counts = draw_law.draw(rho, g)
        out.append(RunLengthSample(points, counts, logw, kappa, acc[r, burn_in:]))
    return out


def expand(sample: RunLengthSample) -> Iterator[AugmentedState]:
    """Lazily unroll into ``(X_l, N_l)``; zero-count points are skipped."""
    for x, c in zip(sample.points, sample.counts):
        for k in range(int(c) - 1, -1, -1):
            yield AugmentedState(x, k)


def expand_arrays(sample: RunLengthSample):
    """Eager version of :func:`expand` returning ``(X, N)`` arrays."""
    c = sample.counts
    X = np.repeat(sample.points, c, axis=0)
    starts = np.cumsum(c) - c
    pos = np.arange(c.sum()) - np.repeat(starts, c)
    N = np.repeat(c, c) - 1 - pos
    return X, N


def tune_kappa(weights, alpha: float) -> float:
    """``alpha * n / sum(weights)``, for weights in the kappa = 1 convention."""
    w = np.asarray(weights, dtype=float)
    tot = w.sum()
    if not tot > 0:
        raise AllZeroWeights("cannot tune kappa: all weights are zero")
    return float(alpha * len(w) / tot)


def tune_kappa_log(log_weights, alpha: float) -> float:
    """:func:`tune_kappa` computed from log-weights without overflow."""
    lw = np.asarray(log_weights, dtype=float)
    if not (lw > -np.inf).any():
        raise AllZeroWeights("cannot tune kappa: all weights are zero")
    return float(np.exp(np.log(alpha * len(lw)) - logsumexp(lw)))


def _eval_h(h, points):
    vals = np.asarray(h(points), dtype=float)
    if vals.shape[0] != len(points):
        raise DimensionMismatch("h must map an (n, d) array to n values (or n rows)")
    return vals


def estimate_imc(sample: RunLengthSample, h):
    """Average of ``h`` over the expanded chain and its length.

    ``h`` receives the ``(n, d)`` array of instrumental points and returns one
    value (or one row of values) per point.
    """
    k = sample.total_count
    if k == 0:
        raise EmptyChain("all replication counts are zero")
    vals = _eval_h(h, sample.points)
    c = sample.counts.reshape((-1,) + (1,) * (vals.ndim - 1))
    return (c * vals).sum(axis=0) / k, k


def estimate_is(sample: RunLengthSample, h):
    """Self-normalised importance-sampling estimate from the stored weights."""
    lw = sample.log_weights
    if not (lw > -np.inf).any():
        raise AllZeroWeights("all importance weights are zero")
    w = np.exp(lw - lw.max())
    vals = _eval_h(h, sample.points)
    w = w.reshape((-1,) + (1,) * (vals.ndim - 1))
    return (w * vals).sum(axis=0) / w.sum()


# -- serialisation --------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def dumps_sample(sample: RunLengthSample, metadata: dict) -> str:
    """CSV text: a ``# {json}`` metadata line, a header, one row per point."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(metadata, sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "count", "weight"] + [f"x_{j + 1}" for j in range(sample.dim)])
    weights = sample.weights
    for i in range(len(sample)):
        w.writerow([i, int(sample.counts[i]), _fmt(weights[i])] + [_fmt(v) for v in sample.points[i]])
    return buf.getvalue()


def write_sample_csv(sample: RunLengthSample, path, metadata: dict):
    with open(path, "w", newline="") as f:
        f.write(dumps_sample(sample, metadata))


def read_sample_csv(path):
    """Inverse of :func:`write_sample_csv`; returns ``(sample, metadata)``."""
    with open(path, newline="") as f:
        first = f.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing metadata line")
        meta = json.loads(first[2:])
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    d = len(header) - 3
    arr = np.array(body, dtype=float).reshape(-1, 3 + d)
    with np.errstate(divide="ignore"):
        logw = np.log(arr[:, 2])
    sample = RunLengthSample(arr[:, 3:], arr[:, 1].astype(np.int64), logw,
                             kappa=float(meta.get("kappa", 1.0)), meta=meta)
    return sample, meta
