"""Configuration-driven experiment drivers shared by the CLI and the test suite.

A configuration is a plain dict (usually parsed from JSON). :func:`resolve_config`
validates it, fills defaults and returns a new dict; every output file embeds
that resolved dict, so re-running it reproduces the outputs byte for byte.

Random streams: replication ``r`` of a run uses ``RandomSource(seed, r)``.
Within one replication the draw order is the starting point (when random),
then the kernel noise, then estimator noise, then the copy counts.
"""
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as _k
from .diagnostics import DiagnosticsReport, ess_is_log, ess_kappa, kappa_scan
from .engine import run_semi_markov_many, tune_kappa_log
from .errors import ConfigError
from .model import LogDensity, WeightFunction, finite_density, gaussian_mixture, log_ratio, ring_bimodal, tempered
from .replication import (LAWS, OPTIMAL, OSR, LogNormalEstimator, PseudoMarginalLaw,
                          TwoPointEstimator)
from .rng import RandomSource

DEFAULTS = {
    "law": {"name": "optimal"},
    "kappa": {"fixed": 1.0},
    "n_steps": 1000,
    "burn_in": 0,
    "replications": 1,
    "seed": 0,
}


# -- registries -----------------------------------------------------------------

def _need(cfg, key, path):
    if key not in cfg:
        raise ConfigError(f"missing field '{key}'", f"{path}.{key}")
    return cfg[key]


def _build_gaussian_mixture(cfg, path):
    means = np.asarray(_need(cfg, "means", path), dtype=float)
    dim = int(cfg.get("dim", means.shape[-1] if means.ndim == 2 else 0))
    return gaussian_mixture(dim, means, float(cfg.get("scale", 1.0)))


def _build_hypercube_mixture(cfg, path):
    dim = int(_need(cfg, "dim", path))
    amp = float(cfg.get("amplitude", 2.0 / math.sqrt(dim)))
    signs = np.array(list(itertools.product([-1.0, 1.0], repeat=dim)))
    return gaussian_mixture(dim, amp * signs, float(cfg.get("scale", 1.0)))


def _build_ring(cfg, path):
    return ring_bimodal(int(_need(cfg, "dim", path)))


def _build_finite(cfg, path):
    return finite_density(_need(cfg, "p", path))


DENSITIES = {
    "gaussian_mixture": _build_gaussian_mixture,
    "hypercube_mixture": _build_hypercube_mixture,
    "ring_bimodal": _build_ring,
    "finite": _build_finite,
}


def build_density(cfg, path="target") -> LogDensity:
    if not isinstance(cfg, dict):
        raise ConfigError("density spec must be an object", path)
    name = _need(cfg, "name", path)
    if name not in DENSITIES:
        raise ConfigError(f"unknown density '{name}'; known: {sorted(DENSITIES)}", f"{path}.name")
    try:
        return DENSITIES[name](cfg, path)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from exc


def build_instrumental(cfg, target: LogDensity) -> LogDensity:
    inst = cfg.get("instrumental")
    if inst is None:
        return target
    if not isinstance(inst, dict) or ("beta" in inst) == ("density" in inst):
        raise ConfigError("instrumental needs exactly one of 'beta' or 'density'", "instrumental")
    if "beta" in inst:
        try:
            return tempered(target, float(inst["beta"]))
        except ValueError as exc:
            raise ConfigError(str(exc), "instrumental.beta") from exc
    d = build_density(inst["density"], "instrumental.density")
    if d.dim != target.dim:
        raise ConfigError(f"dimension {d.dim} differs from the target's {target.dim}", "instrumental.density")
    return d


def build_kernel(cfg, instrumental: LogDensity):
    kc = cfg.get("kernel", {"name": "rwm"})
    name = _need(kc, "name", "kernel")
    if name == "rwm":
        step = kc.get("step_size", "auto")
        if step == "auto":
            # 2.38 / sqrt(d), widened by the tempering exponent
            step = 2.38 / math.sqrt(instrumental.dim * instrumental.scale)
        if not float(step) > 0:
            raise ConfigError("step_size must be positive", "kernel.step_size")
        return _k.RWMKernel(instrumental, float(step))
    if name == "iid":
        if instrumental.sampler is None:
            raise ConfigError("iid kernel needs an instrumental density with an exact sampler", "kernel.name")
        return _k.IIDKernel(instrumental)
    if name == "imh":
        prop = build_density(_need(kc, "proposal", "kernel"), "kernel.proposal")
        if prop.sampler is None:
            raise ConfigError("the proposal needs an exact sampler", "kernel.proposal")
        return _k.IndependentMHKernel(instrumental, prop)
    if name == "finite":
        if instrumental.name != "finite":
            raise ConfigError("the finite kernel needs a finite instrumental density", "kernel.name")
        pi_tilde = np.exp(instrumental.params[1])
        try:
            return _k.FiniteKernel(_need(kc, "Q", "kernel"), pi_tilde / pi_tilde.sum())
        except ValueError as exc:
            raise ConfigError(str(exc), "kernel.Q") from exc
    raise ConfigError(f"unknown kernel '{name}'; known: ['finite', 'iid', 'imh', 'rwm']", "kernel.name")


def build_law(cfg, target: LogDensity):
    lc = cfg.get("law", DEFAULTS["law"])
    name = _need(lc, "name", "law")
    if name in LAWS:
        return LAWS[name]
    if name == "pseudo_marginal":
        est = lc.get("estimator", "two_point")
        if est == "two_point":
            return PseudoMarginalLaw(TwoPointEstimator(target, float(lc.get("low", 0.5)), float(lc.get("high", 1.5))))
        if est == "lognormal":
            return PseudoMarginalLaw(LogNormalEstimator(target, float(_need(lc, "sigma", "law"))))
        raise ConfigError(f"unknown estimator '{est}'", "law.estimator")
    raise ConfigError(f"unknown law '{name}'; known: {sorted(LAWS) + ['pseudo_marginal']}", "law.name")


def resolve_config(cfg: dict, seed=None) -> dict:
    """Validate ``cfg``, fill defaults, and apply a seed override."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object", "")
    out = {**DEFAULTS, **cfg}
    if seed is not None:
        out["seed"] = int(seed)
    _need(out, "target", "")
    kp = out["kappa"]
    if not isinstance(kp, dict) or len(kp) != 1 or next(iter(kp)) not in ("fixed", "tuned"):
        raise ConfigError("kappa needs exactly one of 'fixed' or 'tuned'", "kappa")
    if not float(next(iter(kp.values()))) > 0:
        raise ConfigError("kappa value must be positive", "kappa")
    for key in ("n_steps", "replications"):
        if int(out[key]) < 1:
            raise ConfigError(f"{key} must be >= 1", key)
    if int(out["burn_in"]) < 0:
        raise ConfigError("burn_in must be >= 0", "burn_in")
    if not 0 <= int(out["seed"]) < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
    # resolve every name now so errors carry their path
    target = build_density(out["target"])
    inst = build_instrumental(out, target)
    build_kernel(out, inst)
    build_law(out, target)
    return out


@dataclass
class Experiment:
    """Built components of a resolved configuration."""

    config: dict
    target: LogDensity
    instrumental: LogDensity
    kernel: object
    law: object

    @classmethod
    def from_config(cls, cfg, seed=None):
        cfg = resolve_config(cfg, seed)
        target = build_density(cfg["target"])
        inst = build_instrumental(cfg, target)
        return cls(cfg, target, inst, build_kernel(cfg, inst), build_law(cfg, target))

    @property
    def seed(self):
        return int(self.config["seed"])

    def weight_function(self):
        kp = self.config["kappa"]
        return WeightFunction(float(kp.get("fixed", 1.0)), self.target, self.instrumental)

    def alpha(self):
        kp = self.config["kappa"]
        return float(kp["tuned"]) if "tuned" in kp else None

    def starting_points(self, gens):
        x0 = self.config.get("x0")
        d = self.target.dim
        if x0 is None:
            return np.zeros((len(gens), d))
        if isinstance(x0, dict):
            sd = float(_need(x0, "normal_sd", "x0"))
            return np.stack([g.normal(0.0, sd, d) for g in gens])
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != d:
            raise ConfigError(f"x0 has {x0.size} entries, dimension is {d}", "x0")
        return np.tile(x0, (len(gens), 1))

    def run(self, replications=None, threads: int = 1, first: int = 0):
        """Samples for replications ``first .. first + replications - 1``."""
        reps = int(self.config["replications"]) if replications is None else int(replications)
        ids = list(range(first, first + reps))
        chunks = _chunks(ids, threads)

        def work(chunk):
            gens = [RandomSource(self.seed, r).generator() for r in chunk]
            X0 = self.starting_points(gens)
            return run_semi_markov_many(self.kernel, self.law, self.weight_function(), X0,
                                        int(self.config["n_steps"]), int(self.config["burn_in"]),
                                        gens, self.alpha())

        parts = fan_out(work, chunks, threads)
        return reorder([s for part in parts for s in part], chunks)


def _chunks(items, threads):
    k = max(1, min(int(threads), len(items)))
    return [items[i::k] for i in range(k)] if k > 1 else [items]


def fan_out(fn, items, threads: int = 1):
    """``[fn(i) for i in items]``, run on a thread pool when ``threads > 1``.

    The jitted loops release the GIL, so chains in different chunks run in
    parallel. Results come back in input order.
    """
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(int(threads)) as pool:
            out = list(pool.map(fn, items))
    else:
        out = [fn(i) for i in items]
    return out


def reorder(samples, chunks):
    """Undo the strided split made by :func:`_chunks`."""
    ids = [i for c in chunks for i in c]
    return [s for _, s in sorted(zip(ids, samples), key=lambda t: t[0])]


def diagnostics(sample) -> DiagnosticsReport:
    k = sample.total_count
    return DiagnosticsReport(
        ess_kappa=ess_kappa(sample.counts) if k > 0 else 0.0,
        ess_is=ess_is_log(sample.log_weights),
        chain_length=k,
        kappa=float(sample.kappa),
        extra={"n_points": len(sample), "positive_copies": int((sample.counts > 0).sum()),
               "acceptance_rate": float(np.mean(sample.accepted)) if sample.accepted is not None else None},
    )


# -- tempering study ----------------------------------------------------------------

FOUR_MODES = [[5.0, 5.0], [5.0, -5.0], [-5.0, 5.0], [-5.0, -5.0]]


def tempering_config(beta, n_steps=5000, burn_in=500, replications=200, seed=7, means=None):
    """RWM on ``target ** beta`` for a fixed-mean mixture, kappa tuned to alpha = 1."""
    means = FOUR_MODES if means is None else means
    return {
        "target": {"name": "gaussian_mixture", "means": means, "scale": 1.0},
        "instrumental": {"beta": beta},
        "kernel": {"name": "rwm", "step_size": "auto"},
        "law": {"name": "optimal"},
        "kappa": {"tuned": 1.0},
        "n_steps": n_steps, "burn_in": burn_in, "replications": replications, "seed": seed,
        "x0": {"normal_sd": 10.0},
    }


def tempering_study(betas=(0.04, 0.1, 0.25, 1.0), threads: int = 1, **kw):
    """MSE of the IMC estimate of the mean (true value: the mean of the means) per beta.

    Returns ``{beta: mse}``; the MSE sums the squared error over coordinates.
    """
    out = {}
    for beta in betas:
        cfg = tempering_config(beta, **kw)
        exp = Experiment.from_config(cfg)
        truth = np.mean(np.asarray(cfg["target"]["means"], dtype=float), axis=0)
        ests = []
        for s in exp.run(threads=threads):
            c = s.counts
            ests.append((c[:, None] * s.points).sum(axis=0) / c.sum())
        err = np.asarray(ests) - truth
        out[float(beta)] = float(np.mean((err**2).sum(axis=1)))
    return out


# -- independent-proposal bench ---------------------------------------------------

@dataclass
class BenchResult:
    method: str
    mse: dict
    ess: dict
    positive_copies: float
    n_steps: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.positive_copies > self.n_steps:
            raise ValueError("positive-copy count cannot exceed n_steps")

    def to_dict(self):
        return asdict(self)


def bench_config(dim=5, n_steps=30_000, replications=30, seed=11, scale=0.3):
    """Ring target against an analytic hypercube-mixture instrumental."""
    return {
        "target": {"name": "ring_bimodal", "dim": dim},
        "instrumental": {"density": {"name": "hypercube_mixture", "dim": dim, "scale": scale}},
        "kernel": {"name": "iid"},
        "law": {"name": "optimal"},
        "kappa": {"tuned": 1.0},
        "n_steps": n_steps, "burn_in": 0, "replications": replications, "seed": seed,
        "moments": [1, 3, 5, 7],
    }


def _odd_symmetric(tc):
    """True when the target is symmetric under ``x_1 -> -x_1``."""
    if tc["name"] in ("ring_bimodal", "hypercube_mixture"):
        return True
    if tc["name"] != "gaussian_mixture":
        return False
    m = np.asarray(tc["means"], dtype=float)
    flip = m * np.r_[-1.0, np.ones(m.shape[1] - 1)]
    return sorted(map(tuple, m)) == sorted(map(tuple, flip))


def bench_truth(cfg):
    moments = cfg.get("moments", [1, 3, 5, 7])
    if "truth" in cfg:
        t = np.asarray(cfg["truth"], dtype=float)
        if t.shape != (len(moments),):
            raise ConfigError("truth needs one value per moment", "truth")
        return t
    if all(p % 2 == 1 for p in moments) and _odd_symmetric(cfg["target"]):
        return np.zeros(len(moments))
    raise ConfigError("true moment values are required for this target", "truth")


def _bench_one(lt_fn, inst, moments, n, alpha, src: RandomSource):
    g = src.generator()
    Y = inst.sample(n, g)
    lw = log_ratio(lt_fn(Y), inst(Y))
    powers = Y[:, :1] ** np.asarray(moments)[None, :]
    out = {}
    # IMC, optimal law, kappa tuned on this draw
    kappa = tune_kappa_log(lw, alpha)
    c = OPTIMAL.draw(np.exp(np.log(kappa) + lw), g)
    out["imc"] = (c @ powers / c.sum(), {"ess_kappa": ess_kappa(c)}, int((c > 0).sum()))
    # self-normalised IS
    w = np.exp(lw - lw.max())
    out["is"] = (w @ powers / w.sum(), {"ess_is": ess_is_log(lw)}, int((w > 0).sum()))
    # independence MH on the same proposals, started at the first one
    U = g.random(n)
    idx, acc = _k.imh_indices(lw[1:], U[1:], lw[0])
    states = np.concatenate([[0], np.where(idx >= 0, idx + 1, 0)])
    out["imh"] = (powers[states].mean(axis=0), {"acceptance_rate": float(acc.mean())},
                  int(np.unique(states).size))
    # OSR counts at the same kappa
    co = OSR.draw(np.exp(np.log(kappa) + lw), g)
    tot = co.sum()
    est = co @ powers / tot if tot > 0 else np.full(len(moments), np.nan)
    out["osr"] = (est, {"ess_kappa": ess_kappa(co) if tot > 0 else 0.0}, int((co > 0).sum()))
    return out


def bench(cfg, threads: int = 1, seed=None):
    """IMC, IS, independence MH and OSR on identical iid instrumental draws.

    Each replication draws ``n_steps`` points from the instrumental density
    once and feeds them to all four methods. Returns a list of
    :class:`BenchResult`, one per method, with MSEs over replications of the
    moments of the first coordinate.
    """
    cfg = resolve_config(cfg, seed)
    if cfg.get("kernel", {}).get("name") != "iid":
        raise ConfigError("bench needs the iid kernel with an analytic instrumental", "kernel.name")
    target = build_density(cfg["target"])
    inst = build_instrumental(cfg, target)
    if inst.sampler is None:
        raise ConfigError("bench needs an instrumental density with an exact sampler", "instrumental")
    moments = [int(p) for p in cfg.get("moments", [1, 3, 5, 7])]
    truth = bench_truth(cfg)
    n = int(cfg["n_steps"])
    alpha = float(cfg["kappa"].get("tuned", 1.0))
    base = RandomSource(int(cfg["seed"]))
    reps = fan_out(lambda r: _bench_one(target, inst, moments, n, alpha, base.stream(r)),
                   list(range(int(cfg["replications"]))), threads)
    results = []
    for method in ("imc", "is", "imh", "osr"):
        est = np.array([rep[method][0] for rep in reps])
        err2 = (est - truth) ** 2
        ess = {k: float(np.mean([rep[method][1][k] for rep in reps])) for k in reps[0][method][1]}
        pos = float(np.mean([rep[method][2] for rep in reps]))
        results.append(BenchResult(method, {str(p): float(v) for p, v in zip(moments, err2.mean(axis=0))},
                                   ess, pos, n))
    return results


# -- kappa scan ---------------------------------------------------------------------

def default_kappa_grid(log_weights, num=25, top_mean_count=1e3, bottom=0.1):
    """Log-spaced grid from ``bottom`` times the alpha = 1 kappa up to a mean count of ``top_mean_count``."""
    k1 = tune_kappa_log(log_weights, 1.0)
    return np.geomspace(bottom * k1, top_mean_count * k1, int(num))


def ess_scan(cfg, seed=None, threads: int = 1):
    """Kappa scan on one fixed instrumental chain (replication 0 of ``cfg``).

    Returns ``(scan dict, resolved config)``.
    """
    exp = Experiment.from_config(cfg, seed)
    sample = exp.run(replications=1)[0]
    grid = exp.config.get("kappas")
    lw = sample.log_weights
    if grid is None:
        kappas = default_kappa_grid(lw)
    elif isinstance(grid, dict):
        lo, hi = float(_need(grid, "min", "kappas")), float(_need(grid, "max", "kappas"))
        if not 0 < lo < hi:
            raise ConfigError("need 0 < min < max", "kappas")
        kappas = np.geomspace(lo, hi, int(grid.get("num", 25)))
    else:
        kappas = np.asarray(grid, dtype=float)
    # a dedicated stream keeps the scan draws apart from the chain's own
    rng = RandomSource(exp.seed, 2**32).generator()
    return kappa_scan(None, kappas, rng, exp.law if exp.law.name in LAWS else OPTIMAL, log_weights=lw), exp.config
