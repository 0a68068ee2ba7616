"""Command-line entry point: ``imchain {run, verify, ess-scan, bench}``.

Every file written embeds the resolved configuration and seed, and nothing
time- or host-dependent, so repeating a command gives byte-identical output.
"""
import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .diagnostics import length_regression
from .engine import write_sample_csv
from .errors import ConfigError, IMCError
from .oracle import DEFAULT_TOLERANCES, make_random_spec, make_reducible_spec, verify_spec

THREADS_ENV = "IMC_THREADS"


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def resolve_threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV, "").strip()
    if not env:
        return 1
    try:
        return _positive(env)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"invalid value {env!r}", THREADS_ENV) from exc


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"no such file {path}", "--config") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "--config") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object", "--config")
    return cfg


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _outdir(args, cfg, default):
    out = Path(args.out or cfg.get("out") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _embedded(cfg):
    # the output location is not part of what determines the results
    return {k: v for k, v in cfg.items() if k != "out"}


# -- subcommands ----------------------------------------------------------------

def cmd_run(args):
    raw = load_config(args.config)
    exp = ex.Experiment.from_config(raw, args.seed)
    cfg = _embedded(exp.config)
    out = _outdir(args, exp.config, "imc_run")
    samples = exp.run(threads=args.threads)
    n = int(cfg["n_steps"])
    reps, diags = [], []
    for r, s in enumerate(samples):
        meta = {"config": cfg, "seed": exp.seed, "replication": r, "kappa": s.kappa}
        write_sample_csv(s, out / f"sample_{r:03d}.csv", meta)
        reps.append({
            "replication": r,
            "kappa": s.kappa,
            "kappa_policy": next(iter(cfg["kappa"])),
            "n_points": len(s),
            "total_count": s.total_count,
            "expected_length": float(np.exp(np.log(s.kappa) + s.log_weights).sum()),
        })
        diags.append({"replication": r, **ex.diagnostics(s).to_dict()})
    _dump_json({"config": cfg, "seed": exp.seed, "n_steps": n, "replications": reps}, out / "metadata.json")
    _dump_json({"config": cfg, "seed": exp.seed, "diagnostics": diags}, out / "diagnostics.json")
    print(f"wrote {len(samples)} sample file(s) to {out}")
    return 0


def _parse_tolerances(items):
    tol = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"expected NAME=VALUE with NAME in {sorted(DEFAULT_TOLERANCES)}, got {item!r}",
                              "--tol")
        tol[key] = float(value)
    return tol


def cmd_verify(args):
    cfg = load_config(args.config)
    ms = args.m or cfg.get("m", [3])
    n_maxes = args.n_max or cfg.get("n_max", [2])
    if args.seeds:
        seeds = args.seeds
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = cfg.get("seeds", [0, 1, 2])
    tol = {**cfg.get("tolerances", {}), **_parse_tolerances(args.tol)}
    unknown = set(tol) - set(DEFAULT_TOLERANCES)
    if unknown:
        raise ConfigError(f"unknown tolerance(s) {sorted(unknown)}", "tolerances")
    reducible = args.reducible or bool(cfg.get("reducible", False))

    def work(job):
        m, n_max, seed = job
        rep = verify_spec(make_random_spec(int(m), int(n_max), int(seed)), tol)
        return {"seed": int(seed), **rep}

    jobs = [(m, k, s) for m in ms for k in n_maxes for s in seeds]
    reports = ex.fan_out(work, jobs, args.threads)
    if reducible:
        reports.append({"seed": None, "reducible": True, **verify_spec(make_reducible_spec(), tol)})
    ok = all(r["pass"] for r in reports)
    resolved = {"m": list(ms), "n_max": list(n_maxes), "seeds": list(seeds), "reducible": reducible,
                "tolerances": {**DEFAULT_TOLERANCES, **tol}}
    doc = {"config": resolved, "specs": reports, "pass": ok}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        out = _outdir(args, {}, "")
        (out / "verify.json").write_text(text)
    sys.stdout.write(text)
    return 0 if ok else 1


def cmd_ess_scan(args):
    raw = load_config(args.config)
    scan, resolved = ex.ess_scan(raw, args.seed, args.threads)
    cfg = _embedded(resolved)
    out = _outdir(args, resolved, "imc_ess_scan")
    cols = ["kappa", "ess_kappa", "ess_is", "chain_length"]
    with open(out / "ess_scan.csv", "w", newline="") as f:
        f.write("# " + json.dumps({"config": cfg, "seed": int(cfg["seed"])}, sort_keys=True,
                                  separators=(",", ":")) + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(scan["kappa"])):
            w.writerow([repr(float(scan[c][i])) if c != "chain_length" else int(scan[c][i]) for c in cols])
    slope, intercept, r2 = length_regression(scan["kappa"], scan["chain_length"])
    rel = abs(scan["ess_kappa"][-1] - scan["ess_is"][-1]) / scan["ess_is"][-1]
    print(json.dumps({"length_slope": slope, "length_r2": r2, "final_ess_rel_gap": rel}, sort_keys=True))
    return 0


def cmd_bench(args):
    raw = load_config(args.config) or ex.bench_config()
    resolved = ex.resolve_config(raw, args.seed)
    results = ex.bench(resolved, threads=args.threads)
    cfg = _embedded(resolved)
    out = _outdir(args, resolved, "imc_bench")
    _dump_json({"config": cfg, "seed": int(cfg["seed"]), "results": [r.to_dict() for r in results]},
               out / "bench.json")
    moments = list(results[0].mse)
    print("method  " + "  ".join(f"mse_m{p:<9}" for p in moments) + "  positive_copies")
    for r in results:
        print(f"{r.method:<7} " + "  ".join(f"{r.mse[p]:<13.4e}" for p in moments)
              + f"  {r.positive_copies:.1f}")
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=_u64, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=_positive, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")

    p = argparse.ArgumentParser(prog="imchain", description="Importance Markov chain sampler.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run replications and write samples")
    v = sub.add_parser("verify", parents=[common], help="exact checks on random finite-state specs")
    v.add_argument("--m", type=int, nargs="+", help="state-space sizes")
    v.add_argument("--n-max", type=int, nargs="+", help="largest replication counts")
    v.add_argument("--seeds", type=_u64, nargs="+", help="spec seeds")
    v.add_argument("--tol", action="append", metavar="NAME=VALUE", help="tolerance override")
    v.add_argument("--reducible", action="store_true", help="also check a reducible spec (must fail)")
    sub.add_parser("ess-scan", parents=[common], help="ESS against kappa on one fixed chain")
    sub.add_parser("bench", parents=[common], help="IMC, IS, IMH and OSR on shared iid draws")
    return p


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "ess-scan": cmd_ess_scan, "bench": cmd_bench}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.threads = resolve_threads(args.threads)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except IMCError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
