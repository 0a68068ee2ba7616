"""Time the numba kernels against the pure-numpy fallback.

Each workload runs in a fresh interpreter with ``IMC_DISABLE_NUMBA`` set to
0 or 1 (the flag is read at import). The child reports its wall time after a
warm-up call, so compilation is excluded, plus a digest of the outputs; the
two paths must produce identical digests.

    python3 benchmarks/bench_accel.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import hashlib, json, sys, time
import numpy as np
from imchain import backend
from imchain.kernels import RWMKernel, finite_chains, imh_indices
from imchain.model import gaussian_mixture, tempered
from imchain.oracle import make_random_spec
from imchain.rng import RandomSource

name, repeat = sys.argv[1], int(sys.argv[2])
if name == "rwm":
    tgt = tempered(gaussian_mixture(2, [[5, 5], [5, -5], [-5, 5], [-5, -5]]), 0.1)
    k = RWMKernel(tgt, 5.3)
    def job():
        gens = [RandomSource(1, r).generator() for r in range(50)]
        return k.run_many(np.zeros((50, 2)), 5000, gens)[0]
elif name == "imh":
    g = RandomSource(2).generator()
    lw, U = g.normal(size=200_000), g.random(200_000)
    def job():
        return imh_indices(lw, U, 0.0)[0]
elif name == "finite":
    spec = make_random_spec(6, 3, 0)
    g = RandomSource(3).generator()
    U = g.random((20, 50_000))
    def job():
        return finite_chains(spec.Q, np.zeros(20, dtype=np.int64), U)
out = job()
best = float("inf")
for _ in range(repeat):
    t = time.perf_counter()
    out = job()
    best = min(best, time.perf_counter() - t)
digest = hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest()[:16]
print(json.dumps({"backend": backend(), "seconds": best, "digest": digest}))
"""

WORKLOADS = ("rwm", "imh", "finite")


def run(name, disable, repeat):
    env = dict(os.environ, IMC_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", CHILD, name, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    print(f"{'workload':<8} {'numba s':>10} {'numpy s':>10} {'speedup':>8}  outputs")
    ok = True
    for name in WORKLOADS:
        fast, slow = run(name, False, args.repeat), run(name, True, args.repeat)
        same = fast["digest"] == slow["digest"]
        ok &= same
        print(f"{name:<8} {fast['seconds']:>10.4f} {slow['seconds']:>10.4f} "
              f"{slow['seconds'] / fast['seconds']:>7.1f}x  {'identical' if same else 'DIFFER'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
