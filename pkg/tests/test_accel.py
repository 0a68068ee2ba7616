import json
import os
import subprocess
import sys

import pytest

from imchain import _accel

SCRIPT = r"""
import hashlib, json
import numpy as np
from imchain import backend, experiments as ex
from imchain.kernels import finite_chains, imh_indices
from imchain.oracle import make_random_spec
from imchain.rng import RandomSource

h = hashlib.sha256()
for s in ex.Experiment.from_config(ex.tempering_config(0.1, n_steps=300, burn_in=10, replications=3)).run():
    h.update(s.points.tobytes()); h.update(s.counts.tobytes())
g = RandomSource(1).generator()
h.update(imh_indices(g.normal(size=500), g.random(500), 0.0)[0].tobytes())
spec = make_random_spec(4, 2, 0)
h.update(finite_chains(spec.Q, np.array([0, 3]), g.random((2, 400))).tobytes())
print(json.dumps({"backend": backend(), "digest": h.hexdigest()}))
"""


def run(disable):
    env = dict(os.environ, IMC_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.skipif(_accel.numba is None, reason="numba not installed")
def test_fallback_matches_numba_bitwise():
    fast, slow = run(False), run(True)
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    assert fast["digest"] == slow["digest"]


def test_identity_decorator_when_disabled(monkeypatch):
    monkeypatch.setattr(_accel, "USE_NUMBA", False)

    def f(x):
        return x

    assert _accel.njit(f) is f
    assert _accel.njit(cache=True)(f) is f
