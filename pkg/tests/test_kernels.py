import os
import subprocess
import sys

import numpy as np
import pytest

from fibril import _kernels_py
from fibril import sde
from fibril._kernels_select import BACKEND

try:
    from fibril import _kernels
except ImportError:  # not built
    _kernels = None


def test_forced_numpy_backend():
    env = dict(os.environ, FIBRIL_KERNELS="numpy")
    r = subprocess.run([sys.executable, "-c", "from fibril import sde; print(sde.BACKEND)"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "numpy"


def test_backend_recorded():
    assert BACKEND in ("cython", "numpy")
    assert BACKEND == ("numpy" if _kernels is None else "cython") or os.environ.get("FIBRIL_KERNELS") == "numpy"


@pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")
@pytest.mark.parametrize("mode", range(len(sde.KINDS)))
@pytest.mark.parametrize("record", [False, True])
def test_twins_agree(mode, record):
    s0 = np.array([1.0, 0.0, 0.5, 0.0] + ([0.0] if sde.KINDS[mode] == "adapted" else []))
    rng = np.random.default_rng(mode)
    dt = 1e-2
    dW = rng.normal(0, np.sqrt(dt), (64, 20, 4))
    dW[0, 3, 0] = -3.0  # force one failure
    pot = np.array([0.1, 0.2, -0.1, 0.05])
    a = _kernels.rotor_chunk(mode, s0, dW, dt, 1.3, 2.0, pot, 1e-3, record)
    b = _kernels_py.rotor_chunk(mode, s0, dW, dt, 1.3, 2.0, pot, 1e-3, record)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
    assert a[1][0] or mode == 0
    for x, y in zip(a, b):
        if x is None:
            assert y is None
            continue
        np.testing.assert_allclose(np.asarray(x, float), np.asarray(y, float), rtol=0, atol=1e-12)
