"""Shared fixtures and the finite-difference gradient checker."""

import numpy as np
import pytest

from sasr import autodiff as ad
from sasr import phantom
from sasr.core import normalize_b0


def gradcheck(fn, arrays, eps=1e-5, rtol=1e-4):
    """Compare tape gradients of a scalar-valued fn against central
    differences. fn takes DTensors and returns a scalar DTensor.

    The error is relative to max(1, |fd|) so near-zero gradients are
    compared absolutely.
    """
    dts = [ad.DTensor(np.asarray(a, dtype=np.float64).copy(), True) for a in arrays]
    with ad.Tape() as tape:
        out = fn(*dts)
        tape.backward(out)

    def run(mods):
        return float(fn(*[ad.DTensor(m) for m in mods]).values.reshape(-1)[0])

    worst = 0.0
    for i, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        grad = dts[i].grad
        assert grad is not None, f"no gradient for argument {i}"
        assert grad.shape == base.shape
        flat = base.reshape(-1)
        for k in range(flat.size):
            hi = base.copy()
            hi.reshape(-1)[k] += eps
            lo = base.copy()
            lo.reshape(-1)[k] -= eps
            args_hi = [a if j != i else hi for j, a in enumerate(arrays)]
            args_lo = [a if j != i else lo for j, a in enumerate(arrays)]
            fd = (run(args_hi) - run(args_lo)) / (2.0 * eps)
            err = abs(grad.reshape(-1)[k] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
            assert err < rtol, (
                f"arg {i} element {k}: tape {grad.reshape(-1)[k]:.8e} "
                f"vs fd {fd:.8e} (err {err:.2e})"
            )
    return worst


@pytest.fixture(scope="session")
def small_dataset():
    """Noise-free 16x16x5 phantom with 15 directions, normalized."""
    spec = phantom.default_phantom(16, depth=5)
    table = phantom.default_table(15)
    vol, truth = phantom.generate(spec, table)
    norm, dwi_table = normalize_b0(vol, table)
    return {
        "vol": vol, "truth": truth, "table": table,
        "norm": norm, "dwi_table": dwi_table,
    }


@pytest.fixture(scope="session")
def desk_dataset():
    """The default 32x32x9 phantom used by the end-to-end criteria."""
    spec = phantom.default_phantom(32)
    table = phantom.default_table(15)
    vol, truth = phantom.generate(spec, table)
    norm, dwi_table = normalize_b0(vol, table)
    return {
        "vol": vol, "truth": truth, "table": table,
        "norm": norm, "dwi_table": dwi_table,
    }
