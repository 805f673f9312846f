import numpy as np
import pytest

from plnet import _backend
from plnet._backend import py_core

try:
    from plnet._backend import _core
except ImportError:
    _core = None


def rand_pd(rng, p, ridge=0.3):
    """Random symmetric positive definite matrix with O(1) entries."""
    a = rng.standard_normal((p, p + 3))
    return a @ a.T / (p + 3) + ridge * np.eye(p)


BACKENDS = ["python"] + (["c"] if _core is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test under each available kernel backend."""
    impl = py_core if request.param == "python" else _core
    monkeypatch.setattr(_backend, "admm_batch", impl.admm_batch)
    monkeypatch.setattr(_backend, "sigma2_batch", impl.sigma2_batch)
    monkeypatch.setattr(_backend, "glasso_cd", impl.glasso_cd)
    return request.param
