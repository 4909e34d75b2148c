"""Backend selection for the inner-loop kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``POHMMKIT_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("POHMMKIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND


def _f(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def forward(log_pi, log_A, log_b, impl=None):
    return (impl or _impl).forward(_f(log_pi), _f(log_A), _f(log_b))


def backward(log_A, log_b, impl=None):
    return (impl or _impl).backward(_f(log_A), _f(log_b))


def xi_sums(log_alpha, log_beta, log_A, log_b, loglik, impl=None):
    return (impl or _impl).xi_sums(_f(log_alpha), _f(log_beta), _f(log_A), _f(log_b), _f(loglik))


def backward_sample(log_alpha, log_A, u, impl=None):
    return (impl or _impl).backward_sample(_f(log_alpha), _f(log_A), _f(u))


def sample_categorical(logits, u, impl=None):
    return (impl or _impl).sample_categorical(_f(logits), _f(u))


def available_backends():
    """Return the kernel modules importable in this environment, keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
