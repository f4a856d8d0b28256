"""Select the IP sweep implementation at import time.

The compiled kernel is used when it was built; set ``EBIDLMA_BACKEND=python``
to force the numpy fallback.
"""
import os

from . import _ip_fallback

try:
    from . import _ip_kernels
except ImportError:  # extension not built
    _ip_kernels = None

BACKENDS = {"python": _ip_fallback.ip_sweep}
if _ip_kernels is not None:
    BACKENDS["cython"] = _ip_kernels.ip_sweep

_requested = os.environ.get("EBIDLMA_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"EBIDLMA_BACKEND={_requested!r} is not available; have {sorted(BACKENDS)}")
DEFAULT_BACKEND = _requested or ("cython" if "cython" in BACKENDS else "python")


def get_ip_sweep(name=None):
    name = DEFAULT_BACKEND if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(BACKENDS)}") from None
