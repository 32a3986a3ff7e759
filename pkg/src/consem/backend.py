"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist: a compiled
extension (consem._fast, built from Cython when a toolchain is available)
and a pure NumPy fallback (consem._pure). Import picks the compiled one
when present; set CONSEM_BACKEND=pure or CONSEM_BACKEND=fast to force a
choice. Both backends produce bit-identical integer streams and agree on
float kernels to round-off, which the test suite checks directly.
"""

import os

from . import _pure

_choice = os.environ.get("CONSEM_BACKEND", "").strip().lower()

if _choice == "pure":
    _impl = _pure
elif _choice == "fast":
    from . import _fast as _impl  # hard failure if forced but not built
elif _choice == "":
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = _pure
else:
    raise RuntimeError(f"unknown CONSEM_BACKEND value: {_choice!r}")

BACKEND = "fast" if _impl is not _pure else "pure"

rng_fill_u64 = _impl.rng_fill_u64
train_step = _impl.train_step


def get_backend(name: str):
    """Return a specific backend module by name ('fast' or 'pure')."""
    if name == "pure":
        return _pure
    if name == "fast":
        from . import _fast
        return _fast
    raise ValueError(f"unknown backend: {name!r}")
