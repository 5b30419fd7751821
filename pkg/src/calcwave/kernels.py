"""Kernel backend selection.

The compiled extension is used when it imports; ``CALCWAVE_KERNELS=python``
forces the numpy fallback. ``BACKEND`` names the active choice.
"""
import os
from contextlib import contextmanager

from . import _fallback

_requested = os.environ.get("CALCWAVE_KERNELS", "auto").lower()

_compiled = None
if _requested != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _requested == "compiled":
            raise

if _compiled is not None:
    csr_matvec = _compiled.csr_matvec
    pcg = _compiled.pcg
    gating_step = _compiled.gating_step
    BACKEND = "compiled"
else:
    csr_matvec = _fallback.csr_matvec
    pcg = _fallback.pcg
    gating_step = _fallback.gating_step
    BACKEND = "python"


def available_backends():
    """Map backend name to its kernel module for every importable backend."""
    out = {"python": _fallback}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["compiled"] = _kernels
    return out


@contextmanager
def use_backend(name: str):
    """Temporarily route the module-level kernels to backend ``name``."""
    g = globals()
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"kernel backend {name!r} is not available (have {', '.join(backends)})")
    mod = backends[name]
    saved = {k: g[k] for k in ("csr_matvec", "pcg", "gating_step", "BACKEND")}
    g.update(csr_matvec=mod.csr_matvec, pcg=mod.pcg, gating_step=mod.gating_step, BACKEND=name)
    try:
        yield mod
    finally:
        g.update(saved)
