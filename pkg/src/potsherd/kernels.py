"""Hot-kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``POTSHERD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("POTSHERD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

circle_plane_section = _impl.circle_plane_section
section_polyline = _impl.section_polyline
section_planar = _impl.section_planar
section_outline = _impl.section_outline
tangent_crossing = _impl.tangent_crossing
clip_polyline = _impl.clip_polyline
sample_runs = _impl.sample_runs
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
