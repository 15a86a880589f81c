"""Hot voxel kernels with a compiled backend and a pure-Python fallback.

The Cython extension ``_core`` is used when it was built; otherwise, or
when ``CANALTRACE_PURE=1`` is set, the numpy/Python versions in
``_fallback`` are used. Both produce identical results.
"""
import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("CANALTRACE_PURE", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _core as _impl
except ImportError:
    _impl = _fallback

BACKEND = _impl.BACKEND


def available_backends():
    backends = {"python": _fallback}
    try:
        from . import _core
    except ImportError:
        pass
    else:
        backends["cython"] = _core
    return backends


def _mask(mask):
    return np.ascontiguousarray(mask, dtype=np.uint8)


def _coords(coords):
    return np.ascontiguousarray(np.asarray(coords, dtype=np.intp).reshape(-1, 3))


def neighbor_counts(mask, coords, impl=None):
    """3x3x3 neighbourhood sums (centre included) at each voxel of ``coords``.

    Voxels outside the grid count as background, as if zero padded.
    """
    return (impl or _impl).neighbor_counts(_mask(mask), _coords(coords))


def geodesic(mask, seed, impl=None):
    """Shortest-path lengths from ``seed`` through foreground voxels.

    Moves go to any of the 26 neighbours at cost 1, sqrt(2) or sqrt(3).
    Unreachable voxels (and all voxels when ``seed`` is background) are inf.
    """
    return (impl or _impl).geodesic(_mask(mask), tuple(int(s) for s in seed))


def thin_redundant(mask, coords, impl=None, inplace=False):
    """Sequentially delete simple, non-endpoint voxels listed in ``coords``.

    Passes repeat in ``coords`` order until nothing changes. Returns the
    thinned uint8 mask and the number of deleted voxels. With ``inplace``
    the mask (which must be C-contiguous uint8) is modified and returned.
    """
    if inplace:
        if mask.dtype != np.uint8 or not mask.flags.c_contiguous:
            raise TypeError("in-place thinning needs a C-contiguous uint8 array")
        out = mask
    else:
        out = _mask(mask).copy()
    removed = (impl or _impl).thin_redundant(out, _coords(coords))
    return out, int(removed)


def is_simple(bits, impl=None):
    return bool((impl or _impl).is_simple(int(bits) & ~(1 << 13)))


def stamp_spheres(out, centers, radius, spacing, impl=None):
    """OR balls of ``radius`` mm around voxel-space ``centers`` into ``out`` (uint8, in place)."""
    if out.dtype != np.uint8 or not out.flags.c_contiguous:
        raise TypeError("stamp_spheres needs a C-contiguous uint8 output array")
    centers = np.ascontiguousarray(np.asarray(centers, dtype=np.float64).reshape(-1, 3))
    sp = tuple(float(s) for s in spacing)
    (impl or _impl).stamp_spheres(out, centers, float(radius), sp)
    return out
