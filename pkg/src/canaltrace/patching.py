"""Overlapping patch tiling, patch merging and patch rotation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .volume import BinaryVolume, Spacing, array_of

PATCH_SIZE = (64, 64, 64)
PATCH_OVERLAP = (10, 10, 10)
MAX_ROTATION_DEG = 10.0


class VolumeTooSmallError(ValueError):
    pass


def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return t


def axis_corners(dim: int, size: int, overlap: int) -> list[int]:
    """Corner positions along one axis: 0, s, 2s, ... with the last clamped to dim - size."""
    if dim < size:
        raise VolumeTooSmallError(f"dimension {dim} is smaller than patch size {size}; pad first")
    stride = size - overlap
    corners = list(range(0, dim - size + 1, stride))
    if corners[-1] != dim - size:
        corners.append(dim - size)
    return corners


@dataclass
class PatchSet:
    size: tuple[int, int, int]
    overlap: tuple[int, int, int]
    source_dims: tuple[int, int, int]
    corners: list[tuple[int, int, int]] = field(default_factory=list)
    payloads: list[np.ndarray] = field(default_factory=list)
    spacing: Spacing = field(default_factory=lambda: Spacing.iso(1.0))
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __len__(self):
        return len(self.corners)

    def __iter__(self):
        return iter(zip(self.corners, self.payloads))

    def with_payloads(self, payloads) -> "PatchSet":
        return PatchSet(self.size, self.overlap, self.source_dims, list(self.corners), list(payloads),
                        self.spacing, self.origin)


def extract_patches(vol, size=PATCH_SIZE, overlap=PATCH_OVERLAP) -> PatchSet:
    """Tile ``vol`` (a volume or 3D array) into overlapping patches (copies)."""
    size, overlap = _triple(size), _triple(overlap)
    for s, o in zip(size, overlap):
        if not 0 <= o < s:
            raise ValueError(f"overlap {o} must satisfy 0 <= overlap < size {s}")
    data = array_of(vol)
    if data.ndim != 3:
        raise ValueError("patch extraction needs a 3D volume")
    per_axis = [axis_corners(d, s, o) for d, s, o in zip(data.shape, size, overlap)]
    ps = PatchSet(size, overlap, tuple(data.shape),
                  spacing=getattr(vol, "spacing", Spacing.iso(1.0)),
                  origin=getattr(vol, "origin", (0.0, 0.0, 0.0)))
    for cz in per_axis[2]:
        for cy in per_axis[1]:
            for cx in per_axis[0]:
                ps.corners.append((cx, cy, cz))
                ps.payloads.append(data[cx:cx + size[0], cy:cy + size[1], cz:cz + size[2]].copy())
    return ps


def classify_patch(patch) -> str:
    data = array_of(patch)
    return "canal" if np.any(data) else "background"


def merge_patches(patches: PatchSet) -> BinaryVolume:
    """Logical OR of all binary patches placed at their corners."""
    out = np.zeros(patches.source_dims, dtype=np.uint8)
    for corner, payload in patches:
        payload = np.asarray(payload)
        if payload.shape != patches.size:
            raise ValueError(f"patch at {corner} has shape {payload.shape}, expected {patches.size}")
        if any(c < 0 or c + s > d for c, s, d in zip(corner, patches.size, patches.source_dims)):
            raise ValueError(f"patch at {corner} does not fit the source dims {patches.source_dims}")
        if not np.all((payload == 0) | (payload == 1)):
            raise ValueError(f"patch at {corner} is not binary")
        cx, cy, cz = corner
        sx, sy, sz = patches.size
        out[cx:cx + sx, cy:cy + sy, cz:cz + sz] |= payload.astype(np.uint8)
    return BinaryVolume(out, patches.spacing, patches.origin)


def rotate_patch(patch: np.ndarray, angle: float, interpolation: str = "trilinear") -> np.ndarray:
    """Rotate about the patch centre around the z axis; samples from outside fill with 0."""
    if abs(angle) > MAX_ROTATION_DEG:
        raise ValueError(f"rotation angle must lie in [-10, 10] degrees, got {angle}")
    orders = {"trilinear": 1, "nearest": 0}
    if interpolation not in orders:
        raise ValueError(f"interpolation must be 'trilinear' or 'nearest', got {interpolation!r}")
    patch = np.asarray(patch)
    if angle == 0:
        return patch.copy()
    src = patch.astype(np.float64) if orders[interpolation] else patch
    out = ndi.rotate(src, angle, axes=(0, 1), reshape=False, order=orders[interpolation],
                     mode="constant", cval=0.0)
    return out.astype(patch.dtype) if interpolation == "nearest" else out
