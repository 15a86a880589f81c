"""Volume containers, voxel/world transforms, resampling and intensity conditioning.

Arrays are indexed ``data[x, y, z]``. On disk x varies fastest, which is
Fortran order for this indexing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HU_MIN = -1000.0
HU_MAX = 3095.0
TARGET_SPACING_MM = 0.4


@dataclass(frozen=True)
class Spacing:
    """Millimetres per voxel along x, y and z."""

    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        for name in ("sx", "sy", "sz"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"spacing {name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def iso(cls, s: float) -> "Spacing":
        return cls(s, s, s)

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz], dtype=np.float64)

    def __iter__(self):
        return iter((self.sx, self.sy, self.sz))

    @property
    def is_isotropic(self) -> bool:
        return self.sx == self.sy == self.sz


def as_spacing(value) -> Spacing:
    if isinstance(value, Spacing):
        return value
    if np.isscalar(value):
        return Spacing.iso(float(value))
    sx, sy, sz = (float(v) for v in value)
    return Spacing(sx, sy, sz)


def _as_origin(value) -> tuple[float, float, float]:
    x, y, z = (float(v) for v in value)
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise ValueError(f"origin must be finite, got {(x, y, z)}")
    return (x, y, z)


@dataclass(frozen=True)
class Geometry:
    """Grid size, voxel spacing and world position of voxel (0, 0, 0)."""

    dims: tuple[int, int, int]
    spacing: Spacing = field(default_factory=lambda: Spacing.iso(1.0))
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", as_spacing(self.spacing))
        object.__setattr__(self, "origin", _as_origin(self.origin))


@dataclass(eq=False)
class _Volume:
    data: np.ndarray
    spacing: Spacing = field(default_factory=lambda: Spacing.iso(1.0))
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {self.data.shape}")
        self.spacing = as_spacing(self.spacing)
        self.origin = _as_origin(self.origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.dims, self.spacing, self.origin)

    def with_data(self, data):
        return type(self)(data, self.spacing, self.origin)


class ScalarVolume(_Volume):
    """Grey values on a regular grid."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.dtype.kind not in "iuf":
            raise TypeError(f"scalar volume needs a numeric dtype, got {self.data.dtype}")
        if self.data.dtype.kind == "f" and not np.all(np.isfinite(self.data)):
            raise ValueError("scalar volume contains non-finite values")


class BinaryVolume(_Volume):
    """Label, prediction or skeleton volume holding only 0 and 1 (stored as uint8)."""

    def __post_init__(self):
        super().__post_init__()
        data = self.data
        if data.dtype == bool:
            self.data = data.astype(np.uint8)
        else:
            if not np.all((data == 0) | (data == 1)):
                raise ValueError("binary volume must contain only 0 and 1")
            self.data = data.astype(np.uint8, copy=False)

    @classmethod
    def zeros(cls, geometry: Geometry) -> "BinaryVolume":
        return cls(np.zeros(geometry.dims, np.uint8), geometry.spacing, geometry.origin)

    @property
    def mask(self) -> np.ndarray:
        return self.data.astype(bool)

    def count(self) -> int:
        return int(np.count_nonzero(self.data))


def _spacing_origin(geom):
    return as_spacing(geom.spacing).as_array(), np.asarray(geom.origin, dtype=np.float64)


def voxel_to_world(v, geom) -> np.ndarray:
    """Map (possibly fractional) voxel indices to world millimetres.

    ``v`` may be a single triple or an (N, 3) array. ``geom`` is anything
    with ``spacing`` and ``origin`` (a volume or a ``Geometry``).
    """
    spacing, origin = _spacing_origin(geom)
    return origin + np.asarray(v, dtype=np.float64) * spacing


def world_to_voxel(p, geom) -> np.ndarray:
    """Inverse of :func:`voxel_to_world`; no rounding is applied."""
    spacing, origin = _spacing_origin(geom)
    return (np.asarray(p, dtype=np.float64) - origin) / spacing


def array_of(v) -> np.ndarray:
    """The voxel array of a volume object, or ``v`` itself as an array."""
    return v.data if isinstance(v, _Volume) else np.asarray(v)


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _interp_axis(data: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    n = data.shape[axis]
    coords = np.clip(coords, 0.0, n - 1)
    i0 = np.floor(coords).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    w = coords - i0
    shape = [1, 1, 1]
    shape[axis] = -1
    w = w.reshape(shape)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    out = a + w * (b - a)
    # a + w*(b-a) can overshoot max(a, b) by one ulp
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def resample_isotropic(vol: ScalarVolume, target: float = TARGET_SPACING_MM) -> ScalarVolume:
    """Trilinear resampling onto an isotropic grid of ``target`` mm.

    The new grid keeps the origin, so new voxel ``i`` sits at world
    ``origin + i * target``. Samples beyond the source grid clamp to the
    border voxel. Output is float64.
    """
    target = float(target)
    if not math.isfinite(target) or target <= 0:
        raise ValueError(f"target spacing must be positive, got {target}")
    old = vol.spacing.as_array()
    new_dims = [max(1, int(round_half_away(n * s / target))) for n, s in zip(vol.dims, old)]
    out = vol.data.astype(np.float64)
    for axis in range(3):
        coords = np.arange(new_dims[axis], dtype=np.float64) * (target / old[axis])
        out = _interp_axis(out, coords, axis)
    return ScalarVolume(out, Spacing.iso(target), vol.origin)


def clip_intensity(vol: ScalarVolume, lo: float = HU_MIN, hi: float = HU_MAX) -> ScalarVolume:
    if not lo < hi:
        raise ValueError(f"clip window needs lo < hi, got [{lo}, {hi}]")
    data = vol.data
    if data.dtype.kind in "iu":
        info = np.iinfo(data.dtype)
        if lo < info.min or hi > info.max or lo != int(lo) or hi != int(hi):
            data = data.astype(np.float64)
        else:
            lo, hi = data.dtype.type(lo), data.dtype.type(hi)
    return vol.with_data(np.clip(data, lo, hi))


def normalize(vol: ScalarVolume, lo: float = HU_MIN, hi: float = HU_MAX) -> ScalarVolume:
    """Map the fixed window [lo, hi] linearly onto [0, 1] as float32."""
    if not lo < hi:
        raise ValueError(f"normalization window needs lo < hi, got [{lo}, {hi}]")
    data = vol.data.astype(np.float64)
    vmin, vmax = float(data.min()), float(data.max())
    if vmin < lo or vmax > hi:
        raise ValueError(
            f"values [{vmin}, {vmax}] fall outside the window [{lo}, {hi}]; clip first"
        )
    return vol.with_data(((data - lo) / (hi - lo)).astype(np.float32))


def zero_pad_to(vol: _Volume, min_dims) -> _Volume:
    """Pad with zeros at the high end of each axis until every dim reaches ``min_dims``."""
    pads = [(0, max(0, int(m) - n)) for n, m in zip(vol.dims, min_dims)]
    if not any(p[1] for p in pads):
        return vol
    return vol.with_data(np.pad(vol.data, pads))
