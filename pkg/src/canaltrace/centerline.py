"""Centerline and tube ground truth from ordered control points."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import kernels
from .imageio import ControlPointSet
from .volume import BinaryVolume, Geometry, round_half_away, voxel_to_world, world_to_voxel

DEFAULT_STEP = 0.01
DEFAULT_DIAMETER_MM = 3.0


class OutOfBoundsError(ValueError):
    pass


@dataclass
class Polyline:
    points: np.ndarray
    frame: Literal["world", "voxel"] = "world"
    geometry: Geometry | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) < 1:
            raise ValueError("polyline needs at least one point")
        if self.frame not in ("world", "voxel"):
            raise ValueError(f"unknown frame {self.frame!r}")

    def __len__(self):
        return len(self.points)

    def to_voxel(self, geometry: Geometry | None = None) -> "Polyline":
        geometry = geometry or self.geometry
        if self.frame == "voxel":
            return self if geometry is self.geometry else Polyline(self.points, "voxel", geometry)
        if geometry is None:
            raise ValueError("a geometry is needed to map a world polyline to voxels")
        return Polyline(world_to_voxel(self.points, geometry), "voxel", geometry)

    def to_world(self) -> "Polyline":
        if self.frame == "world":
            return self
        return Polyline(voxel_to_world(self.points, self.geometry), "world", self.geometry)

    def arc_length(self) -> float:
        """Length in the polyline's own frame units."""
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def scale_to_grid(cps, geometry: Geometry) -> Polyline:
    """Map millimetre control points into fractional voxel coordinates of ``geometry``."""
    pts = cps.points if isinstance(cps, (ControlPointSet, Polyline)) else np.asarray(cps, dtype=np.float64)
    vox = world_to_voxel(pts, geometry).reshape(-1, 3)
    upper = np.asarray(geometry.dims, dtype=np.float64)
    bad = np.any((vox < -1.0) | (vox > upper), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise OutOfBoundsError(
            f"control point {i} at {tuple(pts.reshape(-1, 3)[i])} mm maps to voxel "
            f"{tuple(vox[i])}, outside dims {geometry.dims}"
        )
    return Polyline(vox, "voxel", geometry)


def _segment_params(p1, p2, step):
    n = math.ceil(1.0 / step - 1e-9)
    ts = np.minimum(np.arange(n + 1) * step, 1.0)
    span = float(np.max(np.abs(p2 - p1)))
    if span * step > 1.0:
        # coarse step on a long segment: refine so rounded samples stay 26-connected
        ts = np.linspace(0.0, 1.0, math.ceil(span) + 1)
    return ts


def line_samples(p1, p2, step=DEFAULT_STEP) -> np.ndarray:
    """Points x = x1 + (x2 - x1) * t for t = 0, step, 2*step, ..., 1."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    ts = _segment_params(p1, p2, step)
    return p1[None, :] + (p2 - p1)[None, :] * ts[:, None]


def polyline_voxels(poly: Polyline, step=DEFAULT_STEP) -> np.ndarray:
    """Rounded voxel indices of all line samples, in walk order (duplicates kept)."""
    pts = poly.points
    if len(pts) == 1:
        samples = pts
    else:
        samples = np.concatenate([line_samples(pts[i], pts[i + 1], step) for i in range(len(pts) - 1)])
    return round_half_away(samples).astype(np.intp)


def rasterize_centerline(poly: Polyline, step: float = DEFAULT_STEP, geometry: Geometry | None = None) -> BinaryVolume:
    """Connect consecutive points with parametric lines and mark the nearest voxels."""
    if not 0.0 < step <= 1.0:
        raise ValueError(f"step must lie in (0, 1], got {step}")
    poly = poly.to_voxel(geometry)
    geometry = poly.geometry
    if geometry is None:
        raise ValueError("rasterization needs the target geometry")
    vox = polyline_voxels(poly, step)
    dims = np.asarray(geometry.dims)
    outside = np.any((vox < 0) | (vox >= dims), axis=1)
    if np.any(outside):
        v = vox[np.flatnonzero(outside)[0]]
        raise OutOfBoundsError(f"line sample rounds to voxel {tuple(int(c) for c in v)} outside dims {geometry.dims}")
    out = np.zeros(geometry.dims, dtype=np.uint8)
    out[vox[:, 0], vox[:, 1], vox[:, 2]] = 1
    return BinaryVolume(out, geometry.spacing, geometry.origin)


def dense_samples(poly: Polyline, step_mm: float) -> np.ndarray:
    """Voxel-frame samples along ``poly`` with arc steps of at most ``step_mm``."""
    vox = poly.points
    if len(vox) == 1:
        return vox.copy()
    sp = poly.geometry.spacing.as_array()
    chunks = []
    for a, b in zip(vox[:-1], vox[1:]):
        length = float(np.linalg.norm((b - a) * sp))
        n = max(1, math.ceil(length / step_mm))
        ts = np.arange(n) / n
        chunks.append(a[None, :] + (b - a)[None, :] * ts[:, None])
    chunks.append(vox[-1:])
    return np.concatenate(chunks)


def tube_from_centerline(centerline, diameter: float = DEFAULT_DIAMETER_MM, geometry: Geometry | None = None) -> BinaryVolume:
    """Voxels whose centre lies within ``diameter / 2`` mm of the centerline (inclusive).

    ``centerline`` is a :class:`Polyline` (densely resampled at no more than
    a tenth of the finest spacing) or a binary volume/mask whose voxel
    centres are the samples.
    """
    if not diameter > 0:
        raise ValueError(f"tube diameter must be positive, got {diameter}")
    if isinstance(centerline, Polyline):
        poly = centerline.to_voxel(geometry)
        geometry = poly.geometry
        centers = dense_samples(poly, 0.1 * min(geometry.spacing))
    else:
        if isinstance(centerline, BinaryVolume):
            geometry = geometry or centerline.geometry
            mask = centerline.data
        else:
            mask = np.asarray(centerline)
            if geometry is None:
                raise ValueError("a geometry is needed for a bare mask")
        centers = np.argwhere(mask)
        if len(centers) == 0:
            raise ValueError("centerline is empty")
    out = np.zeros(geometry.dims, dtype=np.uint8)
    kernels.stamp_spheres(out, centers, diameter / 2.0, geometry.spacing)
    return BinaryVolume(out, geometry.spacing, geometry.origin)
