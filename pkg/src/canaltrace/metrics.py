"""Voxel overlap scores and mean curve distance."""
from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.spatial import cKDTree

from .centerline import DEFAULT_DIAMETER_MM, Polyline, tube_from_centerline
from .imageio import REPORT_KEYS
from .volume import _Volume, array_of, as_spacing, voxel_to_world


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _data(v):
    return array_of(v).astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    p, g = _data(pred), _data(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)[0]


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)[0]


def f1(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + 0.5 * (c.fp + c.fn))[0]


def iou(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)[0]


def background_counts(c: ConfusionCounts) -> ConfusionCounts:
    """Counts for the inverted volumes (background treated as the class)."""
    return ConfusionCounts(c.tn, c.fn, c.fp, c.tp)


def mean_iou(pred, gt) -> float:
    c = confusion(pred, gt)
    return (iou(c) + iou(background_counts(c))) / 2.0


def _points_mm(curve, spacing=None, origin=None):
    if isinstance(curve, Polyline):
        return curve.to_world().points
    if isinstance(curve, _Volume):
        return voxel_to_world(np.argwhere(curve.data), curve)
    arr = np.asarray(curve)
    if arr.ndim == 3:
        if spacing is None:
            raise ValueError("a spacing is needed to measure a bare mask")
        geom = SimpleNamespace(spacing=as_spacing(spacing), origin=origin if origin is not None else (0.0, 0.0, 0.0))
        return voxel_to_world(np.argwhere(arr), geom)
    return np.asarray(arr, dtype=np.float64).reshape(-1, 3)


def mcd(from_curve, to_curve, spacing=None, origin=None) -> float:
    """Mean distance (mm) from each point of ``from_curve`` to the nearest point of ``to_curve``.

    Curves are binary volumes, bare masks (give ``spacing``), polylines or
    (N, 3) arrays of world points.
    """
    a = _points_mm(from_curve, spacing, origin)
    b = _points_mm(to_curve, spacing, origin)
    if len(a) == 0 or len(b) == 0:
        raise UndefinedMetricError("mean curve distance is undefined for an empty curve")
    d, _ = cKDTree(b).query(a, k=1)
    return float(np.mean(d))


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    iou_canal: float
    iou_background: float
    miou: float
    mcd_gp_mm: float | None
    mcd_pg_mm: float | None
    undefined: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in REPORT_KEYS}
        out["undefined"] = list(self.undefined)
        return out


def overlap_report(pred, gt) -> tuple[dict, list[str]]:
    """Overlap ratios plus the names of those that hit 0/0 (reported as 0)."""
    c = confusion(pred, gt)
    bg = background_counts(c)
    values, undefined = {}, []
    for key, num, den in (
        ("precision", c.tp, c.tp + c.fp),
        ("recall", c.tp, c.tp + c.fn),
        ("f1", c.tp, c.tp + 0.5 * (c.fp + c.fn)),
        ("iou_canal", c.tp, c.tp + c.fp + c.fn),
        ("iou_background", bg.tp, bg.tp + bg.fp + bg.fn),
    ):
        values[key], undef = _ratio(num, den)
        if undef:
            undefined.append(key)
    values["miou"] = (values["iou_canal"] + values["iou_background"]) / 2.0
    return values, undefined


def evaluate(pred, gt, geometry=None, tube_diameter: float = DEFAULT_DIAMETER_MM) -> MetricReport:
    """Curve distances on the centerlines plus overlap scores on tubes built around them."""
    geometry = geometry or gt.geometry
    errors = []
    mcds = {}
    for key, a, b in (("mcd_gp_mm", gt, pred), ("mcd_pg_mm", pred, gt)):
        try:
            mcds[key] = mcd(a, b, geometry.spacing, geometry.origin)
        except UndefinedMetricError as exc:
            mcds[key] = None
            errors.append(f"{key}: {exc}")

    def tube(c):
        m = _data(c)
        if not m.any():
            return np.zeros(geometry.dims, dtype=bool)
        return tube_from_centerline(m, tube_diameter, geometry).data

    values, undefined = overlap_report(tube(pred), tube(gt))
    return MetricReport(**values, **mcds, undefined=undefined, errors=errors)
