"""Seeded synthetic canals and corrupted predictions with known artifacts.

A phantom is an analytic curve (straight, circular arc or helical arc), its
rasterized centerline, a tube around it, and a corrupted copy of the tube
that shows the usual failure modes of a voxel classifier: a thickened
canal, side branches, breaks, a parallel false-positive segment and small
noise blobs. Every injected artifact is recorded, so tests can check the
post-processing against exact bookkeeping.

All randomness comes from :func:`canaltrace.rng.stream` with the
phantom's (seed, index), so equal configs produce byte-identical output.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import cKDTree

from .centerline import Polyline, rasterize_centerline, tube_from_centerline
from .rng import SplitMix64, stream
from .volume import BinaryVolume, Geometry, Spacing, round_half_away

FAMILIES = ("straight", "arc", "helix")


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 0
    dims: tuple[int, int, int] = (192, 112, 112)
    spacing_mm: float = 0.4
    family: str = "mixed"
    length_mm: tuple[float, float] = (54.0, 60.0)
    arc_radius_mm: tuple[float, float] = (25.0, 50.0)
    helix_pitch_deg: tuple[float, float] = (8.0, 16.0)
    tilt_deg: float = 12.0
    margin_mm: float = 7.0
    tube_diameter_mm: float = 3.0
    # corruption magnitudes (voxel units unless noted); zero disables a mode
    thicken_radius: int = 1
    spur_count: int = 2
    spur_length: tuple[int, int] = (4, 7)
    break_count: int = 1
    break_radius: float = 4.0
    break_radius_max: float = 7.0
    clutter_count: int = 1
    clutter_offset: float = 12.0
    clutter_length: float = 20.0
    clutter_diameter_mm: float = 2.0
    noise_count: int = 6
    noise_size: tuple[int, int] = (5, 40)
    noise_clearance: float = 3.0

    def __post_init__(self):
        if self.family not in FAMILIES + ("mixed",):
            raise ValueError(f"unknown curve family {self.family!r}")
        scalars = ("spacing_mm", "tilt_deg", "margin_mm", "tube_diameter_mm", "thicken_radius", "spur_count",
                   "break_count", "break_radius", "break_radius_max", "clutter_count", "clutter_offset", "clutter_length",
                   "clutter_diameter_mm", "noise_count", "noise_clearance")
        for name in scalars:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("length_mm", "arc_radius_mm", "helix_pitch_deg", "spur_length", "noise_size"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be an ordered non-negative range, got {(lo, hi)}")
        if self.noise_size[1] >= 50:
            raise ValueError("noise components must stay below 50 voxels")
        if self.margin_mm < 2.0:
            raise ValueError("the curve needs at least 2 mm clearance from the volume border")
        if self.length_mm[0] < 20.0:
            raise ValueError("curves must be at least 20 mm long")

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.dims, Spacing.iso(self.spacing_mm))

    def clean(self) -> "PhantomConfig":
        """Same curve, no corruption."""
        return replace(self, thicken_radius=0, spur_count=0, break_count=0, clutter_count=0, noise_count=0)


@dataclass
class CurveInfo:
    family: str
    length_mm: float
    radius_mm: float | None
    pitch_deg: float | None
    rotation: np.ndarray
    translation: np.ndarray

    def circle(self):
        """Centre and unit normal of the supporting circle (arc family)."""
        centre = self.rotation @ np.array([0.0, self.radius_mm, 0.0]) + self.translation
        return centre, self.rotation @ np.array([0.0, 0.0, 1.0])


def _rotation(rng: SplitMix64, tilt_deg: float) -> np.ndarray:
    def rx(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    def ry(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])

    def rz(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    t = math.radians(tilt_deg)
    return rz(rng.uniform(-t, t)) @ ry(rng.uniform(-t, t)) @ rx(rng.uniform(0.0, 2.0 * math.pi))


def _local_curve(family, length, radius, pitch, n):
    u = np.linspace(0.0, length, n)
    if family == "straight":
        return np.column_stack([u, np.zeros(n), np.zeros(n)])
    if family == "arc":
        th = u / radius
        return np.column_stack([radius * np.sin(th), radius * (1.0 - np.cos(th)), np.zeros(n)])
    a = math.radians(pitch)
    th = u * math.cos(a) / radius
    return np.column_stack([radius * np.sin(th), radius * (1.0 - np.cos(th)), u * math.sin(a)])


def generate_curve(cfg: PhantomConfig, index: int = 0, rng: SplitMix64 | None = None):
    """Smooth open curve in world mm, fully inside the volume with ``margin_mm`` clearance.

    Returns ``(Polyline, CurveInfo)``.
    """
    rng = rng or stream(cfg.seed, index)
    geom = cfg.geometry
    extent = (np.asarray(geom.dims, dtype=np.float64) - 1.0) * cfg.spacing_mm
    family = cfg.family if cfg.family != "mixed" else rng.choice(FAMILIES)
    for _ in range(200):
        length = rng.uniform(*cfg.length_mm)
        radius = rng.uniform(*cfg.arc_radius_mm) if family != "straight" else None
        pitch = rng.uniform(*cfg.helix_pitch_deg) if family == "helix" else None
        n = max(2, math.ceil(length / 0.2) + 1)
        local = _local_curve(family, length, radius, pitch, n)
        rot = _rotation(rng, cfg.tilt_deg)
        pts = local @ rot.T
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        room = extent - 2.0 * cfg.margin_mm - (hi - lo)
        if np.any(room < 0):
            continue
        shift = np.array([rng.uniform(0.0, r) for r in room]) + cfg.margin_mm - lo
        pts = pts + shift
        info = CurveInfo(family, length, radius, pitch, rot, shift)
        return Polyline(pts, "world", geom), info
    raise ValueError(f"a {family} curve of length {cfg.length_mm} mm does not fit dims {cfg.dims}")


# -- corruption ----------------------------------------------------------------


class _Track:
    """Arc-length lookup along a voxel-frame polyline."""

    def __init__(self, pts):
        self.pts = np.asarray(pts, dtype=np.float64)
        seg = np.linalg.norm(np.diff(self.pts, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])

    def at(self, s):
        s = min(max(s, 0.0), self.length)
        return np.array([np.interp(s, self.s, self.pts[:, k]) for k in range(3)])

    def tangent(self, s):
        h = 1.0
        d = self.at(s + h) - self.at(s - h)
        return d / np.linalg.norm(d)

    def between(self, s0, s1):
        keep = (self.s > s0) & (self.s < s1)
        return np.vstack([self.at(s0), self.pts[keep], self.at(s1)])


def _perpendicular(rng, t):
    while True:
        v = np.array(rng.unit_vector())
        v -= v.dot(t) * t
        n = np.linalg.norm(v)
        if n > 0.3:
            return v / n


def _inside(v, dims, pad=1):
    return all(pad <= c < d - pad for c, d in zip(v, dims))


def _layout(track, cfg, rng):
    """Break centres, then spur and clutter centres spread over the pieces between breaks."""
    L = track.length
    nb = cfg.break_count
    if nb and nb * (2.0 * cfg.break_radius_max + 10.0) >= L:
        raise ValueError("break count and radius would erase the whole canal")
    breaks = [L * (i + 1) / (nb + 1) + rng.uniform(-0.04, 0.04) * L for i in range(nb)]
    edges = [0.0] + [x for b in breaks for x in (b - cfg.break_radius, b + cfg.break_radius)] + [L]
    pieces = [(edges[2 * i], edges[2 * i + 1]) for i in range(nb + 1)]
    items = ["spur"] * cfg.spur_count + ["clutter"] * cfg.clutter_count
    order = sorted(range(len(pieces)), key=lambda i: (-(pieces[i][1] - pieces[i][0]), i))
    slots: dict[int, list[str]] = {}
    for j, kind in enumerate(items):
        slots.setdefault(order[j % len(order)], []).append(kind)
    placed = []
    for i, kinds in sorted(slots.items()):
        a, b = pieces[i]
        for j, kind in enumerate(kinds):
            s = a + (b - a) * (j + 1) / (len(kinds) + 1) + rng.uniform(-2.0, 2.0)
            placed.append((kind, s))
    return breaks, placed


def corrupt(tube: BinaryVolume, cfg: PhantomConfig, curve: Polyline | None = None,
            rng: SplitMix64 | None = None, index: int = 0):
    """Corrupted copy of ``tube`` plus the list of injected artifacts.

    Modes are applied in order: breaks, thickening, spurs, parallel
    clutter, noise. Breaks cut the tube before it is thickened, with the
    sphere grown from ``break_radius`` in quarter-voxel steps until the cut
    survives the thickening. Spurs, breaks and clutter are placed along
    ``curve`` (needed whenever those modes are on).
    """
    rng = rng or stream(cfg.seed, index)
    pred = tube.data.astype(bool).copy()
    dims = pred.shape
    artifacts: list[dict] = []
    needs_curve = cfg.spur_count or cfg.break_count or cfg.clutter_count
    if needs_curve and curve is None:
        raise ValueError("spurs, breaks and clutter need the source curve")
    track = _Track(curve.to_voxel(tube.geometry).points) if needs_curve else None
    tube_r = cfg.tube_diameter_mm / 2.0 / cfg.spacing_mm

    breaks, placed = _layout(track, cfg, rng) if needs_curve else ([], [])
    tube_mask = tube.data.astype(bool)
    cross = ndi.generate_binary_structure(3, 1)
    structure = np.ones((3, 3, 3), dtype=bool)

    def thicken(m):
        if not cfg.thicken_radius:
            return m
        return ndi.binary_dilation(m, cross, iterations=int(cfg.thicken_radius))

    # breaks cut the thin tube; the cut must survive the later thickening
    for s in breaks:
        c = track.at(s)
        r = cfg.break_radius
        while True:
            lo = np.maximum(np.floor(c - r).astype(int), 0)
            hi = np.minimum(np.ceil(c + r).astype(int) + 1, dims)
            gx, gy, gz = np.mgrid[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
            ball = (gx - c[0]) ** 2 + (gy - c[1]) ** 2 + (gz - c[2]) ** 2 <= r * r
            box = tuple(slice(a, b) for a, b in zip(lo, hi))
            trial = pred.copy()
            trial[box] &= ~ball
            lab = ndi.label(thicken(trial), structure=structure)[0]
            a, b = (tuple(int(x) for x in round_half_away(track.at(s + sign * (r + 1.5)))) for sign in (-1, 1))
            if (lab[a] and lab[b] and lab[a] != lab[b]) or r >= cfg.break_radius_max:
                break
            r += 0.25
        erased = int((pred[box] & ball).sum())
        pred = trial
        artifacts.append({"kind": "break", "arc_position": float(s), "center": c.tolist(), "radius": r,
                          "erased_tube": erased})
    if tube_mask.any() and not pred.any():
        raise ValueError("corruption erased the entire canal")

    if cfg.thicken_radius:
        n0 = int(pred.sum())
        pred = thicken(pred)
        artifacts.append({"kind": "thicken", "radius": int(cfg.thicken_radius), "added": int(pred.sum()) - n0})

    outer = tube_r + cfg.thicken_radius
    for kind, s in placed:
        if kind != "spur":
            continue
        n = rng.integers(cfg.spur_length[0], cfg.spur_length[1] + 1)
        c, t = track.at(s), track.tangent(s)
        for _ in range(50):
            d = _perpendicular(rng, t)
            chain = []
            k = outer - 0.5
            ok = True
            while len(chain) < n:
                v = tuple(int(x) for x in round_half_away(c + d * k))
                if not _inside(v, dims):
                    ok = False
                    break
                if not pred[v] and v not in chain:
                    chain.append(v)
                k += 0.5
            if ok:
                break
        else:
            raise ValueError("could not place a spur inside the volume")
        for v in chain:
            pred[v] = True
        artifacts.append({"kind": "spur", "arc_position": float(s), "voxels": [list(v) for v in chain]})

    for kind, s in placed:
        if kind != "clutter":
            continue
        half = cfg.clutter_length / 2.0
        seg = track.between(s - half, s + half)
        t = track.tangent(s)
        tree = cKDTree(np.argwhere(pred))
        for _ in range(100):
            off = _perpendicular(rng, t) * cfg.clutter_offset
            shifted = seg + off
            if not all(_inside(p, dims, pad=4) for p in shifted):
                continue
            blob = tube_from_centerline(Polyline(shifted, "voxel", tube.geometry), cfg.clutter_diameter_mm).data
            vox = np.argwhere(blob)
            if np.all(np.isinf(tree.query(vox, distance_upper_bound=2.5)[0])):
                break
        else:
            raise ValueError("could not place parallel clutter without touching the canal")
        pred |= blob.astype(bool)
        artifacts.append({"kind": "clutter", "arc_position": float(s), "offset": off.tolist(),
                          "size": int(len(vox))})

    if cfg.noise_count:
        occupied = np.argwhere(pred)
        for _ in range(cfg.noise_count):
            tree = cKDTree(occupied) if len(occupied) else None
            size = rng.integers(cfg.noise_size[0], cfg.noise_size[1] + 1)

            def clear(v):
                if not _inside(v, dims):
                    return False
                return tree is None or math.isinf(tree.query(v, distance_upper_bound=cfg.noise_clearance)[0])

            for _ in range(1000):
                seed = tuple(rng.integers(1, d - 1) for d in dims)
                if clear(seed):
                    break
            else:
                raise ValueError("no room left for noise components")
            blob = [seed]
            members = {seed}
            tries = 0
            while len(blob) < size and tries < 50 * size:
                tries += 1
                base = blob[rng.integers(0, len(blob))]
                axis = rng.integers(0, 3)
                step = 1 if rng.random() < 0.5 else -1
                v = tuple(c + step * (k == axis) for k, c in enumerate(base))
                if v not in members and clear(v):
                    blob.append(v)
                    members.add(v)
            for v in blob:
                pred[v] = True
            occupied = np.vstack([occupied, np.array(blob)]) if len(occupied) else np.array(blob)
            artifacts.append({"kind": "noise", "voxels": [list(v) for v in blob]})

    return BinaryVolume(pred.astype(np.uint8), tube.spacing, tube.origin), artifacts


# -- whole phantoms --------------------------------------------------------------


@dataclass
class Phantom:
    config: PhantomConfig
    index: int
    curve: Polyline
    info: CurveInfo
    centerline: BinaryVolume
    tube: BinaryVolume
    prediction: BinaryVolume
    artifacts: list[dict] = field(default_factory=list)

    def manifest(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "index": self.index,
            "curve": {"family": self.info.family, "length_mm": self.info.length_mm,
                      "radius_mm": self.info.radius_mm, "pitch_deg": self.info.pitch_deg},
            "artifacts": self.artifacts,
        }


def make_phantom(cfg: PhantomConfig, index: int = 0) -> Phantom:
    rng = stream(cfg.seed, index)
    curve, info = generate_curve(cfg, rng=rng)
    centerline = rasterize_centerline(curve)
    tube = tube_from_centerline(curve, cfg.tube_diameter_mm)
    pred, artifacts = corrupt(tube, cfg, curve, rng=rng)
    return Phantom(cfg, index, curve, info, centerline, tube, pred, artifacts)


def make_phantoms(cfg: PhantomConfig, count: int, threads: int = 1) -> list[Phantom]:
    """Phantoms 0..count-1 under ``cfg.seed``; each owns its (seed, index) stream."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda i: make_phantom(cfg, i), range(count)))
    return [make_phantom(cfg, i) for i in range(count)]


def recovery_score(cfg: PhantomConfig, params=None, index: int = 0) -> dict:
    """Run the post-processing on one phantom and score it against the true centerline."""
    from .metrics import mcd
    from .postprocess import detect_points, label_components, run_pipeline

    ph = make_phantom(cfg, index)
    t0 = time.perf_counter()
    res = run_pipeline(ph.prediction, params, keep_steps=False)
    elapsed = time.perf_counter() - t0
    final = res.final
    pts = detect_points(final)
    record = {
        "seed": cfg.seed,
        "index": index,
        "family": ph.info.family,
        "components": label_components(final).n,
        "terminals": len(pts.terminals),
        "branches": len(pts.branches),
        "mcd_gp_mm": None,
        "mcd_pg_mm": None,
        "seconds": elapsed,
        "warnings": list(res.warnings),
    }
    if final.data.any():
        record["mcd_gp_mm"] = mcd(ph.centerline, final)
        record["mcd_pg_mm"] = mcd(final, ph.centerline)
    return record
