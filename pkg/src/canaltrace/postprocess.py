"""Refinement of a raw binary canal prediction into clean centerlines.

The pipeline runs six steps:

1. drop connected components smaller than ``min_size`` voxels;
2. skeletonize what is left;
3. find terminal points (one neighbour) and branch points (three or more);
4. trim branches that end in terminal points other than each component's
   two valid ends;
5. drop short components that run parallel to the accepted canal;
6. bridge gaps between nearby terminal points of different components with
   straight lines.

Connectivity is 26 everywhere. Distances and thresholds are in voxel units.
Ties between equal distances go to the voxel that comes first in raster
order (x fastest, then y, then z).
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import cKDTree

from . import kernels
from .centerline import line_samples
from .volume import BinaryVolume, ScalarVolume, array_of, round_half_away

log = logging.getLogger(__name__)

STRUCTURE_26 = np.ones((3, 3, 3), dtype=bool)
MIN_COMPONENT_SIZE = 50
SIBLING_DIST = 10.0
BRIDGE_DIST = 20.0
PARALLEL_RATIO = 0.77
DIST_TOL = 1e-9

_OFFSETS = [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)]


def raster_key(p):
    return (p[2], p[1], p[0])


def raster_sorted(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.intp).reshape(-1, 3)
    return coords[np.lexsort((coords[:, 0], coords[:, 1], coords[:, 2]))]


def _as_mask(vol) -> np.ndarray:
    data = array_of(vol)
    if data.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {data.shape}")
    return np.ascontiguousarray(data != 0, dtype=np.uint8)


def _euclid(a, b) -> float:
    return math.dist(a, b)


# -- step 1: components -------------------------------------------------------


@dataclass
class ComponentMap:
    """26-connected components numbered 1..K in raster-scan discovery order."""

    labels: np.ndarray
    voxels: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.voxels)

    @property
    def counts(self) -> list[int]:
        return [len(v) for v in self.voxels]

    def label_of(self, p) -> int:
        return int(self.labels[tuple(int(c) for c in p)])

    def bbox(self, k: int, pad: int = 1):
        vox = self.voxels[k - 1]
        lo = np.maximum(vox.min(axis=0) - pad, 0)
        hi = np.minimum(vox.max(axis=0) + pad + 1, self.labels.shape)
        return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))

    def crop(self, k: int, pad: int = 1):
        """Mask of component ``k`` on its padded bounding box, plus the box offset."""
        box = self.bbox(k, pad)
        return (self.labels[box] == k).astype(np.uint8), np.array([s.start for s in box])


def foreground_bbox(mask):
    """Slices of the tightest box holding all foreground voxels, or None if empty."""
    box = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(mask.any(axis=other))
        if len(hit) == 0:
            return None
        box.append(slice(int(hit[0]), int(hit[-1]) + 1))
    return tuple(box)


def label_components(vol) -> ComponentMap:
    mask = _as_mask(vol)
    box = foreground_bbox(mask)
    full = np.zeros(mask.shape, dtype=np.int32)
    if box is None:
        return ComponentMap(full, [])
    labels, n = ndi.label(mask[box], structure=STRUCTURE_26)
    flat = labels.ravel(order="F")
    idx = np.flatnonzero(flat)
    lab = flat[idx]
    _, first = np.unique(lab, return_index=True)
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[np.argsort(first, kind="stable") + 1] = np.arange(1, n + 1, dtype=np.int32)
    full[box] = remap[labels]
    lab = remap[lab]
    order = np.argsort(lab, kind="stable")
    coords = np.column_stack(np.unravel_index(idx[order], labels.shape, order="F")).astype(np.intp)
    coords += np.array([b.start for b in box], dtype=np.intp)
    splits = np.cumsum(np.bincount(lab, minlength=n + 1)[1:])[:-1]
    return ComponentMap(full, np.split(coords, splits))


def remove_small_components(cmap, min_size: int = MIN_COMPONENT_SIZE) -> np.ndarray:
    """Keep components with at least ``min_size`` voxels."""
    if not isinstance(cmap, ComponentMap):
        cmap = label_components(cmap)
    keep = np.zeros(cmap.n + 1, dtype=np.uint8)
    for k, vox in enumerate(cmap.voxels, start=1):
        keep[k] = len(vox) >= min_size
    return keep[cmap.labels]


# -- step 2: skeleton ---------------------------------------------------------


def make_thin(mask) -> np.ndarray:
    """Delete redundant (simple, non-end) voxels so curve voxels keep exactly two neighbours."""
    mask = _as_mask(mask)
    coords = raster_sorted(np.argwhere(mask))
    if len(coords) == 0:
        return mask
    out, _ = kernels.thin_redundant(mask, coords)
    return out


END_TANGENT_VOXELS = 6
END_RIDGE_TOL = 0.75


def _face_border(mask, axis, sign):
    """Voxels with background on the ``sign`` side along ``axis`` and foreground on the other.

    Requiring the opposite face to be foreground peels a layer only where
    the object is thicker than one voxel along ``axis``, which stops a
    two-voxel-wide ridge from being eaten from its end.
    """
    m = mask.astype(bool)
    ahead = np.zeros_like(m)
    behind = np.zeros_like(m)
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis], hi[axis] = slice(0, -1), slice(1, None)
    if sign > 0:
        ahead[tuple(lo)], behind[tuple(hi)] = m[tuple(hi)], m[tuple(lo)]
    else:
        ahead[tuple(hi)], behind[tuple(lo)] = m[tuple(lo)], m[tuple(hi)]
    return m & ~ahead & behind


def thin_by_distance(mask, dist=None) -> np.ndarray:
    """Topology-preserving thinning that peels voxels in order of distance to the background.

    Distance levels are processed from the outside in. Inside a level the
    six face directions take turns, and each border candidate is deleted
    when it is simple and not a curve end at the moment it is visited, so
    the surviving curve runs along the distance ridge.
    """
    m = np.ascontiguousarray(np.pad(_as_mask(mask), 1))
    if dist is None:
        dist = ndi.distance_transform_edt(m)
    else:
        dist = np.pad(dist, 1)
    for level in np.unique(dist[m > 0]):
        allowed = dist <= level
        while True:
            removed = 0
            for axis in range(3):
                for sign in (-1, 1):
                    cand = raster_sorted(np.argwhere(_face_border(m, axis, sign) & allowed))
                    if len(cand):
                        removed += kernels.thin_redundant(m, cand, inplace=True)[1]
            if not removed:
                break
    return m[1:-1, 1:-1, 1:-1]


def _chain_from(mask, p, n):
    path, seen, cur = [p], {p}, p
    for _ in range(n):
        nbrs = [q for q in _fg_neighbours(mask, cur) if q not in seen]
        if len(nbrs) != 1:
            break
        cur = nbrs[0]
        path.append(cur)
        seen.add(cur)
    return path


def recover_ends(skel, mask, dist) -> np.ndarray:
    """Push each curve end back out along its tangent while it stays on the distance ridge.

    Thinning shortens curves at rounded caps by a few voxels. The end is
    extended in half-voxel steps along the direction of its last
    ``END_TANGENT_VOXELS`` voxels while the sample stays inside ``mask``
    with a distance no more than ``END_RIDGE_TOL`` below the chain's median.
    An extension stops before it would touch any other part of the
    skeleton, so no loop or junction is created.
    """
    out = skel.copy()
    for t in detect_points(skel).terminals:
        path = _chain_from(skel, t, END_TANGENT_VOXELS)
        if len(path) < 3:
            continue
        d = np.subtract(t, path[-1]).astype(np.float64)
        d /= np.linalg.norm(d)
        ref = float(np.median([dist[q] for q in path])) - END_RIDGE_TOL
        own = set(path)
        prev, s = t, 0.5
        while True:
            q = tuple(int(c) for c in round_half_away(np.add(t, s * d)))
            s += 0.5
            if q == prev:
                continue
            if any(c < 0 or c >= n for c, n in zip(q, mask.shape)) or not mask[q] or dist[q] < ref:
                break
            if out[q] or any(r not in own and r != prev for r in _fg_neighbours(out, q)):
                break
            out[q] = 1
            own.add(q)
            prev = q
    return out


def _skeletonize_component(args):
    crop, = args
    dist = ndi.distance_transform_edt(crop)
    sk = thin_by_distance(crop, dist)
    return make_thin(recover_ends(sk, crop, dist))


def skeletonize(vol, threads: int = 1) -> np.ndarray:
    """Topology-preserving curve skeleton, one voxel thick.

    Each component is thinned on its own bounding box, so the result does
    not depend on ``threads``.
    """
    cmap = label_components(vol)
    out = np.zeros(cmap.labels.shape, dtype=np.uint8)
    jobs = []
    for k in range(1, cmap.n + 1):
        crop, _ = cmap.crop(k)
        jobs.append((crop,))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_skeletonize_component, jobs))
    else:
        results = [_skeletonize_component(j) for j in jobs]
    for k, sk in enumerate(results, start=1):
        box = cmap.bbox(k)
        out[box] |= sk
    return out


# -- step 3: terminal and branch points ----------------------------------------


@dataclass
class SkeletonPoints:
    terminals: list[tuple[int, int, int]] = field(default_factory=list)
    branches: list[tuple[int, int, int]] = field(default_factory=list)
    valid: list[tuple[int, int, int]] = field(default_factory=list)
    invalid: list[tuple[int, int, int]] = field(default_factory=list)
    absolute: list[tuple[int, int, int]] = field(default_factory=list)
    degenerate: list[int] = field(default_factory=list)


def detect_points(skel) -> SkeletonPoints:
    """Terminal points have 3x3x3 sum 2, branch points a sum above 3."""
    mask = _as_mask(skel)
    coords = raster_sorted(np.argwhere(mask))
    if len(coords) == 0:
        return SkeletonPoints()
    sums = kernels.neighbor_counts(mask, coords)
    tps = [tuple(int(c) for c in p) for p in coords[sums == 2]]
    bps = [tuple(int(c) for c in p) for p in coords[sums > 3]]
    return SkeletonPoints(terminals=tps, branches=bps)


def points_volume(skel, points: SkeletonPoints) -> np.ndarray:
    """0 background, 1 skeleton, 2 terminal point, 3 branch point."""
    out = _as_mask(skel).copy()
    for p in points.terminals:
        out[p] = 2
    for p in points.branches:
        out[p] = 3
    return out


# -- step 4: terminal selection and trimming -----------------------------------


def geodesic_distance(skel, a, b) -> float:
    """Shortest 26-connected path length through foreground voxels from ``a`` to ``b``."""
    mask = _as_mask(skel)
    a = tuple(int(c) for c in a)
    b = tuple(int(c) for c in b)
    for name, p in (("a", a), ("b", b)):
        if any(c < 0 or c >= d for c, d in zip(p, mask.shape)) or not mask[p]:
            raise ValueError(f"point {name}={p} is not a foreground voxel")
    dist = kernels.geodesic(mask, a)
    if not math.isfinite(dist[b]):
        raise ValueError(f"{a} and {b} lie in different components")
    return float(dist[b])


def _furthest_pair(points, dist_fn):
    best, pair = -1.0, None
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            d = dist_fn(i, j)
            if d > best + DIST_TOL:
                best, pair = d, (points[i], points[j])
    return pair, best


def _component_geodesics(cmap, k, tps):
    crop, offset = cmap.crop(k)
    local = [tuple(int(c) for c in np.subtract(p, offset)) for p in tps]
    fields = [kernels.geodesic(crop, p) for p in local]
    return lambda i, j: float(fields[i][local[j]])


def select_valid_terminals(skel, cmap=None, points=None, sibling_dist: float = SIBLING_DIST,
                           neighbor_dist: float | None = BRIDGE_DIST) -> SkeletonPoints:
    """Mark each component's two valid terminal points; all other terminals are invalid.

    The geodesically furthest terminal pair are the candidates. A candidate
    with a close sibling (another terminal of its component nearer than
    ``sibling_dist``) competes with it: the winner is whichever lies closer
    to the nearest terminal of another component. When no other
    component's terminal is within ``neighbor_dist`` (None = any distance)
    the candidate keeps its place.
    """
    if cmap is None:
        cmap = label_components(skel)
    if points is None:
        points = detect_points(skel)
    by_comp: dict[int, list] = {}
    for p in points.terminals:
        by_comp.setdefault(cmap.label_of(p), []).append(p)
    out = SkeletonPoints(terminals=list(points.terminals), branches=list(points.branches))
    for k in range(1, cmap.n + 1):
        tps = by_comp.get(k, [])
        if len(tps) < 2:
            out.degenerate.append(k)
            out.valid.extend(tps)
            continue
        if len(tps) == 2:
            out.valid.extend(tps)
            continue
        (c1, c2), _ = _furthest_pair(tps, _component_geodesics(cmap, k, tps))
        others = [p for p in points.terminals if cmap.label_of(p) != k]
        winners = []
        for cand in (c1, c2):
            close = [s for s in tps if s not in (c1, c2) and _euclid(cand, s) < sibling_dist]
            winner = cand
            if close and others:
                ref = min(others, key=lambda q: (_euclid(cand, q), raster_key(q)))
                if neighbor_dist is None or _euclid(cand, ref) <= neighbor_dist:
                    contenders = [cand] + sorted(close, key=raster_key)
                    winner = min(contenders, key=lambda s: (_euclid(s, ref) - DIST_TOL * (s == cand), raster_key(s)))
            winners.append(winner)
        if winners[0] == winners[1]:
            winners = [c1, c2]
        out.valid.extend(winners)
        out.invalid.extend(p for p in tps if p not in winners)
    out.valid.sort(key=raster_key)
    out.invalid.sort(key=raster_key)
    return out


def _fg_neighbours(mask, p):
    nx, ny, nz = mask.shape
    x, y, z = p
    out = []
    for dx, dy, dz in _OFFSETS:
        q = (x + dx, y + dy, z + dz)
        if 0 <= q[0] < nx and 0 <= q[1] < ny and 0 <= q[2] < nz and mask[q]:
            out.append(q)
    return out


@dataclass
class TrimReport:
    removed_voxels: int = 0
    spurs: list[list[tuple[int, int, int]]] = field(default_factory=list)
    whole_chains: list[tuple[int, int, int]] = field(default_factory=list)


def trim_branches(skel, invalid, branches=None, report: TrimReport | None = None) -> np.ndarray:
    """Erase the chain from each invalid terminal up to, not including, the first branch point.

    A walk that ends at another terminal without meeting a branch point
    erases the whole chain and is recorded in ``report.whole_chains``.
    """
    mask = _as_mask(skel).copy()
    if branches is None:
        branches = detect_points(mask).branches
    bps = set(map(tuple, branches))
    report = report if report is not None else TrimReport()
    for tp in sorted(map(tuple, invalid), key=raster_key):
        if not mask[tp]:
            continue
        path = [tp]
        seen = {tp}
        cur = tp
        whole = False
        while True:
            nbrs = [q for q in _fg_neighbours(mask, cur) if q not in seen]
            if any(q in bps for q in nbrs):
                break
            if not nbrs:
                whole = True
                break
            if len(nbrs) > 1:
                break
            cur = nbrs[0]
            if cur in bps:
                break
            path.append(cur)
            seen.add(cur)
        for q in path:
            mask[q] = 0
        report.removed_voxels += len(path)
        report.spurs.append(path)
        if whole:
            report.whole_chains.append(tp)
    return mask


def prune_branches(skel, sibling_dist=SIBLING_DIST, neighbor_dist=BRIDGE_DIST, max_rounds=25):
    """Repeat detection, selection and trimming until no invalid terminals remain."""
    mask = _as_mask(skel)
    report = TrimReport()
    sel = SkeletonPoints()
    for _ in range(max_rounds):
        cmap = label_components(mask)
        pts = detect_points(mask)
        sel = select_valid_terminals(mask, cmap, pts, sibling_dist, neighbor_dist)
        if not sel.invalid:
            break
        mask = make_thin(trim_branches(mask, sel.invalid, pts.branches, report))
    else:
        log.warning("branch trimming stopped after %d rounds with invalid terminals left", max_rounds)
    return mask, sel, report


# -- step 5: parallel components ---------------------------------------------


@dataclass
class ParallelDecision:
    label: int
    size: int
    distances: tuple[float, float]
    ratio: float
    kept: bool


def _end_pair(cmap, k, tps):
    if len(tps) == 2:
        return tps
    if len(tps) > 2:
        pair, _ = _furthest_pair(tps, lambda i, j: _euclid(tps[i], tps[j]))
        return list(pair)
    return []


def remove_parallel_components(skel, cmap=None, points=None, parallel_ratio: float = PARALLEL_RATIO,
                               decisions: list | None = None) -> np.ndarray:
    """Largest component is kept; smaller ones are dropped when both ends sit equally far from the kept set.

    For each remaining component (largest first) the minimum distance from
    each of its two terminals to the kept voxels gives ``r = min/max``. A
    ratio of at least ``parallel_ratio`` marks the component as parallel.
    """
    mask = _as_mask(skel)
    if cmap is None:
        cmap = label_components(mask)
    if cmap.n <= 1:
        return mask.copy()
    if points is None:
        points = detect_points(mask)
    by_comp: dict[int, list] = {}
    for p in points.terminals:
        by_comp.setdefault(cmap.label_of(p), []).append(p)
    order = sorted(range(1, cmap.n + 1), key=lambda k: (-len(cmap.voxels[k - 1]), k))
    keep = np.zeros(cmap.n + 1, dtype=np.uint8)
    keep[order[0]] = 1
    trees = [cKDTree(cmap.voxels[order[0] - 1])]
    decisions = decisions if decisions is not None else []
    for k in order[1:]:
        ends = _end_pair(cmap, k, by_comp.get(k, []))
        if ends:
            d = [min(t.query(np.asarray(e, dtype=np.float64))[0] for t in trees) for e in ends]
        else:
            # no usable ends (loop or blob): treat as equidistant
            dmin = min(float(t.query(cmap.voxels[k - 1])[0].min()) for t in trees)
            d = [dmin, dmin]
        hi = max(d)
        r = min(d) / hi if hi > 0 else 1.0
        kept = r < parallel_ratio
        decisions.append(ParallelDecision(k, len(cmap.voxels[k - 1]), (float(d[0]), float(d[1])), r, kept))
        if kept:
            keep[k] = 1
            trees.append(cKDTree(cmap.voxels[k - 1]))
    return keep[cmap.labels]


# -- step 6: gap bridging -----------------------------------------------------


@dataclass
class BridgeReport:
    absolute: list[tuple[int, int, int]] = field(default_factory=list)
    bridges: list[tuple[tuple[int, int, int], tuple[int, int, int], float]] = field(default_factory=list)
    residual: list[tuple[int, int, int]] = field(default_factory=list)


def _draw_line(mask, a, b, step):
    vox = round_half_away(line_samples(a, b, step)).astype(np.intp)
    mask[vox[:, 0], vox[:, 1], vox[:, 2]] = 1


def bridge_gaps(skel, cmap=None, points=None, bridge_dist: float = BRIDGE_DIST, step: float = 0.01,
                report: BridgeReport | None = None) -> np.ndarray:
    """Join nearby terminals of different components with straight voxel lines.

    The two terminals furthest apart overall are the canal's absolute ends
    and are never bridged. Other terminal pairs from different components
    within ``bridge_dist`` are joined nearest first; each terminal is used
    once and no pair may close a cycle.
    """
    mask = _as_mask(skel).copy()
    report = report if report is not None else BridgeReport()
    if cmap is None:
        cmap = label_components(mask)
    if cmap.n <= 1:
        return mask
    if points is None:
        points = detect_points(mask)
    tps = sorted(points.terminals, key=raster_key)
    if len(tps) < 2:
        return mask
    pair, _ = _furthest_pair(tps, lambda i, j: _euclid(tps[i], tps[j]))
    report.absolute = list(pair)
    free = [p for p in tps if p not in pair]
    comp = {p: cmap.label_of(p) for p in free}
    cands = []
    for i in range(len(free)):
        for j in range(i + 1, len(free)):
            a, b = free[i], free[j]
            if comp[a] == comp[b]:
                continue
            d = _euclid(a, b)
            if d <= bridge_dist:
                cands.append((d, raster_key(a), raster_key(b), a, b))
    cands.sort(key=lambda c: c[:3])
    parent = list(range(cmap.n + 1))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    used = set()
    for d, _, _, a, b in cands:
        if a in used or b in used:
            continue
        ra, rb = find(comp[a]), find(comp[b])
        if ra == rb:
            continue
        parent[rb] = ra
        used.update((a, b))
        _draw_line(mask, a, b, step)
        report.bridges.append((a, b, d))
    report.residual = [p for p in free if p not in used]
    return mask


# -- sides and full pipeline ---------------------------------------------------


def split_left_right(vol, flip: bool = False, warnings: list | None = None):
    """Assign the two largest components to sides by centroid x.

    The smaller-x component is the patient's right side (radiological
    convention) unless ``flip`` is set. Returns ``(left, right)`` masks.
    """
    mask = _as_mask(vol)
    warnings = warnings if warnings is not None else []
    cmap = label_components(mask)
    left = np.zeros_like(mask)
    right = np.zeros_like(mask)
    if cmap.n == 0:
        warnings.append("no components: both sides empty")
        return left, right
    order = sorted(range(1, cmap.n + 1), key=lambda k: (-len(cmap.voxels[k - 1]), k))[:2]
    if cmap.n > 2:
        warnings.append(f"{cmap.n - 2} extra component(s) not assigned to a side")
    cx = {k: float(cmap.voxels[k - 1][:, 0].mean()) for k in order}
    if len(order) == 1:
        warnings.append("only one component: one side empty")
        k = order[0]
        centre = (mask.shape[0] - 1) / 2.0
        small_x = cx[k] < centre
        target = left if (small_x == flip) else right
        target[cmap.labels == k] = 1
        return left, right
    a, b = sorted(order, key=lambda k: (cx[k], k))
    right_k, left_k = (b, a) if flip else (a, b)
    right[cmap.labels == right_k] = 1
    left[cmap.labels == left_k] = 1
    return left, right


@dataclass
class PipelineParams:
    min_size: int = MIN_COMPONENT_SIZE
    sibling_dist: float = SIBLING_DIST
    bridge_dist: float = BRIDGE_DIST
    parallel_ratio: float = PARALLEL_RATIO
    neighbor_dist: float | None = BRIDGE_DIST
    step: float = 0.01
    flip_sides: bool = False
    threads: int = 1


@dataclass
class PipelineResult:
    final: BinaryVolume
    left: BinaryVolume
    right: BinaryVolume
    steps: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    selection: SkeletonPoints | None = None
    trim: TrimReport | None = None
    parallel: list[ParallelDecision] = field(default_factory=list)
    bridges: BridgeReport | None = None


def run_pipeline(pred, params: PipelineParams | None = None, keep_steps: bool = True) -> PipelineResult:
    params = params or PipelineParams()
    if not isinstance(pred, BinaryVolume):
        pred = BinaryVolume(_as_mask(pred))
    geom = pred.geometry

    def wrap(a):
        return BinaryVolume(a, geom.spacing, geom.origin)

    res = PipelineResult(final=None, left=None, right=None)
    timings = res.timings
    mask = _as_mask(pred)
    if not mask.any():
        res.warnings.append("empty prediction")
        empty = wrap(np.zeros_like(mask))
        res.final, res.left, res.right = empty, wrap(np.zeros_like(mask)), wrap(np.zeros_like(mask))
        if keep_steps:
            res.steps = {f"step{i}": empty for i in range(1, 7)}
        return res

    def stage(name, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        timings[name] = time.perf_counter() - t0
        log.info("%s: %.3f s", name, timings[name])
        return out

    s1 = stage("step1", remove_small_components, label_components(mask), params.min_size)
    s2 = stage("step2", skeletonize, s1, threads=params.threads)
    pts = stage("step3", detect_points, s2)
    s4, sel, trim = stage("step4", prune_branches, s2, params.sibling_dist, params.neighbor_dist)
    decisions = []
    s5 = stage("step5", remove_parallel_components, s4, parallel_ratio=params.parallel_ratio,
               decisions=decisions)
    bridges = BridgeReport()
    s6 = stage("step6", lambda m: make_thin(bridge_gaps(m, bridge_dist=params.bridge_dist,
                                                         step=params.step, report=bridges)), s5)
    if bridges.residual:
        # a two-sided volume always leaves the inner ends of one canal unmatched,
        # so residual gaps are reported but not raised as warnings
        log.info("%d terminal point(s) left unbridged", len(bridges.residual))
    if sel.degenerate:
        res.warnings.append(f"{len(sel.degenerate)} component(s) with fewer than 2 terminals left untrimmed")
    if trim.whole_chains:
        res.warnings.append(f"{len(trim.whole_chains)} isolated chain(s) erased while trimming")

    # fragments that thinned below the Step-1 size would be dropped by a rerun;
    # dropping them here keeps the pipeline idempotent
    final = remove_small_components(label_components(s6), params.min_size)
    if final.sum() < s6.sum():
        res.warnings.append("skeleton fragments below the minimum size dropped from the final output")
    left, right = split_left_right(final, params.flip_sides, res.warnings)
    res.final, res.left, res.right = wrap(final), wrap(left), wrap(right)
    res.selection, res.trim, res.parallel, res.bridges = sel, trim, decisions, bridges
    if keep_steps:
        res.steps = {
            "step1": wrap(s1),
            "step2": wrap(s2),
            "step3": ScalarVolume(points_volume(s2, pts), geom.spacing, geom.origin),
            "step4": wrap(s4),
            "step5": wrap(s5),
            "step6": wrap(s6),
        }
    return res
