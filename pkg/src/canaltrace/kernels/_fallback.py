"""Pure-Python/numpy kernels. Same contracts and outputs as ``_core``."""
import heapq
from functools import lru_cache

import numpy as np

from ._tables import ADJ26, ADJ6_IN_N18, CENTER, MOVE_COST, MOVES, N6, N18, N26, OFFSETS

BACKEND = "python"
_RADIUS_SLACK = 1e-9


def neighbor_counts(mask, coords):
    """3x3x3 sums (centre included) at ``coords``; outside the grid counts as 0."""
    padded = np.pad(mask.astype(np.int32), 1)
    c = coords + 1
    total = np.zeros(len(coords), dtype=np.int32)
    for dx, dy, dz in OFFSETS:
        total += padded[c[:, 0] + dx, c[:, 1] + dy, c[:, 2] + dz]
    return total


def geodesic(mask, seed):
    """Dijkstra over foreground voxels with 26-neighbour moves of Euclidean cost."""
    nx, ny, nz = mask.shape
    dist = np.full(mask.shape, np.inf)
    sx, sy, sz = (int(v) for v in seed)
    if not mask[sx, sy, sz]:
        return dist
    flat = dist.reshape(-1)
    m = mask.reshape(-1)
    strides = (ny * nz, nz, 1)
    start = sx * strides[0] + sy * strides[1] + sz
    flat[start] = 0.0
    heap = [(0.0, start)]
    moves = list(zip(MOVES, MOVE_COST))
    while heap:
        d, idx = heapq.heappop(heap)
        if d > flat[idx]:
            continue
        x, rem = divmod(idx, strides[0])
        y, z = divmod(rem, nz)
        for (dx, dy, dz), cost in moves:
            u, v, w = x + dx, y + dy, z + dz
            if 0 <= u < nx and 0 <= v < ny and 0 <= w < nz:
                n = u * strides[0] + v * strides[1] + w
                if m[n]:
                    nd = d + cost
                    if nd < flat[n]:
                        flat[n] = nd
                        heapq.heappush(heap, (nd, n))
    return dist


@lru_cache(maxsize=None)
def is_simple(nb):
    """Simple-point test for a 27-bit neighbourhood (centre bit ignored).

    Simple iff the foreground 26-neighbours form exactly one 26-component
    and the background 18-neighbours have exactly one 6-component that is
    6-adjacent to the centre.
    """
    fg = [i for i in N26 if nb >> i & 1]
    if not fg:
        return False
    seen = {fg[0]}
    stack = [fg[0]]
    while stack:
        i = stack.pop()
        for j in ADJ26[i]:
            if nb >> j & 1 and j not in seen:
                seen.add(j)
                stack.append(j)
    if len(seen) != len(fg):
        return False
    faces = [i for i in N6 if not nb >> i & 1]
    if not faces:
        return False
    seen = {faces[0]}
    stack = [faces[0]]
    while stack:
        i = stack.pop()
        for j in ADJ6_IN_N18[i]:
            if not nb >> j & 1 and j not in seen:
                seen.add(j)
                stack.append(j)
    return all(f in seen for f in faces)


def _neighbourhood(mask, x, y, z):
    nx, ny, nz = mask.shape
    nb = 0
    for i, (dx, dy, dz) in enumerate(OFFSETS):
        u, v, w = x + dx, y + dy, z + dz
        if 0 <= u < nx and 0 <= v < ny and 0 <= w < nz and mask[u, v, w]:
            nb |= 1 << i
    return nb


def thin_redundant(mask, coords):
    """Delete simple non-endpoint voxels in ``coords`` order until none remain.

    Modifies ``mask`` in place and returns the number of deleted voxels.
    """
    removed = 0
    pts = [tuple(int(c) for c in p) for p in coords]
    changed = True
    while changed:
        changed = False
        for x, y, z in pts:
            if not mask[x, y, z]:
                continue
            nb = _neighbourhood(mask, x, y, z) & ~(1 << CENTER)
            if bin(nb).count("1") <= 1:
                continue
            if is_simple(nb):
                mask[x, y, z] = 0
                removed += 1
                changed = True
    return removed


def stamp_spheres(out, centers, radius, spacing):
    """Set voxels whose centre lies within ``radius`` mm of any centre (voxel coords)."""
    shape = np.array(out.shape)
    sp = np.asarray(spacing, dtype=np.float64)
    r_vox = radius / sp
    limit = radius * radius * (1.0 + _RADIUS_SLACK)
    for c in np.asarray(centers, dtype=np.float64):
        lo = np.maximum(np.floor(c - r_vox).astype(np.intp), 0)
        hi = np.minimum(np.ceil(c + r_vox).astype(np.intp), shape - 1)
        if np.any(hi < lo):
            continue
        gx = ((np.arange(lo[0], hi[0] + 1) - c[0]) * sp[0]) ** 2
        gy = ((np.arange(lo[1], hi[1] + 1) - c[1]) * sp[1]) ** 2
        gz = ((np.arange(lo[2], hi[2] + 1) - c[2]) * sp[2]) ** 2
        inside = (gx[:, None, None] + gy[None, :, None] + gz[None, None, :]) <= limit
        view = out[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        view |= inside.astype(out.dtype)

