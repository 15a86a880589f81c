# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled voxel kernels. Outputs match ``_fallback`` bit for bit."""
import numpy as np

from libc.math cimport ceil, floor, INFINITY, sqrt
from libcpp.pair cimport pair
from libcpp.queue cimport priority_queue

from ._tables import ADJ26, ADJ6_IN_N18, MOVES, N6, N18, N26, padded_adjacency

BACKEND = "cython"

cdef int _ADJ26[27][17]
cdef int _ADJ6[27][4]
cdef int _N26[26]
cdef int _N18[18]
cdef int _N6[6]
cdef int _MOVES[26][3]
cdef double _COST[26]
cdef double _RADIUS_SLACK = 1e-9


def _init_tables():
    cdef int i, k
    t26 = padded_adjacency(ADJ26, 17)
    t6 = padded_adjacency(ADJ6_IN_N18, 4)
    for i in range(27):
        for k in range(17):
            _ADJ26[i][k] = t26[i][k]
        for k in range(4):
            _ADJ6[i][k] = t6[i][k]
    for i in range(26):
        _N26[i] = N26[i]
        _MOVES[i][0], _MOVES[i][1], _MOVES[i][2] = MOVES[i]
        _COST[i] = sqrt(<double>(MOVES[i][0] ** 2 + MOVES[i][1] ** 2 + MOVES[i][2] ** 2))
    for i in range(18):
        _N18[i] = N18[i]
    for i in range(6):
        _N6[i] = N6[i]


_init_tables()


def neighbor_counts(const unsigned char[:, :, ::1] mask, const Py_ssize_t[:, ::1] coords):
    cdef Py_ssize_t n = coords.shape[0], i, x, y, z, u, v, w
    cdef Py_ssize_t nx = mask.shape[0], ny = mask.shape[1], nz = mask.shape[2]
    cdef int dx, dy, dz, s
    out = np.zeros(n, dtype=np.int32)
    cdef int[::1] res = out
    with nogil:
        for i in range(n):
            x = coords[i, 0]
            y = coords[i, 1]
            z = coords[i, 2]
            s = 0
            for dz in range(-1, 2):
                w = z + dz
                if w < 0 or w >= nz:
                    continue
                for dy in range(-1, 2):
                    v = y + dy
                    if v < 0 or v >= ny:
                        continue
                    for dx in range(-1, 2):
                        u = x + dx
                        if u < 0 or u >= nx:
                            continue
                        if mask[u, v, w]:
                            s += 1
            res[i] = s
    return out


def geodesic(const unsigned char[:, :, ::1] mask, seed):
    cdef Py_ssize_t nx = mask.shape[0], ny = mask.shape[1], nz = mask.shape[2]
    cdef Py_ssize_t sx = seed[0], sy = seed[1], sz = seed[2]
    dist_arr = np.full((nx, ny, nz), np.inf)
    if not mask[sx, sy, sz]:
        return dist_arr
    cdef double[::1] dist = dist_arr.reshape(-1)
    cdef priority_queue[pair[double, Py_ssize_t]] heap
    cdef pair[double, Py_ssize_t] top
    cdef Py_ssize_t idx, rem, x, y, z, u, v, w, nb, start
    cdef Py_ssize_t s0 = ny * nz
    cdef double d, nd
    cdef int k
    start = sx * s0 + sy * nz + sz
    dist[start] = 0.0
    # max-heap on (-d, -idx) pops the same order as heapq on (d, idx)
    heap.push(pair[double, Py_ssize_t](-0.0, -start))
    with nogil:
        while not heap.empty():
            top = heap.top()
            heap.pop()
            d = -top.first
            idx = -top.second
            if d > dist[idx]:
                continue
            x = idx // s0
            rem = idx - x * s0
            y = rem // nz
            z = rem - y * nz
            for k in range(26):
                u = x + _MOVES[k][0]
                v = y + _MOVES[k][1]
                w = z + _MOVES[k][2]
                if u < 0 or u >= nx or v < 0 or v >= ny or w < 0 or w >= nz:
                    continue
                if not mask[u, v, w]:
                    continue
                nb = u * s0 + v * nz + w
                nd = d + _COST[k]
                if nd < dist[nb]:
                    dist[nb] = nd
                    heap.push(pair[double, Py_ssize_t](-nd, -nb))
    return dist_arr


cdef bint _is_simple(const unsigned char* nb) noexcept nogil:
    cdef int stack[27]
    cdef unsigned char seen[27]
    cdef int top = 0, i, j, k, first = -1, nfg = 0, nseen = 0
    for i in range(27):
        seen[i] = 0
    for k in range(26):
        i = _N26[k]
        if nb[i]:
            nfg += 1
            if first < 0:
                first = i
    if first < 0:
        return False
    seen[first] = 1
    nseen = 1
    stack[0] = first
    top = 1
    while top > 0:
        top -= 1
        i = stack[top]
        for k in range(17):
            j = _ADJ26[i][k]
            if j < 0:
                break
            if nb[j] and not seen[j]:
                seen[j] = 1
                nseen += 1
                stack[top] = j
                top += 1
    if nseen != nfg:
        return False
    for i in range(27):
        seen[i] = 0
    first = -1
    for k in range(6):
        if not nb[_N6[k]]:
            first = _N6[k]
            break
    if first < 0:
        return False
    seen[first] = 1
    stack[0] = first
    top = 1
    while top > 0:
        top -= 1
        i = stack[top]
        for k in range(4):
            j = _ADJ6[i][k]
            if j < 0:
                break
            if not nb[j] and not seen[j]:
                seen[j] = 1
                stack[top] = j
                top += 1
    for k in range(6):
        i = _N6[k]
        if not nb[i] and not seen[i]:
            return False
    return True


def is_simple(long long bits):
    cdef unsigned char nb[27]
    cdef int i
    for i in range(27):
        nb[i] = (bits >> i) & 1
    nb[13] = 0
    return bool(_is_simple(nb))


def thin_redundant(unsigned char[:, :, ::1] mask, const Py_ssize_t[:, ::1] coords):
    cdef Py_ssize_t n = coords.shape[0], p, x, y, z, u, v, w
    cdef Py_ssize_t nx = mask.shape[0], ny = mask.shape[1], nz = mask.shape[2]
    cdef unsigned char nb[27]
    cdef int dx, dy, dz, idx, cnt
    cdef long removed = 0
    cdef bint changed = True
    with nogil:
        while changed:
            changed = False
            for p in range(n):
                x = coords[p, 0]
                y = coords[p, 1]
                z = coords[p, 2]
                if not mask[x, y, z]:
                    continue
                cnt = 0
                idx = 0
                for dz in range(-1, 2):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            u = x + dx
                            v = y + dy
                            w = z + dz
                            if 0 <= u < nx and 0 <= v < ny and 0 <= w < nz and mask[u, v, w]:
                                nb[idx] = 1
                                cnt += 1
                            else:
                                nb[idx] = 0
                            idx += 1
                nb[13] = 0
                cnt -= 1
                if cnt <= 1:
                    continue
                if _is_simple(nb):
                    mask[x, y, z] = 0
                    removed += 1
                    changed = True
    return removed


def stamp_spheres(unsigned char[:, :, ::1] out, centers, double radius, spacing):
    cdef double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cdef double sx = spacing[0], sy = spacing[1], sz = spacing[2]
    cdef double rx = radius / sx, ry = radius / sy, rz = radius / sz
    cdef double limit = radius * radius * (1.0 + _RADIUS_SLACK)
    cdef Py_ssize_t nx = out.shape[0], ny = out.shape[1], nz = out.shape[2]
    cdef Py_ssize_t n = c.shape[0], i, x, y, z, x0, x1, y0, y1, z0, z1
    cdef double cx, cy, cz, gx, gy, gz
    with nogil:
        for i in range(n):
            cx = c[i, 0]
            cy = c[i, 1]
            cz = c[i, 2]
            x0 = max(<Py_ssize_t>floor(cx - rx), 0)
            x1 = min(<Py_ssize_t>ceil(cx + rx), nx - 1)
            y0 = max(<Py_ssize_t>floor(cy - ry), 0)
            y1 = min(<Py_ssize_t>ceil(cy + ry), ny - 1)
            z0 = max(<Py_ssize_t>floor(cz - rz), 0)
            z1 = min(<Py_ssize_t>ceil(cz + rz), nz - 1)
            for x in range(x0, x1 + 1):
                gx = (x - cx) * sx
                gx = gx * gx
                for y in range(y0, y1 + 1):
                    gy = (y - cy) * sy
                    gy = gy * gy
                    for z in range(z0, z1 + 1):
                        gz = (z - cz) * sz
                        if gx + gy + gz * gz <= limit:
                            out[x, y, z] = 1
