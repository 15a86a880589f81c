import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage as ndi
from scipy.sparse import csgraph, lil_matrix

from canaltrace import kernels
from canaltrace.kernels._tables import CENTER, OFFSETS

BACKENDS = kernels.available_backends()
PY = BACKENDS["python"]
needs_core = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def _bits_to_cube(bits):
    cube = np.zeros((3, 3, 3), bool)
    for i, (dx, dy, dz) in enumerate(OFFSETS):
        cube[dx + 1, dy + 1, dz + 1] = bits >> i & 1
    return cube


def _simple_oracle(bits):
    cube = _bits_to_cube(bits)
    cube[1, 1, 1] = False
    _, n_fg = ndi.label(cube, np.ones((3, 3, 3), bool))
    n18 = np.ones((3, 3, 3), bool)
    n18[[0, 0, 0, 0, 2, 2, 2, 2], [0, 0, 2, 2, 0, 0, 2, 2], [0, 2, 0, 2, 0, 2, 0, 2]] = False
    n18[1, 1, 1] = False
    bg_lab, _ = ndi.label(~cube & n18, ndi.generate_binary_structure(3, 1))
    faces = {bg_lab[1 + d[0], 1 + d[1], 1 + d[2]] for d in OFFSETS if sum(map(abs, d)) == 1}
    faces.discard(0)
    return n_fg == 1 and len(faces) == 1


def test_backend_selection_reports_a_known_name():
    assert kernels.BACKEND in ("cython", "python")
    forced = os.environ.get("CANALTRACE_PURE", "") not in ("", "0")
    if "cython" in BACKENDS:
        assert kernels.BACKEND == ("python" if forced else "cython")


def test_pure_env_forces_fallback():
    code = "import canaltrace.kernels as k; print(k.BACKEND)"
    env = {**os.environ, "CANALTRACE_PURE": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("bits, expected", [
    (0, False),                                   # isolated point
    (1 << 12, True),                              # single face neighbour: an end
    ((1 << 12) | (1 << 14), False),               # middle of a line
    (((1 << 27) - 1) & ~(1 << CENTER), False),    # interior point
])
def test_is_simple_examples(bits, expected):
    for impl in BACKENDS.values():
        assert kernels.is_simple(bits, impl) is expected


@settings(max_examples=400, deadline=None)
@given(st.integers(0, (1 << 27) - 1))
def test_is_simple_matches_label_oracle(bits):
    bits &= ~(1 << CENTER)
    expected = _simple_oracle(bits)
    for impl in BACKENDS.values():
        assert kernels.is_simple(bits, impl) is expected


def _random_mask(seed, shape=(9, 8, 7), p=0.5):
    return (np.random.default_rng(seed).random(shape) < p).astype(np.uint8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_neighbor_counts_match_convolution(seed):
    mask = _random_mask(seed)
    conv = ndi.convolve(mask.astype(int), np.ones((3, 3, 3), int), mode="constant")
    coords = np.argwhere(np.ones_like(mask))
    for impl in BACKENDS.values():
        got = kernels.neighbor_counts(mask, coords, impl)
        np.testing.assert_array_equal(got, conv[tuple(coords.T)])


def _csgraph_geodesic(mask, seed):
    idx = -np.ones(mask.shape, np.intp)
    fg = np.argwhere(mask)
    idx[tuple(fg.T)] = np.arange(len(fg))
    g = lil_matrix((len(fg), len(fg)))
    for n, p in enumerate(fg):
        for d in OFFSETS:
            q = p + d
            if any(d) and np.all(q >= 0) and np.all(q < mask.shape) and idx[tuple(q)] >= 0:
                g[n, idx[tuple(q)]] = math.sqrt(sum(c * c for c in d))
    dist = csgraph.dijkstra(g.tocsr(), indices=idx[tuple(seed)])
    out = np.full(mask.shape, np.inf)
    out[tuple(fg.T)] = dist
    return out


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_geodesic_matches_csgraph(seed):
    mask = _random_mask(seed, (7, 6, 5), 0.45)
    fg = np.argwhere(mask)
    if len(fg) == 0:
        return
    start = tuple(fg[len(fg) // 2])
    oracle = _csgraph_geodesic(mask, start)
    for impl in BACKENDS.values():
        got = kernels.geodesic(mask, start, impl)
        finite = np.isfinite(oracle)
        assert np.array_equal(np.isfinite(got), finite)
        assert np.max(np.abs(got[finite] - oracle[finite]), initial=0.0) <= 1e-9


def test_geodesic_from_background_is_all_inf():
    mask = np.zeros((3, 3, 3), np.uint8)
    for impl in BACKENDS.values():
        assert np.isinf(kernels.geodesic(mask, (1, 1, 1), impl)).all()


@needs_core
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 0.8))
def test_thin_redundant_backends_agree(seed, p):
    mask = _random_mask(seed, (8, 8, 8), p)
    coords = np.argwhere(mask)[::-1]
    a, na = kernels.thin_redundant(mask, coords, BACKENDS["cython"])
    b, nb = kernels.thin_redundant(mask, coords, PY)
    assert na == nb and np.array_equal(a, b)
    assert np.all(a <= mask) and int(mask.sum()) - int(a.sum()) == na


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_thin_redundant_preserves_component_count(seed):
    mask = _random_mask(seed, (8, 8, 8), 0.6)
    out, _ = kernels.thin_redundant(mask, np.argwhere(mask))
    s = np.ones((3, 3, 3), bool)
    assert ndi.label(out, s)[1] == ndi.label(mask, s)[1]
    # outside the grid is background, so count background cavities on a padded grid
    bg = lambda m: ndi.label(np.pad(1 - m, 1, constant_values=1))[1]
    assert bg(out) == bg(mask)


def test_thin_redundant_inplace():
    mask = np.ones((5, 5, 5), np.uint8)
    copy = mask.copy()
    out, n = kernels.thin_redundant(mask, np.argwhere(mask), inplace=True)
    assert out is mask and n > 0 and int(copy.sum()) - int(mask.sum()) == n
    fresh, m = kernels.thin_redundant(copy, np.argwhere(copy))
    assert m == n and np.array_equal(fresh, mask)
    with pytest.raises(TypeError):
        kernels.thin_redundant(np.asfortranarray(copy), np.argwhere(copy), inplace=True)


def test_thin_redundant_keeps_a_line():
    mask = np.zeros((3, 3, 7), np.uint8)
    mask[1, 1, :] = 1
    out, n = kernels.thin_redundant(mask, np.argwhere(mask))
    assert n == 0 and np.array_equal(out, mask)


def _sphere_oracle(shape, centers, radius, spacing):
    out = np.zeros(shape, np.uint8)
    for idx in np.ndindex(*shape):
        for c in centers:
            d2 = sum(((i - ci) * s) ** 2 for i, ci, s in zip(idx, c, spacing))
            if d2 <= radius * radius * (1 + 1e-9):
                out[idx] = 1
                break
    return out


@pytest.mark.parametrize("spacing", [(1.0, 1.0, 1.0), (0.4, 0.5, 0.3)])
def test_stamp_spheres_matches_brute_force(spacing):
    centers = np.array([[3.0, 3.0, 3.0], [6.3, 2.2, 7.9], [-1.0, 8.5, 4.0], [20.0, 20.0, 20.0]])
    oracle = _sphere_oracle((10, 9, 8), centers, 1.5, spacing)
    for impl in BACKENDS.values():
        out = kernels.stamp_spheres(np.zeros((10, 9, 8), np.uint8), centers, 1.5, spacing, impl)
        np.testing.assert_array_equal(out, oracle)


def test_stamp_spheres_requires_uint8():
    with pytest.raises(TypeError):
        kernels.stamp_spheres(np.zeros((2, 2, 2), bool), [[0, 0, 0]], 1.0, (1, 1, 1))
