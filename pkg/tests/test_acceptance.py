"""Acceptance suite: one marked group per criterion, summarised as PASS/FAIL lines at the end of the run."""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from canaltrace.imageio import read_control_points, read_volume, write_volume
from canaltrace.metrics import confusion, f1, iou, mcd, mean_iou, precision, recall
from canaltrace.netspec import (PUBLISHED_TOTAL_PARAMETERS, census_all_conventions, count_parameters, default_network,
                                format_table, propagate_shapes)
from canaltrace.patching import extract_patches, merge_patches
from canaltrace.phantom import PhantomConfig, make_phantom
from canaltrace.postprocess import (PipelineParams, detect_points, label_components, remove_small_components,
                                    run_pipeline)
from canaltrace.volume import BinaryVolume, ScalarVolume, Spacing, clip_intensity, normalize, resample_isotropic

criterion = pytest.mark.criterion
DATA = Path(__file__).parent / "data"


# -- 1 -------------------------------------------------------------------------

BLOCK_SHAPES = [
    ((64, 64, 64, 1), (64, 64, 64, 64)),
    ((64, 64, 64, 64), (32, 32, 64, 64)),
    ((32, 32, 64, 64), (32, 32, 64, 128)),
    ((32, 32, 64, 128), (16, 16, 64, 128)),
    ((16, 16, 64, 128), (16, 16, 64, 256)),
    ((16, 16, 64, 256), (8, 8, 64, 256)),
    ((8, 8, 64, 256), (8, 8, 64, 512)),
    ((8, 8, 64, 512), (16, 16, 64, 768)),
    ((16, 16, 64, 768), (16, 16, 64, 256)),
    ((16, 16, 64, 256), (32, 32, 64, 384)),
    ((32, 32, 64, 384), (32, 32, 64, 128)),
    ((32, 32, 64, 128), (64, 64, 64, 192)),
    ((64, 64, 64, 192), (64, 64, 64, 64)),
    ((64, 64, 64, 64), (64, 64, 64, 2)),
]


@criterion(1, "network block shapes reproduce all 14 rows in < 1 s")
def test_block_shapes():
    t0 = time.perf_counter()
    shapes = propagate_shapes(default_network())
    text = format_table(default_network())
    elapsed = time.perf_counter() - t0
    assert shapes == BLOCK_SHAPES
    assert "16x16x64x(512+256)" in text
    assert elapsed < 1.0


# -- 2 -------------------------------------------------------------------------

def _conv(k, cin, cout):
    return k ** 3 * cin * cout + cout


@criterion(2, "parameter census matches hand-summed oracle; closest-convention delta reported")
def test_parameter_census():
    hand = {1: _conv(3, 1, 64) + _conv(3, 64, 64), 2: 0, 3: _conv(3, 64, 128) + _conv(3, 128, 128), 4: 0,
            5: _conv(3, 128, 256) + _conv(3, 256, 256), 6: 0, 7: _conv(3, 256, 512) + _conv(3, 512, 512),
            8: _conv(2, 512, 512), 9: _conv(3, 768, 256) + _conv(3, 256, 256), 10: _conv(2, 256, 256),
            11: _conv(3, 384, 128) + _conv(3, 128, 128), 12: _conv(2, 128, 128),
            13: _conv(3, 192, 64) + _conv(3, 64, 64), 14: _conv(1, 64, 2)}
    assert _conv(3, 1, 64) == 1792
    census = count_parameters(default_network())
    assert dict(census.per_block) == hand
    assert census.total == sum(hand.values())
    assert census.delta_to_published == census.total - 19_077_636 == census.total - PUBLISHED_TOTAL_PARAMETERS
    ranked = census_all_conventions(default_network())
    best = ranked[0]
    assert abs(best.delta_to_published) == min(abs(c.delta_to_published) for c in ranked)
    print(f"census total {census.total}, closest convention total {best.total}, delta {best.delta_to_published:+d}")


# -- 3 -------------------------------------------------------------------------

@criterion(3, "20 corrupted phantoms: 1 component, 2 TPs, 0 BPs, both MCDs <= 0.8 mm, < 60 s")
def test_phantom_recovery(phantom_runs):
    runs, elapsed = phantom_runs
    failures = []
    for ph, res in runs:
        final = res.final
        pts = detect_points(final)
        n = label_components(final).n
        gp, pg = mcd(ph.centerline, final), mcd(final, ph.centerline)
        print(f"seed {ph.config.seed:2d}: components {n} TPs {len(pts.terminals)} BPs {len(pts.branches)} "
              f"MCD-GP {gp:.3f} MCD-PG {pg:.3f}")
        if not (n == 1 and len(pts.terminals) == 2 and not pts.branches and gp <= 0.8 and pg <= 0.8):
            failures.append(ph.config.seed)
    assert len(runs) == 20
    assert failures == []
    assert elapsed < 60.0


# -- 4 -------------------------------------------------------------------------

def _loop_metrics(p, g):
    tp = fp = fn = tn = 0
    for idx in itertools.product(range(8), repeat=3):
        a, b = bool(p[idx]), bool(g[idx])
        if a and b:
            tp += 1
        elif a:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    div = lambda n, d: n / d if d else 0.0
    pr, rc = div(tp, tp + fp), div(tp, tp + fn)
    fc = div(tp, tp + 0.5 * (fp + fn))
    canal, bg = div(tp, tp + fp + fn), div(tn, tn + fp + fn)
    return pr, rc, fc, canal, (canal + bg) / 2


@criterion(4, "metrics equal brute-force oracles; MCD within 1e-9; F1 = 2 IoU / (1 + IoU)")
def test_metric_oracles():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        dens = rng.uniform(0.05, 0.95, 2)
        p, g = rng.random((8, 8, 8)) < dens[0], rng.random((8, 8, 8)) < dens[1]
        c = confusion(p, g)
        assert (precision(c), recall(c), f1(c), iou(c), mean_iou(p, g)) == _loop_metrics(p, g)
        assert f1(c) == pytest.approx(2 * iou(c) / (1 + iou(c)), abs=1e-12)
    for _ in range(100):
        n, m = rng.integers(1, 201, 2)
        a, b = rng.uniform(-50, 50, (n, 3)), rng.uniform(-50, 50, (m, 3))
        oracle = sum(min(math.dist(x, y) for y in b) for x in a) / n
        assert abs(mcd(a, b) - oracle) <= 1e-9


# -- 5 -------------------------------------------------------------------------

@criterion(5, "49-voxel component removed, 50-voxel component kept")
def test_size_boundary():
    m = np.zeros((60, 5, 5), np.uint8)
    m[0:49, 1, 1] = 1
    m[0:50, 3, 3] = 1
    out = remove_small_components(label_components(m))
    assert not out[:, 1, 1].any()
    assert out[:, 3, 3].sum() == 50 and out.sum() == 50


# -- 6 -------------------------------------------------------------------------

def _corners(dim, size=64, stride=54):
    out = list(range(0, dim - size + 1, stride))
    if out[-1] + size < dim:
        out.append(dim - size)
    return out


@criterion(6, "patch extract + OR merge reproduces the source; corners match stride-54/clamp oracle")
@pytest.mark.parametrize("dims", [(64, 64, 64), (100, 100, 100), (118, 118, 118), (64, 100, 118)])
def test_patch_round_trip(dims):
    data = (np.random.default_rng(sum(dims)).random(dims) < 0.2).astype(np.uint8)
    ps = extract_patches(BinaryVolume(data), (64, 64, 64), (10, 10, 10))
    assert sorted(ps.corners) == sorted(itertools.product(*(_corners(d) for d in dims)))
    assert np.array_equal(merge_patches(ps).data, data)


# -- 7 -------------------------------------------------------------------------

def _summation_rule(m):
    padded = np.pad(m, 1)
    tps, bps = [], []
    for x, y, z in np.argwhere(m):
        s = int(padded[x:x + 3, y:y + 3, z:z + 3].sum())
        if s == 2:
            tps.append((x, y, z))
        elif s > 3:
            bps.append((x, y, z))
    return sorted(tps), sorted(bps)


def _voxels(shape, pts):
    m = np.zeros(shape, np.uint8)
    for p in pts:
        m[p] = 1
    return m


@criterion(7, "terminal/branch detection follows the 3x3x3 summation rule")
def test_point_detection_rule():
    line = _voxels((20, 5, 5), [(x, 2, 2) for x in range(3, 15)])
    j = (10, 10, 10)
    arms = [j] + [(10 - i, 10, 10) for i in range(1, 9)] + [(10 + i, 10 + i, 10) for i in range(1, 9)] \
        + [(10 + i, 10 - i, 10) for i in range(1, 4)]
    y = _voxels((24, 24, 24), arms)
    single = _voxels((3, 3, 3), [(1, 1, 1)])
    cases = [(line, [(3, 2, 2), (14, 2, 2)], []), (y, [(2, 10, 10), (13, 7, 10), (18, 18, 10)], [j]),
             (single, [], [])]
    for m, tps, bps in cases:
        pts = detect_points(m)
        assert (sorted(pts.terminals), sorted(pts.branches)) == _summation_rule(m) == (tps, bps)


# -- 8 -------------------------------------------------------------------------

@criterion(8, "resampling invariances, clip window and normalization endpoints")
def test_resampling_and_intensity():
    const = ScalarVolume(np.full((7, 9, 5), 123.25), Spacing(0.3, 0.55, 0.8))
    assert np.all(resample_isotropic(const).data == 123.25)
    x = np.arange(100) * 0.2
    ramp = ScalarVolume(np.broadcast_to(x[:, None, None], (100, 4, 4)).copy(), Spacing(0.2, 0.4, 0.4))
    out = resample_isotropic(ramp)
    assert np.max(np.abs(out.data[:, 2, 2] - np.arange(out.dims[0]) * 0.4)) <= 1e-6
    clipped = clip_intensity(ScalarVolume(np.array([6000.0, -1300.0]).reshape(2, 1, 1)))
    assert clipped.data.ravel().tolist() == [3095.0, -1000.0]
    n = normalize(ScalarVolume(np.array([-1000.0, 3095.0]).reshape(2, 1, 1))).data.ravel()
    assert n[0] == 0.0 and n[1] == 1.0


# -- 9 -------------------------------------------------------------------------

@criterion(9, "volume I/O bit-exact for uint8/int16/float32; golden control points parse")
@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.float32])
def test_io_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(9)
    if dtype == np.float32:
        data = rng.normal(size=(6, 5, 4)).astype(np.float32)
    else:
        info = np.iinfo(dtype)
        data = rng.integers(info.min, info.max, (6, 5, 4), endpoint=True).astype(dtype)
    for name in ("v.mha", "v.mhd"):
        write_volume(ScalarVolume(data, Spacing(0.4, 0.4, 0.5), (1.5, -2.0, 0.25)), tmp_path / name)
        back = read_volume(tmp_path / name, binary=False)
        assert back.data.dtype == dtype and back.data.tobytes() == data.tobytes()
    cps = read_control_points(DATA / "golden_left.asc", "left")
    assert cps.points.tolist() == [[12.4, 30.0, 8.25], [13.0, 30.4, 8.5], [14.125, 31.0, 9.0],
                                   [15.75, 31.5, 9.875], [17.0, 32.25, 10.5]]


# -- 10 ------------------------------------------------------------------------

@criterion(10, "pipeline is idempotent on all phantom seeds and thread-count independent")
def test_idempotence_and_determinism(phantom_runs):
    runs, _ = phantom_runs
    for ph, res in runs:
        again = run_pipeline(res.final, PipelineParams(), keep_steps=False).final
        assert again.data.tobytes() == res.final.data.tobytes(), f"seed {ph.config.seed}"
    for ph, res in runs[:3]:
        threaded = run_pipeline(ph.prediction, PipelineParams(threads=8), keep_steps=False).final
        assert threaded.data.tobytes() == res.final.data.tobytes()


@criterion(10, "pipeline is idempotent on all phantom seeds and thread-count independent")
def test_cli_threads_byte_identical(tmp_path, phantom_runs):
    from canaltrace.cli import main

    ph, _ = phantom_runs[0][0]
    write_volume(ph.prediction, tmp_path / "p.mha")
    for t in ("1", "8"):
        main(["postprocess", str(tmp_path / "p.mha"), str(tmp_path / f"o{t}.mha"), "--threads", t])
    assert (tmp_path / "o1.mha").read_bytes() == (tmp_path / "o8.mha").read_bytes()


# -- 11 ------------------------------------------------------------------------

@criterion(11, "post-processing a 300^3 phantom completes in < 10 s")
def test_performance_300():
    ph = make_phantom(PhantomConfig(seed=0, dims=(300, 300, 300)))
    t0 = time.perf_counter()
    res = run_pipeline(ph.prediction, PipelineParams(), keep_steps=False)
    elapsed = time.perf_counter() - t0
    print(f"300^3 post-processing: {elapsed:.2f} s ({', '.join(f'{k} {v:.2f}' for k, v in res.timings.items())})")
    assert label_components(res.final).n == 1
    assert elapsed < 10.0
