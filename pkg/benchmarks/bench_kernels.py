"""Compare the compiled and pure-Python kernel backends on phantom-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np
from scipy import ndimage as ndi

from canaltrace import kernels
from canaltrace.phantom import PhantomConfig, make_phantom
from canaltrace.postprocess import PipelineParams, raster_sorted, run_pipeline, skeletonize


def _with_backend(impl, fn, *args, **kw):
    # swap the module-level backend for an end-to-end timing
    saved = kernels._impl
    kernels._impl = impl
    try:
        return fn(*args, **kw)
    finally:
        kernels._impl = saved


def workloads():
    ph = make_phantom(PhantomConfig(seed=0))
    tube = ph.tube.data
    skel = skeletonize(tube)
    skel_pts = np.argwhere(skel)
    bbox = ndi.find_objects(tube)[0]
    crop = np.ascontiguousarray(tube[bbox])
    shell = crop & ~ndi.binary_erosion(crop).astype(np.uint8)
    # the pipeline runs geodesics on per-component crops, not the full grid
    skel_crop = np.ascontiguousarray(skel[ndi.find_objects(skel)[0]])
    seed = tuple(np.argwhere(skel_crop)[0])
    centres = ph.curve.to_voxel().points
    pred = ph.prediction
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 1 << 27, 2000)
    return {
        "neighbor_counts": lambda impl: kernels.neighbor_counts(skel, skel_pts, impl),
        "geodesic": lambda impl: kernels.geodesic(skel_crop, seed, impl),
        "thin_redundant": lambda impl: kernels.thin_redundant(crop, raster_sorted(np.argwhere(shell)), impl),
        "is_simple": lambda impl: [impl.is_simple(int(b) & ~(1 << 13)) for b in bits],
        "full pipeline": lambda impl: _with_backend(impl, run_pipeline, pred, PipelineParams(), keep_steps=False),
        "stamp_spheres": lambda impl: kernels.stamp_spheres(np.zeros(tube.shape, np.uint8), centres, 1.5,
                                                            ph.tube.spacing, impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the Python backend is timed")
    names = sorted(backends)
    print(f"{'kernel':<16}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for kernel, fn in workloads().items():
        if kernel == "is_simple":
            # both backends cache this lookup; clear between runs so each repeat does real work
            clear = getattr(backends["python"].is_simple, "cache_clear", lambda: None)
        else:
            clear = lambda: None
        times = {}
        for n in names:
            def run():
                clear()
                fn(backends[n])
            times[n] = min(timeit.repeat(run, number=1, repeat=args.repeat))
        row = f"{kernel:<16}" + "".join(f"{times[n] * 1e3:>10.1f}ms" for n in names)
        if len(names) == 2:
            row += f"{times['python'] / times['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
