"""Command line entry point: ``canaltrace <subcommand> ...``.

Exit codes: 0 success, 1 finished with a computation warning, 2 usage or
input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .centerline import rasterize_centerline, scale_to_grid, tube_from_centerline
from .imageio import format_report, read_control_points, read_volume, write_report, write_volume
from .metrics import evaluate
from .netspec import count_parameters, default_network, format_table, PUBLISHED_TOTAL_PARAMETERS
from .patching import PATCH_OVERLAP, PATCH_SIZE, classify_patch, extract_patches
from .phantom import PhantomConfig, make_phantom
from .postprocess import PipelineParams, run_pipeline, split_left_right
from .volume import (BinaryVolume, Geometry, ScalarVolume, TARGET_SPACING_MM, clip_intensity, normalize,
                     resample_isotropic, zero_pad_to)

log = logging.getLogger("canaltrace")

EXIT_OK, EXIT_WARN, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _triple(text, kind=float):
    parts = text.replace("x", ",").split(",")
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected one or three values, got {text!r}")
    return tuple(kind(p) for p in parts)


def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {p}")
    return p


class _Timer:
    def __init__(self):
        self.stages = {}

    def __call__(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.stages[name] = round(time.perf_counter() - t0, 6)
        log.info("%s: %.3f s", name, self.stages[name])
        return out


def _write_manifest(args, outputs, extra=None):
    if not getattr(args, "manifest", None):
        return
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k not in ("func", "manifest")}
    doc = {
        "tool": "canaltrace",
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "parameters": params,
        "outputs": [str(o) for o in outputs],
    }
    doc.update(extra or {})
    Path(args.manifest).parent.mkdir(parents=True, exist_ok=True)
    Path(args.manifest).write_text(json.dumps(doc, indent=2, default=str) + "\n")


# -- subcommands -----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    vol = read_volume(_existing(args.input), binary=False)
    timer = _Timer()
    if not (vol.spacing.is_isotropic and vol.spacing.sx == args.spacing):
        vol = timer("resample", resample_isotropic, vol, args.spacing)
    vol = timer("clip", clip_intensity, vol)
    vol = timer("normalize", normalize, vol)
    if args.pad:
        vol = zero_pad_to(vol, PATCH_SIZE)
    write_volume(vol, args.output)
    _write_manifest(args, [args.output], {"timings": timer.stages, "dims": list(vol.dims)})
    return EXIT_OK


def _gt_geometry(args) -> Geometry:
    if args.reference:
        ref = read_volume(_existing(args.reference))
        return ref.geometry
    if not (args.dims and args.spacing):
        raise InputError("give --reference or both --dims and --spacing")
    return Geometry(args.dims, args.spacing, args.origin or (0.0, 0.0, 0.0))


def cmd_gt(args) -> int:
    geom = _gt_geometry(args)
    out = np.zeros(geom.dims, dtype=np.uint8)
    for side, path in (("left", args.left), ("right", args.right)):
        if path is None:
            continue
        cps = read_control_points(_existing(path), side)
        poly = scale_to_grid(cps, geom)
        if args.mode == "tube":
            vol = tube_from_centerline(poly, args.diameter)
        else:
            vol = rasterize_centerline(poly, args.step)
        out |= vol.data
    if args.left is None and args.right is None:
        raise InputError("give at least one of --left / --right")
    write_volume(BinaryVolume(out, geom.spacing, geom.origin), args.output)
    _write_manifest(args, [args.output])
    return EXIT_OK


def _params(args) -> PipelineParams:
    return PipelineParams(min_size=args.min_size, sibling_dist=args.sibling_dist, bridge_dist=args.bridge_dist,
                          parallel_ratio=args.parallel_ratio, flip_sides=args.flip_sides, threads=args.threads)


def cmd_postprocess(args) -> int:
    pred = read_volume(_existing(args.input), binary=True)
    t0 = time.perf_counter()
    res = run_pipeline(pred, _params(args), keep_steps=bool(args.dump_steps))
    log.info("post-processing total: %.3f s", time.perf_counter() - t0)
    outputs = [args.output]
    write_volume(res.final, args.output)
    if args.dump_steps:
        d = Path(args.dump_steps)
        d.mkdir(parents=True, exist_ok=True)
        for name, vol in res.steps.items():
            path = d / f"{name}.mha"
            write_volume(vol, path)
            outputs.append(path)
    if args.sides:
        stem = Path(args.output)
        for name, vol in (("left", res.left), ("right", res.right)):
            path = stem.with_name(f"{stem.stem}_{name}{stem.suffix}")
            write_volume(vol, path)
            outputs.append(path)
    for w in res.warnings:
        log.warning(w)
    _write_manifest(args, outputs, {"timings": res.timings, "warnings": res.warnings,
                                       "residual_terminals": res.bridges.residual if res.bridges else []})
    return EXIT_WARN if res.warnings else EXIT_OK


def cmd_eval(args) -> int:
    pred = read_volume(_existing(args.pred), binary=True)
    gt = read_volume(_existing(args.gt), binary=True)
    if pred.dims != gt.dims:
        raise InputError(f"prediction dims {pred.dims} differ from ground truth dims {gt.dims}")
    warn = False
    if args.per_side:
        pl, pr = split_left_right(pred)
        gl, gr = split_left_right(gt)
        pairs = [("left", pl, gl), ("right", pr, gr)]
    else:
        pairs = [(None, pred.data, gt.data)]
    texts = []
    for side, p, g in pairs:
        rep = evaluate(BinaryVolume(p, pred.spacing, pred.origin), BinaryVolume(g, gt.spacing, gt.origin),
                       gt.geometry, args.tube_diameter)
        for e in rep.errors:
            log.warning("%s%s", f"{side}: " if side else "", e)
        warn = warn or bool(rep.errors)
        text = format_report(rep)
        if side:
            text = "".join(f"{side}_{line}\n" for line in text.splitlines())
        texts.append(text)
        if args.output:
            out = Path(args.output)
            write_report(rep, out if side is None else out.with_name(f"{out.stem}_{side}{out.suffix}"))
    sys.stdout.write("".join(texts))
    _write_manifest(args, [args.output] if args.output else [])
    return EXIT_WARN if warn else EXIT_OK


def cmd_phantom(args) -> int:
    overrides = {}
    if args.family:
        overrides["family"] = args.family
    if args.dims:
        overrides["dims"] = args.dims
    if args.clean:
        overrides.update(thicken_radius=0, spur_count=0, break_count=0, clutter_count=0, noise_count=0)
    for flag in ("spur_count", "break_count", "clutter_count", "noise_count", "thicken_radius"):
        v = getattr(args, flag)
        if v is not None:
            overrides[flag] = v
    cfg = PhantomConfig(seed=args.seed, **overrides)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i in range(args.index, args.index + args.count):
        ph = make_phantom(cfg, i)
        prefix = out / f"phantom_{args.seed}_{i}"
        for name, vol in (("centerline", ph.centerline), ("tube", ph.tube), ("prediction", ph.prediction)):
            path = Path(f"{prefix}_{name}.mha")
            write_volume(vol, path)
            outputs.append(path)
        mpath = Path(f"{prefix}_artifacts.json")
        mpath.write_text(json.dumps(ph.manifest(), indent=2) + "\n")
        outputs.append(mpath)
    _write_manifest(args, outputs, {"config": asdict(cfg)})
    return EXIT_OK


def cmd_netspec(args) -> int:
    net = default_network()
    census = count_parameters(net)
    sys.stdout.write(format_table(net) + "\n\n")
    lines = [f"block_{i}_params {n}" for i, n in census.per_block]
    lines += [f"total_params {census.total}", f"published_total_params {PUBLISHED_TOTAL_PARAMETERS}",
              f"delta_params {census.delta_to_published}"]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_patch(args) -> int:
    vol = read_volume(_existing(args.input))
    if args.pad:
        vol = zero_pad_to(vol, args.size)
    ps = extract_patches(vol, args.size, args.overlap)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for n, (corner, payload) in enumerate(ps):
        path = out / f"patch_{n:04d}.mha"
        cls = BinaryVolume if isinstance(vol, BinaryVolume) else ScalarVolume
        write_volume(cls(payload, vol.spacing, vol.origin), path)
        index.append({"file": path.name, "corner": list(corner), "class": classify_patch(payload)})
    (out / "patches.json").write_text(json.dumps({"size": list(ps.size), "overlap": list(ps.overlap),
                                                  "source_dims": list(ps.source_dims), "patches": index},
                                                 indent=2) + "\n")
    _write_manifest(args, [out / "patches.json"])
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for stage timings, -vv for debug")
    common.add_argument("--threads", type=int, default=1, help="worker threads (never changes outputs)")
    common.add_argument("--manifest", help="write a JSON manifest of inputs, parameters and versions")

    parser = argparse.ArgumentParser(prog="canaltrace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="resample, clip and normalize an intensity volume")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--spacing", type=float, default=TARGET_SPACING_MM)
    p.add_argument("--pad", action="store_true", help="zero-pad axes shorter than one patch")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("gt", parents=[common], help="centerline or tube ground truth from control points")
    p.add_argument("--left")
    p.add_argument("--right")
    p.add_argument("--reference", help="volume whose geometry the output copies")
    p.add_argument("--dims", type=lambda t: _triple(t, int))
    p.add_argument("--spacing", type=_triple)
    p.add_argument("--origin", type=_triple)
    p.add_argument("--mode", choices=("centerline", "tube"), default="centerline")
    p.add_argument("--diameter", type=float, default=3.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("postprocess", parents=[common], help="refine a binary prediction into centerlines")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--min-size", type=int, default=PipelineParams.min_size)
    p.add_argument("--sibling-dist", type=float, default=PipelineParams.sibling_dist)
    p.add_argument("--bridge-dist", type=float, default=PipelineParams.bridge_dist)
    p.add_argument("--parallel-ratio", type=float, default=PipelineParams.parallel_ratio)
    p.add_argument("--flip-sides", action="store_true", help="smaller-x component is the left side")
    p.add_argument("--sides", action="store_true", help="also write <output>_left and <output>_right")
    p.add_argument("--dump-steps", metavar="DIR", help="write step1..step6 intermediates")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("eval", parents=[common], help="score a centerline prediction against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--tube-diameter", type=float, default=3.0)
    p.add_argument("--per-side", action="store_true")
    p.add_argument("-o", "--output", help="also write the report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("phantom", parents=[common], help="write seeded synthetic phantoms")
    p.add_argument("outdir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--family", choices=("straight", "arc", "helix", "mixed"))
    p.add_argument("--dims", type=lambda t: _triple(t, int))
    p.add_argument("--clean", action="store_true", help="no corruption")
    for flag in ("spur-count", "break-count", "clutter-count", "noise-count", "thicken-radius"):
        p.add_argument(f"--{flag}", type=int)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("netspec", parents=[common], help="print the network shape table and parameter census")
    p.set_defaults(func=cmd_netspec)

    p = sub.add_parser("patch", parents=[common], help="tile a volume into overlapping patches")
    p.add_argument("input")
    p.add_argument("outdir")
    p.add_argument("--size", type=lambda t: _triple(t, int), default=PATCH_SIZE)
    p.add_argument("--overlap", type=lambda t: _triple(t, int), default=PATCH_OVERLAP)
    p.add_argument("--pad", action="store_true")
    p.set_defaults(func=cmd_patch)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, ValueError) as exc:
        # format, control-point and geometry errors are all ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
