"""Command-line interface.

Subcommands: `rig gen`, `render`, `dataset gen`, `dataset validate`,
`verify`, `bench`.  A JSON config file may pre-set any flag of the chosen
subcommand (--config); values given on the command line win over the file,
which wins over built-in defaults.  Every run prints its resolved
configuration.  All randomness derives from --seed; --threads caps worker
parallelism without affecting results.  Exit codes: 0 success, 1 validation
or invariant failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


# (dest, hard default) per subcommand; config files may override any of them
_DEFAULTS = {
    "rig gen": {"seed": 0, "out": "rig.json"},
    "render": {"seed": 0, "out": "render_out", "size": 64, "resolution": 128,
               "channels": 32, "coarse": 48, "fine": 48, "maps": False,
               "threads": 0},
    "dataset gen": {"seed": 0, "out": "dataset", "kind": "dynamic", "ids": 1,
                    "motions": 1, "views": 1, "size": 64, "resolution": 256,
                    "channels": 32, "coarse": 48, "fine": 48, "points": 4000,
                    "threads": 0},
    "dataset validate": {"path": "dataset"},
    "verify": {},
    "bench": {"seed": 0, "queries": 20000, "threads": 0},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headsynth",
        description="Parametric head rig, deformation fields, tri-plane "
                    "rendering, and synthetic dataset generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file pre-setting any flag")

    rig = sub.add_parser("rig", help="rig utilities")
    rig_sub = rig.add_subparsers(dest="rig_command", required=True)
    rig_gen = rig_sub.add_parser("gen", help="write a procedural rig")
    common(rig_gen)
    rig_gen.add_argument("--seed", type=int)
    rig_gen.add_argument("--out")

    render = sub.add_parser("render",
                            help="render one dataset-style record")
    common(render)
    render.add_argument("--seed", type=int)
    render.add_argument("--out")
    render.add_argument("--size", type=_positive, help="image side in pixels")
    render.add_argument("--resolution", type=_positive,
                        help="tri-plane bake resolution")
    render.add_argument("--channels", type=_positive)
    render.add_argument("--coarse", type=_positive)
    render.add_argument("--fine", type=_positive)
    render.add_argument("--maps", action="store_const", const=True,
                        help="also write feature/opacity/depth PFM maps")
    render.add_argument("--threads", type=_positive)

    dataset = sub.add_parser("dataset", help="dataset generation/validation")
    ds_sub = dataset.add_subparsers(dest="dataset_command", required=True)
    ds_gen = ds_sub.add_parser("gen", help="generate a synthetic dataset")
    common(ds_gen)
    kind = ds_gen.add_mutually_exclusive_group()
    kind.add_argument("--dynamic", dest="kind", action="store_const",
                      const="dynamic", help="multi-motion set (default)")
    kind.add_argument("--static", dest="kind", action="store_const",
                      const="static", help="single-motion, wider shapes")
    ds_gen.add_argument("--ids", type=_positive)
    ds_gen.add_argument("--motions", type=_positive)
    ds_gen.add_argument("--views", type=_positive)
    ds_gen.add_argument("--seed", type=int)
    ds_gen.add_argument("--out")
    ds_gen.add_argument("--size", type=_positive)
    ds_gen.add_argument("--resolution", type=_positive)
    ds_gen.add_argument("--channels", type=_positive)
    ds_gen.add_argument("--coarse", type=_positive)
    ds_gen.add_argument("--fine", type=_positive)
    ds_gen.add_argument("--points", type=_positive)
    ds_gen.add_argument("--threads", type=_positive)
    ds_val = ds_sub.add_parser("validate", help="check an existing dataset")
    common(ds_val)
    ds_val.add_argument("path", nargs="?")

    verify = sub.add_parser("verify",
                            help="run the invariant suite, print a table")
    common(verify)

    bench = sub.add_parser("bench", help="micro-benchmarks")
    common(bench)
    bench.add_argument("--seed", type=int)
    bench.add_argument("--queries", type=_positive)
    bench.add_argument("--threads", type=_positive)
    return parser


def _command_key(args) -> str:
    if args.command == "rig":
        return f"rig {args.rig_command}"
    if args.command == "dataset":
        return f"dataset {args.dataset_command}"
    return args.command


def _resolve(args) -> dict:
    """Merge precedence: command line > config file > built-in defaults."""
    key = _command_key(args)
    resolved = dict(_DEFAULTS[key])
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            overlay = json.load(fh)
        unknown = set(overlay) - set(resolved)
        if unknown:
            raise ValueError(f"config keys not valid for '{key}': "
                             f"{sorted(unknown)}")
        resolved.update(overlay)
    for dest in resolved:
        given = getattr(args, dest, None)
        if given is not None:
            resolved[dest] = given
    return resolved


def _print_config(key: str, cfg: dict) -> None:
    print(f"command: {key}")
    for name in sorted(cfg):
        print(f"  {name} = {cfg[name]!r}")


def _apply_threads(cfg: dict) -> int:
    import numba

    threads = cfg.get("threads") or os.cpu_count() or 1
    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    return threads


def _cmd_rig_gen(cfg: dict) -> int:
    from .headmodel import procedural_rig, save_rig

    rig = procedural_rig(seed=cfg["seed"])
    save_rig(rig, cfg["out"])
    print(f"wrote rig: {cfg['out']} ({rig.n_vertices} vertices, "
          f"{len(rig.triangles)} triangles, shape dim {rig.shape_dim}, "
          f"expression dim {rig.expr_dim})")
    return 0


def _cmd_render(cfg: dict) -> int:
    from pathlib import Path

    from . import datagen
    from .deform import deformation_field
    from .headmodel import procedural_rig
    from .imgio import write_feature_pfm, write_pfm, write_png
    from .render import render_full
    from .triplane import COLOR_CHANNELS, bake_analytic

    _apply_threads(cfg)
    seed = cfg["seed"]
    rig = procedural_rig(seed=seed)
    ident = datagen.identity_spec(seed, 0, rig.shape_dim)
    tp, dec = bake_analytic(datagen.identity_field(ident.seed),
                            cfg["resolution"], cfg["channels"])
    motion = datagen.sample_motion(seed, 0, 0, rig.expr_dim)
    field = deformation_field(rig, ident.shape, motion.expression, motion.pose)
    cam = datagen.sample_camera(
        datagen._stream(seed, 3, 0, 0, 0)).to_camera(cfg["size"])
    background = datagen.background_features(
        ident.background_seed, cfg["size"], cfg["size"], COLOR_CHANNELS)
    full = render_full(tp, tp, dec, rig, ident.shape, motion.expression,
                       motion.pose, cam, background,
                       rng=datagen._stream(seed, 6, 0, 0, 0),
                       n_coarse=cfg["coarse"], n_fine=cfg["fine"], field=field)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "preview.png", np.clip(full.i_lr[..., :3], 0.0, 1.0))
    written = ["preview.png"]
    if cfg["maps"]:
        write_feature_pfm(out / "i_lr.pfm", full.i_lr)
        write_pfm(out / "opa.pfm", full.i_opa)
        write_pfm(out / "depth.pfm", full.i_depth)
        written += ["i_lr.pfm", "opa.pfm", "depth.pfm"]
    print(f"wrote {', '.join(written)} to {out}")
    return 0


def _cmd_dataset_gen(cfg: dict) -> int:
    from . import datagen
    from .headmodel import procedural_rig

    threads = _apply_threads(cfg)
    rig = procedural_rig(seed=cfg["seed"])
    bake = datagen.BakeSpec(resolution=cfg["resolution"],
                            channels=cfg["channels"], image_size=cfg["size"],
                            n_coarse=cfg["coarse"], n_fine=cfg["fine"],
                            point_count=cfg["points"])
    t0 = time.time()
    if cfg["kind"] == "static":
        manifest = datagen.make_static_set(rig, bake, cfg["ids"],
                                           cfg["views"], cfg["seed"],
                                           cfg["out"], threads=threads)
    else:
        manifest = datagen.make_dynamic_set(rig, bake, cfg["ids"],
                                            cfg["motions"], cfg["views"],
                                            cfg["seed"], cfg["out"],
                                            threads=threads)
    print(f"wrote {len(manifest['records'])} records to {cfg['out']} "
          f"in {time.time() - t0:.1f} s")
    return 0


def _cmd_dataset_validate(cfg: dict) -> int:
    from .datagen import validate_dataset

    report = validate_dataset(cfg["path"])
    print(report.to_text(), end="")
    return 0 if report.passed else 1


def _cmd_verify(cfg: dict) -> int:
    from .verification import format_table, run_verification

    results = run_verification()
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def _cmd_bench(cfg: dict) -> int:
    from .deform import build_sf_grid, closest_point_on_mesh, deformation_field
    from .headmodel import (
        ExpressionCode,
        PoseCode,
        ShapeCode,
        evaluate_mesh,
        procedural_rig,
    )
    from .render import camera_from_angles, render_genhead
    from .triplane import bake_analytic, default_head_field

    _apply_threads(cfg)
    rng = np.random.default_rng(cfg["seed"])
    rig = procedural_rig(seed=cfg["seed"])
    alpha = ShapeCode.zeros(rig.shape_dim)
    beta = ExpressionCode.zeros(rig.expr_dim)
    gamma = PoseCode(np.zeros(3), np.zeros(3), np.array([0.0, 0.3, 0.0]))
    mesh = evaluate_mesh(rig, alpha, beta, gamma)

    queries = rng.uniform(-0.5, 0.5, size=(cfg["queries"], 3))
    closest_point_on_mesh(mesh, queries[:64])  # warm compiled kernels
    t0 = time.time()
    closest_point_on_mesh(mesh, queries)
    t_cp = time.time() - t0
    print(f"closest-point: {cfg['queries']} queries in {t_cp * 1e3:.1f} ms "
          f"({cfg['queries'] / max(t_cp, 1e-9):,.0f}/s)")

    t0 = time.time()
    build_sf_grid(rig, alpha, beta, gamma, 32)
    print(f"grid build 32^3: {(time.time() - t0) * 1e3:.1f} ms")

    tp, dec = bake_analytic(default_head_field(), 128)
    field = deformation_field(rig, alpha, beta, gamma)
    cam = camera_from_angles(0.1, -0.2, 0.0, 4.0, width=64, height=64)
    render_genhead(tp, tp, dec, field, cam, np.random.default_rng(0), 8, 8)
    t0 = time.time()
    render_genhead(tp, tp, dec, field, cam, np.random.default_rng(0), 48, 48)
    print(f"render 64x64 (48+48): {(time.time() - t0) * 1e3:.1f} ms")
    return 0


_RUNNERS = {
    "rig gen": _cmd_rig_gen,
    "render": _cmd_render,
    "dataset gen": _cmd_dataset_gen,
    "dataset validate": _cmd_dataset_validate,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    key = _command_key(args)
    try:
        cfg = _resolve(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_config(key, cfg)
    try:
        return _RUNNERS[key](cfg)
    except ValueError as exc:  # contract/validation/parse failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
