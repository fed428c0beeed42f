"""Command-line interface: train / render / eval / split-table / synth.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage error.
Every command is deterministic and idempotent for identical inputs and
``--out``; ``--threads`` changes wall time, never results.

Configuration precedence for ``train``: built-in defaults, then ``--config``
JSON (keys named like TrainConfig fields, with an optional nested "render"
object), then explicit flags.  The fully resolved configuration is snapshot
to ``config.json`` in the artifact directory so runs can be replayed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as sio
from .core import ConfigurationError, FormatError, InvalidParameterError
from .densify import SplitTable, learn_split_table
from .metrics import psnr as _psnr
from .renderer import RenderConfig, render_forward
from .trainer import TrainConfig, evaluate, synth_scene, train

ABLATE_TOKENS = {
    "sparse-adam": "use_sparse_adam",
    "state-inheritance": "use_state_inheritance",
    "scaled-updates": "use_scaled_updates",
    "effective-opacity-pruning": "use_effective_opacity_pruning",
    "snr-prioritization": "use_snr_prioritization",
}


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (TrainConfig fields)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None,
                        help="rasterizer worker threads (results unchanged)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatlab",
        description="Desk-scale Gaussian-splatting training and tooling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize a cloud against a scene")
    _add_shared(p)
    p.add_argument("--scene", type=Path, required=True,
                   help="scene directory or scene.json manifest")
    p.add_argument("--out", type=Path, required=True, help="artifact directory")
    cap = p.add_mutually_exclusive_group()
    cap.add_argument("--budget", type=int, default=None,
                     help="hard Gaussian cap")
    cap.add_argument("--budget-fraction", type=float, default=None,
                     help="budget as a multiple of the initial cloud size")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--exposure", choices=("on", "off"), default=None,
                   help="per-train-image affine color compensation")
    p.add_argument("--ablate", type=str, default=None,
                   help="comma list of features to disable: "
                        + ", ".join(sorted(ABLATE_TOKENS)))
    p.add_argument("--baseline", action="store_true",
                   help="classic recipe: dense Adam + gradient-driven "
                        "clone/split + opacity resets")
    p.add_argument("--split-table", type=Path, default=None,
                   help="reuse a learned split table CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render one view of a saved cloud")
    _add_shared(p)
    p.add_argument("--ply", type=Path, required=True)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--view", type=int, required=True, help="camera id")
    p.add_argument("--out", type=Path, required=True, help="output PNG (or .npy)")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="score a saved cloud on held-out views")
    _add_shared(p)
    p.add_argument("--ply", type=Path, required=True)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--exposure", choices=("on", "off"), default="off",
                   help="also report affine-exposure-fitted PSNR")
    p.add_argument("--out", type=Path, default=None,
                   help="write the JSON report here as well as stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("split-table", help="learn the opacity->split table")
    _add_shared(p)
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument("--shift", type=float, default=0.3)
    p.add_argument("--objective", choices=("composited", "additive"),
                   default="composited")
    p.set_defaults(func=_cmd_split_table)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    _add_shared(p)
    p.add_argument("--n", type=int, default=200, help="ground-truth Gaussians")
    p.add_argument("--cameras", type=int, default=24)
    p.add_argument("--size", type=int, default=96, help="image side length")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sh-degree", type=int, default=1)
    p.add_argument("--init", type=int, default=None,
                   help="initial-cloud size (default n // 10)")
    p.set_defaults(func=_cmd_synth)
    return parser


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _load_config_file(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return data


def _build_train_config(args) -> TrainConfig:
    data = _load_config_file(args.config)
    render_data = data.pop("render", {})
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    config = TrainConfig(**data)
    if render_data:
        config.render = RenderConfig(**render_data)
    if "background" in data:
        config.background = tuple(config.background)

    if args.iters is not None:
        config.iterations = args.iters
    if args.seed is not None:
        config.seed = args.seed
    if args.exposure is not None:
        config.exposure_enabled = args.exposure == "on"
    if args.baseline:
        config.baseline_mode = True
    if args.threads is not None:
        config.render.n_threads = args.threads
    if args.ablate:
        for token in args.ablate.split(","):
            token = token.strip()
            if not token:
                continue
            if token not in ABLATE_TOKENS:
                raise ConfigurationError(
                    f"unknown --ablate token {token!r}; choose from "
                    + ", ".join(sorted(ABLATE_TOKENS)))
            setattr(config, ABLATE_TOKENS[token], False)
    return config


def _config_snapshot(config: TrainConfig) -> dict:
    snap = dataclasses.asdict(config)
    snap["background"] = list(snap["background"])
    snap["densify_end"] = config.resolved_densify_end()
    return snap


def _cmd_train(args) -> int:
    config = _build_train_config(args)
    scene = sio.load_scene(args.scene)

    if args.budget is None and args.budget_fraction is None \
            and config.budget is None:
        raise ConfigurationError("one of --budget / --budget-fraction is required")
    if args.budget is not None:
        config.budget = args.budget
    elif args.budget_fraction is not None:
        if scene.init_cloud is None:
            raise ConfigurationError("--budget-fraction needs an initial cloud")
        config.budget = max(1, round(args.budget_fraction * scene.init_cloud.count))

    table = SplitTable.load_csv(args.split_table) if args.split_table else None
    result = train(config, scene, split_table=table)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    sio.save_ply(result.cloud, out / "model.ply")
    sio.write_trace_csv(out / "metrics.csv", result.trace)
    with open(out / "config.json", "w") as fh:
        json.dump(_config_snapshot(config), fh, indent=2, sort_keys=True)
        fh.write("\n")

    bg = np.asarray(config.background)
    test_cams = scene.test_cameras
    report = {"final_loss": result.trace[-1]["loss"],
              "iterations": config.iterations,
              "budget": config.budget,
              "n_gaussians": result.cloud.count,
              "nan_rejections": result.nan_rejections}
    if test_cams:
        report["test"] = evaluate(result.cloud, test_cams, bg,
                                  render_config=config.render)
    sio.write_metrics_json(out / "metrics.json", report)

    renders = out / "renders"
    renders.mkdir(exist_ok=True)
    for cam in test_cams:
        view, _ = render_forward(result.cloud, cam, bg, config=config.render)
        sio.save_image(renders / f"view_{cam.camera_id:04d}.png", view.image)
    print(f"trained {result.cloud.count} Gaussians "
          f"(budget {config.budget}) -> {out}")
    if "test" in report:
        print(f"held-out PSNR {report['test']['mean_psnr']:.2f} dB over "
              f"{len(test_cams)} views")
    return 0


def _cmd_render(args) -> int:
    cloud = sio.load_ply(args.ply)
    scene = sio.load_scene(args.scene)
    cam = scene.camera_by_id(args.view)
    rcfg = RenderConfig(n_threads=args.threads)
    out, _ = render_forward(cloud, cam, config=rcfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    sio.save_image(args.out, out.image)
    if cam.gt_image is not None:
        print(f"view {args.view}: PSNR {_psnr(out.image, cam.gt_image):.2f} dB")
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cloud = sio.load_ply(args.ply)
    scene = sio.load_scene(args.scene)
    cams = scene.test_cameras if scene.test_ids else \
        [c for c in scene.cameras if c.gt_image is not None]
    if not cams:
        raise ConfigurationError("scene has no scoreable views")
    rcfg = RenderConfig(n_threads=args.threads)
    report = evaluate(cloud, cams, render_config=rcfg,
                      exposure_fit=args.exposure == "on")
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_split_table(args) -> int:
    table = learn_split_table(shift=args.shift, grid_size=args.grid_size,
                              objective=args.objective)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    table.save_csv(args.out)
    print(f"wrote {args.out} ({args.grid_size} opacity nodes)")
    return 0


def _cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    rcfg = RenderConfig(n_threads=args.threads)
    scene = synth_scene(n_gaussians=args.n, n_cameras=args.cameras,
                        image_size=args.size, seed=seed,
                        sh_degree=args.sh_degree, n_init=args.init,
                        render_config=rcfg)
    manifest = sio.save_scene(scene, args.out)
    print(f"wrote scene: {args.n} Gaussians, {args.cameras} cameras "
          f"({len(scene.train_ids)} train / {len(scene.test_ids)} test) "
          f"-> {manifest}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FormatError, InvalidParameterError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
