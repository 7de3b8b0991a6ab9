"""Command-line entry points.

    texvol gen-synthetic --out scenes/shell [--seed 0] [--spec spec.toml]
    texvol train --scene DIR --out DIR [--config cfg.toml] [--seed N]
    texvol render --checkpoint F --scene DIR --frame T --view V --out base
    texvol extract-mesh --checkpoint F --out mesh.obj [--frame T]
    texvol metrics --checkpoint F --scene DIR [--heldout|--all-views]
    texvol serve --checkpoint F --scene DIR [--port N] [--replay]

``--json`` prints a machine-readable summary on stdout where applicable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p.add_argument("--config", default=None, help="TOML with [model]/[train] tables")
    p.add_argument("--checkpoint", default=None, help="model archive path")
    p.add_argument("--out", default=None, help="output path or directory")
    p.add_argument("--json", action="store_true", help="machine-readable summary")


def _load_configs(args, default_seed: int = 0):
    from .config import ModelConfig, TrainConfig, load_config

    if args.config:
        mcfg, tcfg = load_config(args.config)
    else:
        mcfg, tcfg = ModelConfig(), TrainConfig()
    if args.seed is not None:
        tcfg.seed = args.seed
    elif default_seed is not None and args.config is None:
        tcfg.seed = default_seed
    return mcfg, tcfg


def _summary(args, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload))
    else:
        for key, val in payload.items():
            print(f"{key}: {val}")


def cmd_gen_synthetic(args) -> int:
    from .synthetic import SyntheticSpec, generate_synthetic, load_spec_toml

    if args.out is None:
        raise SystemExit("gen-synthetic requires --out")
    seed = 0
    if args.spec:
        spec, seed = load_spec_toml(args.spec)
    else:
        spec = SyntheticSpec()
    if args.seed is not None:
        seed = args.seed
    ds, _ = generate_synthetic(spec, seed, args.out)
    _summary(args, {"scene": args.out, "frames": ds.frames, "views": ds.views,
                    "image_size": int(ds.images.shape[2]), "seed": seed})
    return 0


def cmd_train(args) -> int:
    from .scene import load_scene
    from .train import train_model

    if args.scene is None or args.out is None:
        raise SystemExit("train requires --scene and --out")
    mcfg, tcfg = _load_configs(args)
    dataset = load_scene(args.scene)
    os.makedirs(args.out, exist_ok=True)
    model = train_model(dataset, mcfg, tcfg, out_dir=args.out)
    _summary(args, {"checkpoint": os.path.join(args.out, "model.tvck"),
                    "iterations": tcfg.iterations, "seed": tcfg.seed,
                    "parameters": sum(int(np.prod(model.store[n].shape))
                                      for n in model.store.names())})
    return 0


def _load_model(args):
    from .model import SceneModel

    if args.checkpoint is None:
        raise SystemExit("this command requires --checkpoint")
    return SceneModel.load(args.checkpoint)


def cmd_render(args) -> int:
    from .model import SceneModel
    from .render import render_image_model
    from .scene import load_scene, save_png

    if args.scene is None or args.out is None:
        raise SystemExit("render requires --scene and --out")
    model = _load_model(args)
    tcfg = SceneModel.load_train_config(args.checkpoint)
    dataset = load_scene(args.scene)
    if not 0 <= args.frame < model.cfg.frames:
        raise SystemExit(f"frame {args.frame} outside 0..{model.cfg.frames - 1}")
    if not 0 <= args.view < dataset.views:
        raise SystemExit(f"view {args.view} outside 0..{dataset.views - 1}")
    seed = args.seed if args.seed is not None else tcfg.seed
    c, a = render_image_model(model, dataset.cameras[args.view], args.frame,
                              n_coarse=tcfg.n_coarse, n_fine=tcfg.n_fine,
                              seed=seed, view=args.view)
    base = args.out[:-4] if args.out.endswith(".png") else args.out
    color_path, alpha_path = base + ".png", base + "_alpha.png"
    save_png(color_path, c)
    save_png(alpha_path, a)
    _summary(args, {"color": color_path, "alpha": alpha_path,
                    "frame": args.frame, "view": args.view})
    return 0


def cmd_extract_mesh(args) -> int:
    from .mesh import extract_mesh, save_mesh_obj

    if args.out is None:
        raise SystemExit("extract-mesh requires --out")
    model = _load_model(args)
    mesh = extract_mesh(model, args.frame, resolution=args.resolution,
                        iso=args.iso)
    save_mesh_obj(args.out, mesh)
    _summary(args, {"mesh": args.out, "vertices": int(mesh.vertices.shape[0]),
                    "triangles": int(mesh.faces.shape[0]), "frame": args.frame})
    return 0


def cmd_metrics(args) -> int:
    from .metrics import compute_report, format_report
    from .model import SceneModel
    from .scene import load_scene

    if args.scene is None:
        raise SystemExit("metrics requires --scene")
    model = _load_model(args)
    tcfg = SceneModel.load_train_config(args.checkpoint)
    dataset = load_scene(args.scene)
    views = None
    if args.all_views:
        views = list(range(dataset.views))
    elif args.heldout:
        if not 0 <= dataset.heldout_view < dataset.views:
            raise SystemExit("scene has no held-out view")
        views = [dataset.heldout_view]
    seed = args.seed if args.seed is not None else tcfg.seed
    report = compute_report(model, dataset, n_coarse=tcfg.n_coarse,
                            n_fine=tcfg.n_fine, seed=seed,
                            alpha_floor=tcfg.alpha_floor, views=views,
                            out_dir=args.out)
    if args.json:
        print(json.dumps(report))
    else:
        print(format_report(report), end="")
    return 0


def cmd_serve(args) -> int:
    from .service import load_session, serve

    if args.scene is None:
        raise SystemExit("serve requires --scene")
    if args.checkpoint is None:
        raise SystemExit("serve requires --checkpoint")
    state = load_session(args.scene, args.checkpoint, journal=args.journal,
                         mesh_resolution=args.resolution,
                         seed=args.seed if args.seed is not None else 0,
                         replay=args.replay)
    serve(state, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texvol",
                                     description="editable dynamic textured volume toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic scene")
    _add_common(p)
    p.add_argument("--spec", default=None, help="synthetic spec TOML")
    p.set_defaults(fn=cmd_gen_synthetic)

    p = sub.add_parser("train", help="optimize a scene")
    _add_common(p)
    p.add_argument("--scene", default=None, help="scene directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("render", help="render a frame/view from a checkpoint")
    _add_common(p)
    p.add_argument("--scene", default=None, help="scene directory (cameras)")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--view", type=int, default=0)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("extract-mesh", help="marching-cubes preview mesh")
    _add_common(p)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--iso", type=float, default=None)
    p.set_defaults(fn=cmd_extract_mesh)

    p = sub.add_parser("metrics", help="evaluation report")
    _add_common(p)
    p.add_argument("--scene", default=None, help="scene directory")
    p.add_argument("--heldout", action="store_true", help="held-out view only")
    p.add_argument("--all-views", action="store_true", help="every view")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("serve", help="run the local edit service")
    _add_common(p)
    p.add_argument("--scene", default=None, help="scene directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8712)
    p.add_argument("--resolution", type=int, default=64, help="preview mesh grid")
    p.add_argument("--journal", default=None, help="edit journal path")
    p.add_argument("--replay", action="store_true", help="replay the journal")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: "list[str] | None" = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
