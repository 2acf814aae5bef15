"""Command-line surface: scene synthesis, rasterization, training, rendering,
evaluation and ablation sweeps.

Every command writes a ``manifest.json`` beside its outputs recording the
resolved arguments, seed and library versions, so a run is reproducible from
the manifest alone. Exit code is 0 only if all outputs were written and all
reported numbers are finite.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .querygen import build_queries
from .raster import rasterize_k, save_kzb
from .scene import (PointCloud, ViewSet, add_point_noise, load_scene,
                    make_synthetic_scene, save_scene, write_image)
from .trainer import (TrainConfig, ablate_dm, ablate_k, ablate_modules,
                      config_diff, create_state, evaluate, fit,
                      load_checkpoint, render_view, restore_state,
                      save_checkpoint, write_metrics_csv)


def _write_manifest(out_dir: Path, command: str, args: dict) -> None:
    manifest = {
        "command": command,
        "args": {k: v for k, v in args.items() if k not in ("func",)},
        "versions": {"kbuf": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True, default=str))


def _load_config(path: str | None, **overrides) -> TrainConfig:
    if path:
        cfg = TrainConfig.from_dict(json.loads(Path(path).read_text()))
    else:
        cfg = TrainConfig()
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **clean) if clean else cfg


def cmd_synth(args) -> int:
    out = Path(args.out)
    cloud, views = make_synthetic_scene(args.kind, args.points, args.views,
                                        args.res, args.seed)
    if args.noise_sigma > 0 or args.dropout > 0:
        cloud = add_point_noise(cloud, args.noise_sigma, args.dropout,
                                seed=args.seed + 1)
    save_scene(out, cloud, views)
    _write_manifest(out, "synth", vars(args))
    print(f"wrote scene with {len(cloud)} points and {len(views)} views to {out}")
    return 0


def cmd_rasterize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud, views = load_scene(args.scene)
    if not 0 <= args.view < len(views):
        print(f"view index {args.view} out of range (0..{len(views) - 1})",
              file=sys.stderr)
        return 2
    tau = args.tau if args.tau is not None else views.tau
    view = views.views[args.view]
    buf, _ = rasterize_k(cloud, view.camera, tau, args.k)
    save_kzb(out / "buffer.kzb", buf)
    mask = buf.occupied_mask()
    for layer in range(args.k):
        depth = buf.dists[:, :, layer].astype(np.float64)
        occ = mask[layer]
        img = np.zeros_like(depth)
        if occ.any():
            lo, hi = depth[occ].min(), depth[occ].max()
            span = hi - lo if hi > lo else 1.0
            img[occ] = 1.0 - (depth[occ] - lo) / span  # near = white
        write_image(out / f"layer_{layer}.png", np.repeat(img[:, :, None], 3, axis=2))
    _write_manifest(out, "rasterize", vars(args))
    print(f"wrote buffer.kzb and {args.k} depth layers to {out}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud, views = load_scene(args.scene)
    cfg = _load_config(args.config, steps=args.steps, seed=args.seed,
                       k=args.k, tau=args.tau)
    state = create_state(cfg, cloud, views,
                         cache_dir=out / "cache" if args.cache else None)
    fit(state, log_every=args.log_every)
    save_checkpoint(out / "ckpt.kbck", state)
    write_metrics_csv(out / "metrics.csv", state.history)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2,
                                                sort_keys=True))
    _write_manifest(out, "train", vars(args))
    finite = all(np.isfinite(r["psnr"]) for r in state.history)
    print(f"trained {state.step} steps; checkpoint and metrics in {out}")
    return 0 if finite else 1


def cmd_render(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud, views = load_scene(args.scene)
    expect = None
    if args.config:
        expect = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    state = restore_state(args.ckpt, cloud, views, expect=expect)
    split = args.split
    wrote = 0
    for i, vd in enumerate(state.view_data):
        if split != "all" and vd.split != split:
            continue
        img = render_view(state, i)
        write_image(out / f"render_{i:03d}.png", img)
        wrote += 1
    _write_manifest(out, "render", vars(args))
    print(f"wrote {wrote} renders to {out}")
    return 0 if wrote else 1


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud, views = load_scene(args.scene)
    state = restore_state(args.ckpt, cloud, views)
    rows = evaluate(state, args.split)
    write_metrics_csv(out / "metrics.csv", rows)
    _write_manifest(out, "eval", vars(args))
    mean_psnr = float(np.mean([r["psnr"] for r in rows])) if rows else float("nan")
    print(f"{len(rows)} views evaluated, mean PSNR {mean_psnr:.2f} dB -> {out}")
    return 0 if rows and np.isfinite(mean_psnr) else 1


def _bar_plot(path, labels, values, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([str(l) for l in labels], values, color="#4477aa")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_ablate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud, views = load_scene(args.scene)
    cfg = _load_config(args.config, steps=args.steps, seed=args.seed)
    if args.sweep == "k":
        rows = ablate_k(cloud, views, [int(v) for v in args.ks.split(",")],
                        cfg, out_csv=out / "ablate_k.csv")
        _bar_plot(out / "ablate_k.png", [r["k"] for r in rows],
                  [r["psnr"] for r in rows], "PSNR vs buffer depth")
    elif args.sweep == "modules":
        rows = ablate_modules(cloud, views, cfg, out_csv=out / "ablate_modules.csv")
        _bar_plot(out / "ablate_modules.png", [r["row"] for r in rows],
                  [r["psnr"] for r in rows], "PSNR by module configuration")
    else:  # dm
        rows = ablate_dm(cloud, views, cfg, out_csv=out / "ablate_dm.csv")
        _bar_plot(out / "ablate_dm.png", [r["dm_policy"] for r in rows],
                  [r["psnr"] for r in rows], "PSNR by direction policy")
    _write_manifest(out, "ablate", vars(args))
    ok = all(np.isfinite(r["psnr"]) for r in rows)
    print(f"{len(rows)} ablation rows -> {out}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kbuf",
        description="Point-cloud neural renderer on K-deep depth buffers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("--kind", default="textured-sphere",
                   choices=["textured-sphere", "checker-cube", "two-plane"])
    p.add_argument("--points", type=int, default=8000)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rasterize", help="dump a K-deep buffer and depth layers")
    p.add_argument("--scene", required=True)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("train", help="train on a scene directory")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--cache", action="store_true",
                   help="spill rasterized fragments to disk")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", default=None,
                   help="optional config to validate against the checkpoint")
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    p.add_argument("--scene", required=True)
    p.add_argument("--sweep", required=True, choices=["k", "modules", "dm"])
    p.add_argument("--ks", default="1,2,4,8", help="comma list for --sweep k")
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
