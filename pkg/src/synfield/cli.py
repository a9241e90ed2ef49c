"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import config as configlib, data as datalib, diff, task2d
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericError, SynfieldError
from .loss import LossWeights
from .metrics import EvalReport, psnr, ssim
from .model import build_model, render_view
from .optim import train


def _save_png(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _write_history(path, history):
    with open(path, "w") as f:
        for rec in history:
            f.write(json.dumps(rec) + "\n")


def _parse_overrides(items):
    overrides = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key] = value
    return overrides


def _load_train_config(args):
    cfg = configlib.load_config(args.config) if args.config \
        else configlib.make_config(preset=args.preset)
    overrides = _parse_overrides(args.set)
    if args.iters is not None:
        overrides["total_iters"] = str(args.iters)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return configlib.apply_overrides(cfg, overrides) if overrides else cfg


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = datalib.load_blender(args.data, split=args.split,
                                   downscale=args.downscale,
                                   near=cfg.near, far=cfg.far,
                                   bbox=(np.asarray(cfg.bbox_min),
                                         np.asarray(cfg.bbox_max)))
    eval_view = None
    if args.eval_data:
        eval_set = datalib.load_blender(args.eval_data, split=args.eval_split,
                                        downscale=args.downscale,
                                        near=cfg.near, far=cfg.far)
        eval_view = eval_set.view(0)
    model = cfg.build_model()
    model, adam, history = train(model, dataset, cfg, eval_view=eval_view,
                                 dump_path=str(out / "diverged_batch.npz"))
    save_checkpoint(out / "model.ckpt", model, adam, cfg.total_iters, cfg)
    _write_history(out / "metrics.jsonl", history)
    print(f"trained {cfg.total_iters} iterations; checkpoint at {out / 'model.ckpt'}")
    return 0


def cmd_render(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.config
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cams = datalib.orbit_cameras(args.frames, size=args.size,
                                 near=cfg.near, far=cfg.far)
    for k, cam in enumerate(cams):
        t = None
        if cfg.mode == "dynamic4d":
            t = args.time if args.time is not None else k / max(args.frames - 1, 1)
        img = render_view(ck.model, cam, cfg.n_samples,
                          (cfg.bbox_min, cfg.bbox_max), cfg.background, time=t)
        _save_png(out / f"frame_{k:03d}.png", img)
    print(f"wrote {args.frames} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.config
    dataset = datalib.load_blender(args.data, split=args.split,
                                   downscale=args.downscale,
                                   near=cfg.near, far=cfg.far)
    psnrs, ssims = [], []
    for k in range(len(dataset.cameras)):
        cam, truth, t = dataset.view(k)
        img = render_view(ck.model, cam, cfg.n_samples,
                          (cfg.bbox_min, cfg.bbox_max), cfg.background, time=t)
        psnrs.append(psnr(img, truth))
        ssims.append(ssim(img, truth))
    report = EvalReport(psnrs, ssims)
    text = "\n".join(report.lines())
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_regress2d(args) -> int:
    target, mask = datalib.make_image2d_target(args.target, size=args.size,
                                               mask_fraction=args.mask_fraction,
                                               seed=args.seed)
    cfg = task2d.Regression2DConfig(target_size=args.size, iters=args.iters,
                                    mask_fraction=args.mask_fraction,
                                    seed=args.seed)
    model, history = task2d.fit2d(cfg, target, mask, dtype=np.float32)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    full = task2d.render_partial(model, target.shape[:2], "full")
    coord = task2d.render_partial(model, target.shape[:2], "coord_only")
    _save_png(out / "fitted.png", full)
    _save_png(out / "coord_only.png", coord)
    _save_png(out / "target.png", target)
    spec_full = task2d.avg_magnitude_spectrum(full)
    spec_coord = task2d.avg_magnitude_spectrum(coord)
    lines = [
        f"iterations={args.iters}",
        f"visible_psnr={task2d.masked_psnr(full, target, mask):.4f}",
        f"masked_psnr={task2d.masked_psnr(full, target, ~mask):.4f}",
        f"spectrum_full={spec_full:.6f}",
        f"spectrum_coord_only={spec_coord:.6f}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    _write_history(out / "metrics.jsonl", history)
    print("\n".join(lines))
    return 0


def cmd_spectrum(args) -> int:
    img = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float64) / 255.0
    print(f"{task2d.avg_magnitude_spectrum(img):.6f}")
    return 0


def cmd_make_scene(args) -> int:
    if args.scene == "spheres":
        scene = datalib.three_sphere_scene()
        times = None
    elif args.scene == "moving-sphere":
        scene = datalib.moving_sphere_scene()
        times = np.linspace(0.0, 1.0, args.views)
    else:
        raise ConfigError(f"unknown scene {args.scene!r}")
    out = Path(args.out)
    dataset = datalib.make_scene_dataset(scene, args.views, size=args.size,
                                         n_samples=args.samples, times=times,
                                         split=args.split)
    datalib.save_blender(dataset, out, split=args.split)
    print(f"wrote {args.views} views to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    for trial in range(100):
        rng = np.random.default_rng([args.seed, trial])
        model = build_model(mode="static3d", channels=2, spatial_res=4, width=8,
                            rng=rng, grid_scale=0.5, dtype=np.float64)
        diff.nudge_from_kinks(model, 1e-3)
        pos = rng.random((2, 4, 3))
        batch = diff.RenderBatch(pos, np.full((2, 4), 0.3), np.ones((2, 4), bool),
                                 rng.random((2, 3)), np.ones(3))
        if diff.relu_margin(model, batch) > 4.0 * args.step:
            break
    weights = LossWeights(lap=0.01, lap_factor=2.5, sparsity=1e-3)
    report = diff.check_gradients(model, batch, weights, step=args.step,
                                  tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    if not report.passed:
        raise NumericError(f"gradient check failed: worst group "
                           f"{report.worst[0]} at {report.worst[1]:.3e}")
    print(f"gradient check passed at tolerance {args.tolerance}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synfield",
                                description="Sparse-input radiance fields: "
                                            "coordinate MLP + tensorial planes")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a field model on a dataset")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--preset", help="named preset (see config module)")
    t.add_argument("--data", required=True, help="scene directory")
    t.add_argument("--split", default="train")
    t.add_argument("--eval-data", help="directory for the held-out view")
    t.add_argument("--eval-split", default="val")
    t.add_argument("--downscale", type=int, default=1)
    t.add_argument("--out", default="runs/out")
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render an orbit from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", default="renders")
    r.add_argument("--frames", type=int, default=8)
    r.add_argument("--size", type=int, default=64)
    r.add_argument("--time", type=float, help="fixed time for dynamic scenes")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="score a checkpoint against a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--downscale", type=int, default=1)
    e.add_argument("--out", help="write the report here as well")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("regress2d", help="fit a 2-D image and report spectra")
    g.add_argument("--target", default="plaid", help="plaid, constant, or image path")
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--iters", type=int, default=2000)
    g.add_argument("--mask-fraction", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="runs/regress2d")
    g.set_defaults(func=cmd_regress2d)

    s = sub.add_parser("spectrum", help="average magnitude spectrum of an image")
    s.add_argument("--image", required=True)
    s.set_defaults(func=cmd_spectrum)

    m = sub.add_parser("make-scene", help="emit a synthetic dataset")
    m.add_argument("scene", choices=["spheres", "moving-sphere"])
    m.add_argument("--views", type=int, default=8)
    m.add_argument("--size", type=int, default=64)
    m.add_argument("--samples", type=int, default=512)
    m.add_argument("--split", default="train")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_make_scene)

    c = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--step", type=float, default=1e-4)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except SynfieldError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
