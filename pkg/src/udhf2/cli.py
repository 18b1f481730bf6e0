"""The ``udhf2`` command line: data generation, training, inference, checks.

Subcommands mirror the library's pipeline. Every command takes ``--config``
(key=value file) plus overrides, seeds everything from the configuration, and
writes plain-text outputs (CSV logs, key=value metrics, netpbm rasters).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import freq, train
from .config import RunConfig, config_text, load_config, parse_config
from .diffusion import noise_schedule_build, refine
from .errors import (CheckpointError, ConfigError, DimensionError,
                     ParameterError, StructureError, UsageError)

_CLI_ERRORS = (CheckpointError, ConfigError, DimensionError, ParameterError,
               StructureError, UsageError, FileNotFoundError)
from .gradcheck import run_sweep
from .metrics import metrics_report
from .netpbm import read_ppm, write_pgm, write_ppm
from .scenes import generate_change_pair, generate_scene


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not _:
            raise SystemExit(f"--set needs key=value, got {item!r}")
        cfg = parse_config(config_text(cfg) + f"{key}={value}\n")
    if getattr(args, "seed", None) is not None:
        cfg = parse_config(config_text(cfg) + f"seed={args.seed}\n")
    cfg.validate()
    return cfg


def _add_common(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, metavar="N",
                   help="override the configuration seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")


def _image_u8(image):
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def cmd_gen_data(args):
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scale = 255 // max(cfg.num_classes - 1, 1)
    if args.task == "seg":
        for i in range(cfg.num_scenes):
            scene = generate_scene(train.scene_seed(cfg, i), cfg.image_size,
                                   cfg.image_size, cfg.num_classes)
            write_ppm(out / f"scene_{i:03d}.ppm", _image_u8(scene.image))
            write_pgm(out / f"label_{i:03d}.pgm",
                      (scene.label * scale).astype(np.uint8))
        print(f"wrote {cfg.num_scenes} scenes to {out}")
        return
    manifest = []
    for i in range(cfg.num_scenes):
        pair = generate_change_pair(train.scene_seed(cfg, i), cfg.image_size,
                                    cfg.image_size, cfg.num_classes)
        p1 = out / f"pair_{i:03d}_a.ppm"
        p2 = out / f"pair_{i:03d}_b.ppm"
        pm = out / f"pair_{i:03d}_mask.pgm"
        write_ppm(p1, _image_u8(pair.image1))
        write_ppm(p2, _image_u8(pair.image2))
        write_pgm(pm, (pair.change_mask * 255).astype(np.uint8))
        manifest.append(f"{p1}\t{p2}\t{pm}")
    (out / "pairs.tsv").write_text("\n".join(manifest) + "\n")
    print(f"wrote {cfg.num_scenes} pairs and pairs.tsv to {out}")


def cmd_decompose(args):
    cfg = _load_cfg(args)
    image = read_ppm(args.image).astype(np.float32) / 255.0
    chw = image.transpose(2, 0, 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wavelet = freq.dwt_haar_decompose(chw)
    bands = freq.band_split(chw)
    del cfg

    def dump(prefix, comps):
        for i, comp in enumerate(comps, start=1):
            plane = comp.mean(axis=0)
            lo, hi = plane.min(), plane.max()
            scaled = np.zeros_like(plane) if hi <= lo else (plane - lo) / (hi - lo)
            write_pgm(out / f"{prefix}_{i}.pgm", _image_u8(scaled))

    dump("wavelet", wavelet)
    dump("band", bands)
    print(f"wrote 4 wavelet and 4 band components to {out}")


def cmd_train(args, task):
    cfg = _load_cfg(args)
    if args.stage == 1:
        _, info = train.train_stage1(cfg, task, args.out)
        print(f"stage 1 finished at step {info['steps']}, "
              f"train score {info['score']:.4f}")
    else:
        stage1 = args.stage1_checkpoint or str(Path(args.out) / "stage1.ckpt")
        train.train_stage2(cfg, task, args.out, stage1)
        print("stage 2 finished")


def cmd_infer(args, task):
    cfg = _load_cfg(args)
    stage2 = args.stage2_checkpoint
    result = train.evaluate(cfg, task, args.out, args.checkpoint,
                            stage2_checkpoint=stage2,
                            with_refine=stage2 is not None)
    rep = result["report"]
    line = (f"miou={rep.miou:.4f} oa={rep.oa:.4f}" if task == "seg"
            else f"iou={rep.iou:.4f} f1={rep.f1:.4f}")
    print(f"initial: {line}")
    if result["refined_report"] is not None:
        rep = result["refined_report"]
        line = (f"miou={rep.miou:.4f} oa={rep.oa:.4f}" if task == "seg"
                else f"iou={rep.iou:.4f} f1={rep.f1:.4f}")
        print(f"refined: {line}")


def cmd_refine(args):
    cfg = _load_cfg(args)
    probs = np.load(args.probs)
    image = read_ppm(args.image).astype(np.float32) / 255.0
    cond = image.transpose(2, 0, 1)
    task = args.task
    if task == "cd":
        second = read_ppm(args.image2).astype(np.float32) / 255.0
        cond = np.concatenate([cond, second.transpose(2, 0, 1)], axis=0)
    label = probs.argmax(axis=0)
    denoiser = train.build_denoiser(cfg, task, np.random.default_rng(cfg.seed + 1))
    from .checkpoint import apply_state, load_checkpoint
    apply_state(denoiser, load_checkpoint(args.checkpoint))
    schedule = noise_schedule_build(cfg.diffusion_steps, cfg.mu_min, cfg.mu_max)
    rng = np.random.default_rng(cfg.seed + 2)
    refined, info = refine(probs, label, cond, denoiser, schedule, cfg.rho,
                           cfg.buffer_radius, rng, task=task)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    classes = probs.shape[0] if task == "seg" else 2
    scale = 255 // max(classes - 1, 1)
    write_pgm(out / "refined.pgm", (refined * scale).astype(np.uint8))
    text = (f"uncertain={info['uncertain']}\ncertain={info['certain']}\n"
            f"changed={info['changed']}\n")
    (out / "refine_report.txt").write_text(text)
    print(text, end="")


def cmd_eval(args, task):
    cfg = _load_cfg(args)
    preds = np.load(args.pred)
    truth = np.load(args.truth)
    classes = cfg.num_classes if task == "seg" else 2
    rep = metrics_report(preds, truth, task=task, num_classes=classes)
    text = rep.to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_grad_check(args):
    cfg = _load_cfg(args)
    results = run_sweep(instances=args.instances, seed=cfg.seed)
    lines = [f"{name}: max relative error {err:.3e}"
             for name, err in results.items()]
    worst = max(results.values())
    lines.append(f"overall worst: {worst:.3e}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grad_check.txt").write_text(text)
    print(text, end="")
    if worst >= 1e-4:
        raise SystemExit("gradient check failed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="udhf2",
        description="frequency-stream segmentation and change detection "
                    "with diffusion refinement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic scenes or pairs")
    _add_common(p)
    p.add_argument("--task", choices=("seg", "cd"), default="seg")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("decompose", help="write frequency components of an image")
    _add_common(p)
    p.add_argument("--image", required=True, help="PPM input")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_decompose)

    for task in ("seg", "cd"):
        p = sub.add_parser(f"train-{task}", help=f"train the {task} pipeline")
        _add_common(p)
        p.add_argument("--stage", type=int, choices=(1, 2), default=1)
        p.add_argument("--out", required=True)
        p.add_argument("--stage1-checkpoint",
                       help="stage-1 weights (default: <out>/stage1.ckpt)")
        p.set_defaults(fn=cmd_train, task=task)

        p = sub.add_parser(f"infer-{task}",
                           help=f"evaluate the {task} pipeline on its scenes")
        _add_common(p)
        p.add_argument("--checkpoint", required=True, help="stage-1 weights")
        p.add_argument("--stage2-checkpoint",
                       help="adds diffusion refinement when given")
        p.add_argument("--out", required=True)
        p.set_defaults(fn=cmd_infer, task=task)

    p = sub.add_parser("eval", help="score stored predictions (.npy)")
    _add_common(p)
    p.add_argument("--task", choices=("seg", "cd"), default="seg")
    p.add_argument("--pred", required=True, help=".npy integer predictions")
    p.add_argument("--truth", required=True, help=".npy integer truth")
    p.add_argument("--out", help="write the key=value report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("refine", help="re-estimate uncertain pixels of one map")
    _add_common(p)
    p.add_argument("--task", choices=("seg", "cd"), default="seg")
    p.add_argument("--probs", required=True, help=".npy (C,H,W) probabilities")
    p.add_argument("--image", required=True, help="conditioning PPM")
    p.add_argument("--image2", help="second frame (cd task)")
    p.add_argument("--checkpoint", required=True, help="stage-2 weights")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("grad-check",
                       help="finite-difference check of every operation family")
    _add_common(p)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--out", help="write the report here")
    p.set_defaults(fn=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "task") and args.fn in (cmd_train, cmd_infer, cmd_eval):
            args.fn(args, args.task)
        else:
            args.fn(args)
    except _CLI_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
