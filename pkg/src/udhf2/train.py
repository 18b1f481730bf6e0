"""Two-stage training, inference, and evaluation on synthetic scenes.

Stage 1 fits the segmentation or change network directly. Stage 2 freezes it,
builds the uncertain-pixel partition from its predictions, and trains a noise
predictor that later re-estimates exactly those pixels by reverse diffusion.
Every run is fully seeded: scene content, initialization, batch order, and
noise draws all derive from ``cfg.seed``, so repeated runs are bit-identical.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import tensor as T
from .changedet import ChangeDetectionNetwork
from .checkpoint import apply_state, load_checkpoint, save_checkpoint, state_of
from .config import config_text
from .diffusion import (build_uncertainty, encode_binary, encode_labels,
                        forward_diffuse, mixed_pixel_noise, noise_schedule_build,
                        occlusion_noise, refine, registration_warp)
from .errors import ConfigError
from .losses import cd_hybrid_loss, seg_hybrid_loss, uncertain_loss
from .metrics import metrics_report, one_hot
from .netpbm import write_pgm
from .network import DenoiserNetwork, SegmentationNetwork
from .scenes import _sample_warp_deltas, generate_change_pair, generate_scene


class AdamW(object):
    """Adam with decoupled weight decay on the raw parameters."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - (self.lr * update).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


WARMUP_STEPS = 100  # linear ramp; cold adaptive moments make full-size
CLIP_NORM = 1.0     # first steps destructive, and spikes destabilize later ones


def _scheduled_lr(base, step):
    """Base rate scaled by the linear warmup ramp."""
    if WARMUP_STEPS <= 0:
        return base
    return base * min(1.0, step / WARMUP_STEPS)


def _clip_gradients(params, limit=CLIP_NORM):
    """Scale all gradients down to a global norm of ``limit``; returns the norm."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if limit > 0 and norm > limit:
        scale = limit / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# ---- datasets ----------------------------------------------------------


def scene_seed(cfg, index):
    return cfg.seed * 1000 + index


def seg_dataset(cfg):
    """Stacked (images_nchw, labels, images_hwc) for the run's scene set."""
    scenes = [generate_scene(scene_seed(cfg, i), cfg.image_size, cfg.image_size,
                             cfg.num_classes)
              for i in range(cfg.num_scenes)]
    hwc = np.stack([s.image for s in scenes])
    images = np.ascontiguousarray(hwc.transpose(0, 3, 1, 2))
    labels = np.stack([s.label for s in scenes])
    return images, labels, hwc


def cd_dataset(cfg):
    """Stacked pair arrays: (im1_nchw, im2_nchw, masks, im1_hwc, im2_hwc)."""
    pairs = [generate_change_pair(scene_seed(cfg, i), cfg.image_size,
                                  cfg.image_size, cfg.num_classes)
             for i in range(cfg.num_scenes)]
    hwc1 = np.stack([p.image1 for p in pairs])
    hwc2 = np.stack([p.image2 for p in pairs])
    im1 = np.ascontiguousarray(hwc1.transpose(0, 3, 1, 2))
    im2 = np.ascontiguousarray(hwc2.transpose(0, 3, 1, 2))
    masks = np.stack([p.change_mask for p in pairs])
    return im1, im2, masks, hwc1, hwc2


def _batch_indices(step, batch_size, count):
    start = (step * batch_size) % count
    return np.array([(start + j) % count for j in range(batch_size)])


# ---- inference helpers -------------------------------------------------


def predict_seg_probs(net, images, batch_size):
    out = []
    for i in range(0, images.shape[0], batch_size):
        out.append(net.predict_probs(images[i:i + batch_size]).data)
    return np.concatenate(out)


def predict_cd_probs(net, im1, im2, batch_size):
    out = []
    for i in range(0, im1.shape[0], batch_size):
        out.append(net.predict_probs(im1[i:i + batch_size],
                                     im2[i:i + batch_size]).data)
    return np.concatenate(out)


def _train_score(cfg, task, net, data):
    if task == "seg":
        images, labels, _ = data
        probs = predict_seg_probs(net, images, cfg.batch_size)
        report = metrics_report(probs.argmax(axis=1), labels, task="seg",
                                num_classes=cfg.num_classes)
        return report.miou, report
    im1, im2, masks = data[:3]
    probs = predict_cd_probs(net, im1, im2, cfg.batch_size)
    report = metrics_report(probs.argmax(axis=1), masks, task="cd")
    return report.iou, report


# ---- stage 1 -----------------------------------------------------------

EVAL_EVERY = 25


def train_stage1(cfg, task, out_dir):
    """Fit the stage-1 network on the run's scenes; returns (net, summary).

    Writes config.txt, stage1_log.csv (step,loss,lr), stage1_eval.csv
    (step,score), and stage1.ckpt under ``out_dir``. Training stops early once
    the training-set score reaches ``cfg.stage1_target`` (0 disables).
    """
    if task not in ("seg", "cd"):
        raise ConfigError(f"unknown task {task!r}, expected 'seg' or 'cd'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_text(cfg))
    rng = np.random.default_rng(cfg.seed)
    if task == "seg":
        data = seg_dataset(cfg)
        images, labels = data[0], data[1]
        net = SegmentationNetwork(cfg, cfg.num_classes, rng)
        targets = one_hot(labels, cfg.num_classes)
    else:
        data = cd_dataset(cfg)
        im1, im2, masks = data[0], data[1], data[2]
        net = ChangeDetectionNetwork(cfg, rng)
        targets = masks[:, None].astype(np.float32)
    count = data[0].shape[0]
    opt = AdamW(net.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                cfg.weight_decay)
    score, report, last_step = 0.0, None, 0
    with open(out / "stage1_log.csv", "w", encoding="utf-8") as log, \
            open(out / "stage1_eval.csv", "w", encoding="utf-8") as ev:
        log.write("step,loss,lr\n")
        ev.write("step,score\n")
        for step in range(1, cfg.steps + 1):
            idx = _batch_indices(step - 1, cfg.batch_size, count)
            opt.zero_grad()
            with T.record():
                if task == "seg":
                    probs = T.softmax(net(images[idx]), axis=1)
                    loss = seg_hybrid_loss(probs, targets[idx], cfg.gamma)
                else:
                    probs = T.softmax(net(im1[idx], im2[idx]), axis=1)
                    loss = cd_hybrid_loss(probs[:, 1:2], targets[idx],
                                          cfg.cd_g, cfg.cd_lambda)
            loss.backward()
            _clip_gradients(opt.params)
            opt.lr = _scheduled_lr(cfg.lr, step)
            opt.step()
            log.write(f"{step},{loss.item():.6f},{opt.lr:g}\n")
            log.flush()
            last_step = step
            if step % EVAL_EVERY == 0 or step == cfg.steps:
                score, report = _train_score(cfg, task, net, data)
                ev.write(f"{step},{score:.6f}\n")
                ev.flush()
                if cfg.stage1_target > 0 and score >= cfg.stage1_target:
                    break
        if report is None:
            score, report = _train_score(cfg, task, net, data)
            ev.write(f"{last_step},{score:.6f}\n")
    save_checkpoint(out / "stage1.ckpt", state_of(net))
    return net, {"steps": last_step, "score": score, "report": report}


# ---- stage 2 -----------------------------------------------------------


def build_stage1(cfg, task, checkpoint_path):
    """Reconstruct the stage-1 network and load its trained weights."""
    rng = np.random.default_rng(cfg.seed)
    if task == "seg":
        net = SegmentationNetwork(cfg, cfg.num_classes, rng)
    else:
        net = ChangeDetectionNetwork(cfg, rng)
    apply_state(net, load_checkpoint(checkpoint_path))
    return net


def build_denoiser(cfg, task, rng):
    if task == "seg":
        return DenoiserNetwork(cfg, 3, cfg.num_classes, rng)
    return DenoiserNetwork(cfg, 6, 1, rng)


def _corrupt_conditioning(hwc, cfg, rng, warp=False):
    """Geo-noise on one HWC conditioning frame, per the robustness flags.

    Mixed pixels blend each frame with shifted copies of itself; occlusion
    pastes a patch cut from the frame elsewhere; registration (pair task only)
    resamples through a perturbed affine map within the modeled bounds.
    """
    img = hwc
    if cfg.mixed_pixel:
        alpha = float(rng.uniform(0.0, 0.25))
        beta = float(rng.uniform(0.0, 0.25))
        img = mixed_pixel_noise(np.roll(img, 1, axis=1),
                                np.roll(img, 1, axis=0), img, alpha, beta)
    if cfg.occlusion:
        h, w = img.shape[:2]
        size = int(rng.integers(4, max(5, h // 8)))
        sy, sx = (int(rng.integers(0, h - size)), int(rng.integers(0, w - size)))
        ty, tx = (int(rng.integers(0, h - size)), int(rng.integers(0, w - size)))
        patch = img[sy:sy + size, sx:sx + size].copy()
        img = occlusion_noise(img, None, patch, (ty, tx))
    if warp and cfg.registration:
        img = registration_warp(img, deltas=_sample_warp_deltas(rng))
    return np.ascontiguousarray(img.astype(np.float32))


def _uncertain_masks(probs, rho, buffer_radius):
    """Per-item uncertain masks from batched class probabilities."""
    preds = probs.argmax(axis=1)
    return np.stack([
        build_uncertainty(probs[i], preds[i], rho, buffer_radius)[0]
        for i in range(probs.shape[0])])


def train_stage2(cfg, task, out_dir, stage1_checkpoint):
    """Train the uncertainty-region noise predictor against the frozen stage 1.

    Writes stage2_log.csv and stage2.ckpt under ``out_dir``. Raises
    ConfigError when refinement is disabled or the stage-1 checkpoint is
    missing — stage 2 is defined relative to a trained first stage.
    """
    if cfg.disable_mudm:
        raise ConfigError("refinement is disabled (disable_mudm=true)")
    stage1_checkpoint = Path(stage1_checkpoint)
    if not stage1_checkpoint.exists():
        raise ConfigError(
            f"stage-2 training needs a stage-1 checkpoint, none at "
            f"{stage1_checkpoint}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_text(cfg))
    net = build_stage1(cfg, task, stage1_checkpoint)
    if task == "seg":
        images, labels, hwc = seg_dataset(cfg)
        probs = predict_seg_probs(net, images, cfg.batch_size)
        h0 = np.stack([encode_labels(l, cfg.num_classes, dtype=np.float32)
                       for l in labels])
        targets = one_hot(labels, cfg.num_classes)
        cond_sources = (hwc,)
    else:
        im1, im2, masks, hwc1, hwc2 = cd_dataset(cfg)
        probs = predict_cd_probs(net, im1, im2, cfg.batch_size)
        h0 = np.stack([encode_binary(m, dtype=np.float32) for m in masks])
        targets = masks[:, None].astype(np.float32)
        cond_sources = (hwc1, hwc2)
    uncertain = _uncertain_masks(probs, cfg.rho, cfg.buffer_radius)
    count = h0.shape[0]
    schedule = noise_schedule_build(cfg.diffusion_steps, cfg.mu_min, cfg.mu_max)
    rng = np.random.default_rng(cfg.seed + 1)
    denoiser = build_denoiser(cfg, task, rng)
    opt = AdamW(denoiser.parameters(), cfg.lr, cfg.beta1, cfg.beta2,
                cfg.adam_eps, cfg.weight_decay)
    with open(out / "stage2_log.csv", "w", encoding="utf-8") as log:
        log.write("step,loss,lr\n")
        for step in range(1, cfg.stage2_steps + 1):
            idx = _batch_indices(step - 1, cfg.batch_size, count)
            t = int(rng.integers(1, schedule.timesteps + 1))
            if not uncertain[idx].any():
                log.write(f"{step},0.000000,{_scheduled_lr(cfg.lr, step):g}\n")
                continue
            h_t, phi = forward_diffuse(h0[idx], t, schedule,
                                       uncertain[idx][:, None], rng)
            cond = np.concatenate(
                [np.stack([_corrupt_conditioning(src[i], cfg, rng,
                                                 warp=(task == "cd" and k == 1))
                           for i in idx]).transpose(0, 3, 1, 2)
                 for k, src in enumerate(cond_sources)], axis=1)
            opt.zero_grad()
            root_g = math.sqrt(schedule.G[t])
            root_rest = math.sqrt(1.0 - schedule.G[t])
            with T.record():
                phi_hat = denoiser(cond, h_t, t)
                h0_hat = (T.Tensor(h_t) - root_rest * phi_hat) * (1.0 / root_g)
                est = (T.softmax(h0_hat, axis=1) if task == "seg"
                       else T.sigmoid(h0_hat))
                loss = uncertain_loss(phi_hat, phi, est, targets[idx],
                                      uncertain[idx], cfg.omega, task=task)
            loss.backward()
            _clip_gradients(opt.params)
            opt.lr = _scheduled_lr(cfg.lr, step)
            opt.step()
            log.write(f"{step},{loss.item():.6f},{opt.lr:g}\n")
            log.flush()
    save_checkpoint(out / "stage2.ckpt", state_of(denoiser))
    return denoiser, {"steps": cfg.stage2_steps}


# ---- evaluation --------------------------------------------------------


def _label_raster(label, num_classes):
    """Class raster scaled onto 0..255 for PGM output."""
    scale = 255 // max(num_classes - 1, 1)
    return (label * scale).astype(np.uint8)


def evaluate(cfg, task, out_dir, stage1_checkpoint, stage2_checkpoint=None,
             with_refine=False, write_rasters=True):
    """Predict over the run's scenes, optionally refine, and report metrics.

    Writes metrics.txt (and refined_metrics.txt when refining) plus per-scene
    prediction rasters. Returns {"report": ..., "refined_report": ...}.
    """
    if with_refine and cfg.disable_mudm:
        raise ConfigError("refinement is disabled (disable_mudm=true)")
    if with_refine and stage2_checkpoint is None:
        raise ConfigError("refined evaluation needs a stage-2 checkpoint")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = build_stage1(cfg, task, stage1_checkpoint)
    if task == "seg":
        images, truth, _ = seg_dataset(cfg)
        probs = predict_seg_probs(net, images, cfg.batch_size)
        num_classes = cfg.num_classes
        cond = images
    else:
        im1, im2, truth = cd_dataset(cfg)[:3]
        probs = predict_cd_probs(net, im1, im2, cfg.batch_size)
        num_classes = 2
        cond = np.concatenate([im1, im2], axis=1)
    preds = probs.argmax(axis=1)
    report = metrics_report(preds, truth, task=task, num_classes=num_classes)
    (out / "metrics.txt").write_text(report.to_text())
    result = {"report": report, "refined_report": None}
    if write_rasters:
        for i in range(preds.shape[0]):
            write_pgm(out / f"pred_{i:03d}.pgm",
                      _label_raster(preds[i], num_classes))
    if with_refine:
        denoiser = build_denoiser(cfg, task, np.random.default_rng(cfg.seed + 1))
        apply_state(denoiser, load_checkpoint(stage2_checkpoint))
        schedule = noise_schedule_build(cfg.diffusion_steps, cfg.mu_min,
                                        cfg.mu_max)
        rng = np.random.default_rng(cfg.seed + 2)
        refined = np.empty_like(preds)
        report_lines = []
        for i in range(preds.shape[0]):
            refined[i], info = refine(probs[i], preds[i], cond[i], denoiser,
                                      schedule, cfg.rho, cfg.buffer_radius,
                                      rng, task=task)
            report_lines.append(
                f"scene={i} uncertain={info['uncertain']} "
                f"certain={info['certain']} changed={info['changed']}")
        refined_report = metrics_report(refined, truth, task=task,
                                        num_classes=num_classes)
        (out / "refined_metrics.txt").write_text(refined_report.to_text())
        (out / "refine_report.txt").write_text("\n".join(report_lines) + "\n")
        result["refined_report"] = refined_report
        if write_rasters:
            for i in range(refined.shape[0]):
                write_pgm(out / f"refined_{i:03d}.pgm",
                          _label_raster(refined[i], num_classes))
    return result
