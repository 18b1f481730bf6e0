"""Differentiable training losses for segmentation, refinement, and change maps.

All losses take prediction Tensors plus plain-array targets and return scalar
Tensors suitable for backpropagation. Probabilities are expected, not logits.
"""

import numpy as np

from . import tensor as T
from .errors import DimensionError

__all__ = ["EPS", "cd_hybrid_loss", "seg_hybrid_loss", "soft_f1", "uncertain_loss"]

EPS = 1e-7


def _pixels(shape):
    n, _, h, w = shape
    return n * h * w


def seg_hybrid_loss(probs, target, gamma):
    """Blend of cross-entropy and a per-pixel ratio dice term.

    ``probs`` is (N, C, H, W) per-pixel class distributions; ``target`` the
    matching one-hot array. ``gamma`` weights cross-entropy, ``1 - gamma``
    weights dice. Zero exactly when the prediction is one-hot correct.
    """
    probs = T.as_tensor(probs)
    target = np.asarray(target, dtype=probs.data.dtype)
    if probs.data.shape != target.shape:
        raise DimensionError(
            f"seg_hybrid_loss shape mismatch: {probs.data.shape} vs {target.shape}")
    npix = _pixels(probs.data.shape)
    ce = -(T.log(T.clip(probs, EPS, 1.0)) * target).sum() / npix
    overlap = (probs * target / (probs + target + EPS)).sum()
    dice = 1.0 - 2.0 * overlap / npix
    return gamma * ce + (1.0 - gamma) * dice


def soft_f1(probs, target, mask):
    """Differentiable F1 from probability-mass confusion counts inside ``mask``.

    Accumulates per-channel probability mass against the target indicators, so
    it serves one-hot class maps and binary change maps alike. Hard 0/1
    inputs reproduce the integer-count F1 exactly.
    """
    probs = T.as_tensor(probs)
    target = np.asarray(target, dtype=probs.data.dtype)
    m = np.broadcast_to(np.asarray(mask, dtype=probs.data.dtype),
                        (probs.data.shape[0],) + probs.data.shape[2:])
    m = m[:, None]
    tp = (probs * (target * m)).sum()
    fp = (probs * ((1.0 - target) * m)).sum()
    fn = ((1.0 - probs) * (target * m)).sum()
    return 2.0 * tp / (2.0 * tp + fp + fn + EPS)


def uncertain_loss(pred_noise, true_noise, probs, target, mask, omega, task="seg"):
    """Refinement loss: noise-prediction error plus an F1 penalty, both in ``mask``.

    ``pred_noise`` is the denoiser output, ``true_noise`` the injected sample;
    ``probs``/``target`` are the label estimate and truth used by the F1 term.
    ``omega`` weights the noise term; an empty mask makes the loss zero.
    """
    mask = np.asarray(mask, dtype=bool)
    covered = int(mask.sum())
    if covered == 0:
        return T.Tensor(np.zeros((), dtype=T.as_tensor(pred_noise).data.dtype))
    pred_noise = T.as_tensor(pred_noise)
    true_noise = np.asarray(true_noise, dtype=pred_noise.data.dtype)
    m = np.broadcast_to(mask.astype(pred_noise.data.dtype),
                        (pred_noise.data.shape[0],) + pred_noise.data.shape[2:])
    m = m[:, None]
    diff = pred_noise - true_noise
    denom = float(m.sum()) * pred_noise.data.shape[1]
    l_diff = (diff * diff * m).sum() / denom
    del task  # segmentation and change maps share the mass-count F1
    l_edge = 1.0 - soft_f1(probs, target, mask)
    return omega * l_diff + (1.0 - omega) * l_edge


def cd_hybrid_loss(probs, target, g, lambda_class):
    """Blend of class-weighted cross-entropy and dice on the change probability.

    ``probs`` holds P(change) per pixel, ``target`` the binary truth.
    ``lambda_class`` weights the change class inside the cross-entropy term;
    ``g`` weights cross-entropy against dice.
    """
    probs = T.as_tensor(probs)
    target = np.asarray(target, dtype=probs.data.dtype)
    if probs.data.shape != target.shape:
        raise DimensionError(
            f"cd_hybrid_loss shape mismatch: {probs.data.shape} vs {target.shape}")
    p = T.clip(probs, EPS, 1.0 - EPS)
    npix = probs.data.size
    wbce = -(lambda_class * target * T.log(p)
             + (1.0 - lambda_class) * (1.0 - target) * T.log(1.0 - p)).sum() / npix
    overlap = (p * target / (p + target + EPS)).sum()
    dice = 1.0 - 2.0 * overlap / npix
    return g * wbce + (1.0 - g) * dice
