"""Uncertainty-masked label diffusion: masks, geo-noise, schedules, refinement.

The refinement pipeline marks low-confidence and boundary pixels as uncertain,
then runs a masked denoising diffusion process over an encoded label map:
noise only ever touches uncertain pixels, and certain pixels are re-anchored
to the initial labels after every step.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError
from .metrics import one_hot

__all__ = [
    "NoiseSchedule", "build_uncertainty", "decode_labels", "edge_uncertainty",
    "encode_binary", "encode_labels", "forward_diffuse", "mixed_pixel_noise",
    "noise_schedule_build", "occlusion_noise", "probability_uncertainty",
    "refine", "region_combine", "registration_warp", "reverse_step",
]

TRANSLATION_BOUND = 1.5
LINEAR_BOUND_LO = 1e-5
LINEAR_BOUND_HI = 1e-3


# ---- uncertainty masks -------------------------------------------------


def probability_uncertainty(probs, rho):
    """Pixels whose winning class probability is at most ``rho``.

    ``probs`` is (C, H, W) per-pixel class distributions.
    """
    probs = np.asarray(probs)
    return probs.max(axis=0) <= rho


def edge_uncertainty(label, buffer_radius):
    """Pixels within Chebyshev distance ``buffer_radius`` of a class boundary.

    A pixel is on a boundary when any 4-neighbor carries a different label;
    radius zero returns exactly those pixels.
    """
    label = np.asarray(label)
    boundary = np.zeros(label.shape, dtype=bool)
    horiz = label[:, 1:] != label[:, :-1]
    boundary[:, 1:] |= horiz
    boundary[:, :-1] |= horiz
    vert = label[1:, :] != label[:-1, :]
    boundary[1:, :] |= vert
    boundary[:-1, :] |= vert
    if buffer_radius == 0 or not boundary.any():
        return boundary
    pad = np.pad(boundary, buffer_radius, constant_values=False)
    side = 2 * buffer_radius + 1
    return sliding_window_view(pad, (side, side)).any(axis=(-2, -1))


def region_combine(u1, u2):
    """Union the two uncertainty sources; the complement is the certain set."""
    u = np.asarray(u1, dtype=bool) | np.asarray(u2, dtype=bool)
    return u, ~u


def build_uncertainty(probs, label, rho, buffer_radius):
    """(uncertain, certain) masks from probabilities and the initial labels."""
    return region_combine(probability_uncertainty(probs, rho),
                          edge_uncertainty(label, buffer_radius))


# ---- geo-knowledge noise sources ---------------------------------------


def mixed_pixel_noise(m_i, m_j, m_k, alpha, beta):
    """Convex per-band blend of three source pixels: a synthetic mixed pixel."""
    if alpha < 0 or beta < 0 or alpha + beta > 1:
        raise ParameterError(
            f"mixed-pixel weights need alpha, beta >= 0 and alpha+beta <= 1, "
            f"got alpha={alpha} beta={beta}")
    m_i = np.asarray(m_i)
    return alpha * m_i + beta * np.asarray(m_j) + (1.0 - alpha - beta) * np.asarray(m_k)


def occlusion_noise(image, label, occluder, position):
    """Paste an occluder patch over the image; the label raster is untouched.

    ``position`` is the (row, col) of the patch's top-left corner. The ground
    truth deliberately keeps the covered classes: models must learn to see
    through the occluder.
    """
    del label  # never modified; listed to document the invariance
    image = np.asarray(image)
    occluder = np.asarray(occluder)
    y, x = position
    oh, ow = occluder.shape[:2]
    h, w = image.shape[:2]
    if y < 0 or x < 0 or y + oh > h or x + ow > w:
        raise ParameterError(
            f"occluder of size {(oh, ow)} at {(y, x)} leaves the {(h, w)} image")
    out = image.copy()
    out[y:y + oh, x:x + ow] = occluder
    return out


def _sample_bilinear_replicated(image, ys, xs):
    """Sample (H, W[, C]) at fractional rows/cols, replicating edge pixels."""
    h, w = image.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if image.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def registration_warp(image, coeffs=(0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
                      deltas=(0.0,) * 6):
    """Resample an image through a perturbed affine coordinate map.

    The output at (x, y) takes the input at x' = (a0+da0) + (a1+da1)x +
    (a2+da2)y and the analogous y'; ``coeffs`` is (a0, a1, a2, b0, b1, b2) and
    ``deltas`` the perturbations. Translation perturbations are limited to
    magnitude 1.5; linear ones must be zero or have magnitude in
    [1e-5, 1e-3]. Out-of-range source positions replicate the nearest edge.
    """
    da0, da1, da2, db0, db1, db2 = deltas
    for name, d in (("da0", da0), ("db0", db0)):
        if abs(d) > TRANSLATION_BOUND:
            raise ParameterError(
                f"warp translation {name}={d} exceeds |{TRANSLATION_BOUND}|")
    for name, d in (("da1", da1), ("da2", da2), ("db1", db1), ("db2", db2)):
        if d != 0.0 and not LINEAR_BOUND_LO <= abs(d) <= LINEAR_BOUND_HI:
            raise ParameterError(
                f"warp coefficient {name}={d} must be 0 or have magnitude in "
                f"[{LINEAR_BOUND_LO}, {LINEAR_BOUND_HI}]")
    image = np.asarray(image)
    a0, a1, a2, b0, b1, b2 = (c + d for c, d in zip(coeffs, deltas))
    h, w = image.shape[:2]
    ys_idx, xs_idx = np.mgrid[0:h, 0:w]
    xs = a0 + a1 * xs_idx + a2 * ys_idx
    ys = b0 + b1 * xs_idx + b2 * ys_idx
    if deltas == (0.0,) * 6 and tuple(coeffs) == (0.0, 1.0, 0.0, 0.0, 0.0, 1.0):
        return image.copy()
    return _sample_bilinear_replicated(image, ys, xs)


# ---- noise schedule and the masked diffusion process -------------------


@dataclass
class NoiseSchedule:
    """Per-step variances with precomputed survival products.

    ``G[t]`` is the cumulative product of (1 - mu) through step t, with
    ``G[0] = 1``.
    """

    timesteps: int
    mu: np.ndarray
    g: np.ndarray
    G: np.ndarray

    def posterior_variance(self, t):
        denom = 1.0 - self.G[t]
        if denom <= 0.0:
            return 0.0
        return float((1.0 - self.G[t - 1]) / denom * self.mu[t - 1])


def noise_schedule_build(timesteps, mu_min, mu_max):
    """Linear variance ramp from ``mu_min`` to ``mu_max`` over ``timesteps``.

    ``mu_min = mu_max = 0`` is accepted as a degenerate test mode in which the
    process is the identity.
    """
    if timesteps < 1:
        raise ParameterError(f"schedule needs at least 1 timestep, got {timesteps}")
    if not 0.0 <= mu_min <= mu_max < 1.0:
        raise ParameterError(
            f"schedule variances need 0 <= mu_min <= mu_max < 1, "
            f"got [{mu_min}, {mu_max}]")
    mu = np.linspace(mu_min, mu_max, timesteps)
    g = 1.0 - mu
    big_g = np.concatenate([[1.0], np.cumprod(g)])
    return NoiseSchedule(timesteps=timesteps, mu=mu, g=g, G=big_g)


def encode_labels(label, num_classes, dtype=np.float64):
    """Integer raster to a (C, H, W) map of +1 on the class channel, -1 off."""
    return one_hot(np.asarray(label), num_classes, dtype=dtype) * 2.0 - 1.0


def encode_binary(mask, dtype=np.float64):
    """Binary raster to a single-channel +1/-1 map."""
    return (np.asarray(mask, dtype=dtype) * 2.0 - 1.0)[None]


def decode_labels(h):
    """Argmax decode of a (C, H, W) diffusion state back to integer labels."""
    return np.argmax(np.asarray(h), axis=0)


def forward_diffuse(h0, t, schedule, uncertain, rng):
    """Noise the state to step ``t``: sqrt(G_t) h0 + sqrt(1-G_t) phi inside
    the uncertain set, untouched elsewhere.

    Returns (h_t, phi) with phi zeroed outside the uncertain set; ``h0`` may
    carry leading batch axes. ``t = 0`` returns the state unchanged without
    consuming randomness.
    """
    h0 = np.asarray(h0)
    uncertain = np.asarray(uncertain, dtype=bool)
    if t == 0:
        return h0.copy(), np.zeros_like(h0)
    big_g = schedule.G[t]
    phi = rng.standard_normal(h0.shape).astype(h0.dtype, copy=False)
    phi = np.where(uncertain, phi, 0.0)
    h_t = np.where(uncertain,
                   math.sqrt(big_g) * h0 + math.sqrt(1.0 - big_g) * phi, h0)
    return h_t, phi


def reverse_step(h_t, t, denoiser, schedule, uncertain, cond, h0, rng):
    """One ancestral denoising update; certain pixels re-anchor to ``h0``.

    ``denoiser(cond, state, t)`` is called with batch axes added and must
    return the predicted noise. The final step (t = 1) adds no sampling noise
    because the posterior variance vanishes there.
    """
    if t < 1:
        raise ParameterError(f"reverse_step needs t >= 1, got {t}")
    h_t = np.asarray(h_t)
    uncertain = np.asarray(uncertain, dtype=bool)
    out = denoiser(np.asarray(cond)[None], h_t[None], t)
    phi_hat = np.asarray(getattr(out, "data", out), dtype=h_t.dtype)[0]
    remaining = 1.0 - schedule.G[t]
    if remaining <= 0.0:
        mean = h_t
    else:
        mean = (h_t - schedule.mu[t - 1] / math.sqrt(remaining) * phi_hat) \
            / math.sqrt(schedule.g[t - 1])
    sigma = math.sqrt(schedule.posterior_variance(t))
    z = rng.standard_normal(h_t.shape).astype(h_t.dtype, copy=False)
    stepped = mean + sigma * z
    return np.where(uncertain, stepped, h0)


def refine(probs, label, image, denoiser, schedule, rho, buffer_radius, rng,
           task="seg"):
    """Re-estimate labels inside the uncertain set by reverse diffusion.

    Builds the uncertainty partition from ``probs`` and ``label``, starts from
    pure noise inside it, runs every reverse step conditioned on ``image``
    (channels-first), and decodes. Certain pixels always keep their initial
    label. Returns (refined labels, counts report).
    """
    probs = np.asarray(probs)
    label = np.asarray(label)
    uncertain, certain = build_uncertainty(probs, label, rho, buffer_radius)
    report = {"uncertain": int(uncertain.sum()), "certain": int(certain.sum())}
    if not uncertain.any():
        report["changed"] = 0
        return label.copy(), report
    if task == "cd":
        h0 = encode_binary(label)
    else:
        h0 = encode_labels(label, probs.shape[0])
    h = np.where(uncertain, rng.standard_normal(h0.shape), h0)
    for t in range(schedule.timesteps, 0, -1):
        h = reverse_step(h, t, denoiser, schedule, uncertain, image, h0, rng)
    if task == "cd":
        estimate = (h[0] > 0).astype(label.dtype)
    else:
        estimate = decode_labels(h).astype(label.dtype)
    refined = np.where(uncertain, estimate, label)
    report["changed"] = int((refined != label).sum())
    return refined, report
