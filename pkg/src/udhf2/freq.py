"""Frequency decompositions: one-level Haar DWT and DFT octave-band split.

Pure numpy transforms of image planes. Component index 1 is the highest
frequency in both domains (HH for the wavelet side, the outermost spectral
annulus for the Fourier side); index 4 is the lowest and carries DC.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError

# Python float, not np.float64: a numpy scalar would promote float32 inputs.
INV_SQRT2 = float(1.0 / np.sqrt(2.0))


def _analysis_pairs(x, axis):
    """Split `axis` into non-overlapping pairs and return (low, high) halves."""
    x = np.moveaxis(x, axis, -1)
    a = x[..., 0::2]
    b = x[..., 1::2]
    low = (a + b) * INV_SQRT2
    high = (a - b) * INV_SQRT2
    return np.moveaxis(low, -1, axis), np.moveaxis(high, -1, axis)


def dwt_haar_decompose(image):
    """One-level separable Haar analysis over the two trailing axes.

    Filters rows first, then columns. Returns components ordered high to low:
    [HH, LH, HL, LL], each at half resolution. LH is row-low / column-high.
    """
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"Haar analysis needs even trailing dims, got {h}x{w}")
    low_r, high_r = _analysis_pairs(image, -2)
    ll, lh = _analysis_pairs(low_r, -1)
    hl, hh = _analysis_pairs(high_r, -1)
    return [hh, lh, hl, ll]


def dwt_haar_reconstruct(components):
    """Invert `dwt_haar_decompose`; exact for orthonormal Haar."""
    hh, lh, hl, ll = components
    for c in (lh, hl, ll):
        if c.shape != hh.shape:
            raise DimensionError(
                f"subband shapes disagree: {hh.shape} vs {c.shape}")

    def synth_pairs(low, high, axis):
        low = np.moveaxis(low, axis, -1)
        high = np.moveaxis(high, axis, -1)
        out = np.empty(low.shape[:-1] + (low.shape[-1] * 2,), dtype=low.dtype)
        out[..., 0::2] = (low + high) * INV_SQRT2
        out[..., 1::2] = (low - high) * INV_SQRT2
        return np.moveaxis(out, -1, axis)

    low_r = synth_pairs(ll, lh, -1)
    high_r = synth_pairs(hl, hh, -1)
    return synth_pairs(low_r, high_r, -2)


def dft2(image):
    """2-D DFT of the trailing axes with 1/(WH) forward normalization.

    F(0,0) equals the image mean; real input gives a conjugate-symmetric
    spectrum.
    """
    h, w = image.shape[-2:]
    return np.fft.fft2(image, axes=(-2, -1)) / (w * h)


def idft2(spectrum):
    """Inverse of `dft2`."""
    h, w = spectrum.shape[-2:]
    return np.fft.ifft2(spectrum, axes=(-2, -1)) * (w * h)


def band_masks(h, w, dtype=np.float64):
    """Four boolean masks over DFT bins: octave annuli of normalized radius.

    Radius is scaled so the Nyquist frequency maps to 1 and clamped there, so
    the corner bins land in band 1. Bands: (0.5,1], (0.25,0.5], (0.125,0.25],
    [0,0.125]; every bin belongs to exactly one band and band 4 contains DC.
    """
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    r = np.minimum(2.0 * np.sqrt(fy * fy + fx * fx), 1.0)
    edges = [0.5, 0.25, 0.125]
    masks = [r > edges[0],
             (r > edges[1]) & (r <= edges[0]),
             (r > edges[2]) & (r <= edges[1]),
             r <= edges[2]]
    return [m.astype(dtype) for m in masks]


def band_split(image):
    """Real-space octave-band components of the trailing axes, high to low.

    Each component is the real part of the inverse transform of the spectrum
    restricted to one annulus; the four components sum back to the image.
    """
    h, w = image.shape[-2:]
    spectrum = dft2(image)
    comps = []
    for mask in band_masks(h, w, dtype=spectrum.real.dtype):
        comps.append(np.real(idft2(spectrum * mask)).astype(image.dtype, copy=False))
    return comps


def decompose_both(image):
    """(non_stationary, stationary) component lists for an image stack."""
    return dwt_haar_decompose(image), band_split(image)
