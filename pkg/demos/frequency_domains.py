"""Walk through the two frequency decompositions behind the encoder.

A rendered scene image is split twice: into Haar wavelet components (the
non-stationary view, localized in space) and into Fourier octave bands (the
stationary view, localized in frequency). Both are exact partitions — the
script verifies reconstruction and energy accounting, prints where the
image's energy lives, and writes each component as a PGM raster next to
this file under ``out/frequency/``.
"""

from pathlib import Path

import numpy as np

from udhf2.freq import (band_split, dwt_haar_decompose, dwt_haar_reconstruct)
from udhf2.netpbm import write_pgm
from udhf2.scenes import generate_scene

OUT = Path(__file__).parent / "out" / "frequency"


def normalized_raster(component):
    lo, hi = component.min(), component.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    return ((component - lo) * scale).astype(np.uint8)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(seed=7, h=64, w=64)
    image = scene.image.transpose(2, 0, 1).astype(np.float64)  # CHW
    energy = float(np.sum(image * image))
    print(f"scene image: shape={image.shape} energy={energy:.3f}")

    wavelet = dwt_haar_decompose(image)
    names = ["LL (approximation)", "LH (horizontal)",
             "HL (vertical)", "HH (diagonal)"]
    print("\nwavelet components (exact partition of the energy):")
    for name, comp in zip(names, wavelet):
        share = float(np.sum(comp * comp)) / energy
        print(f"  {name:20s} shape={comp.shape} energy share={share:7.4f}")
        write_pgm(OUT / f"wavelet_{name[:2].lower()}.pgm",
                  normalized_raster(comp[0]))
    back = dwt_haar_reconstruct(wavelet)
    print(f"  reconstruction max error: {np.abs(back - image).max():.2e}")

    bands = band_split(image)
    print("\nFourier octave bands (sum back to the image pixelwise):")
    for k, band in enumerate(bands, start=1):
        share = float(np.sum(band * band)) / energy
        label = "highest" if k == 1 else ("lowest, carries DC" if k == 4 else "")
        print(f"  band {k} {label:18s} energy share={share:7.4f}")
        write_pgm(OUT / f"band_{k}.pgm", normalized_raster(band[0]))
    total = bands[0] + bands[1] + bands[2] + bands[3]
    print(f"  band-sum max error: {np.abs(total - image).max():.2e}")
    print(f"\nrasters written under {OUT}")


if __name__ == "__main__":
    main()
