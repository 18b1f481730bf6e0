"""Render the synthetic aerial scenes the training harness runs on.

Each scene is a seeded arrangement of ground, vegetation, a road band,
buildings, cars, and trees, with mixed-pixel edges and partial occlusion
baked in. Change pairs re-render the same scene after adding and removing
buildings under a small affine registration error. The script writes color
images, label rasters, and change masks under ``out/scenes/`` and prints a
per-class pixel census.
"""

from pathlib import Path

import numpy as np

from udhf2.netpbm import image_to_uint8, write_pgm, write_ppm
from udhf2.scenes import generate_change_pair, generate_scene

OUT = Path(__file__).parent / "out" / "scenes"
CLASS_NAMES = ["ground", "vegetation", "road", "building", "car", "tree"]


def census(label):
    counts = np.bincount(label.reshape(-1), minlength=len(CLASS_NAMES))
    return "  ".join(f"{name}={int(n)}" for name, n in zip(CLASS_NAMES, counts))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    print("single scenes:")
    for seed in range(3):
        scene = generate_scene(seed, 64, 64)
        write_ppm(OUT / f"scene_{seed}.ppm", image_to_uint8(scene.image))
        write_pgm(OUT / f"label_{seed}.pgm",
                  (scene.label * (255 // 5)).astype(np.uint8))
        print(f"  seed {seed}: {census(scene.label)}")

    print("\nchange pairs (building edits + registration warp):")
    for seed in range(2):
        pair = generate_change_pair(seed, 64, 64)
        write_ppm(OUT / f"pair_{seed}_before.ppm", image_to_uint8(pair.image1))
        write_ppm(OUT / f"pair_{seed}_after.ppm", image_to_uint8(pair.image2))
        write_pgm(OUT / f"pair_{seed}_change.pgm",
                  (pair.change_mask * 255).astype(np.uint8))
        print(f"  seed {seed}: {int(pair.change_mask.sum())} changed pixels")
    print(f"\nrasters written under {OUT}")


if __name__ == "__main__":
    main()
