"""Synthetic aerial scenes: textured shapes with crisp labels and change pairs.

Images are rendered at 4x supersampling and box-averaged down, so shape
boundaries carry natural mixed pixels; labels are evaluated at pixel centers
and stay crisp. Building rectangles sit on integer pixel corners, which makes
change-mask footprints exact. Scenes are fully determined by their seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .diffusion import LINEAR_BOUND_HI, LINEAR_BOUND_LO, registration_warp
from .errors import ParameterError

__all__ = ["ChangePair", "Scene", "generate_change_pair", "generate_scene"]

SUPERSAMPLE = 4
BACKGROUND = 0
ROAD = 1
BUILDING = 2
VEGETATION = 3
TREE = 4
CAR = 5

_BASE_COLORS = {
    BACKGROUND: (0.36, 0.33, 0.29),
    ROAD: (0.47, 0.47, 0.50),
    BUILDING: (0.58, 0.27, 0.22),
    VEGETATION: (0.27, 0.52, 0.26),
    TREE: (0.10, 0.34, 0.13),
    CAR: (0.75, 0.72, 0.20),
}


@dataclass
class Scene:
    """One rendered frame: image in [0, 1], integer labels, provenance."""

    image: np.ndarray
    label: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class ChangePair:
    """Bi-temporal frames plus the building add/remove footprint mask."""

    image1: np.ndarray
    image2: np.ndarray
    change_mask: np.ndarray
    meta: dict = field(default_factory=dict)


def _check_size(h, w, num_classes):
    if h % 32 or w % 32:
        raise ParameterError(f"scene size must be divisible by 32, got {(h, w)}")
    if num_classes < 2:
        raise ParameterError(f"scenes need at least 2 classes, got {num_classes}")


def _jitter_color(rng, cls, spread=0.06):
    base = np.array(_BASE_COLORS[cls])
    return np.clip(base + rng.uniform(-spread, spread, size=3), 0.05, 0.95)


def _coverage(shape, ys, xs):
    kind = shape["kind"]
    if kind == "rect":
        y0, x0, hh, ww = shape["rect"]
        return (ys >= y0) & (ys < y0 + hh) & (xs >= x0) & (xs < x0 + ww)
    if kind == "disk":
        cy, cx, r = shape["disk"]
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    if kind == "ellipse":
        cy, cx, ry, rx = shape["ellipse"]
        return ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    y0, y1 = shape["band"]
    axis = ys if kind == "band_h" else xs
    return (axis >= y0) & (axis < y1)


def _bbox(shape):
    kind = shape["kind"]
    if kind == "rect":
        y0, x0, hh, ww = shape["rect"]
        return y0, x0, y0 + hh, x0 + ww
    if kind == "disk":
        cy, cx, r = shape["disk"]
        return cy - r, cx - r, cy + r, cx + r
    if kind == "ellipse":
        cy, cx, ry, rx = shape["ellipse"]
        return cy - ry, cx - rx, cy + ry, cx + rx
    return None  # bands span the frame; never used for overlap checks


def _overlaps(box, others, margin=1):
    if box is None:
        return False
    y0, x0, y1, x1 = box
    for other in others:
        if other is None:
            continue
        oy0, ox0, oy1, ox1 = other
        if y0 < oy1 + margin and oy0 < y1 + margin \
                and x0 < ox1 + margin and ox0 < x1 + margin:
            return True
    return False


def _place_clear_rect(rng, h, w, hh, ww, taken, tries=100):
    """A pixel-aligned rectangle avoiding the taken bounding boxes, or None."""
    for _ in range(tries):
        y0 = int(rng.integers(1, h - hh - 1))
        x0 = int(rng.integers(1, w - ww - 1))
        box = (y0, x0, y0 + hh, x0 + ww)
        if not _overlaps(box, taken):
            return y0, x0
    return None


def _sample_inventory(rng, h, w, num_classes):
    """Paint-ordered shape list; sampling order is independent of render flags."""
    shapes = []
    taken = []
    if num_classes > VEGETATION:
        for _ in range(int(rng.integers(2, 4))):
            cy, cx = rng.uniform(4, h - 4), rng.uniform(4, w - 4)
            ry, rx = rng.uniform(7, 12), rng.uniform(7, 12)
            shapes.append({"kind": "ellipse", "cls": VEGETATION,
                           "ellipse": (cy, cx, ry, rx),
                           "color": _jitter_color(rng, VEGETATION)})
    if num_classes > ROAD:
        for _ in range(int(rng.integers(1, 3))):
            kind = "band_h" if rng.random() < 0.5 else "band_v"
            extent = h if kind == "band_h" else w
            start = rng.uniform(2, extent - 12)
            shapes.append({"kind": kind, "cls": ROAD,
                           "band": (start, start + rng.uniform(6, 10)),
                           "color": _jitter_color(rng, ROAD)})
    buildings = []
    if num_classes > BUILDING:
        for _ in range(int(rng.integers(2, 5))):
            hh, ww = int(rng.integers(9, 17)), int(rng.integers(9, 17))
            spot = _place_clear_rect(rng, h, w, hh, ww, taken)
            if spot is None:
                continue
            y0, x0 = spot
            shape = {"kind": "rect", "cls": BUILDING, "rect": (y0, x0, hh, ww),
                     "color": _jitter_color(rng, BUILDING)}
            shapes.append(shape)
            buildings.append(shape)
            taken.append(_bbox(shape))
    if num_classes > CAR:
        for _ in range(int(rng.integers(1, 4))):
            hh, ww = int(rng.integers(5, 8)), int(rng.integers(6, 10))
            spot = _place_clear_rect(rng, h, w, hh, ww, taken)
            if spot is None:
                continue
            y0, x0 = spot
            shape = {"kind": "rect", "cls": CAR, "rect": (y0, x0, hh, ww),
                     "color": _jitter_color(rng, CAR, spread=0.15)}
            shapes.append(shape)
            taken.append(_bbox(shape))
    if num_classes > TREE:
        for _ in range(int(rng.integers(2, 5))):
            r = rng.uniform(3.5, 6.0)
            for _ in range(50):
                cy, cx = rng.uniform(r, h - r), rng.uniform(r, w - r)
                shape = {"kind": "disk", "cls": TREE, "disk": (cy, cx, r),
                         "color": _jitter_color(rng, TREE)}
                if not _overlaps(_bbox(shape), taken):
                    shapes.append(shape)
                    taken.append(_bbox(shape))
                    break
    return shapes, buildings


def _sample_occluders(rng, buildings):
    """One canopy disk over each of up to two buildings (image-space only)."""
    occluders = []
    for shape in buildings[:2]:
        y0, x0, hh, ww = shape["rect"]
        cy = int(rng.integers(y0 + 1, y0 + hh - 1))
        cx = int(rng.integers(x0 + 1, x0 + ww - 1))
        r = float(rng.uniform(1.5, min(3.0, hh, ww)))
        occluders.append((cy, cx, r))
    return occluders


def _render(shapes, occluders, texture, h, w, mixed_pixel):
    scale = SUPERSAMPLE if mixed_pixel else 1
    hi_ys, hi_xs = np.mgrid[0:h * scale, 0:w * scale]
    hi_ys = (hi_ys + 0.5) / scale
    hi_xs = (hi_xs + 0.5) / scale
    img = texture[::SUPERSAMPLE // scale, ::SUPERSAMPLE // scale].copy()
    lo_ys, lo_xs = np.mgrid[0:h, 0:w] + 0.5
    label = np.zeros((h, w), dtype=np.int64)
    for shape in shapes:
        img[_coverage(shape, hi_ys, hi_xs)] = shape["color"]
        label[_coverage(shape, lo_ys, lo_xs)] = shape["cls"]
    for cy, cx, r in occluders:
        disk = {"kind": "disk", "disk": (cy + 0.5, cx + 0.5, r)}
        img[_coverage(disk, hi_ys, hi_xs)] = _BASE_COLORS[TREE]
    if mixed_pixel:
        img = img.reshape(h, SUPERSAMPLE, w, SUPERSAMPLE, 3).mean(axis=(1, 3))
    return np.clip(img, 0.0, 1.0).astype(np.float32), label


def _texture(rng, h, w):
    noise = rng.uniform(-0.05, 0.05, size=(h * SUPERSAMPLE, w * SUPERSAMPLE, 3))
    return np.asarray(_BASE_COLORS[BACKGROUND]) + noise


def generate_scene(seed, h, w, num_classes=6, mixed_pixel=True, occlusion=True):
    """One seeded scene; flags toggle boundary anti-aliasing and canopies."""
    _check_size(h, w, num_classes)
    rng = np.random.default_rng(seed)
    shapes, buildings = _sample_inventory(rng, h, w, num_classes)
    occluders = _sample_occluders(rng, buildings) \
        if occlusion and num_classes > TREE else []
    texture = _texture(rng, h, w)
    image, label = _render(shapes, occluders, texture, h, w, mixed_pixel)
    meta = {"seed": seed, "shapes": shapes, "occluders": occluders}
    return Scene(image=image, label=label, meta=meta)


def _sample_warp_deltas(rng):
    da0, db0 = rng.uniform(-1.2, 1.2, size=2)
    linear = []
    for _ in range(4):
        magnitude = float(np.exp(rng.uniform(np.log(LINEAR_BOUND_LO),
                                             np.log(LINEAR_BOUND_HI))))
        linear.append(magnitude * (1.0 if rng.random() < 0.5 else -1.0))
    da1, da2, db1, db2 = linear
    return float(da0), da1, da2, float(db0), db1, db2


def generate_change_pair(seed, h, w, num_classes=6, num_add=None,
                         num_remove=None, warp=True, jitter=0.02,
                         add_size=None, mixed_pixel=True):
    """Seeded bi-temporal pair: frame 2 edits buildings, jitters, and warps.

    The change mask is the union of added and removed building footprints.
    ``num_add``/``num_remove`` override the sampled edit counts; ``add_size``
    pins the added-building size. ``warp=False`` keeps the frames aligned.
    """
    _check_size(h, w, num_classes)
    if num_classes <= BUILDING:
        raise ParameterError(
            f"change pairs need the building class, got {num_classes} classes")
    rng = np.random.default_rng(seed)
    shapes, buildings = _sample_inventory(rng, h, w, num_classes)
    if num_add is None:
        num_add = int(rng.integers(1, 3))
    if num_remove is None:
        num_remove = int(rng.integers(0, min(2, len(buildings)) + 1))
    num_remove = min(num_remove, len(buildings))
    removed = [buildings[i]
               for i in sorted(rng.choice(len(buildings), size=num_remove,
                                          replace=False).tolist())] \
        if num_remove else []
    taken = [_bbox(s) for s in shapes]
    added = []
    for _ in range(num_add):
        hh, ww = add_size if add_size is not None else (
            int(rng.integers(10, 17)), int(rng.integers(10, 17)))
        spot = _place_clear_rect(rng, h, w, hh, ww, taken)
        while spot is None and add_size is None and min(hh, ww) > 6:
            hh, ww = max(hh - 2, 6), max(ww - 2, 6)
            spot = _place_clear_rect(rng, h, w, hh, ww, taken)
        if spot is None:
            continue
        y0, x0 = spot
        shape = {"kind": "rect", "cls": BUILDING, "rect": (y0, x0, hh, ww),
                 "color": _jitter_color(rng, BUILDING)}
        added.append(shape)
        taken.append(_bbox(shape))
    if not added and not removed and num_add and buildings:
        removed = [buildings[0]]  # a requested edit must survive placement
    texture = _texture(rng, h, w)
    shapes2 = [s for s in shapes if s not in removed] + added
    image1, label1 = _render(shapes, [], texture, h, w, mixed_pixel)
    image2, _ = _render(shapes2, [], texture, h, w, mixed_pixel)
    shift = rng.uniform(-jitter, jitter, size=(1, 1, 3)) if jitter else 0.0
    image2 = np.clip(image2 + shift, 0.0, 1.0).astype(np.float32)
    deltas = _sample_warp_deltas(rng) if warp else (0.0,) * 6
    if warp:
        image2 = registration_warp(image2, deltas=deltas).astype(np.float32)
    change_mask = np.zeros((h, w), dtype=np.int64)
    edits = [s["rect"] for s in removed] + [s["rect"] for s in added]
    for y0, x0, hh, ww in edits:
        change_mask[y0:y0 + hh, x0:x0 + ww] = 1
    meta = {"seed": seed, "added": [s["rect"] for s in added],
            "removed": [s["rect"] for s in removed], "deltas": deltas,
            "jitter": jitter, "label1": label1}
    return ChangePair(image1=image1, image2=image2, change_mask=change_mask,
                      meta=meta)
