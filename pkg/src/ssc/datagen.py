"""Synthetic screen-content corpus and dataset loading.

The generator emulates typical screen material: text-like glyph rows, flat
rectangles, banded gradients, 1-px grid lines and an optional embedded
noise patch, all drawn from a small saturated palette so the images have
hard axis-aligned edges and a reduced colorspace. Every sample lands on the
1/255 grid, so PNG round trips are lossless.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import center_crop, read_image

log = logging.getLogger(__name__)

ELEMENT_KINDS = ("text", "rects", "gradient", "grid", "noise")

DEFAULT_MIX = {"text": 1.0, "rects": 1.0, "gradient": 1.0, "grid": 1.0, "noise": 1.0}


@dataclass(frozen=True)
class ScSpec:
    """Recipe for one synthetic screen-content image."""

    seed: int
    size: int = 64
    palette_size: int = 8
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))

    def __post_init__(self):
        if not (2 <= self.palette_size <= 32):
            raise ValueError("palette_size must be in 2..32")
        if self.size < 8:
            raise ValueError("size must be >= 8")
        weights = [self.mix.get(k, 0.0) for k in ELEMENT_KINDS]
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise ValueError("element mix needs nonnegative weights, at least one positive")


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [
        (v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q),
    ][i]


def _make_palette(rng: np.random.Generator, n: int) -> np.ndarray:
    """n saturated colors on the 1/255 grid; first entry is the background."""
    colors = [(0.93, 0.93, 0.93) if rng.random() < 0.5 else (0.12, 0.12, 0.18)]
    for i in range(n - 1):
        hue = (i / max(n - 1, 1) + rng.uniform(0, 0.25)) % 1.0
        sat = rng.uniform(0.75, 1.0)
        val = rng.uniform(0.55, 1.0)
        colors.append(_hsv_to_rgb(hue, sat, val))
    return np.round(np.array(colors) * 255.0) / 255.0


def _draw_rect(canvas, rng, palette):
    h, w = canvas.shape[:2]
    rw = int(rng.integers(w // 8, w // 2 + 1))
    rh = int(rng.integers(h // 8, h // 2 + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    canvas[y0 : y0 + rh, x0 : x0 + rw] = palette[rng.integers(0, len(palette))]


def _draw_text_rows(canvas, rng, palette):
    h, w = canvas.shape[:2]
    glyph_h = int(rng.integers(3, 7))
    gap = int(rng.integers(2, 5))
    y = int(rng.integers(0, max(h - glyph_h, 1)))
    rows = int(rng.integers(2, 5))
    fg = palette[rng.integers(1, len(palette))]
    for _ in range(rows):
        if y + glyph_h > h:
            break
        x = int(rng.integers(0, 4))
        while x < w:
            run = int(rng.integers(1, 7))
            if rng.random() < 0.55:  # glyph run; gaps show the background
                canvas[y : y + glyph_h, x : min(x + run, w)] = fg
            x += run + int(rng.integers(1, 3))
        y += glyph_h + gap


def _draw_gradient(canvas, rng, palette):
    """Banded gradient: flat stripes stepping through palette colors."""
    h, w = canvas.shape[:2]
    rw = int(rng.integers(w // 4, w + 1))
    rh = int(rng.integers(h // 4, h + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    n_bands = int(rng.integers(3, min(len(palette), 8) + 1))
    start = int(rng.integers(0, len(palette)))
    horizontal = rng.random() < 0.5
    extent = rw if horizontal else rh
    edges = np.linspace(0, extent, n_bands + 1).astype(int)
    for b in range(n_bands):
        color = palette[(start + b) % len(palette)]
        if horizontal:
            canvas[y0 : y0 + rh, x0 + edges[b] : x0 + edges[b + 1]] = color
        else:
            canvas[y0 + edges[b] : y0 + edges[b + 1], x0 : x0 + rw] = color


def _draw_grid(canvas, rng, palette):
    h, w = canvas.shape[:2]
    spacing = int(rng.integers(4, 13))
    phase = int(rng.integers(0, spacing))
    color = palette[rng.integers(1, len(palette))]
    canvas[:, phase::spacing] = color
    if rng.random() < 0.7:
        canvas[phase::spacing, :] = color


def _draw_noise(canvas, rng, _palette):
    h, w = canvas.shape[:2]
    pw = int(rng.integers(max(w // 8, 4), max(w // 4, 5)))
    ph = int(rng.integers(max(h // 8, 4), max(h // 4, 5)))
    x0 = int(rng.integers(0, w - pw + 1))
    y0 = int(rng.integers(0, h - ph + 1))
    canvas[y0 : y0 + ph, x0 : x0 + pw] = rng.integers(0, 256, size=(ph, pw, 3)) / 255.0


_DRAWERS = {
    "text": _draw_text_rows,
    "rects": _draw_rect,
    "gradient": _draw_gradient,
    "grid": _draw_grid,
    "noise": _draw_noise,
}


def gen_screen_image(spec: ScSpec) -> np.ndarray:
    """Deterministic synthetic screen-content image for one seed."""
    rng = np.random.default_rng(spec.seed)
    palette = _make_palette(rng, spec.palette_size)
    canvas = np.empty((spec.size, spec.size, 3))
    canvas[:] = palette[0]
    weights = np.array([spec.mix.get(k, 0.0) for k in ELEMENT_KINDS])
    probs = weights / weights.sum()
    n_elements = 5 + spec.size // 16
    for _ in range(n_elements):
        kind = ELEMENT_KINDS[rng.choice(len(ELEMENT_KINDS), p=probs)]
        _DRAWERS[kind](canvas, rng, palette)
    canvas.flags.writeable = False
    return canvas


@dataclass
class Dataset:
    items: list
    names: list
    split: str = "train"

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


class DatasetError(ValueError):
    """No usable images were found."""


def synth_dataset(count: int, size: int, seed: int, palette_size: int = 8,
                  mix: dict | None = None, split: str = "train") -> Dataset:
    """Deterministic generated corpus; seeds run seed..seed+count-1."""
    if count < 1:
        raise DatasetError("generated dataset needs count >= 1")
    items, names = [], []
    for i in range(count):
        spec = ScSpec(seed=seed + i, size=size, palette_size=palette_size,
                      mix=mix or dict(DEFAULT_MIX))
        items.append(gen_screen_image(spec))
        names.append(f"gen{seed + i:06d}")
    return Dataset(items=items, names=names, split=split)


def load_dataset_dir(path, crop: int, split: str = "train") -> Dataset:
    """Center-cropped images from a directory, in lexicographic file order.

    Undersized images are skipped with a warning; an empty result is an
    error.
    """
    path = Path(path)
    files = sorted(
        p for p in path.iterdir() if p.suffix.lower() in (".png", ".ppm", ".pnm")
    )
    items, names = [], []
    for f in files:
        img = read_image(f)
        if min(img.shape[:2]) < crop:
            log.warning("skipping %s: %dx%d smaller than crop %d",
                        f.name, img.shape[0], img.shape[1], crop)
            continue
        cropped = center_crop(img, crop)
        cropped.flags.writeable = False
        items.append(cropped)
        names.append(f.name)
    if not items:
        raise DatasetError(f"no usable images of size >= {crop} in {path}")
    return Dataset(items=items, names=names, split=split)


def batches(data: Dataset, batch_size: int):
    """Yield (B, 3, H, W) arrays in dataset order; the tail batch may be short."""
    for i in range(0, len(data.items), batch_size):
        chunk = data.items[i : i + batch_size]
        yield np.stack([np.moveaxis(img, 2, 0) for img in chunk])
