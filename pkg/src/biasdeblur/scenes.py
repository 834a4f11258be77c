"""Latent test scenes: seeded synthetic low-light targets or image files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .imaging import Image, load_image

DEFAULT_OBJECTS = 4


def synthetic_scene(size: int, seed: int, n_objects: int = DEFAULT_OBJECTS, background: float = 0.0) -> Image:
    """A few bright disks, bars and thin lines on a dark background.

    Object count and extent scale with ``size`` so that most of the frame
    stays dark, as in a low-light exposure.
    """
    if size < 8:
        raise ValueError("scene size must be >= 8")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE7E]))
    img = np.full((size, size), float(background))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    scale = size / 64.0
    for _ in range(max(1, round(n_objects * scale))):
        value = 1.0 if rng.random() < 0.3 else rng.uniform(0.3, 1.0)
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(4, 16) * scale
        kind = rng.integers(3)
        if kind == 0:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        elif kind == 1:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r / 2)
        else:
            theta = rng.uniform(0, np.pi)
            dist = np.abs((xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta))
            mask = (dist < 1.5) & ((xx - cx) ** 2 + (yy - cy) ** 2 < (2 * r) ** 2)
        img[mask] = value
    return Image(img)


def load_scene(path, size: int) -> Image:
    """Grayscale image file, center-cropped to a square and resized."""
    img = load_image(path, as_gray=True).pixels
    h, w = img.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = img[top : top + side, left : left + side].astype(np.float32)
    if side != size:
        crop = np.asarray(PILImage.fromarray(crop, mode="F").resize((size, size), PILImage.BICUBIC))
    return Image(np.clip(crop, 0.0, 1.0))


def resolve_scene(ref: str, size: int) -> Image:
    """``synthetic:<seed>`` or a path to an image file."""
    if ref.startswith("synthetic:"):
        return synthetic_scene(size, int(ref.split(":", 1)[1]))
    p = Path(ref)
    if not p.exists():
        raise FileNotFoundError(ref)
    return load_scene(p, size)


def is_scene_ref(ref: str) -> bool:
    if ref.startswith("synthetic:"):
        try:
            int(ref.split(":", 1)[1])
        except ValueError:
            return False
        return True
    return Path(ref).exists()
