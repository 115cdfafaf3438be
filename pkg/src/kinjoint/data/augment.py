"""Seeded photometric and geometric image augmentation.

Transforms run in this order, each gated by its own probability:
brightness, contrast and saturation jitter (factor drawn from
[1 - jitter, 1 + jitter]), grayscale, horizontal flip, perspective warp (each
corner moved by up to ``perspective_scale`` of the side), random resized crop
(area fraction in ``crop_scale``) back to the input size. The output is
clamped to [0, 1]. All random draws happen up front, so a seed maps to one
fixed :class:`AugmentPlan`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

_GRAY = np.array([0.299, 0.587, 0.114])


@dataclass
class AugmentConfig:
    enabled: bool = True
    jitter: float = 0.2
    p_brightness: float = 0.8
    p_contrast: float = 0.8
    p_saturation: float = 0.8
    p_grayscale: float = 0.1
    p_flip: float = 0.5
    p_perspective: float = 0.3
    perspective_scale: float = 0.1
    p_crop: float = 0.3
    crop_scale: tuple = (0.8, 1.0)


@dataclass(frozen=True)
class AugmentPlan:
    brightness: float | None
    contrast: float | None
    saturation: float | None
    grayscale: bool
    flip: bool
    corners: tuple | None  # four (dy, dx) displacements as fractions of the side
    crop: tuple | None  # (side fraction, top fraction, left fraction)

    @property
    def is_identity(self):
        return (
            self.brightness is None
            and self.contrast is None
            and self.saturation is None
            and not self.grayscale
            and not self.flip
            and self.corners is None
            and self.crop is None
        )


def plan_augmentation(seed, config=None):
    config = config or AugmentConfig()
    rng = np.random.default_rng(seed)
    gates = rng.random(7)
    factors = rng.uniform(1.0 - config.jitter, 1.0 + config.jitter, size=3)
    corners = rng.uniform(-config.perspective_scale, config.perspective_scale, size=(4, 2))
    area = rng.uniform(*config.crop_scale)
    offsets = rng.random(2)
    side = float(np.sqrt(area))
    return AugmentPlan(
        brightness=float(factors[0]) if gates[0] < config.p_brightness else None,
        contrast=float(factors[1]) if gates[1] < config.p_contrast else None,
        saturation=float(factors[2]) if gates[2] < config.p_saturation else None,
        grayscale=bool(gates[3] < config.p_grayscale),
        flip=bool(gates[4] < config.p_flip),
        corners=tuple(map(tuple, corners)) if gates[5] < config.p_perspective else None,
        crop=(side, float(offsets[0]) * (1 - side), float(offsets[1]) * (1 - side)) if gates[6] < config.p_crop else None,
    )


def _gray(img):
    return (img @ _GRAY)[..., None]


def _homography(src, dst):
    """3x3 matrix mapping each ``src`` point onto the matching ``dst`` point."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    h = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _sample(img, ys, xs):
    return np.stack(
        [map_coordinates(img[..., ch], [ys, xs], order=1, mode="nearest") for ch in range(img.shape[2])],
        axis=-1,
    )


def apply_plan(image, plan):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"augment expects an H x W x 3 image, got shape {img.shape}")
    if plan.is_identity:
        return img.copy()
    h, w, _ = img.shape
    if plan.brightness is not None:
        img = img * plan.brightness
    if plan.contrast is not None:
        m = _gray(img).mean()
        img = (img - m) * plan.contrast + m
    if plan.saturation is not None:
        g = _gray(img)
        img = g + (img - g) * plan.saturation
    if plan.grayscale:
        img = np.repeat(_gray(img), 3, axis=2)
    if plan.flip:
        img = img[:, ::-1]
    if plan.corners is not None:
        box = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
        moved = box + np.array(plan.corners)[:, ::-1] * np.array([w - 1, h - 1])
        hom = _homography(box, moved)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        pts = hom @ np.stack([xx.ravel(), yy.ravel(), np.ones(h * w)])
        img = _sample(img, (pts[1] / pts[2]).reshape(h, w), (pts[0] / pts[2]).reshape(h, w))
    if plan.crop is not None:
        side, top, left = plan.crop
        ys = top * (h - 1) + np.linspace(0, side * (h - 1), h)
        xs = left * (w - 1) + np.linspace(0, side * (w - 1), w)
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        img = _sample(img, yy, xx)
    return np.clip(img, 0.0, 1.0)


def augment(image, seed, config=None):
    config = config or AugmentConfig()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"augment expects an H x W x 3 image, got shape {image.shape}")
    if not config.enabled:
        return image.copy()
    return apply_plan(image, plan_augmentation(seed, config))
