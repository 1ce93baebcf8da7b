"""Synthetic scenes: flat-colored rectangles, disks and stripes on a background.

Each scene is a pure function of ``(seed, index)``. Later shapes overwrite
earlier ones in both the image and the mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SHAPE_KINDS = ("rectangle", "disk", "stripe")

DEFAULT_PALETTE = (
    (0.25, 0.25, 0.25),
    (0.90, 0.25, 0.20),
    (0.20, 0.80, 0.30),
    (0.25, 0.35, 0.95),
)


@dataclass
class SceneSpec:
    image_size: int = 64
    n_classes: int = 4
    min_shapes: int = 1
    max_shapes: int = 3
    noise: float = 0.05
    seed: int = 42
    palette: tuple = field(default=DEFAULT_PALETTE)

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("need at least a background and one shape class")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("shape count range must satisfy 1 <= min <= max")
        if len(self.palette) < self.n_classes:
            raise ValueError(f"palette has {len(self.palette)} colors for {self.n_classes} classes")

    def color(self, k):
        return np.asarray(self.palette[k], dtype=np.float64)


def shape_kind(label):
    """Class 1 is a rectangle, 2 a disk, 3 a stripe; further classes cycle."""
    return SHAPE_KINDS[(label - 1) % len(SHAPE_KINDS)]


# shape extents as fractions of the image side; shapes should span several
# stride-8 nodes or the node grid cannot resolve them
RECT_SIDE = (0.4, 0.65)
DISK_RADIUS = (1 / 4.5, 1 / 2.75)
STRIPE_WIDTH = (1 / 4, 1 / 2.75)


def rasterize(kind, rng, size):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if kind == "rectangle":
        h, w = rng.integers(int(size * RECT_SIDE[0]), int(size * RECT_SIDE[1]) + 1, size=2)
        top = rng.integers(0, size - h + 1)
        left = rng.integers(0, size - w + 1)
        return (yy >= top) & (yy < top + h) & (xx >= left) & (xx < left + w)
    if kind == "disk":
        r = rng.uniform(size * DISK_RADIUS[0], size * DISK_RADIUS[1])
        cy, cx = rng.uniform(r * 0.5, size - r * 0.5, size=2)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "stripe":
        angle = rng.uniform(0, np.pi)
        width = rng.uniform(size * STRIPE_WIDTH[0], size * STRIPE_WIDTH[1])
        offset = rng.uniform(-size / 4, size / 4)
        c = size / 2
        dist = (xx - c) * np.cos(angle) + (yy - c) * np.sin(angle) - offset
        return np.abs(dist) <= width / 2
    raise ValueError(f"unknown shape kind {kind!r}")


def sample_layout(spec: SceneSpec, rng):
    """Random list of ``(label, boolean region)`` pairs in painting order."""
    count = rng.integers(spec.min_shapes, spec.max_shapes + 1)
    layout = []
    for _ in range(count):
        label = int(rng.integers(1, spec.n_classes))
        layout.append((label, rasterize(shape_kind(label), rng, spec.image_size)))
    return layout


def render(spec: SceneSpec, layout, rng):
    size = spec.image_size
    mask = np.zeros((size, size), dtype=np.int64)
    for label, region in layout:
        mask[region] = label
    palette = np.stack([spec.color(k) for k in range(spec.n_classes)])
    image = palette[mask]
    if spec.noise > 0:
        image = image + rng.normal(0.0, spec.noise, size=image.shape)
    return np.clip(image, 0.0, 1.0), mask


def generate_scene(spec: SceneSpec, index: int):
    """Return ``(image, mask)``: float image (h, w, 3) in [0, 1] and int mask (h, w)."""
    rng = np.random.default_rng([spec.seed, index])
    return render(spec, sample_layout(spec, rng), rng)


def scene_batch(spec: SceneSpec, indices, dtype=np.float32):
    """Stack scenes into model layout: images (b, 3, h, w), masks (b, h, w)."""
    images, masks = zip(*(generate_scene(spec, int(i)) for i in indices))
    images = np.stack(images).transpose(0, 3, 1, 2).astype(dtype)
    return np.ascontiguousarray(images), np.stack(masks)


def class_frequencies(spec: SceneSpec, count: int, start: int = 0):
    counts = np.zeros(spec.n_classes, dtype=np.int64)
    for i in range(start, start + count):
        _, mask = generate_scene(spec, i)
        counts += np.bincount(mask.ravel(), minlength=spec.n_classes)
    return counts / counts.sum()
