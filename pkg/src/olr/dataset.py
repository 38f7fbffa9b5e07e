"""Synthetic multi-attribute scenes, random-rectangle occlusion and image I/O."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

ATTRIBUTES = (
    "circle",            # disc, else square
    "large",             # large main object, else small
    "bright",            # full-intensity object colour, else dimmed
    "left",              # main object in the left half, else right half
    "red",               # red object, else blue
    "filled",            # solid object, else hollow ring
    "background_light",  # light grey background, else dark
    "two_objects",       # extra green diamond on the opposite side
)

DEFAULT_RULES = (
    ("two_objects", "large", -1),
    ("large", "circle", +1),
    ("red", "bright", +1),
)


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray
    labels: np.ndarray
    id: int


@dataclass
class Dataset:
    images: np.ndarray          # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray          # (N, L) int8 in {0, 1}
    ids: np.ndarray             # (N,) int64
    label_names: list[str]
    filenames: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.images[i], self.labels[i], int(self.ids[i]))

    def __iter__(self) -> Iterator[LabeledImage]:
        return (self[i] for i in range(len(self)))

    @property
    def image_size(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def num_labels(self) -> int:
        return len(self.label_names)

    def subset(self, index: Sequence[int]) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        names = [self.filenames[i] for i in index] if self.filenames else []
        return Dataset(self.images[index], self.labels[index], self.ids[index],
                       list(self.label_names), names)

    def label_index(self, label: int | str) -> int:
        if isinstance(label, str):
            return self.label_names.index(label)
        return int(label)


@dataclass(frozen=True)
class DatasetConfig:
    image_size: tuple[int, int, int] = (32, 32, 3)
    num_labels: int = 8
    num_images: int = 2000
    split_fraction: float = 0.95
    correlation_rules: tuple = DEFAULT_RULES
    rule_strength: float = 0.6
    seed: int = 0

    def __post_init__(self):
        h, w, c = self.image_size
        if c != 3:
            raise ValueError(f"synthetic scenes are RGB, got {c} channels")
        if min(h, w) < 16:
            raise ValueError(f"image side must be >= 16, got {h}x{w}")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.num_labels < 1:
            raise ValueError("num_labels must be positive")
        if not 0 <= self.rule_strength <= 1:
            raise ValueError("rule_strength must lie in [0, 1]")

    @property
    def label_names(self) -> list[str]:
        return list(ATTRIBUTES[:self.num_labels])


@dataclass(frozen=True)
class OcclusionRule:
    min_fraction: float = 1 / 3
    max_fraction: float = 2 / 3
    fill_value: float = 0.0

    def __post_init__(self):
        if not 0 < self.min_fraction <= self.max_fraction <= 1:
            raise ValueError(f"need 0 < min_fraction <= max_fraction <= 1, got "
                             f"{self.min_fraction}, {self.max_fraction}")
        if not 0 <= self.fill_value <= 1:
            raise ValueError("fill_value must lie in [0, 1]")

    def side_range(self, n: int) -> tuple[int, int]:
        # tolerate float error in n * fraction before rounding
        lo = math.ceil(n * self.min_fraction - 1e-9)
        hi = math.floor(n * self.max_fraction + 1e-9)
        return max(lo, 1), hi


# -- synthetic generation ------------------------------------------------------

def _resolve(name_or_index, names=ATTRIBUTES) -> int:
    if isinstance(name_or_index, str):
        if name_or_index not in names:
            raise ValueError(f"unknown attribute {name_or_index!r}")
        return names.index(name_or_index)
    return int(name_or_index)


def sample_attributes(config: DatasetConfig, rng: np.random.Generator) -> np.ndarray:
    attrs = (rng.random(len(ATTRIBUTES)) < 0.5).astype(np.int8)
    for a, b, sign in config.correlation_rules:
        i, j = _resolve(a), _resolve(b)
        if rng.random() < config.rule_strength:
            attrs[j] = attrs[i] if sign > 0 else 1 - attrs[i]
    return attrs


def render_scene(attrs: np.ndarray, size: tuple[int, int, int],
                 rng: np.random.Generator) -> np.ndarray:
    """Draw one scene whose visible content is fixed by ``attrs`` up to small jitter."""
    h, w, _ = size
    scale = min(h, w) / 32.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    circle, large, bright, left, red, filled, bg_light, two = (bool(v) for v in attrs)

    bg = (0.75 if bg_light else 0.15) + rng.uniform(-0.04, 0.04)
    img = np.empty((h, w, 3), dtype=np.float64)
    img[...] = bg

    radius = (rng.uniform(8.5, 10.0) if large else rng.uniform(5.5, 6.5)) * scale
    cx = (10.0 + rng.uniform(-1.0, 1.5)) * scale
    if not left:
        cx = w - cx
    cy = h / 2 + rng.uniform(-2.5, 2.5) * scale
    if circle:
        dist = np.hypot(xx - cx, yy - cy)
    else:
        dist = np.maximum(np.abs(xx - cx), np.abs(yy - cy))
    mask = dist <= radius
    if not filled:
        mask &= dist > radius - (3.0 if large else 2.0) * scale
    hue = np.array([1.0, 0.25, 0.2]) if red else np.array([0.2, 0.35, 1.0])
    colour = hue * (1.0 if bright else 0.55)
    img[mask] = colour

    if two:
        sx = w - 5.0 * scale if left else 5.0 * scale
        sy = (6.0 if rng.random() < 0.5 else h / scale - 6.0) * scale
        diamond = (np.abs(xx - sx) + np.abs(yy - sy)) <= 3.5 * scale
        img[diamond] = np.array([0.2, 0.9, 0.3])

    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_one(config: DatasetConfig, image_id: int) -> LabeledImage:
    rng = np.random.default_rng([config.seed, image_id])
    attrs = sample_attributes(config, rng)
    pixels = render_scene(attrs, config.image_size, rng)
    return LabeledImage(pixels, attrs[:config.num_labels].copy(), image_id)


def generate_synthetic(config: DatasetConfig) -> Dataset:
    """Deterministic synthetic dataset; image ``i`` depends only on (seed, i)."""
    if config.num_labels > len(ATTRIBUTES):
        raise ValueError(f"{config.num_labels} labels requested but only "
                         f"{len(ATTRIBUTES)} attribute generators exist")
    n = config.num_images
    images = np.empty((n,) + tuple(config.image_size), dtype=np.float32)
    labels = np.empty((n, config.num_labels), dtype=np.int8)
    for i in range(n):
        item = generate_one(config, i)
        images[i] = item.pixels
        labels[i] = item.labels
    names = [f"img_{i:05d}.ppm" for i in range(n)]
    return Dataset(images, labels, np.arange(n, dtype=np.int64), config.label_names, names)


def rule_pairs(config: DatasetConfig) -> list[tuple[int, int, int]]:
    """Correlation rules as (label index, label index, sign), restricted to exposed labels."""
    out = []
    for a, b, sign in config.correlation_rules:
        i, j = _resolve(a), _resolve(b)
        if i < config.num_labels and j < config.num_labels:
            out.append((i, j, int(np.sign(sign))))
    return out


# -- occlusion ------------------------------------------------------------------

def random_rectangle(height: int, width: int, rule: OcclusionRule,
                     rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Return (top, left, rect_height, rect_width) lying fully inside the image."""
    hlo, hhi = rule.side_range(height)
    wlo, whi = rule.side_range(width)
    if hhi < hlo or whi < wlo:
        raise ValueError(f"image {height}x{width} too small for occlusion fractions "
                         f"[{rule.min_fraction}, {rule.max_fraction}]")
    rh = int(rng.integers(hlo, hhi + 1))
    rw = int(rng.integers(wlo, whi + 1))
    top = int(rng.integers(0, height - rh + 1))
    left = int(rng.integers(0, width - rw + 1))
    return top, left, rh, rw


def occlude(image, rule: OcclusionRule, rng: np.random.Generator):
    """Overwrite one random rectangle with ``rule.fill_value`` on every channel.

    Accepts a pixel array (H, W, C) or a ``LabeledImage``; returns the same kind.
    """
    pixels = image.pixels if isinstance(image, LabeledImage) else np.asarray(image)
    top, left, rh, rw = random_rectangle(pixels.shape[0], pixels.shape[1], rule, rng)
    out = pixels.copy()
    out[top:top + rh, left:left + rw, ...] = rule.fill_value
    if isinstance(image, LabeledImage):
        return LabeledImage(out, image.labels, image.id)
    return out


def occlude_batch(images: np.ndarray, rule: OcclusionRule, rng: np.random.Generator,
                  probability: float = 1.0) -> np.ndarray:
    out = images.copy()
    h, w = images.shape[1:3]
    for i in range(len(out)):
        if probability < 1.0 and rng.random() >= probability:
            continue
        top, left, rh, rw = random_rectangle(h, w, rule, rng)
        out[i, top:top + rh, left:left + rw, :] = rule.fill_value
    return out


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(n * fraction + 1e-9)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


# -- image files -------------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    arr = to_uint8(pixels)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    h, w, c = arr.shape
    if c != 3:
        raise ValueError(f"P6 PPM needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary P6 PPM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return (data.reshape(h, w, 3).astype(np.float32) / 255.0)


def read_image(path: str | os.PathLike) -> np.ndarray:
    if str(path).lower().endswith(".png"):
        from PIL import Image  # optional dependency

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return read_ppm(path)


IMAGE_SUFFIXES = (".ppm", ".png")
LABELS_FILE = "labels.csv"
MANIFEST_FILE = "manifest.json"


def load_image_directory(path: str | os.PathLike) -> Dataset:
    """Load ``*.ppm``/``*.png`` images plus ``labels.csv`` (CelebA -1/0/1 convention)."""
    root = Path(path)
    files = sorted(p.name for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    csv_path = root / LABELS_FILE
    if not csv_path.exists():
        if files:
            raise FileNotFoundError(f"{csv_path}: labels CSV missing for {len(files)} images")
        return Dataset(np.zeros((0, 0, 0, 3), np.float32), np.zeros((0, 0), np.int8),
                       np.zeros(0, np.int64), [], [])
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            header = ["filename"]
        names = [h.strip() for h in header[1:]]
        rows = {}
        for row in reader:
            if not row:
                continue
            rows[row[0].strip()] = [1 if int(v) == 1 else 0 for v in row[1:]]
    images, labels = [], []
    for name in files:
        if name not in rows:
            raise KeyError(f"no labels row for image {name!r} in {csv_path}")
        if len(rows[name]) != len(names):
            raise ValueError(f"{csv_path}: row for {name!r} has {len(rows[name])} values, "
                             f"header has {len(names)} labels")
        images.append(read_image(root / name))
        labels.append(rows[name])
    if not files:
        return Dataset(np.zeros((0, 0, 0, 3), np.float32), np.zeros((0, len(names)), np.int8),
                       np.zeros(0, np.int64), names, [])
    return Dataset(np.stack(images).astype(np.float32), np.asarray(labels, dtype=np.int8),
                   np.arange(len(files), dtype=np.int64), names, files)


def save_image_directory(dataset: Dataset, path: str | os.PathLike, seed: int | None = None) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = dataset.filenames or [f"img_{int(i):05d}.ppm" for i in dataset.ids]
    for name, pixels in zip(names, dataset.images):
        write_ppm(root / name, pixels)
    with open(root / LABELS_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", *dataset.label_names])
        for name, row in zip(names, dataset.labels):
            writer.writerow([name, *(int(v) for v in row)])
    manifest = {"image_size": list(dataset.image_size), "num_labels": dataset.num_labels,
                "label_names": list(dataset.label_names), "seed": seed}
    (root / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2))
