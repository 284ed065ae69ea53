"""Datasets, augmentation and two-view batches.

Augmentations run in a fixed order: pad-and-crop, horizontal flip,
rotation, brightness/contrast jitter, random erasing, per-channel
normalization. Every random draw comes from the ``numpy.random.Generator``
that the caller passes in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ImageDataset",
    "AugmentConfig",
    "ViewBatch",
    "DatasetProfile",
    "PROFILES",
    "RECIPES",
    "CifarFormatError",
    "load_cifar_binary",
    "write_cifar_binary",
    "make_synthetic_blobs",
    "make_synthetic_split",
    "normalize",
    "augment",
    "augment_batch",
    "make_two_view_batch",
    "split_validation",
    "load_profiles",
]

CIFAR_SIDE = 32
CIFAR_RECORD = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE


class CifarFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, C, S, S) in [0, 1]
    labels: np.ndarray  # (N,) ints in [0, K)
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) == 0:
            raise ValueError("dataset is empty")
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, S, S), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> ImageDataset:
        return ImageDataset(self.images[index], self.labels[index], self.num_classes, self.name)


@dataclass(frozen=True)
class AugmentConfig:
    crop_padding: int = 0
    hflip_prob: float = 0.0
    rotation_degrees: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0
    erasing_prob: float = 0.0
    erasing_scale: tuple[float, float] = (0.1, 0.3)
    mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    std: tuple[float, ...] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        for name in ("hflip_prob", "erasing_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.crop_padding < 0:
            raise ValueError("crop_padding must be nonnegative")
        if self.brightness < 0 or self.contrast < 0 or self.rotation_degrees < 0:
            raise ValueError("jitter strengths and rotation must be nonnegative")
        lo, hi = self.erasing_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("erasing_scale must satisfy 0 < lo <= hi <= 1")
        if len(self.mean) != len(self.std) or min(self.std) <= 0:
            raise ValueError("mean/std must have matching lengths and positive std")


# Difficulty recipes. Saturation and hue jitter are not implemented, so the
# medium/hard recipes carry only brightness and contrast.
RECIPES: dict[str, dict] = {
    "identity": {},
    "standard": {"crop_padding": 12, "hflip_prob": 0.5},
    "fmnist": {"crop_padding": 4, "hflip_prob": 0.5},
    "easy": {"crop_padding": 12, "hflip_prob": 0.5},
    "medium": {"crop_padding": 4, "rotation_degrees": 10.0, "brightness": 0.2, "contrast": 0.2},
    "hard": {"crop_padding": 6, "hflip_prob": 0.5, "rotation_degrees": 15.0, "brightness": 0.4,
             "contrast": 0.4, "erasing_prob": 0.5, "erasing_scale": (0.1, 0.3)},
    "synthetic": {"crop_padding": 1, "hflip_prob": 0.5},
}


@dataclass(frozen=True)
class DatasetProfile:
    name: str
    mean: tuple[float, ...]
    std: tuple[float, ...]
    recipe: str = "standard"

    def augment_config(self, recipe: str | None = None, **overrides) -> AugmentConfig:
        params = dict(RECIPES[recipe or self.recipe])
        params.update(overrides)
        return AugmentConfig(mean=tuple(self.mean), std=tuple(self.std), **params)


PROFILES: dict[str, DatasetProfile] = {
    "cifar10": DatasetProfile("cifar10", (0.491, 0.482, 0.447), (0.202, 0.199, 0.201), "standard"),
    "cifar100": DatasetProfile("cifar100", (0.491, 0.482, 0.447), (0.202, 0.199, 0.201), "standard"),
    "svhn": DatasetProfile("svhn", (0.438, 0.444, 0.473), (0.198, 0.201, 0.197), "easy"),
    "fmnist": DatasetProfile("fmnist", (0.5, 0.5, 0.5), (0.5, 0.5, 0.5), "fmnist"),
    "synthetic": DatasetProfile("synthetic", (0.5, 0.5, 0.5), (0.5, 0.5, 0.5), "synthetic"),
}


def load_profiles(path) -> dict[str, DatasetProfile]:
    """Read extra profiles from a JSON or YAML mapping ``name -> {mean, std, recipe}``."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    out = dict(PROFILES)
    for name, spec in raw.items():
        recipe = spec.get("recipe", "standard")
        if recipe not in RECIPES:
            raise ValueError(f"profile {name!r}: unknown recipe {recipe!r}")
        out[name] = DatasetProfile(name, tuple(spec["mean"]), tuple(spec["std"]), recipe)
    return out


@dataclass
class ViewBatch:
    """``2B`` views: all first views, then all second views in the same order."""

    views: np.ndarray
    labels: np.ndarray

    @property
    def batch_size(self) -> int:
        return len(self.labels) // 2


# ---------------------------------------------------------------------------
# CIFAR binary format


def load_cifar_binary(path, num_classes: int = 10) -> ImageDataset:
    """Read 3073-byte records: one label byte, then R, G, B planes of 32x32."""
    data = Path(path).read_bytes()
    if len(data) == 0:
        raise CifarFormatError("empty file", 0)
    n, rem = divmod(len(data), CIFAR_RECORD)
    if rem:
        raise CifarFormatError(
            f"truncated record: {rem} trailing bytes, expected multiples of {CIFAR_RECORD}",
            n * CIFAR_RECORD,
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise CifarFormatError(f"label {labels[i]} >= {num_classes} in record {i}", i * CIFAR_RECORD)
    images = raw[:, 1:].reshape(n, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float64) / 255.0
    return ImageDataset(images, labels, num_classes, Path(path).stem)


def write_cifar_binary(path, images_u8: np.ndarray, labels: Sequence[int]) -> None:
    """Inverse of :func:`load_cifar_binary` for uint8 images of shape (N, 3, 32, 32)."""
    images_u8 = np.asarray(images_u8)
    if images_u8.dtype != np.uint8 or images_u8.shape[1:] != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise ValueError("images must be uint8 with shape (N, 3, 32, 32)")
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must fit in one byte")
    rec = np.empty((len(labels), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images_u8.reshape(len(labels), -1)
    Path(path).write_bytes(rec.tobytes())


# ---------------------------------------------------------------------------
# synthetic data


def _templates(num_classes: int, channels: int, size: int, rng: np.random.Generator) -> np.ndarray:
    # Each class lights up its own coarse spatial cell pattern with its own colour.
    grid = 2
    cell = size // grid
    out = np.zeros((num_classes, channels, size, size))
    codes = rng.permutation(2 ** (grid * grid))[:num_classes] if num_classes <= 2 ** (grid * grid) else None
    for k in range(num_classes):
        code = codes[k] if codes is not None else rng.integers(1, 2 ** (grid * grid))
        color = 0.25 + 0.5 * rng.random(channels)
        for q in range(grid * grid):
            on = (code >> q) & 1
            r, c = divmod(q, grid)
            out[k, :, r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = (
                (0.15 + 0.7 * on) * color[:, None, None]
            )
    return out


def make_synthetic_blobs(num_classes: int, per_class: int, image_size: int = 8, noise_std: float = 0.1,
                         seed: int = 0, channels: int = 3) -> ImageDataset:
    """Class templates plus Gaussian pixel noise, clipped to [0, 1]."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    templates = _templates(num_classes, channels, image_size, rng)
    labels = np.repeat(np.arange(num_classes), per_class)
    images = templates[labels] + noise_std * rng.standard_normal((len(labels), channels, image_size, image_size))
    order = rng.permutation(len(labels))
    return ImageDataset(np.clip(images[order], 0.0, 1.0), labels[order], num_classes, "synthetic")


def make_synthetic_split(num_classes: int, train_per_class: int, test_per_class: int, image_size: int = 8,
                         noise_std: float = 0.1, seed: int = 0, channels: int = 3
                         ) -> tuple[ImageDataset, ImageDataset]:
    """Train/test sets drawn around the same class templates with disjoint noise."""
    full = make_synthetic_blobs(num_classes, train_per_class + test_per_class, image_size, noise_std, seed, channels)
    test_idx = np.concatenate([np.flatnonzero(full.labels == k)[:test_per_class] for k in range(num_classes)])
    is_test = np.zeros(len(full), dtype=bool)
    is_test[test_idx] = True
    return full.subset(~is_test), full.subset(is_test)


def split_validation(dataset: ImageDataset, val_size: int, rng: np.random.Generator
                     ) -> tuple[ImageDataset, ImageDataset]:
    """The first ``val_size`` items of a seeded permutation become validation."""
    if not 0 < val_size < len(dataset):
        raise ValueError("val_size must be between 1 and len(dataset) - 1")
    perm = rng.permutation(len(dataset))
    return dataset.subset(np.sort(perm[val_size:])), dataset.subset(np.sort(perm[:val_size]))


# ---------------------------------------------------------------------------
# augmentation


def _pad_crop(img: np.ndarray, pad: int, rng) -> np.ndarray:
    if pad == 0:
        return img
    c, s, _ = img.shape
    padded = np.zeros((c, s + 2 * pad, s + 2 * pad), dtype=img.dtype)
    padded[:, pad:pad + s, pad:pad + s] = img
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    return padded[:, dy:dy + s, dx:dx + s]


def _rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    # Nearest-neighbour inverse mapping about the image centre, zero fill.
    c, s, _ = img.shape
    theta = np.deg2rad(degrees)
    ctr = (s - 1) / 2.0
    yy, xx = np.mgrid[0:s, 0:s]
    y0, x0 = yy - ctr, xx - ctr
    cos, sin = np.cos(theta), np.sin(theta)
    src_x = np.rint(cos * x0 + sin * y0 + ctr).astype(int)
    src_y = np.rint(-sin * x0 + cos * y0 + ctr).astype(int)
    inside = (src_x >= 0) & (src_x < s) & (src_y >= 0) & (src_y < s)
    out = np.zeros_like(img)
    out[:, inside] = img[:, src_y[inside], src_x[inside]]
    return out


def _erase(img: np.ndarray, scale: tuple[float, float], rng) -> np.ndarray:
    c, s, _ = img.shape
    area = rng.uniform(*scale) * s * s
    aspect = np.exp(rng.uniform(np.log(0.3), np.log(3.3)))
    h = int(min(s, max(1, round(np.sqrt(area * aspect)))))
    w = int(min(s, max(1, round(np.sqrt(area / aspect)))))
    top = rng.integers(0, s - h + 1)
    left = rng.integers(0, s - w + 1)
    img = img.copy()
    img[:, top:top + h, left:left + w] = 0.0
    return img


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of a (C, S, S) image with values in [0, 1]."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise ValueError(f"image must be (C, S, S), got {x.shape}")
    if len(cfg.mean) != x.shape[0]:
        raise ValueError("normalization constants do not match channel count")
    x = _pad_crop(x, cfg.crop_padding, rng)
    if cfg.hflip_prob > 0 and rng.random() < cfg.hflip_prob:
        x = x[:, :, ::-1]
    if cfg.rotation_degrees > 0:
        x = _rotate(x, rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees))
    if cfg.brightness > 0:
        x = np.clip(x * rng.uniform(1 - cfg.brightness, 1 + cfg.brightness), 0.0, 1.0)
    if cfg.contrast > 0:
        gray = x.mean()
        x = np.clip(gray + (x - gray) * rng.uniform(1 - cfg.contrast, 1 + cfg.contrast), 0.0, 1.0)
    if cfg.erasing_prob > 0 and rng.random() < cfg.erasing_prob:
        x = _erase(x, cfg.erasing_scale, rng)
    mean = np.asarray(cfg.mean)[:, None, None]
    std = np.asarray(cfg.std)[:, None, None]
    return (x - mean) / std


def augment_batch(images: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(img, cfg, rng) for img in images])


def normalize(images: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    """Deterministic evaluation transform: normalization only."""
    mean = np.asarray(cfg.mean)[:, None, None]
    std = np.asarray(cfg.std)[:, None, None]
    return (np.asarray(images, dtype=np.float64) - mean) / std


def make_two_view_batch(dataset: ImageDataset, indices, cfg: AugmentConfig, rng: np.random.Generator
                        ) -> ViewBatch:
    indices = np.asarray(indices)
    imgs = dataset.images[indices]
    first = augment_batch(imgs, cfg, rng)
    second = augment_batch(imgs, cfg, rng)
    labels = dataset.labels[indices]
    return ViewBatch(np.concatenate([first, second]), np.concatenate([labels, labels]))
