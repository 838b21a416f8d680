"""Preprocessing: image augmentation and normalization, min-max scaling, splits, batches"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from beamcast.airsim import STRUCT_DIM, Dataset
from beamcast.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

CROP_PADDING = 16
FLIP_PROBABILITY = 0.5


@dataclass(frozen=True)
class ImageNormConstants:
    """Per-channel mean/std used to standardize RGB images"""

    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigurationError("mean and std need 3 channels", "normalization")
        if any(s <= 0 for s in self.std):
            raise ConfigurationError(f"std must be strictly positive, got {self.std}", "normalization.std")


IMAGENET = ImageNormConstants()


def normalize_image(img: np.ndarray, c: ImageNormConstants = IMAGENET) -> np.ndarray:
    """(x - mean) / std per channel of a [3, H, W] (or [B, 3, H, W]) image"""
    mean = np.asarray(c.mean, dtype=img.dtype)[:, None, None]
    std = np.asarray(c.std, dtype=img.dtype)[:, None, None]
    return (img - mean) / std


def denormalize_image(img: np.ndarray, c: ImageNormConstants = IMAGENET) -> np.ndarray:
    mean = np.asarray(c.mean, dtype=img.dtype)[:, None, None]
    std = np.asarray(c.std, dtype=img.dtype)[:, None, None]
    return img * std + mean


def augment_image(
    img: np.ndarray,
    rng: Optional[np.random.Generator],
    train_mode: bool,
    flip: Optional[bool] = None,
    offset: Optional[tuple[int, int]] = None,
    padding: int = CROP_PADDING,
) -> np.ndarray:
    """
    Random horizontal flip then pad-and-crop; identity in eval mode.

    Args:
        img: [3, H, W] with values in [0, 1]
        rng: source of the flip coin and crop offset
        train_mode: False returns img unchanged
        flip: force the flip decision instead of drawing it
        offset: force the (row, col) crop offset into the padded image, each in [0, 2*padding]
        padding: zero padding per side before cropping back to H x W
    """
    if not train_mode:
        return img
    if img.ndim != 3:
        raise DimensionError(f"augment_image expects [C, H, W], got {list(img.shape)}")
    _, height, width = img.shape

    if flip is None:
        flip = bool(rng.random() < FLIP_PROBABILITY)
    out = img[:, :, ::-1] if flip else img

    if offset is None:
        offset = (int(rng.integers(0, 2 * padding + 1)), int(rng.integers(0, 2 * padding + 1)))
    top, left = offset
    if not (0 <= top <= 2 * padding and 0 <= left <= 2 * padding):
        raise ConfigurationError(f"crop offset {offset} outside [0, {2 * padding}]", "offset")
    padded = np.pad(out, ((0, 0), (padding, padding), (padding, padding)))
    return np.ascontiguousarray(padded[:, top : top + height, left : left + width])


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a [3, H, W] float image to [3, size, size]"""
    from PIL import Image

    if img.shape[1:] == (size, size):
        return img
    planes = []
    for plane in img:
        channel = Image.fromarray(np.ascontiguousarray(plane, dtype=np.float32))  # mode "F"
        planes.append(np.asarray(channel.resize((size, size), Image.Resampling.BILINEAR)))
    return np.stack(planes).astype(img.dtype)


@dataclass
class StructScaler:
    """Min-max scaler for the 8 structured features, fit on the training split only"""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64).reshape(-1)
        self.max = np.asarray(self.max, dtype=np.float64).reshape(-1)
        if self.min.shape != self.max.shape:
            raise DimensionError(f"scaler min {self.min.shape} and max {self.max.shape} differ")
        if np.any(self.max < self.min):
            raise ConfigurationError("scaler max must be >= min in every dimension", "scaler")

    def to_dict(self) -> dict[str, Any]:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StructScaler":
        return cls(np.asarray(data["min"]), np.asarray(data["max"]))


def fit_scaler(train_structs: np.ndarray) -> StructScaler:
    """Per-feature min and max over the training rows [n, 8]"""
    train_structs = np.asarray(train_structs, dtype=np.float64)
    if train_structs.ndim != 2 or train_structs.shape[0] == 0:
        raise DimensionError(f"fit_scaler needs a non-empty [n, {STRUCT_DIM}] array, got {list(train_structs.shape)}")
    return StructScaler(train_structs.min(axis=0), train_structs.max(axis=0))


def apply_scaler(s: np.ndarray, scaler: StructScaler) -> np.ndarray:
    """
    (s - min) / (max - min) per feature, for one vector or a batch of rows.

    Constant training features map to 0. Values outside the training range
    are not clipped.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != scaler.min.shape[0]:
        raise DimensionError(f"expected {scaler.min.shape[0]} features, got {s.shape[-1]}")
    span = scaler.max - scaler.min
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    return np.where(degenerate, 0.0, (s - scaler.min) / safe_span)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError(f"must be in (0, 1), got {self.train_fraction}", "train.train_fraction")


def split_dataset(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Random permutation under spec.seed; first floor(fraction * n) indices train, rest test"""
    if n < 2:
        raise ConfigurationError(f"need at least 2 samples to split, got {n}", "samples")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(np.floor(spec.train_fraction * n))
    return order[:n_train], order[n_train:]


def make_batches(
    indices: Sequence[int],
    batch_size: int,
    rng: Optional[np.random.Generator],
    shuffle: bool,
) -> list[np.ndarray]:
    """Split indices into batches of batch_size, the last one possibly shorter"""
    if batch_size < 1:
        raise ConfigurationError(f"must be >= 1, got {batch_size}", "train.batch_size")
    indices = np.asarray(indices, dtype=np.int64)
    if shuffle:
        indices = rng.permutation(indices)
    return [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]


@dataclass
class Batch:
    images: np.ndarray  # [B, 3, S, S] normalized
    structs: np.ndarray  # [B, 8] scaled
    labels: np.ndarray  # [B]
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def prepare_batch(
    dataset: Dataset,
    indices: Sequence[int],
    scaler: StructScaler,
    train: bool,
    epoch: int = 0,
    seed: int = 0,
    image_size: Optional[int] = None,
    norm: ImageNormConstants = IMAGENET,
    dtype: Any = np.float32,
) -> Batch:
    """
    Assemble model inputs for a batch.

    Each sample's augmentation RNG is derived from (seed, epoch, sample index),
    so the result does not depend on batch composition or preparation order.
    """
    indices = np.asarray(indices, dtype=np.int64)
    images = []
    for index in indices:
        img = dataset.images[index]
        if image_size is not None:
            img = resize_image(img, image_size)
        if train:
            rng = np.random.default_rng([seed, epoch, int(index)])
            img = augment_image(img, rng, train_mode=True)
        images.append(normalize_image(img, norm))
    return Batch(
        images=np.stack(images).astype(dtype),
        structs=apply_scaler(dataset.structs[indices], scaler).astype(dtype),
        labels=dataset.labels[indices].astype(np.int64),
        indices=indices,
    )
