"""Loading, validation, and preprocessing of 4-modality volumes.

Array conventions used throughout the package:

* multi-modal image cube: float32, shape (4, D, H, W), modality order
  (T1, T2, T1CE, Flair), voxel values >= 0 before normalization;
* label cube: uint8, shape (D, H, W), labels {0, 1, 2, 3} for
  background / necrotic core / edema / enhancing region;
* one-hot target: float32, shape (3, D, H, W), channel k flags label k+1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from . import formats

log = logging.getLogger(__name__)

MODALITIES = ("t1", "t2", "t1ce", "flair")
N_MODALITIES = 4
N_CLASSES = 3
VALID_LABELS = (0, 1, 2, 3)


class DegenerateChannelError(ValueError):
    """A channel whose normalization divisor would be <= 0."""


class LabelError(ValueError):
    """A label cube containing values outside {0,1,2,3}."""


@dataclass(frozen=True)
class PreprocessConfig:
    target_hw: tuple[int, int] = (256, 256)
    noise_mu: float = 0.0
    noise_sigma: float = 0.1
    percentile: float = 99.0
    nonzero_percentile: bool = False  # percentile over foreground voxels only
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.percentile <= 100.0:
            raise ValueError(f"percentile must be in (0, 100], got {self.percentile}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if min(self.target_hw) < 8:
            raise ValueError("target_hw must be at least 8x8")


def validate_volume(vol: np.ndarray) -> None:
    vol = np.asarray(vol)
    if vol.ndim != 4 or vol.shape[0] != N_MODALITIES:
        raise ValueError(f"expected a (4, D, H, W) volume, got shape {vol.shape}")
    if not np.isfinite(vol).all():
        raise ValueError("volume contains NaN/Inf voxels")


def validate_labels(labels: np.ndarray, vol: np.ndarray | None = None) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise LabelError(f"expected a (D, H, W) label cube, got shape {labels.shape}")
    present = np.unique(labels)
    if not np.isin(present, VALID_LABELS).all():
        raise LabelError(f"labels outside {VALID_LABELS}: {present.tolist()}")
    if vol is not None and tuple(labels.shape) != tuple(vol.shape[1:]):
        raise LabelError(f"label dims {labels.shape} do not match volume dims {vol.shape[1:]}")


def channel_percentile(channel: np.ndarray, percentile: float, nonzero_only: bool = False) -> float:
    """Linear-interpolation percentile of one channel's voxel values."""
    values = channel[channel > 0] if nonzero_only else channel
    if values.size == 0:
        return 0.0
    return float(np.percentile(values, percentile))


def normalize_channels(vol: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Divide each channel by its high-percentile voxel value.

    Values above 1.0 are kept (the top tail is not clipped). A channel whose
    divisor would be <= 0 makes the sample unusable and is rejected.
    """
    validate_volume(vol)
    out = np.empty_like(vol, dtype=np.float32)
    for c in range(vol.shape[0]):
        divisor = channel_percentile(vol[c], cfg.percentile, cfg.nonzero_percentile)
        if divisor <= 0.0:
            raise DegenerateChannelError(
                f"degenerate channel {MODALITIES[c]!r}: {cfg.percentile:g}th percentile is {divisor}"
            )
        out[c] = vol[c] / divisor
    return out


def resize_volume(vol: np.ndarray, target_hw: tuple[int, int], kind: str = "image") -> np.ndarray:
    """Resize every depth slice on (H, W); the depth axis is untouched.

    kind="image" uses bilinear interpolation, kind="mask" nearest-neighbor
    (label sets survive unchanged). Accepts (D, H, W) or (C, D, H, W).
    """
    if kind not in ("image", "mask"):
        raise ValueError(f"kind must be 'image' or 'mask', got {kind!r}")
    th, tw = int(target_hw[0]), int(target_hw[1])
    if min(th, tw) < 8:
        raise ValueError("target size must be at least 8x8")
    vol = np.asarray(vol)
    squeeze = vol.ndim == 3
    stack = vol[None] if squeeze else vol
    if stack.ndim != 4:
        raise ValueError(f"expected 3D or 4D input, got shape {vol.shape}")
    if stack.shape[-2:] == (th, tw):
        out = stack.copy()
    else:
        interp = cv2.INTER_LINEAR if kind == "image" else cv2.INTER_NEAREST
        c, d = stack.shape[:2]
        out = np.empty(stack.shape[:2] + (th, tw), dtype=stack.dtype)
        for ci in range(c):
            for di in range(d):
                # cv2 takes dsize as (width, height)
                out[ci, di] = cv2.resize(stack[ci, di], (tw, th), interpolation=interp)
    return out[0] if squeeze else out


def sample_rng(global_seed: int, sample_index: int, epoch: int = 0) -> np.random.Generator:
    """Per-sample RNG stream: seed = global_seed XOR sample_index, epoch folded in.

    Keeps parallel per-sample pipelines deterministic and lets the trainer
    resample noise every epoch without carrying RNG state across epochs.
    """
    return np.random.default_rng((int(global_seed) ^ int(sample_index), int(epoch)))


def add_foreground_noise(
    vol: np.ndarray,
    cfg: PreprocessConfig = PreprocessConfig(),
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Add Gaussian noise to foreground voxels (value > 0) only."""
    validate_volume(vol)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.noise_sigma == 0.0 and cfg.noise_mu == 0.0:
        return vol.copy()
    out = vol.astype(np.float32, copy=True)
    mask = out > 0
    noise = rng.normal(cfg.noise_mu, cfg.noise_sigma, size=int(mask.sum()))
    out[mask] += noise.astype(np.float32)
    return out


def one_hot_encode(labels: np.ndarray) -> np.ndarray:
    """Labels (D, H, W) in {0..3} -> float32 (3, D, H, W); background stays all-zero."""
    validate_labels(labels)
    out = np.zeros((N_CLASSES,) + labels.shape, dtype=np.float32)
    for k in range(N_CLASSES):
        out[k] = labels == (k + 1)
    return out


def decode_one_hot(target: np.ndarray) -> np.ndarray:
    """Inverse of :func:`one_hot_encode` for disjoint {0,1} targets."""
    target = np.asarray(target)
    if target.ndim != 4 or target.shape[0] != N_CLASSES:
        raise ValueError(f"expected a (3, D, H, W) target, got {target.shape}")
    labels = np.zeros(target.shape[1:], dtype=np.uint8)
    for k in range(N_CLASSES):
        labels[target[k] > 0.5] = k + 1
    return labels


def preprocess_sample(
    vol: np.ndarray,
    labels: np.ndarray | None,
    cfg: PreprocessConfig = PreprocessConfig(),
    rng: np.random.Generator | None = None,
    noise: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """normalize -> resize -> (optional) foreground noise; labels resized nearest."""
    out = normalize_channels(vol, cfg)
    out = resize_volume(out, cfg.target_hw, kind="image")
    if noise:
        out = add_foreground_noise(out, cfg, rng=rng)
    target = None
    if labels is not None:
        validate_labels(labels)
        resized = resize_volume(labels, cfg.target_hw, kind="mask")
        target = one_hot_encode(resized)
    return out, target


def split_dataset(samples: Sequence, fraction: float = 0.9, seed: int = 0) -> tuple[list, list]:
    """Deterministic shuffled split; |train| = round(fraction * N), clamped so
    both halves are nonempty."""
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to split")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(fraction * len(samples)))
    n_train = min(max(n_train, 1), len(samples) - 1)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    return train, val


# --- dataset directories ------------------------------------------------------


@dataclass
class Sample:
    """One volume/label pair, preprocessed lazily by the consumer."""

    sample_id: str
    volume: np.ndarray
    labels: np.ndarray | None = None
    onehot: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]


def load_sample_dir(dataset_dir: str | Path) -> list[Sample]:
    """Load every volume/label pair listed in the directory manifest."""
    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {dataset_dir}")
    import json

    manifest = json.loads(manifest_path.read_text())
    samples = []
    for entry in manifest["samples"]:
        vol, _ = formats.load_raw_volume(dataset_dir / entry["volume"])
        labels = None
        if entry.get("labels"):
            labels, _ = formats.load_raw_volume(dataset_dir / entry["labels"])
            labels = labels.astype(np.uint8)
        validate_volume(vol)
        if labels is not None:
            validate_labels(labels, vol)
        samples.append(Sample(entry["id"], vol.astype(np.float32), labels))
    return samples


def load_multimodal_nifti(paths: Sequence[str | Path]) -> np.ndarray:
    """Stack four per-modality NIfTI files (T1, T2, T1CE, Flair) into (4, D, H, W)."""
    if len(paths) != N_MODALITIES:
        raise ValueError(f"expected {N_MODALITIES} modality paths, got {len(paths)}")
    channels = [formats.nifti_to_depth_first(formats.read_nifti(p)) for p in paths]
    shapes = {c.shape for c in channels}
    if len(shapes) != 1:
        raise ValueError(f"modality volumes disagree on dims: {sorted(shapes)}")
    return np.stack(channels).astype(np.float32)
