"""Synthetic nested-ellipsoid volumes standing in for MRI data at desk scale.

A phantom is a smooth "head" ellipsoid of background tissue containing up to
three nested tumor regions: enhancing core (label 3) inside necrotic core
(label 1) inside an edema shell (label 2). Each of the 4 channels gets a
distinct intensity signature per region so the classes are learnable from
the channel stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .data import N_MODALITIES

# per-channel base intensity for head tissue and the three tumor regions;
# rows: label 0 (tissue), 1 (necrotic), 2 (edema), 3 (enhancing)
_SIGNATURES = np.array(
    [
        [0.30, 0.35, 0.25, 0.30],
        [0.55, 0.90, 0.40, 0.70],
        [0.80, 0.45, 0.60, 0.95],
        [0.95, 0.70, 0.90, 0.50],
    ],
    dtype=np.float32,
)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (16, 32, 32)  # (D, H, W)
    radii: tuple[float, float, float] = (2.0, 4.0, 6.0)  # enhancing <= necrotic <= edema
    center: tuple[float, float, float] | None = None
    head_fraction: float = 0.9  # head semi-axes as a fraction of the half-dims
    noise_sigma: float = 0.02

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"bad dims {self.dims}")
        if len(self.radii) != 3 or min(self.radii) < 0:
            raise ValueError(f"bad radii {self.radii}")
        if not (self.radii[0] <= self.radii[1] <= self.radii[2]):
            raise ValueError(f"radii must be nested (inner <= middle <= outer), got {self.radii}")
        if not 0 < self.head_fraction <= 1:
            raise ValueError("head_fraction must be in (0, 1]")


def _distance_grid(dims, center) -> np.ndarray:
    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float32) for n in dims), indexing="ij")
    return np.sqrt((zz - center[0]) ** 2 + (yy - center[1]) ** 2 + (xx - center[2]) ** 2)


def make_phantom(spec: PhantomSpec, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Build one (volume, labels) pair; deterministic given the seed."""
    d, h, w = spec.dims
    center = spec.center if spec.center is not None else ((d - 1) / 2, (h - 1) / 2, (w - 1) / 2)
    head_semi = np.array([spec.head_fraction * d / 2, spec.head_fraction * h / 2, spec.head_fraction * w / 2])
    r_et, r_nc, r_ed = spec.radii

    if r_ed > head_semi.min():
        raise ValueError(
            f"outer radius {r_ed} exceeds the head extent {head_semi.min():.2f} for dims {spec.dims}"
        )
    for axis, (c, s) in enumerate(zip(center, head_semi)):
        if c - s < -0.5 or c + s > spec.dims[axis] - 0.5:
            raise ValueError(f"head ellipsoid exceeds volume bounds along axis {axis}")

    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float32) for n in spec.dims), indexing="ij")
    head_rho = np.sqrt(
        ((zz - center[0]) / head_semi[0]) ** 2
        + ((yy - center[1]) / head_semi[1]) ** 2
        + ((xx - center[2]) / head_semi[2]) ** 2
    )
    head = head_rho <= 1.0
    dist = _distance_grid(spec.dims, center)

    labels = np.zeros(spec.dims, dtype=np.uint8)
    if r_ed > 0:
        labels[(dist <= r_ed) & head] = 2
    if r_nc > 0:
        labels[(dist <= r_nc) & head] = 1
    if r_et > 0:
        labels[(dist <= r_et) & head] = 3

    rng = np.random.default_rng(seed)
    # smooth radial falloff plus a gentle depth gradient for texture
    profile = (1.0 - 0.25 * np.clip(head_rho, 0.0, 1.0)) * (1.0 + 0.1 * (zz - center[0]) / max(d, 1))
    vol = np.zeros((N_MODALITIES, d, h, w), dtype=np.float32)
    for m in range(N_MODALITIES):
        base = _SIGNATURES[labels, m] * profile
        noisy = base + rng.normal(0.0, spec.noise_sigma, size=base.shape).astype(np.float32)
        vol[m] = np.where(head, np.clip(noisy, 1e-3, None), 0.0)
    return vol, labels


def write_phantom_dataset(
    out_dir: str | Path,
    n: int,
    spec: PhantomSpec,
    seed: int = 0,
    jitter_radii: float = 0.15,
) -> dict:
    """Write ``n`` phantom pairs plus a manifest; per-sample seeds derive from ``seed``.

    Radii are jittered by up to +/- ``jitter_radii`` (relative) per sample so
    the dataset is not n copies of one shape.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        rng = np.random.default_rng((seed, i))
        if jitter_radii > 0:
            factors = 1.0 + rng.uniform(-jitter_radii, jitter_radii, size=3)
            radii = tuple(sorted(float(r * f) for r, f in zip(spec.radii, factors)))
        else:
            radii = spec.radii
        sample_spec = PhantomSpec(
            dims=spec.dims,
            radii=radii,  # type: ignore[arg-type]
            center=spec.center,
            head_fraction=spec.head_fraction,
            noise_sigma=spec.noise_sigma,
        )
        vol, labels = make_phantom(sample_spec, seed=int(rng.integers(0, 2**31)))
        sid = f"phantom_{i:03d}"
        formats.save_raw_volume(out_dir / f"{sid}_volume", vol, {"kind": "image"})
        formats.save_raw_volume(out_dir / f"{sid}_labels", labels, {"kind": "labels"})
        entries.append(
            {
                "id": sid,
                "volume": f"{sid}_volume",
                "labels": f"{sid}_labels",
                "radii": list(radii),
            }
        )
    manifest = {
        "kind": "phantom_dataset",
        "n": n,
        "seed": seed,
        "dims": list(spec.dims),
        "base_radii": list(spec.radii),
        "samples": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
