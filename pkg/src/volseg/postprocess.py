"""From per-class probabilities to final label cubes.

Pipeline: synthesize a background channel, normalize, argmax into a combined
label cube, split into the evaluation classes (WT/TC/ET), and reject small
spurious components by mean slice area and depth span. The area thresholds
are tunable per class against lesion-wise Dice on held-out samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .metrics import EVAL_CLASSES, LesionwiseResult, lesionwise

log = logging.getLogger(__name__)

# combined-cube labels making up each evaluation class
CLASS_LABELS = {"WT": (1, 2, 3), "TC": (1, 3), "ET": (3,)}

DEFAULT_AREA_GRID = (5.0, 10.0, 20.0, 25.0, 50.0, 75.0, 100.0, 125.0, 150.0)


@dataclass(frozen=True)
class FilterThresholds:
    """Per-class minimum mean slice area (voxels/slice) and depth-span floor."""

    area: tuple[float, float, float] = (125.0, 75.0, 20.0)  # (WT, TC, ET)
    min_depth_span: int = 5

    def __post_init__(self):
        if len(self.area) != 3 or min(self.area) <= 0:
            raise ValueError(f"area thresholds must be 3 positive floats, got {self.area}")
        if self.min_depth_span < 1:
            raise ValueError("min_depth_span must be >= 1")

    def area_for(self, cls: str) -> float:
        return self.area[EVAL_CLASSES.index(cls)]


def combine(pd: np.ndarray) -> np.ndarray:
    """Per-class probabilities (3, D, H, W) -> combined labels (D, H, W) in {0..3}.

    Background is 1 - sum of the class channels (clamped at 0); the 4-channel
    stack is normalized by its per-voxel sum before the argmax. Voxels whose
    channel sum is 0 get label 0; ties resolve to the lower label.
    """
    pd = np.asarray(pd, dtype=np.float32)
    if pd.ndim != 4 or pd.shape[0] != 3:
        raise ValueError(f"expected (3, D, H, W) probabilities, got {pd.shape}")
    background = np.clip(1.0 - pd.sum(axis=0), 0.0, None)
    stack = np.concatenate([background[None], pd], axis=0)
    total = stack.sum(axis=0, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    stack = stack / safe
    labels = np.argmax(stack, axis=0).astype(np.uint8)
    labels[total[0] == 0] = 0
    return labels


def derive_class(labels: np.ndarray, cls: str) -> np.ndarray:
    """Binary volume of one evaluation class (WT/TC/ET) from combined labels."""
    if cls not in CLASS_LABELS:
        raise ValueError(f"unknown class {cls!r}, expected one of {sorted(CLASS_LABELS)}")
    labels = np.asarray(labels)
    return np.isin(labels, CLASS_LABELS[cls])


@dataclass(frozen=True)
class ComponentStats:
    component_id: int
    volume: int
    depth_span: int
    mean_area: float


@dataclass
class ComponentLabeling:
    labels: np.ndarray  # int32 (D, H, W), 0 = no component, ids dense 1..count
    count: int
    stats: list[ComponentStats] = field(default_factory=list)


def connected_components(binary: np.ndarray, connectivity: int = 26) -> ComponentLabeling:
    """Label connected foreground regions and compute per-component statistics.

    depth_span counts the depth slices a component occupies; mean_area is its
    voxel volume divided by that count (area averaged over occupied slices).
    """
    binary = np.asarray(binary, dtype=bool)
    if binary.ndim != 3:
        raise ValueError(f"expected a (D, H, W) binary volume, got {binary.shape}")
    if connectivity == 26:
        structure = np.ones((3, 3, 3), dtype=bool)
    elif connectivity == 6:
        structure = ndimage.generate_binary_structure(3, 1)
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    labels, count = ndimage.label(binary, structure=structure)
    labels = labels.astype(np.int32)
    stats = []
    for cid in range(1, count + 1):
        mask = labels == cid
        volume = int(mask.sum())
        occupied = np.unique(np.nonzero(mask)[0])
        depth_span = int(occupied.size)
        stats.append(ComponentStats(cid, volume, depth_span, volume / depth_span))
    return ComponentLabeling(labels=labels, count=count, stats=stats)


def filter_components(
    labeling: ComponentLabeling, thresholds: FilterThresholds, cls: str
) -> np.ndarray:
    """Keep components with mean slice area above the class threshold AND a
    depth span of at least min_depth_span; zero out everything else."""
    a_thresh = thresholds.area_for(cls)
    keep = [
        s.component_id
        for s in labeling.stats
        if s.mean_area > a_thresh and s.depth_span >= thresholds.min_depth_span
    ]
    return np.isin(labeling.labels, keep)


def filtered_class_masks(
    labels: np.ndarray,
    thresholds: FilterThresholds,
    connectivity: int = 26,
) -> dict[str, np.ndarray]:
    """Combined labels -> per-class binaries after component filtering."""
    out = {}
    for cls in EVAL_CLASSES:
        labeling = connected_components(derive_class(labels, cls), connectivity)
        out[cls] = filter_components(labeling, thresholds, cls)
    return out


def tune_thresholds(
    predictions: list[np.ndarray],
    gt_labels: list[np.ndarray],
    grid: tuple[float, ...] = DEFAULT_AREA_GRID,
    iterations: int = len(DEFAULT_AREA_GRID),
    seed: int = 0,
    min_depth_span: int = 5,
    connectivity: int = 26,
) -> tuple[FilterThresholds, dict]:
    """Search per-class area thresholds maximizing mean lesion-wise Dice.

    Each class's score depends only on its own threshold, so the search runs
    per class over candidate values drawn from the grid: all of them when
    ``iterations`` covers the grid, otherwise a seeded subsample. Ties go to
    the smaller threshold. Returns the chosen thresholds plus a report with
    every candidate's score.
    """
    if not grid:
        raise ValueError("empty threshold grid")
    if len(predictions) != len(gt_labels):
        raise ValueError("predictions and ground truths must pair up")
    if not predictions:
        raise ValueError("no samples to tune on")

    candidates = sorted(set(float(g) for g in grid))
    rng = np.random.default_rng(seed)
    if iterations < len(candidates):
        picked = sorted(rng.choice(len(candidates), size=max(iterations, 1), replace=False))
        candidates = [candidates[i] for i in picked]

    combined = [combine(pd) for pd in predictions]
    per_class_scores: dict[str, dict[float, float]] = {cls: {} for cls in EVAL_CLASSES}
    for cls in EVAL_CLASSES:
        labelings = [connected_components(derive_class(cm, cls), connectivity) for cm in combined]
        gt_masks = [derive_class(np.asarray(gt), cls) for gt in gt_labels]
        for a_thresh in candidates:
            thr = FilterThresholds(
                area=tuple(a_thresh if c == cls else candidates[0] for c in EVAL_CLASSES),  # type: ignore[arg-type]
                min_depth_span=min_depth_span,
            )
            scores = [
                lesionwise(gt_mask, filter_components(labeling, thr, cls), connectivity).dice
                for labeling, gt_mask in zip(labelings, gt_masks)
            ]
            per_class_scores[cls][a_thresh] = float(np.mean(scores))

    selected = []
    for cls in EVAL_CLASSES:
        scores = per_class_scores[cls]
        best = max(scores.values())
        selected.append(min(t for t, s in scores.items() if s == best))
    thresholds = FilterThresholds(area=tuple(selected), min_depth_span=min_depth_span)  # type: ignore[arg-type]
    report = {
        "grid": list(grid),
        "candidates": candidates,
        "iterations": iterations,
        "seed": seed,
        "min_depth_span": min_depth_span,
        "connectivity": connectivity,
        "per_class_mean_dice": {
            cls: {f"{t:g}": s for t, s in sorted(scores.items())}
            for cls, scores in per_class_scores.items()
        },
        "selected": {cls: selected[i] for i, cls in enumerate(EVAL_CLASSES)},
    }
    return thresholds, report


def evaluate_sample(
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    thresholds: FilterThresholds | None = None,
    connectivity: int = 26,
) -> dict[str, LesionwiseResult]:
    """Lesion-wise scores per evaluation class for one sample."""
    scores = {}
    for cls in EVAL_CLASSES:
        pred_mask = derive_class(pred_labels, cls)
        if thresholds is not None:
            labeling = connected_components(pred_mask, connectivity)
            pred_mask = filter_components(labeling, thresholds, cls)
        scores[cls] = lesionwise(derive_class(gt_labels, cls), pred_mask, connectivity)
    return scores
