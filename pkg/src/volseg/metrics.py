"""Lesion-wise Dice and 95% Hausdorff distance with false-positive penalties.

A "lesion" is one connected component of the ground-truth binary volume.
Prediction components are assigned to the GT lesions they touch (after a
small dilation); each GT lesion is scored against the union of its assigned
components, and every unassigned prediction component counts as a false
positive with the penalty scores (dice 0, hd95 = 374).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import median

import numpy as np
from scipy import ndimage

PENALTY_HD95 = 374.0
EVAL_CLASSES = ("WT", "TC", "ET")


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|a n b| / (|a| + |b|); 1.0 when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Set voxels with at least one face-adjacent unset neighbor (array
    boundaries count as unset)."""
    mask = np.asarray(mask, dtype=bool)
    footprint = ndimage.generate_binary_structure(mask.ndim, 1)
    interior = ndimage.binary_erosion(mask, structure=footprint, border_value=0)
    return mask & ~interior


def _directed_surface_distances(src_surface: np.ndarray, dst_surface: np.ndarray) -> np.ndarray:
    """Euclidean distance from each src surface voxel to the nearest dst surface voxel."""
    dt = ndimage.distance_transform_edt(~dst_surface)
    return dt[src_surface]


def hd95(a: np.ndarray, b: np.ndarray, percentile: float = 95.0, pooled: bool = True) -> float:
    """95th-percentile symmetric surface distance in voxel units.

    pooled=True takes one percentile over both directed distance sets;
    pooled=False takes the max of the two directed percentiles.
    Raises on empty input; the penalty convention lives in :func:`lesionwise`.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise ValueError("hd95 requires two nonempty masks (penalty path is handled by the caller)")
    sa = surface_voxels(a)
    sb = surface_voxels(b)
    d_ab = _directed_surface_distances(sa, sb)
    d_ba = _directed_surface_distances(sb, sa)
    if pooled:
        return float(np.percentile(np.hstack([d_ab, d_ba]), percentile))
    return float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))


def _connectivity_structure(connectivity: int) -> np.ndarray:
    if connectivity == 26:
        return np.ones((3, 3, 3), dtype=bool)
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


@dataclass(frozen=True)
class LesionMatch:
    """Score entry for one GT lesion (gt_id >= 1) or one FP component (gt_id None)."""

    gt_id: int | None
    pred_ids: tuple[int, ...]
    dice: float
    hd95: float


@dataclass
class LesionwiseResult:
    dice: float
    hd95: float
    n_lesions: int
    n_fp: int
    matches: list[LesionMatch] = field(default_factory=list)


def lesionwise(
    gt: np.ndarray,
    pd: np.ndarray,
    connectivity: int = 26,
    dilation_radius: int = 1,
    penalty_hd: float = PENALTY_HD95,
    pooled_percentile: bool = True,
) -> LesionwiseResult:
    """Score a binary prediction against a binary ground truth, lesion by lesion.

    Assignment: a prediction component belongs to a GT lesion when it
    intersects that lesion dilated by ``dilation_radius`` (26-neighborhood
    ball). Per-lesion hd95 values are capped at the penalty constant.
    """
    gt = np.asarray(gt, dtype=bool)
    pd = np.asarray(pd, dtype=bool)
    if gt.shape != pd.shape:
        raise ValueError(f"shape mismatch {gt.shape} vs {pd.shape}")
    structure = _connectivity_structure(connectivity)
    gt_labels, n_gt = ndimage.label(gt, structure=structure)
    pd_labels, n_pd = ndimage.label(pd, structure=structure)

    if n_gt == 0 and n_pd == 0:
        return LesionwiseResult(dice=1.0, hd95=0.0, n_lesions=0, n_fp=0, matches=[])

    dilate_structure = np.ones((3, 3, 3), dtype=bool)
    assigned: dict[int, list[int]] = {g: [] for g in range(1, n_gt + 1)}
    claimed: set[int] = set()
    for g in range(1, n_gt + 1):
        region = gt_labels == g
        if dilation_radius > 0:
            region = ndimage.binary_dilation(region, structure=dilate_structure, iterations=dilation_radius)
        touching = np.unique(pd_labels[region])
        for p in touching:
            if p != 0:
                assigned[g].append(int(p))
                claimed.add(int(p))

    matches: list[LesionMatch] = []
    for g in range(1, n_gt + 1):
        gt_region = gt_labels == g
        preds = tuple(sorted(assigned[g]))
        if not preds:
            matches.append(LesionMatch(g, (), 0.0, penalty_hd))
            continue
        pred_union = np.isin(pd_labels, preds)
        d = dice(gt_region, pred_union)
        h = min(hd95(gt_region, pred_union, pooled=pooled_percentile), penalty_hd)
        matches.append(LesionMatch(g, preds, d, h))

    for p in range(1, n_pd + 1):
        if p not in claimed:
            matches.append(LesionMatch(None, (p,), 0.0, penalty_hd))

    n_fp = sum(1 for m in matches if m.gt_id is None)
    return LesionwiseResult(
        dice=float(np.mean([m.dice for m in matches])),
        hd95=float(np.mean([m.hd95 for m in matches])),
        n_lesions=n_gt,
        n_fp=n_fp,
        matches=matches,
    )


def aggregate(per_sample: dict[str, dict[str, LesionwiseResult]]) -> list[dict]:
    """Mean/median per evaluation class over a set of per-sample results.

    ``per_sample`` maps sample id -> {class name -> LesionwiseResult}.
    Returns one row per class with mean/median dice and hd95.
    """
    if not per_sample:
        raise ValueError("no reports to aggregate")
    rows = []
    classes = sorted({cls for scores in per_sample.values() for cls in scores}, key=_class_order)
    for cls in classes:
        dices = [scores[cls].dice for scores in per_sample.values() if cls in scores]
        hds = [scores[cls].hd95 for scores in per_sample.values() if cls in scores]
        rows.append(
            {
                "class": cls,
                "mean_dice": float(np.mean(dices)),
                "median_dice": float(median(dices)),
                "mean_hd95": float(np.mean(hds)),
                "median_hd95": float(median(hds)),
                "n_samples": len(dices),
            }
        )
    return rows


def _class_order(cls: str) -> int:
    try:
        return EVAL_CLASSES.index(cls)
    except ValueError:
        return len(EVAL_CLASSES)


def format_table(rows: list[dict]) -> str:
    """Human-readable Mean/Median table."""
    lines = [f"{'Class':<6} {'Mean Dice':>10} {'Median Dice':>12} {'Mean HD95':>10} {'Median HD95':>12}"]
    for r in rows:
        lines.append(
            f"{r['class']:<6} {r['mean_dice']:>10.4f} {r['median_dice']:>12.4f} "
            f"{r['mean_hd95']:>10.2f} {r['median_hd95']:>12.2f}"
        )
    return "\n".join(lines)
