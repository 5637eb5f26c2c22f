"""Hungarian matching of predicted clusters to ground truth, and MoF / F1 / mIoU."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DimensionError, InputError, as_matrix


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix, O(k^3).

    Returns ``perm`` with row ``i`` assigned to column ``perm[i]``. Shortest
    augmenting paths with row/column potentials.
    """
    cost = as_matrix(cost, "cost")
    n, m = cost.shape
    if n != m:
        raise DimensionError(f"hungarian needs a square matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise DimensionError("hungarian cost has non-finite entries")
    inf = np.inf
    # 1-based bookkeeping; column 0 is a virtual root
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=np.int64)  # column -> row
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            free = ~used[1:]
            cols = np.flatnonzero(free) + 1
            cur = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            j1 = int(cols[np.argmin(minv[cols])])
            delta = minv[j1]
            u[match_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[match_col[j] - 1] = j - 1
    return perm


def confusion(pred: np.ndarray, gt: np.ndarray, k_pred: int, k_gt: int) -> np.ndarray:
    counts = np.zeros((k_pred, k_gt), dtype=np.int64)
    np.add.at(counts, (pred, gt), 1)
    return counts


def best_mapping(counts: np.ndarray) -> np.ndarray:
    """Map each predicted cluster to a ground-truth class (or -1) maximizing overlap."""
    k_pred, k_gt = counts.shape
    size = max(k_pred, k_gt)
    padded = np.zeros((size, size))
    padded[:k_pred, :k_gt] = counts
    perm = hungarian(-padded)[:k_pred]
    return np.where(perm < k_gt, perm, -1)


def _check_pairs(pred, gt):
    if len(pred) != len(gt):
        raise InputError(f"{len(pred)} predicted sequences for {len(gt)} ground-truth sequences")
    if not pred:
        raise InputError("no sequences to evaluate")
    out = []
    for i, (p, g) in enumerate(zip(pred, gt)):
        p, g = np.asarray(p, dtype=np.int64), np.asarray(g, dtype=np.int64)
        if p.shape != g.shape:
            raise InputError(f"sequence {i}: {p.shape[0]} predicted frames vs {g.shape[0]} ground truth")
        out.append((p, g))
    return out


def match_labels(pred, gt, level: str = "activity") -> list[np.ndarray]:
    """Relabel predictions through Hungarian matching.

    ``level="video"`` matches each sequence on its own; ``"activity"`` pools
    the co-occurrence counts of all given sequences and applies one mapping.
    """
    pairs = _check_pairs(pred, gt)
    if level not in ("video", "activity"):
        raise InputError(f"level must be 'video' or 'activity', got {level!r}")
    k_pred = 1 + max(int(p.max(initial=0)) for p, _ in pairs)
    k_gt = 1 + max(int(g.max(initial=0)) for _, g in pairs)
    if level == "activity":
        counts = sum(confusion(p, g, k_pred, k_gt) for p, g in pairs)
        mapping = best_mapping(counts)
        return [mapping[p] for p, _ in pairs]
    return [best_mapping(confusion(p, g, k_pred, k_gt))[p] for p, g in pairs]


def segments_of(labels) -> list[tuple[int, int, int]]:
    """Run-length encoding as (start, end_exclusive, label)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [labels.size]])
    return [(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]


def segment_f1(pred: np.ndarray, gt: np.ndarray) -> float:
    """Segment-level F1 with a >50% frame-overlap criterion on both sides."""
    gt_segs = segments_of(gt)
    pred_segs = segments_of(pred)
    recalled = sum(np.mean(pred[s:e] == lab) > 0.5 for s, e, lab in gt_segs)
    precise = sum(np.mean(gt[s:e] == lab) > 0.5 for s, e, lab in pred_segs)
    recall = recalled / len(gt_segs)
    precision = precise / len(pred_segs)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    mof: float
    f1: float
    miou: float
    per_class_iou: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_iou"] = {str(k): v for k, v in self.per_class_iou.items()}
        return d


def compute_metrics(pred, gt, ignore_label: int | None = None) -> MetricsReport:
    """MoF and mIoU over all frames, F1 averaged over sequences.

    ``pred``/``gt`` are lists of already-matched label sequences. Frames whose
    ground truth equals ``ignore_label`` are dropped before scoring.
    """
    pairs = _check_pairs(pred, gt)
    if ignore_label is not None:
        pairs = [(p[g != ignore_label], g[g != ignore_label]) for p, g in pairs]
        pairs = [(p, g) for p, g in pairs if g.size]
        if not pairs:
            raise InputError("no frames left after removing the ignored label")
    all_p = np.concatenate([p for p, _ in pairs])
    all_g = np.concatenate([g for _, g in pairs])
    if all_g.size == 0:
        raise InputError("no frames to evaluate")
    mof = float(np.mean(all_p == all_g))
    ious = {}
    for c in np.unique(all_g):
        inter = np.sum((all_p == c) & (all_g == c))
        union = np.sum((all_p == c) | (all_g == c))
        ious[int(c)] = float(inter / union)
    f1 = float(np.mean([segment_f1(p, g) for p, g in pairs if g.size]))
    return MetricsReport(mof=mof, f1=f1, miou=float(np.mean(list(ious.values()))), per_class_iou=ious)


def evaluate(pred, gt, level: str = "activity", groups=None, ignore_label: int | None = None) -> MetricsReport:
    """Match then score. ``groups`` gives an activity key per sequence for pooling."""
    pairs = _check_pairs(pred, gt)
    if level == "activity" and groups is not None:
        matched: list = [None] * len(pairs)
        for key in dict.fromkeys(groups):
            idx = [i for i, g in enumerate(groups) if g == key]
            out = match_labels([pairs[i][0] for i in idx], [pairs[i][1] for i in idx], "activity")
            for i, m in zip(idx, out):
                matched[i] = m
    else:
        matched = match_labels([p for p, _ in pairs], [g for _, g in pairs], level)
    return compute_metrics(matched, [g for _, g in pairs], ignore_label)
