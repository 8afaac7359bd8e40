"""Pixel-level (IoU, nIoU) and object-level (Pd, Fa) metrics plus ROC sweeps."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

FA_MODES = ("component_pixels", "all_false_pixels")
_EIGHT = np.ones((3, 3), dtype=bool)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def iou(pred, gt) -> float:
    """Intersection over union; two empty masks score 1."""
    pred, gt = _pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def pooled_iou(pairs) -> float:
    inter = union = 0
    for pred, gt in pairs:
        pred, gt = _pair(pred, gt)
        inter += np.count_nonzero(pred & gt)
        union += np.count_nonzero(pred | gt)
    return 1.0 if union == 0 else inter / union


def niou(pairs) -> float:
    """Mean of per-sample IoU."""
    values = [iou(p, g) for p, g in pairs]
    if not values:
        raise ValueError("niou needs at least one sample")
    return float(np.mean(values))


@dataclass
class Component:
    label: int
    pixels: int
    centroid: tuple[float, float]


def connected_components(mask) -> tuple[np.ndarray, list[Component]]:
    """8-connected labeling; labels start at 1 in raster order of first pixel."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    comps = []
    if n:
        idx = np.arange(1, n + 1)
        counts = ndimage.sum_labels(np.ones_like(labels), labels, idx)
        centers = ndimage.center_of_mass(mask, labels, idx)
        comps = [Component(int(i), int(c), (float(cy), float(cx))) for i, c, (cy, cx) in zip(idx, counts, centers)]
    return labels, comps


@dataclass
class MatchResult:
    detected: int
    missed: int
    false_components: int
    false_component_pixels: int
    false_pixels: int
    total_pixels: int
    gt_count: int
    pairs: list[tuple[int, int]] = field(default_factory=list)


def match_targets(pred, gt, tau: float = 3.0) -> MatchResult:
    """Greedy nearest-first one-to-one matching of component centroids within ``tau``."""
    pred, gt = _pair(pred, gt)
    if not tau > 0:
        raise ValueError("tau must be positive")
    _, pcomps = connected_components(pred)
    _, gcomps = connected_components(gt)
    candidates = []
    for gi, g in enumerate(gcomps):
        for pi, p in enumerate(pcomps):
            d = math.hypot(g.centroid[0] - p.centroid[0], g.centroid[1] - p.centroid[1])
            if d <= tau:
                candidates.append((d, gi, pi))
    candidates.sort()
    used_g, used_p, pairs = set(), set(), []
    for _, gi, pi in candidates:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        pairs.append((gi, pi))
    false = [p for i, p in enumerate(pcomps) if i not in used_p]
    return MatchResult(
        detected=len(pairs),
        missed=len(gcomps) - len(pairs),
        false_components=len(false),
        false_component_pixels=sum(p.pixels for p in false),
        false_pixels=int(np.count_nonzero(pred & ~gt)),
        total_pixels=pred.size,
        gt_count=len(gcomps),
        pairs=sorted(pairs),
    )


def pd_fa(results, fa_mode: str = "component_pixels") -> tuple[float | None, float]:
    """Pooled detection probability and false-alarm fraction.

    ``pd`` is None when the batch holds no target at all.
    """
    results = list(results)
    if not results:
        raise ValueError("pd_fa needs at least one match result")
    if fa_mode not in FA_MODES:
        raise ValueError(f"fa_mode must be one of {FA_MODES}")
    gt = sum(r.gt_count for r in results)
    detected = sum(r.detected for r in results)
    attr = "false_component_pixels" if fa_mode == "component_pixels" else "false_pixels"
    fa = sum(getattr(r, attr) for r in results) / sum(r.total_pixels for r in results)
    return (detected / gt if gt else None), fa


@dataclass
class RocPoint:
    threshold: float
    fa: float
    pd: float


def roc_points(score_maps, gts, thresholds, tau: float = 3.0, fa_mode: str = "component_pixels") -> list[RocPoint]:
    """Raw operating points, one per threshold (binarize with ``score > t``), in threshold order."""
    score_maps = [np.asarray(s, dtype=np.float64) for s in score_maps]
    gts = [np.asarray(g, dtype=bool) for g in gts]
    if len(score_maps) != len(gts) or not score_maps:
        raise ValueError(f"misaligned inputs: {len(score_maps)} score maps vs {len(gts)} masks")
    thresholds = [float(t) for t in thresholds]
    if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly descending")
    points = []
    for t in thresholds:
        res = [match_targets(s > t, g, tau) for s, g in zip(score_maps, gts)]
        pd, fa = pd_fa(res, fa_mode)
        points.append(RocPoint(t, fa, 0.0 if pd is None else pd))
    return points


def pareto_front(points) -> list[RocPoint]:
    """Operating points not dominated by one with lower-or-equal fa, sorted by fa.

    Low thresholds merge targets with clutter into large components whose centroids drift
    off target, so raw pd can fall as fa grows; the front keeps the best pd per fa budget.
    """
    front = []
    for p in sorted(points, key=lambda p: (p.fa, -p.pd)):
        if not front or p.pd > front[-1].pd:
            front.append(p)
    return front


def roc(score_maps, gts, thresholds, tau: float = 3.0, fa_mode: str = "component_pixels") -> list[RocPoint]:
    """ROC curve: the Pareto front of :func:`roc_points`, pd non-decreasing in fa."""
    return pareto_front(roc_points(score_maps, gts, thresholds, tau, fa_mode))


def roc_auc(points, fa_max: float) -> float:
    """Trapezoidal area under pd(fa) on [0, fa_max], normalized by ``fa_max``.

    The curve starts at (0, 0) and is held flat after its last point.
    """
    xs = [0.0] + [p.fa for p in points]
    ys = [0.0] + [p.pd for p in points]
    if xs[-1] < fa_max:
        xs.append(fa_max)
        ys.append(ys[-1])
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    keep = xs <= fa_max
    cut_x, cut_y = list(xs[keep]), list(ys[keep])
    if cut_x[-1] < fa_max:
        # interpolate the crossing segment
        j = int(np.argmax(xs > fa_max))
        x0, x1, y0, y1 = xs[j - 1], xs[j], ys[j - 1], ys[j]
        cut_x.append(fa_max)
        cut_y.append(y0 + (y1 - y0) * (fa_max - x0) / (x1 - x0))
    return float(np.trapezoid(cut_y, cut_x) / fa_max)


@dataclass
class EvalReport:
    iou: float
    niou: float
    pd: float | None
    fa: float
    tau: float
    fa_mode: str
    per_image: list[dict] = field(default_factory=list)
    roc: list[dict] = field(default_factory=list)

    @property
    def fa_e6(self) -> float:
        return self.fa * 1e6

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fa_e6"] = self.fa_e6
        return {k: d[k] for k in ("iou", "niou", "pd", "fa", "fa_e6", "tau", "fa_mode", "per_image", "roc")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate(preds, gts, tau: float = 3.0, fa_mode: str = "component_pixels", names=None) -> EvalReport:
    preds, gts = list(preds), list(gts)
    pairs = [_pair(p, g) for p, g in zip(preds, gts)]
    if not pairs or len(preds) != len(gts):
        raise ValueError("evaluate needs equally many, at least one, predictions and masks")
    results = [match_targets(p, g, tau) for p, g in pairs]
    pd, fa = pd_fa(results, fa_mode)
    names = names or [str(i) for i in range(len(pairs))]
    per_image = [
        {"name": n, "iou": iou(p, g), "detected": r.detected, "missed": r.missed,
         "false_components": r.false_components, "false_component_pixels": r.false_component_pixels}
        for n, (p, g), r in zip(names, pairs, results)
    ]
    return EvalReport(pooled_iou(pairs), niou(pairs), pd, fa, tau, fa_mode, per_image)


def write_roc_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fa", "pd"])
        for p in points:
            w.writerow([repr(p.threshold), repr(p.fa), repr(p.pd)])
