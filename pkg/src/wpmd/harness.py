"""Experiment plumbing shared by the CLI, scripts and acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gad
from .detectors import DetectorConfig, detect, top_hat
from .diffusion import DiffusionParams, wpmd_cascade
from .metrics import evaluate
from .synth import Scene, edge_from_mask

# Fixed detector for the block-count sweep. The trend is sensitive to this choice:
# with k_sigma = 3 IoU dips slightly at four blocks.
ABLATION_DETECTOR = DetectorConfig(radius=2, k_sigma=4.0)
DEFAULT_BLOCKS = (1, 2, 3, 4)
METHODS = ("tophat", "maxmedian", "wpmd+tophat", "gad-snapshot")


@dataclass
class AblationRow:
    blocks: int
    iou: float
    niou: float
    pd: float | None
    fa: float


def ablate_blocks(images, masks, blocks=DEFAULT_BLOCKS, detector: DetectorConfig = ABLATION_DETECTOR,
                  diffusion: DiffusionParams = DiffusionParams(), tau: float = 3.0,
                  fa_mode: str = "component_pixels") -> list[AblationRow]:
    """Top-hat detection after ``n`` WPMD blocks for each ``n`` in ``blocks``."""
    blocks = sorted(set(int(b) for b in blocks))
    if not blocks:
        raise ValueError("empty block sweep")
    if blocks[0] < 1:
        raise ValueError("block counts must be >= 1")
    cascades = [wpmd_cascade(u, diffusion, blocks[-1]) for u in images]
    rows = []
    for n in blocks:
        preds = [detect(c[n - 1], "tophat", detector)[1] for c in cascades]
        rep = evaluate(preds, masks, tau, fa_mode)
        rows.append(AblationRow(n, rep.iou, rep.niou, rep.pd, rep.fa))
    return rows


def non_decreasing(values) -> bool:
    values = list(values)
    return all(b >= a for a, b in zip(values, values[1:]))


def training_set(scenes: list[Scene]):
    """(image, mask, edge) triples with float targets."""
    return [(s.image, s.mask.astype(np.float64), edge_from_mask(s.mask).astype(np.float64)) for s in scenes]


def gad_scores(images, params, cfg: gad.GadConfig | None = None,
               diffusion: DiffusionParams = DiffusionParams()) -> list[np.ndarray]:
    cfg = cfg or gad.config_from_params(params)
    tensors = params if all(isinstance(v, gad.Tensor) for v in params.values()) else gad.as_tensors(params)
    return [gad.predict(gad.encoder_inputs(u, cfg, diffusion), tensors, cfg) for u in images]


def score_maps(method: str, images, detector: DetectorConfig = DetectorConfig(),
               diffusion: DiffusionParams = DiffusionParams(), params=None) -> list[np.ndarray]:
    """Continuous response maps for ROC sweeps."""
    if method == "tophat":
        return [top_hat(u, detector.radius) for u in images]
    if method == "maxmedian":
        return [detect(u, "maxmedian", detector)[0] for u in images]
    if method == "wpmd+tophat":
        return [top_hat(wpmd_cascade(u, diffusion, max(diffusion.steps, 1))[-1], detector.radius) for u in images]
    if method == "gad-snapshot":
        if params is None:
            raise ValueError("gad-snapshot needs a parameter snapshot")
        return gad_scores(images, params, diffusion=diffusion)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def binarize(method: str, images, detector: DetectorConfig = DetectorConfig(),
             diffusion: DiffusionParams = DiffusionParams(), params=None) -> list[np.ndarray]:
    """Binary masks: mean + k*std cut for classical responses, 0.5 for GAD probabilities."""
    if method == "gad-snapshot":
        return [s > 0.5 for s in score_maps(method, images, detector, diffusion, params)]
    if method == "wpmd+tophat":
        smoothed = [wpmd_cascade(u, diffusion, max(diffusion.steps, 1))[-1] for u in images]
        return [detect(u, "tophat", detector)[1] for u in smoothed]
    return [detect(u, method, detector)[1] for u in images]


def sweep_thresholds(scores, count: int) -> np.ndarray:
    """``count`` strictly descending thresholds spanning just above the max to just below the min."""
    if count < 1:
        raise ValueError("need at least one threshold")
    lo = min(float(s.min()) for s in scores)
    hi = max(float(s.max()) for s in scores)
    span = max(hi - lo, 1e-12)
    if count == 1:
        return np.array([hi + 1e-3 * span])
    return np.linspace(hi + 1e-3 * span, lo - 1e-3 * span, count)
