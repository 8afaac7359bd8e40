"""One-time calibration of the toy training run.

Trains the toy encoder and decoder on the 200-scene suite (seed 42) and records the
loss trace, train IoU and wall time in tests/fixtures/train_calibration.json.
The acceptance test re-runs the same training and compares against this file.
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from wpmd import autodiff as ad
from wpmd import gad, harness
from wpmd.metrics import pooled_iou
from wpmd.synth import standard_suite

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=200)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default=str(ROOT / "tests" / "fixtures" / "train_calibration.json"))
    ap.add_argument("--snapshot", help="also save the trained parameters here")
    args = ap.parse_args()

    scenes = standard_suite(n=args.scenes, seed=args.seed)
    data = harness.training_set(scenes)
    tcfg = gad.TrainConfig(steps=args.steps, seed=args.seed)
    cfg = gad.GadConfig()
    t0 = time.perf_counter()
    params, trace = gad.train_toy(data, tcfg, cfg)
    elapsed = time.perf_counter() - t0
    probs = harness.gad_scores([s.image for s in scenes], params, cfg)
    train_iou = pooled_iou([(p > 0.5, s.mask) for p, s in zip(probs, scenes)])
    ratio = trace[-1].total / trace[0].total
    record = {
        "scenes": args.scenes,
        "seed": args.seed,
        "train_config": {"steps": tcfg.steps, "learning_rate": tcfg.learning_rate,
                         "batch_size": tcfg.batch_size, "lam": tcfg.lam},
        "first_total": trace[0].total,
        "last_total": trace[-1].total,
        "loss_ratio": ratio,
        "train_iou": train_iou,
        "seconds": round(elapsed, 1),
        "trace_total": [r.total for r in trace],
    }
    Path(args.out).write_text(json.dumps(record, indent=1) + "\n")
    if args.snapshot:
        ad.save_snapshot(params, args.snapshot)
    print(f"loss {trace[0].total:.4f} -> {trace[-1].total:.4f} (ratio {ratio:.3f}), "
          f"train IoU {train_iou:.3f}, {elapsed:.0f} s")


if __name__ == "__main__":
    main()
