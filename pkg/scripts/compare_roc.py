"""ROC comparison of all detection pipelines on a held-out suite.

Trains the toy model (or loads --snapshot), then writes one CSV per method into
--out and prints the normalized AUC up to each fa limit.
"""
import argparse
from pathlib import Path

from wpmd import autodiff as ad
from wpmd import gad, harness
from wpmd.metrics import roc, roc_auc, write_roc_csv
from wpmd.synth import standard_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--snapshot")
    ap.add_argument("--train-scenes", type=int, default=200)
    ap.add_argument("--held-out-seed", type=int, default=43)
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--thresholds", type=int, default=64)
    ap.add_argument("--out", default="roc_out")
    args = ap.parse_args()

    if args.snapshot:
        params = ad.load_snapshot(args.snapshot)
    else:
        data = harness.training_set(standard_suite(n=args.train_scenes, seed=42))
        params, _ = gad.train_toy(data, gad.TrainConfig())
    scenes = standard_suite(n=args.scenes, seed=args.held_out_seed)
    images, masks = [s.image for s in scenes], [s.mask for s in scenes]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    limits = (1e-4, 1e-3, 1e-2)
    print("method          " + "  ".join(f"AUC@{f:g}" for f in limits))
    for method in harness.METHODS:
        scores = harness.score_maps(method, images, params=params)
        points = roc(scores, masks, harness.sweep_thresholds(scores, args.thresholds))
        write_roc_csv(points, out / f"{method}.csv")
        print(f"{method:14s}  " + "  ".join(f"{roc_auc(points, f):8.4f}" for f in limits))


if __name__ == "__main__":
    main()
