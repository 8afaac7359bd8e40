"""Overfit sanity calibration: 500 steps on one scene, trace saved as a test fixture."""
import json
import time
from pathlib import Path

from wpmd import gad, harness
from wpmd.synth import standard_suite

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "fixtures" / "overfit_calibration.json"


def main(seed: int = 42, steps: int = 500):
    data = harness.training_set(standard_suite(n=1, seed=seed))
    t0 = time.perf_counter()
    _, trace = gad.train_toy(data, gad.TrainConfig(steps=steps, seed=seed))
    elapsed = time.perf_counter() - t0
    decrease = 1 - trace[-1].total / trace[0].total
    OUT.write_text(json.dumps({
        "seed": seed, "steps": steps, "first_total": trace[0].total, "last_total": trace[-1].total,
        "decrease": decrease, "seconds": round(elapsed, 1), "trace_total": [r.total for r in trace],
    }, indent=1) + "\n")
    print(f"loss {trace[0].total:.4f} -> {trace[-1].total:.4f}, decrease {decrease:.1%}, {elapsed:.0f} s")


if __name__ == "__main__":
    main()
