import csv
import time
from pathlib import Path

import pytest

from wpmd import autodiff as ad
from wpmd.cli import main

FIXTURES = Path(__file__).parent / "fixtures"
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """The toy model trained once through the CLI: 200 scenes, 500 steps, seed 42."""
    d = tmp_path_factory.mktemp("trained")
    snap, trace = d / "toy.bin", d / "trace.csv"
    t0 = time.perf_counter()
    code = main(["train-toy", "--n", "200", "--seed", "42", "--train-steps", "500",
                 "--snapshot", str(snap), "--trace", str(trace)])
    seconds = time.perf_counter() - t0
    assert code == 0
    with open(trace) as fh:
        rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    return {"snapshot": snap, "trace": rows, "params": ad.load_snapshot(snap), "seconds": seconds}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
