"""Command-line front end.

Every subcommand reads a :class:`RunConfig` built from dataclass defaults, then an optional
JSON file (``--config``), then explicitly given flags. Machine-readable output goes to stdout
or to files; logs go to stderr. Exit codes: 0 success, 1 usage or config error, 2 runtime or
data error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gad, gradcheck, harness
from .detectors import DetectorConfig
from .diffusion import DiffusionParams, diffuse, fd_equivalent
from .image_core import PGMError, load_mask_pgm, load_pgm, save_mask_pgm, save_pgm
from .metrics import FA_MODES, evaluate, roc, roc_auc, write_roc_csv
from .synth import SceneSpec, export_suite, generate_suite

log = logging.getLogger("wpmd")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
COMMANDS = ("synth", "denoise", "detect", "ablate-blocks", "train-toy", "gradcheck", "roc")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """All knobs of every subcommand. ``None`` means "use the subcommand's default"."""

    command: str = ""
    # paths
    input: str | None = None
    gt: str | None = None
    out: str | None = None
    energy: str | None = None
    snapshot: str | None = None
    resume: str | None = None
    trace: str | None = None
    # scenes
    n: int = 50
    seed: int = 42
    size: list[int] = field(default_factory=lambda: [64, 64])
    noise_sigma: float = 0.05
    # diffusion
    k: float = 0.1
    steps: int = 4
    gamma: float = 1.0
    oracle: bool = False
    # detectors (None: tophat radius 1, k_sigma 3; the ablation uses radius 2, k_sigma 4)
    method: str = "tophat"
    radius: int | None = None
    half_length: int = 2
    k_sigma: float | None = None
    # metrics
    tau: float = 3.0
    fa_mode: str = "component_pixels"
    thresholds: int = 64
    threshold_values: list[float] | None = None
    fa_max: float = 1e-3
    # training
    train_steps: int = 500
    learning_rate: float = 0.003
    batch_size: int = 4
    # ablation
    blocks: list[int] = field(default_factory=lambda: list(harness.DEFAULT_BLOCKS))
    # gradcheck
    seeds: int = 20
    tol: float = 1e-4
    corrupt: str | None = None

    def diffusion(self) -> DiffusionParams:
        return DiffusionParams(k=self.k, steps=self.steps, gamma=self.gamma)

    def detector(self, base: DetectorConfig = DetectorConfig()) -> DetectorConfig:
        return DetectorConfig(
            radius=base.radius if self.radius is None else self.radius,
            half_length=self.half_length,
            k_sigma=base.k_sigma if self.k_sigma is None else self.k_sigma,
        )

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(size=tuple(self.size), noise_sigma=self.noise_sigma, seed=self.seed)


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


def load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    """Register the flags for ``names``; defaults stay None so only given flags override."""
    flags = {
        "input": dict(help="input image/score file or directory"),
        "gt": dict(help="ground-truth mask file or directory"),
        "out": dict(help="output path"),
        "energy": dict(help="energy CSV path (default: <out>.energy.csv)"),
        "snapshot": dict(help="parameter snapshot path"),
        "resume": dict(help="snapshot to resume training from"),
        "trace": dict(help="loss trace CSV path"),
        "n": dict(type=int, help="number of scenes (default 50)"),
        "seed": dict(type=int, help="top-level seed (default 42)"),
        "size": dict(type=int, nargs=2, metavar=("H", "W"), help="scene size (default 64 64)"),
        "noise_sigma": dict(type=float, help="scene noise sigma (default 0.05)"),
        "k": dict(type=float, help="contrast parameter k (default 0.1)"),
        "steps": dict(type=int, help="diffusion steps / WPMD blocks (default 4)"),
        "gamma": dict(type=float, help="step scaling in (0, 1] (default 1)"),
        "oracle": dict(action="store_const", const=True, help="use the finite-difference scheme"),
        "method": dict(choices=harness.METHODS, help="detection pipeline (default tophat)"),
        "radius": dict(type=int, help="top-hat radius (default 1; ablation 2)"),
        "half_length": dict(type=int, help="max-median half length (default 2)"),
        "k_sigma": dict(type=float, help="threshold multiplier (default 3; ablation 4)"),
        "tau": dict(type=float, help="centroid match distance in px (default 3)"),
        "fa_mode": dict(choices=FA_MODES, help="false-alarm pixel convention"),
        "thresholds": dict(type=int, help="number of ROC thresholds (default 64)"),
        "threshold_values": dict(type=float, nargs="+", help="explicit descending ROC thresholds"),
        "fa_max": dict(type=float, help="AUC integration limit on fa (default 1e-3)"),
        "train_steps": dict(type=int, help="gradient steps (default 500)"),
        "learning_rate": dict(type=float, help="gradient descent step (default 0.003)"),
        "batch_size": dict(type=int, help="scenes per step (default 4)"),
        "blocks": dict(type=int, nargs="+", help="block counts to sweep (default 1 2 3 4)"),
        "seeds": dict(type=int, help="gradient-check seeds (default 20)"),
        "tol": dict(type=float, help="gradient-check failure threshold (default 1e-4)"),
        "corrupt": dict(help=argparse.SUPPRESS),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wpmd", description="Wavelet Perona-Malik diffusion and toy decoder experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    scene = ("n", "seed", "size", "noise_sigma")
    diff = ("k", "steps", "gamma")
    det = ("radius", "half_length", "k_sigma")
    metric = ("tau", "fa_mode")
    cmds = {
        "synth": ("write a seeded synthetic suite", ("out",) + scene),
        "denoise": ("diffuse one image and log its energy", ("input", "out", "energy", "oracle") + diff),
        "detect": ("detect targets and optionally evaluate", ("input", "gt", "out", "method", "snapshot") + diff + det + metric),
        "ablate-blocks": ("sweep the WPMD block count before top-hat", ("input", "gt", "out", "blocks") + scene + diff + det + metric),
        "train-toy": ("train the toy encoder and decoder", ("input", "snapshot", "resume", "trace", "train_steps", "learning_rate", "batch_size") + scene + diff),
        "gradcheck": ("finite-difference audit of all gradients", ("seeds", "tol", "corrupt")),
        "roc": ("ROC curve and AUC for a detection pipeline", ("input", "gt", "out", "method", "snapshot", "thresholds", "threshold_values", "fa_max") + scene + diff + det + metric),
    }
    for name, (help_text, opts) in cmds.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file; flags override its values")
        _add_common(p, *opts)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key, value in vars(args).items():
        if key in CONFIG_KEYS and value is not None:
            values[key] = value
    try:
        cfg = RunConfig(command=args.command, **values)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.fa_mode not in FA_MODES:
        raise UsageError(f"fa_mode must be one of {FA_MODES}")
    if cfg.method not in harness.METHODS:
        raise UsageError(f"method must be one of {harness.METHODS}")
    try:
        cfg.diffusion()
        cfg.detector()
        if cfg.command in ("synth", "ablate-blocks", "train-toy", "roc"):
            cfg.scene_spec()
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg


# data loading ------------------------------------------------------------------

def _images_in(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.glob("*.pgm") if not p.stem.endswith("_mask"))
    return [path]


def _gt_for(image: Path, gt: Path) -> Path:
    return gt / f"{image.stem}_mask.pgm" if gt.is_dir() else gt


def load_inputs(cfg: RunConfig, need_gt: bool) -> tuple[list[str], list[np.ndarray], list[np.ndarray] | None]:
    """Images (and masks) from --input/--gt, or a generated suite when --input is absent."""
    if cfg.input is None:
        scenes = generate_suite(cfg.scene_spec(), cfg.n)
        names = [f"scene_{i:04d}" for i in range(len(scenes))]
        return names, [s.image for s in scenes], [s.mask for s in scenes]
    src = Path(cfg.input)
    paths = _images_in(src)
    if not paths:
        raise ValueError(f"no images found in {src}")
    images = [load_pgm(p) for p in paths]
    masks = None
    gt = Path(cfg.gt) if cfg.gt else (src if src.is_dir() and need_gt else None)
    if gt is not None:
        masks = [load_mask_pgm(_gt_for(p, gt)) for p in paths]
        for p, u, m in zip(paths, images, masks):
            if u.shape != m.shape:
                raise ValueError(f"dimension mismatch for {p.name}: image {u.shape} vs mask {m.shape}")
    elif need_gt:
        raise ValueError("ground-truth masks are required (--gt)")
    return [p.stem for p in paths], images, masks


def _load_params(cfg: RunConfig):
    if not cfg.snapshot:
        raise ValueError("gad-snapshot needs --snapshot")
    return ad.load_snapshot(cfg.snapshot)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


# subcommands -------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    if not cfg.out:
        raise UsageError("synth needs --out")
    manifest = export_suite(cfg.scene_spec(), cfg.n, cfg.out)
    log.info("wrote %d scenes to %s", len(manifest), cfg.out)
    _emit({"out": cfg.out, "scenes": manifest})
    return EXIT_OK


def cmd_denoise(cfg: RunConfig) -> int:
    if not cfg.input or not cfg.out:
        raise UsageError("denoise needs --input and --out")
    img = load_pgm(cfg.input)
    params = cfg.diffusion()
    out, energies = diffuse(img, params, oracle=cfg.oracle)
    save_pgm(out, cfg.out)
    energy_path = cfg.energy or f"{cfg.out}.energy.csv"
    with open(energy_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "energy"])
        for i, e in enumerate(energies):
            w.writerow([i, repr(e)])
    scheme = f"finite differences (k={fd_equivalent(params).k}, gamma={fd_equivalent(params).gamma})" \
        if cfg.oracle else "wavelet frame"
    log.info("%d steps with %s; energy %.6g -> %.6g", params.steps, scheme, energies[0], energies[-1])
    return EXIT_OK


def cmd_detect(cfg: RunConfig) -> int:
    if not cfg.out:
        raise UsageError("detect needs --out")
    if cfg.input is None:
        raise UsageError("detect needs --input")
    names, images, masks = load_inputs(cfg, need_gt=False)
    params = _load_params(cfg) if cfg.method == "gad-snapshot" else None
    preds = harness.binarize(cfg.method, images, cfg.detector(), cfg.diffusion(), params)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, pred in zip(names, preds):
        save_mask_pgm(pred, out / f"{name}_pred.pgm")
    result = {"method": cfg.method, "masks": [f"{n}_pred.pgm" for n in names]}
    if masks is not None:
        report = evaluate(preds, masks, cfg.tau, cfg.fa_mode, names)
        (out / "report.json").write_text(report.to_json())
        result["report"] = "report.json"
        log.info("iou %.4f niou %.4f pd %s fa %.3g", report.iou, report.niou, report.pd, report.fa)
    _emit(result)
    return EXIT_OK


def cmd_ablate_blocks(cfg: RunConfig) -> int:
    names, images, masks = load_inputs(cfg, need_gt=True)
    detector = cfg.detector(harness.ABLATION_DETECTOR)
    rows = harness.ablate_blocks(images, masks, cfg.blocks, detector, cfg.diffusion(), cfg.tau, cfg.fa_mode)
    trend = harness.non_decreasing(r.iou for r in rows)
    result = {
        "detector": dataclasses.asdict(detector),
        "scenes": len(names),
        "rows": [dataclasses.asdict(r) for r in rows],
        "iou_non_decreasing": trend,
    }
    for r in rows:
        log.info("blocks %d: iou %.4f niou %.4f pd %s fa %.3g", r.blocks, r.iou, r.niou, r.pd, r.fa)
    log.info("IoU trend %s", "non-decreasing" if trend else "violated")
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(result, indent=2))
    _emit(result)
    return EXIT_OK


def _training_data(cfg: RunConfig):
    if cfg.input is None:
        scenes = generate_suite(cfg.scene_spec(), cfg.n)
        return harness.training_set(scenes)
    _, images, masks = load_inputs(cfg, need_gt=True)
    from .synth import edge_from_mask

    return [(u, m.astype(float), edge_from_mask(m).astype(float)) for u, m in zip(images, masks)]


def cmd_train_toy(cfg: RunConfig) -> int:
    if not cfg.snapshot:
        raise UsageError("train-toy needs --snapshot for the output parameters")
    data = _training_data(cfg)
    if not data:
        raise ValueError("empty dataset")
    gcfg = gad.GadConfig(wpmd_blocks=cfg.steps)
    params = None
    if cfg.resume:
        params = gad.as_tensors(ad.load_snapshot(cfg.resume))
        gcfg = gad.config_from_params(params)
    tcfg = gad.TrainConfig(steps=cfg.train_steps, learning_rate=cfg.learning_rate,
                           batch_size=cfg.batch_size, seed=cfg.seed)
    every = max(1, cfg.train_steps // 20)

    def progress(rec):
        if rec.step == 1 or rec.step % every == 0:
            log.info("step %d total %.5f dice %.5f bce %.5f", rec.step, rec.total, rec.dice, rec.bce)

    params, trace = gad.train_toy(data, tcfg, gcfg, params=params, diffusion=cfg.diffusion(), log=progress)
    ad.save_snapshot(params, cfg.snapshot)
    trace_path = cfg.trace or f"{cfg.snapshot}.trace.csv"
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "dice", "bce", "total"])
        for r in trace:
            w.writerow([r.step, repr(r.dice), repr(r.bce), repr(r.total)])
    summary = {"snapshot": cfg.snapshot, "trace": trace_path, "steps": len(trace)}
    if trace:
        summary.update(first_total=trace[0].total, last_total=trace[-1].total)
    _emit(summary)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    if cfg.corrupt is not None and cfg.corrupt not in (*ad.PRIMITIVES, gradcheck.PIPELINE):
        raise UsageError(f"unknown op to corrupt: {cfg.corrupt}")
    report = gradcheck.run(range(cfg.seeds), corrupt=cfg.corrupt)
    failed = [op for op, err in report.items() if err > cfg.tol]
    for op, err in report.items():
        sys.stdout.write(f"{op}\t{err:.3e}\t{'FAIL' if op in failed else 'ok'}\n")
    if failed:
        log.error("gradient check failed for: %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_roc(cfg: RunConfig) -> int:
    names, images, masks = load_inputs(cfg, need_gt=True)
    params = _load_params(cfg) if cfg.method == "gad-snapshot" else None
    scores = harness.score_maps(cfg.method, images, cfg.detector(), cfg.diffusion(), params)
    if cfg.threshold_values:
        ths = cfg.threshold_values
    else:
        ths = harness.sweep_thresholds(scores, cfg.thresholds)
    points = roc(scores, masks, ths, cfg.tau, cfg.fa_mode)
    auc = roc_auc(points, cfg.fa_max)
    if cfg.out:
        write_roc_csv(points, cfg.out)
        _emit({"method": cfg.method, "csv": cfg.out, "points": len(points), "fa_max": cfg.fa_max, "auc": auc})
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["threshold", "fa", "pd"])
        for p in points:
            w.writerow([repr(p.threshold), repr(p.fa), repr(p.pd)])
    log.info("%s: %d scenes, %d curve points, AUC(fa <= %g) = %.4f", cfg.method, len(names), len(points), cfg.fa_max, auc)
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth,
    "denoise": cmd_denoise,
    "detect": cmd_detect,
    "ablate-blocks": cmd_ablate_blocks,
    "train-toy": cmd_train_toy,
    "gradcheck": cmd_gradcheck,
    "roc": cmd_roc,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(message)s", force=True)
        if not args.command:
            raise UsageError(f"a subcommand is required: {', '.join(COMMANDS)}")
        cfg = resolve_config(args)
        return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except (ValueError, PGMError, OSError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
