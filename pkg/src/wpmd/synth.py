"""Seeded synthetic infrared scenes with exact target masks.

Randomness comes from numpy's PCG64 bit generator seeded through ``SeedSequence``;
every scene of a suite is an independent spawned child, and each scene spawns three
further children (background, targets, noise). This generator identity is written to
scene sidecars as ``GENERATOR_ID``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image_core import save_mask_pgm, save_pgm

GENERATOR_ID = "numpy.random.PCG64+SeedSequence.spawn/v1"
MAX_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class SceneSpec:
    size: tuple[int, int] = (64, 64)
    target_count: tuple[int, int] = (1, 3)
    target_sigma: tuple[float, float] = (1.0, 2.5)
    target_amplitude: tuple[float, float] = (0.3, 0.7)
    background_level: float = 0.2
    clutter: float = 0.1
    noise_sigma: float = 0.05
    seed: int = 42

    def __post_init__(self):
        lo, hi = self.target_count
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid target count range {self.target_count}")
        for name in ("target_sigma", "target_amplitude"):
            a, b = getattr(self, name)
            if not 0 < a <= b:
                raise ValueError(f"{name} must be a positive (low, high) range, got {(a, b)}")
        if self.clutter < 0 or self.noise_sigma < 0:
            raise ValueError("clutter and noise_sigma must be non-negative")
        h, w = self.size
        if hi > 0 and min(h, w) <= 6 * self.target_sigma[1] + 1:
            raise ValueError(f"frame {self.size} too small for sigma {self.target_sigma[1]} with a 3-sigma margin")


@dataclass
class Scene:
    image: np.ndarray
    mask: np.ndarray
    clean: np.ndarray
    centroids: list[tuple[float, float]]
    blobs: list[dict] = field(default_factory=list)
    seed_path: tuple[int, ...] = ()


def blob_field(shape, blobs) -> np.ndarray:
    """Sum of isotropic Gaussians; each blob is a dict with cy, cx, sigma, amplitude."""
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    out = np.zeros(shape)
    for b in blobs:
        r2 = (yy - b["cy"]) ** 2 + (xx - b["cx"]) ** 2
        out += b["amplitude"] * np.exp(-r2 / (2.0 * b["sigma"] ** 2))
    return out


def half_peak_mask(shape, blobs) -> np.ndarray:
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    mask = np.zeros(shape, dtype=bool)
    for b in blobs:
        r2 = (yy - b["cy"]) ** 2 + (xx - b["cx"]) ** 2
        mask |= b["amplitude"] * np.exp(-r2 / (2.0 * b["sigma"] ** 2)) > 0.5 * b["amplitude"]
    return mask


def clutter_field(shape, rng: np.random.Generator, level: float, amplitude: float) -> np.ndarray:
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    bg = np.full(shape, level)
    for _ in range(2):
        fy, fx = rng.uniform(0.5, 2.0, size=2) / np.array(shape)
        phase = rng.uniform(0, 2 * math.pi)
        bg += 0.5 * amplitude * np.cos(2 * math.pi * (fy * yy + fx * xx) + phase)
    return bg


def _place_blobs(spec: SceneSpec, rng: np.random.Generator) -> list[dict]:
    h, w = spec.size
    n = int(rng.integers(spec.target_count[0], spec.target_count[1] + 1))
    blobs: list[dict] = []
    for _ in range(n):
        sigma = float(rng.uniform(*spec.target_sigma))
        amp = float(rng.uniform(*spec.target_amplitude))
        margin = 3.0 * sigma
        for _ in range(MAX_PLACEMENT_TRIES):
            cy = float(rng.uniform(margin, h - 1 - margin))
            cx = float(rng.uniform(margin, w - 1 - margin))
            if all(math.hypot(cy - b["cy"], cx - b["cx"]) > 3.0 * (sigma + b["sigma"]) for b in blobs):
                break
        else:
            raise RuntimeError(f"could not place {n} non-overlapping targets in {spec.size}")
        blobs.append({"cy": cy, "cx": cx, "sigma": sigma, "amplitude": amp})
    return blobs


def generate_scene(spec: SceneSpec, seed_seq: np.random.SeedSequence | None = None) -> Scene:
    ss = seed_seq if seed_seq is not None else np.random.SeedSequence(spec.seed)
    bg_ss, tgt_ss, noise_ss = ss.spawn(3)
    shape = tuple(spec.size)
    bg = clutter_field(shape, np.random.Generator(np.random.PCG64(bg_ss)), spec.background_level, spec.clutter)
    blobs = _place_blobs(spec, np.random.Generator(np.random.PCG64(tgt_ss)))
    clean = np.clip(bg + blob_field(shape, blobs), 0.0, 1.0)
    noise = np.random.Generator(np.random.PCG64(noise_ss)).normal(0.0, 1.0, size=shape) * spec.noise_sigma
    image = np.clip(clean + noise, 0.0, 1.0)
    return Scene(
        image=image,
        mask=half_peak_mask(shape, blobs),
        clean=clean,
        centroids=[(b["cy"], b["cx"]) for b in blobs],
        blobs=blobs,
        seed_path=(int(ss.entropy), *ss.spawn_key),
    )


def generate_suite(spec: SceneSpec, n: int) -> list[Scene]:
    """``n`` scenes, each from an independent child of ``SeedSequence(spec.seed)``."""
    children = np.random.SeedSequence(spec.seed).spawn(n)
    return [generate_scene(spec, ss) for ss in children]


def standard_suite(n: int = 50, seed: int = 42, **overrides) -> list[Scene]:
    return generate_suite(SceneSpec(seed=seed, **overrides), n)


def edge_from_mask(mask) -> np.ndarray:
    """3x3 morphological gradient: dilation AND NOT erosion (zero outside the frame)."""
    mask = np.asarray(mask, dtype=bool)
    se = np.ones((3, 3), dtype=bool)
    return ndimage.binary_dilation(mask, se) & ~ndimage.binary_erosion(mask, se, border_value=0)


def scene_sidecar(spec: SceneSpec, scene: Scene, index: int) -> dict:
    return {
        "index": index,
        "spec": asdict(spec),
        "seed": spec.seed,
        "seed_path": list(scene.seed_path),
        "centroids": [list(c) for c in scene.centroids],
        "blobs": scene.blobs,
        "generator": GENERATOR_ID,
    }


def export_suite(spec: SceneSpec, n: int, outdir) -> list[dict]:
    """Write ``scene_XXXX.pgm``, ``scene_XXXX_mask.pgm`` and ``scene_XXXX.json`` per scene."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, scene in enumerate(generate_suite(spec, n)):
        stem = f"scene_{i:04d}"
        files = {"image": f"{stem}.pgm", "mask": f"{stem}_mask.pgm", "sidecar": f"{stem}.json"}
        save_pgm(scene.image, outdir / files["image"])
        save_mask_pgm(scene.mask, outdir / files["mask"])
        with open(outdir / files["sidecar"], "w") as fh:
            json.dump(scene_sidecar(spec, scene, i), fh, indent=2)
        manifest.append(files)
    return manifest
