"""Finite-difference audit of every autodiff primitive and the full decoder pipeline."""
from __future__ import annotations

from collections.abc import Callable

import numpy as np

from . import autodiff as ad
from . import gad
from .autodiff import Tensor, finite_diff_check

PIPELINE = "gad_pipeline"
PRIMITIVE_TOL = 1e-6
PIPELINE_TOL = 1e-4
# Primitives are smooth away from the guarded relu kink, so a five-point stencil with a
# larger step keeps roundoff low on near-zero gradient entries. The pipeline has many
# relu units whose kinks a large step would cross, so it keeps the three-point stencil.
PRIMITIVE_STENCIL = {"eps": 3e-4, "order": 4}
PIPELINE_STENCIL = {"eps": 1e-5, "order": 2}
# every dimension stays <= 8: deep grid 4x4, shallow and output 8x8
PIPELINE_CONFIG = gad.GadConfig(d_model=8, c_shallow=4, c_fine=4, num_mask_tokens=3, wpmd_blocks=2)


def _cases(rng: np.random.Generator) -> dict[str, list[tuple[Callable, np.ndarray]]]:
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 3))
    img = rng.normal(size=(4, 3, 3))
    w3 = rng.normal(size=(3, 3, 3, 4)) / 3
    wt = rng.normal(size=(2, 2, 3, 4)) / 2
    bias = rng.normal(size=4)
    lnw, lnb = rng.normal(size=5), rng.normal(size=5)
    other = rng.normal(size=(4, 5))
    T = Tensor
    return {
        "matmul": [(lambda t: ad.matmul(t, T(b)), a), (lambda t: ad.matmul(T(a), t), b)],
        "conv2d": [(lambda t: ad.conv2d(t, T(w3), T(bias)), img),
                   (lambda t: ad.conv2d(T(img), t, T(bias)), w3),
                   (lambda t: ad.conv2d(T(img), T(w3), t), bias)],
        "transposed_conv2d": [(lambda t: ad.transposed_conv2d(t, T(wt), T(bias)), img),
                              (lambda t: ad.transposed_conv2d(T(img), t, T(bias)), wt),
                              (lambda t: ad.transposed_conv2d(T(img), T(wt), t), bias)],
        "add": [(lambda t: ad.add(t, T(other)), a), (lambda t: ad.add(T(img), t), rng.normal(size=3))],
        "hadamard": [(lambda t: ad.hadamard(t, T(other)), a), (lambda t: ad.hadamard(t, t), a)],
        # keep samples further from the kink at 0 than the widest stencil reaches
        "relu": [(ad.relu, np.where(np.abs(a) < 1e-3, 0.5, a))],
        "sigmoid": [(ad.sigmoid, a)],
        "softmax": [(ad.softmax, 2 * a)],
        "layer_norm": [(lambda t: ad.layer_norm(t, T(lnw), T(lnb)), a),
                       (lambda t: ad.layer_norm(T(a), t, T(lnb)), lnw),
                       (lambda t: ad.layer_norm(T(a), T(lnw), t), lnb)],
        "mean": [(lambda t: ad.mean(ad.hadamard(t, t)), a)],
        "reshape": [(lambda t: ad.reshape(t, (2, 10)), a)],
        "concat": [(lambda t: ad.concat([t, T(other), t], axis=1), a),
                   (lambda t: ad.concat([T(other), t], axis=0), a)],
    }


def _corrupted(fn: Callable) -> Callable:
    """Wrap ``fn`` so the backward pass of its output node is doubled."""
    def wrapped(t):
        out = fn(t)
        good = out._backward
        out._backward = lambda g: tuple(None if v is None else 2.0 * v for v in good(g))
        return out
    return wrapped


def primitive_error(op: str, seed: int, corrupt: str | None = None) -> float:
    rng = np.random.default_rng(seed)
    read = np.random.default_rng(10_000 + seed)
    worst = 0.0
    for fn, x0 in _cases(rng)[op]:
        if corrupt == op:
            fn = _corrupted(fn)
        probe = fn(Tensor(np.array(x0, dtype=float)))
        weights = Tensor(read.normal(size=probe.shape))

        # random linear read-out so no gradient vanishes by symmetry
        def f(t, fn=fn, weights=weights):
            out = fn(t)
            return out if out.data.ndim == 0 else ad.sum_all(ad.hadamard(out, weights))

        worst = max(worst, finite_diff_check(f, Tensor(np.array(x0, dtype=float)), **PRIMITIVE_STENCIL))
    return worst


def pipeline_error(seed: int, corrupt: str | None = None) -> float:
    """Decoder forward plus total loss, checked against both encoder feature maps."""
    cfg = PIPELINE_CONFIG
    rng = np.random.default_rng(seed)
    p = gad.init_decoder(cfg, np.random.default_rng(1000 + seed))
    xs = rng.normal(size=(8, 8, cfg.c_shallow))
    xd = rng.normal(size=(4, 4, cfg.d_model))
    mask = (rng.random((8, 8)) < 0.3).astype(float)
    edge = (rng.random((8, 8)) < 0.2).astype(float)

    def loss(ts, td):
        out = gad.gad_forward(gad.EncoderFeatures(ts, td), p, cfg)
        total = gad.total_loss(out.mask_prob, mask, out.edge_prob, edge)[0]
        return _corrupted(lambda _: total)(None) if corrupt == PIPELINE else total

    return max(
        finite_diff_check(lambda t: loss(t, Tensor(xd)), Tensor(xs), **PIPELINE_STENCIL),
        finite_diff_check(lambda t: loss(Tensor(xs), t), Tensor(xd), **PIPELINE_STENCIL),
    )


def run(seeds=range(20), corrupt: str | None = None, include_pipeline: bool = True) -> dict[str, float]:
    """Worst relative error per operation over ``seeds``; ``corrupt`` names an op to sabotage."""
    report = {op: float(max(primitive_error(op, s, corrupt) for s in seeds)) for op in ad.PRIMITIVES}
    if include_pipeline:
        report[PIPELINE] = float(max(pipeline_error(s, corrupt) for s in seeds))
    return report


def tolerance(op: str) -> float:
    return PIPELINE_TOL if op == PIPELINE else PRIMITIVE_TOL
