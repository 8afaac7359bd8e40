"""Toy granularity-aware decoder, its toy encoder, losses and a plain GD trainer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import DiffusionParams, wpmd_cascade
from .image_core import as_image

BCE_CLAMP = 1e-7
DICE_EPS = 1e-6
DEFAULT_LAMBDA = 10.0


@dataclass(frozen=True)
class GadConfig:
    d_model: int = 64
    c_shallow: int = 32
    c_fine: int = 16
    num_mask_tokens: int = 4
    alpha: float = 1.0
    wpmd_blocks: int = 4
    conv_kernel: int = 3
    tconv_kernel: int = 2


@dataclass
class TokenSet:
    mask_tokens: Tensor
    edge_token: Tensor

    def stacked(self) -> Tensor:
        return ad.concat([self.mask_tokens, self.edge_token], axis=0)


@dataclass
class EncoderFeatures:
    x_shallow: Tensor
    x_deep: Tensor

    def __post_init__(self):
        hs, ws = self.x_shallow.shape[:2]
        hd, wd = self.x_deep.shape[:2]
        if (hs, ws) != (2 * hd, 2 * wd):
            raise ad.ShapeError("encoder features", self.x_shallow.shape, self.x_deep.shape,
                                "shallow plane must be twice the deep plane")


@dataclass
class GadOutput:
    mask_prob: Tensor
    edge_prob: Tensor
    mask_logits: Tensor
    edge_logits: Tensor
    final_logits: Tensor
    extras: dict = field(default_factory=dict)


# parameters -----------------------------------------------------------------

def _linear(rng, params, name, n_in, n_out, bias=True):
    params[f"{name}.w"] = ad.uniform_param(rng, (n_in, n_out), n_in)
    if bias:
        params[f"{name}.b"] = ad.uniform_param(rng, (n_out,), n_in)


def _conv(rng, params, name, k, c_in, c_out):
    fan_in = k * k * c_in
    params[f"{name}.w"] = ad.uniform_param(rng, (k, k, c_in, c_out), fan_in)
    params[f"{name}.b"] = ad.uniform_param(rng, (c_out,), fan_in)


def _norm(params, name, c):
    params[f"{name}.w"] = Tensor(np.ones(c), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(c), requires_grad=True)


def init_decoder(cfg: GadConfig, rng: np.random.Generator, c_shallow: int | None = None) -> dict[str, Tensor]:
    d, cf = cfg.d_model, cfg.c_fine
    cs = cfg.c_shallow if c_shallow is None else c_shallow
    k, tk = cfg.conv_kernel, cfg.tconv_kernel
    p: dict[str, Tensor] = {}
    p["tokens.mask"] = Tensor(rng.uniform(-1, 1, (cfg.num_mask_tokens, d)), requires_grad=True)
    p["tokens.edge"] = Tensor(rng.uniform(-1, 1, (1, d)), requires_grad=True)
    for direction in ("t2i", "i2t"):
        for proj in ("q", "k", "v", "o"):
            _linear(rng, p, f"{direction}.{proj}", d, d, bias=False)
        _norm(p, f"{direction}.norm", d)
    _conv(rng, p, "fuse.shallow.conv1", k, cs, cf)
    _norm(p, "fuse.shallow.norm", cf)
    _conv(rng, p, "fuse.shallow.conv2", k, cf, cf)
    _conv(rng, p, "fuse.deep.tconv", tk, d, cf)
    _norm(p, "fuse.deep.norm", cf)
    _conv(rng, p, "fuse.deep.conv", k, cf, cf)
    _conv(rng, p, "refine.tconv", tk, d, cf)
    for head in ("edge", "mask"):
        _linear(rng, p, f"head.{head}.fc1", d, d)
        _linear(rng, p, f"head.{head}.fc2", d, cf)
    return p


def init_encoder(cfg: GadConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    k = cfg.conv_kernel
    p: dict[str, Tensor] = {}
    _conv(rng, p, "enc.shallow", k, 1, cfg.c_shallow)
    _conv(rng, p, "enc.deep", k, cfg.c_shallow, cfg.d_model)
    for level in range(1, cfg.wpmd_blocks + 1):
        c_out = cfg.c_shallow if level == 1 else cfg.d_model
        p[f"enc.wpmd{level}.w"] = ad.uniform_param(rng, (1, 1, 1, c_out), 1)
    return p


def init_params(cfg: GadConfig, seed: int = 0) -> dict[str, Tensor]:
    """Encoder and decoder parameters from one seed, in a fixed order."""
    enc_ss, dec_ss = np.random.SeedSequence(seed).spawn(2)
    params = init_encoder(cfg, np.random.default_rng(enc_ss))
    params.update(init_decoder(cfg, np.random.default_rng(dec_ss)))
    return params


def config_from_params(params) -> GadConfig:
    """Recover the model dimensions from parameter shapes."""
    def shape(name):
        v = params[name]
        return (v.data if isinstance(v, Tensor) else v).shape

    levels = sum(1 for n in params if n.startswith("enc.wpmd"))
    return GadConfig(
        d_model=shape("tokens.edge")[1],
        c_shallow=shape("fuse.shallow.conv1.w")[2],
        c_fine=shape("refine.tconv.w")[3],
        num_mask_tokens=shape("tokens.mask")[0],
        wpmd_blocks=levels if levels else GadConfig.wpmd_blocks,
        conv_kernel=shape("fuse.shallow.conv1.w")[0],
        tconv_kernel=shape("refine.tconv.w")[0],
    )


def as_tensors(arrays: dict) -> dict[str, Tensor]:
    return {n: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for n, v in arrays.items()}


# decoder blocks -----------------------------------------------------------

def _attend(queries: Tensor, keys: Tensor, p, prefix: str) -> tuple[Tensor, Tensor]:
    d = queries.shape[1]
    q = ad.matmul(queries, p[f"{prefix}.q.w"])
    k = ad.matmul(keys, p[f"{prefix}.k.w"])
    v = ad.matmul(keys, p[f"{prefix}.v.w"])
    weights = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d)))
    return ad.matmul(ad.matmul(weights, v), p[f"{prefix}.o.w"]), weights


def two_way_cross_attention(x: Tensor, tokens: TokenSet | Tensor, p) -> tuple[Tensor, Tensor, dict]:
    """Token-to-image then image-to-token attention, each with residual + layer norm.

    Returns (X_coarse, updated tokens, intermediates).
    """
    t = tokens.stacked() if isinstance(tokens, TokenSet) else tokens
    h, w, d = x.shape
    if t.shape[1] != d:
        raise ad.ShapeError("two_way_cross_attention", x.shape, t.shape, "feature and token widths differ")
    flat = ad.reshape(x, (h * w, d))
    t_msg, t_weights = _attend(t, flat, p, "t2i")
    t_new = ad.layer_norm(ad.add(t, t_msg), p["t2i.norm.w"], p["t2i.norm.b"])
    x_msg, x_weights = _attend(flat, t_new, p, "i2t")
    x_new = ad.layer_norm(ad.add(flat, x_msg), p["i2t.norm.w"], p["i2t.norm.b"])
    extras = {"t2i_weights": t_weights, "i2t_weights": x_weights, "t2i_message": t_msg, "i2t_message": x_msg}
    return ad.reshape(x_new, (h, w, d)), t_new, extras


def fuse_multi_granularity(x_shallow: Tensor, x_deep: Tensor, p) -> Tensor:
    s = ad.conv2d(x_shallow, p["fuse.shallow.conv1.w"], p["fuse.shallow.conv1.b"])
    s = ad.relu(ad.layer_norm(s, p["fuse.shallow.norm.w"], p["fuse.shallow.norm.b"]))
    s = ad.conv2d(s, p["fuse.shallow.conv2.w"], p["fuse.shallow.conv2.b"])
    d = ad.transposed_conv2d(x_deep, p["fuse.deep.tconv.w"], p["fuse.deep.tconv.b"])
    d = ad.relu(ad.layer_norm(d, p["fuse.deep.norm.w"], p["fuse.deep.norm.b"]))
    d = ad.conv2d(d, p["fuse.deep.conv.w"], p["fuse.deep.conv.b"])
    if s.shape != d.shape:
        raise ad.ShapeError("fuse_multi_granularity", s.shape, d.shape, "branch drift")
    return ad.add(s, d)


def upsample_coarse(x_coarse: Tensor, p) -> Tensor:
    return ad.transposed_conv2d(x_coarse, p["refine.tconv.w"], p["refine.tconv.b"])


def refine_features(x_coarse: Tensor, x_multi: Tensor, p) -> Tensor:
    up = upsample_coarse(x_coarse, p)
    if up.shape != x_multi.shape:
        raise ad.ShapeError("refine_features", up.shape, x_multi.shape)
    return ad.add(up, x_multi)


def _mlp(x: Tensor, p, prefix: str) -> Tensor:
    hdn = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.fc1.w"]), p[f"{prefix}.fc1.b"]))
    return ad.add(ad.matmul(hdn, p[f"{prefix}.fc2.w"]), p[f"{prefix}.fc2.b"])


def dynamic_kernel(features: Tensor, kernels: Tensor) -> Tensor:
    """Dot each (1, C) kernel row with the channel axis: (H, W, C) x (n, C) -> (H, W, n)."""
    h, w, c = features.shape
    if kernels.shape[1] != c:
        raise ad.ShapeError("dynamic_kernel", features.shape, kernels.shape)
    flat = ad.reshape(features, (h * w, c))
    return ad.reshape(ad.matmul(flat, ad.transpose(kernels)), (h, w, kernels.shape[0]))


def predict_heads(tokens: Tensor, x_fine: Tensor, x_coarse_up: Tensor, p, num_mask_tokens: int):
    """Edge plane from the edge token over X_fine, mask planes from mask tokens over upsampled X_coarse."""
    m = num_mask_tokens
    edge_k = _mlp(ad.take(tokens, slice(m, m + 1)), p, "head.edge")
    mask_k = _mlp(ad.take(tokens, slice(0, m)), p, "head.mask")
    h, w, _ = x_fine.shape
    edge = ad.reshape(dynamic_kernel(x_fine, edge_k), (h, w))
    return edge, dynamic_kernel(x_coarse_up, mask_k)


def combine_edge_mask(mask_logits: Tensor, edge_logits: Tensor, alpha: float = 1.0) -> Tensor:
    if mask_logits.shape != edge_logits.shape:
        raise ad.ShapeError("combine_edge_mask", mask_logits.shape, edge_logits.shape)
    return ad.add(mask_logits, ad.scale(edge_logits, alpha))


def gad_forward(features: EncoderFeatures, p, cfg: GadConfig) -> GadOutput:
    m = cfg.num_mask_tokens
    tokens = ad.concat([p["tokens.mask"], p["tokens.edge"]], axis=0)
    x_coarse, t_new, extras = two_way_cross_attention(features.x_deep, tokens, p)
    x_multi = fuse_multi_granularity(features.x_shallow, features.x_deep, p)
    up = upsample_coarse(x_coarse, p)
    x_fine = ad.add(up, x_multi)
    edge_logits, mask_planes = predict_heads(t_new, x_fine, up, p, m)
    h, w = edge_logits.shape
    selected = ad.reshape(ad.take(mask_planes, (slice(None), slice(None), slice(0, 1))), (h, w))
    final = combine_edge_mask(selected, edge_logits, cfg.alpha)
    extras.update(tokens=t_new, mask_planes=mask_planes, x_coarse=x_coarse, x_multi=x_multi)
    return GadOutput(ad.sigmoid(final), ad.sigmoid(edge_logits), selected, edge_logits, final, extras)


# losses ----------------------------------------------------------------------

def _same(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ad.ShapeError(op, a.shape, b.shape)


def dice_loss(pred: Tensor, label) -> Tensor:
    """Soft Dice ``1 - 2 sum(p l) / (sum p + sum l + eps)``."""
    label = ad.constant(np.asarray(label.data if isinstance(label, Tensor) else label, dtype=np.float64))
    pred = ad.constant(pred)
    _same("dice_loss", pred, label)
    inter = ad.sum_all(ad.hadamard(pred, label))
    denom = ad.shift(ad.add(ad.sum_all(pred), ad.sum_all(label)), DICE_EPS)
    return ad.shift(ad.scale(ad.div(inter, denom), -2.0), 1.0)


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    target = ad.constant(np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64))
    pred = ad.constant(pred)
    _same("bce_loss", pred, target)
    p = ad.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    pos = ad.hadamard(target, ad.log(p))
    neg = ad.hadamard(ad.constant(1.0 - target.data), ad.log(ad.shift(ad.scale(p, -1.0), 1.0)))
    return ad.scale(ad.mean(ad.add(pos, neg)), -1.0)


def total_loss(mask_pred, label, edge_pred, gt_edge, lam: float = DEFAULT_LAMBDA) -> tuple[Tensor, Tensor, Tensor]:
    """Return (dice + lam * bce, dice, bce)."""
    dice = dice_loss(mask_pred, label)
    bce = bce_loss(edge_pred, gt_edge)
    return ad.add(dice, ad.scale(bce, lam)), dice, bce


# toy encoder and training ----------------------------------------------------

def _avg_pool2(x: Tensor) -> Tensor:
    parts = [ad.take(x, (slice(i, None, 2), slice(j, None, 2))) for i in (0, 1) for j in (0, 1)]
    return ad.scale(ad.add(ad.add(parts[0], parts[1]), ad.add(parts[2], parts[3])), 0.25)


def _pool_np(x: np.ndarray) -> np.ndarray:
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def encoder_inputs(image, cfg: GadConfig, diffusion: DiffusionParams = DiffusionParams()) -> dict:
    """Constant encoder inputs: the image and its WPMD cascade at full and half resolution."""
    u = as_image(image)
    if u.shape[0] % 2 or u.shape[1] % 2:
        raise ValueError(f"toy encoder needs even image dimensions, got {u.shape}")
    levels = wpmd_cascade(u, diffusion, cfg.wpmd_blocks)
    return {
        "image": u[:, :, None],
        "levels": [lv[:, :, None] for lv in levels],
        "levels_half": [_pool_np(lv)[:, :, None] for lv in levels],
    }


def toy_encoder(inputs: dict, p) -> EncoderFeatures:
    """Two conv layers; WPMD level 1 feeds the shallow layer, the rest the deep one."""
    u = Tensor(inputs["image"])
    shallow = ad.conv2d(u, p["enc.shallow.w"], p["enc.shallow.b"])
    shallow = ad.add(shallow, ad.conv2d(Tensor(inputs["levels"][0]), p["enc.wpmd1.w"]))
    shallow = ad.relu(shallow)
    deep = ad.conv2d(_avg_pool2(shallow), p["enc.deep.w"], p["enc.deep.b"])
    for level, lv in enumerate(inputs["levels_half"][1:], start=2):
        deep = ad.add(deep, ad.conv2d(Tensor(lv), p[f"enc.wpmd{level}.w"]))
    return EncoderFeatures(shallow, ad.relu(deep))


def model_forward(inputs: dict, p, cfg: GadConfig) -> GadOutput:
    return gad_forward(toy_encoder(inputs, p), p, cfg)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    learning_rate: float = 0.003
    batch_size: int = 4
    seed: int = 42
    lam: float = DEFAULT_LAMBDA


@dataclass
class TrainRecord:
    step: int
    dice: float
    bce: float
    total: float


class TrainingError(RuntimeError):
    pass


def batch_order(n: int, steps: int, batch_size: int, seed: int) -> list[list[int]]:
    """Deterministic mini-batches: reshuffle each pass with a seeded generator."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    batches, perm, pos = [], rng.permutation(n), 0
    for _ in range(steps):
        batch = []
        for _ in range(min(batch_size, n)):
            if pos == n:
                perm, pos = rng.permutation(n), 0
            batch.append(int(perm[pos]))
            pos += 1
        batches.append(batch)
    return batches


def train_toy(dataset, config: TrainConfig, cfg: GadConfig = GadConfig(), params=None,
              inputs=None, diffusion: DiffusionParams = DiffusionParams(), log=None):
    """Plain gradient descent on the mean total loss of each mini-batch.

    ``dataset`` holds (image, mask, edge) triples. Returns (params, list of TrainRecord),
    one record per step measured before that step's update.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    if config.learning_rate < 0:
        raise ValueError("learning rate must be non-negative")
    if params is None:
        params = init_params(cfg, config.seed)
    if inputs is None:
        inputs = [encoder_inputs(img, cfg, diffusion) for img, _, _ in dataset]
    trace = []
    for step, batch in enumerate(batch_order(len(dataset), config.steps, config.batch_size, config.seed), start=1):
        losses, dices, bces = [], [], []
        for i in batch:
            _, mask, edge = dataset[i]
            out = model_forward(inputs[i], params, cfg)
            loss, dice, bce = total_loss(out.mask_prob, mask, out.edge_prob, edge, config.lam)
            losses.append(loss)
            dices.append(float(dice.data))
            bces.append(float(bce.data))
        total = losses[0]
        for extra in losses[1:]:
            total = ad.add(total, extra)
        total = ad.scale(total, 1.0 / len(losses))
        value = float(total.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step}")
        trace.append(TrainRecord(step, float(np.mean(dices)), float(np.mean(bces)), value))
        if log is not None:
            log(trace[-1])
        total.backward()
        for t in params.values():
            if t.grad is not None:
                t.data -= config.learning_rate * t.grad
                t.grad = None
    return params, trace


def predict(inputs: dict, params, cfg: GadConfig) -> np.ndarray:
    """Mask probabilities for one prepared sample."""
    return model_forward(inputs, params, cfg).mask_prob.data.copy()
