"""Unfolded guided back-projection network.

Each of the K stages refines the running estimate u by projecting it
back to the input grid, upsampling the resulting error, and adding a
learned correction:

    u <- u + ResNL(upsample(db(u) - f), G)

db is a depthwise 3x3 conv followed by 2x2 average pooling; upsampling
is a depthwise stride-2 transposed conv; ResNL is a residual CNN whose
front end is a 3-head windowed attention block over the error map, the
guide G, and their concatenation.  Stage parameters are not shared.

At initialization db is the identity kernel, upsampling the bilinear
kernel, residual blocks are the identity, and the in/tail convs route
the error straight through with a negative gain, so a fresh stage of
width >= 12 applies one classical back-projection update exactly and
training refines the scheme from there.  Setting all weights to zero
collapses the model onto plain bicubic upsampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, tensor
from .errors import DataError, ShapeMismatchError
from .guidance import (
    ClusterParams,
    GuideConfig,
    GuideImage,
    GuideMode,
    build_guide_cluster,
    guide_param_count,
    init_cluster_params,
    similarity_guide_tensor,
)
from .nnops import (
    avg_pool2,
    bicubic_up2,
    conv2d,
    depthwise_conv2d,
    neighborhood_flatten,
    transposed_conv2d_s2,
)

RES_BLOCKS = 3
MASK_SCORE = -1e9
# narrow stages cannot carry the signed error split, so their tail convs
# start at a tenth of the usual fan-in bound instead of the wired step
TAIL_INIT_SCALE = 0.1
# step size of the classical back-projection update a fresh stage applies
BACK_PROJECT_GAIN = 1.0


@dataclass(frozen=True)
class AttentionConfig:
    window: int = 5
    patch_error: int = 3
    patch_guide: int = 3
    patch_concat: int = 1
    feat_dim: int = 32
    fused_dim: int = 64

    def __post_init__(self):
        if self.window < 1:
            raise DataError("window size must be positive")
        for p in (self.patch_error, self.patch_guide, self.patch_concat):
            if p < 1 or p % 2 == 0:
                raise DataError("patch sizes must be odd and positive")
        if self.feat_dim < 1 or self.fused_dim < 1:
            raise DataError("feature dims must be positive")


@dataclass(frozen=True)
class ModelConfig:
    stages: int = 6
    resnl_width: int = 128
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    guide: GuideConfig = field(default_factory=GuideConfig)
    use_mha: bool = True
    use_guide: bool = True

    def __post_init__(self):
        if self.stages < 0:
            raise DataError("stage count must be nonnegative")
        if self.resnl_width < 1:
            raise DataError("resnl width must be positive")
        if self.use_mha and not self.use_guide:
            raise DataError("attention needs the guide; disable use_mha first")

    @classmethod
    def from_variant(cls, variant: str, **overrides) -> "ModelConfig":
        """Named architecture presets used throughout the experiments."""
        table = {
            "ginet": dict(
                use_mha=True,
                use_guide=True,
                guide=GuideConfig(mode=GuideMode.SIMILARITY),
            ),
            "ginet+": dict(
                use_mha=True,
                use_guide=True,
                guide=GuideConfig(mode=GuideMode.CLUSTER),
            ),
            "resnet": dict(
                use_mha=False,
                use_guide=True,
                guide=GuideConfig(mode=GuideMode.SIMILARITY),
            ),
            "resnet_sr": dict(use_mha=False, use_guide=False),
        }
        if variant not in table:
            raise DataError(f"unknown model variant {variant!r}")
        merged = dict(table[variant])
        merged.update(overrides)
        return cls(**merged)


def _uniform(rng, shape, fan_in, scale=1.0):
    bound = scale / math.sqrt(fan_in)
    return tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


# bilinear interpolation kernel for the stride-2 transposed conv: at
# initialization upsampling is classical piecewise-linear interpolation
_BILINEAR = np.array(
    [[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]], dtype=np.float64
)


@dataclass
class StageParams:
    db_w: Tensor  # depthwise 3x3, 54 params at 6 channels
    up_w: Tensor  # depthwise transposed 3x3, 54 params
    heads: list  # per head: theta_w/b, phi_w/b, value_w/b, out_w/b
    fuse_w: Tensor
    fuse_b: Tensor
    in_w: Tensor
    in_b: Tensor
    blocks: list  # per block: w1, b1, w2, b2
    tail_w: Tensor
    tail_b: Tensor

    def named_params(self, prefix: str) -> dict:
        out = {f"{prefix}.db.w": self.db_w, f"{prefix}.up.w": self.up_w}
        for h, head in enumerate(self.heads):
            for key, value in head.items():
                out[f"{prefix}.attn{h}.{key}"] = value
        if self.fuse_w is not None:
            out[f"{prefix}.fuse.w"] = self.fuse_w
            out[f"{prefix}.fuse.b"] = self.fuse_b
        out[f"{prefix}.in.w"] = self.in_w
        out[f"{prefix}.in.b"] = self.in_b
        for i, blk in enumerate(self.blocks):
            for key, value in blk.items():
                out[f"{prefix}.block{i}.{key}"] = value
        out[f"{prefix}.tail.w"] = self.tail_w
        out[f"{prefix}.tail.b"] = self.tail_b
        return out


def _head_ref_channels(cfg: ModelConfig):
    # (ref channels, patch size) per head: error, guide, concatenation
    a = cfg.attention
    return ((6, a.patch_error), (6, a.patch_guide), (12, a.patch_concat))


def init_stage(cfg: ModelConfig, rng) -> StageParams:
    d = cfg.attention.feat_dim
    heads = []
    if cfg.use_mha:
        for c_ref, _patch in _head_ref_channels(cfg):
            heads.append(
                {
                    "theta.w": _uniform(rng, (d, c_ref, 1, 1), c_ref),
                    "theta.b": _uniform(rng, (d,), c_ref),
                    "phi.w": _uniform(rng, (d, c_ref, 1, 1), c_ref),
                    "phi.b": _uniform(rng, (d,), c_ref),
                    "value.w": _uniform(rng, (d, 6, 1, 1), 6),
                    "value.b": _uniform(rng, (d,), 6),
                    "out.w": _uniform(rng, (d, d, 1, 1), d),
                    "out.b": _uniform(rng, (d,), d),
                }
            )
        fuse_w = _uniform(rng, (cfg.attention.fused_dim, 3 * d, 1, 1), 3 * d)
        fuse_b = _uniform(rng, (cfg.attention.fused_dim,), 3 * d)
        in_ch = 6 + cfg.attention.fused_dim
    else:
        fuse_w = fuse_b = None
        in_ch = 12 if cfg.use_guide else 6
    width = cfg.resnl_width
    db_w = np.zeros((6, 3, 3))
    db_w[:, 1, 1] = 1.0
    # residual branches start closed (second conv zero), so each block is
    # the identity at initialization and opens up during training
    blocks = [
        {
            "w1": _uniform(rng, (width, width, 3, 3), width * 9),
            "b1": _uniform(rng, (width,), width * 9),
            "w2": tensor(np.zeros((width, width, 3, 3)), requires_grad=True),
            "b2": tensor(np.zeros((width,)), requires_grad=True),
        }
        for _ in range(RES_BLOCKS)
    ]
    in_w = _uniform(rng, (width, in_ch, 3, 3), in_ch * 9)
    in_b = _uniform(rng, (width,), in_ch * 9)
    tail_w = _uniform(rng, (6, width, 3, 3), width * 9, scale=TAIL_INIT_SCALE)
    tail_b = _uniform(rng, (6,), width * 9, scale=TAIL_INIT_SCALE)
    if width >= 12:
        # route the signed error through the first 12 features and read it
        # back negated: the fresh stage applies one classical
        # back-projection update, u <- u - gain * e, exactly
        in_w.data[:12] = 0.0
        in_b.data[:12] = 0.0
        for c in range(6):
            in_w.data[c, c, 1, 1] = 1.0
            in_w.data[6 + c, c, 1, 1] = -1.0
        tail_w.data[:] = 0.0
        tail_b.data[:] = 0.0
        for c in range(6):
            tail_w.data[c, c, 1, 1] = -BACK_PROJECT_GAIN
            tail_w.data[c, 6 + c, 1, 1] = BACK_PROJECT_GAIN
    return StageParams(
        db_w=tensor(db_w, requires_grad=True),
        up_w=tensor(np.broadcast_to(_BILINEAR, (6, 3, 3)).copy(), requires_grad=True),
        heads=heads,
        fuse_w=fuse_w,
        fuse_b=fuse_b,
        in_w=in_w,
        in_b=in_b,
        blocks=blocks,
        tail_w=tail_w,
        tail_b=tail_b,
    )


class UnfoldedModel:
    def __init__(self, cfg: ModelConfig, guide_params, stages):
        self.cfg = cfg
        self.guide_params = guide_params
        self.stages = list(stages)

    def named_params(self) -> dict:
        out = {}
        if self.guide_params is not None:
            out.update(self.guide_params.named_params())
        for k, stage in enumerate(self.stages):
            out.update(stage.named_params(f"stage{k}"))
        return out


def init_model(cfg: ModelConfig, seed: int) -> UnfoldedModel:
    rng = np.random.default_rng(seed)
    guide_params = None
    if cfg.use_guide and cfg.guide.mode is GuideMode.CLUSTER:
        guide_params = init_cluster_params(cfg.guide, rng)
    stages = [init_stage(cfg, rng) for _ in range(cfg.stages)]
    return UnfoldedModel(cfg, guide_params, stages)


def db_operator(u: Tensor, stage: StageParams) -> Tensor:
    """Downgrade-and-blur surrogate: depthwise conv then 2x2 mean pooling."""
    return avg_pool2(depthwise_conv2d(u, stage.db_w, pad=1))


def upsample_error(e_lr: Tensor, stage: StageParams) -> Tensor:
    return transposed_conv2d_s2(e_lr, stage.up_w)


def _tile(x: Tensor, win: int) -> Tensor:
    # [C,Hp,Wp] -> [T, win*win, C]
    c = x.shape[0]
    th, tw = x.shape[1] // win, x.shape[2] // win
    t = x.reshape(c, th, win, tw, win)
    t = t.transpose(1, 3, 2, 4, 0)
    return t.reshape(th * tw, win * win, c)


def _untile(x: Tensor, win: int, th: int, tw: int) -> Tensor:
    # [T, win*win, C] -> [C, th*win, tw*win]
    c = x.shape[2]
    t = x.reshape(th, tw, win, win, c)
    t = t.transpose(4, 0, 2, 1, 3)
    return t.reshape(c, th * win, tw * win)


def _pad_to_tiles(x: Tensor, win: int) -> Tensor:
    _, h, w = x.shape
    ph = (-h) % win
    pw = (-w) % win
    if ph or pw:
        return ad.pad_const(x, ((0, 0), (0, ph), (0, pw)))
    return x


def attention_head(
    e: Tensor,
    ref: Tensor,
    head: dict,
    cfg: AttentionConfig,
    patch: int,
    collect=None,
) -> Tensor:
    """One windowed similarity head.

    Scores come from patch descriptors of the reference's feature
    projections; the aggregated signal is always the projected error
    map.  Attention is restricted to non-overlapping window x window
    tiles; partial border tiles are zero-padded and the padded positions
    are masked out of the softmax.
    """
    if e.shape[1:] != ref.shape[1:]:
        raise ShapeMismatchError("error map and reference grids differ")
    _, h, w = e.shape
    win = cfg.window
    q = conv2d(ref, head["theta.w"], head["theta.b"], pad=0)
    k = conv2d(ref, head["phi.w"], head["phi.b"], pad=0)
    v = conv2d(e, head["value.w"], head["value.b"], pad=0)
    if patch > 1:
        q = neighborhood_flatten(q, patch)
        k = neighborhood_flatten(k, patch)
    qp, kp, vp = (_pad_to_tiles(t, win) for t in (q, k, v))
    hp, wp = qp.shape[1], qp.shape[2]
    th, tw = hp // win, wp // win
    q_t = _tile(qp, win)
    k_t = _tile(kp, win)
    v_t = _tile(vp, win)
    scores = ad.bmm(q_t, k_t.transpose(0, 2, 1))
    valid = np.zeros((1, hp, wp), dtype=e.data.dtype)
    valid[:, :h, :w] = 1.0
    if hp != h or wp != w:
        vt = (
            valid.reshape(1, th, win, tw, win)
            .transpose(1, 3, 2, 4, 0)
            .reshape(th * tw, win * win)
        )
        mask = (1.0 - vt[:, None, :]) * MASK_SCORE
        scores = scores + Tensor(mask.astype(e.data.dtype))
    probs = ad.softmax_last(scores)
    gathered = ad.bmm(probs, v_t)
    pre = _untile(gathered, win, th, tw)[:, :h, :w]
    if collect is not None:
        collect["probs"] = probs.data
        collect["pre_projection"] = pre.data
        collect["tiles"] = (th, tw)
        collect["valid"] = valid[0]
    return conv2d(pre, head["out.w"], head["out.b"], pad=0)


def mha(e: Tensor, guide: GuideImage, stage: StageParams, cfg: ModelConfig, collect=None) -> Tensor:
    """Three attention heads over (error, guide, concat), fused by 1x1 conv."""
    refs = (e, guide.values, ad.concat([e, guide.values], axis=0))
    patches = (
        cfg.attention.patch_error,
        cfg.attention.patch_guide,
        cfg.attention.patch_concat,
    )
    outs = []
    for idx, (ref, patch) in enumerate(zip(refs, patches)):
        bucket = None
        if collect is not None:
            bucket = {}
            collect.append(bucket)
        outs.append(
            attention_head(e, ref, stage.heads[idx], cfg.attention, patch, bucket)
        )
    fused_in = ad.concat(outs, axis=0)
    return conv2d(fused_in, stage.fuse_w, stage.fuse_b, pad=0)


def res_nl(e: Tensor, guide, stage: StageParams, cfg: ModelConfig) -> Tensor:
    """Residual correction network; front end depends on the variant."""
    if cfg.use_mha:
        features = ad.concat([e, mha(e, guide, stage, cfg)], axis=0)
    elif cfg.use_guide:
        features = ad.concat([e, guide.values], axis=0)
    else:
        features = e
    x = conv2d(features, stage.in_w, stage.in_b, pad=1).relu()
    for blk in stage.blocks:
        inner = conv2d(x, blk["w1"], blk["b1"], pad=1).relu()
        x = x + conv2d(inner, blk["w2"], blk["b2"], pad=1)
    return conv2d(x, stage.tail_w, stage.tail_b, pad=1)


@dataclass
class ForwardResult:
    output: Tensor
    intermediates: list  # u^1 .. u^{K-1} when requested, else empty
    guide: GuideImage


def build_guide(model: UnfoldedModel, hr4: Tensor, soft: bool):
    if not model.cfg.use_guide:
        return None
    if model.cfg.guide.mode is GuideMode.CLUSTER:
        return build_guide_cluster(hr4, model.guide_params, soft=soft)
    return similarity_guide_tensor(hr4)


def forward(
    model: UnfoldedModel,
    f: Tensor,
    hr4: Tensor,
    keep_intermediates: bool = False,
    soft_guide: bool = False,
) -> ForwardResult:
    """Run the K-stage scheme from the low-resolution input f.

    `hr4` must live on a grid exactly twice `f`'s.  Intermediate
    estimates u^1..u^{K-1} are retained only when requested (the
    stage-weighted loss needs them).
    """
    if f.data.ndim != 3 or f.shape[0] != 6:
        raise ShapeMismatchError("input must be [6,h,w]")
    if hr4.data.ndim != 3 or hr4.shape[0] != 4:
        raise ShapeMismatchError("fine bands must be [4,H,W]")
    if hr4.shape[1:] != (2 * f.shape[1], 2 * f.shape[2]):
        raise ShapeMismatchError("fine grid must be exactly twice the input grid")
    guide = build_guide(model, hr4, soft=soft_guide)
    u = Tensor(bicubic_up2(f.data))
    intermediates = []
    last = len(model.stages) - 1
    for k, stage in enumerate(model.stages):
        e_lr = db_operator(u, stage) - f
        e = upsample_error(e_lr, stage)
        u = u + res_nl(e, guide, stage, model.cfg)
        if keep_intermediates and k != last:
            intermediates.append(u)
    return ForwardResult(output=u, intermediates=intermediates, guide=guide)


def count_params(model: UnfoldedModel) -> dict:
    """Exact parameter counts per module plus the grand total."""
    counts = {}
    total = 0
    if model.guide_params is not None:
        n = guide_param_count(model.guide_params)
        counts["guide"] = n
        total += n
    for k, stage in enumerate(model.stages):
        named = stage.named_params(f"stage{k}")
        db = stage.db_w.data.size
        up = stage.up_w.data.size
        stage_total = sum(t.data.size for t in named.values())
        counts[f"stage{k}"] = {
            "db": int(db),
            "up": int(up),
            "resnl": int(stage_total - db - up),
            "total": int(stage_total),
        }
        total += stage_total
    counts["total"] = int(total)
    return counts
