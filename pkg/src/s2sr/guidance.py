"""Guiding-image construction from the four fine-resolution bands.

Two strategies produce the 6-channel guide on the fine grid:

  - similarity: fixed spectral proxies. The three red-edge channels get
    the mean of B4 and B8; the B8a/B11/B12 channels get B8 directly.
  - cluster: a small conv net soft-assigns each pixel to one of L
    clusters and per-cluster MLPs map the 4-band spectrum to 6 channels.
    Training uses soft routing (outputs mixed by cluster probability) so
    the assignment net receives gradients; inference routes hard by the
    argmax label.

Guide channels are ordered like the 20m band list (B5,B6,B7,B8a,B11,B12).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, tensor
from .errors import DataError, ShapeMismatchError
from .nnops import conv2d
from .raster import BandId, BandStack


class GuideMode(enum.Enum):
    SIMILARITY = "similarity"
    CLUSTER = "cluster"


@dataclass(frozen=True)
class GuideImage:
    values: Tensor  # [6, H, W]
    mode: GuideMode

    def __post_init__(self):
        if self.values.data.ndim != 3 or self.values.shape[0] != 6:
            raise ShapeMismatchError("guide image must be [6,H,W]")


@dataclass(frozen=True)
class GuideConfig:
    mode: GuideMode = GuideMode.CLUSTER
    clusters: int = 5
    conv_width: int = 48
    mlp_hidden: int = 90


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


@dataclass
class ClusterParams:
    """Conv stack 4 -> width -> width -> L plus L per-cluster MLPs 4 -> hidden -> 6."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    conv3_w: Tensor
    conv3_b: Tensor
    mlps: list  # per cluster: dict with w1 [hidden,4], b1, w2 [6,hidden], b2

    @property
    def clusters(self) -> int:
        return self.conv3_w.shape[0]

    def named_params(self) -> dict:
        out = {
            "guide.conv1.w": self.conv1_w,
            "guide.conv1.b": self.conv1_b,
            "guide.conv2.w": self.conv2_w,
            "guide.conv2.b": self.conv2_b,
            "guide.conv3.w": self.conv3_w,
            "guide.conv3.b": self.conv3_b,
        }
        for k, mlp in enumerate(self.mlps):
            for key, value in mlp.items():
                out[f"guide.mlp{k}.{key}"] = value
        return out


def init_cluster_params(cfg: GuideConfig, rng) -> ClusterParams:
    w, hidden, L = cfg.conv_width, cfg.mlp_hidden, cfg.clusters
    if L < 1 or w < 1 or hidden < 1:
        raise DataError("cluster config extents must be positive")
    mlps = []
    for _ in range(L):
        mlps.append(
            {
                "w1": _uniform_init(rng, (hidden, 4), 4),
                "b1": _uniform_init(rng, (hidden,), 4),
                "w2": _uniform_init(rng, (6, hidden), hidden),
                "b2": _uniform_init(rng, (6,), hidden),
            }
        )
    return ClusterParams(
        conv1_w=_uniform_init(rng, (w, 4, 3, 3), 4 * 9),
        conv1_b=_uniform_init(rng, (w,), 4 * 9),
        conv2_w=_uniform_init(rng, (w, w, 3, 3), w * 9),
        conv2_b=_uniform_init(rng, (w,), w * 9),
        conv3_w=_uniform_init(rng, (L, w, 3, 3), w * 9),
        conv3_b=_uniform_init(rng, (L,), w * 9),
        mlps=mlps,
    )


def guide_param_count(params) -> int:
    """Total scalar parameter count; accepts ClusterParams or a name dict."""
    named = params.named_params() if hasattr(params, "named_params") else params
    return int(sum(int(np.prod(t.shape)) for t in named.values()))


def build_guide_similarity(hr4: BandStack) -> GuideImage:
    """Fixed band-association guide from a 4-band stack."""
    b4 = hr4.band(BandId.B4).astype(np.float64)
    b8 = hr4.band(BandId.B8).astype(np.float64)
    red_edge = ((b4 + b8) / 2.0).astype(hr4.data.dtype)
    b8_native = hr4.band(BandId.B8)
    values = np.stack([red_edge, red_edge, red_edge, b8_native, b8_native, b8_native])
    return GuideImage(values=Tensor(values), mode=GuideMode.SIMILARITY)


def similarity_guide_tensor(x4: Tensor) -> GuideImage:
    """Similarity guide from a [4,H,W] tensor ordered (B2,B3,B4,B8)."""
    if x4.data.ndim != 3 or x4.shape[0] != 4:
        raise ShapeMismatchError("expected a [4,H,W] tensor")
    avg = (x4[2:3, :, :] + x4[3:4, :, :]) * 0.5
    b8 = x4[3:4, :, :]
    values = ad.concat([avg, avg, avg, b8, b8, b8], axis=0)
    return GuideImage(values=values, mode=GuideMode.SIMILARITY)


def _logits(hr4: Tensor, p: ClusterParams) -> Tensor:
    h1 = conv2d(hr4, p.conv1_w, p.conv1_b, pad=1).relu()
    h2 = conv2d(h1, p.conv2_w, p.conv2_b, pad=1).relu()
    return conv2d(h2, p.conv3_w, p.conv3_b, pad=1)


def cluster_assign(hr4: Tensor, p: ClusterParams):
    """Per-pixel soft assignment; returns (labels u8 [H,W], probs [L,H,W]).

    Labels are the argmax of the probabilities with ties resolved to the
    lowest cluster index.
    """
    if hr4.data.ndim != 3 or hr4.shape[0] != 4:
        raise ShapeMismatchError("expected a [4,H,W] tensor")
    logits = _logits(hr4, p)
    L, h, w = logits.shape
    flat = logits.reshape(L, h * w).transpose(1, 0)
    probs = ad.softmax_last(flat).transpose(1, 0).reshape((L, h, w))
    labels = np.argmax(probs.data, axis=0).astype(np.uint8)
    return labels, probs


def _mlp_all_pixels(hr4: Tensor, mlp: dict) -> Tensor:
    _, h, w = hr4.shape
    flat = hr4.reshape(4, h * w)
    hidden = ad.matmul(mlp["w1"], flat) + mlp["b1"].reshape(-1, 1)
    out = ad.matmul(mlp["w2"], hidden.relu()) + mlp["b2"].reshape(-1, 1)
    return out.reshape(6, h, w)


def spec_up(hr4: Tensor, labels: np.ndarray, p: ClusterParams) -> GuideImage:
    """Hard routing: each pixel goes through its own cluster's MLP."""
    if labels.shape != hr4.shape[1:]:
        raise ShapeMismatchError("label map must match the pixel grid")
    if labels.size and int(labels.max()) >= p.clusters:
        raise DataError(f"label {int(labels.max())} out of range")
    parts = []
    for k, mlp in enumerate(p.mlps):
        mask = Tensor((labels == k).astype(hr4.data.dtype.type)[None])
        parts.append(_mlp_all_pixels(hr4, mlp) * mask)
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return GuideImage(values=total, mode=GuideMode.CLUSTER)


def build_guide_cluster(hr4: Tensor, p: ClusterParams, soft: bool) -> GuideImage:
    """Full cluster-mode guide; soft routing during training."""
    labels, probs = cluster_assign(hr4, p)
    if not soft:
        return spec_up(hr4, labels, p)
    total = None
    for k, mlp in enumerate(p.mlps):
        weighted = _mlp_all_pixels(hr4, mlp) * probs[k : k + 1, :, :]
        total = weighted if total is None else total + weighted
    return GuideImage(values=total, mode=GuideMode.CLUSTER)
