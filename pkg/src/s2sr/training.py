"""Losses, the training loop, and binary checkpoint serialization.

The loop is fully deterministic for a fixed seed: epoch shuffles come
from one seeded generator, parameters update in sorted-name order, and
log and checkpoint files contain no timestamps or absolute paths.

Checkpoints use a small binary container ("BPCK"): a JSON metadata
blob (config echo, best validation PSNR, epoch) followed by the named
parameter tensors as little-endian float32.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    BadMagicError,
    DataError,
    NumericError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .guidance import GuideMode
from .metrics import psnr
from .network import UnfoldedModel, forward
from .optim import Adam

CHECKPOINT_MAGIC = b"BPCK"
CHECKPOINT_VERSION = 1
LOG_HEADER = "epoch,train_loss,val_psnr,improved"


@dataclass(frozen=True)
class LossSpec:
    kind: str = "l1"  # l1 | mse | alpha
    i_exp: int = 1
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("l1", "mse", "alpha"):
            raise DataError(f"unknown loss kind {self.kind!r}")
        if self.i_exp not in (1, 2):
            raise DataError("loss exponent must be 1 or 2")
        if self.alpha < 0:
            raise DataError("stage weight must be nonnegative")

    @property
    def needs_intermediates(self) -> bool:
        return self.kind == "alpha" and self.alpha > 0

    def label(self) -> str:
        if self.kind == "alpha":
            return f"alpha:{self.i_exp}:{self.alpha:g}"
        return self.kind


def parse_loss(text: str) -> LossSpec:
    """Parse a loss flag: 'l1', 'mse', or 'alpha:I:A'."""
    if text in ("l1", "mse"):
        return LossSpec(kind=text)
    if text.startswith("alpha:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise DataError(f"malformed loss spec {text!r}; want alpha:I:A")
        try:
            return LossSpec(kind="alpha", i_exp=int(parts[1]), alpha=float(parts[2]))
        except ValueError as exc:
            raise DataError(f"malformed loss spec {text!r}: {exc}") from exc
    raise DataError(f"unknown loss spec {text!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1500
    lr: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    loss: LossSpec = field(default_factory=LossSpec)

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError("epochs must be at least 1")
        if not self.lr > 0:
            raise DataError("learning rate must be positive")
        if self.batch_size < 1:
            raise DataError("batch size must be at least 1")


# ---------------------------------------------------------------- losses


def loss_l1(pred: Tensor, ref: Tensor) -> Tensor:
    return (pred - ref).abs().mean()


def loss_mse(pred: Tensor, ref: Tensor) -> Tensor:
    d = pred - ref
    return (d * d).mean()


def loss_alpha(output: Tensor, intermediates, ref: Tensor, i_exp: int, alpha: float) -> Tensor:
    """Final-stage i-norm term plus alpha-weighted RMSE of earlier stages."""
    d = output - ref
    if i_exp == 1:
        total = d.abs().mean()
    else:
        total = (d * d).mean()
    if alpha > 0:
        for u_k in intermediates:
            dk = u_k - ref
            total = total + alpha * (dk * dk).mean().sqrt()
    return total


def compute_loss(spec: LossSpec, result, ref: Tensor) -> Tensor:
    if spec.kind == "l1":
        return loss_l1(result.output, ref)
    if spec.kind == "mse":
        return loss_mse(result.output, ref)
    return loss_alpha(result.output, result.intermediates, ref, spec.i_exp, spec.alpha)


# ------------------------------------------------------------ checkpoints


def save_checkpoint(path, named_tensors: dict, meta: dict) -> None:
    """Write the binary container; tensor order is sorted name order."""
    payload = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(named_tensors)))
        for name in sorted(named_tensors):
            data = named_tensors[name]
            if isinstance(data, Tensor):
                data = data.data
            arr = np.ascontiguousarray(data, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _take(buf: memoryview, offset: int, n: int):
    if offset + n > len(buf):
        raise TruncatedFileError("checkpoint ends mid-record")
    return buf[offset : offset + n], offset + n


def load_checkpoint(path):
    """Read a BPCK file; returns (meta dict, name -> float32 array)."""
    raw = memoryview(Path(path).read_bytes())
    pos = 0
    head, pos = _take(raw, pos, 8)
    magic, version = struct.unpack("<4sI", head)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"not a checkpoint file: magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} unsupported")
    blob, pos = _take(raw, pos, 4)
    (meta_len,) = struct.unpack("<I", blob)
    blob, pos = _take(raw, pos, meta_len)
    try:
        meta = json.loads(bytes(blob).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint metadata unreadable: {exc}") from exc
    blob, pos = _take(raw, pos, 4)
    (count,) = struct.unpack("<I", blob)
    tensors = {}
    for _ in range(count):
        blob, pos = _take(raw, pos, 2)
        (name_len,) = struct.unpack("<H", blob)
        blob, pos = _take(raw, pos, name_len)
        name = bytes(blob).decode("utf-8")
        blob, pos = _take(raw, pos, 1)
        rank = blob[0]
        blob, pos = _take(raw, pos, 4 * rank)
        shape = struct.unpack(f"<{rank}I", blob)
        size = int(np.prod(shape)) if rank else 1
        blob, pos = _take(raw, pos, 4 * size)
        tensors[name] = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
    if pos != len(raw):
        raise DataError("trailing bytes after the last checkpoint tensor")
    return meta, tensors


def restore_into(model: UnfoldedModel, tensors: dict) -> None:
    """Copy checkpoint tensors into an existing model, name by name."""
    named = model.named_params()
    missing = sorted(set(named) - set(tensors))
    extra = sorted(set(tensors) - set(named))
    if missing or extra:
        raise DataError(f"checkpoint mismatch: missing {missing}, extra {extra}")
    for name, param in named.items():
        arr = tensors[name]
        if arr.shape != param.data.shape:
            raise ShapeMismatchError(
                f"tensor {name}: checkpoint {arr.shape} vs model {param.data.shape}"
            )
        param.data = arr.astype(param.data.dtype)


# ------------------------------------------------------------- train loop


@dataclass
class TrainResult:
    best_psnr: float
    best_epoch: int
    checkpoint_path: str
    log_rows: list


def _val_psnr(model, samples) -> float:
    values = []
    with ad.no_grad():
        for f, hr4, ref in samples:
            out = forward(model, f, hr4, soft_guide=False).output
            values.append(psnr(out.data, ref.data, data_range=1.0))
    return float(np.mean(values))


def _as_tensors(samples):
    return [
        (
            Tensor(s.input_f.data),
            Tensor(s.guide_src.data),
            Tensor(s.ref.data),
        )
        for s in samples
    ]


def train(
    model: UnfoldedModel,
    cfg: TrainConfig,
    train_samples,
    val_samples,
    checkpoint_path,
    log_path,
    config_echo: dict | None = None,
    progress=None,
) -> TrainResult:
    """Optimize the model; keep the checkpoint with the best val PSNR.

    `train_samples`/`val_samples` are SampleTriple sequences held in
    memory.  The log CSV gains one row per epoch; the checkpoint file is
    rewritten only when validation PSNR strictly improves.
    """
    if not train_samples:
        raise DataError("training split is empty")
    if not val_samples:
        raise DataError("validation split is empty")
    train_t = _as_tensors(train_samples)
    val_t = _as_tensors(val_samples)
    soft = model.cfg.use_guide and model.cfg.guide.mode is GuideMode.CLUSTER
    opt = Adam(model.named_params(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    best = -math.inf
    best_epoch = -1
    rows = []
    checkpoint_path = str(checkpoint_path)
    with open(log_path, "w") as log:
        log.write(LOG_HEADER + "\n")
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(train_t))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                opt.zero_grad()
                for idx in batch:
                    f, hr4, ref = train_t[idx]
                    try:
                        result = forward(
                            model,
                            f,
                            hr4,
                            keep_intermediates=cfg.loss.needs_intermediates,
                            soft_guide=soft,
                        )
                        loss = compute_loss(cfg.loss, result, ref)
                        value = loss.item()
                        if not math.isfinite(value):
                            raise NumericError("loss is not finite")
                        ad.backward(loss * (1.0 / len(batch)))
                    except NumericError as exc:
                        raise NumericError(
                            f"training diverged at epoch {epoch}: {exc}"
                        ) from exc
                    epoch_losses.append(value)
                opt.step()
            train_loss = float(np.mean(epoch_losses))
            val = _val_psnr(model, val_t)
            improved = val > best
            if improved:
                best = val
                best_epoch = epoch
                meta = {
                    "config": config_echo or {},
                    "best_val_psnr": best,
                    "epoch": epoch,
                }
                save_checkpoint(checkpoint_path, model.named_params(), meta)
            rows.append((epoch, train_loss, val, improved))
            log.write(f"{epoch},{train_loss:.8f},{val:.6f},{int(improved)}\n")
            if progress is not None:
                progress(epoch, train_loss, val, improved)
    return TrainResult(
        best_psnr=best,
        best_epoch=best_epoch,
        checkpoint_path=checkpoint_path,
        log_rows=rows,
    )
