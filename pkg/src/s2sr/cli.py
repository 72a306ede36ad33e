"""Command-line surface: dataset-prep, train, eval, infer, render,
ablate, and selftest.

Option precedence is flags > config file > built-in defaults.  The
config file uses one `key = value` pair per line with `#` comments.
Every run prints its resolved configuration before doing work.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, tensor
from .dataset import (
    _landscape_from_name,
    build_manifest,
    degrade_wald,
    extract_crops,
    load_manifest,
    load_sample,
    materialize_sample,
    save_manifest,
    split_entries,
    write_crop,
)
from .errors import AutodiffError, DataError, NumericError, S2SRError
from .guidance import GuideConfig, GuideMode
from .metrics import ergas, evaluate_split, psnr, sam, ssim, write_report
from .network import (
    AttentionConfig,
    ModelConfig,
    UnfoldedModel,
    count_params,
    forward,
    init_model,
)
from .nnops import bicubic_up2
from .products import (
    CompositeKind,
    IndexKind,
    compose,
    compute_index,
    render_index,
    render_visual,
    save_png,
)
from .raster import TEN_M_BANDS, TWENTY_M_BANDS, BandStack, read_raster, write_raster
from .training import (
    TrainConfig,
    load_checkpoint,
    parse_loss,
    restore_into,
    save_checkpoint,
    train,
)


class UsageError(Exception):
    pass


# ------------------------------------------------------- option machinery


def _bool_conv(value):
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise DataError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    default: object
    conv: type = str
    help: str = ""
    required: bool = False
    is_flag: bool = False
    is_path: bool = False  # excluded from the checkpoint config echo


def _add_options(sub, options):
    for opt in options:
        flag = "--" + opt.name.replace("_", "-")
        if opt.is_flag:
            sub.add_argument(flag, action="store_const", const=True, default=None, help=opt.help)
        else:
            sub.add_argument(flag, type=str, default=None, help=opt.help)
    sub.add_argument("--config", type=str, default=None, help="key=value config file")


def _read_config_file(path, options):
    known = {o.name for o in options}
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def resolve_options(args, options):
    """Apply flag > config file > default precedence; convert values."""
    file_values = {}
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config, options)
    resolved = {}
    for opt in options:
        value = getattr(args, opt.name)
        if value is None:
            value = file_values.get(opt.name, opt.default)
        if value is None:
            if opt.required:
                raise UsageError(f"missing required option --{opt.name.replace('_', '-')}")
            resolved[opt.name] = None
            continue
        if opt.is_flag:
            resolved[opt.name] = _bool_conv(value)
        elif isinstance(value, str):
            try:
                resolved[opt.name] = opt.conv(value)
            except (ValueError, TypeError) as exc:
                raise UsageError(f"bad value for --{opt.name.replace('_', '-')}: {exc}") from exc
        else:
            resolved[opt.name] = value
    return resolved


def print_resolved(command, resolved):
    print(f"resolved config [{command}]:")
    for key in sorted(resolved):
        print(f"  {key} = {resolved[key]}")


def config_echo(resolved, options):
    """Resolved values minus paths; stored in checkpoints, so no host state."""
    path_keys = {o.name for o in options if o.is_path}
    return {k: v for k, v in resolved.items() if k not in path_keys and v is not None}


def _parse_int_pair(text):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_patch_triple(text):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated patch sizes, got {text!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


# --------------------------------------------------------- model plumbing

MODEL_OPT_NAMES = (
    "mode",
    "stages",
    "window",
    "patch",
    "width",
    "feat_dim",
    "fused_dim",
    "clusters",
    "guide_conv_width",
    "guide_mlp_hidden",
)

MODEL_OPTS = (
    Opt("mode", "ginet+", str, "ginet | ginet+ | resnet | resnet_sr"),
    Opt("stages", 6, int, "number of unfolded stages"),
    Opt("window", 5, int, "attention tile edge"),
    Opt("patch", (3, 3, 1), _parse_patch_triple, "per-head patch sizes e,g,concat"),
    Opt("width", 128, int, "correction network width"),
    Opt("feat_dim", 32, int, "attention feature dim"),
    Opt("fused_dim", 64, int, "fused attention channels"),
    Opt("clusters", 5, int, "cluster count for ginet+"),
    Opt("guide_conv_width", 48, int, "cluster net conv width"),
    Opt("guide_mlp_hidden", 90, int, "per-cluster mlp hidden width"),
)


def model_config_from(resolved) -> ModelConfig:
    mode = resolved["mode"]
    patch = resolved["patch"]
    if isinstance(patch, str):
        patch = _parse_patch_triple(patch)
    attn = AttentionConfig(
        window=int(resolved["window"]),
        patch_error=patch[0],
        patch_guide=patch[1],
        patch_concat=patch[2],
        feat_dim=int(resolved["feat_dim"]),
        fused_dim=int(resolved["fused_dim"]),
    )
    overrides = dict(
        stages=int(resolved["stages"]),
        resnl_width=int(resolved["width"]),
        attention=attn,
    )
    if mode in ("ginet", "ginet+", "resnet"):
        guide_mode = GuideMode.CLUSTER if mode == "ginet+" else GuideMode.SIMILARITY
        overrides["guide"] = GuideConfig(
            mode=guide_mode,
            clusters=int(resolved["clusters"]),
            conv_width=int(resolved["guide_conv_width"]),
            mlp_hidden=int(resolved["guide_mlp_hidden"]),
        )
    return ModelConfig.from_variant(mode, **overrides)


def model_from_checkpoint(path) -> tuple[UnfoldedModel, dict]:
    meta, tensors = load_checkpoint(path)
    echo = meta.get("config", {})
    missing = [k for k in MODEL_OPT_NAMES if k not in echo]
    if missing:
        raise DataError(f"checkpoint config lacks keys: {missing}")
    model = init_model(model_config_from(echo), seed=0)
    restore_into(model, tensors)
    return model, meta


def _samples_for(manifest, root, split):
    entries = split_entries(manifest, split)
    if not entries:
        raise DataError(f"manifest split {split!r} is empty")
    return [load_sample(root, e) for e in entries]


# ------------------------------------------------------------ subcommands

PREP_OPTS = (
    Opt("scenes", None, str, "directory of <name>.hr10.s2sr / <name>.lr20.s2sr pairs", required=True, is_path=True),
    Opt("out", None, str, "output dataset directory", required=True, is_path=True),
    Opt("crop", 240, int, "crop edge on the 10m grid"),
    Opt("seed", 0, int, "shuffle seed for split assignment"),
    Opt("splits", (500, 100), _parse_int_pair, "train,val crop counts (rest is test)"),
    Opt("materialize", False, help="precompute degraded inputs on disk", is_flag=True),
)


def cmd_dataset_prep(args) -> int:
    resolved = resolve_options(args, PREP_OPTS)
    print_resolved("dataset-prep", resolved)
    scenes_dir = Path(resolved["scenes"])
    out_dir = Path(resolved["out"])
    hr_paths = sorted(scenes_dir.glob("*.hr10.s2sr"))
    if not hr_paths:
        raise DataError(f"no *.hr10.s2sr scenes under {scenes_dir}")
    crops_dir = out_dir / "crops"
    crops_dir.mkdir(parents=True, exist_ok=True)
    n_crops = 0
    for hr_path in hr_paths:
        stem = hr_path.name[: -len(".hr10.s2sr")]
        lr_path = scenes_dir / (stem + ".lr20.s2sr")
        if not lr_path.exists():
            raise DataError(f"scene {stem} lacks its 20m file")
        hr10 = read_raster(hr_path)
        lr20 = read_raster(lr_path)
        crops = extract_crops(
            hr10,
            lr20,
            crop_px=resolved["crop"],
            landscape=_landscape_from_name(stem),
            id_prefix=stem + "_",
        )
        for crop in crops:
            write_crop(crop, crops_dir)
        n_crops += len(crops)
        print(f"scene {stem}: {len(crops)} crops")
    manifest = build_manifest(
        [crops_dir], resolved["splits"], seed=resolved["seed"], root=out_dir
    )
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    if resolved["materialize"]:
        for entry in manifest.entries:
            materialize_sample(out_dir, entry)
    counts = {s: len(split_entries(manifest, s)) for s in ("train", "val", "test")}
    print(f"crops: {n_crops}  splits: {counts}")
    print(str(manifest_path))
    return 0


TRAIN_OPTS = MODEL_OPTS + (
    Opt("manifest", None, str, "dataset manifest path", required=True, is_path=True),
    Opt("out", None, str, "run output directory", required=True, is_path=True),
    Opt("loss", "l1", str, "l1 | mse | alpha:I:A"),
    Opt("epochs", 1500, int, "training epochs"),
    Opt("lr", 1e-4, float, "Adam learning rate"),
    Opt("batch", 4, int, "gradient accumulation batch size"),
    Opt("seed", 0, int, "init and shuffle seed"),
)


def cmd_train(args) -> int:
    resolved = resolve_options(args, TRAIN_OPTS)
    print_resolved("train", resolved)
    manifest_path = Path(resolved["manifest"])
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    train_samples = _samples_for(manifest, root, "train")
    val_samples = _samples_for(manifest, root, "val")
    model = init_model(model_config_from(resolved), seed=resolved["seed"])
    totals = count_params(model)
    print(f"parameters: {totals['total']}")
    cfg = TrainConfig(
        epochs=resolved["epochs"],
        lr=resolved["lr"],
        batch_size=resolved["batch"],
        seed=resolved["seed"],
        loss=parse_loss(resolved["loss"]),
    )
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.bpck"
    log = out_dir / "train_log.csv"

    def progress(epoch, loss, val, improved):
        star = " *" if improved else ""
        print(f"epoch {epoch}: loss {loss:.6f} val_psnr {val:.3f}{star}")

    result = train(
        model,
        cfg,
        train_samples,
        val_samples,
        ckpt,
        log,
        config_echo=config_echo(resolved, TRAIN_OPTS),
        progress=progress,
    )
    print(f"best val_psnr {result.best_psnr:.3f} at epoch {result.best_epoch}")
    print(str(ckpt))
    return 0


EVAL_OPTS = (
    Opt("checkpoint", None, str, "trained checkpoint path", is_path=True),
    Opt("manifest", None, str, "dataset manifest path", required=True, is_path=True),
    Opt("split", "test", str, "split to evaluate"),
    Opt("report", None, str, "CSV report output path", required=True, is_path=True),
    Opt("bicubic", False, help="evaluate the bicubic baseline instead", is_flag=True),
    Opt("per_band_psnr", False, help="average per-band PSNR instead of joint", is_flag=True),
)


def cmd_eval(args) -> int:
    resolved = resolve_options(args, EVAL_OPTS)
    print_resolved("eval", resolved)
    if not resolved["bicubic"] and not resolved["checkpoint"]:
        raise UsageError("provide --checkpoint or --bicubic")
    model = None
    if not resolved["bicubic"]:
        model, _ = model_from_checkpoint(resolved["checkpoint"])
    manifest_path = Path(resolved["manifest"])
    manifest = load_manifest(manifest_path)
    report = evaluate_split(
        model,
        manifest,
        manifest_path.parent,
        resolved["split"],
        per_band_psnr=resolved["per_band_psnr"],
    )
    write_report(report, resolved["report"])
    print(f"split {report.split}: {len(report.crops)} crops")
    for field in ("ergas", "psnr", "ssim", "sam"):
        print(f"  {field} = {report.mean(field):.4f}")
    for scape in report.landscapes():
        means = ", ".join(
            f"{f}={report.mean(f, scape):.4f}" for f in ("ergas", "psnr", "ssim", "sam")
        )
        print(f"  [{scape.value}] {means}")
    print(str(resolved["report"]))
    return 0


INFER_OPTS = (
    Opt("checkpoint", None, str, "trained checkpoint path", is_path=True),
    Opt("input", None, str, "6-band raster to upsample", required=True, is_path=True),
    Opt("hr", None, str, "4-band raster on the doubled grid", required=True, is_path=True),
    Opt("out", None, str, "output raster path", required=True, is_path=True),
    Opt("bicubic", False, help="bicubic baseline instead of a model", is_flag=True),
)


def cmd_infer(args) -> int:
    resolved = resolve_options(args, INFER_OPTS)
    print_resolved("infer", resolved)
    if not resolved["bicubic"] and not resolved["checkpoint"]:
        raise UsageError("provide --checkpoint or --bicubic")
    stack = read_raster(resolved["input"]).select(TWENTY_M_BANDS)
    hr = read_raster(resolved["hr"]).select(TEN_M_BANDS)
    if resolved["bicubic"]:
        pred = bicubic_up2(stack.data)
    else:
        model, _ = model_from_checkpoint(resolved["checkpoint"])
        with ad.no_grad():
            pred = forward(model, Tensor(stack.data), Tensor(hr.data)).output.data
    out_stack = BandStack(bands=TWENTY_M_BANDS, data=pred, gsd=stack.gsd / 2.0)
    write_raster(out_stack, resolved["out"])
    print(f"wrote {pred.shape[1]}x{pred.shape[2]} raster")
    print(str(resolved["out"]))
    return 0


RENDER_OPTS = (
    Opt("input", None, str, "raster to visualize", required=True, is_path=True),
    Opt("kind", None, str, "ndwi | ndmi | true | urban | swir", required=True),
    Opt("out", None, str, "PNG output path", required=True, is_path=True),
)


def cmd_render(args) -> int:
    resolved = resolve_options(args, RENDER_OPTS)
    print_resolved("render", resolved)
    stack = read_raster(resolved["input"])
    kind = resolved["kind"]
    index_kinds = {k.value for k in IndexKind}
    composite_kinds = {k.value for k in CompositeKind}
    if kind in index_kinds:
        image = render_index(compute_index(stack, IndexKind(kind)))
    elif kind in composite_kinds:
        image = render_visual(compose(stack, CompositeKind(kind)))
    else:
        raise UsageError(f"unknown render kind {kind!r}")
    save_png(image, resolved["out"])
    print(str(resolved["out"]))
    return 0


ABLATE_OPTS = (
    Opt("manifest", None, str, "dataset manifest path", required=True, is_path=True),
    Opt("out", None, str, "output directory", required=True, is_path=True),
    Opt("mode", "ginet+", str, "base architecture for the sweeps"),
    Opt("epochs", 3, int, "epochs per grid point"),
    Opt("lr", 1e-3, float, "Adam learning rate"),
    Opt("batch", 4, int, "batch size"),
    Opt("seed", 0, int, "seed shared by every run"),
    Opt("width", 16, int, "correction width (toy scale)"),
    Opt("feat_dim", 8, int, "attention feature dim (toy scale)"),
    Opt("fused_dim", 16, int, "fused channels (toy scale)"),
    Opt("base_stages", 2, int, "stage count outside the stages sweep"),
    Opt("base_window", 3, int, "window outside the window sweep"),
)

DEFAULT_GRID = {
    "stages": ["3", "6", "9"],
    "patch": ["3", "5", "7"],
    "window": ["3", "5", "7"],
    "loss": ["l1", "mse", "alpha:1:0.1", "alpha:1:0.5"],
}


def _parse_grid(tokens):
    if not tokens:
        return dict(DEFAULT_GRID)
    grid = {}
    for token in tokens:
        if "=" not in token:
            raise UsageError(f"grid token {token!r} is not axis=v1,v2,...")
        axis, values = token.split("=", 1)
        axis = axis.strip()
        if axis not in DEFAULT_GRID:
            raise UsageError(f"unknown grid axis {axis!r}")
        grid[axis] = [v.strip() for v in values.split(",") if v.strip()]
        if not grid[axis]:
            raise UsageError(f"grid axis {axis!r} has no values")
    for axis, values in DEFAULT_GRID.items():
        grid.setdefault(axis, list(values))
    return grid


def _ablate_runs(grid, resolved):
    """Three independent sweeps: stage count, patch x window, loss."""
    base = {
        "mode": resolved["mode"],
        "stages": resolved["base_stages"],
        "window": resolved["base_window"],
        "patch": (3, 3, 1),
        "width": resolved["width"],
        "feat_dim": resolved["feat_dim"],
        "fused_dim": resolved["fused_dim"],
        "clusters": 5,
        "guide_conv_width": 12,
        "guide_mlp_hidden": 16,
        "loss": "l1",
    }
    runs = []
    for stages in grid["stages"]:
        cfg = dict(base, stages=int(stages))
        runs.append(("stages", f"stages{stages}", cfg))
    for patch in grid["patch"]:
        for window in grid["window"]:
            p = int(patch)
            cfg = dict(base, patch=(p, p, 1), window=int(window))
            runs.append(("patch_window", f"p{patch}w{window}", cfg))
    for loss in grid["loss"]:
        cfg = dict(base, loss=loss)
        tag = "loss_" + loss.replace(":", "-")
        runs.append(("loss", tag, cfg))
    return runs


def cmd_ablate(args) -> int:
    resolved = resolve_options(args, ABLATE_OPTS)
    grid = _parse_grid(args.grid)
    print_resolved("ablate", resolved)
    print("grid: " + "; ".join(f"{k}={','.join(v)}" for k, v in sorted(grid.items())))
    manifest_path = Path(resolved["manifest"])
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    train_samples = _samples_for(manifest, root, "train")
    val_samples = _samples_for(manifest, root, "val")
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for sweep, tag, model_res in _ablate_runs(grid, resolved):
        model = init_model(model_config_from(model_res), seed=resolved["seed"])
        cfg = TrainConfig(
            epochs=resolved["epochs"],
            lr=resolved["lr"],
            batch_size=resolved["batch"],
            seed=resolved["seed"],
            loss=parse_loss(model_res["loss"]),
        )
        run_dir = out_dir / "runs" / tag
        run_dir.mkdir(parents=True, exist_ok=True)
        result = train(
            model,
            cfg,
            train_samples,
            val_samples,
            run_dir / "checkpoint.bpck",
            run_dir / "train_log.csv",
            config_echo={k: str(v) for k, v in sorted(model_res.items())},
        )
        patch = model_res["patch"]
        rows.append(
            (
                sweep,
                tag,
                model_res["stages"],
                patch[0],
                model_res["window"],
                model_res["loss"],
                result.best_epoch,
                result.best_psnr,
            )
        )
        print(f"{sweep}/{tag}: best val_psnr {result.best_psnr:.3f}")
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w") as fh:
        fh.write("sweep,tag,stages,patch,window,loss,best_epoch,val_psnr\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row[:7]) + f",{row[7]:.6f}\n")
    print(str(csv_path))
    return 0


# --------------------------------------------------------------- selftest


def _check_op_gradients():
    from .checks import directional_gradcheck

    rng = np.random.default_rng(0)
    with ad.precision(np.float64):
        a = tensor(rng.standard_normal((3, 4)) + 2.0, requires_grad=True)
        b = tensor(rng.standard_normal((3, 4)) + 2.0, requires_grad=True)
        err = directional_gradcheck(lambda a, b: (a * b + a / b).sum(), [a, b], rng=rng)
        m = tensor(rng.standard_normal((3, 5)), requires_grad=True)
        n = tensor(rng.standard_normal((5, 2)), requires_grad=True)
        err = max(err, directional_gradcheck(lambda m, n: ad.matmul(m, n).sum(), [m, n], rng=rng))
        s = tensor(rng.standard_normal((4, 6)), requires_grad=True)
        err = max(
            err,
            directional_gradcheck(
                lambda s: (ad.softmax_rows(s) * ad.softmax_rows(s)).sum(), [s], rng=rng
            ),
        )
    if err > 1e-6:
        raise NumericError(f"op gradient error {err:.2e}")


def _check_conv_gradients():
    from .checks import directional_gradcheck
    from .nnops import conv2d, depthwise_conv2d, transposed_conv2d_s2

    rng = np.random.default_rng(1)
    with ad.precision(np.float64):
        x = tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
        w = tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        err = directional_gradcheck(lambda x, w: conv2d(x, w, pad=1).sum(), [x, w], rng=rng)
        dw = tensor(rng.standard_normal((2, 3, 3)), requires_grad=True)
        err = max(err, directional_gradcheck(lambda x, dw: depthwise_conv2d(x, dw).sum(), [x, dw], rng=rng))
        xs = tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
        ws = tensor(rng.standard_normal((2, 3, 3)), requires_grad=True)
        err = max(err, directional_gradcheck(lambda xs, ws: transposed_conv2d_s2(xs, ws).sum(), [xs, ws], rng=rng))
    if err > 1e-6:
        raise NumericError(f"conv gradient error {err:.2e}")


def _check_upsample_adjoint():
    from .checks import adjoint_error
    from .nnops import conv_s2, transposed_conv2d_s2

    rng = np.random.default_rng(2)
    kernel = tensor(rng.standard_normal((2, 3, 3)), dtype=np.float64)
    with ad.no_grad(), ad.precision(np.float64):
        err = adjoint_error(
            lambda x: conv_s2(Tensor(x), kernel).data,
            lambda y: transposed_conv2d_s2(Tensor(y), kernel).data,
            (2, 8, 8),
            (2, 4, 4),
            rng,
        )
    if err > 1e-10:
        raise NumericError(f"adjoint mismatch {err:.2e}")


def _check_bicubic_collapse():
    model = init_model(
        ModelConfig.from_variant("ginet+", stages=2, resnl_width=8), seed=0
    )
    for t in model.named_params().values():
        t.data[...] = 0
    rng = np.random.default_rng(3)
    f = tensor(rng.uniform(0.05, 0.95, (6, 8, 8)))
    hr4 = tensor(rng.uniform(0.05, 0.95, (4, 16, 16)))
    out = forward(model, f, hr4).output.data
    if not np.array_equal(out, bicubic_up2(f.data)):
        raise NumericError("zero-weight model departed from bicubic")


def _check_attention_rows():
    from .network import attention_head, init_stage

    cfg = ModelConfig(
        stages=1,
        resnl_width=8,
        attention=AttentionConfig(window=5, feat_dim=4, fused_dim=8),
    )
    stage = init_stage(cfg, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    e = tensor(rng.standard_normal((6, 7, 9)))
    got = {}
    attention_head(e, e, stage.heads[0], cfg.attention, patch=3, collect=got)
    sums = got["probs"].sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise NumericError("attention rows do not sum to 1")


def _check_metric_oracles():
    rng = np.random.default_rng(6)
    x = rng.uniform(0.1, 0.9, (6, 16, 16))
    if ergas(x, x) != 0.0 or psnr(x, x) != 99.0:
        raise NumericError("identical-input metric ideals violated")
    if abs(ssim(x, x) - 1.0) > 1e-12 or sam(x, x) > 1e-6:
        raise NumericError("identical-input metric ideals violated")
    ref = np.full((1, 10, 10), 0.2)
    if abs(ergas(ref + 0.01, ref) - 2.5) > 1e-9:
        raise NumericError("ergas closed form violated")
    if sam(2.0 * x, x) > 1e-6:
        raise NumericError("sam scale invariance violated")


def _check_checkpoint_roundtrip():
    import tempfile

    rng = np.random.default_rng(7)
    tensors = {"w": rng.standard_normal((3, 3)).astype(np.float32)}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.bpck"
        save_checkpoint(path, tensors, {"epoch": 1})
        _, got = load_checkpoint(path)
    if not np.array_equal(got["w"], tensors["w"]):
        raise NumericError("checkpoint round trip lost precision")


def _check_degradation_constants():
    stack = BandStack(
        bands=TWENTY_M_BANDS, data=np.full((6, 12, 12), 0.37, np.float32), gsd=20.0
    )
    low = degrade_wald(stack)
    if not np.array_equal(low.data, np.full((6, 6, 6), np.float32(0.37))):
        raise NumericError("degradation altered a constant image")


SELFTEST_CHECKS = (
    ("op-gradients", _check_op_gradients),
    ("conv-gradients", _check_conv_gradients),
    ("upsample-adjoint", _check_upsample_adjoint),
    ("bicubic-collapse", _check_bicubic_collapse),
    ("attention-rows", _check_attention_rows),
    ("metric-oracles", _check_metric_oracles),
    ("checkpoint-roundtrip", _check_checkpoint_roundtrip),
    ("degradation-constants", _check_degradation_constants),
)


def _broken_check():
    raise NumericError("deliberate failure injected via S2SR_SELFTEST_BREAK")


def cmd_selftest(args) -> int:
    resolved = resolve_options(args, ())
    print_resolved("selftest", resolved)
    checks = list(SELFTEST_CHECKS)
    if os.environ.get("S2SR_SELFTEST_BREAK"):
        checks.append(("injected-failure", _broken_check))
    failures = 0
    for name, fn in checks:
        try:
            fn()
        except Exception as exc:  # any failure is a reportable numeric fault
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    if failures:
        print(f"{failures} of {len(checks)} checks failed")
        return 4
    print(f"all {len(checks)} checks passed")
    return 0


# ----------------------------------------------------------------- driver


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2sr",
        description="Guided super-resolution of Sentinel-2 20m bands",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("dataset-prep", help="tile scenes into crops and a manifest")
    _add_options(sub, PREP_OPTS)
    sub.set_defaults(func=cmd_dataset_prep)

    sub = subs.add_parser("train", help="train a model from a manifest")
    _add_options(sub, TRAIN_OPTS)
    sub.set_defaults(func=cmd_train)

    sub = subs.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_options(sub, EVAL_OPTS)
    sub.set_defaults(func=cmd_eval)

    sub = subs.add_parser("infer", help="super-resolve one raster")
    _add_options(sub, INFER_OPTS)
    sub.set_defaults(func=cmd_infer)

    sub = subs.add_parser("render", help="index or composite visualization")
    _add_options(sub, RENDER_OPTS)
    sub.set_defaults(func=cmd_render)

    sub = subs.add_parser("ablate", help="run the ablation sweeps")
    _add_options(sub, ABLATE_OPTS)
    sub.add_argument("--grid", nargs="*", default=None, help="axis=v1,v2,... tokens")
    sub.set_defaults(func=cmd_ablate)

    sub = subs.add_parser("selftest", help="run built-in numerical checks")
    _add_options(sub, ())
    sub.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, AutodiffError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except S2SRError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
