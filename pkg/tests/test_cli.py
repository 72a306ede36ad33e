"""Command-line behavior: exit codes, precedence, artifacts."""

import numpy as np
import pytest

from s2sr.cli import DEFAULT_GRID, _ablate_runs, _parse_grid, main
from s2sr.dataset import Landscape, load_manifest
from s2sr.raster import (
    TWENTY_M_BANDS,
    BandId,
    BandStack,
    read_raster,
    write_raster,
)
from s2sr.synthetic import generate_scene
from s2sr.training import load_checkpoint

TOY_TRAIN = [
    "--stages", "1", "--width", "8", "--feat-dim", "4", "--fused-dim", "8",
    "--window", "3", "--clusters", "2", "--guide-conv-width", "6",
    "--guide-mlp-hidden", "8", "--batch", "2", "--lr", "1e-3",
]


def write_scenes(scenes_dir, names=("urban_a", "rural_b")):
    scenes_dir.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(names):
        kind = Landscape(name.split("_")[0])
        hr10, lr20 = generate_scene(kind, size10=48, seed=60 + i)
        write_raster(hr10, scenes_dir / f"{name}.hr10.s2sr")
        write_raster(lr20, scenes_dir / f"{name}.lr20.s2sr")


def prep(tmp_path, tag="data", seed=0, extra=()):
    scenes = tmp_path / "scenes"
    if not scenes.exists():
        write_scenes(scenes)
    out = tmp_path / tag
    code = main(
        [
            "dataset-prep", "--scenes", str(scenes), "--out", str(out),
            "--crop", "24", "--seed", str(seed), "--splits", "4,2", *extra,
        ]
    )
    assert code == 0
    return out


# ------------------------------------------------------------- exit codes


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    capsys.readouterr()


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["transmogrify"]) == 2
    capsys.readouterr()


def test_unknown_flag_is_usage_error(capsys):
    assert main(["selftest", "--frobnicate"]) == 2
    capsys.readouterr()


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["train"]) == 2
    assert "manifest" in capsys.readouterr().err


def test_missing_scene_dir_is_data_error(tmp_path, capsys):
    code = main(
        ["dataset-prep", "--scenes", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]
    )
    assert code == 3
    capsys.readouterr()


# ------------------------------------------------------------ dataset-prep


def test_dataset_prep_layout(tmp_path, capsys):
    out = prep(tmp_path)
    stdout = capsys.readouterr().out
    assert "resolved config [dataset-prep]:" in stdout
    assert stdout.rstrip().splitlines()[-1] == str(out / "manifest.json")
    manifest = load_manifest(out / "manifest.json")
    assert len(manifest.entries) == 8  # two 48px scenes, 24px crops
    crops = sorted((out / "crops").glob("*.s2sr"))
    assert len(crops) == 16  # hr10 + lr20 per crop
    splits = [e.split for e in manifest.entries]
    assert splits.count("train") == 4 and splits.count("val") == 2


def test_dataset_prep_deterministic(tmp_path, capsys):
    a = prep(tmp_path, "a", seed=5)
    b = prep(tmp_path, "b", seed=5)
    capsys.readouterr()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_dataset_prep_materialize(tmp_path, capsys):
    out = prep(tmp_path, extra=("--materialize",))
    capsys.readouterr()
    crops = list((out / "crops").glob("*.in40.s2sr"))
    assert len(crops) == 8
    assert len(list((out / "crops").glob("*.gd20.s2sr"))) == 8


def test_dataset_prep_orphan_scene(tmp_path, capsys):
    scenes = tmp_path / "scenes"
    write_scenes(scenes)
    (scenes / "rural_b.lr20.s2sr").unlink()
    code = main(
        ["dataset-prep", "--scenes", str(scenes), "--out", str(tmp_path / "o")]
    )
    assert code == 3
    capsys.readouterr()


# ------------------------------------------------------- config precedence


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("crop = 24\nseed = 7  # comment\n\n# full line comment\n")
    scenes = tmp_path / "scenes"
    write_scenes(scenes)
    out = tmp_path / "out"
    code = main(
        [
            "dataset-prep", "--scenes", str(scenes), "--out", str(out),
            "--config", str(cfg), "--seed", "9", "--splits", "4,2",
        ]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    assert "  crop = 24" in stdout  # from file
    assert "  seed = 9" in stdout  # flag wins over file
    assert load_manifest(out / "manifest.json").seed == 9


def test_config_file_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("banana = 3\n")
    code = main(
        [
            "dataset-prep", "--scenes", str(tmp_path), "--out", str(tmp_path / "o"),
            "--config", str(cfg),
        ]
    )
    assert code == 3
    assert "banana" in capsys.readouterr().err


# ------------------------------------------------------- train / eval / infer


def test_train_eval_infer_chain(tmp_path, capsys):
    data = prep(tmp_path)
    run = tmp_path / "run"
    code = main(
        [
            "train", "--manifest", str(data / "manifest.json"), "--out", str(run),
            "--epochs", "2", "--seed", "3", *TOY_TRAIN,
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    ckpt = run / "checkpoint.bpck"
    assert out.rstrip().splitlines()[-1] == str(ckpt)
    assert ckpt.exists() and (run / "train_log.csv").exists()
    meta, _ = load_checkpoint(ckpt)
    assert meta["config"]["stages"] == 1
    assert "manifest" not in meta["config"]  # paths stay out of the echo
    assert "out" not in meta["config"]

    report = tmp_path / "report.csv"
    code = main(
        [
            "eval", "--checkpoint", str(ckpt), "--manifest", str(data / "manifest.json"),
            "--split", "val", "--report", str(report),
        ]
    )
    assert code == 0
    assert report.exists()
    lines = report.read_text().splitlines()
    assert lines[0] == "crop_id,landscape,ergas,psnr,ssim,sam"
    assert len([l for l in lines if l.startswith("summary,")]) >= 2
    capsys.readouterr()

    entry = load_manifest(data / "manifest.json").entries[0]
    base = data / entry.path
    out_path = tmp_path / "sr.s2sr"
    code = main(
        [
            "infer", "--checkpoint", str(ckpt), "--input", str(base) + ".lr20.s2sr",
            "--hr", str(base) + ".hr10.s2sr", "--out", str(out_path),
        ]
    )
    capsys.readouterr()
    assert code == 0
    sr = read_raster(out_path)
    lr = read_raster(str(base) + ".lr20.s2sr")
    assert sr.bands == TWENTY_M_BANDS
    assert (sr.height, sr.width) == (2 * lr.height, 2 * lr.width)
    assert sr.gsd == lr.gsd / 2


def test_eval_needs_checkpoint_or_bicubic(tmp_path, capsys):
    data = prep(tmp_path)
    code = main(
        [
            "eval", "--manifest", str(data / "manifest.json"),
            "--report", str(tmp_path / "r.csv"),
        ]
    )
    assert code == 2
    capsys.readouterr()


def test_eval_bicubic_baseline(tmp_path, capsys):
    data = prep(tmp_path)
    report = tmp_path / "r.csv"
    code = main(
        [
            "eval", "--bicubic", "--manifest", str(data / "manifest.json"),
            "--split", "val", "--report", str(report), "--per-band-psnr",
        ]
    )
    assert code == 0
    assert report.exists()
    capsys.readouterr()


def test_infer_bicubic_dimensions(tmp_path, capsys):
    data = prep(tmp_path)
    entry = load_manifest(data / "manifest.json").entries[0]
    base = data / entry.path
    out_path = tmp_path / "up.s2sr"
    code = main(
        [
            "infer", "--bicubic", "--input", str(base) + ".lr20.s2sr",
            "--hr", str(base) + ".hr10.s2sr", "--out", str(out_path),
        ]
    )
    capsys.readouterr()
    assert code == 0
    assert read_raster(out_path).height == 2 * read_raster(str(base) + ".lr20.s2sr").height


def test_infer_grid_mismatch_is_data_error(tmp_path, capsys):
    data = prep(tmp_path)
    entries = load_manifest(data / "manifest.json").entries
    a, b = (data / entries[0].path), (data / entries[1].path)
    code = main(
        [
            "infer", "--bicubic", "--input", str(a) + ".lr20.s2sr",
            "--hr", str(a) + ".lr20.s2sr", "--out", str(tmp_path / "x.s2sr"),
        ]
    )
    assert code == 3  # 20m file lacks the 10m bands
    capsys.readouterr()


def test_infer_numeric_failure_exit_code(tmp_path, capsys):
    data = prep(tmp_path)
    run = tmp_path / "run"
    code = main(
        [
            "train", "--manifest", str(data / "manifest.json"), "--out", str(run),
            "--epochs", "1", *TOY_TRAIN,
        ]
    )
    assert code == 0
    from s2sr.training import save_checkpoint

    meta, tensors = load_checkpoint(run / "checkpoint.bpck")
    name = next(n for n in sorted(tensors) if n.endswith("in.w"))
    tensors[name] = np.full_like(tensors[name], 1e38)
    bad = tmp_path / "bad.bpck"
    save_checkpoint(bad, tensors, meta)
    entry = load_manifest(data / "manifest.json").entries[0]
    base = data / entry.path
    code = main(
        [
            "infer", "--checkpoint", str(bad), "--input", str(base) + ".lr20.s2sr",
            "--hr", str(base) + ".hr10.s2sr", "--out", str(tmp_path / "x.s2sr"),
        ]
    )
    capsys.readouterr()
    assert code == 4


# ----------------------------------------------------------------- render


def test_render_flat_index_is_mid_gray(tmp_path, capsys):
    plane = np.full((8, 8), 0.4, dtype=np.float32)
    stack = BandStack(
        bands=(BandId.B3, BandId.B8A), data=np.stack([plane, plane]), gsd=20.0
    )
    raster = tmp_path / "flat.s2sr"
    write_raster(stack, raster)
    out = tmp_path / "flat.png"
    code = main(["render", "--input", str(raster), "--kind", "ndwi", "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    from PIL import Image

    img = np.asarray(Image.open(out))
    assert img.shape == (8, 8, 3)
    assert np.all(img == 128)


def test_render_true_color(tmp_path, capsys):
    hr10, _ = generate_scene(Landscape.URBAN, size10=16, seed=1)
    raster = tmp_path / "scene.s2sr"
    write_raster(hr10, raster)
    out = tmp_path / "true.png"
    code = main(["render", "--input", str(raster), "--kind", "true", "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    assert out.exists()


def test_render_unknown_kind(tmp_path, capsys):
    hr10, _ = generate_scene(Landscape.URBAN, size10=16, seed=1)
    raster = tmp_path / "scene.s2sr"
    write_raster(hr10, raster)
    code = main(["render", "--input", str(raster), "--kind", "sepia", "--out", str(tmp_path / "x.png")])
    assert code == 2
    capsys.readouterr()


def test_render_missing_band_is_data_error(tmp_path, capsys):
    _, lr20 = generate_scene(Landscape.URBAN, size10=16, seed=1)
    raster = tmp_path / "scene.s2sr"
    write_raster(lr20, raster)  # 20m stack lacks B2/B3/B4
    code = main(["render", "--input", str(raster), "--kind", "true", "--out", str(tmp_path / "x.png")])
    assert code == 3
    capsys.readouterr()


# ----------------------------------------------------------------- ablate


def test_grid_parsing():
    grid = _parse_grid(["stages=1,2", "loss=l1"])
    assert grid["stages"] == ["1", "2"]
    assert grid["loss"] == ["l1"]
    assert grid["patch"] == DEFAULT_GRID["patch"]  # untouched axes keep defaults
    assert _parse_grid(None) == DEFAULT_GRID
    with pytest.raises(Exception):
        _parse_grid(["bogus=1"])


def test_default_grid_run_count():
    resolved = {
        "mode": "ginet+", "base_stages": 2, "base_window": 3, "width": 16,
        "feat_dim": 8, "fused_dim": 16,
    }
    runs = _ablate_runs(dict(DEFAULT_GRID), resolved)
    assert len(runs) == 3 + 9 + 4
    sweeps = [r[0] for r in runs]
    assert sweeps.count("stages") == 3
    assert sweeps.count("patch_window") == 9
    assert sweeps.count("loss") == 4
    tags = [r[1] for r in runs]
    assert len(set(tags)) == len(tags)


def test_ablate_small_grid(tmp_path, capsys):
    data = prep(tmp_path)
    out = tmp_path / "ablation"
    code = main(
        [
            "ablate", "--manifest", str(data / "manifest.json"), "--out", str(out),
            "--epochs", "1", "--width", "8", "--feat-dim", "4", "--fused-dim", "8",
            "--base-stages", "1",
            "--grid", "stages=1,2", "patch=3", "window=3", "loss=l1,mse",
        ]
    )
    capsys.readouterr()
    assert code == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "sweep,tag,stages,patch,window,loss,best_epoch,val_psnr"
    assert len(lines) == 1 + 2 + 1 + 2
    assert (out / "runs" / "stages1" / "checkpoint.bpck").exists()
    assert (out / "runs" / "loss_mse" / "train_log.csv").exists()


# --------------------------------------------------------------- selftest


def test_selftest_passes(capsys):
    code = main(["selftest"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS ") == 8
    assert "FAIL" not in out


def test_selftest_injected_failure(monkeypatch, capsys):
    monkeypatch.setenv("S2SR_SELFTEST_BREAK", "1")
    code = main(["selftest"])
    out = capsys.readouterr().out
    assert code == 4
    assert "FAIL injected-failure" in out
