import json

import numpy as np
import pandas as pd
import pytest

from denoisenet import __version__
from denoisenet.cli import build_parser, main, parse_run_config
from denoisenet.config import load_config
from denoisenet.data import add_gaussian_noise, load_gray, save_gray
from denoisenet.errors import ConfigError
from denoisenet.evaluate import psnr
from denoisenet.model import HEADER, ModelConfig, init_model, load_model, save_model
from denoisenet.synth import make_dataset

TOY = {
    "depth": 2,
    "feature_channels": 2,
    "patch_size": 12,
    "crop_border": 2,
    "batch_size": 2,
    "steps": 3,
    "learning_rate": 1e-3,
    "checkpoint_every": 2,
    "log_every": 1,
}


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def write_config(path, **extra):
    path.write_text(json.dumps({**TOY, **extra}))
    return str(path)


# =============================================================================
# configuration
# =============================================================================

def test_overrides_beat_file(tmp_path):
    path = write_config(tmp_path / "c.json", noise_sigma=15)
    command, config = parse_run_config(["train", "--config", path, "--noise-sigma", "30", "--seed", "4"])
    assert command == "train"
    assert config.noise_sigma == 30.0 and config.seed == 4 and config.depth == 2
    _, plain = parse_run_config(["train", "--config", path])
    assert plain.noise_sigma == 15.0 and plain.seed is None


def test_list_and_bool_flags():
    _, config = parse_run_config(["eval", "--models", "a=x.dnet", "b=y.dnet", "--quantized", "true",
                                  "--split_fractions", "0.5", "0.25", "0.25"])
    assert config.models == ["a=x.dnet", "b=y.dnet"]
    assert config.quantized is True
    assert config.split_fractions == [0.5, 0.25, 0.25]


def test_unknown_config_key(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"depht": 3}))
    with pytest.raises(ConfigError, match="depht"):
        load_config(tmp_path / "bad.json")


def test_patch_vs_crop_rejected_before_work(tmp_path, capsys):
    path = write_config(tmp_path / "c.json", patch_size=4, crop_border=2)
    (tmp_path / "m.tsv").write_text("")
    code = main(["train", "--config", path, "--manifest", "m.tsv", "--seed", "1", "--output_dir", "out"])
    assert code == 1
    assert "patch_size" in capsys.readouterr().err
    assert not (tmp_path / "out" / "model").exists()


def test_seed_required(tmp_path):
    (tmp_path / "m.tsv").write_text("")
    assert main(["train", "--config", write_config(tmp_path / "c.json"), "--manifest", "m.tsv"]) == 1


def test_threads_env(monkeypatch):
    monkeypatch.setenv("DENOISENET_THREADS", "3")
    assert load_config(None).resolved_threads() == 3
    assert load_config(None, {"threads": 2}).resolved_threads() == 2
    monkeypatch.setenv("DENOISENET_THREADS", "many")
    with pytest.raises(ConfigError):
        load_config(None).resolved_threads()


# =============================================================================
# usage and exit codes
# =============================================================================

def test_version(capsys):
    assert main(["--version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and "DNET v1" in out


def test_unknown_subcommand_and_flag(capsys):
    assert main(["compress"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["denoise", "--frobnicate", "1"]) == 1


def test_help_mentions_commands():
    text = build_parser().format_help()
    for command in ("train", "finetune", "denoise", "eval", "diagnose", "synth"):
        assert command in text


def test_missing_model_is_validation_error(tmp_path, capsys):
    save_gray(np.zeros((8, 8)), tmp_path / "a.png")
    code = main(["denoise", "--model", "nowhere/m.dnet", "--input", "a.png", "--output", "b.png"])
    assert code == 1
    assert "nowhere/m.dnet" in capsys.readouterr().err


def test_corrupt_model_is_runtime_error(tmp_path):
    (tmp_path / "m.dnet").write_bytes(b"JUNKJUNKJUNK")
    save_gray(np.zeros((8, 8)), tmp_path / "a.png")
    assert main(["denoise", "--model", "m.dnet", "--input", "a.png", "--output", "b.png"]) == 2


def test_impossible_model_header_is_runtime_error(tmp_path):
    (tmp_path / "m.dnet").write_bytes(HEADER.pack(b"DNET", 1, 0, 4))
    save_gray(np.zeros((8, 8)), tmp_path / "a.png")
    assert main(["denoise", "--model", "m.dnet", "--input", "a.png", "--output", "b.png"]) == 2


# =============================================================================
# commands
# =============================================================================

def test_denoise_contract(tmp_path):
    save_model(init_model(ModelConfig(2, 2), 0), tmp_path / "m.dnet")
    save_gray(make_dataset("shapes", 1, 30, 0)[0], tmp_path / "a.png")
    code = main(["denoise", "--config", write_config(tmp_path / "c.json"), "--model", "m.dnet",
                 "--input", "a.png", "--output", "b.png"])
    assert code == 0
    assert load_gray(tmp_path / "b.png").shape == (30, 30)
    assert (tmp_path / "run").is_dir() and (tmp_path / "run" / "run.log").exists()


def test_eval_directory_mean_matches_psnr(tmp_path):
    clean_dir, noisy_dir = tmp_path / "clean", tmp_path / "noisy"
    expected = []
    for i, image in enumerate(make_dataset("disks", 3, 20, 1)):
        save_gray(image, clean_dir / f"img{i}.png")
        save_gray(add_gaussian_noise(image, 20, i), noisy_dir / f"img{i}.png")
        expected.append(psnr(load_gray(noisy_dir / f"img{i}.png"), load_gray(clean_dir / f"img{i}.png")))
    code = main(["eval", "--clean_dir", "clean", "--denoised_dirs", "noisy=noisy", "--output_dir", "out"])
    assert code == 0
    records = pd.read_csv(tmp_path / "out" / "reports" / "records.csv")
    assert records["psnr_db"].mean() == pytest.approx(np.mean(expected), rel=1e-12)
    assert (tmp_path / "out" / "reports" / "wins.csv").exists()


def test_synth_then_train_is_reproducible(tmp_path):
    config = write_config(tmp_path / "c.json", synth_size=16, synth_count=3)
    assert main(["synth", "--config", config, "--seed", "1", "--output_dir", "data"]) == 0
    manifest = "data/data/shapes/manifest.tsv"
    for out in ("one", "two"):
        assert main(["train", "--config", config, "--manifest", manifest, "--seed", "1", "--output_dir", out]) == 0
    first = (tmp_path / "one" / "model" / "denoisenet.dnet").read_bytes()
    assert first == (tmp_path / "two" / "model" / "denoisenet.dnet").read_bytes()
    assert (tmp_path / "one" / "model" / "denoisenet_step2.dnet").exists()
    assert len(pd.read_csv(tmp_path / "one" / "reports" / "loss.csv")) == 3
    assert (tmp_path / "one" / "reports" / "loss.svg").exists()
    assert "step 3/3" in (tmp_path / "one" / "run.log").read_text()


def test_threads_do_not_change_training_bytes(tmp_path):
    config = write_config(tmp_path / "c.json", synth_size=16, synth_count=3)
    main(["synth", "--config", config, "--seed", "2", "--output_dir", "data"])
    manifest = "data/data/shapes/manifest.tsv"
    main(["train", "--config", config, "--manifest", manifest, "--seed", "1", "--output_dir", "t1", "--threads", "1"])
    main(["train", "--config", config, "--manifest", manifest, "--seed", "1", "--output_dir", "t3", "--threads", "3"])
    assert (tmp_path / "t1" / "model" / "denoisenet.dnet").read_bytes() == \
        (tmp_path / "t3" / "model" / "denoisenet.dnet").read_bytes()


def test_finetune_and_model_eval(tmp_path):
    config = write_config(tmp_path / "c.json", synth_size=16, synth_count=5)
    main(["synth", "--config", config, "--seed", "3", "--synth_kind", "disks", "--output_dir", "data"])
    manifest = "data/data/disks/manifest.tsv"
    save_model(init_model(ModelConfig(2, 2), 0), tmp_path / "agnostic.dnet")
    code = main(["finetune", "--config", config, "--model", "agnostic.dnet", "--manifest", manifest,
                 "--class_label", "disks", "--seed", "2", "--output_dir", "ft"])
    assert code == 0
    tuned = load_model(tmp_path / "ft" / "model" / "denoisenet_disks.dnet")
    assert tuned.config == ModelConfig(2, 2)
    split = pd.read_csv(tmp_path / "ft" / "reports" / "split_disks.csv")
    assert split["part"].value_counts().to_dict() == {"train": 3, "val": 1, "test": 1}
    report = pd.read_csv(tmp_path / "ft" / "reports" / "finetune_disks" / "records.csv")
    assert set(report["denoiser"]) == {"noisy", "agnostic", "disks"}
    val = pd.read_csv(tmp_path / "ft" / "reports" / "val_disks.csv")
    assert val["step"].tolist() == [3]
    assert val["selected"].tolist() == [True]

    code = main(["eval", "--config", config, "--manifest", manifest, "--models",
                 "agnostic=agnostic.dnet", "disks=ft/model/denoisenet_disks.dnet",
                 "--baseline", "noisy", "--seed", "9", "--output_dir", "ev"])
    assert code == 0
    reports = tmp_path / "ev" / "reports"
    wins = pd.read_csv(reports / "wins.csv")
    assert set(wins["denoiser"]) == {"agnostic", "disks"}
    assert pd.read_csv(reports / "confusion.csv")["class"].tolist() == ["disks"]
    assert (reports / "profile.svg").exists()


def test_finetune_keeps_best_validated_checkpoint(tmp_path):
    config = write_config(tmp_path / "c.json", synth_size=16, synth_count=5, steps=4, val_every=1, checkpoint_every=1)
    main(["synth", "--config", config, "--seed", "3", "--synth_kind", "stripes", "--output_dir", "data"])
    save_model(init_model(ModelConfig(2, 2), 0), tmp_path / "agnostic.dnet")
    code = main(["finetune", "--config", config, "--model", "agnostic.dnet", "--manifest",
                 "data/data/stripes/manifest.tsv", "--class_label", "stripes", "--seed", "2", "--output_dir", "ft"])
    assert code == 0
    val = pd.read_csv(tmp_path / "ft" / "reports" / "val_stripes.csv")
    assert val["step"].tolist() == [1, 2, 3, 4]
    best = val.loc[val["selected"], "step"].tolist()
    assert len(best) == 1 and val["val_psnr_db"].max() == val.loc[val["selected"], "val_psnr_db"].iloc[0]
    kept = load_model(tmp_path / "ft" / "model" / "denoisenet_stripes.dnet")
    assert kept.equals(load_model(tmp_path / "ft" / "model" / f"denoisenet_stripes_step{best[0]}.dnet"))


def test_diagnose_writes_trace(tmp_path):
    save_model(init_model(ModelConfig(3, 2), 0), tmp_path / "m.dnet")
    save_gray(make_dataset("shapes", 1, 24, 0)[0], tmp_path / "clean.png")
    code = main(["diagnose", "--model", "m.dnet", "--input", "clean.png", "--depth", "3", "--feature_channels", "2",
                 "--seed", "3", "--raw", "true", "--output_dir", "diag"])
    assert code == 0
    trace = tmp_path / "diag" / "trace"
    assert (trace / "rmse.csv").exists()
    assert (trace / "dominant_layer.png").exists()
    assert len(list(trace.glob("residual_*.png"))) == 3
    assert len(list((trace / "raw").glob("residual_*.tnsr"))) == 3
