import os

import numpy as np
import pytest

from fedgan.cli import main

SMALL_RUN = [
    "--set", "data.n_clients=8",
    "--set", "privacy.clients_per_round=2",
    "--set", "fed.rounds=2",
    "--set", "metrics.every=1",
    "--set", "metrics.fid_real_samples=32",
    "--set", "metrics.fid_fake_samples=32",
    "--set", "metrics.acc_samples=16",
    "--set", "metrics.extractor_epochs=1",
    "--set", "fed.gen_steps=1",
]


def test_accountant_line_format(capsys):
    assert main(["accountant", "--q", "1", "--z", "1", "--rounds", "1", "--delta", "1e-5"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("epsilon=")
    eps = float(line.split()[0].split("=")[1])
    order = float(line.split()[1].split("=")[1])
    # integer-order grid lands just above the continuous optimum 5.29853
    assert abs(eps - 5.2985259) < 0.01
    assert order == 6.0


def test_accountant_paper_scale_magnitude(capsys):
    q = 10 / 3000
    assert main(
        ["accountant", "--q", str(q), "--z", "0.01", "--rounds", "1000", "--delta", "1e-5"]
    ) == 0
    eps = float(capsys.readouterr().out.split()[0].split("=")[1])
    assert 1e6 < eps < 1e8


def test_accountant_zero_rounds(capsys):
    assert main(["accountant", "--q", "0.5", "--z", "1", "--rounds", "0", "--delta", "1e-5"]) == 0
    assert capsys.readouterr().out.strip() == "epsilon=0 order=inf"


def test_accountant_rejects_bad_arguments(capsys):
    assert main(["accountant", "--q", "2", "--z", "1", "--rounds", "5", "--delta", "1e-5"]) == 2
    assert main(["accountant", "--q", "0.1", "--z", "0", "--rounds", "5", "--delta", "1e-5"]) == 2


def test_run_writes_artifacts(tmp_path, capsys):
    outdir = tmp_path / "exp"
    code = main(["run", "--preset", "nodp", "--outdir", str(outdir)] + SMALL_RUN)
    assert code == 0
    assert (outdir / "metrics.csv").exists()
    assert (outdir / "config_resolved").exists()
    assert (outdir / "samples_round_0.pgm").exists()
    assert (outdir / "samples_round_1.pgm").exists()
    assert (outdir / "samples_round_2.pgm").exists()
    csv = (outdir / "metrics.csv").read_text()
    lines = csv.strip().split("\n")
    assert lines[0] == "round,fid_proxy,gen_loss,classifier_acc,epsilon"
    assert len(lines) == 3
    with open(outdir / "samples_round_0.pgm", "rb") as f:
        assert f.read(3) == b"P5\n"


def test_run_replay_from_config_resolved_is_byte_identical(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["run", "--preset", "nodp", "--outdir", str(out1)] + SMALL_RUN) == 0
    assert main(["run", str(out1 / "config_resolved"), "--outdir", str(out2)]) == 0
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
    assert (out1 / "samples_round_2.pgm").read_bytes() == (
        out2 / "samples_round_2.pgm"
    ).read_bytes()
    assert (out1 / "config_resolved").read_bytes() == (out2 / "config_resolved").read_bytes()


def test_run_rejects_unknown_key(tmp_path, capsys):
    code = main(["run", "--preset", "nodp", "--outdir", str(tmp_path), "--set", "foo.bar=1"])
    assert code == 2
    assert "unknown config key" in capsys.readouterr().err


def test_run_rejects_invalid_field_value(tmp_path, capsys):
    code = main(
        ["run", "--preset", "nodp", "--outdir", str(tmp_path), "--set", "fed.rounds=-1"]
    )
    assert code == 2
    assert "fed.rounds" in capsys.readouterr().err


def test_run_env_var_outdir_fallback(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("FEDGAN_OUT", str(tmp_path / "envdir"))
    assert main(["run", "--preset", "nodp"] + SMALL_RUN + ["--set", "fed.rounds=1"]) == 0
    assert (tmp_path / "envdir" / "metrics.csv").exists()


def test_train_and_probe_denoiser_roundtrip(tmp_path, capsys):
    model_path = tmp_path / "ae.bin"
    assert main(
        ["train-autoencoder", "--out", str(model_path), "--epochs", "1", "--seed", "5"]
    ) == 0
    capsys.readouterr()
    assert main(["probe-denoiser", str(model_path), "0", "0.2"]) == 0
    out = capsys.readouterr().out.strip().split("\n")
    assert out[0] == "level,mse_noisy,mse_denoised"
    assert len(out) == 3
    level0 = out[1].split(",")
    assert float(level0[1]) == 0.0
    assert float(level0[2]) > 0.0


def test_probe_denoiser_empty_levels_prints_header_only(tmp_path, capsys):
    model_path = tmp_path / "ae.bin"
    main(["train-autoencoder", "--out", str(model_path), "--epochs", "0"])
    capsys.readouterr()
    assert main(["probe-denoiser", str(model_path)]) == 0
    assert capsys.readouterr().out.strip() == "level,mse_noisy,mse_denoised"


def test_probe_denoiser_missing_model(capsys):
    assert main(["probe-denoiser", "/no/such/model.bin", "0.2"]) == 2
