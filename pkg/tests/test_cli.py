import random
import subprocess
import sys

import numpy as np
import pytest

from conftest import MNIST_TEST, MNIST_TRAIN
from gpae import cli
from gpae.artifacts import load_model, read_metrics_csv, save_model
from gpae.autoencoder import ConfigError, build_topology_straightforward, random_individual
from gpae.cli import (
    EXIT_CONFIG,
    EXIT_FORMAT,
    EXIT_IO,
    build_run_config,
    format_hms,
    main,
    read_config_file,
)
from gpae.data import read_pgm, write_idx


def _train(tmp_path, *extra, name="run"):
    out = tmp_path / name
    argv = ["train", "--train", str(MNIST_TRAIN), "--test", str(MNIST_TEST),
            "--limit", "120", "--test-limit", "30", "--generations", "2", "--out", str(out), *extra]
    assert main(argv) == 0
    return out


def test_train_writes_artifacts(tmp_path, capsys):
    out = _train(tmp_path, "--preset", "table3-best")
    text = capsys.readouterr().out
    assert "test MSE" in text and "time 00:00:" in text
    m = load_model(out / "model.gpae")
    assert m.header["setup"] == "partitioned"
    assert m.header["minibatch_size"] == "60" and m.header["passes"] == "5"
    assert m.topology.n_code == 588
    log = read_metrics_csv(out / "metrics.csv")
    assert len(log.records) == 3 and log.test_mse is not None
    assert read_pgm(out / "reconstruction.pgm").shape == (56, 280)
    assert read_metrics_csv(out / "timing.csv").total_seconds > 0


def test_zero_generations_valid_artifacts(tmp_path):
    out = _train(tmp_path, "--generations", "0", "--setup", "straightforward")
    assert load_model(out / "model.gpae").topology.n_code == 588
    assert len(read_metrics_csv(out / "metrics.csv").records) == 1


def test_workers_do_not_change_outputs(tmp_path):
    a = _train(tmp_path, "--workers", "1", "--batch", "40", name="a")
    b = _train(tmp_path, "--workers", "3", "--batch", "40", name="b")
    for f in ("model.gpae", "metrics.csv", "reconstruction.pgm"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_exit_codes_distinguish_failures(tmp_path, capsys):
    assert main(["train", "--train", str(tmp_path / "missing")]) == EXIT_IO
    assert main(["train", "--train", str(MNIST_TRAIN), "--passes", "0"]) == EXIT_CONFIG
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("population = 10\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x09\x03" + bytes(12))
    assert main(["train", "--train", str(bad)]) == EXIT_FORMAT
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 4 and all(line.startswith("gpae: ") for line in err)


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nseed = 4\npopulation_size = 20\nelitism_count = 1\nbatch = none\n")
    entries = read_config_file(cfg)
    assert entries["seed"] == "4"
    rc = build_run_config(entries)
    assert rc.evolution.population_size == 20 and rc.evolution.minibatch_size is None
    with pytest.raises(ConfigError):
        build_run_config({"population_size": "20"})  # counts no longer sum to the size
    with pytest.raises(ConfigError):
        build_run_config({"seed": "abc"})
    with pytest.raises(ConfigError):
        build_run_config({"setup": "deep"})

    monkeypatch.setenv("GPAE_WORKERS", "3")
    args = cli._parser().parse_args(["train", "--config", str(cfg), "--seed", "9"])
    merged = cli._train_entries(args)
    assert merged["seed"] == "9" and merged["workers"] == "3"
    args = cli._parser().parse_args(["train", "--workers", "2"])
    assert cli._train_entries(args)["workers"] == "2"


def test_transform_rows_and_determinism(tmp_path):
    topo = build_topology_straightforward(4, 3)
    save_model(tmp_path / "m.gpae", random_individual(topo, 4, random.Random(0)), topo)
    write_idx(tmp_path / "one.idx", np.arange(4, dtype=np.uint8).reshape(1, 2, 2))
    assert main(["transform", str(tmp_path / "m.gpae"), str(tmp_path / "one.idx"), str(tmp_path / "c1.csv")]) == 0
    assert main(["transform", str(tmp_path / "m.gpae"), str(tmp_path / "one.idx"), str(tmp_path / "c2.csv")]) == 0
    rows = (tmp_path / "c1.csv").read_text().splitlines()
    assert len(rows) == 1 and len(rows[0].split(",")) == 3
    assert (tmp_path / "c1.csv").read_bytes() == (tmp_path / "c2.csv").read_bytes()


def test_transform_geometry_mismatch(tmp_path, capsys):
    topo = build_topology_straightforward(4, 3)
    save_model(tmp_path / "m.gpae", random_individual(topo, 4, random.Random(0)), topo)
    write_idx(tmp_path / "d.idx", np.zeros((2, 3, 3), dtype=np.uint8))
    assert main(["transform", str(tmp_path / "m.gpae"), str(tmp_path / "d.idx"), str(tmp_path / "c.csv")]) == EXIT_FORMAT
    err = capsys.readouterr().err
    assert "9 features" in err and "expects 4" in err


def test_transform_mnist_shape(tmp_path):
    out = _train(tmp_path)
    assert main(["transform", str(out / "model.gpae"), str(MNIST_TEST), str(tmp_path / "codes.csv")]) == 0
    rows = (tmp_path / "codes.csv").read_text().splitlines()
    assert len(rows) == 500 and len(rows[0].split(",")) == 588


def test_reconstruct_and_inspect(tmp_path, capsys):
    out = _train(tmp_path)
    capsys.readouterr()
    assert main(["reconstruct", str(out / "model.gpae"), str(MNIST_TEST), str(tmp_path / "r.pgm"),
                 "--count", "1"]) == 0
    assert read_pgm(tmp_path / "r.pgm").shape == (56, 28)
    assert main(["reconstruct", str(out / "model.gpae"), str(MNIST_TEST), str(tmp_path / "r.pgm"),
                 "--count", "900"]) == 0
    assert "warning" in capsys.readouterr().err
    assert read_pgm(tmp_path / "r.pgm").shape == (56, 500 * 28)
    assert main(["inspect", str(out / "model.gpae")]) == 0
    assert "196 blocks, code 588" in capsys.readouterr().out
    bad = tmp_path / "bad.gpae"
    bad.write_text((out / "model.gpae").read_text().replace("dec:5 ", "dec:5 (add ", 1))
    assert main(["inspect", str(bad)]) == EXIT_FORMAT
    assert "line" in capsys.readouterr().err


def test_inspect_search_space_context(tmp_path, capsys):
    topo = build_topology_straightforward(4096, 32)
    save_model(tmp_path / "s.gpae", random_individual(topo, 0, random.Random(0)), topo, {"max_depth": 0})
    assert main(["inspect", str(tmp_path / "s.gpae")]) == 0
    assert "log2 size 8197" in capsys.readouterr().out


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main(["inspect"])
    assert info.value.code == 2


def test_format_hms():
    assert format_hms(3.4) == "00:00:03"
    assert format_hms(3 * 3600 + 61) == "03:01:01"


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gpae.cli", "inspect", str(tmp_path / "none")],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_IO
