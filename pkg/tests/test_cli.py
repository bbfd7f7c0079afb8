"""Command line behavior: orchestration, determinism, error reporting."""

import json

import numpy as np
import pytest

from conftest import small_graph
from nbsmt.cli import main
from nbsmt.container import load_model, save_model
from test_data import write_split


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_model(small_graph(), root / "model")
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (24, 8, 8)).astype(np.uint8)
    labels = rng.integers(0, 10, 24).astype(np.uint8)
    write_split(root, "t10k", images, labels)
    write_split(root, "train", images, labels, compress=True)
    rc = main(["calibrate", "--model", str(root / "model"),
               "--data", str(root), "--split", "train",
               "--samples", "16", "--out", str(root / "q.json")])
    assert rc == 0
    return root


def run_cli(args):
    return main([str(a) for a in args])


def test_calibrate_writes_qparams(workspace, capsys):
    doc = json.loads((workspace / "q.json").read_text())
    assert set(doc["layers"]) == {"conv1", "conv2", "fc"}


def test_eval_float32_stdout(workspace, capsys):
    rc = run_cli(["eval", "--model", workspace / "model", "--data", workspace,
                  "--mode", "float32"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["mode"] == "float32"
    assert doc["total"] == 24
    assert doc["speedup"] is None


def test_eval_reruns_byte_identical(workspace, capsys):
    for name in ("a.json", "b.json"):
        rc = run_cli(["eval", "--model", workspace / "model",
                      "--data", workspace, "--quant", workspace / "q.json",
                      "--mode", "nbsmt", "--threads", "4T",
                      "--out", workspace / name])
        assert rc == 0
    assert ((workspace / "a.json").read_bytes()
            == (workspace / "b.json").read_bytes())
    doc = json.loads((workspace / "a.json").read_text())
    assert doc["threads"] == {"conv2": 4}
    assert doc["speedup"] > 1.0


def test_eval_per_layer_override(workspace, capsys):
    rc = run_cli(["eval", "--model", workspace / "model", "--data", workspace,
                  "--quant", workspace / "q.json",
                  "--threads-per-layer", "conv2=1"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["threads"] == {"conv2": 1}
    assert doc["speedup"] == 1.0


def test_unknown_layer_override_fails_cleanly(workspace, capsys):
    rc = run_cli(["eval", "--model", workspace / "model", "--data", workspace,
                  "--quant", workspace / "q.json",
                  "--threads-per-layer", "conv9=2"])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "conv9" in err


def test_quant_mode_without_qparams_fails(workspace, capsys):
    rc = run_cli(["eval", "--model", workspace / "model", "--data", workspace,
                  "--mode", "quant"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_missing_model_fails(workspace, capsys):
    rc = run_cli(["eval", "--model", workspace / "missing",
                  "--data", workspace, "--mode", "float32"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_bad_thread_spec_fails(workspace, capsys):
    rc = run_cli(["eval", "--model", workspace / "model", "--data", workspace,
                  "--quant", workspace / "q.json", "--threads", "4"])
    assert rc == 1
    assert "4" in capsys.readouterr().err


def test_unknown_flag_exits_two(workspace):
    with pytest.raises(SystemExit) as e:
        run_cli(["eval", "--frobnicate"])
    assert e.value.code == 2


def test_prune_writes_container(workspace, capsys):
    rc = run_cli(["prune", "--model", workspace / "model", "--sparsity", 0.5,
                  "--out", workspace / "pruned"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["sparsity"]["conv2"]["float_zero_fraction"] >= 0.5
    g = load_model(workspace / "pruned")
    assert (g.layer("conv2").weight == 0).any()


def test_recalibrate_writes_container(workspace, capsys):
    rc = run_cli(["recalibrate", "--model", workspace / "model",
                  "--quant", workspace / "q.json", "--data", workspace,
                  "--split", "train", "--batches", 3, "--batch-size", 8,
                  "--out", workspace / "recal"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["drift"]) == {"bn1", "bn2"}
    updated = load_model(workspace / "recal")
    base = load_model(workspace / "model")
    assert not np.array_equal(updated.layer("bn2").running_mean,
                              base.layer("bn2").running_mean)
    np.testing.assert_array_equal(updated.layer("conv2").weight,
                                  base.layer("conv2").weight)


def test_sweep_emits_dat_front_and_report(workspace, capsys):
    args = ["sweep", "--model", workspace / "model",
            "--quant", workspace / "q.json", "--data", workspace,
            "--strategy", "flip-one-to-2T", "--fp32-top1", "0.5",
            "--out", workspace / "fig.dat", "--report", workspace / "sweep.json"]
    assert run_cli(args) == 0
    first = (workspace / "fig.dat").read_bytes()
    assert (workspace / "fig.front.dat").exists()
    doc = json.loads((workspace / "sweep.json").read_text())
    assert len(doc["points"]) == 2
    capsys.readouterr()
    assert run_cli(args) == 0
    assert (workspace / "fig.dat").read_bytes() == first


def test_sweep_explicit_strategy(workspace, capsys):
    rc = run_cli(["sweep", "--model", workspace / "model",
                  "--quant", workspace / "q.json", "--data", workspace,
                  "--strategy", "explicit", "--config", "conv2=2",
                  "--fp32-top1", "0.5"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["num_points"] == 1
    assert doc["front"][0]["thread_config"] == {"conv2": 2}


def test_report_renders_eval_and_sweep(workspace, capsys):
    assert run_cli(["report", "--in", workspace / "a.json"]) == 0
    out = capsys.readouterr().out
    assert "top1" in out and "conv2" in out
    assert run_cli(["report", "--in", workspace / "sweep.json",
                    "--dat", workspace / "again.dat"]) == 0
    out = capsys.readouterr().out
    assert "front" in out
    assert (workspace / "again.dat").read_text() == (workspace / "fig.dat").read_text()


def test_report_rejects_unrecognized(workspace, tmp_path, capsys):
    p = tmp_path / "x.json"
    p.write_text("{}")
    assert run_cli(["report", "--in", p]) == 1
    assert "error:" in capsys.readouterr().err
