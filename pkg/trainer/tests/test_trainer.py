"""Trainer-side checks: container export, idx files, pruning, training loop."""

import gzip
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from deskcnn_trainer import idx
from deskcnn_trainer.container import export_container, load_container
from deskcnn_trainer.model import DeskCNN, MNIST_MEAN, MNIST_STD
from deskcnn_trainer.prune_loop import _mask_of, _prune_to, layer_sparsity
from deskcnn_trainer.train import train_model

REPO = Path(__file__).resolve().parents[2]


def seeded_model(seed=0):
    torch.manual_seed(seed)
    return DeskCNN().eval()


def tensor_state(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def test_forward_shape():
    model = seeded_model()
    out = model(torch.zeros(2, 1, 28, 28))
    assert out.shape == (2, 10)


def test_container_round_trip_bit_exact(tmp_path):
    model = seeded_model(3)
    export_container(model, tmp_path / "m", metadata={"note": "round trip"})
    loaded, manifest = load_container(tmp_path / "m")

    before = tensor_state(model)
    after = tensor_state(loaded)
    for key, val in before.items():
        if key.endswith("num_batches_tracked"):
            continue
        assert torch.equal(val, after[key]), key

    assert manifest["version"] == 1
    assert manifest["input_norm"] == {"mean": MNIST_MEAN, "std": MNIST_STD}
    assert manifest["metadata"]["note"] == "round trip"
    kinds = [(l["name"], l["kind"]) for l in manifest["layers"]]
    assert kinds == [
        ("conv1", "conv2d"), ("bn1", "batchnorm"), ("relu1", "relu"),
        ("conv2", "conv2d"), ("bn2", "batchnorm"), ("relu2", "relu"),
        ("pool1", "maxpool"), ("conv3", "conv2d"), ("bn3", "batchnorm"),
        ("relu3", "relu"), ("pool2", "maxpool"), ("fc", "fc"),
    ]
    exempt = {l["name"]: l["nbsmt_exempt"] for l in manifest["layers"]
              if "nbsmt_exempt" in l}
    assert exempt == {"conv1": True, "conv2": False, "conv3": False, "fc": True}


def test_container_blob_checksums_are_real(tmp_path):
    export_container(seeded_model(), tmp_path / "m")
    manifest = json.loads((tmp_path / "m" / "manifest.json").read_text("utf-8"))
    for layer in manifest["layers"]:
        for blob in layer.get("blob", {}).values():
            raw = (tmp_path / "m" / blob["file"]).read_bytes()
            assert len(raw) == blob["byte_length"]
            assert hashlib.sha256(raw).hexdigest() == blob["sha256"]


def test_corrupt_blob_is_rejected(tmp_path):
    export_container(seeded_model(), tmp_path / "m")
    target = tmp_path / "m" / "blobs" / "conv2.weight.bin"
    raw = bytearray(target.read_bytes())
    raw[0] ^= 0xFF
    target.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        load_container(tmp_path / "m")


def test_export_loads_and_matches_in_inference_stack(tmp_path):
    """The exported container must drop straight into the simulator and
    produce the same float logits as the torch model."""
    from nbsmt.container import load_model
    from nbsmt.engine import ExecutionMode, forward

    model = seeded_model(7)
    export_container(model, tmp_path / "m")
    graph = load_model(tmp_path / "m")
    graph.validate(input_shape=(1, 28, 28))
    assert graph.eligible_layers() == ["conv2", "conv3"]

    rng = np.random.default_rng(0)
    images = rng.random((8, 1, 28, 28)).astype(np.float32)
    got = forward(graph, None, images, ExecutionMode.float32()).logits
    with torch.no_grad():
        x = (torch.from_numpy(images) - MNIST_MEAN[0]) / MNIST_STD[0]
        want = model(x).numpy()
    np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-3)


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, (5, 28, 28)).astype(np.uint8)
    labels = rng.integers(0, 10, 5).astype(np.uint8)
    for compress in (False, True):
        suffix = ".gz" if compress else ""
        ip = tmp_path / f"set{int(compress)}-images-idx3-ubyte{suffix}"
        idx.write_images(ip, images, compress=compress)
        idx.write_labels(idx.labels_path_for(ip), labels, compress=compress)
        assert np.array_equal(idx.read_images(ip), images)
        assert np.array_equal(idx.read_labels(idx.labels_path_for(ip)), labels)
        if compress:
            with gzip.open(ip) as f:
                assert f.read(4) == b"\x00\x00\x08\x03"


def test_labels_path_naming():
    assert idx.labels_path_for(Path("d/train-images-idx3-ubyte.gz")).name \
        == "train-labels-idx1-ubyte.gz"
    assert idx.labels_path_for(Path("d/t10k-images-idx3-ubyte")).name \
        == "t10k-labels-idx1-ubyte"


def test_prune_reaches_fraction_and_spares_exempt_layers():
    model = seeded_model(11)
    before = tensor_state(model)
    _prune_to(model, 0.4)
    sparsity = layer_sparsity(model)
    for name in model.PRUNABLE:
        assert sparsity[name] >= 0.4
        assert sparsity[name] < 0.45  # ceil of the fraction, not far past it
    for name in ("conv1", "fc"):
        assert torch.equal(getattr(model, name).weight, before[f"{name}.weight"])


def test_prune_ties_drop_in_flat_index_order():
    model = seeded_model()
    with torch.no_grad():
        model.conv2.weight.fill_(0.5)
    _prune_to(model, 0.5)
    flat = model.conv2.weight.flatten()
    k = int(np.ceil(0.5 * flat.numel()))
    assert torch.equal(flat[:k], torch.zeros(k))
    assert (flat[k:] != 0).all()


def test_mask_keeps_zeros_through_weight_updates():
    model = seeded_model(5)
    _prune_to(model, 0.4)
    masks = _mask_of(model)
    with torch.no_grad():
        for name in model.PRUNABLE:
            w = getattr(model, name).weight
            w.add_(torch.ones_like(w))  # a gradient step would do this
            w.mul_(masks[name])
    for name, frac in layer_sparsity(model).items():
        assert frac >= 0.4, name


def synthetic_mnist(directory, n, seed=0):
    rng = np.random.default_rng(seed)
    for split, count in (("train", n), ("t10k", max(n // 4, 4))):
        images = rng.integers(0, 256, (count, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, count).astype(np.uint8)
        ip = directory / f"{split}-images-idx3-ubyte.gz"
        idx.write_images(ip, images)
        idx.write_labels(idx.labels_path_for(ip), labels)


def test_training_smoke_with_mask_hook(tmp_path):
    synthetic_mnist(tmp_path, 256)
    model = seeded_model(9)
    _prune_to(model, 0.4)
    masks = _mask_of(model)

    def keep_zeros(m):
        with torch.no_grad():
            for name in m.PRUNABLE:
                getattr(m, name).weight.mul_(masks[name])

    model, top1 = train_model(
        tmp_path, epochs=1, batch_size=64, seed=0, model=model,
        mask_fn=keep_zeros, label_smoothing=0.5, log=lambda *a: None)
    assert 0.0 <= top1 <= 1.0
    for name, frac in layer_sparsity(model).items():
        assert frac >= 0.4, name


def test_shipped_fixtures_meet_their_bars():
    dense = json.loads(
        (REPO / "fixtures" / "deskcnn_mnist" / "manifest.json").read_text("utf-8"))
    pruned = json.loads(
        (REPO / "fixtures" / "deskcnn_mnist_p40" / "manifest.json").read_text("utf-8"))
    assert dense["metadata"]["fp32_top1"] >= 0.985
    meta = pruned["metadata"]
    assert all(v >= 0.40 for v in meta["layer_sparsity"].values())
    assert abs(meta["pruned_top1"] - meta["fp32_top1"]) <= 0.005


def test_pruned_container_blobs_actually_sparse():
    d = REPO / "fixtures" / "deskcnn_mnist_p40" / "blobs"
    for name in ("conv2", "conv3"):
        w = np.frombuffer((d / f"{name}.weight.bin").read_bytes(), "<f4")
        assert (w == 0).mean() >= 0.40
