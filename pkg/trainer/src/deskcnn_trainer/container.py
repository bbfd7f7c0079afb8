"""Writes (and re-reads) the model container consumed by the simulator.

Container = directory with `manifest.json` plus `blobs/*.bin` holding raw
little-endian float32 tensors in row-major order. Each blob entry records
byte length and sha256 so the reader can detect corruption. This writer is
intentionally independent of the simulator's implementation; the JSON/blob
layout is the interface.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from deskcnn_trainer.model import DeskCNN, MNIST_MEAN, MNIST_STD

FORMAT_VERSION = 1


def _blob(out_dir, rel, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite values in tensor {rel}")
    raw = arr.tobytes()
    (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
    (out_dir / rel).write_bytes(raw)
    return {
        "file": rel,
        "byte_length": len(raw),
        "sha256": hashlib.sha256(raw).hexdigest(),
    }


def export_container(model: DeskCNN, out_dir, metadata=None):
    """Serialize a DeskCNN to a container directory and return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model.cpu().eval()

    def t(x):
        return x.detach().numpy()

    layers = []

    def conv_entry(name, mod, exempt):
        w, b = t(mod.weight), t(mod.bias)
        layers.append(
            {
                "kind": "conv2d",
                "name": name,
                "nbsmt_exempt": exempt,
                "stride": mod.stride[0],
                "padding": mod.padding[0],
                "shape": {"weight": list(w.shape), "bias": list(b.shape)},
                "blob": {
                    "weight": _blob(out_dir, f"blobs/{name}.weight.bin", w),
                    "bias": _blob(out_dir, f"blobs/{name}.bias.bin", b),
                },
            }
        )

    def bn_entry(name, mod):
        tensors = {
            "gamma": t(mod.weight),
            "beta": t(mod.bias),
            "running_mean": t(mod.running_mean),
            "running_var": t(mod.running_var),
        }
        layers.append(
            {
                "kind": "batchnorm",
                "name": name,
                "eps": mod.eps,
                "momentum": mod.momentum,
                "shape": {k: list(v.shape) for k, v in tensors.items()},
                "blob": {
                    k: _blob(out_dir, f"blobs/{name}.{k}.bin", v)
                    for k, v in tensors.items()
                },
            }
        )

    conv_entry("conv1", model.conv1, exempt=True)
    bn_entry("bn1", model.bn1)
    layers.append({"kind": "relu", "name": "relu1"})
    conv_entry("conv2", model.conv2, exempt=False)
    bn_entry("bn2", model.bn2)
    layers.append({"kind": "relu", "name": "relu2"})
    layers.append({"kind": "maxpool", "name": "pool1", "kernel": 2, "stride": 2})
    conv_entry("conv3", model.conv3, exempt=False)
    bn_entry("bn3", model.bn3)
    layers.append({"kind": "relu", "name": "relu3"})
    layers.append({"kind": "maxpool", "name": "pool2", "kernel": 2, "stride": 2})

    w, b = t(model.fc.weight), t(model.fc.bias)
    layers.append(
        {
            "kind": "fc",
            "name": "fc",
            "nbsmt_exempt": True,
            "shape": {"weight": list(w.shape), "bias": list(b.shape)},
            "blob": {
                "weight": _blob(out_dir, "blobs/fc.weight.bin", w),
                "bias": _blob(out_dir, "blobs/fc.bias.bin", b),
            },
        }
    )

    manifest = {
        "version": FORMAT_VERSION,
        "arch": "deskcnn",
        "input_norm": {"mean": MNIST_MEAN, "std": MNIST_STD},
        "metadata": metadata or {},
        "layers": layers,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def load_container(container_dir):
    """Rebuild a DeskCNN from a container (for prune/finetune resumption)."""
    container_dir = Path(container_dir)
    manifest = json.loads((container_dir / "manifest.json").read_text("utf-8"))
    tensors = {}
    for layer in manifest["layers"]:
        for key, blob in layer.get("blob", {}).items():
            raw = (container_dir / blob["file"]).read_bytes()
            if len(raw) != blob["byte_length"]:
                raise ValueError(f"{layer['name']}.{key}: blob length mismatch")
            if hashlib.sha256(raw).hexdigest() != blob["sha256"]:
                raise ValueError(f"{layer['name']}.{key}: checksum mismatch")
            arr = np.frombuffer(raw, "<f4").reshape(layer["shape"][key])
            tensors[(layer["name"], key)] = torch.from_numpy(arr.copy())

    model = DeskCNN()
    with torch.no_grad():
        for name in ("conv1", "conv2", "conv3", "fc"):
            getattr(model, name).weight.copy_(tensors[(name, "weight")])
            getattr(model, name).bias.copy_(tensors[(name, "bias")])
        for name in ("bn1", "bn2", "bn3"):
            mod = getattr(model, name)
            mod.weight.copy_(tensors[(name, "gamma")])
            mod.bias.copy_(tensors[(name, "beta")])
            mod.running_mean.copy_(tensors[(name, "running_mean")])
            mod.running_var.copy_(tensors[(name, "running_var")])
    return model, manifest
