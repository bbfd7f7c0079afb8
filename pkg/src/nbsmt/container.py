"""On-disk model container: manifest.json plus raw float32 blobs.

A container is a directory:

    manifest.json        UTF-8 JSON (schema below)
    blobs/<name>.bin     raw little-endian float32, row-major

Manifest fields: `version`, `arch`, `input_norm` {mean, std},
`metadata`, and `layers[]`, each layer carrying `kind`, `name`, the
geometry fields for its kind (stride/padding, kernel, eps/momentum), an
optional `nbsmt_exempt` flag, and for tensor-bearing kinds parallel
`shape` and `blob` tables where every blob records file, byte_length and
sha256. Errors on load name the offending layer index.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from nbsmt.graph import (
    BatchNorm,
    Conv2d,
    FullyConnected,
    GraphError,
    LayerGraph,
    MaxPool,
    ReLU,
)

FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def _load_blob(root, index, layer, key):
    try:
        shape = layer["shape"][key]
        blob = layer["blob"][key]
    except KeyError as e:
        raise ContainerError(f"layer {index}: missing {e} for tensor '{key}'") from None
    path = root / blob["file"]
    if not path.is_file():
        raise ContainerError(f"layer {index}: blob file {blob['file']} missing")
    raw = path.read_bytes()
    if len(raw) != blob["byte_length"]:
        raise ContainerError(
            f"layer {index}: {key} blob is {len(raw)} bytes, "
            f"manifest says {blob['byte_length']}"
        )
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ContainerError(
            f"layer {index}: {key} blob holds {len(raw) // 4} floats, "
            f"shape {shape} needs {expected // 4}"
        )
    if hashlib.sha256(raw).hexdigest() != blob["sha256"]:
        raise ContainerError(f"layer {index}: {key} blob checksum mismatch")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return np.ascontiguousarray(arr, dtype=np.float32)


def load_model(path):
    """Read and validate a model container; returns a LayerGraph."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ContainerError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise ContainerError(f"malformed manifest: {e}") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {manifest.get('version')}")

    layers = []
    for i, spec in enumerate(manifest.get("layers", [])):
        kind = spec.get("kind")
        name = spec.get("name")
        if not name:
            raise ContainerError(f"layer {i}: missing name")
        if kind == "conv2d":
            layers.append(
                Conv2d(
                    name=name,
                    weight=_load_blob(root, i, spec, "weight"),
                    bias=_load_blob(root, i, spec, "bias"),
                    stride=int(spec.get("stride", 1)),
                    padding=int(spec.get("padding", 0)),
                    nbsmt_exempt=bool(spec.get("nbsmt_exempt", False)),
                )
            )
        elif kind == "batchnorm":
            layers.append(
                BatchNorm(
                    name=name,
                    gamma=_load_blob(root, i, spec, "gamma"),
                    beta=_load_blob(root, i, spec, "beta"),
                    running_mean=_load_blob(root, i, spec, "running_mean"),
                    running_var=_load_blob(root, i, spec, "running_var"),
                    eps=float(spec.get("eps", 1e-5)),
                    momentum=float(spec.get("momentum", 0.1)),
                )
            )
        elif kind == "relu":
            layers.append(ReLU(name=name))
        elif kind == "maxpool":
            layers.append(
                MaxPool(name=name, kernel=int(spec.get("kernel", 2)),
                        stride=int(spec.get("stride", 2)))
            )
        elif kind == "fc":
            layers.append(
                FullyConnected(
                    name=name,
                    weight=_load_blob(root, i, spec, "weight"),
                    bias=_load_blob(root, i, spec, "bias"),
                    nbsmt_exempt=bool(spec.get("nbsmt_exempt", True)),
                )
            )
        else:
            raise ContainerError(f"layer {i}: unknown kind {kind!r}")

    norm = manifest.get("input_norm", {"mean": [0.0], "std": [1.0]})
    metadata = dict(manifest.get("metadata", {}))
    metadata.setdefault("arch", manifest.get("arch", "custom"))
    graph = LayerGraph(layers=layers, input_norm=norm, metadata=metadata)
    try:
        graph.validate()
    except GraphError as e:
        raise ContainerError(str(e)) from None
    return graph


def _tensor_map(layer):
    if layer.kind in ("conv2d", "fc"):
        return {"weight": layer.weight, "bias": layer.bias}
    if layer.kind == "batchnorm":
        return {
            "gamma": layer.gamma,
            "beta": layer.beta,
            "running_mean": layer.running_mean,
            "running_var": layer.running_var,
        }
    return {}


def save_model(graph, path, arch="custom"):
    """Write a LayerGraph as a container; load_model(save_model(g)) == g."""
    graph.validate()
    root = Path(path)
    (root / "blobs").mkdir(parents=True, exist_ok=True)

    entries = []
    for layer in graph.layers:
        entry = {"kind": layer.kind, "name": layer.name}
        if layer.kind == "conv2d":
            entry.update(stride=layer.stride, padding=layer.padding,
                         nbsmt_exempt=layer.nbsmt_exempt)
        elif layer.kind == "batchnorm":
            entry.update(eps=layer.eps, momentum=layer.momentum)
        elif layer.kind == "maxpool":
            entry.update(kernel=layer.kernel, stride=layer.stride)
        elif layer.kind == "fc":
            entry.update(nbsmt_exempt=layer.nbsmt_exempt)

        tensors = _tensor_map(layer)
        if tensors:
            entry["shape"] = {}
            entry["blob"] = {}
            for key, arr in tensors.items():
                arr = np.ascontiguousarray(arr, dtype="<f4")
                if not np.isfinite(arr).all():
                    raise ContainerError(
                        f"layer {layer.name}: non-finite values in {key}"
                    )
                rel = f"blobs/{layer.name}.{key}.bin"
                raw = arr.tobytes()
                (root / rel).write_bytes(raw)
                entry["shape"][key] = list(arr.shape)
                entry["blob"][key] = {
                    "file": rel,
                    "byte_length": len(raw),
                    "sha256": hashlib.sha256(raw).hexdigest(),
                }
        entries.append(entry)

    manifest = {
        "version": FORMAT_VERSION,
        "arch": graph.metadata.get("arch", arch),
        "input_norm": graph.input_norm,
        "metadata": {k: v for k, v in graph.metadata.items() if k != "arch"},
        "layers": entries,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
