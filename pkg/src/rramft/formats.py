"""Plain-text file formats.

Tensor file::

    # dims R C
    v11 v12 ... v1C
    ...

Values use 17 significant digits, so float64 tensors round-trip exactly.
Index files hold one decimal column index per line.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Dataset
from .prune import GatedLayer, GatedNetwork
from .quant import QuantizedLayer


def _fmt(v: float) -> str:
    s = format(float(v), ".17g")
    return "0" if s == "-0" else s


def dumps_tensor(a) -> str:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"tensor files hold 1-D or 2-D data, got shape {a.shape}")
    rows, cols = a.shape
    lines = [f"# dims {rows} {cols}"]
    lines += [" ".join(_fmt(v) for v in row) for row in a]
    return "\n".join(lines) + "\n"


def loads_tensor(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty tensor file")
    head = lines[0].split()
    if head[:2] != ["#", "dims"] or len(head) != 4:
        raise ValueError(f"bad tensor header {lines[0]!r}; expected '# dims R C'")
    rows, cols = int(head[2]), int(head[3])
    body = lines[1:]
    if len(body) != rows:
        raise ValueError(f"header says {rows} rows, found {len(body)}")
    out = np.empty((rows, cols), dtype=np.float64)
    for i, ln in enumerate(body):
        vals = ln.split()
        if len(vals) != cols:
            raise ValueError(f"row {i} has {len(vals)} values, expected {cols}")
        out[i] = [float(v) for v in vals]
    return out


def save_tensor(path, a) -> None:
    Path(path).write_text(dumps_tensor(a))


def load_tensor(path) -> np.ndarray:
    return loads_tensor(Path(path).read_text())


def load_vector(path) -> np.ndarray:
    a = load_tensor(path)
    if a.shape[0] != 1:
        raise ValueError(f"{path}: expected a single-row tensor, got {a.shape}")
    return a[0]


def save_index(path, index) -> None:
    Path(path).write_text("".join(f"{int(j)}\n" for j in index))


def load_index(path) -> list[int]:
    return [int(ln) for ln in Path(path).read_text().split()]


# key = value files ---------------------------------------------------------

def dumps_kv(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def loads_kv(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {n}: empty key")
        out[key] = value
    return out


# datasets and models -------------------------------------------------------

_SPLITS = ("train_x", "train_y", "test_x", "test_y")


def save_dataset(dirpath, data: Dataset) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for name in _SPLITS:
        save_tensor(d / f"{name}.txt", getattr(data, name))


def load_dataset(dirpath) -> Dataset:
    d = Path(dirpath)
    missing = [n for n in _SPLITS if not (d / f"{n}.txt").exists()]
    if missing:
        raise FileNotFoundError(f"dataset {d} lacks {', '.join(missing)}")
    arrs = {n: load_tensor(d / f"{n}.txt") for n in _SPLITS}
    return Dataset(arrs["train_x"], arrs["train_y"][0].astype(np.int64),
                   arrs["test_x"], arrs["test_y"][0].astype(np.int64))


def save_model(dirpath, net: GatedNetwork) -> None:
    """Gated network as tensors plus a ``model.cfg`` manifest and one pruned
    index file per layer."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"layers": len(net.layers)}
    for k, layer in enumerate(net.layers):
        manifest[f"layer.{k}.axis"] = layer.axis
        manifest[f"layer.{k}.prunable"] = str(layer.prunable).lower()
        save_tensor(d / f"layer{k}_W.txt", layer.W)
        save_tensor(d / f"layer{k}_b.txt", layer.b)
        save_tensor(d / f"layer{k}_gates.txt", layer.gates)
        save_index(d / f"layer{k}_pruned.txt", layer.pruned_index())
    (d / "model.cfg").write_text(dumps_kv(manifest))


def load_model(dirpath) -> GatedNetwork:
    d = Path(dirpath)
    if not (d / "model.cfg").exists():
        raise FileNotFoundError(f"{d} has no model.cfg")
    manifest = loads_kv((d / "model.cfg").read_text())
    layers = []
    for k in range(int(manifest["layers"])):
        layers.append(GatedLayer(
            load_tensor(d / f"layer{k}_W.txt"),
            load_vector(d / f"layer{k}_b.txt"),
            load_vector(d / f"layer{k}_gates.txt"),
            manifest.get(f"layer.{k}.axis", "column"),
            manifest.get(f"layer.{k}.prunable", "true") == "true",
        ))
    return GatedNetwork(layers)


def save_quantized(dirpath, layers: list[QuantizedLayer]) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"layers": len(layers)}
    for k, ql in enumerate(layers):
        manifest[f"layer.{k}.bits"] = ql.bits
        manifest[f"layer.{k}.q"] = _fmt(ql.q)
        save_tensor(d / f"layer{k}_sign.txt", ql.sign)
        for p, plane in enumerate(ql.planes):
            save_tensor(d / f"layer{k}_plane{p}.txt", plane)
    (d / "quant.cfg").write_text(dumps_kv(manifest))


def load_quantized(dirpath) -> list[QuantizedLayer]:
    d = Path(dirpath)
    if not (d / "quant.cfg").exists():
        raise FileNotFoundError(f"{d} has no quant.cfg")
    manifest = loads_kv((d / "quant.cfg").read_text())
    out = []
    for k in range(int(manifest["layers"])):
        bits = int(manifest[f"layer.{k}.bits"])
        sign = load_tensor(d / f"layer{k}_sign.txt").astype(np.int8)
        planes = np.stack([load_tensor(d / f"layer{k}_plane{p}.txt") for p in range(bits)])
        out.append(QuantizedLayer(float(manifest[f"layer.{k}.q"]), sign, planes.astype(np.uint8)))
    return out
