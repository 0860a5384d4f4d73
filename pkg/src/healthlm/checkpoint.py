"""Flat binary tensor container.

Layout: 8-byte magic, little-endian u32 format version, u64 header length,
UTF-8 JSON header, then the raw little-endian tensor bytes in header order.
The header lists names, shapes, dtypes and byte offsets together with a
``kind`` tag and free metadata (config, seed, corpus hash). No timestamps are
written, so identical state gives identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointVersionError, DataError, MissingCheckpoint

MAGIC = b"HLMCKPT\x00"
FORMAT_VERSION = 1
KINDS = ("tinylm", "soft_prompt", "mlp_baseline")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def _as_array(t) -> np.ndarray:
    if hasattr(t, "detach"):
        t = t.detach().cpu().numpy()
    arr = np.asarray(t)
    name = arr.dtype.name
    if name not in _DTYPES:
        raise DataError(f"unsupported tensor dtype {name}")
    return np.ascontiguousarray(arr.astype(_DTYPES[name], copy=False))


def header_bytes(kind: str, tensors: dict, meta: dict | None = None) -> bytes:
    if kind not in KINDS:
        raise DataError(f"unknown checkpoint kind {kind!r}")
    entries, offset = [], 0
    for name in tensors:
        arr = _as_array(tensors[name])
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
                        "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = {"format_version": FORMAT_VERSION, "kind": kind, "tensors": entries, "meta": meta or {}}
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_tensors(path, kind: str, tensors: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = header_bytes(kind, tensors, meta)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for name in tensors:
            fh.write(_as_array(tensors[name]).tobytes())
    return path


def read_header(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        return _read_header(fh, path)[0]


def _read_header(fh, path):
    if fh.read(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, length = struct.unpack("<IQ", fh.read(12))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    header = json.loads(fh.read(length).decode("utf-8"))
    return header, len(MAGIC) + 12 + length


def load_tensors(path, kind: str | None = None) -> tuple[dict, dict]:
    """Returns ``(header, {name: ndarray})``; ``kind`` checks the tag."""
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        header, start = _read_header(fh, path)
        blob = fh.read()
    if kind is not None and header["kind"] != kind:
        raise DataError(f"{path}: expected a {kind} checkpoint, found {header['kind']}")
    tensors = {}
    for e in header["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise DataError(f"{path}: truncated tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
    return header, tensors


# --------------------------------------------------------------- helpers

def save_model(path, model, seed: int, corpus_hash: str = "", extra: dict | None = None) -> Path:
    state = model.state_dict()
    meta = {"config": model.config.to_dict(), "seed": seed, "corpus_hash": corpus_hash, **(extra or {})}
    return save_tensors(path, "tinylm", {k: state[k] for k in sorted(state)}, meta)


def load_model(path, freeze: bool = True):
    import torch

    from .lm.model import LmConfig, LmModel

    header, tensors = load_tensors(path, "tinylm")
    model = LmModel(LmConfig(**header["meta"]["config"]))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    model.eval()
    if freeze:
        model.freeze()
    return model, header


def save_soft_prompt(path, prompt, meta: dict | None = None) -> Path:
    return save_tensors(path, "soft_prompt", {"embedding": prompt.embedding}, meta)


def load_soft_prompt(path):
    import torch

    from .lm.model import SoftPrompt

    header, tensors = load_tensors(path, "soft_prompt")
    return SoftPrompt(torch.from_numpy(tensors["embedding"])), header


def save_baseline(path, trained, meta: dict | None = None) -> Path:
    m = trained.model
    tensors = {"norm_mean": trained.normalizer.mean_, "norm_scale": trained.normalizer.scale_,
               "W1": m.W1_, "b1": m.b1_, "W2": m.W2_, "b2": m.b2_}
    info = {"task": trained.task.value, "config": trained.config.to_dict(),
            "classes": [str(c) for c in m.classes_] if trained.is_classifier else None,
            "y_mean": getattr(m, "y_mean_", None), "y_scale": getattr(m, "y_scale_", None), **(meta or {})}
    return save_tensors(path, "mlp_baseline", tensors, info)


def load_baseline(path):
    from .baseline import MlpClassifier, MlpConfig, MlpRegressor, TrainedBaseline, ZScoreNormalizer
    from .tasks import TaskId

    header, t = load_tensors(path, "mlp_baseline")
    meta = header["meta"]
    cfg = MlpConfig(**meta["config"])
    params = dict(hidden_width=cfg.hidden_width, epochs=cfg.epochs, learning_rate=cfg.learning_rate, seed=cfg.seed)
    if meta["classes"] is not None:
        model = MlpClassifier(classes=meta["classes"], **params)
        model.classes_ = np.asarray(meta["classes"], dtype=object)
    else:
        model = MlpRegressor(**params)
        model.y_mean_, model.y_scale_ = meta["y_mean"], meta["y_scale"]
    model.W1_, model.b1_, model.W2_, model.b2_ = t["W1"], t["b1"], t["W2"], t["b2"]
    norm = ZScoreNormalizer()
    norm.mean_, norm.scale_ = t["norm_mean"], t["norm_scale"]
    return TrainedBaseline(TaskId(meta["task"]), norm, model, cfg), header
