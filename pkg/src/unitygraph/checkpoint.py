"""Single-file checkpoint archive.

The archive is a zip holding ``manifest.json`` and ``payload.bin``. Every
tensor is stored raw and little-endian in the payload; the manifest maps its
name to dtype, shape and byte offset, alongside the run config, epoch and
RNG state. Writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .errors import DataError, ShapeMismatchError

FORMAT_VERSION = 1
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.uint8: "u1",
    torch.bool: "u1",
}
_TORCH_DTYPES = {"<f4": torch.float32, "<f8": torch.float64, "<i8": torch.int64, "u1": torch.uint8}


class CheckpointError(DataError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    model_state: Dict[str, torch.Tensor]
    config: dict
    epoch: int = 0
    step: int = 0
    optimizer_state: Optional[dict] = None
    rng_state: dict = field(default_factory=dict)

    def save(self, path) -> Path:
        return save_checkpoint(self, path)

    @staticmethod
    def load(path) -> "Checkpoint":
        return load_checkpoint(path)


class _Payload:
    def __init__(self):
        self.buf = io.BytesIO()
        self.entries: Dict[str, dict] = {}

    def add(self, name: str, t: torch.Tensor) -> None:
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise TypeError(f"unsupported tensor dtype {t.dtype} for {name}")
        code = _DTYPES[t.dtype]
        arr = t.to(torch.uint8).numpy() if t.dtype == torch.bool else t.numpy()
        data = arr.astype(code, copy=False).tobytes(order="C")
        self.entries[name] = {"dtype": code, "shape": list(t.shape), "offset": self.buf.tell(),
                              "nbytes": len(data)}
        if t.dtype == torch.bool:
            self.entries[name]["bool"] = True
        self.buf.write(data)


def _split_optimizer(state: dict, payload: _Payload) -> dict:
    """Move optimizer tensors into the payload; return the JSON skeleton."""
    per_param = {}
    for idx, slots in state["state"].items():
        entry = {}
        for key, val in slots.items():
            if torch.is_tensor(val):
                name = f"optimizer/{idx}/{key}"
                payload.add(name, val)
                entry[key] = {"tensor": name}
            else:
                entry[key] = {"value": val}
        per_param[str(idx)] = entry
    return {"state": per_param, "param_groups": state["param_groups"]}


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    payload = _Payload()
    for name, t in ckpt.model_state.items():
        payload.add(f"model/{name}", t)
    optim = _split_optimizer(ckpt.optimizer_state, payload) if ckpt.optimizer_state else None
    rng = dict(ckpt.rng_state)
    if "torch" in rng:
        payload.add("rng/torch", rng.pop("torch"))
        rng["torch"] = {"tensor": "rng/torch"}
    manifest = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "tensors": payload.entries,
        "optimizer": optim,
        "rng": rng,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            with zipfile.ZipFile(fh, "w", compression=zipfile.ZIP_STORED) as zf:
                zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
                zf.writestr("payload.bin", payload.buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read_tensor(payload: bytes, meta: dict) -> torch.Tensor:
    start, n = meta["offset"], meta["nbytes"]
    if start + n > len(payload):
        raise CheckpointError("payload is truncated")
    arr = np.frombuffer(payload, dtype=np.dtype(meta["dtype"]), count=n // np.dtype(meta["dtype"]).itemsize,
                        offset=start).reshape(meta["shape"])
    t = torch.from_numpy(arr.copy())
    return t.bool() if meta.get("bool") else t


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            payload = zf.read("payload.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint archive ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    tensors = {name: _read_tensor(payload, meta) for name, meta in manifest["tensors"].items()}
    model_state = {name[len("model/"):]: t for name, t in tensors.items() if name.startswith("model/")}
    optim = None
    if manifest.get("optimizer"):
        state = {}
        for idx, slots in manifest["optimizer"]["state"].items():
            state[int(idx)] = {k: tensors[v["tensor"]] if "tensor" in v else v["value"]
                               for k, v in slots.items()}
        optim = {"state": state, "param_groups": manifest["optimizer"]["param_groups"]}
    rng = dict(manifest.get("rng") or {})
    if "torch" in rng:
        rng["torch"] = tensors[rng["torch"]["tensor"]]
    return Checkpoint(model_state, manifest["config"], manifest.get("epoch", 0), manifest.get("step", 0),
                      optim, rng)


def check_compatible(ckpt: Checkpoint, joints: int) -> None:
    want = ckpt.config.get("J")
    if want is not None and want != joints:
        raise ShapeMismatchError(f"checkpoint was trained with J={want} joints, data has J={joints}")
