"""Checkpoint files: a JSON document holding metadata plus named tensors.

Tensors are stored as flat lists of Python floats. json emits the shortest
repr that round-trips a double, so values survive save/load bit for bit;
no binary sidecar is needed at these sizes.
"""

from __future__ import annotations

import json
import os
from typing import Any

import numpy as np

from .exceptions import CheckpointError

FORMAT_VERSION = 1

__all__ = ["write_checkpoint", "read_checkpoint", "FORMAT_VERSION"]


def _tensor_entry(name: str, arr: np.ndarray) -> dict[str, Any]:
    arr = np.asarray(arr, dtype=np.float64)
    return {"name": name, "shape": list(arr.shape), "data": arr.ravel().tolist()}


def write_checkpoint(path: str, meta: dict[str, Any], tensors: dict[str, np.ndarray]) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": [_tensor_entry(k, v) for k, v in tensors.items()],
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def read_checkpoint(path: str) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {path} ({exc})") from None
    if not isinstance(doc, dict) or "tensors" not in doc or "meta" not in doc:
        raise CheckpointError(f"checkpoint missing required keys: {path}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r}"
        )
    tensors: dict[str, np.ndarray] = {}
    for item in doc["tensors"]:
        try:
            name = item["name"]
            shape = tuple(item["shape"])
            data = np.asarray(item["data"], dtype=np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed tensor entry in {path}: {exc}") from None
        tensors[name] = data
    return doc["meta"], tensors
