"""Named-parameter checkpoints: a flat binary blob plus a JSON index."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "foasscv-checkpoint"
VERSION = 1


def _paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    """Write ``<path>.bin`` (little-endian, concatenated) and ``<path>.json``
    mapping each name to its shape, dtype, byte offset and size."""
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    index, offset = {}, 0
    with open(bin_path, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            dtype = arr.dtype.newbyteorder("<")
            raw = arr.astype(dtype).tobytes()
            fh.write(raw)
            index[name] = {"shape": list(arr.shape), "dtype": dtype.str,
                           "offset": offset, "nbytes": len(raw)}
            offset += len(raw)
    doc = {"format": FORMAT, "version": VERSION, "tensors": index,
           "meta": meta or {}}
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(tensors, meta)`` from a checkpoint written by :func:`save_checkpoint`."""
    bin_path, json_path = _paths(path)
    doc = json.loads(json_path.read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{json_path}: not a {FORMAT} index")
    if doc.get("version") != VERSION:
        raise ValueError(f"{json_path}: unsupported checkpoint version {doc.get('version')}")
    raw = bin_path.read_bytes()
    tensors = {}
    for name, entry in doc["tensors"].items():
        end = entry["offset"] + entry["nbytes"]
        if end > len(raw):
            raise ValueError(f"{bin_path}: truncated at tensor {name!r}")
        arr = np.frombuffer(raw[entry["offset"]:end], dtype=np.dtype(entry["dtype"]))
        tensors[name] = arr.reshape(entry["shape"]).copy()
    return tensors, doc["meta"]
