"""Self-describing JSON documents shared by every model kind.

Arrays are stored as base64 of little-endian float64 bytes with their shape,
so a load/save cycle reproduces the file byte for byte.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

FORMAT = "nemomap"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def encode_array(a) -> dict:
    arr = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"dtype": "<f8", "shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise FormatError(f"unsupported dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def make_document(kind: str, body: dict) -> dict:
    return {"format": FORMAT, "version": FORMAT_VERSION, "type": kind, **body}


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_document(doc: dict, path) -> None:
    Path(path).write_text(dumps(doc))


def load_document(path, expect: str | None = None) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise FormatError(f"{path}: not a {FORMAT} document")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')}")
    if expect is not None and doc.get("type") != expect:
        raise FormatError(f"{path}: expected type {expect!r}, found {doc.get('type')!r}")
    return doc
