"""Shared model persistence: versioned JSON with decimal float arrays.

All trained artifacts (denoiser, recognizer, agents) are saved as a single
JSON document: a ``format`` version tag, a ``kind`` string, hyperparameters,
and weight arrays stored row-major as lists of decimal floats.  Python's
float repr is shortest-round-trip, so load(save(m)) reproduces every
parameter bit-for-bit on the same platform.
"""
import json

import numpy as np

from .errors import PersistFormatError

FORMAT_VERSION = 1


def array_to_json(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def array_from_json(obj):
    try:
        shape = obj["shape"]
        data = obj["data"]
    except (TypeError, KeyError) as e:
        raise PersistFormatError(f"bad array record: {e}") from e
    a = np.array(data, dtype=np.float64)
    expected = int(np.prod(shape)) if shape else 1
    if a.size != expected:
        raise PersistFormatError("array length does not match declared shape")
    return a.reshape(shape)


def save_document(path, kind, payload):
    doc = {"format": FORMAT_VERSION, "kind": kind, **payload}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_document(path, kind):
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise PersistFormatError(f"{path}: not a valid model file: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_VERSION:
        raise PersistFormatError(
            f"{path}: unsupported format tag {doc.get('format') if isinstance(doc, dict) else doc!r}"
        )
    if doc.get("kind") != kind:
        raise PersistFormatError(f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}")
    return doc
