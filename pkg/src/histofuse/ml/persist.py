"""Versioned JSON model files.

Every file is a JSON object with ``format``, ``version`` and ``kind``
header keys followed by the model payload.  Floats are written with
``repr`` precision, so a round trip is exact.
"""
from __future__ import annotations

import json

from ..errors import ModelFormatError

FORMAT = "histofuse-model"
VERSION = 1

_REGISTRY: dict[str, type] = {}


def register(kind: str):
    def deco(cls):
        _REGISTRY[kind] = cls
        cls.model_kind = kind
        return cls

    return deco


def dumps_model(model) -> str:
    kind = getattr(model, "model_kind", None)
    if kind is None or kind not in _REGISTRY:
        raise ModelFormatError(f"cannot serialise objects of type {type(model).__name__}")
    doc = {"format": FORMAT, "version": VERSION, "kind": kind, "model": model.to_dict()}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads_model(text: str, expected_kind: str | None = None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError("missing or wrong model file header")
    if doc.get("version") != VERSION:
        raise ModelFormatError(
            f"model file version {doc.get('version')!r} is not supported (expected {VERSION})"
        )
    kind = doc.get("kind")
    if kind not in _REGISTRY:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise ModelFormatError(f"expected a {expected_kind!r} model, found {kind!r}")
    try:
        return _REGISTRY[kind].from_dict(doc["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed {kind} model: {exc}") from None


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_model(model))


def load_model(path, expected_kind: str | None = None):
    with open(path) as fh:
        return loads_model(fh.read(), expected_kind)
