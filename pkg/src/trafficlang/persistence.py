"""Checkpoint and metrics file formats.

A checkpoint is a text header followed by raw parameter blocks::

    NTLC1
    meta <n>
    <n bytes of indented JSON>
    param <name> <d0>x<d1>... <nbytes>
    <nbytes of little-endian float32>
    ...
    end

Parameters appear in sorted-name order.  The JSON metadata carries the
architecture, the full model config, the class order, the creation seed
and the vocabulary, so a checkpoint alone is enough for inference.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CheckpointError
from .language import Vocabulary
from .models import Model, ModelConfig, build_model
from .traffic import CLASSES

MAGIC = b"NTLC1\n"
TOOLKIT = "trafficlang"
_F32 = np.dtype("<f4")


def _shape_text(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(d) for d in text.split("x"))


def checkpoint_bytes(model: Model, vocab: Vocabulary | None = None, extra: dict | None = None) -> bytes:
    meta = {
        "architecture": model.config.architecture,
        "config": model.config.to_dict(),
        "classes": list(CLASSES),
        "seed": model.config.seed,
        "vocab_size": model.vocab_size,
        "vocabulary": None if vocab is None else [list(row) for row in vocab.table()],
        "toolkit": {"name": TOOLKIT, "version": __version__},
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, indent=1, sort_keys=True).encode()
    parts = [MAGIC, f"meta {len(meta_bytes)}\n".encode(), meta_bytes, b"\n"]
    for name in sorted(model.params):
        data = np.ascontiguousarray(model.params[name].data, dtype=_F32)
        raw = data.tobytes()
        parts += [f"param {name} {_shape_text(data.shape)} {len(raw)}\n".encode(), raw, b"\n"]
    parts.append(b"end\n")
    return b"".join(parts)


def save_checkpoint(path, model: Model, vocab: Vocabulary | None = None, extra: dict | None = None):
    Path(path).write_bytes(checkpoint_bytes(model, vocab, extra))


def _read_line(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("truncated checkpoint")
    return buf[pos:end].decode("ascii", errors="replace"), end + 1


def parse_checkpoint(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not buf.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = len(MAGIC)
    line, pos = _read_line(buf, pos)
    key, _, size = line.partition(" ")
    if key != "meta" or not size.isdigit():
        raise CheckpointError("missing metadata block")
    meta_end = pos + int(size)
    try:
        meta = json.loads(buf[pos:meta_end].decode())
    except ValueError as exc:
        raise CheckpointError(f"unreadable metadata: {exc}") from None
    pos = meta_end + 1
    params = {}
    while True:
        line, pos = _read_line(buf, pos)
        if line == "end":
            break
        fields = line.split(" ")
        if len(fields) != 4 or fields[0] != "param":
            raise CheckpointError(f"bad parameter header {line!r}")
        _, name, shape_text, nbytes = fields
        try:
            shape = _parse_shape(shape_text)
            nbytes = int(nbytes)
        except ValueError:
            raise CheckpointError(f"bad parameter header {line!r}") from None
        if nbytes != math.prod(shape) * _F32.itemsize:
            raise CheckpointError(f"{name}: shape {shape} does not match {nbytes} stored bytes")
        if pos + nbytes + 1 > len(buf):
            raise CheckpointError(f"{name}: truncated data")
        params[name] = np.frombuffer(buf, dtype=_F32, count=math.prod(shape), offset=pos).reshape(shape).copy()
        pos += nbytes + 1
    if pos != len(buf):
        raise CheckpointError("trailing bytes after end marker")
    return meta, params


def load_checkpoint(path) -> tuple[Model, Vocabulary | None, dict]:
    """Rebuild the model; raises CheckpointError on any inconsistency."""
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} not found") from None
    meta, params = parse_checkpoint(buf)
    if meta.get("classes") != list(CLASSES):
        raise CheckpointError("checkpoint class order differs from this toolkit")
    try:
        config = ModelConfig.from_dict(meta["config"])
        model = build_model(config, meta["vocab_size"])
        model.load_state(params)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit its architecture: {exc}") from None
    vocab = None
    if meta.get("vocabulary") is not None:
        vocab = Vocabulary({w: f for w, _, f in meta["vocabulary"]})
        if [list(r) for r in vocab.table()] != meta["vocabulary"]:
            raise CheckpointError("stored vocabulary ids are inconsistent")
    return model, vocab, meta


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, frozenset):
        return sorted(obj)
    return obj


def metrics_document(payload: dict, config: dict | None = None) -> dict:
    return {
        "toolkit": {"name": TOOLKIT, "version": __version__},
        "config": _clean(config or {}),
        "classes": list(CLASSES),
        "results": _clean(payload),
    }


def metrics_bytes(payload: dict, config: dict | None = None) -> bytes:
    """Deterministic JSON: sorted keys, shortest round-trip float repr."""
    return (json.dumps(metrics_document(payload, config), indent=1, sort_keys=True, allow_nan=False) + "\n").encode()


def write_metrics(path, payload: dict, config: dict | None = None) -> bytes:
    data = metrics_bytes(payload, config)
    Path(path).write_bytes(data)
    return data


def read_metrics(path) -> dict:
    return json.loads(Path(path).read_text())
