"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ANTH"  u16 version  u32 record_count
    record*: u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], f32 data (row-major)

A model checkpoint stores its flat config text as the byte values of a
``__config__`` record, every parameter under its dotted name, and for each
tensor-chain layer a ``<layer>.__plan__`` record ``[n, a..., c..., b, r_target]``.
Free-form text attached as ``model.metadata`` (the vocabulary, for example) is
kept in ``__meta__.<key>`` records the same way as the config.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .modules import shape_only
from .tc import TCLinear

MAGIC = b"ANTH"
VERSION = 1
CONFIG_KEY = "__config__"
PLAN_SUFFIX = ".__plan__"
META_PREFIX = "__meta__."


def text_record(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def record_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def write_records(path, records: dict[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(records))]
    for name, arr in records.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def read_records(path) -> dict[str, np.ndarray]:
    """Parse every record; any inconsistency raises before anything is returned."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos} (wanted {n} more)")
        out = buf[pos: pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an ANTH checkpoint")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} (expected {VERSION})")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        try:
            name = take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: record name is not UTF-8") from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        if name in records:
            raise CheckpointError(f"{path}: duplicate record {name!r}")
        records[name] = data
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after last record")
    return records


def plan_record(layer: TCLinear) -> np.ndarray:
    p = layer.plan
    return np.array([p.n, *p.a, *p.c, p.b, p.r_target], dtype=np.float32)


def save_checkpoint(model, path) -> None:
    from .model import format_config

    records = {CONFIG_KEY: text_record(format_config(model.config))}
    for key, text in getattr(model, "metadata", {}).items():
        records[META_PREFIX + key] = text_record(text)
    for name, t, _ in model.named_parameters():
        records[name] = t.data
    for name, m in model.modules():
        if isinstance(m, TCLinear):
            records[name + PLAN_SUFFIX] = plan_record(m)
    write_records(path, records)


def load_checkpoint(path):
    """Rebuild the model stored in ``path``; no model is returned on any error."""
    from .model import build, parse_config

    records = read_records(path)
    if CONFIG_KEY not in records:
        raise CheckpointError(f"{path}: missing {CONFIG_KEY} record")
    text = record_text(records.pop(CONFIG_KEY))
    metadata = {k[len(META_PREFIX):]: record_text(records.pop(k))
                for k in list(records) if k.startswith(META_PREFIX)}
    with shape_only():
        model = build(parse_config(text))
    for name, m in model.modules():
        if isinstance(m, TCLinear):
            stored = records.pop(name + PLAN_SUFFIX, None)
            if stored is None or not np.array_equal(stored, plan_record(m)):
                raise CheckpointError(f"{path}: plan metadata for {name} missing or inconsistent")
    params = {name: t for name, t, _ in model.named_parameters()}
    missing = params.keys() - records.keys()
    extra = records.keys() - params.keys()
    if missing or extra:
        raise CheckpointError(f"{path}: missing {sorted(missing)[:5]} / unexpected {sorted(extra)[:5]}")
    for name, t in params.items():
        if records[name].shape != t.shape:
            raise CheckpointError(f"{path}: {name} has shape {records[name].shape}, model wants {t.shape}")
    for name, t in params.items():
        t.data = records[name].copy()
    model.metadata = metadata
    return model
