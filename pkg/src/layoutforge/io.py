"""File formats: JSON-lines records, binary checkpoints, atomic writes.

Network checkpoints (``LFNN1``)::

    b"LFNN1" | u32 config length | config JSON (utf-8)
    | u32 tensor count | per tensor: u16 name length, name,
      u8 ndim, ndim x u32 dims, row-major little-endian float32 data

Codebooks (``LFVQ1``)::

    b"LFVQ1" | u32 K | u32 d | u32 n_f | K*d float32 | K x u64 usage counts
"""

from __future__ import annotations

import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import SCHEMA, Instruction, Layout, SemanticGraph
from .errors import ValidationError

NN_MAGIC = b"LFNN1"
VQ_MAGIC = b"LFVQ1"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to a sibling temp file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --------------------------------------------------------------------------
# JSON-lines


def write_jsonl(path, records: Iterable[dict]) -> None:
    lines = []
    for r in records:
        r = dict(r)
        r.setdefault("schema", SCHEMA)
        lines.append(dumps_json(r))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_jsonl(path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("schema") != SCHEMA:
                raise ValidationError(f"{path}:{n}: expected schema {SCHEMA!r}, got {rec.get('schema')!r}")
            yield rec


def sample_record(layout: Layout, graph: SemanticGraph | None = None, instruction: Instruction | None = None, **extra) -> dict:
    rec = {"layout": layout.to_dict()}
    if graph is not None:
        rec["graph"] = graph.to_dict()
    if instruction is not None:
        rec["instruction"] = instruction.to_dict()
    rec.update(extra)
    return rec


def parse_sample(rec: dict) -> tuple:
    layout = Layout.from_dict(rec["layout"])
    graph = SemanticGraph.from_dict(rec["graph"]) if "graph" in rec else None
    instr = Instruction.from_dict(rec["instruction"]) if "instruction" in rec else None
    return layout, graph, instr


# --------------------------------------------------------------------------
# network checkpoints


def encode_checkpoint(config: dict, tensors: dict) -> bytes:
    buf = _io.BytesIO()
    cfg = dumps_json(config).encode("utf-8")
    buf.write(NN_MAGIC)
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")  # keeps 0-d shapes
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> tuple[dict, dict]:
    if data[:5] != NN_MAGIC:
        raise ValidationError("not an LFNN1 checkpoint")
    off = 5
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    config = json.loads(data[off : off + n].decode("utf-8"))
    off += n
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    return config, tensors


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    atomic_write_bytes(path, encode_checkpoint(config, tensors))


def load_checkpoint(path) -> tuple[dict, dict]:
    return decode_checkpoint(Path(path).read_bytes())


# --------------------------------------------------------------------------
# codebooks


def encode_codebook(entries: np.ndarray, usage: np.ndarray, n_f: int) -> bytes:
    entries = np.ascontiguousarray(np.asarray(entries, dtype="<f4"))
    K, d = entries.shape
    usage = np.asarray(usage, dtype="<u8").reshape(K)
    return VQ_MAGIC + struct.pack("<III", K, d, n_f) + entries.tobytes() + usage.tobytes()


def decode_codebook(data: bytes) -> tuple[np.ndarray, np.ndarray, int]:
    if data[:5] != VQ_MAGIC:
        raise ValidationError("not an LFVQ1 codebook")
    K, d, n_f = struct.unpack_from("<III", data, 5)
    off = 17
    entries = np.frombuffer(data, dtype="<f4", count=K * d, offset=off).reshape(K, d).copy()
    usage = np.frombuffer(data, dtype="<u8", count=K, offset=off + 4 * K * d).copy()
    return entries, usage, n_f
