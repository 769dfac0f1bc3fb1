"""On-disk formats.

EMB1 matrix file::

    EMB1 <rows> <dim> <f32|f64>\\n
    <rows * dim little-endian floats, row-major>

Pairs file: one ``query_id<TAB>item_id`` line per ground-truth edge.
History file: one ``epoch<TAB>loss<TAB>lr`` line per epoch.
Every writer goes through a temp file in the target directory and an atomic
rename.
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedcore import EmbeddingSet, PairIndex

MAGIC = "EMB1"
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class FormatError(OSError):
    """A file exists but does not parse."""


def atomic_write(path, data: bytes):
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


def encode_matrix(m: np.ndarray, dtype: str = "f64") -> bytes:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("EMB1 stores 2-D matrices only")
    if dtype not in DTYPES:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
    header = f"{MAGIC} {m.shape[0]} {m.shape[1]} {dtype}\n".encode("ascii")
    return header + np.ascontiguousarray(m, dtype=DTYPES[dtype]).tobytes()


def decode_matrix(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{name}: missing EMB1 header line")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 4 or parts[0] != MAGIC or parts[3] not in DTYPES:
        raise FormatError(f"{name}: bad EMB1 header {raw[:nl]!r}")
    try:
        rows, dim = int(parts[1]), int(parts[2])
    except ValueError:
        raise FormatError(f"{name}: non-integer shape in header") from None
    dt = DTYPES[parts[3]]
    body = raw[nl + 1 :]
    if rows < 0 or dim < 0 or len(body) != rows * dim * dt.itemsize:
        raise FormatError(f"{name}: expected {rows}x{dim} {parts[3]} payload, got {len(body)} bytes")
    return np.frombuffer(body, dtype=dt).reshape(rows, dim).astype(np.float64)


def write_matrix(path, m: np.ndarray, dtype: str = "f64"):
    atomic_write(path, encode_matrix(m, dtype))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes(), str(path))


def write_embeddings(path, e: EmbeddingSet, dtype: str = "f64"):
    write_matrix(path, e.data, dtype)


def read_embeddings(path) -> EmbeddingSet:
    """Row ``r`` of the file gets id ``str(r)``."""
    m = read_matrix(path)
    try:
        return EmbeddingSet.from_array(m)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def encode_pairs(pairs: PairIndex) -> bytes:
    return "".join(f"{q}\t{i}\n" for q, i in pairs.edges()).encode("ascii")


def write_pairs(path, pairs: PairIndex):
    atomic_write(path, encode_pairs(pairs))


def read_pairs(path, queries: EmbeddingSet, items: EmbeddingSet) -> PairIndex:
    """Parse a pairs file against the ids of the two embedding sets.

    Raises FormatError on malformed lines and IndexError on ids that name
    no row.
    """
    qpos = {qid: k for k, qid in enumerate(queries.ids)}
    ipos = {iid: k for k, iid in enumerate(items.ids)}
    edges = []
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected query_id<TAB>item_id")
        q, i = fields
        if q not in qpos:
            raise IndexError(f"{path}:{lineno}: unknown query id {q!r}")
        if i not in ipos:
            raise IndexError(f"{path}:{lineno}: unknown item id {i!r}")
        edges.append((qpos[q], ipos[i]))
    return PairIndex.from_pairs(edges, queries.n, items.n)


def encode_history(losses: Sequence[float], lrs: Sequence[float]) -> bytes:
    return "".join(f"{e}\t{float(v)!r}\t{float(lr)!r}\n" for e, (v, lr) in enumerate(zip(losses, lrs))).encode("ascii")


def read_history(path) -> list[tuple[int, float, float]]:
    out = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        e, v, lr = line.split("\t")
        out.append((int(e), float(v), float(lr)))
    return out
