from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from errors import FormatError, ValidationError

MAGIC = b"EMBF"
TEXT_HEADER = "emb v1"
HEADER_BYTES = 12


@dataclass
class EmbeddingMatrix:
    """
    n x d table of vectors keyed by contiguous ids of one id space
    ("users", "items", or a parameter name for checkpoints).
    """

    values: np.ndarray
    id_space: str = "items"

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.ndim != 2:
            raise FormatError(f"embedding matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"{self.id_space} embeddings contain non-finite entries")
        self.values = values

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])

    def check_rows(self, n: int) -> None:
        if self.n != n:
            raise FormatError(f"{self.id_space} embeddings have {self.n} rows, expected {n}")


def _is_binary_path(path: str) -> bool:
    return not path.endswith(".txt")


def save_embeddings(m: EmbeddingMatrix, path: str, fmt: Optional[str] = None) -> None:
    """
    Write the matrix at 32-bit precision. `fmt` is "binary" or "text";
    by default files ending in .txt are text and everything else binary.
    """
    fmt = fmt or ("binary" if _is_binary_path(path) else "text")
    values = np.ascontiguousarray(m.values, dtype="<f4")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if fmt == "binary":
        header = np.array([m.n, m.d], dtype="<u4").tobytes()
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(header)
            f.write(values.tobytes(order="C"))
    elif fmt == "text":
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{TEXT_HEADER} {m.n} {m.d}\n")
            for row in values:
                # 9 significant digits round-trip every float32 exactly
                f.write(" ".join("%.9g" % x for x in row) + "\n")
    else:
        raise FormatError(f"unknown embedding format {fmt!r}")


def _load_binary(blob: bytes, path: str) -> np.ndarray:
    if len(blob) < HEADER_BYTES:
        raise FormatError(f"{path}: truncated header")
    n, d = (int(x) for x in np.frombuffer(blob[4:HEADER_BYTES], dtype="<u4"))
    expected = HEADER_BYTES + 4 * n * d
    if len(blob) != expected:
        raise FormatError(f"{path}: header declares {n}x{d} ({expected} bytes), file has {len(blob)} bytes")
    return np.frombuffer(blob[HEADER_BYTES:], dtype="<f4").reshape(n, d).astype(np.float32)


def _load_text(blob: bytes, path: str) -> np.ndarray:
    lines = [line for line in blob.decode("utf-8").splitlines() if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty embedding file")
    header = lines[0].split()
    if len(header) != 4 or " ".join(header[:2]) != TEXT_HEADER:
        raise FormatError(f"{path}: expected header '{TEXT_HEADER} <n> <d>', got {lines[0]!r}")
    try:
        n, d = int(header[2]), int(header[3])
    except ValueError:
        raise FormatError(f"{path}: non-integer shape in header {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != n:
        raise FormatError(f"{path}: header declares {n} rows, found {len(rows)}")
    values = np.empty((n, d), dtype=np.float32)
    for r, line in enumerate(rows):
        tokens = line.split()
        if len(tokens) != d:
            raise FormatError(f"{path}: row {r} has {len(tokens)} values, expected {d}")
        try:
            values[r] = np.array(tokens, dtype=np.float32)
        except ValueError:
            raise FormatError(f"{path}: row {r} contains a non-numeric value") from None
    return values


def load_embeddings(path: str, id_space: str = "items") -> EmbeddingMatrix:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] == MAGIC:
        values = _load_binary(blob, path)
    else:
        values = _load_text(blob, path)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: embedding file contains NaN or infinite entries")
    return EmbeddingMatrix(values=values, id_space=id_space)


def read_row_ids(path: str) -> List[str]:
    """One raw id per line, naming the rows of an embedding file in order."""
    with open(path, "r", encoding="utf-8") as f:
        ids = [line.rstrip("\n") for line in f if line.strip()]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate row ids")
    return ids


def align_rows(m: EmbeddingMatrix, row_ids: Sequence[str], raw_ids: Sequence[str]) -> EmbeddingMatrix:
    """Reorder rows labelled `row_ids` to follow `raw_ids`, the contiguous id order of a dataset."""
    if len(row_ids) != m.n:
        raise FormatError(f"{len(row_ids)} row ids for a matrix with {m.n} rows")
    position = {raw: row for row, raw in enumerate(row_ids)}
    missing = [raw for raw in raw_ids if raw not in position]
    if missing:
        raise ValidationError(f"{len(missing)} ids have no vector, first: {missing[0]!r}")
    order = np.array([position[raw] for raw in raw_ids], dtype=np.int64)
    return EmbeddingMatrix(values=m.values[order], id_space=m.id_space)
