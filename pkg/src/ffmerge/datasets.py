"""Binary token and label datasets.

Token files carry a 16-byte header (magic ``FFMTOKS1``, little-endian u64
count) followed by that many little-endian u32 token ids. Sequences are
delimited by the reserved separator id recorded in the model config; the
separator itself belongs to no sequence. Classifier datasets add a parallel
label file (magic ``FFMLBLS1``, same layout, one label per sequence).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .checkpoint import atomic_write_bytes

TOKENS_MAGIC = b"FFMTOKS1"
LABELS_MAGIC = b"FFMLBLS1"


@dataclass
class Dataset:
    """Token sequences, with per-sequence labels in classifier settings."""

    sequences: list[np.ndarray]
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.sequences):
            raise ValueError(
                f"{len(self.labels)} labels for {len(self.sequences)} sequences"
            )

    def __len__(self) -> int:
        return len(self.sequences)


def _write_u32_file(path, magic: bytes, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<u4")
    payload = magic + struct.pack("<Q", values.size) + values.tobytes()
    atomic_write_bytes(path, payload)


def _read_u32_file(path, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:8] != magic:
        raise ValueError(f"{path}: not a {magic.decode()} file")
    (count,) = struct.unpack("<Q", data[8:16])
    if len(data) != 16 + 4 * count:
        raise ValueError(f"{path}: expected {count} u32 values, file size is off")
    return np.frombuffer(data, dtype="<u4", offset=16).astype(np.int64)


def write_token_file(path, sequences: list[np.ndarray], separator_id: int) -> None:
    """Flatten sequences into one token stream, separator-delimited."""
    parts = []
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.int64)
        if (seq == separator_id).any():
            raise ValueError("sequence contains the reserved separator id")
        parts.append(seq)
        parts.append(np.array([separator_id], dtype=np.int64))
    flat = np.concatenate(parts) if parts else np.array([], dtype=np.int64)
    _write_u32_file(path, TOKENS_MAGIC, flat)


def read_token_file(path, separator_id: int) -> list[np.ndarray]:
    """Split the token stream at the separator id; empty segments are dropped."""
    flat = _read_u32_file(path, TOKENS_MAGIC)
    sequences = []
    start = 0
    boundaries = list(np.flatnonzero(flat == separator_id)) + [flat.size]
    for b in boundaries:
        if b > start:
            sequences.append(flat[start:b].copy())
        start = b + 1
    return sequences


def write_label_file(path, labels: np.ndarray) -> None:
    _write_u32_file(path, LABELS_MAGIC, np.asarray(labels))


def read_label_file(path) -> np.ndarray:
    return _read_u32_file(path, LABELS_MAGIC)


def label_path_for(token_path) -> str:
    """Conventional sidecar label path: token path with a .lbls suffix."""
    root, _ = os.path.splitext(os.fspath(token_path))
    return root + ".lbls"


def load_dataset(token_path, separator_id: int, label_path=None) -> Dataset:
    sequences = read_token_file(token_path, separator_id)
    labels = read_label_file(label_path) if label_path is not None else None
    return Dataset(sequences=sequences, labels=labels)
