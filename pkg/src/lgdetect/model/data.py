"""Manifests, weighted sampling and the external logits table."""

from __future__ import annotations

import csv
import math
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..imaging import load_ppm, to_float

MANIFEST_HEADER = ["path", "label", "source", "weight"]
LOGITS_HEADER = ["model_id", "image_id", "l_real", "l_fake"]


class FormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class Record:
    path: str
    label: int
    source: str = ""
    weight: float = 1.0

    @property
    def image_id(self) -> str:
        return Path(self.path).stem


def inverse_frequency_weights(labels) -> list[float]:
    """Weight each record by 1 / (count of its class)."""
    counts = Counter(int(y) for y in labels)
    return [1.0 / counts[int(y)] for y in labels]


def read_manifest(path: str | os.PathLike) -> list[Record]:
    records, seen = [], set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise FormatError(f"manifest header must be {','.join(MANIFEST_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"expected 4 fields, got {len(row)}", lineno)
            p, label, source, weight = row
            if label not in ("0", "1"):
                raise FormatError(f"label must be 0 or 1, got {label!r}", lineno)
            try:
                w = float(weight)
            except ValueError:
                raise FormatError(f"non-numeric weight {weight!r}", lineno) from None
            if not (w > 0 and math.isfinite(w)):
                raise FormatError(f"weight must be positive, got {weight}", lineno)
            if p in seen:
                raise FormatError(f"duplicate path {p!r}", lineno)
            seen.add(p)
            records.append(Record(p, int(label), source, w))
    return records


def write_manifest(path: str | os.PathLike, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.path, r.label, r.source, repr(float(r.weight))])


def weighted_sample(records, batch_size: int, seed) -> np.ndarray:
    """Indices drawn with replacement, probability proportional to weight."""
    if len(records) == 0:
        raise ValueError("cannot sample from an empty manifest")
    w = np.array([r.weight if isinstance(r, Record) else float(r) for r in records], dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("sampling weights must be positive")
    rng = np.random.default_rng(seed)
    return rng.choice(len(w), size=batch_size, replace=True, p=w / w.sum())


@dataclass
class LabeledImages:
    """In-memory image stack with labels, ids and sampling weights."""

    images: np.ndarray  # (n, H, W, C) float64
    labels: np.ndarray
    ids: list[str]
    weights: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> LabeledImages:
        idx = np.asarray(idx)
        return LabeledImages(self.images[idx], self.labels[idx], [self.ids[i] for i in idx], self.weights[idx])

    @classmethod
    def from_manifest(cls, path: str | os.PathLike) -> LabeledImages:
        base = Path(path).parent
        records = read_manifest(path)
        imgs = [to_float(load_ppm(base / r.path)) for r in records]
        return cls(
            np.stack(imgs) if imgs else np.zeros((0, 1, 1, 3)),
            np.array([r.label for r in records], dtype=np.int64),
            [r.image_id for r in records],
            np.array([r.weight for r in records]),
        )


# --------------------------------------------------------------------------
# logits files


@dataclass(frozen=True)
class LogitRow:
    model_id: str
    image_id: str
    l_real: float
    l_fake: float

    @property
    def evidence(self) -> float:
        return self.l_fake - self.l_real


class LogitsTable:
    def __init__(self, rows=()):
        self.rows: list[LogitRow] = []
        self._index: dict[tuple[str, str], LogitRow] = {}
        for r in rows:
            self.add(r)

    def add(self, row: LogitRow, line: int | None = None):
        key = (row.model_id, row.image_id)
        if key in self._index:
            raise FormatError(f"duplicate entry for model {row.model_id!r}, image {row.image_id!r}", line)
        self._index[key] = row
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def models(self) -> list[str]:
        return sorted({r.model_id for r in self.rows})

    def evidence(self, model_id: str) -> dict[str, float]:
        return {r.image_id: r.evidence for r in self.rows if r.model_id == model_id}

    def merge(self, other: LogitsTable) -> LogitsTable:
        return LogitsTable([*self.rows, *other.rows])


def load_external_logits(path: str | os.PathLike) -> LogitsTable:
    table = LogitsTable()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return table
        if header != LOGITS_HEADER:
            raise FormatError(f"logits header must be {','.join(LOGITS_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 or not row[0] or not row[1]:
                raise FormatError("expected fields model_id,image_id,l_real,l_fake", lineno)
            try:
                lr, lf = float(row[2]), float(row[3])
            except ValueError:
                raise FormatError(f"non-numeric logit in {row[2:]!r}", lineno) from None
            if not (math.isfinite(lr) and math.isfinite(lf)):
                raise FormatError("logits must be finite", lineno)
            table.add(LogitRow(row[0], row[1], lr, lf), lineno)
    return table


def write_logits(path: str | os.PathLike, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOGITS_HEADER)
        for r in rows:
            w.writerow([r.model_id, r.image_id, repr(float(r.l_real)), repr(float(r.l_fake))])
