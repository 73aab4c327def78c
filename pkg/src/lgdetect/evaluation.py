"""AUC, video-level pooling, robustness sweeps and failure listings."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .degrade import SeverityLadder, degrade_at_level
from .imaging import to_float, to_uint8

SWEEP_COLUMNS = ["axis", "level", "system", "auc", "n_pos", "n_neg"]
FAILURE_COLUMNS = ["id", "label", "score", "kind"]
VIDEO_FRAMES = 32


class UndefinedMetric(ValueError):
    """AUC requested on a set that lacks one of the classes."""


def _split(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric(f"AUC needs both classes (got {n_pos} positive, {n_neg} negative)")
    return s, y.astype(bool), n_pos, n_neg


def roc_auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC with midranks for ties."""
    s, y, n_pos, n_neg = _split(scores, labels)
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_pairwise(scores, labels) -> float:
    """O(P*N) reference: fraction of (pos, neg) pairs ranked correctly, ties 1/2."""
    s, y, n_pos, n_neg = _split(scores, labels)
    p, n = s[y][:, None], s[~y][None, :]
    wins = np.sum(p > n) + 0.5 * np.sum(p == n)
    return float(wins / (n_pos * n_neg))


def video_frame_indices(n_frames: int, target: int = VIDEO_FRAMES) -> np.ndarray:
    """``target`` evenly spaced indices (rounded half up), or all frames if fewer."""
    if n_frames < 1:
        raise ValueError("video has no frames")
    if n_frames <= target:
        return np.arange(n_frames)
    j = np.arange(target)
    return (2 * j * (n_frames - 1) + (target - 1)) // (2 * (target - 1))


def video_score(frame_probs, target: int = VIDEO_FRAMES) -> float:
    p = np.asarray(frame_probs, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("video has no frames")
    return float(np.mean(p[video_frame_indices(p.size, target)]))


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepReport:
    axis: str
    levels: tuple[float, ...]
    rows: list[dict] = field(default_factory=list)
    seed: int = 0
    n_images: int = 0
    clean: dict[str, float] = field(default_factory=dict)

    def auc(self, system: str, level: float) -> float:
        for r in self.rows:
            if r["system"] == system and r["level"] == level:
                return r["auc"]
        raise KeyError((system, level))

    def write(self, path: str | os.PathLike, note: str = "") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# axis={self.axis} seed={self.seed} images={self.n_images}")
            fh.write(f" {note}\n" if note else "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([r["axis"], repr(r["level"]), r["system"], repr(r["auc"]), r["n_pos"], r["n_neg"]])


def robustness_sweep(systems: dict, images, labels, ladder: SeverityLadder, seed: int = 0) -> SweepReport:
    """Score every system on each ladder level; one degradation op per level.

    ``systems`` maps a name to a callable taking an image stack (or list of
    differently-sized images) and returning one score per image.  Degraded
    images are quantised to 8 bits so all systems see identical bytes; the
    clean condition goes through the same quantisation.  ``seed`` is
    recorded for provenance (the ladder ops themselves draw no randomness).
    """
    labels = np.asarray(labels)
    clean = [to_float(to_uint8(im)) for im in images]
    n_pos = int(np.sum(labels == 1))
    report = SweepReport(ladder.axis, ladder.levels, seed=seed, n_images=len(clean))
    for name in systems:
        report.clean[name] = roc_auc(_score(systems[name], clean), labels)
    for level in ladder.levels:
        degraded = [to_float(to_uint8(degrade_at_level(im, ladder.axis, level))) for im in clean]
        for name in systems:
            auc = roc_auc(_score(systems[name], degraded), labels)
            report.rows.append(
                {"axis": ladder.axis, "level": level, "system": name, "auc": auc, "n_pos": n_pos, "n_neg": len(labels) - n_pos}
            )
    return report


def _score(fn, images):
    shapes = {im.shape for im in images}
    batch = np.stack(images) if len(shapes) == 1 else images
    return np.asarray(fn(batch), dtype=np.float64)


# --------------------------------------------------------------------------
# failure cases


def export_failures(ids, labels, scores, threshold: float = 0.5) -> dict[str, list[tuple]]:
    """False negatives (fake scored below threshold) and false positives.

    Each list is ordered by how confident the mistake is: lowest-scoring
    fakes first, highest-scoring reals first.
    """
    rows = list(zip(ids, (int(y) for y in labels), (float(s) for s in scores)))
    fn = sorted((r for r in rows if r[1] == 1 and r[2] < threshold), key=lambda r: (r[2], r[0]))
    fp = sorted((r for r in rows if r[1] == 0 and r[2] >= threshold), key=lambda r: (-r[2], r[0]))
    return {"false_negative": fn, "false_positive": fp}


def write_failures(path: str | os.PathLike, failures: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FAILURE_COLUMNS)
        for kind in ("false_negative", "false_positive"):
            for i, y, s in failures[kind]:
                w.writerow([i, y, repr(s), kind])
