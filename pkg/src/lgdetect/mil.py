"""Top-k multiple-instance pooling of patch scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PatchScores:
    scores: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1 or s.size != self.grid[0] * self.grid[1] or s.size < 1:
            raise ValueError(f"{s.size} scores do not fill a {self.grid} grid")
        if not np.all(np.isfinite(s)):
            raise ValueError("patch scores must be finite")
        object.__setattr__(self, "scores", s)

    def as_map(self) -> np.ndarray:
        return self.scores.reshape(self.grid)


@dataclass(frozen=True)
class MilSelection:
    indices: np.ndarray
    k: int
    rho: float
    d_img: float
    n: int


def topk_count(n: int, rho: float) -> int:
    """k = max(1, floor(rho * n)), exact for ratios like 0.1."""
    # guard against products like 0.7 * 90 = 62.999...
    k = math.floor(round(rho * n, 9))
    return max(1, min(n, k))


def select_topk(scores, rho: float = 0.1) -> MilSelection:
    """Select the k highest scores (lowest index first on ties) and average them."""
    if isinstance(scores, PatchScores):
        scores = scores.scores
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("select_topk needs a non-empty 1-D score vector")
    if not 0 < rho <= 1:
        raise ValueError(f"selection ratio must lie in (0, 1], got {rho}")
    k = topk_count(s.size, rho)
    # stable sort on -s keeps lower indices first among equal scores
    idx = np.argsort(-s, kind="stable")[:k]
    return MilSelection(idx, k, float(rho), float(np.mean(s[idx])), s.size)


def topk_backward(selection: MilSelection, upstream_grad: float) -> np.ndarray:
    idx = selection.indices
    if idx.size and (idx.min() < 0 or idx.max() >= selection.n):
        raise IndexError("selection indices fall outside the score vector")
    g = np.zeros(selection.n)
    g[idx] = upstream_grad / selection.k
    return g
