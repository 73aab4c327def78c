"""Evidence fusion across ensemble members, plus flip test-time augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import hflip
from .losses import sigmoid

STRATEGIES = ("logit", "probability", "majority")


@dataclass(frozen=True)
class Evidence:
    model_id: str
    d: float

    def __post_init__(self):
        if not math.isfinite(self.d):
            raise ValueError(f"evidence for {self.model_id!r} is not finite")


@dataclass(frozen=True)
class EnsembleConfig:
    members: tuple[str, ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble has no models")
        if len(set(self.members)) != len(self.members):
            raise ValueError("duplicate ensemble member ids")
        if not self.weights:
            m = len(self.members)
            object.__setattr__(self, "weights", tuple(1.0 / m for _ in self.members))
        if len(self.weights) != len(self.members):
            raise ValueError("one weight per member required")
        if any(w < 0 for w in self.weights) or not math.isclose(math.fsum(self.weights), 1.0, abs_tol=1e-9):
            raise ValueError(f"weights must be non-negative and sum to 1, got {self.weights}")

    @classmethod
    def uniform(cls, members) -> EnsembleConfig:
        return cls(tuple(members))

    def weight_of(self) -> dict[str, float]:
        return dict(zip(self.members, self.weights))


@dataclass(frozen=True)
class FusedPrediction:
    d_bar: float
    p: float
    per_model: dict[str, float] = field(default_factory=dict)


def _aligned(evidence, cfg: EnsembleConfig | None):
    evidence = list(evidence)
    if not evidence:
        raise ValueError("no models to fuse")
    by_id = {e.model_id: e.d for e in evidence}
    if len(by_id) != len(evidence):
        raise ValueError("duplicate model ids in evidence list")
    if cfg is None:
        cfg = EnsembleConfig.uniform(sorted(by_id))
    missing = [m for m in cfg.members if m not in by_id]
    if missing:
        raise ValueError(f"missing evidence for members {missing}")
    # fixed member-id order keeps the floating-point sum order-independent
    order = sorted(cfg.members)
    w = cfg.weight_of()
    return order, np.array([by_id[m] for m in order]), np.array([w[m] for m in order])


def fuse_logits(evidence, cfg: EnsembleConfig | None = None) -> FusedPrediction:
    order, d, w = _aligned(evidence, cfg)
    d_bar = math.fsum(w * d)
    return FusedPrediction(d_bar, sigmoid(d_bar), dict(zip(order, d.tolist())))


def fuse_probabilities(evidence, cfg: EnsembleConfig | None = None) -> float:
    _, d, w = _aligned(evidence, cfg)
    return math.fsum(w * sigmoid(d))


def majority_vote(evidence, threshold: float = 0.0) -> tuple[int, bool]:
    """Returns ``(decision, tie)``; each model votes fake iff ``d > threshold``.

    An exact tie is resolved toward real.
    """
    d = np.array([e.d for e in evidence])
    if d.size == 0:
        raise ValueError("no models to vote")
    fake = int(np.sum(d > threshold))
    real = d.size - fake
    if fake == real:
        return 0, True
    return int(fake > real), False


def fuse(evidence, strategy: str, cfg: EnsembleConfig | None = None) -> float:
    """Scalar score for a strategy: probability for logit/probability fusion,
    the 0/1 decision for majority voting."""
    if strategy == "logit":
        return fuse_logits(evidence, cfg).p
    if strategy == "probability":
        return fuse_probabilities(evidence, cfg)
    if strategy == "majority":
        if cfg is not None:
            keep = set(cfg.members)
            evidence = [e for e in evidence if e.model_id in keep]
        return float(majority_vote(evidence)[0])
    raise ValueError(f"unknown fusion strategy {strategy!r}; expected one of {STRATEGIES}")


def tta_flip(forward, img, model_id: str = "") -> Evidence:
    """Average evidence of the image and its mirror, before any sigmoid.

    ``forward`` maps an image to its evidence ``l_fake - l_real``.
    """
    return Evidence(model_id, 0.5 * (float(forward(img)) + float(forward(hflip(img)))))
