"""AdamW with global-norm clipping and two learning-rate groups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    lr_backbone: float = 1e-3
    lr_head: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-2
    clip_norm: float = 1.0
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr_backbone <= 0 or self.lr_head <= 0:
            raise ValueError("learning rates must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    grads = np.asarray(grads, dtype=np.float64)
    norm = float(np.sqrt(np.sum(grads * grads)))
    if norm > max_norm:
        return grads * max_norm / norm
    return grads.copy()


def adamw_step(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray,
    cfg: TrainConfig,
    backbone_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, AdamState]:
    """One decoupled-weight-decay Adam update; returns new params and state.

    ``backbone_mask`` marks parameters that use ``lr_backbone``; the rest use
    ``lr_head``.  Without a mask every parameter uses ``lr_head``.
    """
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to adamw_step")
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    g = clip_grad_norm(grads, cfg.clip_norm)
    b1, b2 = cfg.betas
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    if backbone_mask is None:
        lr = cfg.lr_head
    else:
        lr = np.where(backbone_mask, cfg.lr_backbone, cfg.lr_head)
    p = params * (1.0 - lr * cfg.weight_decay)
    p = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return p, AdamState(m, v, t)
