"""Batch loss and full-parameter gradient for both branches."""

from __future__ import annotations

import math

import numpy as np

from ..losses import FocalParams, LossWeights, bce_logit, focal_logit, local_loss
from .network import TinyNet

LOSS_KINDS = ("ce", "focal", "local_combo")


class TrainingDivergence(RuntimeError):
    """Loss or gradient became non-finite."""


def backward(
    net: TinyNet,
    theta: np.ndarray,
    images: np.ndarray,
    labels,
    loss_kind: str,
    *,
    rho: float = 0.1,
    train_mode: bool = False,
    dropout_seed=0,
    focal: FocalParams = FocalParams(),
    weights: LossWeights = LossWeights(),
) -> tuple[float, np.ndarray, dict]:
    """Return ``(loss, grad, info)`` for one batch.

    ``ce`` and ``focal`` train the pooled global head on the image evidence
    ``l_fake - l_real`` (mean over the batch); ``local_combo`` trains the
    per-patch head through top-k pooling with the combined local objective.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}; expected one of {LOSS_KINDS}")
    with np.errstate(over="ignore", invalid="ignore"):
        if loss_kind == "local_combo":
            logits, cache = net.local_logits(theta, images)
        else:
            logits, cache = net.global_logits(theta, images, train_mode, dropout_seed)
        d = logits[..., 1] - logits[..., 0]
    if not np.all(np.isfinite(d)):
        raise TrainingDivergence("non-finite logits in forward pass")
    if loss_kind == "local_combo":
        bd = local_loss(list(d), labels, rho, weights)
        loss = bd.total
        gd = np.stack(bd.grads)
        dlogits = np.stack([-gd, gd], axis=-1)
        grad = net.local_backward(theta, cache, dlogits)
        info = {"terms": bd.terms, "skipped": bd.skipped}
    else:
        if loss_kind == "ce":
            vals, gd = bce_logit(d, labels)
        else:
            vals, gd = focal_logit(d, labels, focal)
        b = len(d)
        loss = float(np.mean(vals))
        gd = np.asarray(gd) / b
        grad = net.global_backward(theta, cache, np.stack([-gd, gd], axis=-1))
        info = {"terms": {loss_kind: loss}, "skipped": ()}
    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingDivergence(f"non-finite loss ({loss}) or gradient")
    return loss, grad, info
