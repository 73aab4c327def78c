"""Training objectives on logit-difference evidence, with closed-form gradients.

Every function returns ``(loss, grad)`` where ``grad`` is the derivative of
the loss with respect to its evidence input(s).  Evidence is always
``d = l_fake - l_real``; label 1 means fake.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mil import select_topk


class SkipTerm(Exception):
    """Raised when a batch-level term is undefined (e.g. single-class batch)."""


@dataclass(frozen=True)
class FocalParams:
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"focal gamma must be >= 0, got {self.gamma}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"focal alpha must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class LossWeights:
    w_ce: float = 1.0
    w_auc: float = 0.5
    w_mil: float = 0.5
    w_reg: float = 1.0
    reg_lambda: float = 0.01
    auc_margin: float = 1.0

    def __post_init__(self):
        for name in ("w_ce", "w_auc", "w_mil", "w_reg", "reg_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossBreakdown:
    total: float
    terms: dict[str, float]
    grads: list[np.ndarray] = field(default_factory=list)  # per-sample patch-score gradients
    skipped: tuple[str, ...] = ()

    @classmethod
    def combine(cls, terms: dict[str, float], weights: LossWeights, **kw) -> LossBreakdown:
        wmap = {"ce": weights.w_ce, "auc": weights.w_auc, "mil": weights.w_mil, "reg": weights.w_reg}
        total = math.fsum(wmap[k] * v for k, v in terms.items())
        return cls(total, dict(terms), **kw)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def _log_sigmoid(x):
    # log sigma(x) = -softplus(-x)
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def _check_finite(d):
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("evidence must be finite")
    return d


def bce_logit(d, y):
    """Binary cross-entropy on sigma(d); elementwise over arrays."""
    d = _check_finite(d)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * _log_sigmoid(d) + (1.0 - y) * _log_sigmoid(-d))
    grad = sigmoid(d) - y
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def focal_logit(d, y, fp: FocalParams = FocalParams()):
    """Focal loss  -alpha_t (1 - p_t)^gamma log p_t  on evidence d.

    With s = +1 for y=1 and -1 for y=0, p_t = sigma(s d) and the derivative is
    dL/dd = s * alpha_t * (1-p_t)^gamma * (gamma * p_t * log p_t - (1 - p_t)).
    ``1 - p_t`` is evaluated as sigma(-s d) so nothing cancels near p_t -> 1.
    """
    d = _check_finite(d)
    y = np.asarray(y, dtype=np.float64)
    s = 2.0 * y - 1.0
    z = s * d
    log_pt = _log_sigmoid(z)
    pt = sigmoid(z)
    one_m = sigmoid(-z)
    alpha_t = np.where(y > 0.5, fp.alpha, 1.0 - fp.alpha)
    mod = one_m ** fp.gamma
    loss = -alpha_t * mod * log_pt
    grad = s * alpha_t * mod * (fp.gamma * pt * log_pt - one_m)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def auc_pairwise(d_pos, d_neg, margin: float = 1.0):
    """Mean squared hinge over all positive/negative pairs.

    Returns ``(loss, grad_pos, grad_neg)``; raises :class:`SkipTerm` if either
    side is empty.
    """
    d_pos = _check_finite(np.atleast_1d(d_pos))
    d_neg = _check_finite(np.atleast_1d(d_neg))
    if d_pos.size == 0 or d_neg.size == 0:
        raise SkipTerm("pairwise AUC needs at least one positive and one negative")
    gap = np.maximum(0.0, margin - (d_pos[:, None] - d_neg[None, :]))
    npairs = gap.size
    loss = float(np.sum(gap**2) / npairs)
    g = 2.0 * gap / npairs
    return loss, -g.sum(axis=1), g.sum(axis=0)


def mil_patch_loss(selected, y):
    selected = _check_finite(np.atleast_1d(selected))
    if selected.size == 0:
        raise ValueError("MIL loss needs at least one selected patch")
    loss, grad = bce_logit(selected, np.full(selected.shape, float(y)))
    k = selected.size
    return float(np.mean(loss)), grad / k


def reg_collapse(scores, lam: float = 0.01):
    """lam * (mean tanh d)^2: penalises uniform-sign collapse of the score map."""
    scores = _check_finite(np.atleast_1d(scores))
    if scores.size == 0:
        raise ValueError("regulariser needs a non-empty score vector")
    t = np.tanh(scores)
    m = t.mean()
    return float(lam * m * m), 2.0 * lam * m * (1.0 - t * t) / scores.size


def local_loss(scores, labels, rho: float = 0.1, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Combined local-branch objective over a batch of patch-score maps.

    ``scores`` is a sequence of per-image score vectors and ``labels`` the
    image labels.  CE, MIL and the regulariser are averaged over the batch;
    the AUC surrogate is computed once over all positive/negative pairs of
    pooled image scores and dropped when the batch holds a single class.
    The returned gradients are with respect to every patch score.
    """
    scores = [np.asarray(s, dtype=np.float64) for s in scores]
    labels = np.asarray(labels, dtype=np.float64)
    b = len(scores)
    if b == 0 or len(labels) != b:
        raise ValueError("scores and labels must be non-empty and of equal length")
    sels = [select_topk(s, rho) for s in scores]
    d_img = np.array([sel.d_img for sel in sels])
    grads = [np.zeros_like(s) for s in scores]
    ce_vals, ce_g = bce_logit(d_img, labels)
    g_img = weights.w_ce * np.atleast_1d(ce_g) / b

    terms = {"ce": float(np.mean(ce_vals))}
    skipped = ()
    pos, neg = labels > 0.5, labels <= 0.5
    try:
        auc, gp, gn = auc_pairwise(d_img[pos], d_img[neg], weights.auc_margin)
        g_img[pos] += weights.w_auc * gp
        g_img[neg] += weights.w_auc * gn
        terms["auc"] = auc
    except SkipTerm:
        skipped = ("auc",)

    mil_total = reg_total = 0.0
    for i, (s, sel) in enumerate(zip(scores, sels)):
        idx = sel.indices
        grads[i][idx] += g_img[i] / sel.k
        mil, mg = mil_patch_loss(s[idx], labels[i])
        grads[i][idx] += weights.w_mil * mg / b
        reg, rg = reg_collapse(s, weights.reg_lambda)
        grads[i] += weights.w_reg * rg / b
        mil_total += mil
        reg_total += reg
    terms["mil"] = mil_total / b
    terms["reg"] = reg_total / b
    return LossBreakdown.combine(terms, weights, grads=grads, skipped=skipped)
