"""Model specs, the training loop and batched inference."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..degrade import apply_degradation, sample_policy
from ..evaluation import UndefinedMetric, roc_auc
from ..imaging import preprocess
from ..mil import select_topk
from .checkpoint import Checkpoint, load_checkpoint
from .data import LabeledImages, weighted_sample
from .network import TinyNet
from .objective import TrainingDivergence, backward
from .optim import AdamState, TrainConfig, adamw_step

log = logging.getLogger(__name__)

SCHEDULES = {"global": ("focal", "ce", "ce_then_focal"), "local": ("local_combo",)}
CE_FRACTION = 0.2


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    branch: str = "global"
    train_res: int = 64
    infer_res: int = 64
    patch_size: int = 8
    tta_flip: bool = False
    loss: str = "focal"
    init: str = "fresh"  # or a checkpoint path
    rho: float = 0.1
    features: int = 64

    def __post_init__(self):
        if self.branch not in SCHEDULES:
            raise ValueError(f"branch must be 'global' or 'local', got {self.branch!r}")
        if self.loss not in SCHEDULES[self.branch]:
            raise ValueError(f"loss {self.loss!r} is not valid for the {self.branch} branch")
        for name in ("train_res", "infer_res"):
            r = getattr(self, name)
            if r < self.patch_size or r % self.patch_size:
                raise ValueError(f"{name}={r} must be a positive multiple of patch_size={self.patch_size}")
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")

    def to_dict(self) -> dict:
        return asdict(self)


def switch_step(total_steps: int) -> int:
    """Last step (1-based) trained with cross-entropy under ce_then_focal."""
    return math.ceil(CE_FRACTION * total_steps)


def loss_for_step(schedule: str, step: int, total_steps: int) -> str:
    if schedule == "ce_then_focal":
        return "ce" if step <= switch_step(total_steps) else "focal"
    return schedule


def _seed_int(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def _prepare(images, res: int) -> np.ndarray:
    if images.shape[1:3] == (res, res):
        return np.asarray(images, dtype=np.float64)
    return np.stack([preprocess(im, res) for im in images])


def train(
    spec: ModelSpec,
    cfg: TrainConfig,
    data: LabeledImages,
    val: LabeledImages | None = None,
    policy: str = "none",
    base_dir=None,
) -> Checkpoint:
    """Train one model; returns the best checkpoint by validation AUC.

    With ``policy="random"`` every sampled image gets its own random
    degradation chain seeded from ``(cfg.seed, step, slot)``.  If no
    validation set is given the final parameters are returned.  A relative
    ``spec.init`` checkpoint path is looked up under ``base_dir``; with
    ``cfg.epochs == 0`` the initial parameters are returned unchanged.
    """
    if policy not in ("none", "random"):
        raise ValueError(f"unknown degradation policy {policy!r}")
    channels = data.images.shape[-1]
    net = TinyNet(patch_size=spec.patch_size, channels=channels, features=spec.features)
    if spec.init == "fresh":
        theta = net.init(cfg.seed)
    else:
        path = Path(spec.init)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        src = load_checkpoint(path)
        if src.net != net:
            raise ValueError(f"checkpoint {spec.init} has architecture {src.net}, expected {net}")
        theta = src.theta.copy()
    mask = net.backbone_mask()
    state = AdamState.zeros(net.size)
    base = None if policy == "random" else _prepare(data.images, spec.train_res)
    val_x = _prepare(val.images, spec.train_res) if val is not None else None

    n = len(data)
    spe = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * spe
    meta = {"total_steps": total, "steps_per_epoch": spe, "policy": policy, "history": []}
    if spec.loss == "ce_then_focal":
        meta["switch_step"] = switch_step(total)
    best = Checkpoint(net, theta.copy(), spec.to_dict(), {**meta, "best_epoch": 0, "best_val_auc": None})
    best_auc = -math.inf
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = weighted_sample(data.weights, spe * cfg.batch_size, [cfg.seed, epoch])
        losses = []
        for s in range(spe):
            step += 1
            idx = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            if base is None:
                x = np.stack(
                    [
                        preprocess(apply_degradation(data.images[i], sample_policy(_seed_int(cfg.seed, step, j))), spec.train_res)
                        for j, i in enumerate(idx)
                    ]
                )
            else:
                x = base[idx]
            kind = loss_for_step(spec.loss, step, total)
            try:
                loss, grad, _ = backward(
                    net, theta, x, data.labels[idx], kind, rho=spec.rho, train_mode=True, dropout_seed=[cfg.seed, step]
                )
            except TrainingDivergence as exc:
                exc.checkpoint = best
                raise
            theta, state = adamw_step(state, theta, grad, cfg, mask)
            losses.append(loss)
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "val_auc": None}
        if val_x is not None:
            d = evidence(net, theta, spec, val_x, res=spec.train_res, tta=False)
            try:
                record["val_auc"] = roc_auc(d, val.labels)
            except UndefinedMetric:
                pass
        meta["history"].append(record)
        log.info("%s epoch %d loss %.5f val_auc %s", spec.model_id, epoch, record["loss"], record["val_auc"])
        score = record["val_auc"] if record["val_auc"] is not None else -math.inf
        if val_x is None or score > best_auc:
            best_auc = score
            best = Checkpoint(
                net, theta.copy(), spec.to_dict(), {**meta, "best_epoch": epoch, "best_val_auc": record["val_auc"]}
            )
    best.meta = {**best.meta, "history": meta["history"]}
    return best


# --------------------------------------------------------------------------
# inference


def predict_logits(net: TinyNet, theta, spec: ModelSpec, images, res: int | None = None, tta: bool | None = None, chunk: int = 256):
    """Image-level ``(l_real, l_fake)`` logits, shape ``(B, 2)``.

    Local models report the mean of the per-patch logits over the top-k set,
    so that ``l_fake - l_real`` equals the pooled patch evidence.  With flip
    TTA the logits of the original and mirrored views are averaged.
    """
    res = spec.infer_res if res is None else res
    tta = spec.tta_flip if tta is None else tta
    x = _prepare(np.asarray(images), res)
    views = [x, x[:, :, ::-1]] if tta else [x]
    out = np.zeros((len(x), 2))
    for v in views:
        for a in range(0, len(v), chunk):
            out[a : a + chunk] += _logits(net, theta, spec, v[a : a + chunk])
    return out / len(views)


def _logits(net, theta, spec, x):
    if spec.branch == "global":
        out, _ = net.global_logits(theta, x, train_mode=False)
        return out
    pl, _ = net.local_logits(theta, x)
    d = pl[..., 1] - pl[..., 0]
    res = np.empty((len(x), 2))
    for b in range(len(x)):
        sel = select_topk(d[b], spec.rho)
        res[b] = pl[b, sel.indices].mean(axis=0)
    return res


def evidence(net, theta, spec, images, res=None, tta=None) -> np.ndarray:
    lg = predict_logits(net, theta, spec, images, res, tta)
    return lg[:, 1] - lg[:, 0]
