"""Tiny patch encoder with a per-patch head and a pooled two-layer head.

Architecture (``D = P*P*C``)::

    patch x (D) -> centre -> W1 (D->F) -> ReLU -> W2 (F->F)          = feature (F)
    feature     -> Wp (F->2)                               = per-patch logits
    mean_n feature -> Wg1 (F->256) -> ReLU -> Dropout -> Wg2 (256->2) = image logits

``centre`` is a fixed, parameter-free stage: each patch has its per-channel
mean removed and is multiplied by ``input_gain``, so the encoder sees
texture rather than the patch's average colour.

Parameters live in one flat float64 vector; :meth:`TinyNet.views` exposes
named reshaped views into it.  Logit index 0 is ``l_real``, index 1 is
``l_fake``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import batch_patches
from ..mil import PatchScores

BACKBONE = ("enc.W1", "enc.b1", "enc.W2", "enc.b2")


@dataclass(frozen=True)
class TinyNet:
    patch_size: int = 8
    channels: int = 3
    features: int = 64
    hidden: int = 256
    dropout: float = 0.1
    input_gain: float = 10.0

    @property
    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        d, f, h = self.patch_size**2 * self.channels, self.features, self.hidden
        return [
            ("enc.W1", (d, f)),
            ("enc.b1", (f,)),
            ("enc.W2", (f, f)),
            ("enc.b2", (f,)),
            ("patch.W", (f, 2)),
            ("patch.b", (2,)),
            ("head.W1", (f, h)),
            ("head.b1", (h,)),
            ("head.W2", (h, 2)),
            ("head.b2", (2,)),
        ]

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout)

    def segments(self) -> list[tuple[str, tuple[int, ...], int]]:
        out, off = [], 0
        for name, shape in self.layout:
            out.append((name, shape, off))
            off += int(np.prod(shape))
        return out

    def views(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        if theta.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got shape {theta.shape}")
        return {n: theta[o : o + int(np.prod(s))].reshape(s) for n, s, o in self.segments()}

    def backbone_mask(self) -> np.ndarray:
        """True for encoder parameters, False for head parameters."""
        mask = np.zeros(self.size, dtype=bool)
        for n, s, o in self.segments():
            if n in BACKBONE:
                mask[o : o + int(np.prod(s))] = True
        return mask

    def init(self, seed: int) -> np.ndarray:
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.size)
        p = self.views(theta)
        for name, shape in self.layout:
            if len(shape) == 2:
                p[name][...] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        return theta

    # ------------------------------------------------------------------
    # batched forward / backward

    def _encode(self, p, images):
        x = batch_patches(np.asarray(images, dtype=np.float64), self.patch_size)
        b, n, d = x.shape
        c = self.channels
        x = x.reshape(b, n, d // c, c)
        x = (x - x.mean(axis=2, keepdims=True)) * self.input_gain
        x2 = x.reshape(b * n, d)
        z1 = x2 @ p["enc.W1"] + p["enc.b1"]
        h1 = np.maximum(z1, 0.0)
        feat = h1 @ p["enc.W2"] + p["enc.b2"]
        return feat.reshape(b, n, -1), {"x": x2, "z1": z1, "h1": h1, "shape": (b, n)}

    def _encode_backward(self, p, g, cache, dfeat):
        b, n = cache["shape"]
        dfeat = dfeat.reshape(b * n, -1)
        g["enc.W2"] += cache["h1"].T @ dfeat
        g["enc.b2"] += dfeat.sum(axis=0)
        dz1 = (dfeat @ p["enc.W2"].T) * (cache["z1"] > 0)
        g["enc.W1"] += cache["x"].T @ dz1
        g["enc.b1"] += dz1.sum(axis=0)

    def local_logits(self, theta, images):
        """Per-patch logits ``(B, N, 2)`` and a cache for :meth:`local_backward`."""
        p = self.views(theta)
        feat, cache = self._encode(p, images)
        cache["feat"] = feat
        return feat @ p["patch.W"] + p["patch.b"], cache

    def local_backward(self, theta, cache, dlogits) -> np.ndarray:
        p = self.views(theta)
        grad = np.zeros(self.size)
        g = self.views(grad)
        feat = cache["feat"]
        f = feat.shape[-1]
        g["patch.W"] += feat.reshape(-1, f).T @ dlogits.reshape(-1, 2)
        g["patch.b"] += dlogits.reshape(-1, 2).sum(axis=0)
        self._encode_backward(p, g, cache, dlogits @ p["patch.W"].T)
        return grad

    def dropout_mask(self, batch: int, seed) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(key=_philox_key(seed)))
        keep = rng.random((batch, self.hidden)) >= self.dropout
        return keep / (1.0 - self.dropout)

    def global_logits(self, theta, images, train_mode: bool = False, dropout_seed=0):
        p = self.views(theta)
        feat, cache = self._encode(p, images)
        pooled = feat.mean(axis=1)
        z2 = pooled @ p["head.W1"] + p["head.b1"]
        h2 = np.maximum(z2, 0.0)
        mask = self.dropout_mask(len(pooled), dropout_seed) if train_mode and self.dropout > 0 else None
        if mask is not None:
            h2 = h2 * mask
        out = h2 @ p["head.W2"] + p["head.b2"]
        cache.update(pooled=pooled, z2=z2, h2=h2, mask=mask)
        return out, cache

    def global_backward(self, theta, cache, dlogits) -> np.ndarray:
        p = self.views(theta)
        grad = np.zeros(self.size)
        g = self.views(grad)
        g["head.W2"] += cache["h2"].T @ dlogits
        g["head.b2"] += dlogits.sum(axis=0)
        dh2 = dlogits @ p["head.W2"].T
        if cache["mask"] is not None:
            dh2 = dh2 * cache["mask"]
        dz2 = dh2 * (cache["z2"] > 0)
        g["head.W1"] += cache["pooled"].T @ dz2
        g["head.b1"] += dz2.sum(axis=0)
        b, n = cache["shape"]
        dpooled = dz2 @ p["head.W1"].T
        dfeat = np.broadcast_to(dpooled[:, None, :] / n, (b, n, dpooled.shape[1]))
        self._encode_backward(p, g, cache, dfeat)
        return grad


def _philox_key(seed) -> np.ndarray:
    state = np.random.SeedSequence(seed if np.ndim(seed) == 0 else list(seed)).generate_state(2, np.uint64)
    return state


def forward_global(net: TinyNet, theta, img, train_mode: bool = False, dropout_seed=0) -> tuple[float, float]:
    """Image logits ``(l_real, l_fake)`` for a single ``(H, W, C)`` image."""
    img = np.asarray(img, dtype=np.float64)
    _check_res(net, img)
    out, _ = net.global_logits(theta, img[None], train_mode, dropout_seed)
    return float(out[0, 0]), float(out[0, 1])


def forward_local(net: TinyNet, theta, img, train_mode: bool = False, dropout_seed=0) -> PatchScores:
    """Per-patch evidence ``d_i = l_fake - l_real`` for one image.

    The per-patch path has no stochastic layers; ``train_mode`` and
    ``dropout_seed`` are accepted for symmetry with :func:`forward_global`.
    """
    img = np.asarray(img, dtype=np.float64)
    _check_res(net, img)
    logits, _ = net.local_logits(theta, img[None])
    d = logits[0, :, 1] - logits[0, :, 0]
    p = net.patch_size
    return PatchScores(d, (img.shape[0] // p, img.shape[1] // p))


def _check_res(net: TinyNet, img):
    h, w = img.shape[:2]
    if h % net.patch_size or w % net.patch_size:
        raise ValueError(f"resolution {h}x{w} is not a multiple of patch size {net.patch_size}")
