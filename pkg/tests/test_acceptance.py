"""Acceptance suite: one test per criterion, each printed as a pass/fail line.

Criteria 4, 5 and 7 train real (tiny) models and take a few minutes in total.
"""

import csv
import filecmp
import importlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import central_diff, rel_err
from lgdetect.cli import main
from lgdetect.degrade import AXES, jpeg_quantize, ladder_default
from lgdetect.evaluation import robustness_sweep, roc_auc, roc_auc_pairwise
from lgdetect.losses import (
    FocalParams,
    auc_pairwise,
    bce_logit,
    focal_logit,
    local_loss,
    mil_patch_loss,
    reg_collapse,
    sigmoid,
)
from lgdetect.mil import select_topk, topk_count
from lgdetect.model import (
    AdamState,
    ModelSpec,
    TinyNet,
    TrainConfig,
    adamw_step,
    backward,
    clip_grad_norm,
    evidence,
    train,
)
from lgdetect.synthdata import SynthConfig, make_split

FD_TOL = 1e-4
N_POINTS = 100


def _assert_fd(analytic, f, x, h=1e-6):
    err = rel_err(analytic, central_diff(f, x, h))
    assert err < FD_TOL, err
    return err


# ---------------------------------------------------------------- 1


def _topk_margin(s, rho):
    srt = np.sort(s)[::-1]
    k = topk_count(s.size, rho)
    return np.inf if k == s.size else srt[k - 1] - srt[k]


@pytest.mark.criterion(1, "gradient correctness (finite differences)")
def test_criterion_1_gradients(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(N_POINTS):
        d = rng.uniform(-6, 6, 12)
        y = rng.integers(0, 2, 12).astype(float)
        note("bce", _assert_fd(bce_logit(d, y)[1], lambda v: bce_logit(v, y)[0].sum(), d))
        fp = FocalParams(gamma=float(rng.uniform(0, 4)), alpha=float(rng.uniform(0.05, 1)))
        note("focal", _assert_fd(focal_logit(d, y, fp)[1], lambda v: focal_logit(v, y, fp)[0].sum(), d))

        dp, dn = rng.normal(0, 1.5, 5), rng.normal(0, 1.5, 6)
        _, gp, gn = auc_pairwise(dp, dn)
        note("auc", _assert_fd(np.concatenate([gp, gn]), lambda v: auc_pairwise(v[:5], v[5:])[0], np.concatenate([dp, dn])))

        sel = rng.normal(0, 3, 7)
        yy = int(rng.integers(0, 2))
        note("mil", _assert_fd(mil_patch_loss(sel, yy)[1], lambda v: mil_patch_loss(v, yy)[0], sel))
        note("reg", _assert_fd(reg_collapse(sel)[1], lambda v: reg_collapse(v)[0], sel))

        # combined objective over a batch of score maps, away from top-k ties
        while True:
            scores = [rng.normal(0, 2, 40) for _ in range(4)]
            if min(_topk_margin(s, 0.1) for s in scores) > 1e-3:
                break
        labels = [1, 0, int(rng.integers(0, 2)), 0]
        bd = local_loss(scores, labels)
        note(
            "combined",
            _assert_fd(np.concatenate(bd.grads), lambda v: local_loss(np.split(v, 4), labels).total, np.concatenate(scores)),
        )

    # end to end: parameters -> per-patch scores -> top-k -> combined loss
    net = TinyNet(patch_size=4, channels=3, features=4, hidden=4)
    local_part = np.zeros(net.size, dtype=bool)
    for name, shape, off in net.segments():
        if not name.startswith("head."):
            local_part[off : off + int(np.prod(shape))] = True
    rho = 0.25
    labels = [1, 0, 1, 0]
    done = 0
    while done < N_POINTS:
        theta = net.init(int(rng.integers(1 << 30))) + rng.normal(0, 0.05, net.size)
        x = rng.random((4, 8, 8, 3))
        logits, cache = net.local_logits(theta, x)
        d = logits[..., 1] - logits[..., 0]
        if min(_topk_margin(s, rho) for s in d) < 1e-3 or np.min(np.abs(cache["z1"])) < 1e-3:
            continue  # central differences are meaningless across a tie or a ReLU kink
        _, grad, _ = backward(net, theta, x, labels, "local_combo", rho=rho)
        assert not grad[~local_part].any()

        def loss_at(sub):
            th = theta.copy()
            th[local_part] = sub
            lg, _ = net.local_logits(th, x)
            return local_loss(list(lg[..., 1] - lg[..., 0]), labels, rho).total

        note("end_to_end_local", _assert_fd(grad[local_part], loss_at, theta[local_part]))
        done += 1

    elapsed = time.perf_counter() - t0
    record_property("detail", f"worst rel err {max(worst.values()):.1e} over {len(worst)} checks x {N_POINTS} points, {elapsed:.1f}s")
    assert elapsed < 60


# ---------------------------------------------------------------- 2


@pytest.mark.criterion(2, "top-k selection matches brute-force sort oracle")
def test_criterion_2_topk_oracle(record_property):
    rng = np.random.default_rng(7)
    for t in range(1000):
        n = int(rng.integers(1, 513))
        if t % 3 == 0:
            s = rng.integers(-2, 3, n).astype(float)  # heavy ties
        elif t % 3 == 1:
            s = np.round(rng.normal(size=n), 1)
        else:
            s = rng.normal(size=n)
        sel = select_topk(s, 0.1)
        k = max(1, n // 10)
        oracle = sorted(range(n), key=lambda i: (-s[i], i))[:k]
        assert sel.k == k
        assert sel.indices.tolist() == oracle
        assert sel.d_img == float(np.mean(s[oracle]))
    for n in range(1, 16):
        assert topk_count(n, 0.1) == max(1, math.floor(0.1 * n))
        assert select_topk(np.zeros(n), 0.1).k == max(1, n // 10)
    record_property("detail", "1000 vectors (n=1..512, 2/3 with heavy ties) and k-clamp for N=1..15")


# ---------------------------------------------------------------- 3


@pytest.mark.criterion(3, "rank AUC equals O(n^2) pairwise count")
def test_criterion_3_auc_oracle(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    for t in range(200):
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        levels = int(rng.integers(2, 50))
        s = rng.integers(0, levels, n) / levels
        assert roc_auc(s, y) == roc_auc_pairwise(s, y)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"200 tied sets, exact equality, {elapsed:.2f}s")
    assert elapsed < 30


# ---------------------------------------------------------------- 4


def _local_spec(rho):
    return ModelSpec("mil" if rho < 1 else "mean", branch="local", loss="local_combo", rho=rho)


@pytest.mark.criterion(4, "evidence dilution: top-k pooling beats mean pooling by >= 0.05 AUC")
def test_criterion_4_evidence_dilution(record_property):
    t0 = time.perf_counter()
    gaps, parts = [], []
    for seed in range(3):
        cfg = SynthConfig(family="local_texture", forged_fraction=0.08, seed=seed)
        assert cfg.n_patches == 64 and cfg.counts == {"train": 2000, "val": 500, "test": 500}
        tr, _ = make_split(cfg, "train")
        va, _ = make_split(cfg, "val")
        te, _ = make_split(cfg, "test")
        tc = TrainConfig(epochs=10, seed=seed)
        aucs = {}
        for rho in (0.1, 1.0):
            spec = _local_spec(rho)
            ck = train(spec, tc, tr, va)
            aucs[rho] = roc_auc(evidence(ck.net, ck.theta, spec, te.images), te.labels)
        gaps.append(aucs[0.1] - aucs[1.0])
        parts.append(f"s{seed} {aucs[0.1]:.3f}/{aucs[1.0]:.3f}")
    elapsed = time.perf_counter() - t0
    record_property("detail", f"top-k/mean test AUC {', '.join(parts)}; mean gap {np.mean(gaps):.3f}; {elapsed:.0f}s")
    assert np.mean(gaps) >= 0.05
    assert elapsed < 600


# ---------------------------------------------------------------- 5


@pytest.mark.criterion(5, "ensemble complementarity: logit fusion on a mixed test set")
def test_criterion_5_complementarity(record_property):
    parts, ok = [], []
    for seed in range(3):
        loc = SynthConfig(family="local_texture", seed=seed)
        glo = SynthConfig(family="global_stat", seed=seed + 1000)
        mix = SynthConfig(family="mixed", seed=seed + 2000)
        sl = ModelSpec("local", branch="local", loss="local_combo")
        sg = ModelSpec("global", branch="global", loss="focal")
        tc = TrainConfig(epochs=10, seed=seed)
        ckl = train(sl, tc, make_split(loc, "train")[0], make_split(loc, "val")[0])
        ckg = train(sg, tc, make_split(glo, "train")[0], make_split(glo, "val")[0])
        te, _ = make_split(mix, "test")
        dl = evidence(ckl.net, ckl.theta, sl, te.images)
        dg = evidence(ckg.net, ckg.theta, sg, te.images)
        al, ag = roc_auc(dl, te.labels), roc_auc(dg, te.labels)
        af = roc_auc(sigmoid((dl + dg) / 2), te.labels)
        ok.append(af >= max(al, ag) - 0.01 and af > (al + ag) / 2)
        parts.append(f"s{seed} L{al:.3f} G{ag:.3f} fused {af:.3f}")
    record_property("detail", "; ".join(parts))
    assert all(ok)


# ---------------------------------------------------------------- 6


CONFIDENT_MINORITY = [1.0, 1.0, 1.0, 1.0, -10.0]
MAJORITY_SPLIT = [-0.1, -0.2, -0.3, 5.0, 6.0]
FIXTURE = {  # image id -> (label, per-model evidence)
    "minority_right": (0, CONFIDENT_MINORITY),
    "majority_split": (1, MAJORITY_SPLIT),
    "weak_fake": (1, [0.3] * 5),
    "agree_fake": (1, [2.0] * 5),
    "agree_real": (0, [-2.0] * 5),
}


def _write_fixture(tmp_path):
    models = [f"m{i + 1}" for i in range(5)]
    files = []
    for j, m in enumerate(models):
        p = tmp_path / f"{m}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_id", "image_id", "l_real", "l_fake"])
            for iid, (_, ds) in FIXTURE.items():
                w.writerow([m, iid, 0.0, ds[j]])
        files.append(p.name)
    with open(tmp_path / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "source", "weight"])
        for iid, (y, _) in FIXTURE.items():
            w.writerow([f"{iid}.ppm", y, "fixture", 1.0])
    cfg = {
        "out_dir": "out",
        "models": {"m1": {"branch": "global", "data": "none"}},
        "synth": {"datasets": {"none": {"family": "global_stat"}}},
        "ablation": {
            "sub_ensembles": {"full": models, "majority_only": models[:4], "minority_only": models[4:]},
            "strategies": ["majority", "probability", "logit"],
            "logits": files,
            "labels": "labels.csv",
        },
    }
    (tmp_path / "ablate.json").write_text(json.dumps(cfg))
    return tmp_path / "ablate.json"


@pytest.mark.criterion(6, "fusion-strategy divergence on the confident-minority fixture")
def test_criterion_6_fusion_ablation(tmp_path, record_property):
    cfg = _write_fixture(tmp_path)
    assert main(["ablate", "--config", str(cfg)]) == 0
    out = tmp_path / "out" / "ablation"
    scores = {(r["sub_ensemble"], r["strategy"], r["image_id"]): float(r["score"]) for r in csv.DictReader(open(out / "ablation_scores.csv"))}
    aucs = {(r["sub_ensemble"], r["strategy"]): float(r["auc"]) for r in csv.DictReader(open(out / "ablation.csv"))}
    assert len(aucs) == 9

    # confident minority: logit averaging says real, probability averaging says fake
    p_logit = scores[("full", "logit", "minority_right")]
    p_prob = scores[("full", "probability", "minority_right")]
    assert p_logit == pytest.approx(sigmoid(-1.2), abs=1e-15) and abs(p_logit - 0.2315) < 5e-5
    assert p_prob == pytest.approx((4 * sigmoid(1.0) + sigmoid(-10.0)) / 5, abs=1e-15) and abs(p_prob - 0.5849) < 5e-5
    assert p_logit < 0.5 < p_prob
    assert scores[("full", "majority", "minority_right")] == 1.0

    # majority disagreement: three weak "real" votes outvote two confident "fake" ones
    assert scores[("full", "majority", "majority_split")] == 0.0
    assert scores[("full", "logit", "majority_split")] == pytest.approx(sigmoid(math.fsum(MAJORITY_SPLIT) / 5), abs=1e-15)
    assert scores[("full", "logit", "majority_split")] > 0.5

    full = [aucs[("full", s)] for s in ("majority", "probability", "logit")]
    assert full[0] < full[1] < full[2]
    record_property(
        "detail",
        f"logit p={p_logit:.4f} vs probability p={p_prob:.4f}; full-ensemble AUC majority/probability/logit = "
        + "/".join(f"{a:.3f}" for a in full),
    )


# ---------------------------------------------------------------- 7


def _symmetric(rng, n, size=64):
    half = rng.random((n, size, size // 2, 3))
    return np.concatenate([half, half[:, :, ::-1]], axis=2)


def _pipeline_config(out: Path) -> dict:
    return {
        "seed": 5,
        "out_dir": str(out),
        "synth": {
            "datasets": {
                "loc": {"family": "local_texture", "counts": {"train": 96, "val": 32, "test": 0}},
                "glob": {"family": "global_stat", "counts": {"train": 96, "val": 32, "test": 0}, "seed_offset": 1000},
                "mix": {"family": "mixed", "counts": {"train": 0, "val": 0, "test": 48}, "seed_offset": 2000},
            }
        },
        "degradation": {"policy": "random"},
        "models": {
            "local": {"branch": "local", "data": "loc", "tta_flip": True, "train": {"epochs": 2, "batch_size": 16}},
            "global": {"branch": "global", "data": "glob", "loss": "ce_then_focal", "train": {"epochs": 2, "batch_size": 16}},
            "local_ft": {
                "branch": "local",
                "data": "loc",
                "init": {"model": "local"},
                "train": {"epochs": 1, "batch_size": 16, "lr_backbone": 1e-4, "lr_head": 1e-4},
            },
        },
        "ensemble": {"members": ["local_ft", "global"]},
        "eval": {"dataset": "mix", "sweep_images": 24},
        "ablation": {"sub_ensembles": {"L": ["local_ft"], "G": ["global"], "LG": ["local_ft", "global"]}},
    }


def _run_pipeline(root: Path) -> Path:
    out = root / "out"
    root.mkdir()
    cfg = root / "run.json"
    cfg.write_text(json.dumps(_pipeline_config(out)))
    c = ["--config", str(cfg)]
    steps = [
        ["synth"],
        ["train", "--model", "local"],
        ["train", "--model", "global"],
        ["train", "--model", "local_ft"],
        ["infer", "--model", "local_ft"],
        ["infer", "--model", "global"],
    ]
    for s in steps:
        assert main(s + c) == 0, s
    logits = [str(out / "logits" / f"{m}__mix_test.csv") for m in ("local_ft", "global")]
    for strategy in ("logit", "probability", "majority"):
        assert main(["fuse", "--strategy", strategy, *logits] + c) == 0
        assert main(["eval", str(out / "scores" / f"fused_{strategy}.csv")] + c) == 0
    assert main(["sweep"] + c) == 0
    assert main(["ablate"] + c) == 0
    return out


def _tree_diff(a: Path, b: Path) -> list[str]:
    diffs = []
    cmp = filecmp.dircmp(a, b)
    diffs += [str(a / f) for f in cmp.left_only + cmp.right_only + cmp.funny_files]
    for f in cmp.common_files:
        if (a / f).read_bytes() != (b / f).read_bytes():
            diffs.append(str(a / f))
    for d in cmp.common_dirs:
        diffs += _tree_diff(a / d, b / d)
    return diffs


@pytest.mark.criterion(7, "flip-TTA invariance and byte-reproducible pipeline")
def test_criterion_7_tta_and_determinism(tmp_path, record_property):
    rng = np.random.default_rng(3)
    imgs = _symmetric(rng, 8)
    worst = 0.0
    for branch, loss in (("global", "focal"), ("local", "local_combo")):
        spec = ModelSpec("m", branch=branch, loss=loss)
        net = TinyNet()
        for seed in range(3):
            theta = net.init(seed)
            single = evidence(net, theta, spec, imgs, tta=False)
            both = evidence(net, theta, spec, imgs, tta=True)
            worst = max(worst, float(np.max(np.abs(single - both))))
    assert worst <= 1e-12

    a = _run_pipeline(tmp_path / "run_a")
    b = _run_pipeline(tmp_path / "run_b")
    diffs = _tree_diff(a, b)
    n_files = sum(1 for p in a.rglob("*") if p.is_file())
    record_property("detail", f"TTA max |diff| {worst:.1e}; two pipeline runs, {n_files} files, {len(diffs)} differ")
    assert not diffs, diffs[:5]


# ---------------------------------------------------------------- 8


@pytest.mark.criterion(8, "robustness sweep sanity and JPEG monotonicity")
def test_criterion_8_sweep(record_property):
    cfg = SynthConfig(family="local_texture", seed=0, counts={"train": 2000, "val": 0, "test": 500})
    spec = _local_spec(0.1)
    ck = train(spec, TrainConfig(epochs=3, seed=0), make_split(cfg, "train")[0])
    te, _ = make_split(cfg, "test")
    system = {"mil": lambda x: sigmoid(evidence(ck.net, ck.theta, spec, x))}
    clean = roc_auc(system["mil"](te.images), te.labels)
    for axis in AXES:
        ladder = ladder_default(axis)
        rep = robustness_sweep(system, list(te.images), te.labels, ladder, seed=0)
        assert [r["level"] for r in rep.rows] == list(ladder.levels)
        assert all(0.0 <= r["auc"] <= 1.0 for r in rep.rows)
        assert rep.clean["mil"] == clean
        if axis == "blur_sigma":
            assert rep.auc("mil", 0.0) == clean
            blur = [round(rep.auc("mil", lv), 3) for lv in ladder.levels]

    texture = np.random.default_rng(99).random((64, 64, 3))
    qf = ladder_default("jpeg_qf").levels
    mse = [float(np.mean((jpeg_quantize(texture, int(q)) - texture) ** 2)) for q in qf]
    # ladder runs from high to low quality, so error must not shrink along it
    assert all(b >= a for a, b in zip(mse, mse[1:]))
    record_property("detail", f"clean AUC {clean:.3f}, blur ladder AUC {blur}; JPEG MSE {mse[0]:.1e} -> {mse[-1]:.1e}")


# ---------------------------------------------------------------- 9


@pytest.mark.criterion(9, "CE->focal switch step, AdamW scalar step, gradient clipping")
def test_criterion_9_schedule_and_optimizer(monkeypatch, record_property):
    kinds = []
    train_module = importlib.import_module("lgdetect.model.train")
    real_backward = train_module.backward

    def spy(*args, **kw):
        kinds.append(args[4])
        return real_backward(*args, **kw)

    monkeypatch.setattr(train_module, "backward", spy)
    data = make_split(SynthConfig(size=16, seed=0, counts={"train": 50, "val": 0, "test": 0}), "train")[0]
    spec = ModelSpec("g", branch="global", loss="ce_then_focal", train_res=16, infer_res=16, features=8)
    ck = train(spec, TrainConfig(epochs=5, batch_size=8), data)  # 7 steps/epoch -> 35 steps
    total = len(kinds)
    assert total == 35 == ck.meta["total_steps"]
    switch = math.ceil(0.2 * total)
    assert kinds[:switch] == ["ce"] * switch and kinds[switch:] == ["focal"] * (total - switch)
    assert ck.meta["switch_step"] == switch == 7

    cfg = TrainConfig(lr_backbone=0.1, lr_head=0.1, weight_decay=0.0)
    p, _ = adamw_step(AdamState.zeros(1), np.array([1.0]), np.array([1.0]), cfg)
    hand = 1.0 - 0.1 * 1.0 / (math.sqrt(1.0) + 1e-8)  # m_hat = v_hat = 1
    assert abs(p[0] - hand) < 1e-9 and abs(p[0] - 0.9) < 1e-8

    assert clip_grad_norm(np.array([3.0, 4.0]), 1.0).tolist() == [0.6, 0.8]
    record_property("detail", f"switch after step {switch} of {total}; AdamW p={float(p[0])!r}; clip [3,4]->[0.6,0.8]")
