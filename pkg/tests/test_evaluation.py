import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgdetect.degrade import ladder_default, make_ladder
from lgdetect.evaluation import (
    UndefinedMetric,
    export_failures,
    robustness_sweep,
    roc_auc,
    roc_auc_pairwise,
    video_frame_indices,
    video_score,
    write_failures,
)


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.5, 0.5], [1, 0]) == 0.5
    assert roc_auc([0.4, 0.6, 0.2, 0.8], [1, 0, 0, 1]) == 0.75
    with pytest.raises(UndefinedMetric):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 2])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=60))
@settings(max_examples=200, deadline=None)
def test_auc_equals_pairwise(pairs):
    s, y = zip(*pairs)
    if len(set(y)) < 2:
        return
    assert roc_auc(s, y) == roc_auc_pairwise(s, y)


def test_auc_matches_sklearn(rng):
    sk = pytest.importorskip("sklearn.metrics")
    s = rng.integers(0, 10, 300) / 3
    y = rng.integers(0, 2, 300)
    assert roc_auc(s, y) == pytest.approx(sk.roc_auc_score(y, s), abs=1e-14)


def test_video_score():
    assert video_score([0.2, 0.8] * 32) == 0.5
    p = np.linspace(0, 1, 10)
    assert video_score(p) == pytest.approx(p.mean())
    assert video_score(np.full(320, 0.3)) == pytest.approx(0.3)
    idx = video_frame_indices(320)
    assert len(idx) == 32 and idx[0] == 0 and idx[-1] == 319 and np.all(np.diff(idx) > 0)
    with pytest.raises(ValueError):
        video_score([])


def test_failures(tmp_path):
    ids = ["a", "b", "c", "d", "e"]
    labels = [1, 1, 0, 0, 1]
    scores = [0.4, 0.05, 0.9, 0.2, 0.1]
    f = export_failures(ids, labels, scores, 0.5)
    assert [r[0] for r in f["false_negative"]] == ["b", "e", "a"]
    assert [r[0] for r in f["false_positive"]] == ["c"]
    assert export_failures(ids, labels, [0.9, 0.9, 0.1, 0.1, 0.9]) == {"false_negative": [], "false_positive": []}
    write_failures(tmp_path / "f.csv", f)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "id,label,score,kind" and len(lines) == 5


def _system(img_batch):
    return np.asarray(img_batch).reshape(len(img_batch), -1).std(axis=1)


def test_sweep_shape_and_identity(tmp_path):
    rng = np.random.default_rng(3)
    imgs = [rng.random((16, 16, 3)) * (0.3 + 0.4 * (i % 2)) for i in range(20)]
    labels = [i % 2 for i in range(20)]
    systems = {"std": _system, "mean": lambda b: np.asarray(b).reshape(len(b), -1).mean(axis=1)}
    for axis in ("blur_sigma", "jpeg_qf", "resize_scale"):
        ladder = ladder_default(axis)
        rep = robustness_sweep(systems, imgs, labels, ladder, seed=5)
        assert len(rep.rows) == len(ladder.levels) * len(systems)
        assert all(0 <= r["auc"] <= 1 for r in rep.rows)
    rep = robustness_sweep(systems, imgs, labels, make_ladder("blur_sigma", [0.0, 1.0]), seed=5)
    for name in systems:
        assert rep.auc(name, 0.0) == rep.clean[name]
    rep.write(tmp_path / "a.csv")
    robustness_sweep(systems, imgs, labels, make_ladder("blur_sigma", [0.0, 1.0]), seed=5).write(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with pytest.raises(KeyError):
        rep.auc("std", 7.0)
