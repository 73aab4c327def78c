"""Robustness sweep: AUC along JPEG, resize and blur severity ladders.

Trains a small local model (3 epochs) and reports how its AUC degrades as
post-processing gets harsher.  Run: python demos/05_robustness_sweep.py
"""

from lgdetect.degrade import AXES, ladder_default
from lgdetect.evaluation import robustness_sweep
from lgdetect.losses import sigmoid
from lgdetect.model import ModelSpec, TrainConfig, evidence, train
from lgdetect.synthdata import SynthConfig, make_split

cfg = SynthConfig(family="local_texture", seed=0, counts={"train": 2000, "val": 0, "test": 300})
spec = ModelSpec("local", branch="local", loss="local_combo")
ck = train(spec, TrainConfig(epochs=3), make_split(cfg, "train")[0])
te, _ = make_split(cfg, "test")
systems = {"local": lambda x: sigmoid(evidence(ck.net, ck.theta, spec, x))}

for axis in AXES:
    rep = robustness_sweep(systems, list(te.images), te.labels, ladder_default(axis), seed=0)
    cells = "  ".join(f"{r['level']:g}:{r['auc']:.3f}" for r in rep.rows)
    print(f"{axis:13s} clean {rep.clean['local']:.3f} | {cells}")
