"""Evidence dilution, reproduced in about a minute.

Trains two identical local models on the local_texture synthetic set; one
pools its patch scores with top-k (rho=0.1), the other with the full mean
(rho=1.0).  Forgeries cover 6 of 64 patches, so mean pooling sees a 6/64
signal while top-k sees it almost undiluted.
Run: python demos/03_evidence_dilution.py [--train N] [--epochs E]
"""

import argparse
import time

from lgdetect.evaluation import roc_auc
from lgdetect.model import ModelSpec, TrainConfig, evidence, train
from lgdetect.synthdata import SynthConfig, make_split

ap = argparse.ArgumentParser()
ap.add_argument("--train", type=int, default=2000)
ap.add_argument("--epochs", type=int, default=10)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

cfg = SynthConfig(family="local_texture", seed=args.seed, counts={"train": args.train, "val": 500, "test": 500})
tr, va, te = (make_split(cfg, s)[0] for s in ("train", "val", "test"))
print(f"{len(tr)} train / {len(va)} val / {len(te)} test images, {cfg.n_forged} of {cfg.n_patches} patches forged")

for rho in (0.1, 1.0):
    t = time.perf_counter()
    spec = ModelSpec(f"rho={rho}", branch="local", loss="local_combo", rho=rho)
    ck = train(spec, TrainConfig(epochs=args.epochs, seed=args.seed), tr, va)
    auc = roc_auc(evidence(ck.net, ck.theta, spec, te.images), te.labels)
    curve = " ".join(f"{h['val_auc']:.2f}" for h in ck.meta["history"])
    print(f"rho={rho:<4} test AUC {auc:.3f}  (val AUC by epoch: {curve})  {time.perf_counter() - t:.0f}s")
