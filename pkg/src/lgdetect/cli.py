"""Command-line entry point: ``lgdetect <command> --config run.json``.

Output layout under the run directory::

    data/<dataset>/<split>/*.ppm|*.mask, data/<dataset>/<split>.csv
    models/<id>.ckpt, models/<id>.history.json
    logits/<id>__<dataset>_<split>.csv
    scores/fused_<strategy>.csv
    eval/<scores>_metrics.csv, eval/<scores>_failures.csv
    sweep/<axis>.csv
    ablation/ablation.csv, ablation/ablation_scores.csv
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, config_hash, load_config, resolve, validate
from .degrade import AXES, ladder_default
from .ensemble import STRATEGIES, EnsembleConfig, Evidence, fuse, majority_vote
from .evaluation import UndefinedMetric, export_failures, robustness_sweep, roc_auc, write_failures
from .imaging import ImageFormatError
from .losses import sigmoid
from .model.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model.data import FormatError, LabeledImages, LogitRow, LogitsTable, load_external_logits, read_manifest, write_logits
from .model.objective import TrainingDivergence
from .model.optim import TrainConfig
from .model.train import ModelSpec, evidence, predict_logits, train
from .synthdata import SynthConfig, gen_split

log = logging.getLogger("lgdetect")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_MISSING, EXIT_METRIC, EXIT_DIVERGED, EXIT_FORMAT = 0, 1, 2, 3, 4, 5, 6


class Run:
    """Resolved configuration plus output directory."""

    def __init__(self, args):
        cfg_path = Path(args.config)
        raw = load_config(cfg_path)
        if args.seed is not None:
            raw["seed"] = args.seed
        self.base = cfg_path.parent
        if args.out is not None:
            raw["out_dir"] = str(Path(args.out).resolve())
        self.cfg = validate(raw)
        self.out = resolve(self.base, self.cfg["out_dir"])
        self.seed = self.cfg["seed"]
        log.info("config sha256=%s seed=%d out=%s", config_hash(self.cfg), self.seed, self.out)

    def dataset_dir(self, name: str) -> Path:
        return self.out / "data" / name

    def manifest(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        ev = self.cfg["eval"]
        if "manifest" in ev:
            return resolve(self.base, ev["manifest"])
        if "dataset" not in ev:
            raise ConfigError("no manifest given and eval.dataset is not set")
        return self.dataset_dir(ev["dataset"]) / f"{ev['split']}.csv"

    def model_spec(self, mid: str) -> ModelSpec:
        if mid not in self.cfg["models"]:
            raise ConfigError(f"unknown model id {mid!r}")
        m = self.cfg["models"][mid]
        init = m["init"]
        if isinstance(init, dict):
            init = f"models/{init['model']}.ckpt" if "model" in init else str(resolve(self.base, init["checkpoint"]))
        return ModelSpec(
            mid,
            branch=m["branch"],
            train_res=m["train_res"],
            infer_res=m["infer_res"],
            patch_size=m["patch_size"],
            tta_flip=m["tta_flip"],
            loss=m["loss"],
            init=init,
            rho=m["rho"],
            features=m["features"],
        )

    def checkpoint_path(self, mid: str) -> Path:
        return self.out / "models" / f"{mid}.ckpt"

    def logits_path(self, mid: str, manifest: Path) -> Path:
        return self.out / "logits" / f"{mid}__{manifest.parent.name}_{manifest.stem}.csv"


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing input: {path}")
    return path


# --------------------------------------------------------------------------
# commands


def cmd_synth(run: Run, args) -> None:
    s = run.cfg["synth"]
    for name, ds in s["datasets"].items():
        sc = SynthConfig(
            size=s["image_size"],
            patch_size=s["patch_size"],
            forged_fraction=ds["forged_fraction"],
            family=ds["family"],
            seed=run.seed + ds["seed_offset"],
            counts=ds["counts"],
        )
        manifests = gen_split(sc, run.dataset_dir(name))
        for split, path in manifests.items():
            log.info("wrote %s (%s)", path, split)


def cmd_train(run: Run, args) -> None:
    mid = args.model
    spec = run.model_spec(mid)
    m = run.cfg["models"][mid]
    t = m["train"]
    tc = TrainConfig(
        lr_backbone=t["lr_backbone"],
        lr_head=t["lr_head"],
        betas=tuple(t["betas"]),
        weight_decay=t["weight_decay"],
        clip_norm=t["clip_norm"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        seed=run.seed + t["seed_offset"],
    )
    ddir = run.dataset_dir(m["data"])
    data = LabeledImages.from_manifest(_require(ddir / "train.csv"))
    val = LabeledImages.from_manifest(ddir / "val.csv") if (ddir / "val.csv").exists() else None
    if spec.init != "fresh":
        _require(spec.init if Path(spec.init).is_absolute() else run.out / spec.init)
    (run.out / "models").mkdir(parents=True, exist_ok=True)
    try:
        ckpt = train(spec, tc, data, val, run.cfg["degradation"]["policy"], base_dir=run.out)
    except TrainingDivergence as exc:
        save_checkpoint(run.out / "models" / f"{mid}.last_good.ckpt", exc.checkpoint)
        raise
    save_checkpoint(run.checkpoint_path(mid), ckpt)
    with open(run.out / "models" / f"{mid}.history.json", "w") as fh:
        json.dump(ckpt.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("%s: best epoch %s, val AUC %s", mid, ckpt.meta["best_epoch"], ckpt.meta["best_val_auc"])


def cmd_infer(run: Run, args) -> Path:
    mid = args.model
    spec = run.model_spec(mid)
    ckpt = load_checkpoint(_require(run.checkpoint_path(mid)))
    manifest = _require(run.manifest(args.manifest))
    data = LabeledImages.from_manifest(manifest)
    logits = predict_logits(ckpt.net, ckpt.theta, spec, data.images)
    out = run.logits_path(mid, manifest)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_logits(out, [LogitRow(mid, i, lr, lf) for i, (lr, lf) in zip(data.ids, logits.tolist())])
    log.info("wrote %s", out)
    return out


def _fused_scores(table: LogitsTable, members: list[str], strategy: str, weights=None) -> dict[str, tuple[float, int]]:
    """image id -> (score, tie flag) for one member set."""
    missing = [m for m in members if m not in table.models()]
    if missing:
        raise FormatError(f"no logits for models {missing}")
    ev = {m: table.evidence(m) for m in members}
    ids = sorted(set.intersection(*(set(e) for e in ev.values())))
    every = set().union(*(set(e) for e in ev.values()))
    if len(ids) != len(every):
        raise FormatError(f"{len(every) - len(ids)} images lack logits from some members")
    cfg = EnsembleConfig(tuple(members), tuple(weights) if weights else ())
    out = {}
    for i in ids:
        evs = [Evidence(m, ev[m][i]) for m in members]
        tie = majority_vote(evs)[1] if strategy == "majority" else False
        out[i] = (fuse(evs, strategy, cfg), int(tie))
    return out


def cmd_fuse(run: Run, args) -> Path:
    if not args.logits:
        raise ConfigError("fuse needs at least one logits file")
    table = LogitsTable()
    for p in args.logits:
        table = table.merge(load_external_logits(_require(Path(p))))
    members = table.models()
    if not members:
        raise FormatError("no models in the given logits files")
    strategy = args.strategy or run.cfg.get("ensemble", {}).get("strategy", "logit")
    ens = run.cfg.get("ensemble")
    weights = None
    if ens and ens.get("weights") and sorted(ens["members"]) == members:
        weights = [dict(zip(ens["members"], ens["weights"]))[m] for m in members]
    scores = _fused_scores(table, members, strategy, weights)
    out = run.out / "scores" / f"fused_{strategy}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "score", "decision", "tie"])
        for i, (s, tie) in scores.items():
            w.writerow([i, repr(float(s)), int(s >= 0.5), tie])
    log.info("fused %d images from %s (%s fusion) -> %s", len(scores), members, strategy, out)
    return out


def _labels(manifest: Path) -> dict[str, int]:
    return {r.image_id: r.label for r in read_manifest(manifest)}


def cmd_eval(run: Run, args) -> float:
    scores_path = _require(Path(args.scores))
    labels = _labels(_require(run.manifest(args.manifest)))
    ids, ys, ss = [], [], []
    with open(scores_path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            if row["image_id"] not in labels:
                raise FormatError(f"image {row['image_id']!r} has no label in the manifest", lineno)
            ids.append(row["image_id"])
            ys.append(labels[row["image_id"]])
            ss.append(float(row["score"]))
    auc = roc_auc(ss, ys)
    thr = run.cfg["eval"]["threshold"]
    out = run.out / "eval"
    out.mkdir(parents=True, exist_ok=True)
    stem = scores_path.stem
    with open(out / f"{stem}_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["auc", repr(auc)])
        w.writerow(["n_pos", sum(ys)])
        w.writerow(["n_neg", len(ys) - sum(ys)])
        w.writerow(["threshold", repr(float(thr))])
    write_failures(out / f"{stem}_failures.csv", export_failures(ids, ys, ss, thr))
    print(f"AUC {auc:.6f}")
    return auc


def _members(run: Run) -> list[str]:
    ens = run.cfg.get("ensemble")
    return list(ens["members"]) if ens else list(run.cfg["models"])


def cmd_sweep(run: Run, args) -> list[Path]:
    manifest = _require(run.manifest(args.manifest))
    data = LabeledImages.from_manifest(manifest)
    n = min(len(data), run.cfg["eval"]["sweep_images"])
    data = data.subset(np.arange(n))
    models = {}
    for mid in _members(run):
        ckpt = load_checkpoint(_require(run.checkpoint_path(mid)))
        models[mid] = (ckpt, run.model_spec(mid))

    def member(mid):
        ckpt, spec = models[mid]
        return lambda x: sigmoid(evidence(ckpt.net, ckpt.theta, spec, x))

    def fused(x):
        d = np.mean([evidence(c.net, c.theta, s, x) for c, s in models.values()], axis=0)
        return sigmoid(d)

    systems = {mid: member(mid) for mid in models}
    if len(models) > 1:
        systems["ensemble"] = fused
    axes = [args.ladder] if args.ladder else list(AXES)
    written = []
    for axis in axes:
        report = robustness_sweep(systems, list(data.images), data.labels, ladder_default(axis), seed=run.seed)
        out = run.out / "sweep" / f"{axis}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        report.write(out, note=f"synthetic desk-scale sweep, {n} images per level")
        written.append(out)
        log.info("wrote %s", out)
    return written


def cmd_ablate(run: Run, args) -> Path:
    ab = run.cfg.get("ablation")
    if not ab or "sub_ensembles" not in ab:
        raise ConfigError("ablate needs an ablation.sub_ensembles section")
    labels_path = resolve(run.base, ab["labels"]) if "labels" in ab else run.manifest(args.manifest)
    labels = _labels(_require(labels_path))
    if "logits" in ab:
        files = [resolve(run.base, p) for p in ab["logits"]]
    else:
        used = sorted({m for ms in ab["sub_ensembles"].values() for m in ms})
        files = [run.logits_path(m, labels_path) for m in used]
    table = LogitsTable()
    for p in files:
        table = table.merge(load_external_logits(_require(p)))
    out = run.out / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fa, open(out / "ablation_scores.csv", "w", newline="") as fs:
        wa = csv.writer(fa, lineterminator="\n")
        ws = csv.writer(fs, lineterminator="\n")
        wa.writerow(["sub_ensemble", "strategy", "auc", "n_pos", "n_neg"])
        ws.writerow(["sub_ensemble", "strategy", "image_id", "score", "tie"])
        for name, members in ab["sub_ensembles"].items():
            for strategy in ab["strategies"]:
                scores = _fused_scores(table, members, strategy)
                ids = [i for i in scores if i in labels]
                ys = [labels[i] for i in ids]
                auc = roc_auc([scores[i][0] for i in ids], ys)
                wa.writerow([name, strategy, repr(auc), sum(ys), len(ys) - sum(ys)])
                for i, (s, tie) in scores.items():
                    ws.writerow([name, strategy, i, repr(float(s)), tie])
    log.info("wrote %s", out / "ablation.csv")
    return out / "ablation.csv"


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--manifest", help="manifest for infer/eval/sweep (default: eval dataset split)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lgdetect", description="local/global patch-evidence detector toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate synthetic datasets")
    sp = sub.add_parser("train", parents=[common], help="train one model")
    sp.add_argument("--model", required=True)
    sp = sub.add_parser("infer", parents=[common], help="write a logits file for one model")
    sp.add_argument("--model", required=True)
    sp = sub.add_parser("fuse", parents=[common], help="fuse logits files into scores")
    sp.add_argument("logits", nargs="+")
    sp.add_argument("--strategy", choices=STRATEGIES)
    sp = sub.add_parser("eval", parents=[common], help="AUC and failure listing for a scores file")
    sp.add_argument("scores")
    sp = sub.add_parser("sweep", parents=[common], help="robustness sweep over severity ladders")
    sp.add_argument("--ladder", choices=AXES)
    sub.add_parser("ablate", parents=[common], help="AUC per sub-ensemble and fusion strategy")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    # command-level messages (config hash, seed, outputs) always go to stderr;
    # per-epoch training progress only with -v
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(logging.INFO)
    logging.getLogger("lgdetect.model").setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        run = Run(args)
        COMMANDS[args.command](run, args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except UndefinedMetric as exc:
        log.error("%s", exc)
        return EXIT_METRIC
    except TrainingDivergence as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except (FormatError, ImageFormatError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_FORMAT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
