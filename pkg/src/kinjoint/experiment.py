"""Fold-level orchestration behind the CLI: data, training, evaluation, tables."""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import ConfigError, ExperimentConfig
from .data import manifest as man
from .data.protocols import gen_independent_set, gen_mixed_set, gen_real_scenario_set, make_folds
from .data.synth import synth_families
from .engine.checkpoint import load_checkpoint, save_checkpoint
from .models import KIN_TYPES, EnsembleNet
from .training import (
    Method,
    build_model,
    predict_samples,
    train_ensemble_net,
    train_jlnet,
    train_multiclass,
    verification_decision,
)


class RunError(RuntimeError):
    pass


@dataclass
class Dataset:
    manifest: man.Manifest
    images: dict


LOG_COLUMNS = ["epoch", "phase", "member", "loss", "verification_1", "verification_2",
               "verification_3", "verification_4", "identification"]
PRED_COLUMNS = ["pair_id", "parent_path", "child_path", "true_label", "predicted_label", "p0", "p1", "p2", "p3", "p4"]

# JSON schema of every metrics file written by evaluate
EVAL_SCHEMA = {
    "type": "object",
    "required": ["run_id", "method", "protocol", "fold", "num_samples", "metrics"],
    "properties": {
        "run_id": {"type": "string"},
        "method": {"type": "string"},
        "protocol": {"enum": ["independent", "mixed", "real"]},
        "fold": {"anyOf": [{"type": "integer", "minimum": 0}, {"const": "aggregate"}]},
        "num_samples": {"type": "integer", "minimum": 0},
        "metrics": {
            "type": "object",
            "required": ["accuracy", "per_class_f_beta", "per_class_f1", "macro_f1",
                         "f_beta_mean_positive", "f_beta_all", "beta", "counts"],
            "properties": {
                "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
                "macro_f1": {"type": "number", "minimum": 0, "maximum": 1},
                "f_beta_mean_positive": {"type": "number", "minimum": 0, "maximum": 1},
                "f_beta_all": {"type": "number", "minimum": 0, "maximum": 1},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "per_class_f_beta": {"type": "array", "items": {"type": "number"}, "minItems": 5, "maxItems": 5},
                "per_class_f1": {"type": "array", "items": {"type": "number"}, "minItems": 5, "maxItems": 5},
                "counts": {
                    "type": "array", "minItems": 5, "maxItems": 5,
                    "items": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 5, "maxItems": 5},
                },
            },
        },
        "per_kin_type": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["accuracy", "f1"],
                "properties": {"accuracy": {"type": "number"}, "f1": {"type": "number"}},
            },
        },
    },
}


def check_dataset(config):
    """Cheap compatibility checks between the dataset and the rest of the config."""
    if config.dataset.manifest:
        if not Path(config.dataset.manifest).is_file():
            raise ConfigError(f"dataset.manifest not found: {config.dataset.manifest}")
        return
    syn = config.dataset.synthetic
    if tuple(config.backbone.input_size[:2]) != (syn.image_size, syn.image_size):
        raise ConfigError(
            f"backbone.input_size {config.backbone.input_size} does not match synthetic image_size {syn.image_size}"
        )
    # negatives pair a parent with another same-type family of the same fold
    if syn.num_families < 2 * config.folds:
        raise ConfigError(
            f"{syn.num_families} synthetic families per kin type leave fewer than 2 per fold for {config.folds} folds"
        )


def load_dataset(config):
    check_dataset(config)
    if config.dataset.manifest:
        manifest = man.load_manifest(config.dataset.manifest)
        h, w, _ = config.backbone.input_size
        return Dataset(manifest, man.load_images(manifest, (h, w)))
    data = synth_families(config.dataset.synthetic)
    return Dataset(data.manifest, data.images)


def fold_seed(config, fold):
    return int(np.random.SeedSequence([config.seed, config.schedule.seed, fold]).generate_state(1)[0] % 2**31)


def _schedule(config, fold):
    return replace(config.schedule, seed=fold_seed(config, fold))


def train_fold(config, dataset, fold):
    """Train the configured method on the training families of one fold."""
    folds = make_folds(dataset.manifest, config.folds, config.seed)
    train_fams = folds.families(fold, "train")
    method = Method(config.method)
    schedule = _schedule(config, fold)
    aug = config.augment if config.augment.enabled else None
    args = (dataset.images, schedule, config.loss_weights, config.backbone)
    if method is Method.ENSEMBLE_STAR:
        data = {int(k): gen_independent_set(dataset.manifest, train_fams, k, schedule.seed) for k in KIN_TYPES}
        return train_ensemble_net(data, *args, independent=True, augment_config=aug)
    mixed = gen_mixed_set(dataset.manifest, train_fams, schedule.seed)
    if method is Method.ENSEMBLE:
        return train_ensemble_net(mixed, *args, independent=False, augment_config=aug)
    if method is Method.MULTICLASS:
        return train_multiclass(mixed, *args, augment_config=aug)
    return train_jlnet(mixed, *args, use_identification=method is not Method.JLNET_DAGGER, augment_config=aug)


def optimizer_groups(result):
    if isinstance(result.model, EnsembleNet):
        return [([f"members.{i}.{n}" for n in opt.names], opt.state) for i, opt in enumerate(result.optimizers)]
    return [(opt.names, opt.state) for opt in result.optimizers]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def log_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in LOG_COLUMNS])
    return buf.getvalue()


def checkpoint_path(run_dir, fold):
    return Path(run_dir) / "checkpoints" / f"fold{fold}.kjckpt"


def _train_and_save(config_dict, fold):
    config = ExperimentConfig.from_dict(config_dict)
    dataset = load_dataset(config)
    result = train_fold(config, dataset, fold)
    run_dir = config.run_dir()
    meta = {"run_id": config.run_id(), "fold": fold, "method": result.method.value}
    save_checkpoint(checkpoint_path(run_dir, fold), result.model.state_dict(), optimizer_groups(result), meta)
    for phase, state in result.snapshots.items():
        if phase.startswith("phase"):
            save_checkpoint(run_dir / "checkpoints" / "phases" / f"fold{fold}_{phase}.kjckpt", state, (), {**meta, "phase": phase})
    (run_dir / "logs").mkdir(parents=True, exist_ok=True)
    (run_dir / "logs" / f"fold{fold}_train.csv").write_text(log_csv(result.log), encoding="utf-8")
    return fold


def worker_count(n_jobs):
    try:
        cap = int(os.environ.get("KINJOINT_THREADS", "1"))
    except ValueError:
        raise ConfigError("KINJOINT_THREADS must be an integer") from None
    return max(1, min(cap, n_jobs))


def _map_folds(fn, config, folds):
    payload = config.to_dict()
    workers = worker_count(len(folds))
    if workers == 1:
        return [fn(payload, f) for f in folds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, [payload] * len(folds), folds))


def run_train(config, force=False):
    config.validate()
    check_dataset(config)
    run_dir = config.run_dir()
    existing = [f for f in config.run_folds if checkpoint_path(run_dir, f).exists()]
    if existing and not force:
        raise RunError(f"{run_dir}: checkpoints exist for folds {existing}; pass --force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.training_key(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _map_folds(_train_and_save, config, config.run_folds)
    return run_dir


def load_trained(config, fold):
    ckpt = load_checkpoint(checkpoint_path(config.run_dir(), fold))
    model = build_model(config.method, config.backbone, seed=0)
    model.load_state_dict(ckpt.params)
    return model


def evaluation_samples(config, dataset, fold):
    """Evaluation pairs of one fold for the configured protocol."""
    folds = make_folds(dataset.manifest, config.folds, config.seed)
    fams = folds.families(fold, "test")
    seed = fold_seed(config, fold) + 1
    if config.protocol == "mixed":
        return gen_mixed_set(dataset.manifest, fams, seed)
    if config.protocol == "real":
        return gen_real_scenario_set(dataset.manifest, fams)
    return [s for k in KIN_TYPES for s in gen_independent_set(dataset.manifest, fams, k, seed)]


@dataclass
class FoldEvaluation:
    samples: list
    predicted: np.ndarray
    probs: np.ndarray
    report: M.MetricsReport
    per_kin: dict | None = None


def evaluate_predictions(samples, predicted, probs, protocol):
    labels = np.array([s.label for s in samples], dtype=np.int64)
    cm = M.confusion(predicted, labels)
    per_kin = None
    if protocol == "independent":
        per_kin = {}
        kins = np.array([s.kin for s in samples])
        for k in KIN_TYPES:
            sel = kins == int(k)
            if not sel.any():
                continue
            sub = M.confusion(predicted[sel], labels[sel])
            per_kin[k.short] = {
                "accuracy": float(np.trace(sub) / sub.sum()),
                "f1": M.f_beta(sub, int(k), 1.0),
            }
    return FoldEvaluation(samples, predicted, probs, M.report(cm), per_kin)


def evaluate_fold(config, dataset, fold, model=None, predictor=None):
    """Evaluate one fold; ``predictor(samples) -> (classes, probs)`` replaces the model when given."""
    samples = evaluation_samples(config, dataset, fold)
    if predictor is not None:
        predicted, probs = predictor(samples)
        return evaluate_predictions(samples, np.asarray(predicted), np.asarray(probs), config.protocol)
    method = Method(config.method)
    pred = predict_samples(method, model, samples, dataset.images)
    predicted = pred.classes
    if config.protocol == "independent":
        kins = np.array([s.kin for s in samples])
        predicted = np.zeros(len(samples), dtype=np.int64)
        for k in KIN_TYPES:
            sel = kins == int(k)
            verdict = verification_decision(method, _subset(pred, sel), int(k))
            predicted[sel] = np.where(verdict, int(k), 0)
    return evaluate_predictions(samples, predicted, pred.probs, config.protocol)


def _subset(pred, sel):
    return replace(
        pred,
        classes=pred.classes[sel],
        probs=pred.probs[sel],
        heads=None if pred.heads is None else pred.heads[sel],
        joint=None if pred.joint is None else pred.joint[sel],
    )


def predictions_csv(evaluation, manifest):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRED_COLUMNS)
    for i, (s, p, probs) in enumerate(zip(evaluation.samples, evaluation.predicted, evaluation.probs)):
        w.writerow([i, manifest.record(s.parent_ref).path, manifest.record(s.child_ref).path,
                    s.label, int(p)] + [repr(float(x)) for x in probs])
    return buf.getvalue()


def eval_dir(config):
    return config.run_dir() / "eval" / config.method / config.protocol


def _metrics_doc(config, fold, report, n, per_kin):
    doc = {"run_id": config.run_id(), "method": config.method, "protocol": config.protocol,
           "fold": fold, "num_samples": int(n), "metrics": report.to_dict()}
    if per_kin is not None:
        doc["per_kin_type"] = per_kin
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def run_evaluate(config, force=False, predictor=None):
    config.validate()
    run_dir = config.run_dir()
    if predictor is None:
        missing = [f for f in config.run_folds if not checkpoint_path(run_dir, f).exists()]
        if missing:
            raise RunError(f"{run_dir}: missing checkpoints for folds {missing}; run train first")
    out = eval_dir(config)
    if (out / "metrics.json").exists() and not force:
        raise RunError(f"{out}: evaluation exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config)
    reports, per_kins, total = [], [], 0
    for fold in config.run_folds:
        model = None if predictor is not None else load_trained(config, fold)
        ev = evaluate_fold(config, dataset, fold, model=model, predictor=predictor)
        total += len(ev.samples)
        reports.append(ev.report)
        per_kins.append(ev.per_kin)
        (out / f"fold{fold}_predictions.csv").write_text(predictions_csv(ev, dataset.manifest), encoding="utf-8")
        (out / f"fold{fold}_confusion.csv").write_text(M.confusion_csv(ev.report.counts), encoding="utf-8")
        (out / f"fold{fold}_confusion_positives.csv").write_text(
            M.confusion_csv(ev.report.counts, positives_only=True), encoding="utf-8")
        (out / f"fold{fold}_metrics.json").write_text(
            _metrics_doc(config, fold, ev.report, len(ev.samples), ev.per_kin), encoding="utf-8")
    agg = M.aggregate_folds(reports)
    agg_kin = None
    if config.protocol == "independent":
        agg_kin = {k: {m: float(np.mean([pk[k][m] for pk in per_kins])) for m in ("accuracy", "f1")}
                   for k in per_kins[0]}
    (out / "confusion.csv").write_text(M.confusion_csv(agg.counts), encoding="utf-8")
    (out / "confusion_positives.csv").write_text(M.confusion_csv(agg.counts, positives_only=True), encoding="utf-8")
    (out / "metrics.json").write_text(_metrics_doc(config, "aggregate", agg, total, agg_kin), encoding="utf-8")
    return out


# comparison tables

TABLE_COLUMNS = {
    "independent": ["method", "acc_fd", "acc_fs", "acc_md", "acc_ms", "acc_mean",
                    "f1_fd", "f1_fs", "f1_md", "f1_ms", "f1_mean"],
    "mixed": ["method", "macro_f1", "accuracy"],
    "real": ["method", "f10_fd", "f10_fs", "f10_md", "f10_ms", "f10_mean", "f10_all", "accuracy"],
}


def table_row(doc):
    protocol = doc["protocol"]
    m = doc["metrics"]
    row = {"method": Method(doc["method"]).display}
    if protocol == "mixed":
        row.update(macro_f1=m["macro_f1"], accuracy=m["accuracy"])
    elif protocol == "real":
        for k in KIN_TYPES:
            row[f"f10_{k.short}"] = m["per_class_f_beta"][int(k)]
        row.update(f10_mean=m["f_beta_mean_positive"], f10_all=m["f_beta_all"], accuracy=m["accuracy"])
    else:
        kin = doc["per_kin_type"]
        for metric, col in (("accuracy", "acc"), ("f1", "f1")):
            vals = [kin[k.short][metric] for k in KIN_TYPES]
            for k, v in zip(KIN_TYPES, vals):
                row[f"{col}_{k.short}"] = v
            row[f"{col}_mean"] = float(np.mean(vals))
    return row


def run_compare(configs):
    if len(configs) < 2:
        raise ConfigError("compare needs at least two experiments")
    docs = []
    for config in configs:
        path = eval_dir(config) / "metrics.json"
        if not path.exists():
            raise RunError(f"{path}: not evaluated yet")
        docs.append(json.loads(path.read_text(encoding="utf-8")))
    protocols = {d["protocol"] for d in docs}
    if len(protocols) != 1:
        raise ConfigError(f"cannot tabulate different metric sets together: protocols {sorted(protocols)}")
    columns = TABLE_COLUMNS[protocols.pop()]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for d in docs:
        row = table_row(d)
        w.writerow([row[c] if c == "method" else f"{row[c]:.4f}" for c in columns])
    return buf.getvalue()
