"""Acceptance criteria; each test prints one PASS/FAIL line.

The end-to-end run uses the published configs/synthetic_mixed.json.
"""
import json
import math
import struct
import time
from pathlib import Path

import numpy as np
import pytest

from kinjoint import cli, joint, metrics
from kinjoint.config import load_config
from kinjoint.data.manifest import ImageRecord, Manifest
from kinjoint.data.protocols import gen_mixed_set, gen_real_scenario_set, label_histogram, make_folds
from kinjoint.engine.checkpoint import MAGIC
from kinjoint.engine.gradcheck import finite_diff_check
from kinjoint.experiment import checkpoint_path, eval_dir, evaluation_samples, load_dataset, load_trained
from kinjoint.models import KIN_TYPES
from kinjoint.training import Method, predict_samples

from gradcases import CASES
from oracles import random_heads, ref_ensemble, ref_f_beta, ref_identify, ref_joint_output

ROOT = Path(__file__).resolve().parents[1]
PUBLISHED_CONFIG = ROOT / "configs" / "synthetic_mixed.json"
LOSS_EXAMPLE = 38.253796078581528949  # 8 ln2 + 0.75 ln2 + 20 ln5 (mpmath)
BASELINE_MACRO_F1 = 0.13333333333333333  # (2 * 0.5 * 1 / 1.5) / 5

SMALL = {
    "dataset": {"synthetic": {"num_families": 10, "image_size": 16, "seed": 5}},
    "folds": 5,
    "fold_indices": [0, 3],
    "schedule": {"phase1_epochs": 2, "phase2_epochs": 1, "batch_size": 32, "lr": 0.001, "seed": 1},
    "backbone": {"input_size": [16, 16, 3], "stage_channel_widths": [4, 4, 4], "head_hidden": 8},
}


def _manifest(per_type):
    records = []
    for kin, n in zip(KIN_TYPES, per_type):
        for fam in range(n):
            for role in ("p", "c"):
                iid = f"{kin.short}_{fam:04d}_{role}"
                records.append(ImageRecord(iid, iid, kin, fam, role))
    return Manifest(records).validate()


def _cli(*argv):
    code = cli.main([str(a) for a in argv])
    assert code == 0, f"kinjoint {' '.join(map(str, argv))} exited {code}"


def _write(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    worst = {}
    for name, build in CASES.items():
        rng = np.random.default_rng(sum(map(ord, name)))
        errs = [finite_diff_check(*build(rng), h=1e-5) for _ in range(100)]
        worst[name] = max(errs) if not any(math.isnan(e) for e in errs) else float("nan")
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not bad and elapsed < 120 and "joint_loss" in worst
    verdict(1, "finite-difference gradients", ok,
            f"{len(worst)} ops x 100 cases, max rel err {max(worst.values()):.2e}, {elapsed:.1f}s"
            + (f", failing {bad}" if bad else ""))


def test_criterion_2_decision_oracles(verdict):
    rng = np.random.default_rng(12345)
    heads = random_heads(rng, 100_000)
    o = joint.build_joint_output(heads)
    ident = joint.identify_class(o)
    ens = joint.ensemble_decision(heads)
    mismatches = 0
    for i in range(len(heads)):
        h = heads[i].tolist()
        ro = ref_joint_output(h)
        mismatches += (o[i].tolist() != ro) + (ident[i] != ref_identify(ro)) + (ens[i] != ref_ensemble(h))
    boundary = joint.ensemble_decision([(0.5, 0.5), (0.8, 0.2), (0.8, 0.2), (0.8, 0.2)]) == 1
    verdict(2, "joint output / identify / ensemble oracles", mismatches == 0 and boundary,
            f"{len(heads)} head sets, {mismatches} mismatches, max p = 0.5 routes to argmax: {bool(boundary)}")


def test_criterion_3_protocol_combinatorics(verdict):
    m = _manifest([200, 0, 0, 0])
    real = gen_real_scenario_set(m, m.families)
    big = (len(real), sum(1 for s in real if s.label))
    m2 = _manifest([2, 0, 0, 0])
    real2 = gen_real_scenario_set(m2, m2.families)
    small = (len(real2), sum(1 for s in real2 if s.label))
    hist_ok = True
    for n in (2, 7, 50):
        mm = _manifest([n] * 4)
        hist_ok &= label_histogram(gen_mixed_set(mm, mm.families, seed=n)) == [4 * n, n, n, n, n]
    rng = np.random.default_rng(99)
    disjoint = True
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        per_type = rng.integers(k, 3 * k + 1, size=4).tolist()
        mm = _manifest(per_type)
        folds = make_folds(mm, k, int(rng.integers(0, 2**31)))
        tests = [set(folds.families(f)) for f in range(k)]
        disjoint &= sum(len(t) for t in tests) == len(mm.families) and set().union(*tests) == set(mm.families)
        disjoint &= all(not (tests[f] & set(folds.families(f, "train"))) for f in range(k))
    ok = big == (79_800, 200) and small == (6, 2) and hist_ok and disjoint
    verdict(3, "protocol combinatorics", ok,
            f"P=200 -> {big}, P=2 -> {small}, mixed histograms {hist_ok}, 1000 fold splits disjoint {disjoint}")


def test_criterion_4_metric_oracles(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10_000):
        cm = rng.integers(0, 30, size=(5, 5))
        cm[rng.random((5, 5)) < 0.2] = 0
        c = int(rng.integers(0, 5))
        beta = float(rng.choice([1.0, 10.0, rng.uniform(0.1, 20)]))
        worst = max(worst, abs(metrics.f_beta(cm, c, beta) - ref_f_beta(cm.tolist(), c, beta)))
    n = 50
    labels = np.repeat(np.arange(5), [4 * n, n, n, n, n])
    rep = metrics.report(metrics.confusion(np.zeros_like(labels), labels))
    ok = worst < 1e-9 and rep.accuracy == 0.5 and abs(rep.macro_f1 - BASELINE_MACRO_F1) < 1e-3
    verdict(4, "metric oracles", ok,
            f"f_beta max abs err {worst:.1e}, baseline accuracy {rep.accuracy}, macro F1 {rep.macro_f1:.4f}")


def test_criterion_5_loss_closed_form(verdict):
    from kinjoint.engine import tensor as T

    heads = [T.Tensor([[0.5, 0.5]]) for _ in range(4)]
    value = joint.joint_loss(heads, joint.joint_output_tensor(heads), [2], joint.LossWeights()).item()
    verdict(5, "joint loss closed form", abs(value - LOSS_EXAMPLE) < 1e-3,
            f"{value:.6f} vs 8ln2 + 0.75ln2 + 20ln5 = {LOSS_EXAMPLE:.6f}")


@pytest.mark.slow
def test_criterion_6_synthetic_replication(verdict, tmp_path):
    start = time.perf_counter()
    scores = {}
    for method in ("jlnet_full", "ensemble_star"):
        argv = ("--config", PUBLISHED_CONFIG, "--method", method, "--out", tmp_path / "runs")
        _cli("train", *argv)
        _cli("evaluate", *argv)
        cfg = load_config(PUBLISHED_CONFIG, [f"method={method}", f"output_dir={json.dumps(str(tmp_path / 'runs'))}"])
        scores[method] = json.loads((eval_dir(cfg) / "metrics.json").read_text())["metrics"]["macro_f1"]
    elapsed = time.perf_counter() - start
    ok = scores["jlnet_full"] >= 0.30 and scores["jlnet_full"] > scores["ensemble_star"] and elapsed < 600
    verdict(6, "synthetic mixed-set ordering", ok,
            f"macro F1 JLNet(full) {scores['jlnet_full']:.4f} vs Ensemble Net* {scores['ensemble_star']:.4f}, "
            f"baseline {BASELINE_MACRO_F1:.4f}, {elapsed:.0f}s")


def _checkpoint_body(path):
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header = json.loads(raw[len(MAGIC) + 8: len(MAGIC) + 8 + hlen])
    header.pop("meta")
    return header, raw[len(MAGIC) + 8 + hlen:]


def test_criterion_7_ablation_contract(verdict, tmp_path):
    out = json.dumps(str(tmp_path / "runs"))
    base = _write(tmp_path / "base.json", SMALL)
    no_phase2 = ["schedule.phase2_epochs=0", "loss_weights.lambdas=[1,1,1,1,0]", f"output_dir={out}"]
    bodies = {}
    for method in ("jlnet_full", "jlnet_dagger"):
        cfg = load_config(base, no_phase2 + [f"method={method}"])
        _cli("train", "--config", base, "--method", method, *sum((["--override", o] for o in no_phase2), []))
        bodies[method] = [_checkpoint_body(checkpoint_path(cfg.run_dir(), f)) for f in cfg.run_folds]
    identical = bodies["jlnet_full"] == bodies["jlnet_dagger"]

    # JLNet-double-dagger predictions against identify_class on the trained JLNet
    full = load_config(base, [f"output_dir={out}"])
    dd = load_config(base, [f"output_dir={out}", "method=jlnet_ddagger"])
    _cli("train", "--config", base, "--override", f"output_dir={out}")
    _cli("evaluate", "--config", base, "--override", f"output_dir={out}", "--method", "jlnet_ddagger")
    dataset = load_dataset(full)
    checked = agree = 0
    for fold in full.run_folds:
        samples = evaluation_samples(full, dataset, fold)
        pred = predict_samples(Method.JLNET_FULL, load_trained(full, fold), samples, dataset.images)
        expected = joint.identify_class(pred.joint)
        rows = (eval_dir(dd) / f"fold{fold}_predictions.csv").read_text().splitlines()[1:]
        got = np.array([int(r.split(",")[4]) for r in rows])
        checked += len(expected)
        agree += int(np.sum(got == expected))
    ok = identical and checked > 0 and agree == checked
    verdict(7, "ablation contract", ok,
            f"dagger/full checkpoints identical: {identical}; double-dagger = identify_class on {agree}/{checked} samples")


def _outputs(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.suffix in (".csv", ".json")}


def test_criterion_8_determinism(verdict, tmp_path):
    cfg = dict(SMALL, augment={"enabled": True})
    base = _write(tmp_path / "det.json", cfg)
    runs = []
    for rep in ("a", "b"):
        root = tmp_path / rep
        for method in ("jlnet_full", "ensemble"):
            _cli("train", "--config", base, "--method", method, "--out", root)
            for protocol in ("mixed", "real"):
                _cli("evaluate", "--config", base, "--method", method, "--protocol", protocol, "--out", root)
        runs.append(_outputs(root))
    same = runs[0] == runs[1] and len(runs[0]) > 0
    diff = sorted(k for k in set(runs[0]) | set(runs[1]) if runs[0].get(k) != runs[1].get(k))
    verdict(8, "byte-identical reruns", same, f"{len(runs[0])} CSV/JSON files compared" + (f", differing {diff[:3]}" if diff else ""))
