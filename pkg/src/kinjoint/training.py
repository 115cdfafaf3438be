"""Training procedures and prediction routing for the six compared methods."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import joint
from .data.augment import AugmentConfig, augment
from .engine import tensor as T
from .engine.optim import Adam
from .models import EnsembleNet, JLNet, KinType, MulticlassNet, VerificationNet


class Method(str, Enum):
    ENSEMBLE_STAR = "ensemble_star"
    ENSEMBLE = "ensemble"
    MULTICLASS = "multiclass"
    JLNET_DAGGER = "jlnet_dagger"
    JLNET_DDAGGER = "jlnet_ddagger"
    JLNET_FULL = "jlnet_full"

    @property
    def display(self):
        return {
            "ensemble_star": "Ensemble Net*",
            "ensemble": "Ensemble Net",
            "multiclass": "Multi-class Net",
            "jlnet_dagger": "JLNet†",
            "jlnet_ddagger": "JLNet‡",
            "jlnet_full": "JLNet(full)",
        }[self.value]

    @property
    def family(self):
        """Which network the method trains: 'ensemble', 'multiclass' or 'jlnet'."""
        if self in (Method.ENSEMBLE_STAR, Method.ENSEMBLE):
            return "ensemble"
        if self is Method.MULTICLASS:
            return "multiclass"
        return "jlnet"


@dataclass
class TrainSchedule:
    phase1_epochs: int = 10
    phase2_epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-4
    seed: int = 0

    @property
    def total_epochs(self):
        return self.phase1_epochs + self.phase2_epochs

    def validate(self):
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        return self


@dataclass
class TrainResult:
    method: Method
    model: object
    optimizers: list
    log: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)


def _seed_int(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def iterate_batches(samples, images, batch_size, seed, epoch, augment_config=None):
    """Yield (parents, children, labels) with a seeded per-epoch shuffle.

    Augmentation seeds depend on (seed, epoch, sample index, slot) only, so the
    stream is reproducible and independent of batch size.
    """
    order = np.random.default_rng([int(seed), int(epoch)]).permutation(len(samples))
    use_aug = augment_config is not None and augment_config.enabled
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        parents, children, labels = [], [], []
        for i in idx:
            s = samples[i]
            p, c = images[s.parent_ref], images[s.child_ref]
            if use_aug:
                p = augment(p, _seed_int(seed, epoch, i, 0), augment_config)
                c = augment(c, _seed_int(seed, epoch, i, 1), augment_config)
            parents.append(p)
            children.append(c)
            labels.append(s.label)
        yield np.stack(parents), np.stack(children), np.asarray(labels, dtype=np.int64)


def _require(samples):
    if not samples:
        raise ValueError("empty training set")


def _mean_rows(rows):
    keys = rows[0].keys()
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if r[k] is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def jlnet_batch_loss(model, parents, children, labels, weights, identification=True):
    w = weights
    if not identification and w.lambdas[4] != 0:
        w = joint.LossWeights(**{**vars(weights), "lambdas": list(weights.lambdas[:4]) + [0.0]})
    heads = model(parents, children)
    o = joint.joint_output_tensor(heads)
    return joint.joint_loss(heads, o, labels, w, return_terms=True)


def train_jlnet(samples, images, schedule, weights, backbone, use_identification=True,
                augment_config=None, model=None):
    """Two-phase JLNet training.

    Phase 1 minimises the four verification losses; phase 2 adds the
    identification loss on the joint output. With ``use_identification=False``
    phase 2 keeps the verification-only objective (the JLNet-dagger ablation).
    One Adam state spans both phases.
    """
    _require(samples)
    schedule.validate()
    weights.validate()
    model = model or JLNet(backbone, seed=schedule.seed)
    opt = Adam(model.named_parameters(), lr=schedule.lr)
    result = TrainResult(Method.JLNET_FULL if use_identification else Method.JLNET_DAGGER, model, [opt])
    epoch = 0
    for phase, n_epochs in ((1, schedule.phase1_epochs), (2, schedule.phase2_epochs)):
        identification = phase == 2 and use_identification
        for _ in range(n_epochs):
            rows = []
            for parents, children, labels in iterate_batches(
                samples, images, schedule.batch_size, schedule.seed, epoch, augment_config
            ):
                opt.zero_grad()
                loss, terms = jlnet_batch_loss(model, parents, children, labels, weights, identification)
                loss.backward()
                opt.step()
                row = {"loss": loss.item()}
                for n in range(1, 5):
                    row[f"verification_{n}"] = terms[f"verification_{n}"].item()
                row["identification"] = terms["identification"].item() if "identification" in terms else None
                rows.append(row)
            result.log.append({"epoch": epoch, "phase": phase, **_mean_rows(rows)})
            epoch += 1
        result.snapshots[f"phase{phase}"] = model.state_dict()
    return result


def _train_single(model, samples, images, schedule, class_weights, augment_config, member=None):
    opt = Adam(model.named_parameters(), lr=schedule.lr)
    log = []
    for epoch in range(schedule.total_epochs):
        losses = []
        for parents, children, labels in iterate_batches(
            samples, images, schedule.batch_size, schedule.seed, epoch, augment_config
        ):
            if member is not None:
                labels = joint.binary_labels(labels, member)
            opt.zero_grad()
            probs = model(parents, children)[0]
            loss = T.weighted_cross_entropy(probs, labels, class_weights)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        row = {"epoch": epoch, "phase": 1, "loss": float(np.mean(losses))}
        if member is not None:
            row["member"] = member
        log.append(row)
    return opt, log


def train_ensemble_net(data, images, schedule, weights, backbone, independent, augment_config=None):
    """Four separately parameterised verification networks.

    ``independent=True`` expects ``data`` as {kin code: samples} (balanced
    per-type sets, Ensemble Net*); otherwise ``data`` is one mixed sample list
    that every member sees in the same order, with binary labels derived per
    member (Ensemble Net).
    """
    schedule.validate()
    weights.validate()
    model = EnsembleNet(backbone, seed=schedule.seed)
    method = Method.ENSEMBLE_STAR if independent else Method.ENSEMBLE
    result = TrainResult(method, model, [])
    for n, member in enumerate(model.members, start=1):
        if independent:
            subset = data.get(n) or data.get(KinType(n)) or []
            _require(subset)
            # per-type sets already carry labels {0, n}
            subset = [s.__class__(s.parent_ref, s.child_ref, int(s.label == n), s.protocol, s.kin) for s in subset]
            opt, log = _train_single(member, subset, images, schedule, weights.independent_class_weights, augment_config)
            for row in log:
                row["member"] = n
        else:
            _require(data)
            opt, log = _train_single(
                member, data, images, schedule, weights.verification_class_weights, augment_config, member=n
            )
        result.optimizers.append(opt)
        result.log.extend(log)
    result.snapshots["final"] = model.state_dict()
    return result


def train_multiclass(samples, images, schedule, weights, backbone, augment_config=None):
    _require(samples)
    schedule.validate()
    weights.validate()
    model = MulticlassNet(backbone, seed=schedule.seed)
    opt, log = _train_single(model, samples, images, schedule, weights.multiclass_class_weights, augment_config)
    result = TrainResult(Method.MULTICLASS, model, [opt], log)
    result.snapshots["final"] = model.state_dict()
    return result


def build_model(method, backbone, seed=0):
    method = Method(method)
    if method.family == "ensemble":
        return EnsembleNet(backbone, seed=seed)
    if method.family == "multiclass":
        return MulticlassNet(backbone, seed=seed)
    return JLNet(backbone, seed=seed)


# prediction

@dataclass
class Prediction:
    classes: np.ndarray  # (N,) predicted class
    probs: np.ndarray  # (N, 5) distribution behind the decision
    heads: np.ndarray = None  # (N, 4, 2) head outputs when the model has them
    joint: np.ndarray = None  # (N, 5) joint output for JLNet models


def decide(method, heads=None, multiclass_probs=None):
    """Route network outputs to the decision rule of ``method``."""
    method = Method(method)
    if method is Method.MULTICLASS:
        probs = np.asarray(multiclass_probs, dtype=np.float64)
        return Prediction(np.argmax(probs, axis=-1), probs)
    heads = np.asarray(heads, dtype=np.float64)
    o = joint.build_joint_output(heads)
    if method in (Method.ENSEMBLE, Method.ENSEMBLE_STAR, Method.JLNET_DAGGER):
        return Prediction(joint.ensemble_decision(heads), joint.ensemble_distribution(heads), heads, o)
    if method is Method.JLNET_DDAGGER:
        return Prediction(joint.identify_class(o), joint.softmax_np(o), heads, o)
    return Prediction(joint.combined_decision(heads, o), joint.combined_distribution(heads, o), heads, o)


def _networks(model):
    return model.members if isinstance(model, EnsembleNet) else [model]


def predict_samples(method, model, samples, images, batch_size=256):
    """Predict every sample, computing trunk features once per distinct image."""
    method = Method(method)
    if model is None:
        raise ValueError("predict: no trained model")
    ids = sorted({s.parent_ref for s in samples} | {s.child_ref for s in samples})
    pos = {image_id: i for i, image_id in enumerate(ids)}
    pi = np.array([pos[s.parent_ref] for s in samples], dtype=np.int64)
    ci = np.array([pos[s.child_ref] for s in samples], dtype=np.int64)
    outputs = []
    with T.no_grad():
        for net in _networks(model):
            feats = []
            for start in range(0, len(ids), batch_size):
                chunk = np.stack([images[k] for k in ids[start : start + batch_size]])
                feats.append(net.trunk_features(chunk).data)
            feats = np.concatenate(feats) if feats else np.zeros((0,))
            per_head = [[] for _ in net.branches]
            for start in range(0, len(samples), batch_size):
                sl = slice(start, start + batch_size)
                fused = net.fuse(T.Tensor(feats[pi[sl]]), T.Tensor(feats[ci[sl]]))
                for h, p in enumerate(net.head_probs(fused)):
                    per_head[h].append(p.data)
            outputs.extend(np.concatenate(h) for h in per_head)
    if method is Method.MULTICLASS:
        return decide(method, multiclass_probs=outputs[0])
    return decide(method, heads=np.stack(outputs, axis=1))


def predict(method, model, parent_image, child_image):
    """Class for a single pair."""
    from .data.protocols import PairSample

    images = {"p": np.asarray(parent_image), "c": np.asarray(child_image)}
    return int(predict_samples(method, model, [PairSample("p", "c", 0, "")], images).classes[0])


def verification_decision(method, prediction, kin):
    """Binary verdict for kin type ``kin`` from a :class:`Prediction`.

    Head-based methods read the matching head's positive probability (>= 0.5);
    JLNet-double-dagger and Multi-class Net check whether the five-way decision
    picked ``kin``.
    """
    method = Method(method)
    kin = int(kin)
    if method in (Method.MULTICLASS, Method.JLNET_DDAGGER):
        return prediction.classes == kin
    return prediction.heads[:, kin - 1, 1] >= 0.5

