"""Fold splitting and the three pair-set protocols.

Every generator is a pure function of its arguments. A "family" is the key
``(kin_code, family_index)``; folds partition families, never single images.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..models import KIN_TYPES, KinType

PROTOCOLS = ("independent", "mixed", "real")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class PairSample:
    parent_ref: str
    child_ref: str
    label: int
    protocol: str
    kin: int = 0  # kin-type distribution the pair was drawn from (0 when mixed)


@dataclass
class FoldSplit:
    k: int
    fold_assignments: dict

    def families(self, fold, part="test"):
        if not 0 <= fold < self.k:
            raise ValueError(f"fold {fold} outside 0..{self.k - 1}")
        if part == "test":
            return sorted(f for f, a in self.fold_assignments.items() if a == fold)
        if part == "train":
            return sorted(f for f, a in self.fold_assignments.items() if a != fold)
        raise ValueError(f"part must be 'train' or 'test', got {part!r}")


def _rng(seed, *salt):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *salt]))


def make_folds(manifest, k=5, seed=0):
    """Seeded family-level k-fold assignment, balanced per kin type."""
    if k < 2:
        raise ValueError("k must be >= 2")
    assignments = {}
    for kin in KIN_TYPES:
        fams = manifest.families_of(kin)
        if not fams:
            continue
        if len(fams) < k:
            raise ProtocolError(f"{kin.label}: {len(fams)} families is fewer than k={k}")
        order = _rng(seed, int(kin)).permutation(len(fams))
        for rank, i in enumerate(order):
            assignments[fams[i]] = rank % k
    return FoldSplit(k, assignments)


def _by_kin(families, kin):
    return sorted(f for f in families if f[0] == int(kin))


def _derangement(rng, n):
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def gen_independent_set(manifest, families, kin, seed=0):
    """True pairs of one kin type plus an equal number of deranged negatives."""
    kin = KinType.parse(kin)
    fams = _by_kin(families, kin)
    if len(fams) < 2:
        raise ProtocolError(f"{kin.label}: need at least 2 families to form negatives, have {len(fams)}")
    pairs = [manifest.pair(f) for f in fams]
    samples = [PairSample(p.image_id, c.image_id, int(kin), "independent", int(kin)) for p, c in pairs]
    perm = _derangement(_rng(seed, 1, int(kin)), len(pairs))
    for i, j in enumerate(perm):
        samples.append(PairSample(pairs[i][0].image_id, pairs[j][1].image_id, 0, "independent", int(kin)))
    return samples


def gen_mixed_set(manifest, families, seed=0):
    """All true pairs of every type plus as many unrelated same-type pairs.

    With N families per type the label histogram is [4N, N, N, N, N].
    """
    samples = []
    present = [kin for kin in KIN_TYPES if _by_kin(families, kin)]
    if len(present) != len(KIN_TYPES):
        missing = [k.label for k in KIN_TYPES if k not in present]
        raise ProtocolError(f"mixed set needs all four kin types; missing {missing}")
    for kin in KIN_TYPES:
        pairs = [manifest.pair(f) for f in _by_kin(families, kin)]
        n = len(pairs)
        samples.extend(PairSample(p.image_id, c.image_id, int(kin), "mixed", int(kin)) for p, c in pairs)
        candidates = n * (n - 1)
        if candidates < n:
            raise ProtocolError(f"{kin.label}: {n} families cannot supply {n} distinct negatives")
        # flat index over off-diagonal (parent i, child j) combinations
        picks = np.sort(_rng(seed, 2, int(kin)).choice(candidates, size=n, replace=False))
        for flat in picks:
            i, r = divmod(int(flat), n - 1)
            j = r if r < i else r + 1
            samples.append(PairSample(pairs[i][0].image_id, pairs[j][1].image_id, 0, "mixed", int(kin)))
    return samples


def gen_real_scenario_set(manifest, families):
    """Every unordered pair of the fold's images; only true parent-child pairs are positive.

    A parent/child pair puts the parent in the parent slot; any other pair puts
    the lexicographically smaller image id there.
    """
    fams = sorted(families)
    if not fams:
        raise ProtocolError("real-scenario set needs a non-empty fold")
    records = sorted((r for f in fams for r in manifest.pair(f)), key=lambda r: r.image_id)
    samples = []
    for a, b in combinations(records, 2):
        if a.role == "c" and b.role == "p":
            a, b = b, a
        label = int(a.kin_type) if (a.role == "p" and b.role == "c" and a.family == b.family) else 0
        samples.append(PairSample(a.image_id, b.image_id, label, "real", 0))
    return samples


def label_histogram(samples):
    hist = [0] * 5
    for s in samples:
        hist[s.label] += 1
    return hist


def validate_labels(manifest, samples):
    """Raise if any sample's label disagrees with the manifest ground truth."""
    for s in samples:
        p, c = manifest.record(s.parent_ref), manifest.record(s.child_ref)
        truth = int(p.kin_type) if (p.role == "p" and c.role == "c" and p.family == c.family) else 0
        if truth != s.label:
            raise ProtocolError(f"label {s.label} for ({s.parent_ref}, {s.child_ref}) should be {truth}")
