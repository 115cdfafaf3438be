import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinjoint.data.augment import AugmentConfig, augment, plan_augmentation
from kinjoint.data.manifest import (
    ImageRecord,
    Manifest,
    ManifestError,
    load_images,
    load_manifest,
    save_image,
    scan_kinfacew_dir,
    write_manifest,
)
from kinjoint.data.protocols import (
    ProtocolError,
    gen_independent_set,
    gen_mixed_set,
    gen_real_scenario_set,
    label_histogram,
    make_folds,
    validate_labels,
)
from kinjoint.data.synth import SynthConfig, synth_families
from kinjoint.models import KIN_TYPES, KinType


def make_manifest(per_type):
    """Image-free manifest with ``per_type[k]`` families for kin type k+1."""
    if isinstance(per_type, int):
        per_type = [per_type] * 4
    records = []
    for kin, n in zip(KIN_TYPES, per_type):
        for fam in range(n):
            for role in ("p", "c"):
                iid = f"{kin.short}_{fam:04d}_{role}"
                records.append(ImageRecord(iid, f"{iid}.png", kin, fam, role))
    return Manifest(records).validate()


# manifest

def test_empty_manifest(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("")
    with pytest.raises(ManifestError, match="no records"):
        load_manifest(p)
    p.write_text("image_id,path,kin_type,family_index,role\n")
    with pytest.raises(ManifestError, match="no records"):
        load_manifest(p)


@pytest.mark.parametrize("row, msg", [
    ("a,a.png,F-D,1,x", "row 2: role"),
    ("a,a.png,X-Y,1,p", "row 2"),
    ("a,a.png,F-D,one,p", "row 2"),
    ("a,a.png,F-D,1", "row 2: expected 5 fields"),
])
def test_malformed_rows(tmp_path, row, msg):
    p = tmp_path / "m.csv"
    p.write_text("image_id,path,kin_type,family_index,role\n" + row + "\n")
    with pytest.raises(ManifestError, match=msg):
        load_manifest(p)


def test_duplicate_and_incomplete_families(tmp_path):
    p = tmp_path / "m.csv"
    head = "image_id,path,kin_type,family_index,role\n"
    p.write_text(head + "a,a.png,F-D,1,p\na,b.png,F-D,1,c\n")
    with pytest.raises(ManifestError, match="row 3: duplicate"):
        load_manifest(p)
    p.write_text(head + "a,a.png,F-D,1,p\n")
    with pytest.raises(ManifestError, match="one parent and one child"):
        load_manifest(p)


def test_manifest_counts_and_round_trip(tmp_path):
    m = make_manifest(4)
    assert len(m) == 32 and len(m.families) == 16
    write_manifest(m, tmp_path / "m.csv")
    back = load_manifest(tmp_path / "m.csv")
    assert back.records == m.records
    assert len(make_manifest(250)) == 2000


def test_scan_kinfacew_layout(tmp_path):
    img = np.full((8, 8, 3), 0.5)
    for folder, prefix in (("father-dau", "fd"), ("mother-son", "ms")):
        for fam in (1, 2):
            for slot in (1, 2):
                save_image(img, tmp_path / folder / f"{prefix}_{fam:03d}_{slot}.jpg")
    (tmp_path / "father-dau" / "notes.txt").write_text("skip me")
    m = scan_kinfacew_dir(tmp_path)
    assert len(m) == 8
    assert m.pair((1, 2))[0].path == "father-dau/fd_002_1.jpg"
    imgs = load_images(m, (4, 4))
    assert all(v.shape == (4, 4, 3) for v in imgs.values())


# folds

def test_fold_sizes_and_determinism():
    m = make_manifest(250)
    folds = make_folds(m, 5, seed=1)
    for f in range(5):
        test = folds.families(f)
        for kin in KIN_TYPES:
            assert sum(1 for fam in test if fam[0] == int(kin)) == 50
    assert make_folds(m, 5, seed=1).fold_assignments == folds.fold_assignments
    small = make_folds(make_manifest(5), 5)
    for f in range(5):
        assert len(small.families(f)) == 4
    with pytest.raises(ProtocolError):
        make_folds(make_manifest(4), 5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(5, 30), min_size=4, max_size=4), st.integers(2, 5), st.integers(0, 2**31))
def test_folds_partition_families(per_type, k, seed):
    m = make_manifest(per_type)
    folds = make_folds(m, k, seed)
    seen = set()
    for f in range(k):
        test = set(folds.families(f))
        assert not test & set(folds.families(f, "train"))
        assert not test & seen
        seen |= test
    assert seen == set(m.families)


# protocols

def test_independent_set():
    m = make_manifest(50)
    s = gen_independent_set(m, m.families, KinType.FS, seed=3)
    assert len(s) == 100
    assert label_histogram(s) == [50, 0, 50, 0, 0]
    validate_labels(m, s)
    two = make_manifest(2)
    neg = [x for x in gen_independent_set(two, two.families, "F-D") if x.label == 0]
    assert {(x.parent_ref, x.child_ref) for x in neg} == {("fd_0000_p", "fd_0001_c"), ("fd_0001_p", "fd_0000_c")}


def test_mixed_set():
    m = make_manifest(50)
    s = gen_mixed_set(m, m.families, seed=0)
    assert len(s) == 400
    assert label_histogram(s) == [200, 50, 50, 50, 50]
    assert len({(x.parent_ref, x.child_ref) for x in s}) == len(s)
    validate_labels(m, s)
    assert gen_mixed_set(m, m.families, seed=0) == s


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 12), min_size=4, max_size=4), st.integers(0, 2**31))
def test_mixed_set_properties(per_type, seed):
    m = make_manifest(per_type)
    s = gen_mixed_set(m, m.families, seed)
    assert label_histogram(s) == [sum(per_type)] + list(per_type)
    validate_labels(m, s)
    # negatives stay within their own kin type
    for x in s:
        assert x.parent_ref[:2] == x.child_ref[:2]


def test_real_scenario_counts():
    m = make_manifest([200, 0, 0, 0])
    s = gen_real_scenario_set(m, m.families)
    assert len(s) == math.comb(400, 2) == 79_800
    assert sum(1 for x in s if x.label) == 200
    two = make_manifest([2, 0, 0, 0])
    s2 = gen_real_scenario_set(two, two.families)
    assert len(s2) == 6 and label_histogram(s2) == [4, 2, 0, 0, 0]
    one = make_manifest([1, 0, 0, 0])
    s1 = gen_real_scenario_set(one, one.families)
    assert len(s1) == 1 and s1[0].label == 1 and s1[0].parent_ref == "fd_0000_p"


def test_real_scenario_labels_exhaustive():
    m = make_manifest([3, 2, 2, 1])
    s = gen_real_scenario_set(m, m.families)
    validate_labels(m, s)
    ids = sorted(r.image_id for r in m.records)
    assert {frozenset((x.parent_ref, x.child_ref)) for x in s} == {frozenset(p) for p in itertools.combinations(ids, 2)}


def test_protocol_errors():
    m = make_manifest([5, 5, 5, 0])
    with pytest.raises(ProtocolError):
        gen_mixed_set(m, m.families)
    with pytest.raises(ProtocolError):
        gen_independent_set(make_manifest(1), make_manifest(1).families, "F-D")


# augmentation

def test_identity_plan_leaves_image_unchanged():
    cfg = AugmentConfig(p_brightness=0, p_contrast=0, p_saturation=0, p_grayscale=0,
                        p_flip=0, p_perspective=0, p_crop=0)
    img = np.random.default_rng(0).random((16, 16, 3))
    assert plan_augmentation(5, cfg).is_identity
    np.testing.assert_array_equal(augment(img, 5, cfg), img)
    np.testing.assert_array_equal(augment(img, 5, AugmentConfig(enabled=False)), img)


def test_augment_range_and_determinism():
    rng = np.random.default_rng(1)
    cfg = AugmentConfig(p_perspective=0.5, p_crop=0.5)
    for i in range(10_000):
        img = rng.random((8, 8, 3))
        out = augment(img, i, cfg)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
    img = rng.random((16, 16, 3))
    np.testing.assert_array_equal(augment(img, 42), augment(img, 42))


def test_augment_rejects_bad_channels():
    with pytest.raises(ValueError):
        augment(np.zeros((4, 4)), 0)


# synthetic data

def test_synth_kinship_signal():
    data = synth_families(SynthConfig(num_families=125, seed=11))
    fams = data.manifest.families
    assert len(fams) == 500
    parents = np.stack([data.genomes[data.manifest.pair(f)[0].image_id] for f in fams])
    children = np.stack([data.genomes[data.manifest.pair(f)[1].image_id] for f in fams])

    def corr(a, b):
        a = a - a.mean(axis=1, keepdims=True)
        b = b - b.mean(axis=1, keepdims=True)
        return np.mean(np.sum(a * b, axis=1) / np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1)))

    shuffled = children[np.random.default_rng(0).permutation(len(fams))]
    assert corr(parents, children) - corr(parents, shuffled) > 0.2


def test_synth_deterministic_and_valid(tmp_path):
    a = synth_families(num_families=5, seed=3)
    b = synth_families(num_families=5, seed=3)
    for k in a.images:
        np.testing.assert_array_equal(a.images[k], b.images[k])
    assert len(a.manifest) == 40
    write_manifest(a.manifest, tmp_path / "m.csv")
    assert load_manifest(tmp_path / "m.csv").records == a.manifest.records
    assert all(0.0 <= v.min() and v.max() <= 1.0 for v in a.images.values())


def test_synth_overrides_do_not_touch_config():
    cfg = SynthConfig(num_families=6)
    synth_families(cfg, num_families=5)
    assert cfg.num_families == 6
    with pytest.raises(ValueError):
        synth_families(num_families=4)
