"""Dataset ingestion, folds, pair-set protocols, augmentation, synthetic families."""
from .augment import AugmentConfig, AugmentPlan, apply_plan, augment, plan_augmentation
from .manifest import (
    ImageRecord,
    Manifest,
    ManifestError,
    load_image,
    load_images,
    load_manifest,
    save_image,
    scan_kinfacew_dir,
    write_manifest,
)
from .protocols import (
    PROTOCOLS,
    FoldSplit,
    PairSample,
    ProtocolError,
    gen_independent_set,
    gen_mixed_set,
    gen_real_scenario_set,
    label_histogram,
    make_folds,
    validate_labels,
)
from .synth import SynthConfig, SynthData, synth_families
