"""Synthetic families standing in for KinFaceW-style face pairs.

Each family draws a latent genome ``g ~ N(0, I)``. The parent is rendered from
``g``; the child from ``0.5 g + 0.5 n`` with fresh noise ``n``, rescaled to
unit variance. Rendering is a fixed smooth random projection of the genome to
pixels plus a gender pattern with sign +1 for male and -1 for female, so
father-son and mother-daughter pairs share their gender pattern. Basis images
are left-right symmetric, so horizontal flips keep identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import zoom

from ..models import KIN_TYPES, KinType
from .manifest import ImageRecord, Manifest

# (parent is male, child is male)
GENDERS = {KinType.FD: (1, -1), KinType.FS: (1, 1), KinType.MD: (-1, -1), KinType.MS: (-1, 1)}


@dataclass
class SynthConfig:
    num_families: int = 100  # per kin type
    kin_types: list = field(default_factory=lambda: ["fd", "fs", "md", "ms"])
    image_size: int = 16
    genome_dim: int = 12
    identity_strength: float = 1.2
    gender_strength: float = 0.8
    pixel_noise: float = 0.03
    seed: int = 0


@dataclass
class SynthData:
    manifest: Manifest
    images: dict
    genomes: dict  # image_id -> genome vector


def _smooth_basis(rng, count, size, coarse=4):
    out = []
    for _ in range(count):
        raw = rng.standard_normal((coarse, coarse, 3))
        img = zoom(raw, (size / coarse, size / coarse, 1), order=3)
        img = 0.5 * (img + img[:, ::-1])
        img -= img.mean()
        out.append(img / img.std())
    return np.stack(out)


def render(genome, gender, basis, gender_pattern, config, rng):
    latent = np.tensordot(genome, basis, axes=1) / np.sqrt(len(genome))
    signal = config.identity_strength * latent + config.gender_strength * gender * gender_pattern
    img = 0.5 + 0.5 * np.tanh(0.5 * signal)
    img = img + config.pixel_noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_families(config=None, **overrides):
    config = replace(config or SynthConfig(), **overrides)
    kin_types = [KinType.parse(k) for k in config.kin_types]
    if config.num_families < 5:
        raise ValueError(f"need at least 5 families per kin type, got {config.num_families}")
    if config.image_size < 8 or config.genome_dim < 1:
        raise ValueError(f"image_size {config.image_size} too small to encode a genome")
    ss = np.random.SeedSequence(config.seed)
    proj_seq, fam_seq = ss.spawn(2)
    proj_rng = np.random.default_rng(proj_seq)
    basis = _smooth_basis(proj_rng, config.genome_dim, config.image_size)
    gender_pattern = _smooth_basis(proj_rng, 1, config.image_size)[0]

    records, images, genomes = [], {}, {}
    for kin, seq in zip(KIN_TYPES, fam_seq.spawn(len(KIN_TYPES))):
        if kin not in kin_types:
            continue
        rng = np.random.default_rng(seq)
        pg, cg = GENDERS[kin]
        for fam in range(config.num_families):
            g = rng.standard_normal(config.genome_dim)
            child = (0.5 * g + 0.5 * rng.standard_normal(config.genome_dim)) * np.sqrt(2.0)
            for role, genome, gender in (("p", g, pg), ("c", child, cg)):
                image_id = f"{kin.short}_{fam:04d}_{role}"
                records.append(ImageRecord(image_id, f"images/{kin.short}/{image_id}.png", kin, fam, role))
                images[image_id] = render(genome, gender, basis, gender_pattern, config, rng)
                genomes[image_id] = genome
    manifest = Manifest(records, f"synthetic-{config.seed}").validate()
    return SynthData(manifest, images, genomes)
