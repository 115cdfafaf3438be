"""Manifest CSV ingestion and image loading."""
from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..models import KinType

COLUMNS = ["image_id", "path", "kin_type", "family_index", "role"]
ROLES = {"p": "parent", "c": "child"}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    kin_type: KinType
    family_index: int
    role: str  # "p" or "c"

    @property
    def family(self):
        return (int(self.kin_type), self.family_index)


@dataclass
class Manifest:
    records: list
    dataset_name: str = ""
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self._by_id = {r.image_id: r for r in self.records}
        self._pairs = {}
        for r in self.records:
            self._pairs.setdefault(r.family, {})[r.role] = r

    def __len__(self):
        return len(self.records)

    def record(self, image_id):
        return self._by_id[image_id]

    @property
    def families(self):
        """Sorted (kin_code, family_index) keys."""
        return sorted(self._pairs)

    def families_of(self, kin):
        kin = int(KinType.parse(kin))
        return [f for f in self.families if f[0] == kin]

    def pair(self, family):
        """(parent record, child record) of a family."""
        entry = self._pairs[family]
        return entry["p"], entry["c"]

    def validate(self):
        if not self.records:
            raise ManifestError("no records")
        dupes = [k for k, v in Counter(r.image_id for r in self.records).items() if v > 1]
        if dupes:
            raise ManifestError(f"duplicate image ids: {dupes[:5]}")
        for fam, roles in self._pairs.items():
            if set(roles) != {"p", "c"}:
                raise ManifestError(f"family {fam} must have one parent and one child, has {sorted(roles)}")
        counts = Counter((r.family, r.role) for r in self.records)
        bad = [k for k, v in counts.items() if v > 1]
        if bad:
            raise ManifestError(f"family/role listed more than once: {bad[:5]}")
        return self


def load_manifest(path, dataset_name=None):
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    seen = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ManifestError("no records")
        if [h.strip() for h in header] != COLUMNS:
            raise ManifestError(f"row 1: expected header {COLUMNS}, got {header}")
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(COLUMNS):
                raise ManifestError(f"row {rowno}: expected {len(COLUMNS)} fields, got {len(row)}")
            image_id, rel, kin, fam, role = (c.strip() for c in row)
            try:
                kin_type = KinType.parse(kin)
                family_index = int(fam)
            except ValueError as exc:
                raise ManifestError(f"row {rowno}: {exc}") from None
            if role not in ROLES:
                raise ManifestError(f"row {rowno}: role must be 'p' or 'c', got {role!r}")
            if image_id in seen:
                raise ManifestError(f"row {rowno}: duplicate image id {image_id!r} (first on row {seen[image_id]})")
            seen[image_id] = rowno
            records.append(ImageRecord(image_id, rel, kin_type, family_index, role))
    if not records:
        raise ManifestError("no records")
    manifest = Manifest(records, dataset_name or path.stem, path.parent)
    try:
        return manifest.validate()
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def write_manifest(manifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in manifest.records:
            writer.writerow([r.image_id, r.path, r.kin_type.short, r.family_index, r.role])
    return path


_KFW_DIRS = {
    "father-dau": KinType.FD,
    "father-son": KinType.FS,
    "mother-dau": KinType.MD,
    "mother-son": KinType.MS,
}
_KFW_NAME = re.compile(r"^[a-z]+_(\d+)_([12])\.(jpg|jpeg|png|bmp)$", re.IGNORECASE)


def scan_kinfacew_dir(root, dataset_name="KinFaceW"):
    """Build a manifest from the conventional KinFaceW folder layout.

    Expects ``root/<father-dau|father-son|mother-dau|mother-son>/`` with files
    named ``<prefix>_<family>_<1|2>.<ext>``, where ``_1`` is the parent and
    ``_2`` the child. Files that do not match are skipped.
    """
    root = Path(root)
    records = []
    for folder, kin in _KFW_DIRS.items():
        d = root / folder
        if not d.is_dir():
            continue
        for f in sorted(d.iterdir()):
            m = _KFW_NAME.match(f.name)
            if not m:
                continue
            fam, slot = int(m.group(1)), m.group(2)
            role = "p" if slot == "1" else "c"
            image_id = f"{kin.short}_{fam:04d}_{role}"
            records.append(ImageRecord(image_id, str(f.relative_to(root)), kin, fam, role))
    return Manifest(records, dataset_name, root).validate()


def load_image(path, size):
    """Read an 8-bit RGB image, resize to ``size`` = (H, W), scale to [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        h, w = size
        if im.size != (w, h):
            im = im.resize((w, h), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


def load_images(manifest, size):
    """Map image_id -> H x W x 3 float array for every manifest record."""
    return {r.image_id: load_image(manifest.root / r.path, size) for r in manifest.records}


def save_image(array, path):
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(array) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    return path
