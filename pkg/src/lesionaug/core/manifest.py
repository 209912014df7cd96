"""Dataset manifests: CSV files with header ``id,path,label,split``."""

from __future__ import annotations

import csv
import enum
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .image import ImageBuffer, read_image

SPLITS = ("train", "validation", "test")
HEADER = ["id", "path", "label", "split"]

# split sizes of the ISIC 2018 melanoma subset
SPLIT_PRESETS = {
    "isic2018-counts": {"train": 1686, "validation": 210, "test": 213},
}


class ManifestError(ValueError):
    pass


class DuplicateId(ManifestError):
    pass


class UnknownLabel(ManifestError):
    pass


class UnknownSplit(ManifestError):
    pass


class MissingFile(ManifestError, FileNotFoundError):
    pass


class Label(enum.Enum):
    BENIGN = "benign"
    MALIGNANT = "malignant"

    @property
    def index(self) -> int:
        return 0 if self is Label.BENIGN else 1

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise UnknownLabel(f"unknown label {text!r}") from None

    @classmethod
    def from_index(cls, i: int) -> "Label":
        return (cls.BENIGN, cls.MALIGNANT)[i]


@dataclass(frozen=True)
class Sample:
    id: str
    path: str
    label: Label
    split: str
    image: ImageBuffer | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise UnknownSplit(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple[Sample, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DuplicateId(f"duplicate sample id {rec.id!r}")
            seen.add(rec.id)

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(r.split for r in self.records)
        return {s: c.get(s, 0) for s in SPLITS}

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise UnknownSplit(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def resolve(self, sample: Sample) -> Path:
        path = self.root / sample.path
        if not path.is_file():
            raise MissingFile(f"sample {sample.id!r}: file {path} does not exist")
        return path

    def load(self, sample: Sample) -> ImageBuffer:
        if sample.image is not None:
            return sample.image
        return read_image(self.resolve(sample))

    def check_files(self) -> None:
        for rec in self.records:
            self.resolve(rec)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise ManifestError(f"{path}: header must be {','.join(HEADER)}, got {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            sid, rel, label, split = (x.strip() for x in row)
            if split not in SPLITS:
                raise UnknownSplit(f"{path}:{lineno}: unknown split {split!r}")
            records.append(Sample(sid, rel, Label.parse(label), split))
    return DatasetManifest(path.parent, records)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write ``manifest`` as CSV; record paths are written as stored (relative to root)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for rec in manifest.records:
            writer.writerow([rec.id, rec.path, rec.label.value, rec.split])
