"""Manifest and annotation text formats.

Manifest: header line, then ``image_path,annotation_path,sequence,split``
rows; relative paths resolve against the manifest's directory.

Annotation: header ``x,y`` then one ``x,y`` pair per dot, in pixels of the
original image.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..density import DotAnnotation
from ..errors import DataError

MANIFEST_HEADER = ("image_path", "annotation_path", "sequence", "split")


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class ImageRecord:
    image_path: Path
    annotation_path: Path
    sequence_name: str
    split: Split

    @property
    def record_id(self) -> str:
        return self.image_path.stem


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    path: Path | None = None

    def by_split(self, *splits: Split) -> list[ImageRecord]:
        return [r for r in self.records if r.split in splits]

    def sequences(self, *splits: Split) -> list[str]:
        """Distinct sequence names in first-appearance order."""
        seen = {}
        for r in self.by_split(*splits) if splits else self.records:
            seen.setdefault(r.sequence_name, None)
        return list(seen)


def _parse_split(value: str, path, line) -> Split:
    try:
        return Split(value.strip().lower())
    except ValueError:
        raise DataError(f"unknown split {value!r} (expected train, val or test)", path, line) from None


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError("manifest not found", path)
    base = path.parent
    records = []
    with path.open(newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            raise DataError("empty manifest (missing header)", path, 1)
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise DataError(f"bad header {header!r}, expected {','.join(MANIFEST_HEADER)}", path, 1)
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 4:
                raise DataError(f"expected 4 fields, got {len(row)}", path, lineno)
            img, ann, seq, split = (f.strip() for f in row)
            if not img or not ann or not seq:
                raise DataError("empty field", path, lineno)
            rec = ImageRecord(base / img, base / ann, seq, _parse_split(split, path, lineno))
            if check_paths:
                for p in (rec.image_path, rec.annotation_path):
                    if not p.is_file():
                        raise DataError(f"referenced file missing: {p}", path, lineno)
            records.append(rec)
    return DatasetManifest(records, path)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            out.writerow([
                _relative(r.image_path, base), _relative(r.annotation_path, base),
                r.sequence_name, r.split.value,
            ])


def _relative(p: Path, base: Path) -> str:
    p = Path(p).resolve()
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


def load_annotation(path) -> DotAnnotation:
    path = Path(path)
    if not path.is_file():
        raise DataError("annotation file not found", path)
    pts = []
    with path.open() as fh:
        header = fh.readline()
        if header.strip().replace(" ", "") != "x,y":
            raise DataError(f"bad annotation header {header.strip()!r}, expected 'x,y'", path, 1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"expected 'x,y', got {line!r}", path, lineno)
            try:
                pts.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise DataError(f"non-numeric coordinate in {line!r}", path, lineno) from None
    return DotAnnotation(np.array(pts, dtype=np.float64).reshape(-1, 2))


def write_annotation(dots: DotAnnotation, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("x,y\n")
        for x, y in dots.points:
            fh.write(f"{float(x)!r},{float(y)!r}\n")
