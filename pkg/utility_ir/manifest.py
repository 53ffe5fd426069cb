"""
Dataset manifest: the CSV index of paired (degraded, clean) images.

Header is ``degraded,clean,kind,severity,seed``; paths are stored relative to
the manifest's directory so a corpus can be moved as one folder.
"""
import csv
import hashlib
import io
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .errors import DataError
from .imaging import list_images

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ["degraded", "clean", "kind", "severity", "seed"]
MANIFEST_NAME = "manifest.csv"
WEATHER_KINDS = ("rain_streak", "haze", "snow", "raindrop")


@dataclass(frozen=True)
class ManifestRow:
    """One paired sample; paths relative to the manifest root"""
    degraded: str
    clean: str
    kind: str
    severity: float
    seed: int


@dataclass
class DatasetManifest:
    """Rows of paired samples plus the directory their paths are relative to"""
    root: str
    rows: List[ManifestRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def path(self, relative: str) -> str:
        return os.path.join(self.root, relative)

    def kinds(self) -> List[str]:
        """Kinds present, in the canonical weather order"""
        present = {row.kind for row in self.rows}
        return [kind for kind in WEATHER_KINDS if kind in present]

    def indices_by_kind(self) -> Dict[str, List[int]]:
        groups: Dict[str, List[int]] = {kind: [] for kind in self.kinds()}
        for i, row in enumerate(self.rows):
            groups[row.kind].append(i)
        return groups

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for row in self.rows:
            writer.writerow([row.degraded, row.clean, row.kind, repr(float(row.severity)), str(row.seed)])
        return buffer.getvalue()

    def digest(self) -> str:
        """SHA-256 of the serialized manifest; stable across reruns"""
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()

    def save(self, path: Optional[str] = None) -> str:
        path = path or os.path.join(self.root, MANIFEST_NAME)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())
        logger.info(f"✅ Wrote manifest with {len(self.rows)} rows to {path}")
        return path

    def validate(self, check_files: bool = True) -> "DatasetManifest":
        """Check kinds, severities and (optionally) that every referenced file exists"""
        if not self.rows:
            raise DataError(f"Manifest under {self.root} has no rows")
        for i, row in enumerate(self.rows, start=1):
            if row.kind not in WEATHER_KINDS:
                raise DataError(f"Row {i}: unknown weather kind '{row.kind}'")
            if not 0.0 <= row.severity <= 1.0:
                raise DataError(f"Row {i}: severity {row.severity} outside [0, 1]")
            if check_files:
                for relative in (row.degraded, row.clean):
                    if not os.path.isfile(self.path(relative)):
                        raise DataError(f"Row {i}: missing file {self.path(relative)}")
        return self


def load_manifest(path: str, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest CSV"""
    if not os.path.isfile(path):
        raise DataError(f"Manifest not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DataError(f"Malformed manifest header in {path}: {header}")
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(MANIFEST_HEADER):
                raise DataError(f"{path}:{line_no}: expected 5 fields, got {len(record)}")
            try:
                rows.append(ManifestRow(record[0], record[1], record[2], float(record[3]), int(record[4])))
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
    manifest = DatasetManifest(root=os.path.dirname(os.path.abspath(path)), rows=rows)
    return manifest.validate(check_files=check_files)


def pair_directories(degraded_dir: str, clean_dir: str, kind: str, out_path: str) -> DatasetManifest:
    """Build a manifest from two directories of same-named images (real paired datasets).

    Severity is unknown for real data and recorded as 0.
    """
    root = os.path.dirname(os.path.abspath(out_path))
    clean_by_name = {os.path.basename(path): path for path in list_images(clean_dir)}
    rows = []
    for degraded in list_images(degraded_dir):
        name = os.path.basename(degraded)
        if name not in clean_by_name:
            logger.warning(f"⚠️  No clean counterpart for {name}, skipping")
            continue
        rows.append(
            ManifestRow(os.path.relpath(degraded, root), os.path.relpath(clean_by_name[name], root), kind, 0.0, 0)
        )
    manifest = DatasetManifest(root=root, rows=rows).validate()
    manifest.save(out_path)
    return manifest


__all__ = [
    "MANIFEST_HEADER",
    "WEATHER_KINDS",
    "ManifestRow",
    "DatasetManifest",
    "load_manifest",
    "pair_directories",
]
