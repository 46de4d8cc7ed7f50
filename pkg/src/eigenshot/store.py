"""Typed containers for embeddings and labels, plus file ingestion/persistence.

Two interchangeable feature file formats:

* CSV with header ``id,f0,...,f{d-1}`` -- human-auditable, values written with
  shortest round-tripping decimal repr so a CSV round trip is exact at float64.
* Binary ``.eigf`` -- magic ``EIGF``, version u32 LE, N u64 LE, d u32 LE, an id
  table (u32 LE byte length + UTF-8 bytes per id), then N*d float32 LE values
  row-major. Compact and bit-exact for float32-valued data; saving narrows
  float64 vectors to float32.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EIGF_MAGIC = b"EIGF"
EIGF_VERSION = 1


class ParseError(ValueError):
    """A file violated its declared format; nothing was loaded."""


@dataclass
class FeatureSet:
    """N feature vectors of dimension d with stable, unique sample ids.

    Immutable by convention after construction; safe to share across readers.
    """

    ids: list[str]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        if self.vectors.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")
        if len(self.ids) != self.vectors.shape[0]:
            raise ValueError(
                f"{len(self.ids)} ids but {self.vectors.shape[0]} vector rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")
        if self.vectors.size and not np.all(np.isfinite(self.vectors)):
            raise ValueError("feature vectors must be finite (no NaN/Inf)")
        self._index = {sid: i for i, sid in enumerate(self.ids)}

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    def row(self, sample_id: str) -> np.ndarray:
        return self.vectors[self._index[sample_id]]

    def index_of(self, sample_id: str) -> int:
        return self._index[sample_id]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def subset(self, ids: list[str]) -> "FeatureSet":
        """New FeatureSet with the given ids, in the given order."""
        rows = [self._index[sid] for sid in ids]
        return FeatureSet(list(ids), self.vectors[rows].copy())


@dataclass
class LabelSet:
    """Map from sample id to a class label in [0, num_classes)."""

    labels: dict[str, int]
    num_classes: int

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        for sid, lab in self.labels.items():
            if not 0 <= lab < self.num_classes:
                raise ValueError(
                    f"label {lab} for id {sid!r} outside [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.labels

    def __getitem__(self, sample_id: str) -> int:
        return self.labels[sample_id]

    def ids(self) -> list[str]:
        return list(self.labels)

    def restricted_to(self, ids) -> "LabelSet":
        kept = {sid: self.labels[sid] for sid in ids if sid in self.labels}
        return LabelSet(kept, self.num_classes)

    def check_covers(self, fs: FeatureSet) -> None:
        missing = [sid for sid in self.labels if sid not in fs]
        if missing:
            raise ValueError(f"labeled ids missing from feature set: {missing[:5]}")


@dataclass
class DatasetManifest:
    """Pointers to the files making up one dataset, plus a role tag."""

    features: Path
    role: str
    labels: Path | None = None
    assets: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.role not in ("source", "target"):
            raise ValueError(f"role must be 'source' or 'target', got {self.role!r}")


def _detect_format(path: Path) -> str:
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def load_features(path: str | Path, format: str | None = None) -> FeatureSet:
    """Load a feature file. Rejects the whole file on any malformed row."""
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "csv":
        return _load_features_csv(path)
    if fmt == "binary":
        return _load_features_binary(path)
    raise ValueError(f"unknown feature format {fmt!r}")


def save_features(fs: FeatureSet, path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "csv":
        _save_features_csv(fs, path)
    elif fmt == "binary":
        _save_features_binary(fs, path)
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def _load_features_csv(path: Path) -> FeatureSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2 or header[0] != "id":
            raise ParseError(f"{path}: header must be id,f0,...,f{{d-1}}")
        d = len(header) - 1
        expected = ["id"] + [f"f{i}" for i in range(d)]
        if header != expected:
            raise ParseError(f"{path}: malformed header {header!r}")

        ids: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for rownum, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ParseError(
                    f"{path}: row {rownum}: expected {d + 1} columns, got {len(row)}"
                )
            sid = row[0]
            if sid in seen:
                raise ParseError(f"{path}: row {rownum}: duplicate id {sid!r}")
            seen.add(sid)
            try:
                values = [float(tok) for tok in row[1:]]
            except ValueError:
                raise ParseError(f"{path}: row {rownum}: non-numeric value") from None
            if not all(np.isfinite(values)):
                raise ParseError(f"{path}: row {rownum}: non-finite value")
            ids.append(sid)
            rows.append(values)

    vectors = np.array(rows, dtype=np.float64).reshape(len(ids), d)
    return FeatureSet(ids, vectors)


def _save_features_csv(fs: FeatureSet, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"f{i}" for i in range(fs.d)])
        for sid, vec in zip(fs.ids, fs.vectors):
            writer.writerow([sid] + [repr(float(v)) for v in vec])


def _load_features_binary(path: Path) -> FeatureSet:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(nbytes: int, what: str) -> memoryview:
        nonlocal pos
        if pos + nbytes > len(view):
            raise ParseError(f"{path}: truncated file while reading {what}")
        chunk = view[pos : pos + nbytes]
        pos += nbytes
        return chunk

    if bytes(take(4, "magic")) != EIGF_MAGIC:
        raise ParseError(f"{path}: bad magic, not an EIGF feature file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != EIGF_VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    (n,) = struct.unpack("<Q", take(8, "sample count"))
    (d,) = struct.unpack("<I", take(4, "dimension"))
    if d < 1:
        raise ParseError(f"{path}: dimension must be >= 1, got {d}")

    ids: list[str] = []
    seen: set[str] = set()
    for i in range(n):
        (length,) = struct.unpack("<I", take(4, f"id length #{i}"))
        raw = bytes(take(length, f"id #{i}"))
        try:
            sid = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"{path}: id #{i} is not valid UTF-8") from None
        if sid in seen:
            raise ParseError(f"{path}: duplicate id {sid!r} at row {i}")
        seen.add(sid)
        ids.append(sid)

    floats = take(4 * n * d, "feature values")
    if pos != len(view):
        raise ParseError(f"{path}: {len(view) - pos} trailing bytes")
    vectors = np.frombuffer(floats, dtype="<f4").reshape(n, d)
    if vectors.size and not np.all(np.isfinite(vectors)):
        bad = int(np.argwhere(~np.isfinite(vectors).all(axis=1))[0][0])
        raise ParseError(f"{path}: non-finite value at row {bad}")
    return FeatureSet(ids, vectors.astype(np.float64))


def _save_features_binary(fs: FeatureSet, path: Path) -> None:
    parts = [EIGF_MAGIC, struct.pack("<I", EIGF_VERSION)]
    parts.append(struct.pack("<Q", fs.n))
    parts.append(struct.pack("<I", fs.d))
    for sid in fs.ids:
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(fs.vectors, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_labels(path: str | Path, num_classes: int) -> LabelSet:
    """Load an ``id,label`` CSV. Empty or header-only files yield an empty set."""
    path = Path(path)
    labels: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return LabelSet({}, num_classes)
        if header != ["id", "label"]:
            raise ParseError(f"{path}: labels header must be id,label")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"{path}: row {rownum}: expected 2 columns")
            sid, tok = row
            if sid in labels:
                raise ParseError(f"{path}: row {rownum}: duplicate id {sid!r}")
            try:
                lab = int(tok)
            except ValueError:
                raise ParseError(
                    f"{path}: row {rownum}: label {tok!r} is not an integer"
                ) from None
            if not 0 <= lab < num_classes:
                raise ParseError(
                    f"{path}: row {rownum}: label {lab} outside [0, {num_classes})"
                )
            labels[sid] = lab
    return LabelSet(labels, num_classes)


def save_labels(labels: LabelSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        for sid, lab in labels.labels.items():
            writer.writerow([sid, lab])


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a dataset manifest; relative paths resolve against its directory."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "features" not in doc or "role" not in doc:
        raise ParseError(f"{path}: manifest needs 'features' and 'role' keys")
    base = path.parent
    features = base / doc["features"]
    labels = base / doc["labels"] if doc.get("labels") else None
    manifest = DatasetManifest(
        features=features,
        role=doc["role"],
        labels=labels,
        assets=dict(doc.get("assets") or {}),
    )
    if not manifest.features.exists():
        raise ParseError(f"{path}: features file {manifest.features} does not exist")
    if manifest.labels is not None and not manifest.labels.exists():
        raise ParseError(f"{path}: labels file {manifest.labels} does not exist")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)

    def rel(p: Path) -> str:
        try:
            return str(p.relative_to(path.parent))
        except ValueError:
            return str(p)

    doc: dict = {"features": rel(manifest.features), "role": manifest.role}
    if manifest.labels is not None:
        doc["labels"] = rel(manifest.labels)
    if manifest.assets:
        doc["assets"] = manifest.assets
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
