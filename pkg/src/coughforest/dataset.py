"""Manifest and feature-cache CSV handling.

Manifest CSV: ``path,label,dataset,clip_id``.
Feature cache CSV: ``f000..f192,label,dataset,clip_id``.
Both UTF-8, comma separated, LF newlines.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass
import os
from pathlib import Path

import numpy as np

from .audio import load_clip
from .errors import ExtractionError, IntegrityError, InvalidSignalError, ManifestError
from .features import N_FEATURES, extract_feature_vector

DATASET_IDS = (
    "cambridge_asym",
    "cambridge_sym",
    "coswara",
    "coughvid",
    "virufy",
    "nococoda",
    "virufy_nococoda",
    "combined",
)
MANIFEST_COLUMNS = ("path", "label", "dataset", "clip_id")
FEATURE_COLUMNS = tuple(f"f{i:03d}" for i in range(N_FEATURES))

_LABELS = {"positive": 1, "1": 1, "negative": 0, "0": 0}


@dataclass(frozen=True)
class SampleRecord:
    path: str
    label: int  # 1 = COVID-19 positive
    dataset: str
    clip_id: str

    @property
    def label_name(self):
        return "positive" if self.label else "negative"


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    clip_ids: tuple

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise IntegrityError(f"rows must be 2-D, got shape {rows.shape}")
        n = rows.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64)
        groups = np.asarray(self.groups, dtype=object)
        clip_ids = tuple(self.clip_ids)
        if not (labels.shape == (n,) and groups.shape == (n,) and len(clip_ids) == n):
            raise IntegrityError("rows, labels, groups and clip_ids must align")
        if not np.all(np.isfinite(rows)):
            raise InvalidSignalError("feature matrix contains non-finite values")
        if not np.all((labels == 0) | (labels == 1)):
            raise IntegrityError("labels must be binary")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "clip_ids", clip_ids)

    def __len__(self):
        return self.rows.shape[0]

    def subset(self, index):
        index = np.asarray(index)
        return FeatureMatrix(self.rows[index], self.labels[index], self.groups[index],
                             tuple(self.clip_ids[i] for i in np.arange(len(self))[index]))

    def class_counts(self):
        return int(self.labels.sum()), int((self.labels == 0).sum())


def parse_label(token, row=None):
    try:
        return _LABELS[str(token).strip().lower()]
    except KeyError:
        raise ManifestError(f"unknown label {token!r}", row=row) from None


def load_manifest(path, check_paths=True):
    """Read and validate a manifest CSV.

    Relative audio paths are resolved against the manifest's directory.
    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"expected header {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}",
                row=1,
            )
        for row_no, row in enumerate(reader, start=2):
            if None in row or any(row[c] is None for c in MANIFEST_COLUMNS):
                raise ManifestError("wrong number of fields", row=row_no)
            label = parse_label(row["label"], row=row_no)
            dataset = row["dataset"].strip()
            if dataset not in DATASET_IDS:
                raise ManifestError(f"unknown dataset {dataset!r}", row=row_no)
            clip_id = row["clip_id"].strip()
            if not clip_id:
                raise ManifestError("empty clip_id", row=row_no)
            if clip_id in seen:
                raise IntegrityError(f"row {row_no}: duplicate clip_id {clip_id!r}")
            seen.add(clip_id)
            audio = Path(row["path"].strip())
            if not audio.is_absolute():
                audio = base / audio
            if check_paths and not audio.exists():
                raise ManifestError(f"audio file not found: {audio}", row=row_no)
            records.append(SampleRecord(str(audio), label, dataset, clip_id))
    return records


def write_manifest(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([r.path, r.label_name, r.dataset, r.clip_id])


def build_combined(manifests):
    """Concatenate manifests, prefixing each clip_id with its dataset id."""
    out, seen = [], set()
    for records in manifests:
        for r in records:
            prefix = f"{r.dataset}:"
            clip_id = r.clip_id if r.clip_id.startswith(prefix) else prefix + r.clip_id
            if clip_id in seen:
                raise IntegrityError(f"clip_id collision after prefixing: {clip_id!r}")
            seen.add(clip_id)
            out.append(SampleRecord(r.path, r.label, r.dataset, clip_id))
    return out


def count_labels(records):
    """``(positives, negatives)`` of a record list."""
    pos = sum(r.label for r in records)
    return pos, len(records) - pos


def write_feature_csv(matrix, path):
    """Write a feature cache; floats use ``repr`` so reloading is bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_COLUMNS + ("label", "dataset", "clip_id"))
        for row, label, group, clip_id in zip(matrix.rows, matrix.labels,
                                              matrix.groups, matrix.clip_ids):
            writer.writerow([repr(float(v)) for v in row] + [int(label), group, clip_id])


def read_feature_csv(path):
    rows, labels, groups, clip_ids = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = list(FEATURE_COLUMNS) + ["label", "dataset", "clip_id"]
        if header != expected:
            raise ManifestError(f"{path}: not a feature cache (bad header)", row=1)
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ManifestError(f"{path}: expected {len(expected)} fields", row=row_no)
            try:
                rows.append([float(v) for v in row[:N_FEATURES]])
            except ValueError as exc:
                raise ManifestError(f"{path}: {exc}", row=row_no) from None
            labels.append(parse_label(row[N_FEATURES], row=row_no))
            groups.append(row[N_FEATURES + 1])
            clip_ids.append(row[N_FEATURES + 2])
    if len(set(clip_ids)) != len(clip_ids):
        raise IntegrityError(f"{path}: duplicate clip_id in feature cache")
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, N_FEATURES)
    return FeatureMatrix(rows, np.asarray(labels, dtype=np.int64),
                         np.asarray(groups, dtype=object), tuple(clip_ids))


def _extract_one(path):
    try:
        return extract_feature_vector(load_clip(path)).fused, None
    except Exception as exc:  # collected and reported per record
        return None, f"{type(exc).__name__}: {exc}"


def materialize(records, cache_path=None, n_jobs=1):
    """Feature matrix for ``records``, reusing and updating an optional cache.

    Rows already present in the cache (matched by clip_id) are loaded as-is;
    the rest are extracted from audio. Any extraction failure aborts with an
    ``ExtractionError`` listing every failing path, and nothing is cached.
    """
    cached = {}
    if cache_path is not None and os.path.exists(cache_path):
        fm = read_feature_csv(cache_path)
        cached = {cid: fm.rows[i] for i, cid in enumerate(fm.clip_ids)}

    todo = [r for r in records if r.clip_id not in cached]
    failures = {}
    if todo:
        paths = [r.path for r in todo]
        if n_jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(_extract_one, paths, chunksize=8))
        else:
            results = [_extract_one(p) for p in paths]
        for r, (vec, err) in zip(todo, results):
            if err is not None:
                failures[r.path] = err
            else:
                cached[r.clip_id] = vec
    if failures:
        raise ExtractionError(failures)

    matrix = FeatureMatrix(
        np.array([cached[r.clip_id] for r in records]).reshape(-1, N_FEATURES),
        np.array([r.label for r in records], dtype=np.int64),
        np.array([r.dataset for r in records], dtype=object),
        tuple(r.clip_id for r in records),
    )
    if cache_path is not None and todo:
        write_feature_csv(matrix, cache_path)
    return matrix
