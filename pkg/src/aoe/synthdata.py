"""Deterministic 2-D datasets: ID Gaussian classes, auxiliary outliers, test OOD.

Seed streams are separated per role so train and test never share draws:
training outliers use ``seed``, test OOD uses ``seed + 1``, ID data uses
``seed + 2``. Near and far test sets use ``seed + 1`` with geometry that is
disjoint by construction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aoe.exceptions import CsvParseError, CsvSchemaError, InvalidArgumentError
from aoe.rng import SeededRng

OOD_LABEL = -1
OUTLIER_KINDS = ("annulus", "shifted_clusters", "distant_blob")

OUTLIER_SEED_OFFSET = 0
TEST_OOD_SEED_OFFSET = 1
ID_SEED_OFFSET = 2


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 4
    per_class: int = 500
    class_radius: float = 4.0
    class_sigma: float = 0.7
    outlier_kind: str = "distant_blob"
    outlier_count: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidArgumentError("num_classes must be >= 2")
        if self.per_class < 1:
            raise InvalidArgumentError("per_class must be >= 1")
        if self.class_radius <= 0:
            raise InvalidArgumentError("class_radius must be > 0")
        # sigma == 0 is allowed as a degenerate case for tests
        if self.class_sigma < 0:
            raise InvalidArgumentError("class_sigma must be >= 0")
        if self.outlier_count < 0:
            raise InvalidArgumentError("outlier_count must be >= 0")


@dataclass
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        self.features = x if x.ndim == 2 else x.reshape(len(x), -1)
        if self.labels is None:
            self.labels = np.full(len(self.features), OOD_LABEL, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.features):
            raise InvalidArgumentError("features and labels differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def is_ood(self) -> np.ndarray:
        return self.labels == OOD_LABEL

    def __eq__(self, other):
        if not isinstance(other, LabeledBatch):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    def take(self, idx) -> "LabeledBatch":
        return LabeledBatch(self.features[idx], self.labels[idx])


def class_means(spec: DatasetSpec) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(spec.num_classes) / spec.num_classes
    return spec.class_radius * np.column_stack([np.cos(angles), np.sin(angles)])


def shifted_cluster_centers(spec: DatasetSpec) -> np.ndarray:
    """Midpoints of adjacent class means, pushed outward by ``class_radius``."""
    means = class_means(spec)
    mids = 0.5 * (means + np.roll(means, -1, axis=0))
    norms = np.linalg.norm(mids, axis=1, keepdims=True)
    # K == 2 puts both midpoints at the origin; fall back to the bisector
    K = spec.num_classes
    bisect = np.column_stack([
        np.cos(2 * np.pi * (np.arange(K) + 0.5) / K),
        np.sin(2 * np.pi * (np.arange(K) + 0.5) / K),
    ])
    direction = np.where(norms > 1e-12, mids / np.maximum(norms, 1e-12), bisect)
    return mids + spec.class_radius * direction


def distant_blob_center(spec: DatasetSpec) -> np.ndarray:
    angle = np.pi / spec.num_classes
    return 5.0 * spec.class_radius * np.array([math.cos(angle), math.sin(angle)])


def _gaussian_points(centers, counts, sigma, rng) -> np.ndarray:
    pts = []
    for c, n in zip(centers, counts):
        noise = rng.normal(0.0, 1.0, size=2 * n).reshape(n, 2)
        pts.append(c + sigma * noise)
    if not pts:
        return np.empty((0, 2))
    return np.vstack(pts)


def _split_counts(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def gen_id_gaussians(spec: DatasetSpec, rng: SeededRng | None = None) -> LabeledBatch:
    rng = rng or SeededRng(spec.seed + ID_SEED_OFFSET)
    means = class_means(spec)
    counts = [spec.per_class] * spec.num_classes
    x = _gaussian_points(means, counts, spec.class_sigma, rng)
    y = np.repeat(np.arange(spec.num_classes), spec.per_class)
    return LabeledBatch(x, y)


def _outliers(kind, spec, count, rng) -> np.ndarray:
    if count == 0:
        return np.empty((0, 2))
    if kind == "annulus":
        r2 = rng.uniform(0.0, 1.0, size=count)
        ang = rng.uniform(0.0, 2.0 * np.pi, size=count)
        lo, hi = 2.0 * spec.class_radius, 3.0 * spec.class_radius
        # area-uniform radius on [lo, hi]
        r = np.sqrt(lo**2 + r2 * (hi**2 - lo**2))
        return np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    if kind == "shifted_clusters":
        centers = shifted_cluster_centers(spec)
        return _gaussian_points(centers, _split_counts(count, len(centers)), spec.class_sigma, rng)
    if kind == "distant_blob":
        return _gaussian_points([distant_blob_center(spec)], [count], spec.class_sigma, rng)
    raise InvalidArgumentError(f"unknown outlier kind {kind!r}; expected one of {OUTLIER_KINDS}")


def gen_train_outliers(spec: DatasetSpec, rng: SeededRng | None = None) -> LabeledBatch:
    rng = rng or SeededRng(spec.seed + OUTLIER_SEED_OFFSET)
    return LabeledBatch(_outliers(spec.outlier_kind, spec, spec.outlier_count, rng))


def gen_test_ood(spec: DatasetSpec, kind: str, rng: SeededRng | None = None,
                 count: int | None = None) -> LabeledBatch:
    """Near OOD sits between adjacent classes; far OOD is one distant blob."""
    geometry = {"near": "shifted_clusters", "far": "distant_blob"}.get(kind)
    if geometry is None:
        raise InvalidArgumentError(f"test OOD kind must be 'near' or 'far', got {kind!r}")
    rng = rng or SeededRng(spec.seed + TEST_OOD_SEED_OFFSET)
    n = spec.outlier_count if count is None else count
    return LabeledBatch(_outliers(geometry, spec, n, rng))


def _fmt(v: float) -> str:
    return repr(float(v))


def save_csv(batch: LabeledBatch, path) -> None:
    d = batch.features.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(d)] + ["label"])
        for row, lab in zip(batch.features, batch.labels):
            w.writerow([_fmt(v) for v in row] + ["ood" if lab == OOD_LABEL else str(int(lab))])


def load_csv(path) -> LabeledBatch:
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvParseError("missing header", line=1) from None
    if not header or header[-1] != "label":
        raise CsvParseError("header must end with 'label'", line=1)
    d = len(header) - 1
    for j, name in enumerate(header[:-1]):
        if name != f"f{j}":
            raise CsvParseError(f"expected column f{j}, found {name!r}", line=1)
    feats, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise CsvSchemaError(f"expected {d + 1} fields, found {len(row)}", line=lineno)
        try:
            vals = [float(v) for v in row[:-1]]
        except ValueError as exc:
            raise CsvParseError(str(exc), line=lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise CsvParseError("non-finite feature value", line=lineno)
        lab = row[-1].strip()
        if lab == "ood":
            labels.append(OOD_LABEL)
        else:
            try:
                labels.append(int(lab))
            except ValueError:
                raise CsvParseError(f"bad label {lab!r}", line=lineno) from None
            if labels[-1] < 0:
                raise CsvParseError(f"negative class label {lab!r}", line=lineno)
        feats.append(vals)
    x = np.array(feats, dtype=np.float64).reshape(len(feats), d)
    return LabeledBatch(x, np.array(labels, dtype=np.int64))


def train_test_split(batch: LabeledBatch, rng: SeededRng, test_fraction: float = 0.2):
    """Seeded shuffle then split; returns ``(train, test)``."""
    perm = rng.permutation(len(batch))
    n_test = int(round(test_fraction * len(batch)))
    return batch.take(np.sort(perm[n_test:])), batch.take(np.sort(perm[:n_test]))
