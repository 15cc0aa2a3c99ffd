"""Labelled feature tables tagged with the policy that produced them."""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Source(str, enum.Enum):
    R = "R"  # randomized policy
    L = "L"  # logged production policy
    TEST = "TEST"


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, binary labels and a source tag.

    ``labels`` may be ``None`` only for unlabelled scoring data. Arrays are
    made read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray | None
    feature_names: tuple[str, ...]
    source: Source = Source.TEST
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != X.shape[1]:
            raise DataError(
                f"{len(names)} feature names for {X.shape[1]} columns")
        y = None
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.ndim != 1 or y.shape[0] != X.shape[0]:
                raise DataError(
                    f"labels shape {y.shape} does not match {X.shape[0]} rows")
            if not np.all((y == 0) | (y == 1)):
                raise DataError("labels must be 0/1")
            y = y.astype(np.int8)
            y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "source", Source(self.source))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_cols(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n_rows

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise DataError("dataset has no labels")
        return self.labels

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        y = None if self.labels is None else self.labels[rows]
        return Dataset(self.features[rows], y, self.feature_names, self.source)

    def with_source(self, source) -> "Dataset":
        return Dataset(self.features, self.labels, self.feature_names, Source(source))

    def check_schema(self, other: "Dataset") -> None:
        if self.feature_names != other.feature_names:
            raise DataError(
                "feature schemas differ: "
                f"{list(self.feature_names)} vs {list(other.feature_names)}")

    @classmethod
    def empty(cls, feature_names: Sequence[str], source=Source.TEST) -> "Dataset":
        return cls(np.empty((0, len(feature_names))), np.empty(0, dtype=np.int8),
                   tuple(feature_names), source)


def concat(datasets: Iterable[Dataset], source=None) -> Dataset:
    """Row-concatenate datasets that share one feature schema."""
    datasets = list(datasets)
    if not datasets:
        raise DataError("nothing to concatenate")
    first = datasets[0]
    for d in datasets[1:]:
        first.check_schema(d)
    X = np.vstack([d.features for d in datasets])
    y = np.concatenate([d.require_labels() for d in datasets])
    return Dataset(X, y, first.feature_names,
                   first.source if source is None else source)


def _format_float(v: float) -> str:
    # repr round-trips exactly
    return repr(float(v))


def write_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    """Header of feature names, then ``label`` (if present), then ``source``."""
    header = list(dataset.feature_names)
    if dataset.labels is not None:
        header.append("label")
    header.append("source")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n_rows):
            row = [_format_float(v) for v in dataset.features[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            row.append(dataset.source.value)
            writer.writerow(row)


def read_csv(path: str | os.PathLike, source=None, require_labels: bool = True) -> Dataset:
    """Parse a dataset CSV.

    ``label`` and ``source`` columns are optional unless ``require_labels``.
    An explicit ``source`` argument overrides the file's column. Errors name
    the offending line and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        label_col = header.index("label") if "label" in header else None
        source_col = header.index("source") if "source" in header else None
        feat_cols = [i for i, h in enumerate(header) if i not in (label_col, source_col)]
        if not feat_cols:
            raise DataError(f"{path}: no feature columns")
        if require_labels and label_col is None:
            raise DataError(f"{path}: missing 'label' column")

        rows, labels, sources = [], [], set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{path}: line {lineno} has {len(rec)} fields, expected {len(header)}")
            values = []
            for c in feat_cols:
                try:
                    v = float(rec[c])
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}, column '{header[c]}': "
                        f"not a number: {rec[c]!r}") from None
                if not np.isfinite(v):
                    raise DataError(
                        f"{path}: line {lineno}, column '{header[c]}': non-finite value")
                values.append(v)
            rows.append(values)
            if label_col is not None:
                lab = rec[label_col].strip()
                if lab not in ("0", "1", "0.0", "1.0"):
                    raise DataError(
                        f"{path}: line {lineno}, column 'label': expected 0 or 1, got {lab!r}")
                labels.append(int(float(lab)))
            if source_col is not None:
                sources.add(rec[source_col].strip())

    if not rows:
        raise DataError(f"{path}: no data rows")
    if source is None:
        if len(sources) == 1:
            tag = sources.pop()
            try:
                source = Source(tag)
            except ValueError:
                raise DataError(f"{path}: column 'source': unknown tag {tag!r}") from None
        elif len(sources) > 1:
            raise DataError(f"{path}: column 'source': mixed tags {sorted(sources)}")
        else:
            source = Source.TEST
    names = [header[c] for c in feat_cols]
    y = np.array(labels, dtype=np.int8) if label_col is not None else None
    return Dataset(np.array(rows, dtype=np.float64), y, names, source)
