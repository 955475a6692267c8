"""Dataset container, delimited-text ingestion and treatment bookkeeping."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, ParseError, SchemaError, ValidationError

MAX_ARMS = 64


@dataclass(frozen=True)
class Dataset:
    """N units with P covariates, a treatment arm in ``1..Z`` and an optional outcome.

    Arms are 1-based indices; ``labels[t - 1]`` is the original label of arm ``t``.
    Rows are addressed by 0-based position throughout the library.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray | None = None
    unit_ids: np.ndarray | None = None
    labels: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.array(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValidationError("covariates must be an N x P matrix with P >= 1")
        t = np.asarray(self.treatment)
        if t.shape != (x.shape[0],):
            raise ValidationError("treatment must have one entry per unit")
        if not np.issubdtype(t.dtype, np.integer):
            if not np.all(np.equal(np.mod(t, 1), 0)):
                raise ValidationError("treatment indices must be integers")
        t = t.astype(np.int64)
        if not np.all(np.isfinite(x)):
            bad = int(np.argwhere(~np.isfinite(x))[0, 0])
            raise ValidationError(f"non-finite covariate value at row {bad}")
        z = int(t.max()) if t.size else 0
        if t.size == 0 or t.min() < 1:
            raise ValidationError("treatment indices must be in 1..Z")
        counts = np.bincount(t, minlength=z + 1)[1:]
        if z < 2:
            raise ValidationError("at least two treatment arms are required (Z >= 2)")
        if np.any(counts == 0):
            empty = [i + 1 for i in np.flatnonzero(counts == 0)]
            raise ValidationError(f"treatment arm(s) {empty} have no units")
        if x.shape[0] < z:
            raise ValidationError("N must be at least Z")
        y = None
        if self.outcome is not None:
            y = np.array(self.outcome, dtype=float)
            if y.shape != t.shape:
                raise ValidationError("outcome must have one entry per unit")
        ids = self.unit_ids
        ids = np.arange(x.shape[0]).astype(str) if ids is None else np.asarray(ids).astype(str)
        if ids.shape != t.shape:
            raise ValidationError("unit_ids must have one entry per unit")
        labels = tuple(self.labels) or tuple(f"t{k}" for k in range(1, z + 1))
        if len(labels) != z:
            raise ValidationError(f"expected {z} labels, got {len(labels)}")
        names = tuple(self.covariate_names) or tuple(f"x{p}" for p in range(1, x.shape[1] + 1))
        if len(names) != x.shape[1]:
            raise ValidationError("covariate_names length must equal P")
        for arr in (x, t, y, ids):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "unit_ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_arms(self) -> int:
        return len(self.labels)

    @property
    def arms(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_arms + 1))

    def counts(self) -> np.ndarray:
        """Group sizes n_t, indexed ``counts()[t - 1]``."""
        return np.bincount(self.treatment, minlength=self.n_arms + 1)[1:]

    def arm_index(self, arm) -> int:
        """Resolve an arm given either as a 1-based index or as its label."""
        if isinstance(arm, (int, np.integer)) and not isinstance(arm, bool):
            if 1 <= arm <= self.n_arms:
                return int(arm)
            raise ContractError(f"arm index {arm} outside 1..{self.n_arms}")
        arm = str(arm)
        if arm in self.labels:
            return self.labels.index(arm) + 1
        if arm.isdigit() and 1 <= int(arm) <= self.n_arms:
            return int(arm)
        raise ContractError(f"unknown treatment arm {arm!r}; known labels {list(self.labels)}")

    def take(self, rows) -> Dataset:
        """Row subset keeping every arm; raises if an arm would become empty."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return Dataset(
            covariates=self.covariates[rows],
            treatment=self.treatment[rows],
            outcome=None if self.outcome is None else self.outcome[rows],
            unit_ids=self.unit_ids[rows],
            labels=self.labels,
            covariate_names=self.covariate_names,
        )

    def mapping(self) -> dict[str, int]:
        return {label: i + 1 for i, label in enumerate(self.labels)}


@dataclass(frozen=True)
class TreatmentSummary:
    counts: dict[int, int]
    reference: int
    labels: dict[int, str] = field(default_factory=dict)


def summarize(ds: Dataset) -> TreatmentSummary:
    """Arm sizes and the default reference arm (smallest n_t, lowest index on ties)."""
    counts = ds.counts()
    reference = int(np.argmin(counts)) + 1  # argmin returns the first minimum
    return TreatmentSummary(
        counts={t: int(c) for t, c in zip(ds.arms, counts)},
        reference=reference,
        labels={t: label for t, label in zip(ds.arms, ds.labels)},
    )


@dataclass(frozen=True)
class Schema:
    """Column roles of a delimited input file.

    ``covariates=None`` means every column not claimed by another role.
    ``outcome``/``id`` are optional: they are used only if present in the header,
    unless ``require_outcome`` is set.
    """

    treatment: str = "treatment"
    outcome: str | None = "outcome"
    id: str | None = "id"
    covariates: Sequence[str] | None = None
    require_outcome: bool = False


def _sniff_delimiter(path: Path) -> str:
    return "\t" if path.suffix.lower() in {".tsv", ".tab"} else ","


def load_dataset(path, schema: Schema | None = None, delimiter: str | None = None) -> Dataset:
    """Read a header-first delimited file into a :class:`Dataset`.

    Treatment labels are mapped to 1..Z in order of first appearance.
    Row numbers in error messages count data rows from 1 (header excluded).
    """
    path = Path(path)
    schema = schema or Schema()
    if not path.exists():
        raise ValidationError(f"input file {path} does not exist")
    delimiter = delimiter or _sniff_delimiter(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = list(reader)

    if schema.treatment not in header:
        raise SchemaError(f"missing treatment column {schema.treatment!r}")
    outcome_col = schema.outcome if schema.outcome in header else None
    if schema.require_outcome and outcome_col is None:
        raise SchemaError(f"missing outcome column {schema.outcome!r}")
    id_col = schema.id if schema.id in header else None
    if schema.covariates is None:
        claimed = {schema.treatment, outcome_col, id_col}
        cov_cols = [h for h in header if h not in claimed]
    else:
        cov_cols = list(schema.covariates)
        missing = [c for c in cov_cols if c not in header]
        if missing:
            raise SchemaError(f"missing covariate column(s) {missing}")
    if not cov_cols:
        raise SchemaError("no covariate columns")

    pos = {h: i for i, h in enumerate(header)}
    labels: list[str] = []
    index: dict[str, int] = {}
    x = np.empty((len(rows), len(cov_cols)))
    t = np.empty(len(rows), dtype=np.int64)
    y = np.empty(len(rows)) if outcome_col else None
    ids = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} fields, got {len(row)}", row=r)
        label = row[pos[schema.treatment]].strip()
        if label not in index:
            if len(labels) >= MAX_ARMS:
                raise ValidationError(f"more than {MAX_ARMS} distinct treatment labels")
            labels.append(label)
            index[label] = len(labels)
        t[r - 1] = index[label]
        for j, col in enumerate(cov_cols):
            x[r - 1, j] = _parse_float(row[pos[col]], r, col, finite=True)
        if outcome_col:
            y[r - 1] = _parse_float(row[pos[outcome_col]], r, outcome_col, finite=True)
        ids.append(row[pos[id_col]].strip() if id_col else str(r - 1))

    if len(labels) < 2:
        raise ValidationError(f"treatment column has {len(labels)} distinct label(s); Z >= 2 required")
    return Dataset(
        covariates=x,
        treatment=t,
        outcome=y,
        unit_ids=np.array(ids, dtype=str),
        labels=tuple(labels),
        covariate_names=tuple(cov_cols),
    )


def _parse_float(text: str, row: int, column: str, finite: bool) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {column!r}: cannot parse {text!r} as a number",
                         row=row, column=column) from None
    if finite and not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}",
                         row=row, column=column)
    return value


def write_dataset(ds: Dataset, path, delimiter: str | None = None) -> None:
    """Write ``ds`` so that :func:`load_dataset` reproduces it bit-exactly."""
    path = Path(path)
    delimiter = delimiter or _sniff_delimiter(path)
    header = ["id", "treatment"] + (["outcome"] if ds.outcome is not None else []) + list(ds.covariate_names)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [ds.unit_ids[i], ds.labels[ds.treatment[i] - 1]]
            if ds.outcome is not None:
                row.append(repr(float(ds.outcome[i])))
            row.extend(repr(float(v)) for v in ds.covariates[i])
            w.writerow(row)


def metadata(ds: Dataset) -> dict:
    """Key-value description of a dataset, including the label mapping."""
    s = summarize(ds)
    return {
        "n": ds.n,
        "p": ds.p,
        "z": ds.n_arms,
        "label_to_index": ds.mapping(),
        "counts": {ds.labels[t - 1]: c for t, c in s.counts.items()},
        "reference": ds.labels[s.reference - 1],
        "covariates": list(ds.covariate_names),
        "has_outcome": ds.outcome is not None,
    }


def write_metadata(ds: Dataset, path, **extra) -> None:
    meta = metadata(ds)
    meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
