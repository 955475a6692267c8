"""Delimited-text artifacts passed between CLI subcommands.

Every table is tab-separated with a header row; floats are written with
``repr`` so that a round trip is exact. Each table has a JSON sidecar
(``<name>.json``) recording its kind and the arm labels it refers to.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import Dataset
from .designs import MatchedCohort, Subclassification, WeightVector
from .errors import SchemaError, ValidationError
from .gps import GpsMatrix

KINDS = ("gps", "cohort", "subclasses", "weights")


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def _fmt(v: float) -> str:
    return repr(float(v))


def _write(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"artifact {path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        return header, list(reader)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    return str(obj)


def read_meta(path) -> dict:
    meta_path = sidecar(path)
    if not meta_path.exists():
        raise SchemaError(f"missing sidecar {meta_path} for {path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("kind") not in KINDS:
        raise SchemaError(f"{meta_path}: unknown artifact kind {meta.get('kind')!r}")
    return meta


def _rows_by_id(ds: Dataset, ids, path) -> np.ndarray:
    index = {u: i for i, u in enumerate(ds.unit_ids.tolist())}
    if len(index) != ds.n:
        raise ValidationError("unit ids in the dataset are not unique")
    try:
        return np.array([index[u] for u in ids], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"{path}: unit id {exc.args[0]!r} is not in the dataset") from None


def _check_labels(ds: Dataset, labels, path) -> None:
    if tuple(labels) != ds.labels:
        raise ValidationError(f"{path}: arm labels {list(labels)} do not match the dataset {list(ds.labels)}")


# GPS -----------------------------------------------------------------------

def write_gps(path, ds: Dataset, gps: GpsMatrix, **extra) -> None:
    header = ["id", "treatment"] + [f"p_{ds.labels[a - 1]}" for a in gps.arms]
    rows = ([ds.unit_ids[i], ds.labels[ds.treatment[i] - 1], *map(_fmt, gps.probs[i])] for i in range(ds.n))
    _write(path, header, rows)
    write_json(sidecar(path), {"kind": "gps", "labels": list(ds.labels), **extra})


def read_gps(path, ds: Dataset) -> GpsMatrix:
    meta = read_meta(path)
    _check_labels(ds, meta["labels"], path)
    header, rows = _read(path)
    if len(header) != 2 + ds.n_arms:
        raise SchemaError(f"{path}: expected {2 + ds.n_arms} columns")
    order = _rows_by_id(ds, [r[0] for r in rows], path)
    if len(rows) != ds.n or len(set(order.tolist())) != ds.n:
        raise ValidationError(f"{path}: GPS rows do not cover the dataset exactly once")
    probs = np.empty((ds.n, ds.n_arms))
    probs[order] = np.array([[float(v) for v in r[2:]] for r in rows])
    return GpsMatrix.from_probs(probs)


# cohorts -------------------------------------------------------------------

def write_cohort(path, ds: Dataset, cohort: MatchedCohort, **extra) -> None:
    labels = [ds.labels[a - 1] for a in cohort.arms]
    rows = ([s, *ds.unit_ids[cohort.sets[s]].tolist()] for s in range(cohort.n_trip))
    _write(path, ["set", *labels], rows)
    write_json(sidecar(path), {
        "kind": "cohort", "design": cohort.design, "labels": list(ds.labels), "arms": labels,
        "reference": ds.labels[cohort.reference - 1], "n_trip": cohort.n_trip, **extra,
    })


def read_cohort(path, ds: Dataset) -> MatchedCohort:
    meta = read_meta(path)
    if meta["kind"] != "cohort":
        raise SchemaError(f"{path} is a {meta['kind']} artifact, not a cohort")
    _check_labels(ds, meta["labels"], path)
    header, rows = _read(path)
    arms = tuple(ds.arm_index(label) for label in header[1:])
    if tuple(header[1:]) != tuple(meta["arms"]):
        raise SchemaError(f"{path}: header does not match the sidecar arms")
    sets = np.empty((len(rows), len(arms)), dtype=np.int64)
    for j in range(len(arms)):
        sets[:, j] = _rows_by_id(ds, [r[j + 1] for r in rows], path)
    cohort = MatchedCohort(sets=sets, arms=arms, reference=ds.arm_index(meta["reference"]),
                           design=meta["design"], n_units=ds.n)
    cohort.validate(ds.treatment)
    return cohort


# subclasses and weights ----------------------------------------------------

def write_subclasses(path, ds: Dataset, sub: Subclassification, **extra) -> None:
    rows = ([ds.unit_ids[i], ds.labels[ds.treatment[i] - 1], int(sub.subclass[i])] for i in range(ds.n))
    _write(path, ["id", "treatment", "subclass"], rows)
    write_json(sidecar(path), {"kind": "subclasses", "labels": list(ds.labels), "k": sub.k,
                               "deficient": list(sub.deficient), **extra})


def read_subclasses(path, ds: Dataset) -> Subclassification:
    meta = read_meta(path)
    _check_labels(ds, meta["labels"], path)
    _, rows = _read(path)
    order = _rows_by_id(ds, [r[0] for r in rows], path)
    if len(rows) != ds.n:
        raise ValidationError(f"{path}: subclass rows do not cover the dataset")
    sub = np.empty(ds.n, dtype=np.int64)
    sub[order] = [int(r[2]) for r in rows]
    k = int(meta["k"])
    if sub.min() < 0 or sub.max() >= k:
        raise ValidationError(f"{path}: subclass ids outside 0..{k - 1}")
    counts = np.zeros((k, ds.n_arms), dtype=np.int64)
    np.add.at(counts, (sub, ds.treatment - 1), 1)
    deficient = tuple(int(s) for s in np.flatnonzero((counts == 0).any(axis=1)))
    return Subclassification(subclass=sub, counts=counts, arms=ds.arms, deficient=deficient)


def write_weights(path, ds: Dataset, weights: WeightVector, **extra) -> None:
    rows = ([ds.unit_ids[i], ds.labels[ds.treatment[i] - 1], _fmt(weights.weights[i])] for i in range(ds.n))
    _write(path, ["id", "treatment", "weight"], rows)
    write_json(sidecar(path), {"kind": "weights", "labels": list(ds.labels), **extra})


def read_weights(path, ds: Dataset) -> WeightVector:
    meta = read_meta(path)
    _check_labels(ds, meta["labels"], path)
    _, rows = _read(path)
    order = _rows_by_id(ds, [r[0] for r in rows], path)
    if len(rows) != ds.n:
        raise ValidationError(f"{path}: weight rows do not cover the dataset")
    w = np.empty(ds.n)
    w[order] = [float(r[2]) for r in rows]
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValidationError(f"{path}: weights must be finite and positive")
    return WeightVector(weights=w)


def read_design_output(path, ds: Dataset):
    kind = read_meta(path)["kind"]
    readers = {"cohort": read_cohort, "subclasses": read_subclasses, "weights": read_weights}
    if kind not in readers:
        raise SchemaError(f"{path} ({kind}) is not a design output")
    return readers[kind](path, ds)


def write_table(path, header, rows) -> None:
    """Plain tab-separated table; floats via ``repr``."""
    _write(path, header, ([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r] for r in rows))
