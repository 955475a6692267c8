"""Common-support regions (rectangular E4, pairwise E2, CRM E3) and the trim/re-fit step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractError, EmptySupportError
from .gps import (
    DEFAULT_MAX_ITER,
    DEFAULT_RIDGE,
    DEFAULT_TOL,
    GpsMatrix,
    GpsModel,
    fit_multinomial_logit,
    predict_gps,
)

RECTANGULAR = "rectangular-E4"
PAIRWISE = "pairwise-E2"
CRM = "crm-E3"


@dataclass(frozen=True)
class CommonSupport:
    """Per-component ``(low, high)`` bounds and per-unit eligibility flags.

    ``low``/``high`` are indexed like the columns of the scores they were built
    from (``arms``). Eligibility is the open interval ``low < score < high``;
    a component that takes one value over the whole sample is ignored.
    """

    low: np.ndarray
    high: np.ndarray
    eligible: np.ndarray
    kind: str
    arms: tuple[int, ...]

    @property
    def n_eligible(self) -> int:
        return int(self.eligible.sum())


def _bounds(scores: np.ndarray, treatment: np.ndarray, arms) -> tuple[np.ndarray, np.ndarray]:
    mins = np.array([scores[treatment == a].min(axis=0) for a in arms])
    maxs = np.array([scores[treatment == a].max(axis=0) for a in arms])
    return mins.max(axis=0), maxs.min(axis=0)


def _inside(scores, low, high) -> np.ndarray:
    # a component that is constant over the whole sample restricts nothing
    constant = np.all(scores == scores[:1], axis=0)
    return ((scores > low) & (scores < high)) | constant


def _check_arms(eligible, treatment, arms, labels=None):
    for a in arms:
        if not np.any(eligible & (treatment == a)):
            name = labels[a - 1] if labels else a
            raise EmptySupportError(f"common support leaves arm {name!r} with no eligible units", arm=a)


def rectangular_support(gps: GpsMatrix, ds: Dataset) -> CommonSupport:
    """E4: every GPS component strictly inside the intersection of the arms' ranges."""
    if gps.probs.shape[0] != ds.n:
        raise ContractError("GPS rows do not match dataset rows")
    low, high = _bounds(gps.probs, ds.treatment, ds.arms)
    eligible = np.all(_inside(gps.probs, low, high), axis=1)
    _check_arms(eligible, ds.treatment, ds.arms, ds.labels)
    return CommonSupport(low=low, high=high, eligible=eligible, kind=RECTANGULAR, arms=ds.arms)


def pairwise_support(e, ds: Dataset, arms) -> CommonSupport:
    """E2 for one pair of arms from a binary propensity score.

    ``e`` is aligned with the rows of ``ds``; units outside ``arms`` are never
    eligible. The interval is the open intersection of the two arms' PS ranges.
    """
    e = np.asarray(e, dtype=float)
    if e.shape != (ds.n,):
        raise ContractError("propensity scores must align with dataset rows")
    a, b = (ds.arm_index(arm) for arm in arms)
    return pairwise_support_arrays(e, ds.treatment, (a, b), ds.labels)


def pairwise_support_arrays(e, treatment, arms, labels=None) -> CommonSupport:
    a, b = arms
    in_pair = (treatment == a) | (treatment == b)
    low, high = _bounds(e[in_pair, None], treatment[in_pair], arms)
    if not low[0] <= high[0]:
        raise EmptySupportError(f"propensity score ranges of arms {a} and {b} do not overlap")
    eligible = in_pair & _inside(np.where(in_pair, e, e[in_pair][0])[:, None], low, high)[:, 0]
    _check_arms(eligible, treatment, arms, labels)
    return CommonSupport(low=low, high=high, eligible=eligible, kind=PAIRWISE, arms=(a, b))


def crm_support(first: CommonSupport, second: CommonSupport, reference: int) -> np.ndarray:
    """E3 flags for reference-arm units: eligible under both pairwise supports."""
    return first.eligible & second.eligible


@dataclass(frozen=True)
class TrimResult:
    """Outcome of one trim and one re-fit.

    ``dataset``/``gps``/``model`` describe the survivors; ``support`` and
    ``initial_gps`` are the first-pass quantities used for the trimming decision.
    ``kept`` maps survivor rows back to rows of the input dataset.
    """

    dataset: Dataset
    model: GpsModel
    gps: GpsMatrix
    support: CommonSupport
    kept: np.ndarray
    initial_model: GpsModel
    initial_gps: GpsMatrix

    @property
    def dropped_fraction(self) -> float:
        return 1.0 - len(self.kept) / len(self.support.eligible)


def trim_and_refit(ds: Dataset, ridge=DEFAULT_RIDGE, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> TrimResult:
    """Fit, drop units with E4 = 0, re-fit exactly once on the survivors."""
    first = fit_multinomial_logit(ds, ridge, tol, max_iter)
    first_gps = predict_gps(first, ds)
    support = rectangular_support(first_gps, ds)
    kept = np.flatnonzero(support.eligible)
    survivors = ds.take(kept)
    model = fit_multinomial_logit(survivors, ridge, tol, max_iter)
    return TrimResult(
        dataset=survivors,
        model=model,
        gps=predict_gps(model, survivors),
        support=support,
        kept=kept,
        initial_model=first,
        initial_gps=first_gps,
    )
