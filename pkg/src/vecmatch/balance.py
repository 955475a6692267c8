"""Covariate balance: weighted arm means, pairwise standardized bias, Max2SB, %Matched."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .designs import MatchedCohort, Subclassification, WeightVector
from .errors import ContractError, UndefinedEstimateError

log = logging.getLogger(__name__)

BINARY_THRESHOLD = 0.25
MULTI_THRESHOLD = 0.20


@dataclass(frozen=True)
class BalanceReport:
    """Balance of one design output.

    ``sb[(a, b)]`` is the length-P vector of standardized biases between arms
    ``a < b``; ``weighted_means`` is arm x covariate.
    """

    weighted_means: np.ndarray
    arms: tuple[int, ...]
    sb: dict
    max2sb: np.ndarray
    avg_abs_sb: np.ndarray
    denominators: np.ndarray
    pct_matched: float | None = None

    @property
    def mean_max2sb(self) -> float:
        return mean_max2sb(self)

    def exceeds(self, threshold: float = MULTI_THRESHOLD) -> np.ndarray:
        return self.max2sb > threshold


def reference_sd(ds: Dataset, reference: int) -> np.ndarray:
    """Per-covariate SD (n - 1) among reference-arm units of the full, untrimmed sample."""
    x = ds.covariates[ds.treatment == reference]
    if x.shape[0] < 2:
        raise ContractError("reference arm needs at least two units for a standard deviation")
    return x.std(axis=0, ddof=1)


def unweighted_means(ds: Dataset) -> np.ndarray:
    out = np.empty((ds.n_arms, ds.p))
    for a in ds.arms:
        out[a - 1] = ds.covariates[ds.treatment == a].mean(axis=0)
    return out


def cohort_means(ds: Dataset, cohort: MatchedCohort) -> np.ndarray:
    """``sum_i X_i I_i(t) psi_i / n_trip`` for each cohort arm (rows follow ``cohort.arms``)."""
    if cohort.n_trip == 0:
        raise UndefinedEstimateError("empty cohort has no covariate means")
    return np.stack([ds.covariates[cohort.column(a)].sum(axis=0) / cohort.n_trip for a in cohort.arms])


def ipw_means(ds: Dataset, weights: WeightVector) -> np.ndarray:
    """Self-normalized weighted means per arm."""
    w = weights.weights
    out = np.empty((ds.n_arms, ds.p))
    for a in ds.arms:
        m = ds.treatment == a
        mass = w[m].sum()
        if not mass > 0:
            raise UndefinedEstimateError(f"arm {a} has zero weight mass")
        wa = w[m]
        if np.all(wa == wa[0]):
            out[a - 1] = ds.covariates[m].mean(axis=0)  # equal weights: plain mean, exactly
        else:
            out[a - 1] = wa @ ds.covariates[m] / mass
    return out


def subclass_means(ds: Dataset, sub: Subclassification) -> np.ndarray:
    """Within-subclass arm means, averaged with weights proportional to subclass size.

    Subclasses lacking an arm are skipped for that arm and the remaining
    weights renormalized.
    """
    size = sub.counts.sum(axis=1).astype(float)
    out = np.empty((ds.n_arms, ds.p))
    for a in ds.arms:
        m = ds.treatment == a
        sums = np.stack([np.bincount(sub.subclass[m], weights=ds.covariates[m, j], minlength=sub.k)
                         for j in range(ds.p)], axis=1)
        n_a = sub.counts[:, a - 1]
        have = n_a > 0
        if not have.any():
            raise UndefinedEstimateError(f"arm {a} is absent from every subclass")
        if not have.all():
            log.debug("arm %d missing from subclasses %s; renormalizing", a, np.flatnonzero(~have).tolist())
        w = size * have
        within = sums[have] / n_a[have, None]
        out[a - 1] = w[have] @ within / w.sum()
    return out


def weighted_means(ds: Dataset, design_output=None) -> np.ndarray:
    """Arm x covariate means for any design output (``None`` means the raw cohort)."""
    if design_output is None:
        return unweighted_means(ds)
    if isinstance(design_output, MatchedCohort):
        return cohort_means(ds, design_output)
    if isinstance(design_output, WeightVector):
        return ipw_means(ds, design_output)
    if isinstance(design_output, Subclassification):
        return subclass_means(ds, design_output)
    raise ContractError(f"unsupported design output {type(design_output).__name__}")


def standardized_bias(mean_a, mean_b, delta):
    """``(mean_a - mean_b) / delta``; elementwise for arrays."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta == 0):
        raise UndefinedEstimateError("standardized bias undefined for zero denominator")
    out = (np.asarray(mean_a, dtype=float) - np.asarray(mean_b, dtype=float)) / delta
    return float(out) if out.ndim == 0 else out


def max2sb(sbs) -> np.ndarray:
    """Maximum absolute value across pairs (axis 0)."""
    return np.max(np.abs(np.asarray(sbs, dtype=float)), axis=0)


def balance_report(means, delta, arms=None, pct_matched=None) -> BalanceReport:
    means = np.asarray(means, dtype=float)
    arms = tuple(arms) if arms is not None else tuple(range(1, means.shape[0] + 1))
    sb = {}
    for (i, a), (j, b) in itertools.combinations(enumerate(arms), 2):
        sb[(a, b)] = standardized_bias(means[i], means[j], delta)
    stack = np.array(list(sb.values()))
    return BalanceReport(
        weighted_means=means, arms=arms, sb=sb, max2sb=max2sb(stack),
        avg_abs_sb=np.abs(stack).mean(axis=0), denominators=np.asarray(delta, dtype=float),
        pct_matched=pct_matched,
    )


def assess(ds: Dataset, design_output, delta, eligible_reference_count=None) -> BalanceReport:
    """Balance report for a design output on dataset ``ds`` with fixed denominators ``delta``."""
    means = weighted_means(ds, design_output)
    arms = design_output.arms if isinstance(design_output, MatchedCohort) else ds.arms
    pct = None
    if isinstance(design_output, MatchedCohort) and eligible_reference_count is not None:
        pct = pct_matched(design_output, eligible_reference_count)
    return balance_report(means, delta, arms, pct)


def pct_matched(cohort: MatchedCohort, eligible_reference_count: int) -> float:
    if eligible_reference_count <= 0:
        raise ContractError("eligible reference count must be positive")
    return cohort.n_trip / eligible_reference_count


def mean_max2sb(report: BalanceReport) -> float:
    return float(np.mean(report.max2sb))
