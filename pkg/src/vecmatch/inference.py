"""Point estimates of treatment effects and rank tests on matched sets.

Sampling variances for SATTs are not provided. Friedman and Quade tests treat
matched sets as exchangeable blocks, which ignores the dependence induced by
non-reference units reused across sets.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import Dataset
from .designs import MatchedCohort, WeightVector
from .errors import ContractError, DegenerateDataError, UndefinedEstimateError

EXACT_BUDGET = math.factorial(3) ** 8


@dataclass(frozen=True)
class EffectEstimates:
    satt: dict = field(default_factory=dict)
    ipw_pate: dict = field(default_factory=dict)
    n_trip: int = 0


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: tuple[float, ...]
    p_value_asymptotic: float
    p_value_exact: float | None = None
    name: str = ""

    __test__ = False  # not a pytest class


def _outcome(ds: Dataset) -> np.ndarray:
    if ds.outcome is None:
        raise ContractError("dataset has no outcome column")
    return ds.outcome


def satt_estimates(cohort: MatchedCohort, ds: Dataset) -> EffectEstimates:
    """SATT of the reference arm against each comparator.

    ``sum_i Y_i psi_i [I(T_i = ref) - I(T_i = comp)] / n_trip``, evaluated as
    a difference of per-arm psi-weighted means so that differences between
    comparators are exact.
    """
    y = _outcome(ds)
    if cohort.n_trip < 1:
        raise UndefinedEstimateError("SATT needs at least one matched set")
    psi = cohort.psi
    t = ds.treatment
    arm_mean = {a: float(np.sum(y * psi * (t == a))) / cohort.n_trip for a in cohort.arms}
    ref = cohort.reference
    satt = {(ref, a): arm_mean[ref] - arm_mean[a] for a in cohort.arms if a != ref}
    return EffectEstimates(satt=satt, n_trip=cohort.n_trip)


def ipw_pate(ds: Dataset, weights: WeightVector, pair) -> float:
    """Difference of self-normalized weighted outcome means of ``pair[0]`` and ``pair[1]``."""
    y = _outcome(ds)
    w = weights.weights
    if w.shape != y.shape:
        raise ContractError("weights do not match dataset rows")
    means = []
    for arm in pair:
        m = ds.treatment == ds.arm_index(arm)
        mass = float(w[m].sum())
        if not mass > 0:
            raise UndefinedEstimateError(f"arm {arm} has zero weight mass")
        means.append(float(w[m] @ y[m]) / mass)
    return means[0] - means[1]


def ipw_estimates(ds: Dataset, weights: WeightVector, reference: int) -> EffectEstimates:
    pates = {(reference, a): ipw_pate(ds, weights, (reference, a)) for a in ds.arms if a != reference}
    return EffectEstimates(ipw_pate=pates)


def _check_matrix(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] < 2 or y.shape[1] < 2:
        raise ContractError("outcome matrix must be n_trip x Z with n_trip >= 2 and Z >= 2")
    if not np.all(np.isfinite(y)):
        raise ContractError("outcome matrix must be finite")
    return y


def default_exact_threshold(z: int) -> int:
    """Largest n_trip with ``(Z!)^n_trip`` at most the budget (8 for Z = 3)."""
    f = math.factorial(z)
    n = 0
    while f ** (n + 1) <= EXACT_BUDGET:
        n += 1
    return n


def _sum_distribution(rows) -> Counter:
    """Distribution of the column-sum vector when each integer row is permuted independently.

    Every one of the ``Z!`` permutations of a row counts once, so tied values
    contribute repeated vectors.
    """
    dist = Counter({(0,) * len(rows[0]): 1})
    for row in rows:
        perms = Counter(itertools.permutations(row))
        nxt: Counter = Counter()
        for vec, c in dist.items():
            for p, m in perms.items():
                nxt[tuple(a + b for a, b in zip(vec, p))] += c * m
        dist = nxt
    return dist


def _exact_upper(rows, score) -> float:
    """Fraction of within-row permutations whose integer ``score`` of column sums is >= observed."""
    observed = score(tuple(int(v) for v in np.sum(rows, axis=0)))
    dist = _sum_distribution([tuple(int(v) for v in r) for r in rows])
    total = sum(dist.values())
    hits = sum(c for vec, c in dist.items() if score(vec) >= observed)
    return hits / total


def friedman_test(y, exact_threshold: int | None = None) -> TestResult:
    """Friedman test with mid-ranks and the tie-corrected denominator.

    A matrix with every set fully tied gives statistic 0 and p-value 1.
    """
    y = _check_matrix(y)
    n, z = y.shape
    r2 = np.rint(2 * stats.rankdata(y, axis=1)).astype(np.int64)  # doubled mid-ranks
    centre2 = n * (z + 1)  # doubled expected column rank sum

    def score(sums):
        return sum((s - centre2) ** 2 for s in sums)

    ss = score(r2.sum(axis=0))  # = 4 * sum_j (R_j - n(Z+1)/2)^2
    denom = float((r2.astype(float) ** 2).sum()) / 4 - n * z * (z + 1) ** 2 / 4
    if denom <= 0:
        stat = 0.0
    else:
        stat = (z - 1) * (ss / 4) / denom
    p_asym = float(stats.chi2.sf(stat, z - 1)) if denom > 0 else 1.0
    threshold = default_exact_threshold(z) if exact_threshold is None else exact_threshold
    p_exact = _exact_upper(r2, score) if n <= threshold else None
    return TestResult(statistic=float(stat), dof=(z - 1,), p_value_asymptotic=min(1.0, p_asym),
                      p_value_exact=p_exact, name="friedman")


def quade_test(y, exact_threshold: int | None = None) -> TestResult:
    """Quade test: within-set ranks weighted by ranks of within-set ranges, F reference."""
    y = _check_matrix(y)
    n, z = y.shape
    ranges = y.max(axis=1) - y.min(axis=1)
    if np.all(ranges == 0):
        raise DegenerateDataError("every matched set has zero range; Quade statistic undefined")
    q2 = np.rint(2 * stats.rankdata(ranges)).astype(np.int64)
    r2 = np.rint(2 * stats.rankdata(y, axis=1)).astype(np.int64)
    s4 = q2[:, None] * (r2 - (z + 1))  # 4 * S_ij
    a = float((s4.astype(float) ** 2).sum()) / 16

    def score(sums):
        return sum(s * s for s in sums)

    b = score(s4.sum(axis=0)) / 16 / n
    if a - b <= 0:
        stat = math.inf
        p_asym = 0.0
    else:
        stat = (n - 1) * b / (a - b)
        p_asym = float(stats.f.sf(stat, z - 1, (n - 1) * (z - 1)))
    threshold = default_exact_threshold(z) if exact_threshold is None else exact_threshold
    p_exact = _exact_upper(s4, score) if n <= threshold else None
    return TestResult(statistic=float(stat), dof=(z - 1, (n - 1) * (z - 1)), p_value_asymptotic=p_asym,
                      p_value_exact=p_exact, name="quade")


def cohort_outcomes(cohort: MatchedCohort, ds: Dataset) -> np.ndarray:
    """n_trip x Z matrix of outcomes, columns in ``cohort.arms`` order."""
    return _outcome(ds)[cohort.sets]
