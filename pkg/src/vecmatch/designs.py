"""Study designs: vector matching, common referent matching, binary comparisons,
k-means subclassification and inverse probability weighting."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cluster import DEFAULT_MAX_RESEEDS, DEFAULT_RESTARTS, deficient_strata, kmeans, strata_with_all_arms
from .data import Dataset, summarize
from .errors import ContractError, ValidationError
from .gps import DEFAULT_MAX_ITER, DEFAULT_RIDGE, DEFAULT_TOL, GpsMatrix, binary_scores, fit_binary_ps, logit
from .matcher import (
    DEFAULT_EPSILON,
    caliper_from_sd,
    caliper_nn_with_replacement,
    caliper_nn_without_replacement,
)
from .support import CommonSupport, pairwise_support_arrays

log = logging.getLogger(__name__)

DEFAULT_K = 5
EXTREME_WEIGHT = 1e4


@dataclass(frozen=True)
class MatchedCohort:
    """Matched sets, one unit per arm.

    ``sets[s, j]`` is the dataset row of the unit from ``arms[j]`` in set ``s``;
    ``psi[i]`` counts how many sets contain row ``i``.
    """

    sets: np.ndarray
    arms: tuple[int, ...]
    reference: int
    design: str
    n_units: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def n_trip(self) -> int:
        return self.sets.shape[0]

    @property
    def psi(self) -> np.ndarray:
        return np.bincount(self.sets.ravel(), minlength=self.n_units)

    def column(self, arm: int) -> np.ndarray:
        return self.sets[:, self.arms.index(arm)]

    def validate(self, treatment) -> None:
        """Raise :class:`ValidationError` if any cohort invariant fails."""
        treatment = np.asarray(treatment)
        if self.reference not in self.arms:
            raise ValidationError("reference arm is not among the cohort arms")
        for j, arm in enumerate(self.arms):
            if self.n_trip and np.any(treatment[self.sets[:, j]] != arm):
                raise ValidationError(f"column for arm {arm} holds units from another arm")
        ref = self.column(self.reference)
        if len(np.unique(ref)) != len(ref):
            raise ValidationError("a reference unit appears in more than one set")
        psi = self.psi
        for arm in self.arms:
            if psi[treatment == arm].sum() != self.n_trip:
                raise ValidationError(f"sum of multiplicities in arm {arm} differs from n_trip")


@dataclass(frozen=True)
class WeightVector:
    """Inverse-probability weights ``1 / r(T_i, X_i)`` for every (eligible) unit."""

    weights: np.ndarray

    @property
    def max_weight(self) -> float:
        return float(self.weights.max()) if self.weights.size else 0.0


@dataclass(frozen=True)
class Subclassification:
    """Subclass ids ``0..K-1`` and the arm composition of each subclass."""

    subclass: np.ndarray
    counts: np.ndarray  # K x Z
    arms: tuple[int, ...]
    deficient: tuple[int, ...]
    objective: float = float("nan")

    @property
    def k(self) -> int:
        return self.counts.shape[0]


def _reference(ds: Dataset, reference) -> int:
    return summarize(ds).reference if reference is None else ds.arm_index(reference)


def _cohort(ref_rows, match_cols, arms, reference, design, n, diagnostics) -> MatchedCohort:
    sets = np.empty((len(ref_rows), len(arms)), dtype=np.int64)
    for j, arm in enumerate(arms):
        sets[:, j] = ref_rows if arm == reference else match_cols[arm]
    cohort = MatchedCohort(sets=sets, arms=tuple(arms), reference=reference, design=design,
                           n_units=n, diagnostics=diagnostics)
    if cohort.n_trip == 0:
        warnings.warn(f"{design}: no matched sets were formed", RuntimeWarning, stacklevel=3)
    return cohort


def vector_match(ds: Dataset, gps: GpsMatrix, reference=None, k: int = DEFAULT_K,
                 epsilon: float = DEFAULT_EPSILON, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
                 max_reseeds: int = DEFAULT_MAX_RESEEDS, caliper_scope: str = "stratum") -> MatchedCohort:
    """Vector matching on an (already trimmed) dataset and its re-fitted GPS.

    For each comparator arm: k-means strata on the logits of the GPS components
    other than the reference and the comparator (all units clustered), then
    with-replacement caliper matching of reference units to comparator units on
    the reference-arm logit within each stratum. Reference units matched in
    every comparator run form the cohort.

    The caliper is ``epsilon`` times the SD of the matching score over the
    reference and comparator units of each stratum (``caliper_scope="stratum"``)
    or of the whole pair (``"pair"``).
    """
    z = ds.n_arms
    if z < 3:
        raise ContractError("vector matching needs Z >= 3")
    if gps.probs.shape != (ds.n, z):
        raise ContractError("GPS matrix does not match the dataset")
    if k < 1:
        raise ContractError("K must be >= 1")
    if caliper_scope not in ("stratum", "pair"):
        raise ContractError("caliper_scope must be 'stratum' or 'pair'")
    ref = _reference(ds, reference)
    t = ds.treatment
    score = gps.logits[:, gps.column(ref)]
    ref_rows = np.flatnonzero(t == ref)
    matched = {}
    diag = {"reference": ref, "k": k, "epsilon": epsilon, "seed": seed, "caliper_scope": caliper_scope, "runs": {}}
    for comp in ds.arms:
        if comp == ref:
            continue
        cols = [gps.column(a) for a in ds.arms if a not in (ref, comp)]
        strata = strata_with_all_arms(gps.logits[:, cols], k, t, seed=seed + 1000 * comp,
                                      max_reseeds=max_reseeds, restarts=restarts)
        cand_rows = np.flatnonzero(t == comp)
        pair_caliper = caliper_from_sd(score[np.concatenate([ref_rows, cand_rows])], epsilon)
        calipers = []
        match_of = np.full(ds.n, -1, dtype=np.int64)
        for s in range(strata.k):
            in_s = strata.assignment == s
            r_rows = ref_rows[in_s[ref_rows]]
            c_rows = cand_rows[in_s[cand_rows]]
            if len(r_rows) == 0 or len(c_rows) == 0:
                calipers.append(None)
                continue
            caliper = pair_caliper
            if caliper_scope == "stratum":
                caliper = caliper_from_sd(score[np.concatenate([r_rows, c_rows])], epsilon)
            calipers.append(caliper)
            res = caliper_nn_with_replacement(score[r_rows], score[c_rows], caliper)
            match_of[r_rows[res.reference]] = c_rows[res.candidate]
        matched[comp] = match_of
        diag["runs"][comp] = {
            "caliper": calipers if caliper_scope == "stratum" else pair_caliper,
            "strata": strata.k, "reseeds": strata.reseeds, "merged": strata.merged,
            "matched": int((match_of[ref_rows] >= 0).sum()),
        }
    keep = np.ones(len(ref_rows), dtype=bool)
    for m in matched.values():
        keep &= m[ref_rows] >= 0
    final = ref_rows[keep]
    cols = {a: m[final] for a, m in matched.items()}
    return _cohort(final, cols, ds.arms, ref, "vm", ds.n, diag)


def _binary_match(ds, ref, comp, epsilon, ridge, tol, max_iter, scale, order):
    model = fit_binary_ps(ds, (ref, comp), ridge, tol, max_iter)
    rows = np.flatnonzero((ds.treatment == ref) | (ds.treatment == comp))
    e = np.full(ds.n, np.nan)
    e[rows] = binary_scores(model, ds.covariates[rows])
    sub_t = ds.treatment[rows]
    support = pairwise_support_arrays(e[rows], sub_t, (ref, comp), ds.labels)
    elig = rows[support.eligible]
    score = logit(e) if scale == "logit" else e
    caliper = caliper_from_sd(score[elig], epsilon)
    r_rows = elig[ds.treatment[elig] == ref]
    c_rows = elig[ds.treatment[elig] == comp]
    res = caliper_nn_without_replacement(score[r_rows], score[c_rows], caliper, order=order)
    match_of = np.full(ds.n, -1, dtype=np.int64)
    match_of[r_rows[res.reference]] = c_rows[res.candidate]
    full_support = CommonSupport(support.low, support.high, np.isin(np.arange(ds.n), elig),
                                 support.kind, support.arms)
    info = {"caliper": caliper, "eligible": len(elig), "matched": len(res), "converged": model.converged}
    return match_of, full_support, info


def crm_match(ds: Dataset, reference=None, epsilon: float = DEFAULT_EPSILON, ridge=DEFAULT_RIDGE,
              tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, scale: str = "logit",
              order: str = "input") -> MatchedCohort:
    """Common referent matching for three arms.

    Two pairwise logistic PS fits, E2 trimming per pair, greedy 1:1 caliper
    matching without replacement per pair; reference units matched in both
    pairs form triplets. ``scale`` selects matching on ``"logit"`` PS or raw ``"ps"``.
    """
    if ds.n_arms != 3:
        raise ContractError("common referent matching is defined for exactly three arms")
    if scale not in ("logit", "ps"):
        raise ContractError("scale must be 'logit' or 'ps'")
    ref = _reference(ds, reference)
    comps = [a for a in ds.arms if a != ref]
    matched, supports, diag = {}, {}, {"reference": ref, "epsilon": epsilon, "scale": scale, "pairs": {}}
    for comp in comps:
        matched[comp], supports[comp], diag["pairs"][comp] = _binary_match(
            ds, ref, comp, epsilon, ridge, tol, max_iter, scale, order)
    e3 = supports[comps[0]].eligible & supports[comps[1]].eligible & (ds.treatment == ref)
    diag["e3_reference"] = int(e3.sum())
    ref_rows = np.flatnonzero(ds.treatment == ref)
    keep = np.all([matched[c][ref_rows] >= 0 for c in comps], axis=0)
    final = ref_rows[keep]
    return _cohort(final, {c: matched[c][final] for c in comps}, ds.arms, ref, "crm", ds.n, diag)


def sbc_match(ds: Dataset, arms, epsilon: float = DEFAULT_EPSILON, ridge=DEFAULT_RIDGE, tol=DEFAULT_TOL,
              max_iter=DEFAULT_MAX_ITER, scale: str = "logit", order: str = "input") -> MatchedCohort:
    """One binary comparison: pairwise PS, E2 trimming, greedy caliper matching.

    ``arms[0]`` is the reference; units of any other arm are ignored. The pair's
    support is returned in ``diagnostics["support"]``.
    """
    ref, comp = (ds.arm_index(a) for a in arms)
    if ref == comp:
        raise ContractError("binary comparison needs two distinct arms")
    match_of, support, info = _binary_match(ds, ref, comp, epsilon, ridge, tol, max_iter, scale, order)
    ref_rows = np.flatnonzero(ds.treatment == ref)
    final = ref_rows[match_of[ref_rows] >= 0]
    diag = {"reference": ref, "pair": (ref, comp), "support": support, **info}
    return _cohort(final, {comp: match_of[final]}, (ref, comp), ref, "sbc", ds.n, diag)


def kmc_subclassify(ds: Dataset, gps: GpsMatrix, k: int = DEFAULT_K, seed: int = 0,
                    restarts: int = DEFAULT_RESTARTS) -> Subclassification:
    """K-means subclasses on all GPS logits, with no arm-coverage repair."""
    c = kmeans(gps.logits, k, seed, restarts)
    counts = np.zeros((c.k, ds.n_arms), dtype=np.int64)
    np.add.at(counts, (c.assignment, ds.treatment - 1), 1)
    bad = tuple(deficient_strata(c.assignment, ds.treatment, c.k, np.array(ds.arms)))
    if bad:
        log.info("kmc: %d subclass(es) lack at least one arm: %s", len(bad), bad)
    return Subclassification(subclass=c.assignment, counts=counts, arms=ds.arms, deficient=bad,
                             objective=c.objective)


def ipw_weights(ds: Dataset, gps: GpsMatrix) -> WeightVector:
    """``1 / r(T_i, X_i)``; extreme weights are reported, never trimmed."""
    if gps.probs.shape[0] != ds.n:
        raise ContractError("GPS rows do not match dataset rows")
    lookup = np.array([0] + [gps.column(a) for a in ds.arms])
    cols = lookup[ds.treatment]
    own = np.clip(gps.probs[np.arange(ds.n), cols], 1e-12, 1.0)
    w = 1.0 / own
    if w.max() > EXTREME_WEIGHT:
        warnings.warn(f"{int((w > EXTREME_WEIGHT).sum())} weight(s) exceed 1e4 (max {w.max():.3g})",
                      RuntimeWarning, stacklevel=2)
    return WeightVector(weights=w)
