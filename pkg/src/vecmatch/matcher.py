"""1:1 nearest-neighbour caliper matching on a scalar score."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ContractError

DEFAULT_EPSILON = 0.25


class PairMatch(NamedTuple):
    reference_unit: int
    matched_unit: int
    distance: float
    stratum: int | None = None


@dataclass(frozen=True)
class MatchResult:
    """Matched pairs as parallel arrays.

    ``reference`` and ``candidate`` are positions into the score arrays passed
    to the matcher (or dataset rows, once a caller has mapped them).
    """

    reference: np.ndarray
    candidate: np.ndarray
    distance: np.ndarray
    stratum: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.reference)

    def __iter__(self) -> Iterator[PairMatch]:
        for i in range(len(self)):
            s = None if self.stratum is None else int(self.stratum[i])
            yield PairMatch(int(self.reference[i]), int(self.candidate[i]), float(self.distance[i]), s)

    def as_map(self) -> dict[int, int]:
        return dict(zip(self.reference.tolist(), self.candidate.tolist()))


def _scores(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} must be finite")
    return a


def _check_caliper(caliper):
    if caliper is None:
        return np.inf
    if not caliper >= 0:
        raise ContractError("caliper width must be nonnegative")
    return float(caliper)


def _empty() -> MatchResult:
    e = np.empty(0, dtype=np.int64)
    return MatchResult(e, e.copy(), np.empty(0))


def caliper_nn_with_replacement(ref_scores, cand_scores, caliper_width) -> MatchResult:
    """Each reference independently takes its nearest candidate if within the caliper.

    Distance ties (including duplicate candidate scores) resolve to the smallest
    candidate position. Because candidates are reused, the result does not
    depend on the order of the references.
    """
    ref = _scores(ref_scores, "reference scores")
    cand = _scores(cand_scores, "candidate scores")
    caliper = _check_caliper(caliper_width)
    if ref.size == 0 or cand.size == 0:
        return _empty()
    order = np.argsort(cand, kind="stable")
    sc = cand[order]
    m = sc.size
    pos = np.searchsorted(sc, ref, side="left")

    has_right = pos < m
    r_pos = np.minimum(pos, m - 1)
    r_dist = np.where(has_right, np.abs(sc[r_pos] - ref), np.inf)
    r_idx = order[r_pos]

    has_left = pos > 0
    l_val = sc[np.maximum(pos - 1, 0)]
    l_first = np.searchsorted(sc, l_val, side="left")  # first of a run = smallest position
    l_dist = np.where(has_left, np.abs(ref - l_val), np.inf)
    l_idx = order[l_first]

    # distinct values can round to the same distance; extend ties across runs
    r_idx = _extend_ties(sc, order, ref, r_dist, np.searchsorted(sc, sc[r_pos], side="right"), r_idx, +1)
    l_idx = _extend_ties(sc, order, ref, l_dist, l_first - 1, l_idx, -1)

    take_left = (l_dist < r_dist) | ((l_dist == r_dist) & (l_idx < r_idx))
    best = np.where(take_left, l_idx, r_idx)
    dist = np.where(take_left, l_dist, r_dist)
    ok = dist <= caliper
    return MatchResult(np.flatnonzero(ok), best[ok].astype(np.int64), dist[ok])


def _extend_ties(sc, order, ref, dist, nxt, idx, step):
    """Smallest original position among runs further out at exactly the same distance."""
    m = sc.size
    idx = idx.copy()
    nxt = np.asarray(nxt).copy()
    live = np.isfinite(dist) & (nxt >= 0) & (nxt < m)
    while live.any():
        k = np.clip(nxt, 0, m - 1)
        live &= np.abs(sc[k] - ref) == dist
        if not live.any():
            break
        first = np.searchsorted(sc, sc[k], side="left")
        idx = np.where(live, np.minimum(idx, order[first]), idx)
        nxt = np.where(step > 0, np.searchsorted(sc, sc[k], side="right"), first - 1)
        live &= (nxt >= 0) & (nxt < m)
    return idx


def _greedy_order(ref, order):
    if order == "descending":
        return np.argsort(-ref, kind="stable")
    if order == "ascending":
        return np.argsort(ref, kind="stable")
    if order == "input":
        return np.arange(ref.size)
    raise ContractError(f"unknown greedy order {order!r}")


def caliper_nn_without_replacement(ref_scores, cand_scores, caliper_width, order: str = "descending") -> MatchResult:
    """Greedy matching: references in ``order`` take their nearest unused candidate.

    ``order`` is ``"descending"`` (default), ``"ascending"`` or ``"input"``;
    equal scores keep input order. Distance ties go to the smallest candidate position.
    """
    ref = _scores(ref_scores, "reference scores")
    cand = _scores(cand_scores, "candidate scores")
    caliper = _check_caliper(caliper_width)
    if ref.size == 0 or cand.size == 0:
        return _empty()
    srt = np.argsort(cand, kind="stable")
    sc = cand[srt]
    m = sc.size
    # union-find "next unused at or right of i" (m = sentinel) and "at or left of i" (-1 sentinel)
    nxt = list(range(m + 1))
    prv = list(range(m + 1))  # shifted by one: prv[i + 1] describes slot i, prv[0] = sentinel

    def find_right(i):
        root = i
        while nxt[root] != root:
            root = nxt[root]
        while nxt[i] != root:
            nxt[i], i = root, nxt[i]
        return root

    def find_left(i):
        i += 1
        root = i
        while prv[root] != root:
            root = prv[root]
        while prv[i] != root:
            prv[i], i = root, prv[i]
        return root - 1

    sc_list = sc.tolist()
    srt_list = srt.tolist()

    def run_start(j):
        return int(np.searchsorted(sc, sc_list[j], side="left"))

    def run_end(j):
        return int(np.searchsorted(sc, sc_list[j], side="right"))

    refs, cands, dists = [], [], []
    for i in _greedy_order(ref, order).tolist():
        r = float(ref[i])
        pos = int(np.searchsorted(sc, r, side="left"))
        best = None
        j = find_right(pos) if pos < m else m
        if j < m:
            d = abs(sc_list[j] - r)
            best = (d, srt_list[j], j)
            k = find_right(run_end(j)) if run_end(j) < m else m
            while k < m and abs(sc_list[k] - r) == d:
                if srt_list[k] < best[1]:
                    best = (d, srt_list[k], k)
                k = find_right(run_end(k)) if run_end(k) < m else m
        k = find_left(pos - 1) if pos > 0 else -1
        d_left = abs(r - sc_list[k]) if k >= 0 else None
        while k >= 0 and abs(r - sc_list[k]) == d_left:
            start = run_start(k)
            j = find_right(start)  # smallest unused position within the run
            cand_l = (d_left, srt_list[j], j)
            if best is None or cand_l[:2] < best[:2]:
                best = cand_l
            k = find_left(start - 1) if start > 0 else -1
        if best is None:
            break  # every candidate is used
        if best[0] <= caliper:
            refs.append(i)
            cands.append(best[1])
            dists.append(best[0])
            j = best[2]
            nxt[j] = j + 1
            prv[j + 1] = j
    if not refs:
        return _empty()
    return MatchResult(np.array(refs, dtype=np.int64), np.array(cands, dtype=np.int64), np.array(dists))


def caliper_from_sd(scores, epsilon: float = DEFAULT_EPSILON) -> float:
    """``epsilon`` times the sample standard deviation (n - 1) of pooled scores."""
    s = _scores(scores, "scores")
    if s.size < 2:
        raise ContractError("caliper needs at least two scores")
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    sd = float(np.std(s, ddof=1))
    if sd == 0.0:
        warnings.warn("pooled scores have zero variance; caliper is 0 (exact matches only)",
                      RuntimeWarning, stacklevel=2)
    return epsilon * sd
