"""Sequential (Type I) factorial ANOVA for ranking simulation factors."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import ContractError, RankDeficientError

RANK_TOL = 1e-9


@dataclass(frozen=True)
class AnovaRow:
    term: str
    df: int
    ss: float
    ms: float
    f: float
    p: float


@dataclass(frozen=True)
class AnovaTable:
    rows: tuple[AnovaRow, ...]  # sorted by mean square, descending
    residual_df: int
    residual_ss: float
    dropped: tuple[str, ...] = ()

    def ranking(self) -> list[str]:
        return [r.term for r in self.rows]


def _contrasts(values) -> tuple[np.ndarray, list]:
    levels = sorted(set(values), key=lambda v: (str(type(v)), v))
    if len(levels) < 2:
        raise ContractError(f"factor needs at least two levels, got {levels}")
    idx = {v: i for i, v in enumerate(levels)}
    codes = np.array([idx[v] for v in values])
    # treatment coding against the first level
    return (codes[:, None] == np.arange(1, len(levels))[None, :]).astype(float), levels


def terms_for(factors, interactions: bool = True) -> list[tuple[str, ...]]:
    terms = [(f,) for f in factors]
    if interactions:
        terms += list(itertools.combinations(factors, 2))
    return terms


def _extend(basis: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning the part of ``cols`` outside ``basis``."""
    resid = cols - basis @ (basis.T @ cols) if basis.size else cols
    # second pass for numerical orthogonality
    resid = resid - basis @ (basis.T @ resid) if basis.size else resid
    if resid.shape[1] == 0:
        return resid
    u, s, _ = np.linalg.svd(resid, full_matrices=False)
    scale = max(1.0, float(np.linalg.norm(cols, ord=2)))
    return u[:, s > RANK_TOL * scale * np.sqrt(cols.shape[0])]


def anova_rank(table, metric: str, factors, interactions: bool = True,
               drop_aliased: bool = False) -> AnovaTable:
    """Type I ANOVA of ``metric`` on all main effects and two-way interactions.

    ``table`` maps column names to equal-length sequences (or is a list of row
    dicts). Terms enter in order: main effects, then interactions. A term with
    fewer independent columns than its nominal degrees of freedom raises
    :class:`RankDeficientError` unless ``drop_aliased`` is set, in which case
    fully aliased terms are dropped and partly aliased terms keep their
    reduced degrees of freedom.
    """
    if isinstance(table, (list, tuple)):
        table = {k: [row[k] for row in table] for k in (list(factors) + [metric])}
    y = np.asarray(table[metric], dtype=float)
    if not np.all(np.isfinite(y)):
        raise ContractError(f"metric {metric!r} has non-finite values")
    n = len(y)
    coded = {f: _contrasts(list(table[f]))[0] for f in factors}
    basis = np.ones((n, 1)) / np.sqrt(n)
    raw = []
    aliased, dropped = [], []
    for term in terms_for(list(factors), interactions):
        if len(term) == 1:
            cols = coded[term[0]]
        else:
            a, b = (coded[t] for t in term)
            cols = (a[:, :, None] * b[:, None, :]).reshape(n, -1)
        name = "*".join(term)
        new = _extend(basis, cols)
        df = new.shape[1]
        if df < cols.shape[1]:
            aliased.append(name)
            if not drop_aliased:
                continue
            if df == 0:
                dropped.append(name)
                continue
        basis = np.hstack([basis, new])
        raw.append((name, df, float(np.sum((new.T @ y) ** 2))))
    if aliased and not drop_aliased:
        raise RankDeficientError(f"aliased term(s): {', '.join(aliased)}", aliased)
    fitted = basis @ (basis.T @ y)
    resid_ss = float(np.sum((y - fitted) ** 2))
    resid_df = n - basis.shape[1]
    resid_ms = resid_ss / resid_df if resid_df > 0 else float("nan")
    rows = []
    for name, df, ss in raw:
        ms = ss / df
        if resid_df > 0 and resid_ms > 0:
            f = ms / resid_ms
            p = float(stats.f.sf(f, df, resid_df))
        else:
            f = p = float("nan")
        rows.append(AnovaRow(name, df, ss, ms, f, p))
    rows.sort(key=lambda r: -r.ms)
    return AnovaTable(rows=tuple(rows), residual_df=resid_df, residual_ss=resid_ss, dropped=tuple(dropped))
