"""Replication runner, per-config aggregation, and a parallel sweep driver."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..balance import assess, reference_sd
from ..data import summarize
from ..designs import crm_match, ipw_weights, kmc_subclassify, vector_match
from ..errors import VecmatchError
from ..support import trim_and_refit
from .dgp import SimConfig, generate, replication_seed

ALL_DESIGNS = ("pre", "pre_trim", "vm", "crm", "ipw", "kmc")
COHORT_DESIGNS = ("vm", "crm")
DESIGN_STREAM = 0x5EED


@dataclass(frozen=True)
class RepMetrics:
    """Raw metrics for one replication; ``None`` marks a failed design."""

    rep: int
    mean_max2sb: dict
    pct_matched: dict
    n_trip: dict
    dropped_fraction: float | None
    errors: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DesignSummary:
    mean_max2sb: float
    mean_pct_matched: float | None
    ok: int
    failures: int


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    designs: tuple[str, ...]
    reps: tuple[RepMetrics, ...]
    summary: dict
    mean_dropped_fraction: float
    failed_reps: int


def design_seed(rep_seed: np.random.SeedSequence) -> int:
    """Seed for the clustering steps, on a stream separate from data generation."""
    child = np.random.SeedSequence(rep_seed.entropy, spawn_key=(DESIGN_STREAM,))
    return int(child.generate_state(1)[0])


def designs_for(config: SimConfig, designs) -> tuple[str, ...]:
    out = tuple(d for d in ALL_DESIGNS if d in set(designs))
    unknown = set(designs) - set(ALL_DESIGNS)
    if unknown:
        raise ValueError(f"unknown design(s): {sorted(unknown)}")
    # common referent matching is defined for three arms only
    return tuple(d for d in out if not (d == "crm" and config.Z != 3))


def run_replication(config: SimConfig, rep: int, designs=ALL_DESIGNS) -> RepMetrics:
    """generate -> trim and re-fit -> designs -> balance, for one replication."""
    designs = designs_for(config, designs)
    seed_seq = replication_seed(config, rep, config.seed)
    ds = generate(config, seed_seq)
    ref = summarize(ds).reference
    delta = reference_sd(ds, ref)
    sb, pct, ntrip, errors = {}, {}, {}, {}
    if "pre" in designs:
        sb["pre"] = assess(ds, None, delta).mean_max2sb
    try:
        tr = trim_and_refit(ds)
    except VecmatchError as exc:
        for d in designs:
            if d != "pre":
                sb[d] = None
                errors[d] = f"{type(exc).__name__}: {exc}"
        return RepMetrics(rep, sb, pct, ntrip, None, errors)
    d = tr.dataset
    eligible = int(np.sum(d.treatment == ref))
    seed = design_seed(seed_seq)
    runners = {
        "pre_trim": lambda: None,
        "vm": lambda: vector_match(d, tr.gps, ref, seed=seed),
        "crm": lambda: crm_match(d, ref),
        "ipw": lambda: ipw_weights(d, tr.gps),
        # KMC subclassifies every subject: full sample, first-pass GPS
        "kmc": lambda: kmc_subclassify(ds, tr.initial_gps, seed=seed),
    }
    for name in designs:
        if name == "pre":
            continue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out = runners[name]()
                report = assess(ds if name == "kmc" else d, out, delta,
                                eligible if name in COHORT_DESIGNS else None)
            sb[name] = report.mean_max2sb
            if name in COHORT_DESIGNS:
                pct[name] = report.pct_matched
                ntrip[name] = out.n_trip
        except VecmatchError as exc:
            sb[name] = None
            errors[name] = f"{type(exc).__name__}: {exc}"
    return RepMetrics(rep, sb, pct, ntrip, tr.dropped_fraction, errors)


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


def summarize_reps(config: SimConfig, designs, reps) -> SimResult:
    designs = designs_for(config, designs)
    reps = tuple(sorted(reps, key=lambda r: r.rep))
    summary = {}
    for name in designs:
        ok = [r for r in reps if r.mean_max2sb.get(name) is not None]
        pcts = [r.pct_matched[name] for r in ok if name in r.pct_matched]
        summary[name] = DesignSummary(
            mean_max2sb=_mean(r.mean_max2sb[name] for r in ok),
            mean_pct_matched=_mean(pcts) if name in COHORT_DESIGNS else None,
            ok=len(ok), failures=len(reps) - len(ok),
        )
    dropped = [r.dropped_fraction for r in reps if r.dropped_fraction is not None]
    return SimResult(config=config, designs=designs, reps=reps, summary=summary,
                     mean_dropped_fraction=_mean(dropped),
                     failed_reps=sum(r.dropped_fraction is None for r in reps))


def _run_chunk(args):
    config, start, stop, designs = args
    return [run_replication(config, r, designs) for r in range(start, stop)]


def _chunks(configs, designs, chunk):
    for i, c in enumerate(configs):
        for start in range(0, c.reps, chunk):
            yield i, (c, start, min(c.reps, start + chunk), designs)


def run_config(config: SimConfig, designs=ALL_DESIGNS) -> SimResult:
    return summarize_reps(config, designs, _run_chunk((config, 0, config.reps, designs)))


def run_sweep(configs, designs=ALL_DESIGNS, jobs: int = 1, chunk: int = 10, progress=None) -> list[SimResult]:
    """Run every config; results are identical for any ``jobs``.

    Work is split into chunks of ``chunk`` replications; each replication's
    randomness depends only on (config, rep, master seed).
    """
    configs = list(configs)
    designs = tuple(designs)
    tasks = list(_chunks(configs, designs, max(1, chunk)))
    collected: list[list[RepMetrics]] = [[] for _ in configs]
    if jobs <= 1:
        results = map(_run_chunk, (t for _, t in tasks))
        for (i, _), reps in zip(tasks, results):
            collected[i].extend(reps)
            if progress:
                progress(len(reps))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for (i, _), reps in zip(tasks, pool.map(_run_chunk, (t for _, t in tasks))):
                collected[i].extend(reps)
                if progress:
                    progress(len(reps))
    return [summarize_reps(c, designs, reps) for c, reps in zip(configs, collected)]

