"""Command-line interface: gps, trim, match, balance, estimate, simulate, anova.

Exit status is 0 on success, 1 on validation or usage errors and 2 on
numerical failures. Every command writes its outputs and a ``manifest.json``
into ``--out``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import artifacts as art
from .balance import assess, reference_sd
from .data import Schema, load_dataset, summarize, write_dataset
from .designs import (
    DEFAULT_K,
    MatchedCohort,
    WeightVector,
    crm_match,
    ipw_weights,
    kmc_subclassify,
    sbc_match,
    vector_match,
)
from .errors import ContractError, VecmatchError
from .gps import DEFAULT_MAX_ITER, DEFAULT_RIDGE, DEFAULT_TOL, fit_multinomial_logit, predict_gps
from .inference import cohort_outcomes, friedman_test, ipw_estimates, quade_test, satt_estimates
from .matcher import DEFAULT_EPSILON
from .sim import dgp
from .sim.anova import anova_rank
from .sim.sweep import ALL_DESIGNS, run_sweep
from .support import trim_and_refit

log = logging.getLogger("vecmatch")

DEFAULT_REPS = 200
SIM_SECTION = "simulate"
FACTOR_SECTION = "factors"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting with argparse's status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# helpers -------------------------------------------------------------------

def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects inputs, outputs and timings for the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.timings: dict[str, float] = {}
        self.seeds: dict[str, int] = {}
        self._t0 = time.perf_counter()

    def input(self, path) -> Path:
        path = Path(path)
        self.inputs.append(path)
        side = art.sidecar(path)
        if side.exists() and side != path:
            self.inputs.append(side)
        return path

    def path(self, name) -> Path:
        p = self.out / name
        self.outputs.append(p)
        if p.suffix in (".tsv",):
            self.outputs.append(art.sidecar(p))
        return p

    def timed(self, label, fn, *a, **kw):
        t = time.perf_counter()
        result = fn(*a, **kw)
        self.timings[label] = round(time.perf_counter() - t, 6)
        return result

    def finish(self) -> None:
        self.timings["total"] = round(time.perf_counter() - self._t0, 6)
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "config": config,
            "seeds": self.seeds,
            "version": __version__,
            "inputs": {str(p): _digest(p) for p in self.inputs if p.exists()},
            "outputs": {str(p): _digest(p) for p in self.outputs if p.exists()},
            "timings": self.timings,
        }
        art.write_json(self.out / "manifest.json", manifest)


def _schema(args, require_outcome=False) -> Schema:
    covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    return Schema(treatment=args.treatment_col, outcome=args.outcome_col, id=args.id_col,
                  covariates=covs, require_outcome=require_outcome)


def _load(run: Run, args, path=None, require_outcome=False):
    return load_dataset(run.input(path or args.data), _schema(args, require_outcome))


def _gps_for(run: Run, args, ds):
    if getattr(args, "gps", None):
        return art.read_gps(run.input(args.gps), ds)
    model = run.timed("gps_fit", fit_multinomial_logit, ds, args.ridge, args.tol, args.max_iter)
    return predict_gps(model, ds)


# subcommands ---------------------------------------------------------------

def cmd_gps(run: Run, args) -> None:
    ds = _load(run, args)
    model = run.timed("gps_fit", fit_multinomial_logit, ds, args.ridge, args.tol, args.max_iter)
    gps = predict_gps(model, ds)
    art.write_gps(run.path("gps.tsv"), ds, gps, converged=model.converged, iterations=model.iterations,
                  loglik=model.loglik, grad_norm=model.grad_norm, ridge=model.ridge,
                  coefficients=model.full_coefficients(), baseline=ds.labels[model.arms[-1] - 1])


def cmd_trim(run: Run, args) -> None:
    ds = _load(run, args)
    tr = run.timed("trim_and_refit", trim_and_refit, ds, args.ridge, args.tol, args.max_iter)
    write_dataset(tr.dataset, run.path("trimmed.csv"))
    art.write_gps(run.path("gps.tsv"), tr.dataset, tr.gps, converged=tr.model.converged,
                  iterations=tr.model.iterations, coefficients=tr.model.full_coefficients())
    dropped = np.setdiff1d(np.arange(ds.n), tr.kept)
    art.write_json(run.path("support.json"), {
        "kind": tr.support.kind,
        "low": dict(zip(ds.labels, tr.support.low.tolist())),
        "high": dict(zip(ds.labels, tr.support.high.tolist())),
        "n_input": ds.n, "n_kept": len(tr.kept), "dropped_fraction": tr.dropped_fraction,
        "dropped_ids": ds.unit_ids[dropped].tolist(),
        "first_pass_converged": tr.initial_model.converged, "refit_converged": tr.model.converged,
    })


def cmd_match(run: Run, args) -> None:
    ds = _load(run, args)
    run.seeds["seed"] = args.seed
    ref = ds.arm_index(args.reference) if args.reference is not None else summarize(ds).reference
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.design == "vm":
            gps = _gps_for(run, args, ds)
            out = run.timed("match", vector_match, ds, gps, ref, args.k, args.epsilon, args.seed,
                           caliper_scope=args.caliper_scope)
        elif args.design == "crm":
            out = run.timed("match", crm_match, ds, ref, args.epsilon, args.ridge, args.tol, args.max_iter,
                            args.scale, args.order)
        elif args.design == "sbc":
            if not args.arms:
                raise ContractError("--arms REF,COMP is required for --design sbc")
            pair = [a.strip() for a in args.arms.split(",")]
            if len(pair) != 2:
                raise ContractError("--arms takes exactly two labels")
            out = run.timed("match", sbc_match, ds, pair, args.epsilon, args.ridge, args.tol, args.max_iter,
                            args.scale, args.order)
        elif args.design == "kmc":
            gps = _gps_for(run, args, ds)
            out = run.timed("match", kmc_subclassify, ds, gps, args.k, args.seed)
        else:
            gps = _gps_for(run, args, ds)
            out = run.timed("match", ipw_weights, ds, gps)
    notes = [str(w.message) for w in caught]
    for note in notes:
        log.warning(note)
    if isinstance(out, MatchedCohort):
        out.validate(ds.treatment)
        diag = {k: v for k, v in out.diagnostics.items() if k != "support"}
        art.write_cohort(run.path("cohort.tsv"), ds, out, diagnostics=diag, warnings=notes)
    elif isinstance(out, WeightVector):
        art.write_weights(run.path("weights.tsv"), ds, out, max_weight=out.max_weight, warnings=notes)
    else:
        art.write_subclasses(run.path("subclasses.tsv"), ds, out, objective=out.objective, warnings=notes)


def cmd_balance(run: Run, args) -> None:
    ds = _load(run, args)
    full = _load(run, args, args.full_data) if args.full_data else ds
    output = art.read_design_output(run.input(args.design_output), ds)
    if args.reference is not None:
        ref = ds.arm_index(args.reference)
    elif isinstance(output, MatchedCohort):
        ref = output.reference
    else:
        ref = summarize(ds).reference
    if tuple(full.labels) != tuple(ds.labels):
        raise ContractError("--full-data has different treatment labels from --data")
    delta = reference_sd(full, ref)
    eligible = int(np.sum(ds.treatment == ref))
    report = assess(ds, output, delta, eligible if isinstance(output, MatchedCohort) else None)
    labels = [ds.labels[a - 1] for a in report.arms]
    pairs = list(report.sb)
    header = (["covariate"] + [f"mean_{lab}" for lab in labels]
              + [f"sb_{ds.labels[a - 1]}_{ds.labels[b - 1]}" for a, b in pairs] + ["max2sb", "delta"])
    rows = []
    for j, name in enumerate(ds.covariate_names):
        rows.append([name, *report.weighted_means[:, j].tolist(), *(report.sb[pr][j] for pr in pairs),
                     float(report.max2sb[j]), float(delta[j])])
    art.write_table(run.path("balance.tsv"), header, rows)
    art.write_json(art.sidecar(run.out / "balance.tsv"), {
        "kind": "balance", "reference": ds.labels[ref - 1], "mean_max2sb": report.mean_max2sb,
        "pct_matched": report.pct_matched, "exceeds_0.20": int(report.exceeds(0.20).sum()),
        "exceeds_0.25": int(report.exceeds(0.25).sum()),
    })


def cmd_estimate(run: Run, args) -> None:
    ds = _load(run, args, require_outcome=True)
    output = art.read_design_output(run.input(args.design_output), ds)
    rows, tests = [], []
    if isinstance(output, MatchedCohort):
        est = satt_estimates(output, ds)
        for (a, b), v in est.satt.items():
            rows.append(["satt", ds.labels[a - 1], ds.labels[b - 1], v, est.n_trip])
        y = cohort_outcomes(output, ds)
        if output.n_trip >= 2:
            for fn in (friedman_test, quade_test):
                try:
                    r = fn(y, args.exact_threshold)
                except VecmatchError as exc:
                    log.warning("%s skipped: %s", fn.__name__, exc)
                    continue
                tests.append([r.name, r.statistic, ",".join(str(d) for d in r.dof), r.p_value_asymptotic,
                              "" if r.p_value_exact is None else r.p_value_exact])
    elif isinstance(output, WeightVector):
        ref = ds.arm_index(args.reference) if args.reference is not None else summarize(ds).reference
        est = ipw_estimates(ds, output, ref)
        for (a, b), v in est.ipw_pate.items():
            rows.append(["ipw_pate", ds.labels[a - 1], ds.labels[b - 1], v, ds.n])
    else:
        raise ContractError("estimate takes a cohort or a weights artifact")
    art.write_table(run.path("effects.tsv"), ["estimand", "reference", "comparator", "estimate", "n"], rows)
    art.write_json(art.sidecar(run.out / "effects.tsv"), {"kind": "effects", "labels": list(ds.labels)})
    if tests:
        art.write_table(run.path("tests.tsv"), ["test", "statistic", "dof", "p_asymptotic", "p_exact"], tests)
        art.write_json(art.sidecar(run.out / "tests.tsv"), {"kind": "tests"})


# simulate ------------------------------------------------------------------

def _levels(text: str, cast):
    return tuple(cast(v.strip()) for v in text.split(",") if v.strip())


FACTOR_CAST = {"n_t1": int, "gamma": int, "dist": str, "B": float, "tau": float,
               "sigma2_sq": float, "sigma3_sq": float, "P": int}


def load_sim_config(path, seed: int) -> tuple[list, tuple[str, ...], dict]:
    """Parse a simulate config file into configs, designs and resolved settings."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # factor names are case sensitive (B vs b)
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise ContractError(f"cannot parse config {path}: {exc}") from None
    if not read:
        raise ContractError(f"config file {path} not found")
    sim = cp[SIM_SECTION] if cp.has_section(SIM_SECTION) else {}
    z = int(sim.get("z", 3))
    reps = int(sim.get("reps", DEFAULT_REPS))
    designs = _levels(sim.get("designs", ",".join(ALL_DESIGNS)), str)
    sample = int(sim.get("sample", 0))
    sample_seed = int(sim.get("sample_seed", 0))
    levels = {}
    if cp.has_section(FACTOR_SECTION):
        for key, value in cp[FACTOR_SECTION].items():
            if key not in FACTOR_CAST:
                raise ContractError(f"unknown factor {key!r} in [{FACTOR_SECTION}]")
            levels[key] = _levels(value, FACTOR_CAST[key])
    if z == 3:
        configs = dgp.z3_configs(reps=reps, seed=seed, **levels)
    elif z == 5:
        allowed = {"gamma", "dist", "B"}
        if set(levels) - allowed:
            raise ContractError(f"Z=5 configs accept only factors {sorted(allowed)}")
        configs = [c for c in dgp.z5_configs(reps=reps, seed=seed)
                   if all(getattr(c, k) in v for k, v in levels.items())]
    else:
        raise ContractError("z must be 3 or 5")
    if sample:
        configs = dgp.stratified_sample(configs, sample, sample_seed)
    if not configs:
        raise ContractError("config selects no simulation cells")
    resolved = {"z": z, "reps": reps, "designs": list(designs), "sample": sample, "sample_seed": sample_seed,
                "factors": {k: list(v) for k, v in levels.items()}, "n_configs": len(configs)}
    return configs, designs, resolved


METRIC_HEADER = ["config_id", "Z", *dgp.FACTORS, "design", "reps_ok", "failures",
                 "mean_max2sb", "mean_pct_matched", "mean_dropped_fraction"]
REP_HEADER = ["config_id", "rep", "design", "mean_max2sb", "pct_matched", "n_trip", "dropped_fraction", "error"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sim_results(results, metrics_path, reps_path) -> None:
    with open(metrics_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(METRIC_HEADER)
        for res in results:
            c = res.config
            for d in res.designs:
                s = res.summary[d]
                w.writerow([c.config_id(), c.Z, *(getattr(c, f) for f in dgp.FACTORS), d, s.ok, s.failures,
                            _cell(s.mean_max2sb), _cell(s.mean_pct_matched), _cell(res.mean_dropped_fraction)])
    with open(reps_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(REP_HEADER)
        for res in results:
            cid = res.config.config_id()
            for r in res.reps:
                for d in res.designs:
                    w.writerow([cid, r.rep, d, _cell(r.mean_max2sb.get(d)), _cell(r.pct_matched.get(d)),
                                _cell(r.n_trip.get(d)), _cell(r.dropped_fraction), r.errors.get(d, "")])


def cmd_simulate(run: Run, args) -> None:
    configs, designs, resolved = load_sim_config(run.input(args.config), args.seed)
    run.seeds["master"] = args.seed
    if args.reps is not None:
        configs = dgp.with_run(configs, args.reps, args.seed)
        resolved["reps"] = args.reps
    results = run.timed("sweep", run_sweep, configs, designs, args.jobs, args.chunk)
    write_sim_results(results, run.path("metrics.tsv"), run.path("replications.tsv"))
    art.write_json(art.sidecar(run.out / "metrics.tsv"), {"kind": "metrics", **resolved})
    failed = sum(s.failures for r in results for s in r.summary.values())
    if failed:
        log.warning("%d design-replication failure(s); see replications.tsv", failed)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if not rows:
        raise ContractError(f"{path} has no rows")
    missing = [c for c in ("design", "mean_max2sb") if c not in rows[0]]
    if missing:
        raise ContractError(f"{path} lacks column(s) {missing}")
    return rows


def cmd_anova(run: Run, args) -> None:
    rows = [r for r in read_metrics(run.input(args.metrics)) if r["design"] == args.design]
    if not rows:
        raise ContractError(f"no rows for design {args.design!r}")
    rows = [r for r in rows if r.get(args.metric, "") not in ("", "nan")]
    if args.factors:
        factors = [f.strip() for f in args.factors.split(",")]
    else:
        factors = [f for f in dgp.FACTORS if len({r[f] for r in rows}) > 1]
    table = {f: [FACTOR_CAST[f](r[f]) if f in FACTOR_CAST else r[f] for r in rows] for f in factors}
    table[args.metric] = [float(r[args.metric]) for r in rows]
    result = run.timed("anova", anova_rank, table, args.metric, factors, True, args.drop_aliased)
    art.write_table(run.path("anova.tsv"), ["term", "df", "ss", "ms", "f", "p"],
                    [[r.term, r.df, r.ss, r.ms, r.f, r.p] for r in result.rows]
                    + [["Residual", result.residual_df, result.residual_ss,
                        result.residual_ss / result.residual_df if result.residual_df else float("nan"), "", ""]])
    art.write_json(art.sidecar(run.out / "anova.tsv"), {"kind": "anova", "design": args.design,
                                                         "metric": args.metric, "dropped": list(result.dropped)})


# parser --------------------------------------------------------------------

def _data_args(p, data=True):
    if data:
        p.add_argument("--data", required=True, help="delimited input file (.csv or .tsv)")
    p.add_argument("--treatment-col", default="treatment")
    p.add_argument("--outcome-col", default="outcome")
    p.add_argument("--id-col", default="id")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")


def _fit_args(p):
    p.add_argument("--ridge", type=float, default=DEFAULT_RIDGE)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vecmatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vecmatch {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gps", help="fit the multinomial logit GPS")
    _data_args(p); _fit_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gps)

    p = sub.add_parser("trim", help="rectangular common-support trimming and re-fit")
    _data_args(p); _fit_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser("match", help="run a design: vm, crm, sbc, kmc or ipw")
    _data_args(p); _fit_args(p)
    p.add_argument("--design", required=True, choices=("vm", "crm", "sbc", "kmc", "ipw"))
    p.add_argument("--gps", help="GPS artifact from `gps` or `trim` (default: fit on --data)")
    p.add_argument("--reference", help="reference arm label (default: smallest arm)")
    p.add_argument("--arms", help="REF,COMP labels for --design sbc")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--caliper-scope", choices=("stratum", "pair"), default="stratum",
                   help="vm: caliper SD taken within each stratum or over the whole pair")
    p.add_argument("--scale", choices=("logit", "ps"), default="logit")
    p.add_argument("--order", choices=("input", "descending", "ascending"), default="input")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("balance", help="covariate balance of a design output")
    _data_args(p)
    p.add_argument("--design-output", required=True)
    p.add_argument("--full-data", help="untrimmed data for the SB denominators (default: --data)")
    p.add_argument("--reference")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("estimate", help="SATT / IPW effect estimates and rank tests")
    _data_args(p)
    p.add_argument("--design-output", required=True)
    p.add_argument("--reference")
    p.add_argument("--exact-threshold", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run the simulation sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--reps", type=int, help="override reps from the config")
    p.add_argument("--chunk", type=int, default=10, help="replications per work unit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("anova", help="rank simulation factors by mean square")
    p.add_argument("--metrics", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--metric", default="mean_max2sb")
    p.add_argument("--factors")
    p.add_argument("--drop-aliased", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anova)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        run = Run(args, argv)
        args.func(run, args)
        run.finish()
    except VecmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
