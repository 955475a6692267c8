import math

import numpy as np
import pytest

from vecmatch.errors import ContractError, RankDeficientError
from vecmatch.sim import (
    SimConfig,
    anova_rank,
    b_from_B,
    generate,
    generate_z3,
    generate_z5,
    replication_seed,
    run_sweep,
    stratified_sample,
    z3_configs,
    z5_configs,
)
from vecmatch.sim.dgp import FACTORS, draw, exchangeable_cov


def test_b_from_B():
    assert b_from_B(1.0, 1.0, 1.0) == 1.0
    assert b_from_B(1.0, 0.5, 2.0) == pytest.approx(math.sqrt(3.5 / 3))
    assert b_from_B(0.0, 2.0, 0.5) == 0.0


def test_config_counts_and_exclusion():
    full = z3_configs()
    assert len(full) == 1080
    assert 2 * 2 * 2 * 5 * 2 * 3 * 3 * 2 == 1440
    assert not any(c.P == 6 and c.n_t1 == 500 for c in full)
    assert len({c.config_id() for c in full}) == 1080
    assert len(z5_configs()) == 20


def test_stratified_sample_covers_cells():
    sample = stratified_sample(z3_configs(), 120, seed=0)
    assert len(sample) == 120
    cells = {(c.B, c.dist) for c in sample}
    assert len(cells) == 10
    assert all(sum((c.B, c.dist) == cell for c in sample) == 12 for cell in cells)
    assert sample == stratified_sample(z3_configs(), 120, seed=0)


def test_generate_shapes_and_determinism():
    cfg = SimConfig(n_t1=500, gamma=2, P=6)
    a = generate(cfg, replication_seed(cfg, 3, 7))
    b = generate(cfg, replication_seed(cfg, 3, 7))
    assert np.array_equal(a.covariates, b.covariates)
    assert np.bincount(a.treatment).tolist()[1:] == [500, 1000, 2000]
    assert a.p == 6
    c = generate(cfg, replication_seed(cfg, 4, 7))
    assert not np.array_equal(a.covariates, c.covariates)


def test_mean_pattern_tiles_for_p6():
    cfg = SimConfig(n_t1=1000, B=1.0, P=6)
    ds = generate_z3(cfg, replication_seed(cfg, 0, 1))
    means = np.stack([ds.covariates[ds.treatment == a].mean(axis=0) for a in (1, 2, 3)])
    expected = np.array([[1, 0, 0, 1, 0, 0], [0, 1, 0, 0, 1, 0], [0, 0, 1, 0, 0, 1]], dtype=float)
    assert np.abs(means - expected).max() < 0.15


def test_off_diagonal_covariance_is_tau():
    rng = np.random.default_rng(0)
    x = draw(rng, 2000, np.zeros(3), exchangeable_cov(3, 1.0, 0.25), "normal")
    c = np.cov(x.T)
    se = (1 + 0.25 ** 2) ** 0.5 / np.sqrt(2000)
    off = c[np.triu_indices(3, 1)]
    assert np.all(np.abs(off - 0.25) < 3 * se)


@pytest.mark.parametrize("t_matrix,factor", [("covariance", 1.0), ("scale", 7 / 5)])
def test_t7_variance_convention(t_matrix, factor):
    rng = np.random.default_rng(1)
    x = draw(rng, 200_000, np.zeros(2), 2.0 * np.eye(2), "t7", t_matrix=t_matrix)
    assert np.allclose(x.var(axis=0), 2.0 * factor, rtol=0.04)


def test_normal_arm_variance():
    cfg = SimConfig(n_t1=1000, gamma=2, sigma2_sq=2.0, sigma3_sq=0.5)
    ds = generate(cfg, replication_seed(cfg, 0, 2))
    v2 = ds.covariates[ds.treatment == 2].var(axis=0, ddof=1)
    v3 = ds.covariates[ds.treatment == 3].var(axis=0, ddof=1)
    assert np.allclose(v2, 2.0, rtol=0.1) and np.allclose(v3, 0.5, rtol=0.1)


def test_z5_null_identical_distributions():
    cfg = SimConfig(n_t1=1000, Z=5, B=0.0)
    ds = generate_z5(cfg, replication_seed(cfg, 0, 0))
    assert ds.n_arms == 5 and ds.p == 5
    means = np.stack([ds.covariates[ds.treatment == a].mean(axis=0) for a in ds.arms])
    assert np.abs(means).max() < 0.15


def test_bad_config():
    with pytest.raises(ContractError):
        SimConfig(dist="cauchy")
    with pytest.raises(ContractError):
        SimConfig(sigma2_sq=0.0)


def test_sweep_deterministic_across_jobs():
    cfg = SimConfig(n_t1=500, B=0.5, reps=2, seed=13)
    one = run_sweep([cfg], jobs=1)
    many = run_sweep([cfg], jobs=2, chunk=1)
    assert one == many
    assert one[0].summary["vm"].ok == 2


def test_null_calibration_and_monotone_pre():
    cfgs = [SimConfig(n_t1=500, B=b, reps=3, seed=5) for b in (0.0, 0.5, 1.0)]
    res = run_sweep(cfgs)
    null = res[0].summary
    assert all(null[d].mean_max2sb < 0.10 for d in null)
    pre = [r.summary["pre"].mean_max2sb for r in res]
    assert pre[0] < pre[1] < pre[2]


def test_z5_sweep_skips_crm():
    cfg = SimConfig(n_t1=200, Z=5, B=0.5, reps=1, seed=0)
    (res,) = run_sweep([cfg])
    assert "crm" not in res.summary
    assert res.summary["vm"].mean_pct_matched > 0.5


# ANOVA -----------------------------------------------------------------------

def _grid(seed, effect):
    rng = np.random.default_rng(seed)
    rows = []
    for B in (0.0, 0.5, 1.0):
        for f in ("normal", "t7"):
            for g in (1, 2):
                for _ in range(2):
                    rows.append({"B": B, "f": f, "g": g,
                                 "y": effect(B, f, g) + rng.normal(scale=0.1)})
    return rows


def test_synthetic_b_ranks_first():
    table = anova_rank(_grid(0, lambda B, f, g: 3 * B), "y", ["B", "f", "g"])
    assert table.ranking()[0] == "B"


def test_constant_metric_zero_mean_squares():
    rows = [dict(r, y=1.5) for r in _grid(0, lambda *a: 0.0)]
    table = anova_rank(rows, "y", ["B", "f", "g"])
    assert all(r.ms == pytest.approx(0.0, abs=1e-20) for r in table.rows)


def test_matches_statsmodels_type1():
    pd = pytest.importorskip("pandas")
    smf = pytest.importorskip("statsmodels.formula.api")
    sm_anova = pytest.importorskip("statsmodels.stats.anova")
    rows = _grid(3, lambda B, f, g: B + (f == "t7") * 0.3 * B + 0.2 * g)
    df = pd.DataFrame(rows)
    fit = smf.ols("y ~ C(B) + C(f) + C(g) + C(B):C(f) + C(B):C(g) + C(f):C(g)", data=df).fit()
    ref = sm_anova.anova_lm(fit, typ=1)
    ours = {r.term: r for r in anova_rank(rows, "y", ["B", "f", "g"]).rows}
    names = {"C(B)": "B", "C(f)": "f", "C(g)": "g", "C(B):C(f)": "B*f", "C(B):C(g)": "B*g", "C(f):C(g)": "f*g"}
    for sm_name, name in names.items():
        assert ours[name].df == ref.loc[sm_name, "df"]
        assert ours[name].ss == pytest.approx(ref.loc[sm_name, "sum_sq"], rel=1e-9)
        assert ours[name].f == pytest.approx(ref.loc[sm_name, "F"], rel=1e-9)


def test_full_design_aliasing_is_reported():
    rows = [{**{f: getattr(c, f) for f in FACTORS}, "m": 0.0} for c in z3_configs()]
    rng = np.random.default_rng(0)
    for r in rows:
        r["m"] = r["B"] + rng.normal(scale=0.01)
    with pytest.raises(RankDeficientError, match=r"n_t1\*P"):
        anova_rank(rows, "m", list(FACTORS))
    table = anova_rank(rows, "m", list(FACTORS), drop_aliased=True)
    assert table.ranking()[0] == "B"
    assert "n_t1*P" in table.dropped


def test_single_level_factor_rejected():
    rows = [{"a": 1, "y": float(i)} for i in range(4)]
    with pytest.raises(ContractError):
        anova_rank(rows, "y", ["a"])


def test_kmc_subclassifies_the_untrimmed_sample():
    import warnings

    from vecmatch.balance import assess, reference_sd
    from vecmatch.data import summarize
    from vecmatch.designs import kmc_subclassify
    from vecmatch.sim.sweep import design_seed, run_replication
    from vecmatch.support import trim_and_refit

    cfg = SimConfig(n_t1=500, B=0.75, seed=11)
    got = run_replication(cfg, 2, ("pre", "kmc")).mean_max2sb["kmc"]
    ss = replication_seed(cfg, 2, cfg.seed)
    ds = generate(cfg, ss)
    delta = reference_sd(ds, summarize(ds).reference)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = trim_and_refit(ds)
        sub = kmc_subclassify(ds, tr.initial_gps, seed=design_seed(ss))
    assert sub.subclass.shape == (ds.n,)
    assert got == assess(ds, sub, delta).mean_max2sb
