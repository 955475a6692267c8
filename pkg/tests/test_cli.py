import json
import subprocess
import sys

import numpy as np
import pytest

from vecmatch import example_path
from vecmatch.cli import main
from vecmatch.data import load_dataset

DATA = str(example_path())


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trimmed(tmp_path_factory):
    out = tmp_path_factory.mktemp("trim")
    assert run("trim", "--data", DATA, "--out", out) == 0
    return out


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_gps_writes_artifact_and_manifest(tmp_path):
    assert run("gps", "--data", DATA, "--out", tmp_path) == 0
    header = (tmp_path / "gps.tsv").read_text().splitlines()[0].split("\t")
    labels = load_dataset(DATA).labels
    assert header == ["id", "treatment", *(f"p_{lab}" for lab in labels)]
    assert sorted(labels) == ["control", "drugA", "drugB"]
    m = _manifest(tmp_path)
    assert m["command"] == "gps" and m["version"]
    assert DATA in m["inputs"]
    assert str(tmp_path / "gps.tsv") in m["outputs"]


def test_trim_outputs(trimmed):
    support = json.loads((trimmed / "support.json").read_text())
    assert support["n_kept"] + len(support["dropped_ids"]) == support["n_input"]
    ds = load_dataset(trimmed / "trimmed.csv")
    assert ds.n == support["n_kept"]


@pytest.mark.parametrize("design", ["vm", "crm", "kmc", "ipw"])
def test_pipeline_closure(tmp_path, trimmed, design):
    data = trimmed / "trimmed.csv"
    m_out, b_out, e_out = tmp_path / "m", tmp_path / "b", tmp_path / "e"
    extra = ["--gps", trimmed / "gps.tsv"] if design in ("vm", "kmc", "ipw") else []
    assert run("match", "--data", data, "--design", design, "--reference", "control", "--k", 5,
               "--epsilon", 0.25, "--seed", 3, "--out", m_out, *extra) == 0
    name = {"vm": "cohort.tsv", "crm": "cohort.tsv", "kmc": "subclasses.tsv", "ipw": "weights.tsv"}[design]
    assert run("balance", "--data", data, "--full-data", DATA, "--design-output", m_out / name,
               "--out", b_out) == 0
    meta = json.loads((b_out / "balance.json").read_text())
    assert meta["mean_max2sb"] >= 0
    if design != "kmc":
        assert run("estimate", "--data", data, "--design-output", m_out / name, "--out", e_out) == 0
        rows = (e_out / "effects.tsv").read_text().splitlines()
        assert len(rows) == 3


def test_vm_cohort_revalidated_and_tests_written(tmp_path, trimmed):
    data = trimmed / "trimmed.csv"
    assert run("match", "--data", data, "--design", "vm", "--reference", "control", "--seed", 1,
               "--out", tmp_path / "m") == 0
    meta = json.loads((tmp_path / "m" / "cohort.json").read_text())
    assert meta["n_trip"] > 0 and meta["reference"] == "control"
    assert run("estimate", "--data", data, "--design-output", tmp_path / "m" / "cohort.tsv",
               "--out", tmp_path / "e") == 0
    tests = (tmp_path / "e" / "tests.tsv").read_text().splitlines()
    assert [t.split("\t")[0] for t in tests[1:]] == ["friedman", "quade"]


def test_sbc(tmp_path):
    assert run("match", "--data", DATA, "--design", "sbc", "--arms", "control,drugA", "--seed", 0,
               "--out", tmp_path) == 0
    header = (tmp_path / "cohort.tsv").read_text().splitlines()[0]
    assert header == "set\tcontrol\tdrugA"


def test_tampered_cohort_rejected(tmp_path, trimmed):
    data = trimmed / "trimmed.csv"
    run("match", "--data", data, "--design", "vm", "--reference", "control", "--seed", 1, "--out", tmp_path)
    path = tmp_path / "cohort.tsv"
    lines = path.read_text().splitlines()
    first = lines[1].split("\t")
    first[2], first[3] = first[3], first[2]  # swap arm columns
    path.write_text("\n".join([lines[0], "\t".join(first), *lines[2:]]) + "\n")
    assert run("balance", "--data", data, "--design-output", path, "--out", tmp_path / "b") == 1


def test_match_is_reproducible_from_manifest(tmp_path, trimmed):
    out = tmp_path / "a"
    argv = ["match", "--data", str(trimmed / "trimmed.csv"), "--design", "vm", "--gps",
            str(trimmed / "gps.tsv"), "--seed", "5", "--out", str(out)]
    assert main(argv) == 0
    first = (out / "cohort.tsv").read_bytes()
    again = _manifest(out)["argv"]
    assert again == argv
    assert main(again) == 0
    assert (out / "cohort.tsv").read_bytes() == first


def test_estimate_without_outcome_names_column(tmp_path, capsys):
    ds_path = tmp_path / "no_outcome.csv"
    lines = open(DATA).read().splitlines()
    drop = lines[0].split(",").index("outcome")
    ds_path.write_text("\n".join(",".join(c for i, c in enumerate(l.split(",")) if i != drop) for l in lines) + "\n")
    assert run("match", "--data", ds_path, "--design", "crm", "--seed", 0, "--out", tmp_path / "m") == 0
    code = run("estimate", "--data", ds_path, "--design-output", tmp_path / "m" / "cohort.tsv",
               "--out", tmp_path / "e")
    assert code == 1
    assert "outcome" in capsys.readouterr().err


def test_seed_required_and_unknown_flag(tmp_path, capsys):
    assert run("match", "--data", DATA, "--design", "vm", "--out", tmp_path) == 1
    assert "--seed" in capsys.readouterr().err
    assert run("gps", "--data", DATA, "--out", tmp_path, "--bogus") == 1
    assert run("frobnicate") == 1


def test_numerical_failure_exit_2(tmp_path):
    path = tmp_path / "sep.csv"
    rows = ["id,treatment,x"] + [f"{i},{'abc'[i % 3]},{(i % 3) * 10 + (i % 5) * 0.1}" for i in range(30)]
    path.write_text("\n".join(rows) + "\n")
    assert run("gps", "--data", path, "--ridge", 0, "--max-iter", 3, "--out", tmp_path / "o") == 2


def test_missing_file_exit_1(tmp_path):
    assert run("gps", "--data", tmp_path / "nope.csv", "--out", tmp_path) == 1


SIM_CFG = """
[simulate]
z = 3
reps = 2
designs = pre, vm, ipw, kmc

[factors]
n_t1 = 500
gamma = 1
dist = normal
B = 0.5, 1.0
tau = 0
sigma2_sq = 1
sigma3_sq = 1
P = 3
"""


def test_simulate_deterministic_and_anova(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SIM_CFG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--config", cfg, "--seed", 7, "--out", a) == 0
    assert run("simulate", "--config", cfg, "--seed", 7, "--jobs", 2, "--chunk", 1, "--out", b) == 0
    for name in ("metrics.tsv", "replications.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = (a / "metrics.tsv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 4
    assert run("anova", "--metrics", a / "metrics.tsv", "--design", "vm", "--factors", "B",
               "--out", tmp_path / "an") == 0
    lines = (tmp_path / "an" / "anova.tsv").read_text().splitlines()
    assert lines[1].split("\t")[0] == "B"


def test_simulate_bad_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[factors]\nzeta = 1\n")
    assert run("simulate", "--config", cfg, "--seed", 1, "--out", tmp_path / "o") == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vecmatch", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "vecmatch" in proc.stdout
