import json
import math

import numpy as np
import pytest

from artifact.envgen import PotentialSpec
from artifact.experiments import (EXPERIMENTS, ConfigError, ExperimentReport, Verdict, config_hash, fmt,
                                  merge_config, nonlinearity_from, normality_tests, run_experiment)

SMALL_PROFILE = {"n_env": 4, "n_units": 60, "n_eta": 100}
COARSE = {"dx": 0.05, "dt": 0.01}
FLAT = PotentialSpec.constant(1.0).to_dict()


def _small(name):
    return {
        "log_gap": {"potential": PotentialSpec.matern(4.0, 4.0, 0.99, seed=3).to_dict(), "n_seeds": 2,
                    "T": 40.0, "t_fit": [10.0, 40.0], "speed_t": 40.0, "speed_tol": 0.2,
                    "profile": SMALL_PROFILE, "grid": COARSE},
        "front_clt": {"n_seeds": 12, "ns": [10, 20, 40], "profile": SMALL_PROFILE, "grid": COARSE,
                      "ad_mc_samples": 200},
        "logu_clt": {"n_seeds": 8, "ns": [10, 20, 40], "profile": SMALL_PROFILE, "grid": COARSE,
                     "ad_mc_samples": 200},
        "tilt_concentration": {"n_seeds": 10, "ns": [25, 50, 100], "profile": SMALL_PROFILE},
        "perturbation_diag": {"n_seeds": 2, "ts": [20, 40], "profile": SMALL_PROFILE, "grid": COARSE},
        "exact_ld_diag": {"n_seeds": 2, "xs": [20, 40, 60], "profile": SMALL_PROFILE},
        "vc_scan": {"points": [[5.0, 0.5, 0.05], [0.1, 0.5, 0.05]], "n_env": 4, "n_units": 60, "n_eta": 100},
        "homogeneous_baseline": {"T": 40.0, "t_fit": [10.0, 40.0]},
        "breakpoint_approx": {"n_seeds": 2, "xs": [20, 30, 40], "profile": SMALL_PROFILE, "grid": COARSE},
    }[name]


@pytest.fixture(scope="module")
def reports():
    return {name: run_experiment(name, _small(name)) for name in EXPERIMENTS}


def test_every_experiment_produces_a_report(reports):
    for name, rep in reports.items():
        assert isinstance(rep, ExperimentReport) and rep.name == name
        assert rep.verdicts, name
        for v in rep.verdicts:
            assert isinstance(v.passed, bool)
            assert v.criterion in {str(i) for i in range(1, 15)} | {"diag"}
        d = rep.to_dict()
        assert d["schema_version"] == 1
        json.dumps(d)
        assert d["manifest"]["config_hash"] == config_hash(rep.config)


def test_reports_reproducible(reports):
    again = run_experiment("tilt_concentration", _small("tilt_concentration"))
    assert again.to_dict() == reports["tilt_concentration"].to_dict()


def test_jobs_do_not_change_output(reports):
    par = run_experiment("breakpoint_approx", _small("breakpoint_approx"), jobs=2)
    assert par.to_dict() == reports["breakpoint_approx"].to_dict()


def test_write_is_atomic_and_write_once(reports, tmp_path):
    rep = reports["vc_scan"]
    out = rep.write(tmp_path / "vc")
    for f in ("report.json", "manifest.json", "summary.csv"):
        assert (out / f).exists()
    with pytest.raises(FileExistsError):
        rep.write(tmp_path / "vc")
    first = (out / "summary.csv").read_bytes()
    rep.write(tmp_path / "vc", overwrite=True)
    assert (out / "summary.csv").read_bytes() == first


def test_vc_scan_orderings(reports):
    rep = reports["vc_scan"]
    recs = {r["a"]: r for r in rep.records}
    assert recs[5.0]["vc"] > recs[5.0]["v0"]
    assert recs[0.1]["v0"] > recs[0.1]["vc"]


def test_homogeneous_gap_nonnegative(reports):
    rep = reports["log_gap"]
    for v in rep.verdicts_for("9"):
        if "gap" in v.check and ">=" in v.threshold:
            assert v.passed


def test_degenerate_clt_branch():
    rep = run_experiment("front_clt", {"potential": FLAT, "n_seeds": 3, "ns": [10, 20, 40], "grid": COARSE})
    assert rep.aggregates["degenerate"]
    assert all(v.passed for v in rep.verdicts)
    d = [r["d_40"] for r in rep.records]
    assert np.ptp(d) == 0.0


def test_config_validation():
    with pytest.raises(ConfigError):
        merge_config({"a": 1, "b": {"c": 2}}, {"b": {"d": 3}})
    m = merge_config({"a": 1, "b": {"c": 2, "e": 1}}, {"b": {"c": 5}})
    assert m == {"a": 1, "b": {"c": 5, "e": 1}}
    with pytest.raises(ConfigError):
        run_experiment("tilt_concentration", {"no_such_key": 1})
    with pytest.raises(ConfigError):
        nonlinearity_from("quadratic")
    assert nonlinearity_from({"gm": 3}).kind == "gm_family"


def test_verdict_and_fmt():
    v = Verdict("7", "x", np.bool_(True), 1.0, "t")
    assert v.passed is True
    assert float(fmt(0.1)) == 0.1
    assert fmt(1 / 3) == repr(1 / 3)


def test_normality_tests_reference():
    z = np.random.default_rng(0).standard_normal(400)
    res = normality_tests(z, 200, seed=1)
    assert res["ks_p"] > 0.01
    shifted = normality_tests(z + 1.0, 200, seed=1)
    assert shifted["ks_p"] < 1e-6
