import io
import math

import numpy as np
import pytest

from brwlab import stats as st
from brwlab.rngstreams import substream


def test_estimate_ci_from_samples():
    x = np.arange(1, 101, dtype=np.float64)
    e = st.EstimateCI.from_samples(x, quantiles=True)
    assert e.mean == pytest.approx(50.5)
    assert e.std_error == pytest.approx(x.std(ddof=1) / 10)
    assert e.q50 == pytest.approx(50.5)
    assert e.covers(50.5)
    with pytest.raises(ValueError):
        st.EstimateCI.from_samples([1.0])


def test_ks_self_test_accepts_true_law():
    rng = substream(50, "selftest")
    x = rng.exponential(2.0, size=5000)
    out = st.ks_against_exponential(x, 2.0)
    assert out["passed"] and out["D"] < 0.03


def test_ks_rejects_constant_samples():
    out = st.ks_against_exponential(np.full(500, 1.3), 2.0)
    assert out["D"] >= 0.5 and not out["passed"]


def test_ks_needs_samples():
    with pytest.raises(ValueError):
        st.ks_against_exponential(np.ones(50), 1.0)


def test_chi_square_self_test():
    rng = substream(51, "selftest")
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    draws = rng.choice(4, p=probs, size=20000)
    obs = np.bincount(draws, minlength=4)
    out = st.chi_square(obs, probs)
    assert out["p_value"] > 1e-3
    shifted = np.roll(probs, 1)
    out_bad = st.chi_square(obs, shifted)
    assert out_bad["p_value"] < 1e-6


def test_chi_square_pools_sparse_tail():
    probs = np.array([0.9, 0.05, 0.03, 0.015, 0.004, 0.001])
    obs = np.array([905, 48, 31, 13, 2, 1])
    out = st.chi_square(obs, probs)
    assert out["dof"] < len(probs) - 1
    assert out["p_value"] > 0.001


def test_tightness_table_pass_and_sanity_fail():
    rng = substream(52, "selftest")
    stable = {n: 3.0 * rng.random(2000) * math.log(n) for n in (64, 128, 256)}
    out = st.tightness_table(stable, lambda n: math.log(n), 1.5)
    assert out["passed"] and out["ratio"] < 1.2
    growing = {n: rng.random(2000) * n for n in (64, 128, 256)}
    out_bad = st.tightness_table(growing, lambda n: 1.0, 1.5)
    assert not out_bad["passed"]


def test_kappa_estimates_identity():
    rng = substream(53, "selftest")
    reps, J = 500, 8
    m = rng.integers(0, 5, size=(reps, J)).astype(np.int64)
    z = (m * np.arange(1, J + 1)).sum(axis=1) + 3
    overflow = np.full(reps, 3, dtype=np.int64)  # mass not in the histogram
    out = st.kappa_estimates(m, z, overflow)
    assert out["weighted_sum"] == pytest.approx(1.0, abs=1e-12)
    assert np.all(out["kappa"] >= 0)
    with pytest.raises(ValueError):
        st.kappa_estimates(m, np.zeros(reps), overflow)


def test_coverage_selftest():
    rng = substream(54, "selftest")
    assert st.coverage_selftest(rng) >= 0.90


def test_verify_budget_flags_skipped_suites():
    from brwlab import verify as vf
    lines = []
    rows = vf.run_suites(["fundamental"], 1, budget_seconds=0.0, echo=lines.append)
    assert len(rows) == 1 and rows[0].band == "not-run" and not rows[0].passed
    assert lines and lines[0].startswith("SKIP")
    assert st.summary_dict(rows)["hard_pass"] is False


def test_report_rows_csv_shape():
    rows = [st.ReportRow("C00-demo", 8, 2, "binary", "stat-a", 0.5, "<=1", True),
            st.ReportRow("C00-demo", 8, 2, "binary", "stat-b", 2.0, "<=1", False, soft=True)]
    buf = io.StringIO()
    st.write_report_csv(rows, buf, header_lines=["seed=1"])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# seed=1"
    assert lines[1] == st.ReportRow.CSV_HEADER
    assert lines[2].endswith(",1,0") and lines[3].endswith(",0,1")
    summary = st.summary_dict(rows)
    assert summary["hard_pass"] is True
    assert summary["failed_rows"] == ["C00-demo:stat-b"]
