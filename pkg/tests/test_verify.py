import numpy as np
import pytest
from scipy import stats

from artifact import checks, verify


def test_ks_calibration_under_null():
    rng = np.random.default_rng(0)
    ps = [verify.ks_test(rng.standard_normal(200), stats.norm.cdf).p_value for _ in range(200)]
    frac = np.mean(np.array(ps) < 0.05)
    assert 0.02 <= frac <= 0.09


def test_chi_square_exact_counts():
    rep = verify.chi_square(np.array([25, 50, 25]), np.array([0.25, 0.5, 0.25]))
    assert rep.statistic == 0 and rep.passed


def test_slope_fit_exact():
    x = np.array([1.0, 2.0, 3.0])
    assert verify.slope_fit(x, 2 * x).statistic == pytest.approx(2.0)
    rep = verify.slope_fit(x, 2 * x + 1, through_origin=False, expected=(1.9, 2.1))
    assert rep.passed and rep.statistic == pytest.approx(2.0)


def test_underpowered_input_raises():
    with pytest.raises(verify.InsufficientDataError):
        verify.ks_test(np.zeros(5), stats.norm.cdf)
    with pytest.raises(verify.InsufficientDataError):
        verify.proportion_z(3, 10, 0.5)
    with pytest.raises(verify.InsufficientDataError):
        verify.chi_square(np.array([1, 2]), np.array([0.5, 0.5]))


def test_proportion_and_mean_z():
    assert verify.proportion_z(500, 1000, 0.5).z_score == pytest.approx(0)
    assert not verify.proportion_z(600, 1000, 0.5).passed
    assert verify.mean_z(np.ones(50), 1.0, sd=1.0).passed


def test_empty_suite():
    assert verify.run_matrix("empty") == []


def test_geometric_single_check():
    (rep,) = verify.run_matrix(["geometric-N"], seed=1)
    assert rep.name == "geometric-N"
    assert rep.error is None
    assert rep.p_value is not None and rep.n == 1000
    assert len(rep.details["counts"]) == len(rep.details["expected"])


def test_crash_becomes_failed_report(monkeypatch):
    def boom(seed):
        raise RuntimeError("broken")
    monkeypatch.setitem(checks.REGISTRY, "boom", boom)
    (rep,) = verify.run_matrix(["boom"], seed=1)
    assert not rep.passed and "broken" in rep.error


def test_reports_deterministic(tmp_path):
    names = ["smoke-c01-loewner-closed-form", "smoke-c02-sle4-driver-variance"]
    a = verify.write_reports(verify.run_matrix(names, seed=4), str(tmp_path / "a"), {"seed": 4})
    b = verify.write_reports(verify.run_matrix(names, seed=4), str(tmp_path / "b"), {"seed": 4})
    for pa, pb in zip(a, b):
        assert open(pa).read() == open(pb).read()


def test_check_seed_stable_and_distinct():
    assert verify.check_seed(1, "x") == verify.check_seed(1, "x")
    assert verify.check_seed(1, "x") != verify.check_seed(1, "y")
    assert verify.check_seed(1, "x") != verify.check_seed(2, "x")


def test_bonferroni_note():
    reps = [verify.StatReport(f"r{i}", 10, 0.0, passed=True) for i in range(12)]
    assert "Bonferroni" in verify.bonferroni_note(reps)
    assert verify.bonferroni_note(reps[:2]) is None


def test_suites():
    assert len(checks.suite_names("core")) == 14
    assert len(checks.suite_names("smoke")) == 14
    assert all(n in checks.REGISTRY for s in checks.SUITES for n in checks.suite_names(s))
    with pytest.raises(KeyError):
        checks.suite_names("nope")
