"""The fourteen acceptance checks at full size, one test per check.

The whole core suite runs once per session with master seed 1; each check's
PASS/FAIL line is printed in the terminal summary.
"""
import pytest
from conftest import ACCEPTANCE_LINES

from artifact import checks
from artifact.verify import run_matrix, write_reports

MASTER_SEED = 1
CORE = checks.suite_names("core")


@pytest.fixture(scope="module")
def core_reports(request, tmp_path_factory):
    reports = {r.name: r for r in run_matrix(CORE, seed=MASTER_SEED)}
    write_reports(list(reports.values()), str(tmp_path_factory.mktemp("acceptance") / "core"),
                  {"suite": "core", "seed": MASTER_SEED})
    request.config.stash[ACCEPTANCE_LINES] = [reports[n].line() for n in CORE]
    return reports


@pytest.mark.parametrize("name", CORE)
def test_criterion(core_reports, name):
    rep = core_reports[name]
    print(rep.line())
    assert rep.error is None, rep.error
    assert rep.passed, f"{rep.line()} {rep.details}"

