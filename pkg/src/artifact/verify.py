"""Statistical checks and the scripted check matrix.

Every check returns a StatReport.  Distributional checks pass when p > 0.01,
mean checks when |z| < 3; exact lattice identities pass with zero failures.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

P_THRESHOLD = 0.01
Z_TOLERANCE = 3.0
BONFERRONI_MIN = 10


class InsufficientDataError(ValueError):
    """Raised instead of reporting a pass on under-powered input."""


@dataclass
class StatReport:
    name: str
    n: int
    statistic: float
    p_value: float | None = None
    z_score: float | None = None
    tolerance: float = P_THRESHOLD
    rule: str = "p>tol"
    passed: bool = False
    config_hash: str = ""
    seed: int | None = None
    details: dict = field(default_factory=dict)
    error: str | None = None
    runtime: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if self.error:
            return f"{tag} {self.name}: error {self.error}"
        val = f"p={self.p_value:.4g}" if self.p_value is not None else (
            f"z={self.z_score:.3g}" if self.z_score is not None else f"stat={self.statistic:.4g}")
        return f"{tag} {self.name}: {val} ({self.rule}, tol={self.tolerance}, n={self.n})"

    def record(self) -> dict:
        d = asdict(self)
        d.pop("runtime")
        return d


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _finish(rep: StatReport, config, seed) -> StatReport:
    rep.config_hash = config_hash(config or {})
    rep.seed = None if seed is None else int(seed)
    return rep


def ks_test(samples, cdf: Callable, name: str = "ks", threshold: float = P_THRESHOLD, config=None,
            seed=None) -> StatReport:
    """One-sample KS against a continuous cdf; exact distribution for small n, asymptotic otherwise."""
    x = np.asarray(samples, dtype=float)
    if x.size < 30:
        raise InsufficientDataError(f"KS needs at least 30 samples, got {x.size}")
    method = "exact" if x.size < 35 else "asymp"
    res = stats.kstest(x, cdf, method=method)
    rep = StatReport(name, int(x.size), float(res.statistic), p_value=float(res.pvalue), tolerance=threshold,
                     rule="p>tol", passed=bool(res.pvalue > threshold))
    return _finish(rep, config, seed)


def ks_two_sample(a, b, name: str = "ks2", threshold: float = P_THRESHOLD, config=None, seed=None) -> StatReport:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if min(a.size, b.size) < 30:
        raise InsufficientDataError("two-sample KS needs at least 30 samples per side")
    res = stats.ks_2samp(a, b)
    rep = StatReport(name, int(a.size + b.size), float(res.statistic), p_value=float(res.pvalue),
                     tolerance=threshold, rule="p>tol", passed=bool(res.pvalue > threshold))
    return _finish(rep, config, seed)


def chi_square(counts, probs, name: str = "chi2", threshold: float = P_THRESHOLD, config=None,
               seed=None) -> StatReport:
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if counts.shape != probs.shape or counts.size < 2:
        raise ValueError("counts and probs must be matching arrays with at least two cells")
    if not math.isclose(probs.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("cell probabilities must sum to one")
    n = counts.sum()
    expected = n * probs
    if np.any(expected < 5):
        raise InsufficientDataError("expected counts must be at least 5 in every cell")
    stat = float(np.sum((counts - expected) ** 2 / expected))
    p = float(stats.chi2.sf(stat, counts.size - 1))
    rep = StatReport(name, int(n), stat, p_value=p, tolerance=threshold, rule="p>tol", passed=p > threshold,
                     details={"counts": counts.tolist(), "expected": expected.tolist()})
    return _finish(rep, config, seed)


def proportion_z(successes: int, n: int, p0: float, name: str = "proportion", tolerance: float = Z_TOLERANCE,
                 config=None, seed=None) -> StatReport:
    """z-score of an observed frequency; a degenerate p0 in {0, 1} demands an exact match."""
    if n < 30:
        raise InsufficientDataError(f"need at least 30 trials, got {n}")
    phat = successes / n
    if p0 <= 0 or p0 >= 1:
        ok = successes == (n if p0 >= 1 else 0)
        rep = StatReport(name, n, phat, z_score=0.0 if ok else math.inf, tolerance=tolerance, rule="exact",
                         passed=ok, details={"expected": p0})
        return _finish(rep, config, seed)
    z = (successes - n * p0) / math.sqrt(n * p0 * (1 - p0))
    rep = StatReport(name, n, phat, z_score=float(z), tolerance=tolerance, rule="|z|<tol",
                     passed=abs(z) < tolerance, details={"expected": p0})
    return _finish(rep, config, seed)


def mean_z(values, mu0: float, sd: float | None = None, name: str = "mean", tolerance: float = Z_TOLERANCE,
           config=None, seed=None) -> StatReport:
    x = np.asarray(values, dtype=float)
    if x.size < 30:
        raise InsufficientDataError(f"need at least 30 values, got {x.size}")
    s = x.std(ddof=1) if sd is None else sd
    z = (x.mean() - mu0) / (s / math.sqrt(x.size))
    rep = StatReport(name, int(x.size), float(x.mean()), z_score=float(z), tolerance=tolerance,
                     rule="|z|<tol", passed=bool(abs(z) < tolerance))
    return _finish(rep, config, seed)


def slope_fit(xs, ys, through_origin: bool = True, name: str = "slope", expected: tuple | None = None,
              config=None, seed=None) -> StatReport:
    """Least-squares slope; passes when it lands in ``expected`` = (lo, hi) if given."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2:
        raise InsufficientDataError("need at least two points for a slope")
    if through_origin:
        slope = float(x @ y / (x @ x))
        intercept = 0.0
    else:
        slope, intercept = (float(v) for v in np.polyfit(x, y, 1))
    resid = y - (slope * x + intercept)
    lo, hi = expected if expected is not None else (-math.inf, math.inf)
    rep = StatReport(name, int(x.size), slope, tolerance=0.0, rule=f"slope in [{lo}, {hi}]",
                     passed=lo <= slope <= hi,
                     details={"intercept": intercept, "residual_rms": float(np.sqrt(np.mean(resid ** 2)))})
    return _finish(rep, config, seed)


def range_check(value: float, lo: float, hi: float, n: int, name: str, config=None, seed=None,
                details=None) -> StatReport:
    rep = StatReport(name, n, float(value), tolerance=0.0, rule=f"value in [{lo}, {hi}]",
                     passed=bool(lo <= value <= hi), details=details or {})
    return _finish(rep, config, seed)


def exact_check(failures: int, n: int, name: str, config=None, seed=None, details=None) -> StatReport:
    rep = StatReport(name, n, float(failures), tolerance=0.0, rule="zero failures", passed=failures == 0,
                     details=details or {})
    return _finish(rep, config, seed)


def error_report(name: str, exc: BaseException, config=None, seed=None) -> StatReport:
    rep = StatReport(name, 0, math.nan, rule="error", passed=False, error=f"{type(exc).__name__}: {exc}")
    return _finish(rep, config, seed)


# ---------------------------------------------------------------- matrix


def check_seed(master: int, name: str) -> int:
    """Per-check seed derived from the master seed and the check name, stable across runs."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _run_one(name: str, master: int) -> StatReport:
    from . import checks

    s = check_seed(master, name)
    t0 = time.perf_counter()
    try:
        rep = checks.REGISTRY[name](s)
    except Exception as exc:  # a crashing check is a failed check
        rep = error_report(name, exc, seed=s)
    rep.runtime = time.perf_counter() - t0
    return rep


def run_matrix(suite, seed: int = 1, workers: int = 1) -> list[StatReport]:
    """Run a named suite ("core", "smoke") or an explicit list of check names."""
    from . import checks

    names = checks.suite_names(suite) if isinstance(suite, str) else list(suite)
    if not names:
        return []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_run_one, names, [seed] * len(names)))
    else:
        reports = [_run_one(n, seed) for n in names]
    return sorted(reports, key=lambda r: r.name)


def bonferroni_note(reports: Sequence[StatReport]) -> str | None:
    k = len(reports)
    if k <= BONFERRONI_MIN:
        return None
    return (f"{k} checks ran together; with per-check threshold {P_THRESHOLD} the family-wise "
            f"false-alarm bound is {min(1.0, k * P_THRESHOLD):.2f} (Bonferroni: use {P_THRESHOLD / k:.2g} per check)")


_CSV_FIELDS = ["name", "passed", "n", "statistic", "p_value", "z_score", "tolerance", "rule", "config_hash",
               "seed", "error"]


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 12))
    return "" if v is None else str(v)


def reports_csv(reports: Sequence[StatReport], header: dict | None = None) -> str:
    buf = io.StringIO()
    for k, v in sorted((header or {}).items()):
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_FIELDS)
    for r in sorted(reports, key=lambda r: r.name):
        rec = r.record()
        w.writerow([_fmt(rec[f]) for f in _CSV_FIELDS])
    return buf.getvalue()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return round(f, 12) if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def reports_json(reports: Sequence[StatReport], header: dict | None = None) -> str:
    body = {"header": _clean(header or {}), "reports": [_clean(r.record()) for r in sorted(reports, key=lambda r: r.name)]}
    note = bonferroni_note(reports)
    if note:
        body["note"] = note
    return json.dumps(body, sort_keys=True, indent=1) + "\n"


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_reports(reports: Sequence[StatReport], prefix: str, header: dict | None = None) -> tuple[str, str]:
    csv_path, json_path = prefix + ".csv", prefix + ".json"
    write_atomic(csv_path, reports_csv(reports, header))
    write_atomic(json_path, reports_json(reports, header))
    return csv_path, json_path
