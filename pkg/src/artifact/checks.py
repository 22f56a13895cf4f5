"""Registered checks for the verification matrix.

Each check takes a seed and returns a StatReport.  The "core" suite holds the
fourteen acceptance checks at full size, "smoke" the same checks at small
size for quick runs, and "extended" adds the auxiliary checks.
"""
from __future__ import annotations

import math
from functools import partial

import numpy as np
from scipy import stats

from . import cle4, gff
from . import levelline_interior as li
from .conformal_core import LAMBDA
from .loewner import DriverPath, Swallowed, chordal_evolve_point
from .sle_process import ForceConfig, chordal_radial_equivalence_check, eta_increments, sample_chordal_batch
from .verify import (InsufficientDataError, StatReport, _finish, chi_square, exact_check, ks_test, proportion_z,
                     range_check, slope_fit)


def _upper_sqrt(q):
    s = np.sqrt(complex(q))
    return -s if s.imag < 0 else s


# ---------------------------------------------------------------- 1-3: Loewner chains and drivers


def loewner_closed_form(seed, n_steps=1000, name="c01-loewner-closed-form"):
    """g_1(z) for W = 0 against sqrt(z^2 + 4) on a 5 x 4 grid off the slit."""
    drv = DriverPath.constant(0.0, 1.0, n_steps)
    pts = [complex(x, y) for x in (-1.5, -0.75, 0.5, 1.25, 2.0) for y in (0.25, 0.75, 1.5, 3.0)]
    err = 0.0
    for z in pts:
        g = chordal_evolve_point(drv, z)
        if isinstance(g, Swallowed):
            raise RuntimeError(f"grid point {z} was swallowed")
        err = max(err, abs(g - _upper_sqrt(z * z + 4)))
    return range_check(err, 0.0, 1e-6, len(pts), name, {"n_steps": n_steps}, seed, {"max_error": err})


def driver_variance(seed, n_paths=10, n_steps=1000, dt=1e-3, name="c02-sle4-driver-variance"):
    """Sample variance of plain SLE_4 driver increments over 4 dt, within 5%."""
    b = sample_chordal_batch(ForceConfig(), n_steps * dt, n_paths, seed, dt)
    inc = np.diff(b.W, axis=1).ravel()
    ratio = float(inc.var(ddof=1) / (4 * dt))
    cfg = {"n_paths": n_paths, "n_steps": n_steps, "dt": dt}
    return range_check(ratio, 0.95, 1.05, inc.size, name, cfg, seed, {"increments": int(inc.size)})


def eta_martingale(seed, n_paths=1000, dt=1e-3, horizon=1.0, levels=(0.1, 0.2, 0.3, 0.5, 0.7),
                   name="c03-eta-martingale"):
    """SLE_4(1;1) at z = i: drift z-score at the top level and slope of E[d eta^2] on E[s]."""
    cfg_f = ForceConfig((1.0,), (0.0,), (1.0,), (0.0,))
    inc, stopped, reached = eta_increments(cfg_f, 1j, levels, n_paths, seed, dt, horizon)
    if n_paths < 30:
        raise InsufficientDataError("need at least 30 paths")
    top = inc[:, -1]
    z = float(top.mean() / (top.std(ddof=1) / math.sqrt(n_paths)))
    m2 = (inc ** 2).mean(axis=0)
    ms = stopped.mean(axis=0)
    slope = float(m2 @ ms / (ms @ ms))
    ok = abs(z) < 3 and 0.9 <= slope <= 1.1
    cfg = {"n_paths": n_paths, "dt": dt, "horizon": horizon, "levels": list(levels)}
    rep = StatReport(name, n_paths, slope, z_score=z, tolerance=3.0, rule="|z|<3 and slope in [0.9, 1.1]",
                     passed=ok, details={"slope": slope, "drift_z": z, "ratios": (m2 / ms).tolist(),
                                         "reached": reached.mean(axis=0).tolist()})
    return _finish(rep, cfg, seed)


# ---------------------------------------------------------------- 4-7: lattice level lines


def _bottom_top(cycle, n):
    mid = (n + 1) // 2
    return cycle.nearest_straight(cycle.index_near((0, mid))), cycle.nearest_straight(cycle.index_near((n + 1, mid)))


def _sample_at(w: DriverPath, grid):
    k = np.searchsorted(w.times, grid, side="right") - 1
    return w.values[np.minimum(k, w.values.size - 1)]


def interface_driver_law(seed, n_fields=200, n=127, dt_w=0.01, t_max=0.1, name="c04-dgff-driver-law"):
    """Pooled driver increments of DGFF interfaces (+-LAMBDA boundary) vs Normal(0, 4 dt), KS.

    Increments are taken on [0, t_max], where a lattice step maps to a short
    boundary-scale image; ``details`` records the fitted kappa (variance / dt).
    """
    dom = gff.square_domain(n, "plusminus")
    x, y = _bottom_top(dom.cycle, n)
    grid = np.arange(0.0, t_max + 1e-12, dt_w)
    incs = []
    for f in gff.sample_dgff(dom, seed, count=n_fields):
        path = gff.extract_level_line(f, x, y)
        w = gff.driving_function_of_interface(path, dom, max_time=t_max)
        g = grid[grid <= w.horizon + 1e-12]
        if g.size > 1:
            incs.append(np.diff(_sample_at(w, g)))
    inc = np.concatenate(incs)
    cfg = {"n_fields": n_fields, "n": n, "dt": dt_w, "t_max": t_max}
    rep = ks_test(inc, stats.norm(0, math.sqrt(4 * dt_w)).cdf, name=name, config=cfg, seed=seed)
    rep.details.update({"kappa_fit": float(inc.var(ddof=1) / dt_w), "mean": float(inc.mean())})
    return rep


def reversibility(seed, n_fields=100, n=64, name="c05-reversibility"):
    """Edge sets of the level line of h from x to y and of -h from y to x coincide."""
    dom = gff.square_domain(n, "plusminus")
    x, y = _bottom_top(dom.cycle, n)
    bad = 0
    for f in gff.sample_dgff(dom, seed, count=n_fields):
        bad += gff.extract_level_line(f, x, y).edge_set() != gff.extract_level_line(-f, y, x).edge_set()
    return exact_check(int(bad), n_fields, name, {"n_fields": n_fields, "n": n}, seed)


def _merge_failure(a, b):
    ea, eb = a.directed_edges(), b.directed_edges()
    pos = {e: i for i, e in enumerate(ea)}
    j = next((j for j, e in enumerate(eb) if e in pos), None)
    if j is None:
        return None
    return ea[pos[eb[j]]:] != eb[j:]


def monotonicity_merging(seed, n_fields=100, n=64, name="c06-monotonicity-merging"):
    """Right region at height -LAMBDA/2 inside that at LAMBDA/2; same-height lines from two starts merge for good."""
    dom = gff.square_domain(n, "plusminus")
    cyc = dom.cycle
    x, y = _bottom_top(cyc, n)
    x2 = cyc.nearest_straight(cyc.index_near((0, (n + 1) // 5)))
    mono = merge = met = 0
    for f in gff.sample_dgff(dom, seed, count=n_fields):
        lo = gff.right_region(dom, gff.extract_level_line(f, x, y, -LAMBDA / 2))
        hi = gff.right_region(dom, gff.extract_level_line(f, x, y, LAMBDA / 2))
        mono += bool(np.any(lo & ~hi))
        for u in (0.0, LAMBDA / 2):
            res = _merge_failure(gff.extract_level_line(f, x, y, u), gff.extract_level_line(f, x2, y, u))
            if res is not None:
                met += 1
                merge += res
    return exact_check(mono + merge, n_fields, name, {"n_fields": n_fields, "n": n}, seed,
                       {"monotonicity_failures": mono, "merge_failures": merge, "pairs_met": met})


def _first_contact(path, sites):
    for k, (X, Y) in enumerate(path.vertices):
        if any(((Y + dy) // 2, (X + dx) // 2) in sites for dx in (-1, 1) for dy in (-1, 1)):
            return k
    return None


def target_independence(seed, n_fields=100, n=64, name="c07-target-independence"):
    """Lines from one start to two targets agree up to the first vertex touching the boundary between the targets."""
    dom = gff.square_domain(n, "plusminus")
    cyc = dom.cycle
    x, y = _bottom_top(cyc, n)
    y2 = cyc.nearest_straight(cyc.index_near(((n + 1) * 3 // 5, n + 1)))
    sa, sb = cyc.arc_signs(x, y), cyc.arc_signs(x, y2)
    differ = set()
    for ir, ic, orr, oc, k in cyc.edges.tolist():
        if sa[k] != sb[k]:
            differ.add((orr, oc))
    bad = 0
    for f in gff.sample_dgff(dom, seed, count=n_fields):
        a, b = gff.extract_level_line(f, x, y), gff.extract_level_line(f, x, y2)
        k = _first_contact(a, differ)
        m = min(len(a.vertices), len(b.vertices)) if k is None else k + 1
        bad += not np.array_equal(a.vertices[:m], b.vertices[:m])
    return exact_check(int(bad), n_fields, name, {"n_fields": n_fields, "n": n}, seed)


# ---------------------------------------------------------------- 8-10: orientation, transition step, clocks


def orientation_law(seed, n=10000, dt=1e-3, name="c08-orientation-law"):
    """Clockwise frequency at u in {-LAMBDA/2, 0, LAMBDA/2} against (LAMBDA + u) / (2 LAMBDA)."""
    us = (-LAMBDA / 2, 0.0, LAMBDA / 2)
    subs = []
    for u, child in zip(us, np.random.SeedSequence(seed).spawn(len(us))):
        cw, tot = li.orientation_frequency(u, n, child, dt)
        subs.append(proportion_z(cw, tot, (LAMBDA + u) / (2 * LAMBDA)))
    worst = max(subs, key=lambda r: abs(r.z_score))
    rep = StatReport(name, n * len(us), worst.statistic, z_score=worst.z_score, tolerance=3.0,
                     rule="|z|<tol at every height", passed=all(r.passed for r in subs),
                     details={"u": list(us), "freq": [r.statistic for r in subs], "z": [r.z_score for r in subs]})
    return _finish(rep, {"n": n, "dt": dt}, seed)


def transition_step(seed, r=0.5, n_runs=1000, dt=1e-3, name="c09-transition-step"):
    """Chi-square of N against P[N = n] = (r/2)(1 - r/2)^(n-1), tail cell pooled."""
    N, _ = li.upward_statistics(r, n_runs, seed, dt=dt)
    q = r / 2
    cells = 1
    while n_runs * q * (1 - q) ** cells >= 5 and n_runs * (1 - q) ** (cells + 1) >= 5:
        cells += 1
    probs = np.array([q * (1 - q) ** (k - 1) for k in range(1, cells + 1)] + [(1 - q) ** cells])
    counts = np.array([np.sum(N == k) for k in range(1, cells + 1)] + [np.sum(N > cells)])
    rep = chi_square(counts, probs, name=name, config={"r": r, "n_runs": n_runs, "dt": dt}, seed=seed)
    rep.details["mean_N"] = float(N.mean())
    return rep


def stop_clocks(seed, n=1000, eps=cle4.DEFAULT_EPS, k=6, dt=1e-3, name="c10-stop-clocks"):
    """Bubble-process stop time and the timed-loop label t, each KS against Exp(1)."""
    s1, s2 = np.random.SeedSequence(seed).spawn(2)
    tau, _ = cle4.bubble_process_statistics(n, s1, eps, dt=dt)
    t_inf, _ = cle4.timed_loop_statistics(n, s2, k, dt)
    a = ks_test(tau, stats.expon.cdf)
    b = ks_test(t_inf, stats.expon.cdf)
    rep = StatReport(name, 2 * n, max(a.statistic, b.statistic), p_value=min(a.p_value, b.p_value),
                     rule="p>tol for both", passed=a.passed and b.passed,
                     details={"p_tau": a.p_value, "p_t": b.p_value, "mean_tau": float(tau.mean()),
                              "mean_t": float(t_inf.mean())})
    return _finish(rep, {"n": n, "eps": eps, "k": k, "dt": dt}, seed)


# ---------------------------------------------------------------- 11-14: coupling, scaling, refinement


def coupling(seed, n_fields=100, n=128, k=5, min_runs=20, name="c11-coupling-boundary-value"):
    """Interior field averages inside the stopping loop against 2 LAMBDA (1 - (r/2) N), r = 2^-k."""
    dom = gff.square_domain(n, "zero")
    z = dom.position((n + 1) // 2, (n + 1) // 2)
    runs = []
    for f in gff.sample_dgff(dom, seed, count=n_fields):
        runs.append((f, li.upward_sequence(2.0 ** -k, z, mode="lattice", field=f, with_times=False)))
    return cle4.coupling_field_check(runs, name, {"n_fields": n_fields, "n": n, "k": k}, seed, min_runs=min_runs)


def bubble_scaling(seed, n=40000, eps_grid=(0.04, 0.08, 0.16), dt=1e-3, name="c12-bubble-scaling"):
    """Log-log slope of the clockwise (surrounding) probability at height -LAMBDA + eps."""
    ps = []
    for eps, child in zip(eps_grid, np.random.SeedSequence(seed).spawn(len(eps_grid))):
        cw, tot = cle4.acceptance_counts(eps, n, child, dt)
        if cw < 30:
            raise InsufficientDataError(f"only {cw} clockwise loops at eps={eps}")
        ps.append(cw / tot)
    rep = slope_fit(np.log(eps_grid), np.log(ps), through_origin=False, name=name, expected=(0.8, 1.2),
                    config={"n": n, "eps": list(eps_grid), "dt": dt}, seed=seed)
    rep.n = n * len(eps_grid)
    rep.details["probability"] = ps
    return rep


def cr_linearity(seed, n=10000, dt=1e-3, name="c13-cr-linearity"):
    """E[-log CR | counterclockwise] at LAMBDA + u = 0.4 over that at 0.2, within 15% of 2."""
    probe = li.cr_linearity_probe([0.2 - LAMBDA, 0.4 - LAMBDA], seed=seed, n=n, dt=dt)
    m = dict(zip(probe.details["x"], probe.details["mean"]))
    ratio = m[max(m)] / m[min(m)]
    return range_check(ratio, 1.7, 2.3, 2 * n, name, {"n": n, "dt": dt}, seed,
                       {"means": probe.details["mean"], "se": probe.details["se"]})


def refinement(seed, n_fields=100, n=64, k_max=3, name="c14-refinement-dichotomy"):
    """N^(k+1) in {2N^k - 1, 2N^k} on the same lattice field for k = 1..k_max-1."""
    dom = gff.square_domain(n, "zero")
    z = dom.position((n + 1) // 2, (n + 1) // 2)
    bad = tested = 0
    pairs = {"2N-1": 0, "2N": 0, "other": 0}
    for f in gff.sample_dgff(dom, seed, count=n_fields):
        tl = cle4.cle4_timed_loop(z, mode="lattice", field=f, k_max=k_max)
        steps = tl.steps
        if any(v is None for v in steps.values()):
            continue
        tested += 1
        bad += bool(cle4.refinement_violations(steps))
        for k0 in range(1, k_max):
            n0, n1 = steps[k0], steps[k0 + 1]
            pairs["2N-1" if n1 == 2 * n0 - 1 else "2N" if n1 == 2 * n0 else "other"] += 1
    if tested == 0:
        raise InsufficientDataError("no field completed every level")
    return exact_check(bad, tested, name, {"n_fields": n_fields, "n": n, "k_max": k_max}, seed,
                       {"untested": n_fields - tested, "pairs": pairs})


# ---------------------------------------------------------------- auxiliary


def equivalence(seed, weights=(0.0, 0.0, -2.0), n=1000, name="chordal-radial-equivalence"):
    rep = chordal_radial_equivalence_check(weights, n, seed)
    rep.name = name
    return rep


_CORE = {
    "c01-loewner-closed-form": partial(loewner_closed_form),
    "c02-sle4-driver-variance": partial(driver_variance),
    "c03-eta-martingale": partial(eta_martingale),
    "c04-dgff-driver-law": partial(interface_driver_law),
    "c05-reversibility": partial(reversibility),
    "c06-monotonicity-merging": partial(monotonicity_merging),
    "c07-target-independence": partial(target_independence),
    "c08-orientation-law": partial(orientation_law),
    "c09-transition-step": partial(transition_step),
    "c10-stop-clocks": partial(stop_clocks),
    "c11-coupling-boundary-value": partial(coupling),
    "c12-bubble-scaling": partial(bubble_scaling),
    "c13-cr-linearity": partial(cr_linearity),
    "c14-refinement-dichotomy": partial(refinement),
}

_SMOKE = {
    "smoke-c01-loewner-closed-form": partial(loewner_closed_form, n_steps=10, name="smoke-c01-loewner-closed-form"),
    "smoke-c02-sle4-driver-variance": partial(driver_variance, name="smoke-c02-sle4-driver-variance"),
    "smoke-c03-eta-martingale": partial(eta_martingale, n_paths=100, name="smoke-c03-eta-martingale"),
    "smoke-c04-dgff-driver-law": partial(interface_driver_law, n_fields=20, n=63, dt_w=0.02,
                                         name="smoke-c04-dgff-driver-law"),
    "smoke-c05-reversibility": partial(reversibility, n_fields=10, n=32, name="smoke-c05-reversibility"),
    "smoke-c06-monotonicity-merging": partial(monotonicity_merging, n_fields=10, n=32,
                                              name="smoke-c06-monotonicity-merging"),
    "smoke-c07-target-independence": partial(target_independence, n_fields=10, n=32,
                                             name="smoke-c07-target-independence"),
    "smoke-c08-orientation-law": partial(orientation_law, n=500, name="smoke-c08-orientation-law"),
    "smoke-c09-transition-step": partial(transition_step, n_runs=200, name="smoke-c09-transition-step"),
    "smoke-c10-stop-clocks": partial(stop_clocks, n=100, eps=0.25 * LAMBDA, k=3, name="smoke-c10-stop-clocks"),
    "smoke-c11-coupling-boundary-value": partial(coupling, n_fields=30, n=64, k=1, min_runs=10,
                                                 name="smoke-c11-coupling-boundary-value"),
    "smoke-c12-bubble-scaling": partial(bubble_scaling, n=4000, eps_grid=(0.16, 0.32, 0.64),
                                        name="smoke-c12-bubble-scaling"),
    "smoke-c13-cr-linearity": partial(cr_linearity, n=1000, name="smoke-c13-cr-linearity"),
    "smoke-c14-refinement-dichotomy": partial(refinement, n_fields=10, n=32, k_max=2,
                                              name="smoke-c14-refinement-dichotomy"),
}

_EXTRA = {
    "chordal-radial-equivalence": partial(equivalence),
    "chordal-radial-equivalence-levelline": partial(equivalence, weights=(-1.0, -1.0, 0.0),
                                                    name="chordal-radial-equivalence-levelline"),
    "geometric-N": partial(transition_step, name="geometric-N"),
}

REGISTRY = {**_CORE, **_SMOKE, **_EXTRA}

SUITES = {
    "core": sorted(_CORE),
    "smoke": sorted(_SMOKE),
    "extended": sorted(_CORE) + sorted(_EXTRA),
    "empty": [],
}


def suite_names(suite: str) -> list[str]:
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    return list(SUITES[suite])
