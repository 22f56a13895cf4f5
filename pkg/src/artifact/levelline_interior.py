"""Level lines aimed at interior points, level loops and upward height-varying sequences.

Continuum mode runs radial SLE_4 level-line drivers in the unit disc with the
target sent to 0; loops are traced by composing inverse radial maps.  Lattice
mode runs the chained dual-lattice walk of ``gff.walk_to_interior`` on a
sampled discrete field, each upward stage living inside the previous loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from matplotlib.path import Path

from .conformal_core import LAMBDA, conformal_radius_disc, mobius_disc
from .gff import (DiscreteField, GeometryError, InteriorWalk, LatticeDomain, _WalkBuffers, fill_loop_interior, laplacian,
                  stage_domain, trace_boundary_cycle, walk_to_interior)
from .loewner import DrivenChain, DriverPath
from .sle_process import ConfigError, sample_radial_levelline_batch
from .verify import InsufficientDataError, StatReport, proportion_z, slope_fit

# Euler constant plus 1.5 log 2: lattice Green diagonal minus log(CR / spacing) for 2 pi L^{-1}
LATTICE_GREEN_OFFSET = 0.5772156649015329 + 1.5 * math.log(2)
MIN_STAGE_SITES = 4


class NoLevelLineError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OrientedLoop:
    points: np.ndarray
    orientation: str
    time_label: float
    interior_marker: complex

    def contains(self, w) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(w, dtype=complex))
        poly = Path(np.column_stack([self.points.real, self.points.imag]))
        return poly.contains_points(np.column_stack([pts.real, pts.imag]))

    def signed_area(self) -> float:
        p = self.points
        q = np.roll(p, -1)
        return 0.5 * float(np.sum(p.real * q.imag - q.real * p.imag))

    def length(self) -> float:
        return float(np.sum(np.abs(np.diff(np.append(self.points, self.points[:1])))))

    def export(self) -> dict:
        return {"points": [[float(p.real), float(p.imag)] for p in self.points], "orientation": self.orientation,
                "time_label": float(self.time_label),
                "interior_marker": [float(self.interior_marker.real), float(self.interior_marker.imag)]}


@dataclass(eq=False)
class InteriorLine:
    mode: str
    orientation: str
    threshold_time: float
    time_label: float
    conditional_mean: float
    loop: OrientedLoop | None = None
    chain: list = field(default_factory=list)
    target: complex = 0j
    walk: InteriorWalk | None = None


def _orient_name(code: int) -> str:
    # sampler: +1 clockwise; lattice walk: +1 counterclockwise
    return "cw" if code == 1 else "ccw"


def _to_target(z: complex):
    """Disc automorphism moving z to 0 and its inverse."""
    phi = mobius_disc(z)
    return phi, phi.inverse


def _stage_chain(times, xi, rotation) -> DrivenChain:
    return DrivenChain(DriverPath(np.asarray(times), np.asarray(xi) + rotation), radial=True)


def _pull_back(chains, back, zeta):
    for ch in reversed(chains):
        zeta = ch.inverse(zeta)
    return back(zeta)


def trace_loop(chains, back, n_points: int = 1024, max_doublings: int = 2, rel_tol: float = 0.01) -> np.ndarray:
    """Polyline of the loop: the unit circle pulled back through the stage maps.

    The mesh doubles until the polyline length changes by less than ``rel_tol``
    or ``max_doublings`` is reached; the loops are rough, so the cap usually binds.
    """
    def build(n):
        theta = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return _pull_back(chains, back, (1 - 1e-10) * np.exp(1j * theta))

    pts = build(n_points)
    length = np.sum(np.abs(np.diff(np.append(pts, pts[:1]))))
    for _ in range(max_doublings):
        n_points *= 2
        finer = build(n_points)
        new_len = np.sum(np.abs(np.diff(np.append(finer, finer[:1]))))
        pts, done = finer, abs(new_len - length) <= rel_tol * new_len
        length = new_len
        if done:
            break
    return pts


def _continuum_stage(a: float, seed, dt: float):
    b = sample_radial_levelline_batch(a, 1, seed, dt)
    return b.times[0], b.xi[0], float(b.threshold_time[0]), int(b.orientation[0]), float(b.mean_at_target[0])


def level_line_to_interior(mode: str, z: complex = 0j, start_angle: float = 0.0, u: float = 0.0, seed=None,
                           field: DiscreteField | None = None, dt: float = 1e-3,
                           with_loop: bool = True) -> InteriorLine:
    """Level line of height u from a boundary point towards z, up to the loop it closes around z.

    Continuum: radial SLE_4(-u/LAMBDA - 1; u/LAMBDA - 1) with the clock
    CR(D \\ curve; z) = CR(D; z) e^{-t}.  Lattice: chained walk on ``field``
    started below z.  The returned conditional mean is the realized value of the
    harmonic mean of h + u at z once the loop closes, +LAMBDA for clockwise loops.
    """
    if not abs(u) < LAMBDA:
        raise NoLevelLineError("heights with |u| >= LAMBDA have no non-trivial level line")
    if mode == "continuum":
        z = complex(z)
        to0, back = _to_target(z)
        start = complex(to0(np.exp(1j * start_angle)))
        times, xi, t_hit, orient, mean = _continuum_stage(u, seed, dt)
        chain = _stage_chain(times, xi, math.atan2(start.imag, start.real))
        label = t_hit - math.log(1 - abs(z) ** 2)
        loop = None
        if with_loop:
            pts = trace_loop([chain], back)
            loop = OrientedLoop(_oriented(pts, _orient_name(orient)), _orient_name(orient), label, z)
        return InteriorLine("continuum", _orient_name(orient), t_hit, label, mean, loop, [chain], z)
    if mode == "lattice":
        if field is None:
            raise ConfigError("lattice mode needs a sampled field")
        dom = field.domain
        site = dom.site_of(z)
        walk = walk_to_interior(field, site, u)
        if walk.status != "closed":
            raise NoLevelLineError(f"lattice walk ended with status {walk.status}")
        name = "ccw" if walk.orientation == 1 else "cw"
        interior = fill_loop_interior(walk.component)
        label = -lattice_log_cr(dom, interior, site)
        loop = lattice_loop(dom, interior, name, label, z)
        mean = LAMBDA if name == "cw" else -LAMBDA
        return InteriorLine("lattice", name, label, label, mean, loop, [], complex(z), walk)
    raise ConfigError(f"unknown mode {mode!r}")


def _oriented(points: np.ndarray, orientation: str) -> np.ndarray:
    area = 0.5 * np.sum(points.real * np.roll(points, -1).imag - np.roll(points, -1).real * points.imag)
    ccw = area > 0
    return points if ccw == (orientation == "ccw") else points[::-1].copy()


def time_label_from_chain(line: InteriorLine) -> float:
    """-log CR of the loop interior at the target, from the composed uniformizer's derivative."""
    z = line.target
    d = 1.0 / (1 - abs(z) ** 2)
    w = 0j
    for ch in line.chain:
        w, dd = ch.derivative(np.array([w]))
        d = d * dd[0]
        w = w[0]
    return -math.log(conformal_radius_disc(d))


def lattice_log_cr(domain: LatticeDomain, mask, site) -> float:
    """log CR of a lattice region at a site from the diagonal of 2 pi L^{-1}.

    Uses G(z, z) = log(CR / spacing) + LATTICE_GREEN_OFFSET + o(1).
    """
    sub = LatticeDomain(mask, domain.spacing, np.zeros(domain.shape), domain.origin)
    mat, index = laplacian(sub)
    e = np.zeros(mat.shape[0])
    e[index[tuple(site)]] = 2 * np.pi
    g = spla.spsolve(mat, e)[index[tuple(site)]]
    return float(g - LATTICE_GREEN_OFFSET + math.log(domain.spacing))


def lattice_loop(domain: LatticeDomain, component, orientation: str, label: float, marker: complex) -> OrientedLoop:
    cyc = trace_boundary_cycle(component)
    pts = domain.doubled_to_complex(cyc.vertices)
    return OrientedLoop(_oriented(pts, orientation), orientation, label, complex(marker))


def orientation_frequency(u: float, n: int, seed, dt: float = 1e-3) -> tuple[int, int]:
    """(clockwise count, n) for continuum level loops of height u around the target."""
    b = sample_radial_levelline_batch(u, n, seed, dt, keep_paths=False)
    return int(np.sum(b.orientation == 1)), n


def level_loop_conditional_mean_check(means, c0: float, name: str = "conditional-mean", seed=None) -> StatReport:
    """Frequency of the realized mean +LAMBDA against (LAMBDA + c0) / (2 LAMBDA)."""
    means = np.asarray(means, dtype=float)
    plus = int(np.sum(np.isclose(means, LAMBDA)))
    minus = int(np.sum(np.isclose(means, -LAMBDA)))
    if plus + minus != means.size:
        raise ValueError("realized means must be +-LAMBDA")
    p0 = (LAMBDA + c0) / (2 * LAMBDA)
    return proportion_z(plus, means.size, p0, name=name, config={"c0": c0}, seed=seed)


# ---------------------------------------------------------------- upward sequences


@dataclass(eq=False)
class UpwardSequence:
    r: float
    heights: list
    orientations: list
    stage_times: list
    loops: list
    N: int | None
    T: float
    status: str
    components: list = field(default_factory=list)
    target: complex = 0j

    @property
    def final_boundary_value(self) -> float | None:
        """2 LAMBDA - N r LAMBDA: the value of h on the inner side of the clockwise loop."""
        return None if self.N is None else 2 * LAMBDA - self.N * self.r * LAMBDA

    def export(self) -> dict:
        return {"r": self.r, "N": self.N, "T": self.T, "status": self.status,
                "heights": [float(h) for h in self.heights], "orientations": self.orientations,
                "loops": [lp.export() for lp in self.loops]}


def _check_r(r):
    if not 0 < r < 1:
        raise ConfigError("r must lie in (0, 1)")


def upward_sequence(r: float, z: complex = 0j, seed=None, mode: str = "continuum",
                    field: DiscreteField | None = None, dt: float = 1e-3, with_loops: bool | str = False,
                    max_stages: int = 100000, start_angle: float = 0.0, with_times: bool = True) -> UpwardSequence:
    """Stages at heights -LAMBDA + k r LAMBDA until the first clockwise loop.

    Every stage is a level loop of the field restricted to the previous loop's
    interior; in the continuum each is an independent radial SLE_4(-r; -2 + r)
    run started where the previous loop closed.  ``with_loops="final"`` traces
    only the stopping loop (continuum).  Lattice runs with
    ``with_times=False`` skip the conformal-radius solves and report nan times.
    """
    _check_r(r)
    if mode == "continuum":
        return _upward_continuum(r, complex(z), seed, dt, with_loops, max_stages, start_angle)
    if mode == "lattice":
        if field is None:
            raise ConfigError("lattice mode needs a sampled field")
        return _upward_lattice(r, complex(z), field, max_stages, with_loops, with_times)
    raise ConfigError(f"unknown mode {mode!r}")


def _upward_continuum(r, z, seed, dt, with_loops, max_stages, start_angle):
    a = LAMBDA * (r - 1)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    to0, back = _to_target(z)
    start = complex(to0(np.exp(1j * start_angle)))
    rot = math.atan2(start.imag, start.real)
    chains, loops, orients, times, heights = [], [], [], [], []
    offset = -math.log(1 - abs(z) ** 2)
    total = 0.0
    for k in range(1, max_stages + 1):
        child = ss.spawn(1)[0]
        tt, xi, t_hit, orient, _ = _continuum_stage(a, child, dt)
        heights.append(-LAMBDA + k * r * LAMBDA)
        total += t_hit
        times.append(t_hit)
        orients.append(_orient_name(orient))
        if with_loops:
            chains.append(_stage_chain(tt, xi, rot))
            if with_loops != "final" or orient == 1:
                pts = trace_loop(chains, back)
                loops.append(OrientedLoop(_oriented(pts, orients[-1]), orients[-1], total + offset, z))
        rot = rot + xi[-1]
        if orient == 1:
            return UpwardSequence(r, heights, orients, times, loops, k, total + offset, "stopped", target=z)
    return UpwardSequence(r, heights, orients, times, loops, None, total + offset, "stage-cap", target=z)


def _closing_start(cycle, vertex) -> int:
    """Straight junction of a boundary cycle nearest to a dual vertex (doubled coordinates)."""
    prev = np.roll(np.arange(len(cycle)), 1)
    mx = cycle.cols + cycle.cols[prev]
    my = cycle.rows + cycle.rows[prev]
    d = (mx - vertex[0]) ** 2 + (my - vertex[1]) ** 2
    d = np.where(cycle.straight_flags, d, np.iinfo(np.int64).max)
    return int(np.argmin(d))


def _upward_lattice(r, z, fld: DiscreteField, max_stages, with_loops, with_times=True):
    dom = fld.domain
    site = dom.site_of(z)
    mask = dom.mask
    buffers = _WalkBuffers(dom.shape, 4 * mask.size + 16)
    start = None
    heights, orients, times, loops, comps = [], [], [], [], []
    label = 0.0
    for k in range(1, max_stages + 1):
        u = -LAMBDA + k * r * LAMBDA
        try:
            walk = walk_to_interior(fld, site, u, mask=mask, start=start, buffers=buffers)
        except GeometryError:
            # too thin to carry a level line: no straight boundary junction left
            return UpwardSequence(r, heights, orients, times, loops, None, label, "exhausted", comps, z)
        if walk.status != "closed":
            return UpwardSequence(r, heights, orients, times, loops, None, label, f"walk-{walk.status}", comps, z)
        name = "ccw" if walk.orientation == 1 else "cw"
        comp = fill_loop_interior(walk.component)
        heights.append(u)
        orients.append(name)
        comps.append(comp)
        prev_label = label
        label = -lattice_log_cr(dom, comp, site) if with_times else math.nan
        times.append(label - prev_label)
        if with_loops:
            loops.append(lattice_loop(dom, comp, name, label, z))
        if name == "cw":
            return UpwardSequence(r, heights, orients, times, loops, k, label, "stopped", comps, z)
        try:
            mask = stage_domain(comp, site)
        except GeometryError:
            return UpwardSequence(r, heights, orients, times, loops, None, label, "exhausted", comps, z)
        if mask.sum() < MIN_STAGE_SITES:
            return UpwardSequence(r, heights, orients, times, loops, None, label, "exhausted", comps, z)
        cyc = trace_boundary_cycle(mask)
        start = _closing_start(cyc, walk.path.vertices[-1])
    return UpwardSequence(r, heights, orients, times, loops, None, label, "stage-cap", comps, z)


class StagePool:
    """I.i.d. stage outcomes of the level line with boundary value ``a``, drawn in batches."""

    def __init__(self, a: float, seed, dt: float = 1e-3, chunk: int = 512):
        self.a, self.dt, self.chunk = a, dt, chunk
        self._ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._t = np.empty(0)
        self._o = np.empty(0, dtype=int)
        self._i = 0

    def draw(self) -> tuple[float, int]:
        if self._i == self._t.size:
            b = sample_radial_levelline_batch(self.a, self.chunk, self._ss.spawn(1)[0], self.dt, keep_paths=False)
            self._t, self._o, self._i = b.threshold_time, b.orientation, 0
        self._i += 1
        return float(self._t[self._i - 1]), int(self._o[self._i - 1])


def upward_statistics(r: float, n_runs: int, seed=None, z: complex = 0j, dt: float = 1e-3,
                      max_stages: int = 1_000_000):
    """(N, T) for ``n_runs`` continuum upward sequences, without tracing loops.

    Stages are independent given the stage law, so they are drawn from one pool.
    """
    _check_r(r)
    pool = StagePool(LAMBDA * (r - 1), seed, dt)
    offset = -math.log(1 - abs(complex(z)) ** 2)
    N = np.zeros(n_runs, dtype=np.int64)
    T = np.zeros(n_runs)
    for i in range(n_runs):
        total = 0.0
        for k in range(1, max_stages + 1):
            t, o = pool.draw()
            total += t
            if o == 1:
                break
        N[i], T[i] = k, total + offset
    return N, T


def _distance_to_polygon(p, poly):
    a, b = poly, np.roll(poly, -1)
    d = b - a
    t = ((p[:, None] - a[None]) * np.conj(d[None])).real / np.maximum(np.abs(d[None]) ** 2, 1e-300)
    return np.min(np.abs(p[:, None] - (a[None] + np.clip(t, 0, 1) * d[None])), axis=1)


def nesting_violations(seq: UpwardSequence, rel_tol: float = 0.02) -> int:
    """Stages whose interior is not inside the previous one.

    Exact on the lattice.  Continuum loops touch their parent along shared
    boundary, so a traced point may fall just outside; only points farther out
    than ``rel_tol`` times the parent's diameter count.
    """
    bad = 0
    if seq.components:
        for a, b in zip(seq.components, seq.components[1:]):
            bad += int(np.any(b & ~a))
        return bad
    for a, b in zip(seq.loops, seq.loops[1:]):
        out = b.points[~a.contains(b.points)]
        if out.size:
            diam = np.ptp(a.points.real) + np.ptp(a.points.imag)
            bad += int(_distance_to_polygon(out, a.points).max() > rel_tol * diam)
    return bad


# ---------------------------------------------------------------- exploration tree


@dataclass(eq=False)
class ExplorationTree:
    r: float
    targets: list
    sequences: list
    shared: dict

    def final_loops(self):
        return {t: (s.loops[-1] if s.loops else None) for t, s in zip(self.targets, self.sequences)}

    def step_counts(self):
        return {t: s.N for t, s in zip(self.targets, self.sequences)}

    def boundary_values(self):
        """2 LAMBDA (1 - (r/2) N(z)) per target."""
        return {t: (None if s.N is None else 2 * LAMBDA * (1 - self.r / 2 * s.N))
                for t, s in zip(self.targets, self.sequences)}

    def export(self) -> dict:
        return {"r": self.r, "targets": [[t.real, t.imag] for t in self.targets],
                "N": [s.N for s in self.sequences], "T": [s.T for s in self.sequences],
                "loops": [[lp.export() for lp in s.loops] for s in self.sequences],
                "shared": {f"{i},{j}": v for (i, j), v in sorted(self.shared.items())}}


def exploration_tree(r: float, targets, seed=None, mode: str = "lattice", field: DiscreteField | None = None,
                     with_loops: bool = True) -> ExplorationTree:
    """Upward sequences towards several targets on one field.

    Sequences are computed target by target; the lattice walk only consults the
    component of its target, so two sequences agree stage for stage until their
    targets are separated.  ``shared[(i, j)]`` is the number of common stages.
    Only lattice mode is supported: a continuum branch after separation needs
    radial drivers with more than two force points.
    """
    _check_r(r)
    targets = [complex(t) for t in targets]
    if len(set(targets)) != len(targets):
        raise ConfigError("targets must be distinct")
    if mode != "lattice":
        raise ConfigError("exploration trees are built in lattice mode; continuum branches need "
                          "multi-force-point radial drivers")
    if field is None:
        raise ConfigError("lattice mode needs a sampled field")
    sites = [field.domain.site_of(t) for t in targets]
    if len(set(sites)) != len(sites):
        raise ConfigError("targets fall on the same lattice site")
    seqs = [upward_sequence(r, t, mode="lattice", field=field, with_loops=with_loops) for t in targets]
    shared = {}
    for i in range(len(targets)):
        for j in range(i + 1, len(targets)):
            shared[(i, j)] = shared_stages(seqs[i], seqs[j])
    return ExplorationTree(r, targets, seqs, shared)


def shared_stages(a: UpwardSequence, b: UpwardSequence) -> int:
    n = 0
    for ca, cb in zip(a.components, b.components):
        if not np.array_equal(ca, cb):
            break
        n += 1
    return n


def disconnection_overlap(a: UpwardSequence, b: UpwardSequence) -> int | None:
    """Sites shared by the two interiors at the first stage where they differ (None if never)."""
    m = shared_stages(a, b)
    if m >= len(a.components) or m >= len(b.components):
        return None
    return int(np.sum(a.components[m] & b.components[m]))


# ---------------------------------------------------------------- CR linearity


def cr_linearity_probe(u_grid, z: complex = 0j, seed=None, n: int = 4000, dt: float = 1e-3,
                       min_count: int = 30) -> StatReport:
    """E[-log CR(loop interior; z) | counterclockwise] against LAMBDA + u, fitted through the origin.

    ``details`` carries per-height estimates, standard errors and whether the
    estimates increase with LAMBDA + u.
    """
    us = [float(u) for u in u_grid]
    if any(not (-LAMBDA < u < 0) for u in us):
        raise ConfigError("heights must lie in (-LAMBDA, 0)")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    offset = -math.log(1 - abs(complex(z)) ** 2)
    xs, means, ses = [], [], []
    for u, child in zip(us, ss.spawn(len(us))):
        b = sample_radial_levelline_batch(u, n, child, dt, keep_paths=False)
        t = b.threshold_time[b.orientation == -1] + offset
        if t.size < min_count:
            raise InsufficientDataError(f"only {t.size} counterclockwise loops at u={u}")
        xs.append(LAMBDA + u)
        means.append(float(t.mean()))
        ses.append(float(t.std(ddof=1) / math.sqrt(t.size)))
    order = np.argsort(xs)
    mono = bool(np.all(np.diff(np.asarray(means)[order]) > 0))
    rep = slope_fit(xs, means, through_origin=True, name="cr-linearity", config={"u": us, "n": n, "dt": dt})
    rep.details.update({"x": xs, "mean": means, "se": ses, "monotone": mono})
    return rep
