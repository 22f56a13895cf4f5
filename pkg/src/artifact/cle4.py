"""SLE_4 bubbles, the bubble process targeted at a point, and CLE_4 loops with time labels.

Bubbles are level loops of height -LAMBDA + eps conditioned to be clockwise.
The bubble process runs windows of length eps / (2 LAMBDA): each window is
one level line of that height, whose counterclockwise outcome removes a small
bubble not surrounding the target.  The first clockwise outcome surrounds the
target and stops the clock.  Timed loops come from upward sequences at
r = 2^-k, with t = 2^(-k-1) N^k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .conformal_core import LAMBDA, mobius_disc
from .gff import DiscreteField, LatticeDomain, laplacian
from .levelline_interior import (OrientedLoop, StagePool, UpwardSequence, _oriented, _stage_chain, trace_loop,
                                 upward_sequence, upward_statistics)
from .sle_process import ConfigError, replay_radial_levelline, sample_radial_levelline_batch
from .verify import InsufficientDataError, StatReport, _finish

DEFAULT_EPS = 0.05 * LAMBDA
DEFAULT_DELTA = 0.01
MIN_LOOP_CELLS = 6


class BudgetError(RuntimeError):
    pass


class RefinementError(RuntimeError):
    pass


def window_length(eps: float) -> float:
    """Bubble-process time per level-line attempt: the clockwise probability eps / (2 LAMBDA)."""
    return eps / (2 * LAMBDA)


def _check_eps(eps):
    if not 0 < eps < 2 * LAMBDA:
        raise ConfigError("eps must lie in (0, 2 LAMBDA)")


def _seedseq(seed):
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


@dataclass(eq=False)
class BubbleSample:
    loop: OrientedLoop | None
    root: float
    eps: float
    attempts: int
    threshold_time: float
    chain: object = None


def _first_clockwise(a, seed, dt, budget, chunk=256):
    ss = _seedseq(seed)
    used = 0
    while used < budget:
        n = min(chunk, budget - used)
        b = sample_radial_levelline_batch(a, n, ss.spawn(1)[0], dt, keep_paths=False)
        hit = np.nonzero(b.orientation == 1)[0]
        if hit.size:
            return used + int(hit[0]) + 1, int(b.seeds[hit[0]])
        used += n
    return used, None


def sample_bubble(eps: float = DEFAULT_EPS, seed=None, budget: int | None = None, dt: float = 1e-3,
                  with_loop: bool = True, mesh: int = 512) -> BubbleSample:
    """Clockwise level loop of height -LAMBDA + eps around 0, started at 1, by rejection.

    The root is the loop point closest to the unit circle.
    """
    _check_eps(eps)
    a = -LAMBDA + eps
    p = window_length(eps)
    budget = budget if budget is not None else int(math.ceil(50 / p))
    attempts, path_seed = _first_clockwise(a, seed, dt, budget)
    if path_seed is None:
        raise BudgetError(f"no clockwise loop in {budget} attempts (rate {p:.3g}); raise the budget or eps")
    b = replay_radial_levelline(a, path_seed, dt)
    chain = _stage_chain(b.times[0], b.xi[0], 0.0)
    ident = lambda w: w
    pts = trace_loop([chain], ident, n_points=mesh, max_doublings=0 if not with_loop else 2)
    root = float(np.angle(pts[np.argmax(np.abs(pts))])) % (2 * np.pi)
    loop = OrientedLoop(_oriented(pts, "cw"), "cw", float(b.threshold_time[0]), 0j) if with_loop else None
    return BubbleSample(loop, root, eps, attempts, float(b.threshold_time[0]), chain)


def acceptance_counts(eps: float, n: int, seed=None, dt: float = 1e-3) -> tuple[int, int]:
    """(clockwise, n) over n level lines of height -LAMBDA + eps."""
    _check_eps(eps)
    b = sample_radial_levelline_batch(-LAMBDA + eps, n, seed, dt, keep_paths=False)
    return int(np.sum(b.orientation == 1)), n


# ---------------------------------------------------------------- bubble process


@dataclass(eq=False)
class BubbleProcessRun:
    z: complex
    eps: float
    delta: float
    arrival_times: np.ndarray
    bubble_sizes: np.ndarray
    stop_time: float
    discarded: int
    final_size: float
    chains: list = field(default_factory=list)
    final_loop: OrientedLoop | None = None

    @property
    def log_cr_decrement(self) -> float:
        """-log CR of the surrounding loop's interior at z, kept bubbles only."""
        return float(self.bubble_sizes.sum() + self.final_size - math.log(1 - abs(self.z) ** 2))

    def composed_map(self, w):
        """Psi: the kept bubble maps composed in arrival order, in coordinates where z sits at 0."""
        w = mobius_disc(self.z)(np.asarray(w, dtype=complex))
        for ch in self.chains:
            w = ch.forward(w)
        return w

    def export(self) -> dict:
        return {"z": [self.z.real, self.z.imag], "eps": self.eps, "delta": self.delta,
                "arrivals": self.arrival_times.tolist(), "sizes": self.bubble_sizes.tolist(),
                "stop_time": self.stop_time, "discarded": self.discarded,
                "loop": None if self.final_loop is None else self.final_loop.export()}


def run_bubble_process(z: complex = 0j, seed=None, eps: float = DEFAULT_EPS, delta: float = DEFAULT_DELTA,
                       dt: float = 1e-3, with_maps: bool = False, with_loop: bool = False,
                       max_windows: int = 1_000_000) -> BubbleProcessRun:
    """Bubbles arriving before the first one that surrounds z.

    Window j (of length eps / (2 LAMBDA)) runs one level line of height
    -LAMBDA + eps from where the previous one closed.  A counterclockwise
    outcome is a bubble not surrounding z, stamped at the window midpoint
    (j - 1/2) times the window length; the first clockwise outcome surrounds z
    and stops the process.
    Bubbles whose -log CR decrement is below ``delta`` are dropped from the
    composition.
    """
    _check_eps(eps)
    if delta < 0:
        raise ConfigError("delta must be non-negative")
    z = complex(z)
    if not abs(z) < 1:
        raise ConfigError("z must lie in the open unit disc")
    ss = _seedseq(seed)
    w = window_length(eps)
    a = -LAMBDA + eps
    keep = with_maps or with_loop
    arrivals, sizes, chains = [], [], []
    discarded = 0
    rot = 0.0
    for j in range(1, max_windows + 1):
        b = sample_radial_levelline_batch(a, 1, ss.spawn(1)[0], dt, keep_paths=keep)
        t = float(b.threshold_time[0])
        if b.orientation[0] == 1:
            loop = None
            if with_loop:
                chain = _stage_chain(b.times[0], b.xi[0], rot)
                pts = trace_loop(chains + [chain], mobius_disc(z).inverse)
                loop = OrientedLoop(_oriented(pts, "cw"), "cw", 0.0, z)
            run = BubbleProcessRun(z, eps, delta, np.asarray(arrivals), np.asarray(sizes), (j - 0.5) * w, discarded, t,
                                   chains)
            if loop is not None:
                run.final_loop = OrientedLoop(loop.points, "cw", run.log_cr_decrement, z)
            return run
        if t <= delta:
            discarded += 1
        else:
            arrivals.append((j - 0.5) * w)
            sizes.append(t)
            if keep:
                chains.append(_stage_chain(b.times[0], b.xi[0], rot))
        if keep:
            rot += float(b.xi[0][-1])
    raise BudgetError(f"no surrounding bubble within {max_windows} windows; raise eps or the budget")


def bubble_process_statistics(n_runs: int, seed=None, eps: float = DEFAULT_EPS, delta: float = DEFAULT_DELTA,
                              dt: float = 1e-3):
    """(stop times, -log CR of the surrounding loop at 0) for many runs, without maps."""
    _check_eps(eps)
    pool = StagePool(-LAMBDA + eps, seed, dt)
    w = window_length(eps)
    taus = np.zeros(n_runs)
    out = np.zeros(n_runs)
    for i in range(n_runs):
        total, j = 0.0, 0
        while True:
            j += 1
            t, o = pool.draw()
            if o == 1:
                break
            if t > delta:
                total += t
        taus[i] = (j - 0.5) * w
        out[i] = total + t
    return taus, out


# ---------------------------------------------------------------- CLE_4 with time labels


@dataclass(eq=False)
class TimedLoop:
    loop: OrientedLoop | None
    t_L: float
    steps: dict
    mode: str
    sequences: dict = field(default_factory=dict)

    def export(self) -> dict:
        return {"t_L": self.t_L, "mode": self.mode, "N": {str(k): v for k, v in self.steps.items()},
                "loop": None if self.loop is None else self.loop.export()}


def refinement_violations(steps: dict) -> list:
    """Levels k where N^{k+1} is neither 2N^k - 1 nor 2N^k."""
    ks = sorted(steps)
    bad = []
    for k0, k1 in zip(ks, ks[1:]):
        if k1 != k0 + 1:
            continue
        n0, n1 = steps[k0], steps[k1]
        if n0 is None or n1 is None:
            continue
        if n1 not in (2 * n0 - 1, 2 * n0):
            bad.append(k0)
    return bad


def prefix_violations(coarse: UpwardSequence, fine: UpwardSequence) -> int:
    """Stages n <= N-1 of the coarse sequence whose interior differs from stage 2n of the fine one."""
    bad = 0
    limit = (coarse.N - 1) if coarse.N is not None else len(coarse.components)
    for n in range(1, limit + 1):
        if 2 * n > len(fine.components) or n > len(coarse.components):
            break
        bad += int(not np.array_equal(coarse.components[n - 1], fine.components[2 * n - 1]))
    return bad


def cle4_timed_loop(z: complex = 0j, seed=None, k_max: int = 6, mode: str = "continuum",
                    field: DiscreteField | None = None, k_min: int = 1, with_loop: bool = False,
                    check: bool = False) -> TimedLoop:
    """Loop around z with time label t = 2^(-k_max-1) N^(k_max).

    Lattice mode runs every level k_min..k_max on the same field and keeps each
    N^k; ``check`` raises RefinementError when N^(k+1) is not 2N^k - 1 or 2N^k.
    Continuum mode runs level k_max only.
    """
    if k_max < 1 or k_min < 1 or k_min > k_max:
        raise ConfigError("need 1 <= k_min <= k_max")
    if mode == "continuum":
        seq = upward_sequence(2.0 ** -k_max, z, seed, "continuum", with_loops="final" if with_loop else False)
        loop = seq.loops[-1] if with_loop else None
        return TimedLoop(loop, 2.0 ** (-k_max - 1) * seq.N, {k_max: seq.N}, mode, {k_max: seq})
    if mode != "lattice":
        raise ConfigError(f"unknown mode {mode!r}")
    if field is None:
        raise ConfigError("lattice mode needs a sampled field")
    seqs, steps = {}, {}
    for k in range(k_min, k_max + 1):
        s = upward_sequence(2.0 ** -k, z, mode="lattice", field=field, with_loops=with_loop and k == k_max)
        seqs[k], steps[k] = s, s.N
    if check and refinement_violations(steps):
        raise RefinementError(f"refinement dichotomy fails at levels {refinement_violations(steps)}: {steps}")
    top = seqs[k_max]
    t = None if top.N is None else 2.0 ** (-k_max - 1) * top.N
    loop = top.loops[-1] if (with_loop and top.loops) else None
    return TimedLoop(loop, t, steps, mode, seqs)


def timed_loop_statistics(n_runs: int, seed=None, k: int = 6, dt: float = 1e-3):
    """(t, -log CR at 0) for continuum timed loops at level k."""
    N, T = upward_statistics(2.0 ** -k, n_runs, seed, dt=dt)
    return 2.0 ** (-k - 1) * N, T


# ---------------------------------------------------------------- coupling with the field


def interior_average(field: DiscreteField, mask) -> tuple[float, float]:
    """Mean of the field over the sites of ``mask`` and its standard deviation given the boundary.

    The variance is (2 pi / |D|^2) 1^T L_D^{-1} 1 for the Dirichlet Laplacian of D.
    """
    dom = field.domain
    sub = LatticeDomain(mask, dom.spacing, np.zeros(dom.shape), dom.origin)
    mat, _ = laplacian(sub)
    ones = np.ones(mat.shape[0])
    var = 2 * np.pi * float(ones @ spla.spsolve(mat, ones)) / mat.shape[0] ** 2
    return float(field.values[mask].mean()), math.sqrt(var)


def coupling_field_check(runs, name: str = "coupling-boundary-value", config=None, seed=None,
                         min_cells: int = MIN_LOOP_CELLS, min_runs: int = 30) -> StatReport:
    """Aggregate z-score of interior field averages against 2 LAMBDA (1 - (r/2) N).

    ``runs`` holds (field, UpwardSequence) pairs from lattice mode.  Sequences
    without a clockwise stop or with a final interior under ``min_cells`` sites
    are excluded and counted in ``details``.
    """
    zs, resid, excluded = [], [], {"no-stop": 0, "small": 0}
    for fld, seq in runs:
        if seq.N is None:
            excluded["no-stop"] += 1
            continue
        mask = seq.components[-1]
        if mask.sum() < min_cells:
            excluded["small"] += 1
            continue
        mean, sd = interior_average(fld, mask)
        zs.append((mean - seq.final_boundary_value) / sd)
        resid.append(mean - seq.final_boundary_value)
    if len(zs) < min_runs:
        raise InsufficientDataError(f"only {len(zs)} usable runs ({excluded})")
    zs = np.asarray(zs)
    Z = float(zs.sum() / math.sqrt(zs.size))
    rep = StatReport(name, int(zs.size), float(zs.mean()), z_score=Z, tolerance=3.0, rule="|z|<tol",
                     passed=abs(Z) < 3.0, details={"excluded": excluded, "z_sd": float(zs.std(ddof=1)),
                              "mean_offset": float(np.mean(resid))})
    return _finish(rep, config, seed)
