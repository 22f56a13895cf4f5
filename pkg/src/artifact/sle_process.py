"""Samplers for chordal SLE_4(rho) drivers with boundary force points and for
radial SLE_4(rhoL; rhoR), plus the conditional-mean function of the coupled field."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .conformal_core import KAPPA, LAMBDA
from .loewner import DriverPath, slit_map, slit_map_derivative

SQRT_KAPPA = math.sqrt(KAPPA)
BAND_FACTOR = 10.0
FAR_FACTOR = 3.0


class ConfigError(ValueError):
    pass


class DegenerateStartError(ValueError):
    pass


class SwallowedPointError(ValueError):
    pass


@dataclass(frozen=True)
class ForceConfig:
    """Boundary force points for chordal SLE_4.

    Left positions are <= 0 and decreasing, right positions >= 0 and increasing.
    A position of 0 on the left means 0-, on the right 0+.  An optional interior
    force point carries ``interior_weight`` at ``interior_point``.
    """

    left_weights: tuple = ()
    left_positions: tuple = ()
    right_weights: tuple = ()
    right_positions: tuple = ()
    interior_weight: float = 0.0
    interior_point: complex | None = None

    def __post_init__(self):
        for name in ("left_weights", "left_positions", "right_weights", "right_positions"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        ws = self.left_weights + self.right_weights + (self.interior_weight,)
        if not all(math.isfinite(w) for w in ws):
            raise ConfigError("force-point weights must be finite")
        if len(self.left_weights) != len(self.left_positions) or len(self.right_weights) != len(self.right_positions):
            raise ConfigError("each weight needs exactly one position")
        lp, rp = self.left_positions, self.right_positions
        if any(x > 0 for x in lp) or any(x < 0 for x in rp):
            raise ConfigError("left positions must be <= 0 and right positions >= 0")
        if any(a <= b for a, b in zip(lp, lp[1:])):
            raise ConfigError("left positions must be strictly decreasing")
        if any(a >= b for a, b in zip(rp, rp[1:])):
            raise ConfigError("right positions must be strictly increasing")
        if self.interior_point is not None and complex(self.interior_point).imag <= 0:
            raise ConfigError("interior force point must lie in the upper half-plane")

    @property
    def n_points(self) -> int:
        return len(self.left_weights) + len(self.right_weights)

    def partial_sums(self, side: str) -> np.ndarray:
        w = self.left_weights if side == "L" else self.right_weights
        return np.concatenate([[0.0], np.cumsum(w)])

    def arrays(self):
        weights = np.array(self.left_weights + self.right_weights)
        sides = np.array([-1] * len(self.left_weights) + [1] * len(self.right_weights))
        pos = np.array(self.left_positions + self.right_positions)
        return weights, sides, pos

    @classmethod
    def parse(cls, text: str) -> "ForceConfig":
        """Parse 'L:rho@x,R:rho@x,...'; an empty string means no force points."""
        left, right = [], []
        for item in filter(None, (s.strip() for s in text.split(","))):
            try:
                side, rest = item.split(":")
                w, x = rest.split("@")
                (left if side.upper() == "L" else right).append((float(w), float(x)))
                if side.upper() not in ("L", "R"):
                    raise ValueError
            except ValueError as exc:
                raise ConfigError(f"cannot parse force point {item!r}; expected L:rho@x or R:rho@x") from exc
        left.sort(key=lambda p: -p[1])
        right.sort(key=lambda p: p[1])
        return cls(tuple(w for w, _ in left), tuple(x for _, x in left),
                   tuple(w for w, _ in right), tuple(x for _, x in right))


@dataclass
class ChordalBatch:
    times: np.ndarray
    W: np.ndarray
    V: np.ndarray
    threshold_time: np.ndarray
    tracked: np.ndarray | None = None
    tracked_derivative: np.ndarray | None = None
    swallow_time: np.ndarray | None = None
    interior: np.ndarray | None = None


@dataclass
class DriverWithForcePoints:
    driver: DriverPath
    tracks: dict
    threshold_time: float | None = None


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed)


def time_grid(horizon: float, dt: float, ramp: float = 0.0) -> np.ndarray:
    """Uniform grid of step dt.

    With ``ramp`` > 0 the early steps are geometric, each a fraction ``ramp`` of the
    elapsed time, starting from dt * 1e-6 until they reach dt.  This resolves the
    scale-invariant start of processes whose force points begin at the root.
    """
    if ramp > 0:
        head = [0.0, dt * 1e-6]
        while head[-1] * ramp < dt and head[-1] < horizon:
            head.append(head[-1] * (1 + ramp))
        start = head[-1]
        if start >= horizon:
            return np.array(head[:-1] + [horizon])
        n = max(1, int(math.ceil((horizon - start) / dt - 1e-9)))
        return np.concatenate([head[:-1], np.linspace(start, horizon, n + 1)])
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    return np.linspace(0.0, horizon, n + 1)


def sample_chordal_batch(cfg: ForceConfig, horizon: float, n_paths: int, seed, dt: float = 1e-3,
                         track_points=(), eps_swallow: float = 1e-7, ramp: float | None = None) -> ChordalBatch:
    """Batch sampler for chordal SLE_4 with force points.

    Away from force points the driver moves by Euler steps.  Within a band of
    width 10 sqrt(kappa dt) of the nearest force-point cluster the gap is moved
    by an exact Bessel step, which keeps reflection instantaneous, provided the
    nearest force point on the other side is at least three bands away.  Clusters with
    weight <= -2 absorb: a bridge-crossing test marks the continuation threshold.
    Force points and tracked points follow the exact frozen-driver slit map.
    """
    rng = make_rng(seed)
    if ramp is None:
        # force points at the root make the start scale invariant; resolve it geometrically
        at_root = any(x == 0 for x in cfg.left_positions + cfg.right_positions)
        ramp = 0.02 if at_root else 0.0
    times = time_grid(horizon, dt, ramp)
    n = len(times) - 1
    weights, sides, pos0 = cfg.arrays()
    K = len(weights)
    P = n_paths
    W = np.zeros((P, n + 1))
    V = np.zeros((P, K, n + 1))
    V[:, :, 0] = pos0
    thr = np.full(P, np.inf)
    active = np.ones(P, dtype=bool)
    m = len(track_points)
    G = np.zeros((P, m, n + 1), dtype=complex)
    D = np.ones((P, m, n + 1), dtype=complex)
    G[:, :, 0] = np.asarray(track_points, dtype=complex)
    sw = np.full((P, m), np.inf)
    has_int = cfg.interior_point is not None
    Z = np.full((P, n + 1), complex(cfg.interior_point) if has_int else 0j)
    w = W[:, 0].copy()
    v = V[:, :, 0].copy()
    for k in range(n):
        dt = times[k + 1] - times[k]
        band = BAND_FACTOR * math.sqrt(KAPPA * dt)
        sq = math.sqrt(dt)
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            W[:, k + 1:] = W[:, k:k + 1]
            V[:, :, k + 1:] = V[:, :, k:k + 1]
            G[:, :, k + 1:] = G[:, :, k:k + 1]
            D[:, :, k + 1:] = D[:, :, k:k + 1]
            Z[:, k + 1:] = Z[:, k:k + 1]
            break
        wa = w[idx]
        va = v[idx]
        gap = sides * (va - wa[:, None]) if K else np.zeros((idx.size, 0))
        va_new = wa[:, None] + sides * np.sqrt(gap**2 + 4 * dt) if K else va
        dB = rng.standard_normal(idx.size) * sq
        w_new = wa + SQRT_KAPPA * dB
        bessel_col = np.full(idx.size, -1)
        cluster_w = np.zeros(idx.size)
        in_cluster = np.zeros((idx.size, K), dtype=bool)
        if K:
            near = np.argmin(gap, axis=1)
            gmin = gap[np.arange(idx.size), near]
            in_cluster = (np.abs(gap - gmin[:, None]) <= 1e-14 * (1 + np.abs(gmin[:, None]))) & (
                sides[None, :] == sides[near][:, None])
            cluster_w = (in_cluster * weights).sum(axis=1)
            # the exact step is only used when the far side is out of the band;
            # two-sided crowding is left to the Euler step, which stays unbiased there
            far = np.where(sides[None, :] != sides[near][:, None], gap, np.inf).min(axis=1)
            use_bessel = (gmin < band) & (cluster_w > -2) & (far >= FAR_FACTOR * band)
            bessel_col = np.where(use_bessel, near, -1)
        # drift from every force point outside the Bessel cluster, evaluated after its slit step
        if K:
            excl = in_cluster & (bessel_col >= 0)[:, None]
            drift = np.where(excl, 0.0, weights * dt / (wa[:, None] - va_new)).sum(axis=1)
            w_new = w_new + drift
        if has_int:
            za = Z[idx, k]
            za_new = slit_map(za, wa, dt)
            w_new = w_new + np.real(cfg.interior_weight * dt / (wa - za_new))
        bi = np.nonzero(bessel_col >= 0)[0]
        if bi.size:
            col = bessel_col[bi]
            dim = 1 + (cluster_w[bi] + 2) / 2
            x0 = gap[bi, col]
            nc = (x0 / 2) ** 2 / dt
            y2 = dt * rng.noncentral_chisquare(dim, np.maximum(nc, 1e-300))
            x1 = 2 * np.sqrt(y2)
            vc = va_new[bi, col]
            w_new[bi] = vc - sides[col] * x1 + (w_new[bi] - wa[bi] - SQRT_KAPPA * dB[bi])
        hit = np.zeros(idx.size, dtype=bool)
        if K:
            gap_new = sides * (va_new - w_new[:, None])
            absorbing = in_cluster & (cluster_w <= -2)[:, None]
            crossed = absorbing & (gap_new <= 0)
            p = np.exp(-2 * np.clip(gap, 0, None) * np.clip(gap_new, 0, None) / (KAPPA * dt))
            bridge = absorbing & (rng.random(gap.shape) < p)
            hit = (crossed | bridge).any(axis=1)
            # reflection for non-absorbing points that were overshot
            over = (gap_new < 0) & ~absorbing
            if over.any():
                rows, cols = np.nonzero(over)
                for r, c in zip(rows, cols):
                    w_new[r] = 2 * va_new[r, c] - w_new[r]
                gap_new = sides * (va_new - w_new[:, None])
                bad = (gap_new < 0) & ~absorbing
                if bad.any():
                    rows, cols = np.nonzero(bad)
                    for r, c in zip(rows, cols):
                        w_new[r] = va_new[r, c]
            if hit.any():
                hc = np.nonzero(hit)[0]
                cols = np.argmin(np.where(absorbing[hc], gap[hc], np.inf), axis=1)
                w_new[hc] = va_new[hc, cols]
        if m:
            g = G[idx, :, k]
            D[idx, :, k + 1] = D[idx, :, k] * slit_map_derivative(g, wa[:, None], dt)
            G[idx, :, k + 1] = slit_map(g, wa[:, None], dt)
            close = np.abs(G[idx, :, k + 1] - w_new[:, None]) <= eps_swallow
            s_idx = sw[idx]
            s_idx[close & np.isinf(s_idx)] = times[k + 1]
            sw[idx] = s_idx
        if has_int:
            Z[idx, k + 1] = za_new
        w[idx] = w_new
        v[idx] = va_new
        W[:, k + 1] = w
        V[:, :, k + 1] = v
        if hit.any():
            thr[idx[hit]] = times[k + 1]
            active[idx[hit]] = False
        inactive = np.nonzero(~active)[0]
        if inactive.size and m:
            G[inactive, :, k + 1] = G[inactive, :, k]
            D[inactive, :, k + 1] = D[inactive, :, k]
        if inactive.size and has_int:
            Z[inactive, k + 1] = Z[inactive, k]
    return ChordalBatch(times, W, V, thr, G if m else None, D if m else None, sw if m else None,
                        Z if has_int else None)


def sample_chordal_driver(cfg: ForceConfig, horizon: float, seed, dt: float = 1e-3) -> DriverWithForcePoints:
    batch = sample_chordal_batch(cfg, horizon, 1, seed, dt)
    tracks = {}
    for j, w in enumerate(cfg.left_weights):
        tracks[f"L{j + 1}"] = batch.V[0, j]
    for j, w in enumerate(cfg.right_weights):
        tracks[f"R{j + 1}"] = batch.V[0, len(cfg.left_weights) + j]
    t = batch.threshold_time[0]
    return DriverWithForcePoints(DriverPath(batch.times, batch.W[0]), tracks, None if np.isinf(t) else float(t))


def _arg_upper(z):
    a = np.angle(z)
    return np.where(a < 0, a + 2 * np.pi, a)


def eta_from_positions(f, left_rel, right_rel, cfg: ForceConfig):
    """Harmonic mean of the coupled field at a point whose image minus W is f.

    ``left_rel``/``right_rel`` hold V - W for the force points (shape (..., K_side)).
    Boundary data is -lambda (1 + partial sum) on the left pieces and
    lambda (1 + partial sum) on the right pieces.
    """
    f = np.asarray(f, dtype=complex)
    left_rel = np.asarray(left_rel, dtype=float).reshape(f.shape + (-1,))
    right_rel = np.asarray(right_rel, dtype=float).reshape(f.shape + (-1,))
    rl, rr = cfg.partial_sums("L"), cfg.partial_sums("R")
    arg_origin = _arg_upper(f)
    out = np.zeros(f.shape)
    # right side: pieces (0, x1), (x1, x2), ..., (x_last, inf)
    # an interval (a, b) subtends arg(f - b) - arg(f - a) at f
    prev = arg_origin
    for j in range(right_rel.shape[-1]):
        cur = _arg_upper(f - right_rel[..., j])
        out += LAMBDA * (1 + rr[j]) * (cur - prev) / np.pi
        prev = cur
    out += LAMBDA * (1 + rr[-1]) * (np.pi - prev) / np.pi
    prev = arg_origin
    for j in range(left_rel.shape[-1]):
        cur = _arg_upper(f - left_rel[..., j])
        out += -LAMBDA * (1 + rl[j]) * (prev - cur) / np.pi
        prev = cur
    out += -LAMBDA * (1 + rl[-1]) * prev / np.pi
    return out


def eta_conditional_mean(state: DriverWithForcePoints, cfg: ForceConfig, z: complex, t: float = 0.0) -> float:
    """Conditional mean of the coupled field at z given the curve up to time t."""
    times = state.driver.times
    k = int(np.searchsorted(times, t, side="right")) - 1
    drv = DriverPath(times[:k + 1], state.driver.values[:k + 1])
    from .loewner import chordal_evolve_point, Swallowed
    g = chordal_evolve_point(drv, z, step_cap=np.inf)
    if isinstance(g, Swallowed):
        raise SwallowedPointError(f"point swallowed at time {g.time}")
    w = state.driver.values[k]
    left = [state.tracks[f"L{j + 1}"][k] - w for j in range(len(cfg.left_weights))]
    right = [state.tracks[f"R{j + 1}"][k] - w for j in range(len(cfg.right_weights))]
    return float(eta_from_positions(g - w, np.array(left), np.array(right), cfg))


# ---------------------------------------------------------------- radial


@dataclass
class RadialPath:
    """Radial driver with its two force points; angles are continuous lifts."""

    times: np.ndarray
    xi: np.ndarray
    v_left: np.ndarray
    v_right: np.ndarray
    threshold_time: float | None
    orientation: str | None
    rho_left: float = 0.0
    rho_right: float = 0.0

    @property
    def gaps(self):
        return self.xi - self.v_left, self.v_right - self.xi

    def driver(self) -> DriverPath:
        return DriverPath(self.times, self.xi)


@dataclass
class RadialBatch:
    times: list
    xi: list
    v_left: list
    v_right: list
    threshold_time: np.ndarray
    orientation: np.ndarray
    mean_at_target: np.ndarray = field(default=None)
    seeds: np.ndarray = field(default=None)


def levelline_weights(a: float):
    """Force-point weights (rhoL, rhoR) of a level line with boundary value a."""
    return -a / LAMBDA - 1, a / LAMBDA - 1


def _cot(x):
    return np.cos(x) / np.sin(x)


@njit(cache=True)
def _solve_total_gap(s_old, K, alpha, h):
    """Solve S' - s_old - h (cot(g1/2) + cot(g2/2)) = 0 for S' by safeguarded Newton.

    g1 = (S'(1 - alpha) - K)/2, g2 = (S'(1 + alpha) + K)/2; the left side is
    increasing in S' on (S_lo, 2 pi] and non-negative at 2 pi.
    """
    two_pi = 2 * np.pi
    lo = max(max(K / (1 - alpha), -K / (1 + alpha)), 0.0)
    hi = two_pi
    x = s_old if s_old > lo else lo + 0.5 * min(hi - lo, 1.0)
    for _ in range(200):
        g1 = (x * (1 - alpha) - K) / 2
        g2 = (x * (1 + alpha) + K) / 2
        s1, s2 = np.sin(g1 / 2), np.sin(g2 / 2)
        G = x - s_old - h * (np.cos(g1 / 2) / s1 + np.cos(g2 / 2) / s2)
        if G < 0:
            lo = x
        else:
            hi = x
        dG = 1 + h * ((1 - alpha) / (4 * s1 * s1) + (1 + alpha) / (4 * s2 * s2))
        x_new = x - G / dG
        if not (lo <= x_new <= hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) < 1e-13 * (1 + x) or hi - lo < 1e-14:
            return x_new
        x = x_new
    return x


@njit(cache=True)
def _levelline_path(a, seed, dt, horizon, g1, g2, cap, rec_t, rec_xi, rec_vl, rec_vr):
    """One level-line radial path; returns (threshold time, orientation, steps recorded, final mean).

    Recording stops silently at ``cap`` samples; the caller checks the count.
    """
    np.random.seed(seed)
    lam = np.pi / 2
    alpha = a / lam
    ks = 2 * np.pi / lam
    S = g1 + g2
    K = (g2 - g1) - alpha * S
    vl, vr = -g1, g2
    t = 0.0
    n = 0
    if cap > 0:
        rec_t[0], rec_xi[0], rec_vl[0], rec_vr[0] = 0.0, 0.0, vl, vr
        n = 1
    while t < horizon:
        h = min(dt, horizon - t)
        K1 = K + ks * np.random.standard_normal() * np.sqrt(h)
        M0 = a + K / ks
        M1 = a + K1 / ks
        orient = 0
        if M1 >= lam or np.random.random() < np.exp(-2 * max(lam - M0, 0.0) * max(lam - M1, 0.0) / h):
            orient = 1
        elif M1 <= -lam or np.random.random() < np.exp(-2 * max(M0 + lam, 0.0) * max(M1 + lam, 0.0) / h):
            orient = -1
        if orient != 0:
            bar = lam * orient
            frac = 0.5
            if abs(M1) >= lam and M1 != M0:
                frac = min(max((bar - M0) / (M1 - M0), 0.0), 1.0)
            t_hit = t + frac * h
            if cap > 0 and n < cap:
                rec_t[n], rec_vl[n], rec_vr[n] = t_hit, vl, vr
                # clockwise closes with xi meeting v_left from the far side
                rec_xi[n] = vl if orient == 1 else vr
                n += 1
            return t_hit, orient, n, bar
        S1 = _solve_total_gap(S, K1, alpha, h)
        g1n = (S1 * (1 - alpha) - K1) / 2
        g2n = (S1 * (1 + alpha) + K1) / 2
        c1 = np.cos(g1n / 2) / np.sin(g1n / 2)
        c2 = np.cos(g2n / 2) / np.sin(g2n / 2)
        dS = S1 - S
        share = c1 / (c1 + c2) if c1 + c2 > 0 else 0.5
        vl -= dS * share
        vr += dS * (1 - share)
        S, K = S1, K1
        t += h
        if cap > 0 and n < cap:
            rec_t[n], rec_xi[n], rec_vl[n], rec_vr[n] = t, vl + g1n, vl, vr
            n += 1
    return np.inf, 0, n, a + K / ks


def _int_seeds(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.generate_state(n, dtype=np.uint32)


def sample_radial_levelline_batch(a: float, n_paths: int, seed, dt: float = 1e-3, horizon: float = np.inf,
                                  start_gaps=(0.0, 0.0), keep_paths: bool = True) -> RadialBatch:
    """Radial SLE_4(rhoL; rhoR) with rhoL + rhoR = -2, i.e. a level line with boundary value a.

    The harmonic mean M = (lambda (gR - gL) + a (2 pi - S)) / (2 pi) at the target is
    a standard Brownian motion, S = gL + gR is driven by dS = (cot(gL/2) + cot(gR/2)) dt
    and integrated implicitly, and the continuation threshold is the exit of M from
    (-lambda, lambda).  Exit at +lambda closes a clockwise loop.
    """
    if not abs(a) < LAMBDA:
        raise ConfigError("boundary value must lie strictly between -lambda and lambda")
    g1, g2 = (float(x) for x in start_gaps)
    if not (g1 >= 0 and g2 >= 0 and g1 + g2 < 2 * np.pi):
        raise DegenerateStartError("start gaps must be non-negative with sum below 2 pi")
    seeds = _int_seeds(seed, n_paths)
    thr = np.empty(n_paths)
    orient = np.empty(n_paths, dtype=int)
    mean = np.empty(n_paths)
    ts, xis, vls, vrs = [], [], [], []
    empty = np.empty(0)
    for p in range(n_paths):
        if keep_paths:
            t_hit, o, m, rec = _recorded_path(a, seeds[p], dt, horizon, g1, g2)
            for lst, arr in zip((ts, xis, vls, vrs), rec):
                lst.append(arr)
        else:
            t_hit, o, n, m = _levelline_path(a, seeds[p], dt, horizon, g1, g2, 0, empty, empty, empty, empty)
        thr[p], orient[p], mean[p] = t_hit, o, m
    return RadialBatch(ts, xis, vls, vrs, thr, orient, mean, seeds)


def _recorded_path(a, path_seed, dt, horizon, g1, g2):
    cap = 4096
    while True:
        buf = [np.empty(cap) for _ in range(4)]
        t_hit, o, n, m = _levelline_path(a, path_seed, dt, horizon, g1, g2, cap, *buf)
        if n < cap:
            return t_hit, o, m, [b[:n] for b in buf]
        cap *= 4


def replay_radial_levelline(a: float, path_seed: int, dt: float = 1e-3, horizon: float = np.inf,
                            start_gaps=(0.0, 0.0)) -> RadialBatch:
    """Re-run one path of a batch from its recorded integer seed, keeping the path."""
    g1, g2 = (float(x) for x in start_gaps)
    t_hit, o, m, rec = _recorded_path(a, np.uint32(path_seed), dt, horizon, g1, g2)
    return RadialBatch(*[[r] for r in rec], np.array([t_hit]), np.array([o]), np.array([m]),
                       np.array([path_seed], dtype=np.uint32))


def sample_radial_generic_batch(rho_left: float, rho_right: float, n_paths: int, seed, horizon: float,
                                dt: float = 1e-3, start_gaps=(0.0, 0.0), track_angle: float | None = None):
    """Radial SLE_4(rhoL; rhoR) by Euler steps on the gaps, with exact Bessel steps near zero.

    Gap SDEs: dgL = 2 dB + ((rhoL + 2)/2 cot(gL/2) - rhoR/2 cot(gR/2)) dt and
    dgR = -2 dB + ((rhoR + 2)/2 cot(gR/2) - rhoL/2 cot(gL/2)) dt.  A path stops
    when the total gap reaches 2 pi.  Returns arrays on the time grid.
    """
    rng = make_rng(seed)
    if start_gaps[0] == 0 and start_gaps[1] == 0 and (rho_left <= -2 or rho_right <= -2):
        raise DegenerateStartError("an absorbing weight at a zero gap stops the process at once")
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    dt = horizon / n
    times = np.linspace(0, horizon, n + 1)
    P = n_paths
    gl = np.full(P, float(start_gaps[0]))
    gr = np.full(P, float(start_gaps[1]))
    vl = -gl.copy()
    vr = gr.copy()
    XI = np.zeros((P, n + 1))
    VL = np.zeros((P, n + 1))
    VR = np.zeros((P, n + 1))
    VL[:, 0], VR[:, 0] = vl, vr
    thr = np.full(P, np.inf)
    orient = np.zeros(P, dtype=int)
    active = np.ones(P, dtype=bool)
    band = BAND_FACTOR * math.sqrt(KAPPA * dt)
    tracked = None
    if track_angle is not None:
        tracked = np.zeros((P, n + 1))
        tracked[:, 0] = track_angle
    dims = (1 + (rho_left + 2) / 2, 1 + (rho_right + 2) / 2)
    xi = np.zeros(P)
    for k in range(n):
        ia = np.nonzero(active)[0]
        if ia.size == 0:
            XI[:, k + 1:], VL[:, k + 1:], VR[:, k + 1:] = XI[:, k:k + 1], VL[:, k:k + 1], VR[:, k:k + 1]
            if tracked is not None:
                tracked[:, k + 1:] = tracked[:, k:k + 1]
            break
        a1, a2 = gl[ia], gr[ia]
        dB = rng.standard_normal(ia.size) * math.sqrt(dt)
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = np.where(a1 > 0, _cot(a1 / 2), 0.0)
            c2 = np.where(a2 > 0, _cot(a2 / 2), 0.0)
        # force points move by the exact frozen-driver flow: cos(gap/2) decays like exp(-t/2)
        x_old = xi[ia]
        decay = math.exp(-dt / 2)
        vl_new = x_old - 2 * np.arccos(np.cos(a1 / 2) * decay)
        vr_new = x_old + 2 * np.arccos(np.cos(a2 / 2) * decay)
        x_new = x_old + 2 * dB + (rho_left / 2 * c1 - rho_right / 2 * c2) * dt
        near_l = (a1 < band) & (a1 <= a2) & (rho_left > -2)
        near_r = (a2 < band) & (a2 < a1) & (rho_right > -2)
        for near, dim, side in ((near_l, dims[0], -1), (near_r, dims[1], 1)):
            j = np.nonzero(near)[0]
            if j.size:
                x0 = (a1 if side < 0 else a2)[j]
                y2 = dt * rng.noncentral_chisquare(dim, np.maximum((x0 / 2) ** 2 / dt, 1e-300))
                gap_new = 2 * np.sqrt(y2)
                cross = (-rho_right / 2 * c2[j]) if side < 0 else (rho_left / 2 * c1[j])
                anchor = vl_new[j] if side < 0 else vr_new[j]
                x_new[j] = anchor - side * gap_new + cross * dt
        if tracked is not None:
            tracked[:, k + 1] = tracked[:, k]
            u = np.mod(tracked[ia, k] - x_old, 2 * np.pi)
            tracked[ia, k + 1] = tracked[ia, k] - u + 2 * np.arccos(np.cos(u / 2) * decay)
        # reflect the driver back between its force points
        tot = vr_new - vl_new
        y = np.mod(x_new - vl_new, 2 * tot)
        y = np.where(y > tot, 2 * tot - y, y)
        x_new = vl_new + y
        gl_new, gr_new = y, tot - y
        done = tot >= 2 * np.pi
        xi[ia], vl[ia], vr[ia] = x_new, vl_new, vr_new
        gl[ia], gr[ia] = gl_new, gr_new
        if done.any():
            di = ia[done]
            thr[di] = times[k + 1]
            orient[di] = np.where(gl[di] < gr[di], 1, -1)
            active[di] = False
        XI[:, k + 1], VL[:, k + 1], VR[:, k + 1] = xi, vl, vr
    return dict(times=times, xi=XI, v_left=VL, v_right=VR, threshold_time=thr, orientation=orient,
                tracked=tracked)


def sample_radial_driver(rho_left: float, rho_right: float, start_gaps=(0.0, 0.0), horizon: float = np.inf,
                         seed=0, dt: float = 1e-3) -> RadialPath:
    """One radial SLE_4(rhoL; rhoR) path; level-line weights use the exact-threshold scheme."""
    if not (math.isfinite(rho_left) and math.isfinite(rho_right)):
        raise ConfigError("weights must be finite")
    if abs(rho_left + rho_right + 2) < 1e-12:
        a = LAMBDA * (rho_right + 1)
        b = sample_radial_levelline_batch(a, 1, seed, dt, horizon, start_gaps)
        t = b.threshold_time[0]
        o = {1: "cw", -1: "ccw"}.get(int(b.orientation[0]))
        return RadialPath(b.times[0], b.xi[0], b.v_left[0], b.v_right[0],
                          None if np.isinf(t) else float(t), o, rho_left, rho_right)
    if not math.isfinite(horizon):
        raise ConfigError("generic weights need a finite horizon")
    out = sample_radial_generic_batch(rho_left, rho_right, 1, seed, horizon, dt, start_gaps)
    t = out["threshold_time"][0]
    o = {1: "cw", -1: "ccw"}.get(int(out["orientation"][0]))
    return RadialPath(out["times"], out["xi"][0], out["v_left"][0], out["v_right"][0],
                      None if np.isinf(t) else float(t), o, rho_left, rho_right)


# ---------------------------------------------------------------- chordal / radial equivalence


def _chordal_gap_at(rho_left, rho_right, rho_int, t0, n, seed, dt, horizon):
    cfg = ForceConfig((rho_left,), (0.0,), (rho_right,), (0.0,), rho_int, 1j if rho_int != 0 else None)
    b = sample_chordal_batch(cfg, horizon, n, seed, dt, track_points=(1j,))
    g, d = b.tracked[:, 0, :], b.tracked_derivative[:, 0, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = -np.log(g.imag / np.abs(d))
    out = np.full(n, -1.0)
    undecided = 0
    for p in range(n):
        alive = b.times < min(b.swallow_time[p, 0], b.threshold_time[p])
        k = np.nonzero(alive & (s[p] >= t0))[0]
        if k.size == 0:
            undecided += int(alive[-1])
            continue
        k = k[0]
        z = g[p, k]
        psi_w = (b.W[p, k] - z) / (b.W[p, k] - np.conj(z))
        psi_r = (b.V[p, 1, k] - z) / (b.V[p, 1, k] - np.conj(z))
        out[p] = np.angle(psi_r / psi_w) % (2 * np.pi)
    return out, undecided


def _radial_gap_at(rho_left, rho_right, t0, n, seed, dt):
    r = sample_radial_generic_batch(rho_left, rho_right, n, seed, t0, dt)
    gap = r["v_right"][:, -1] - r["xi"][:, -1]
    return np.where(r["threshold_time"] <= t0, -1.0, gap)


def chordal_radial_equivalence_check(weights=(0.0, 0.0, -2.0), n: int = 1000, seed=None, t0: float = 0.1,
                                     dt: float = 2.5e-4, chordal_horizon: float = 1.0):
    """Two-sample KS between chordal SLE_4(rhoL; rhoR) with an interior force point at i and
    radial SLE_4(rhoL; rhoR) aimed at i.

    The summary is the gap between the tip and the right force point, as a
    harmonic angle seen from i, at the time -log CR(i) has dropped by ``t0``
    from its starting value; runs in which i is cut off first record -1.  The weights must satisfy rhoL + rhoR + rhoI = -2.
    """
    from .verify import ks_two_sample, StatReport, _finish

    rho_left, rho_right, rho_int = (float(x) for x in weights)
    if abs(rho_left + rho_right + rho_int + 2) > 1e-12:
        raise ConfigError("weights must satisfy rhoL + rhoR + rhoI = kappa - 6 = -2")
    cfg = {"weights": [rho_left, rho_right, rho_int], "n": n, "t0": t0, "dt": dt}
    if t0 <= 0:
        rep = StatReport("chordal-radial-equivalence", 0, 0.0, p_value=1.0, passed=True,
                         details={"empty": True})
        return _finish(rep, cfg, seed)
    s_ch, s_rad = np.random.SeedSequence(seed).spawn(2)
    a, undecided = _chordal_gap_at(rho_left, rho_right, rho_int, t0, n, s_ch, dt, chordal_horizon)
    b = _radial_gap_at(rho_left, rho_right, t0, n, s_rad, dt)
    rep = ks_two_sample(a, b, name="chordal-radial-equivalence", config=cfg, seed=seed)
    rep.details.update({"undecided": undecided, "cut_chordal": int(np.sum(a < 0)), "cut_radial": int(np.sum(b < 0))})
    return rep


# ---------------------------------------------------------------- martingale in log-CR time


def eta_increments(cfg: ForceConfig, z: complex = 1j, levels=(0.1, 0.2, 0.3, 0.5, 0.7), n_paths: int = 1000,
                   seed=None, dt: float = 1e-3, horizon: float = 1.0):
    """eta(z) increments stopped when log CR(H; z) - log CR(H \\ K_t; z) first reaches each level.

    Paths that never reach a level within ``horizon`` are stopped there, so
    the increments are those of a martingale at bounded stopping times.
    Returns (increments, stopped log-CR time, reached flags), each of shape
    (n_paths, len(levels)).
    """
    z = complex(z)
    b = sample_chordal_batch(cfg, horizon, n_paths, seed, dt, track_points=(z,))
    g, d = b.tracked[:, 0, :], b.tracked_derivative[:, 0, :]
    KL = len(cfg.left_weights)
    left = (b.V[:, :KL, :] - b.W[:, None, :]).transpose(0, 2, 1)
    right = (b.V[:, KL:, :] - b.W[:, None, :]).transpose(0, 2, 1)
    eta = eta_from_positions(g - b.W, left, right, cfg)
    s = math.log(2 * z.imag) - np.log(2 * g.imag / np.abs(d))
    rows = np.arange(n_paths)
    last = s.shape[1] - 1
    inc = np.zeros((n_paths, len(levels)))
    stopped = np.zeros_like(inc)
    reached = np.zeros(inc.shape, dtype=bool)
    for j, lev in enumerate(levels):
        hit = s >= lev
        ok = hit.any(axis=1)
        k = np.where(ok, np.argmax(hit, axis=1), last)
        inc[:, j] = eta[rows, k] - eta[:, 0]
        stopped[:, j] = s[rows, k]
        reached[:, j] = ok
    return inc, stopped, reached
