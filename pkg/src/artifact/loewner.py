"""Chordal and radial Loewner chains built from exact constant-driver slit maps.

On each step (t_{k-1}, t_k] the driver is frozen at its left value w_k.  The
chordal step map is then z -> w + sqrt((z - w)^2 + 4 dt), the vertical slit map,
and the radial step map is the rotated Koebe-type slit map solving
h / (1 + h)^2 = e^{dt} z / (1 + z)^2.  Composition is exact, so the only error is
the frozen-driver approximation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SWALLOW_EPS = 1e-7
STEP_CAP = 0.05


class MalformedDriverError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class Swallowed:
    time: float


@dataclass(frozen=True)
class DriverPath:
    """Driver samples; chordal values are reals, radial values are angles."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 1:
            raise MalformedDriverError("times and values must be equal-length 1-d arrays")
        if t[0] != 0.0:
            raise MalformedDriverError("driver must start at time 0")
        if np.any(np.diff(t) <= 0):
            raise MalformedDriverError("driver times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise MalformedDriverError("driver contains non-finite samples")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, horizon: float, n_steps: int = 1) -> "DriverPath":
        t = np.linspace(0.0, horizon, n_steps + 1)
        return cls(t, np.full_like(t, value))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def restrict(self, t: float) -> "DriverPath":
        """Driver on [0, t], with a final sample at t taken from the frozen step value."""
        if t >= self.horizon:
            return self
        k = int(np.searchsorted(self.times, t, side="right"))
        times = np.append(self.times[:k], t) if self.times[k - 1] < t else self.times[:k]
        vals = np.append(self.values[:k], self.values[k - 1]) if self.times[k - 1] < t else self.values[:k]
        return DriverPath(times, vals)

    def refined(self, step_cap: float = STEP_CAP) -> "DriverPath":
        """Insert linearly interpolated samples so every increment is at most step_cap."""
        dw = np.abs(np.diff(self.values))
        pieces = np.maximum(1, np.ceil(dw / step_cap).astype(int))
        if np.all(pieces == 1):
            return self
        ts, vs = [self.times[:1]], [self.values[:1]]
        for k, m in enumerate(pieces):
            frac = np.arange(1, m + 1) / m
            ts.append(self.times[k] + frac * (self.times[k + 1] - self.times[k]))
            vs.append(self.values[k] + frac * (self.values[k + 1] - self.values[k]))
        return DriverPath(np.concatenate(ts), np.concatenate(vs))


def _upper_sqrt(q, ref):
    """Square root with non-negative imaginary part; on the real line it takes the sign of ref."""
    s = np.sqrt(np.asarray(q, dtype=complex))
    ref = np.asarray(ref, dtype=complex)
    flip = (s.imag < 0) | ((s.imag == 0) & (np.sign(s.real) != np.sign(ref.real)) & (ref.real != 0))
    return np.where(flip, -s, s)


def slit_map(z, w: float, dt: float):
    """Vertical slit map of half-plane capacity 2 dt rooted at w."""
    z = np.asarray(z, dtype=complex)
    return w + _upper_sqrt((z - w) ** 2 + 4 * dt, z - w)


def slit_map_inverse(zeta, w: float, dt: float):
    zeta = np.asarray(zeta, dtype=complex)
    d = zeta - w
    return w + _upper_sqrt(d**2 - 4 * dt, np.where(d == 0, 1j, d))


def slit_map_derivative(z, w: float, dt: float):
    z = np.asarray(z, dtype=complex)
    return (z - w) / _upper_sqrt((z - w) ** 2 + 4 * dt, z - w)


@dataclass(frozen=True)
class DrivenChain:
    """A Loewner chain stored as its elementary step maps."""

    driver: DriverPath
    radial: bool = False
    step_values: np.ndarray = field(init=False)
    step_lengths: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "step_values", self.driver.values[:-1].copy())
        object.__setattr__(self, "step_lengths", np.diff(self.driver.times))

    @property
    def hull_capacity(self) -> float:
        """Half-plane capacity 2T for chordal chains, log conformal radius T for radial ones."""
        t = self.driver.horizon
        return t if self.radial else 2 * t

    def forward(self, z, n_steps: int | None = None):
        step = radial_step if self.radial else slit_map
        vals = self._vals()
        z = np.asarray(z, dtype=complex)
        for w, dt in list(zip(vals, self.step_lengths))[:n_steps]:
            z = step(z, w, dt)
        return z

    def inverse(self, zeta, n_steps: int | None = None):
        step = radial_step_inverse if self.radial else slit_map_inverse
        vals = self._vals()
        n = len(self.step_lengths) if n_steps is None else n_steps
        zeta = np.asarray(zeta, dtype=complex)
        for k in range(n - 1, -1, -1):
            zeta = step(zeta, vals[k], self.step_lengths[k])
        return zeta

    def derivative(self, z):
        """Returns (g(z), g'(z)) by the chain rule over the steps."""
        step = radial_step if self.radial else slit_map
        dstep = radial_step_derivative if self.radial else slit_map_derivative
        z = np.asarray(z, dtype=complex)
        d = np.ones_like(z)
        for w, dt in zip(self._vals(), self.step_lengths):
            d = d * dstep(z, w, dt)
            z = step(z, w, dt)
        return z, d

    def _vals(self):
        return np.exp(1j * self.step_values) if self.radial else self.step_values


def _check_radial_point(z):
    if np.any(np.abs(np.asarray(z)) > 1 + 1e-12):
        raise ValueError("radial evolution is defined on the closed unit disc")


def chordal_evolve_point(driver: DriverPath, z: complex, t: float | None = None,
                         eps: float = SWALLOW_EPS, step_cap: float = STEP_CAP):
    """g_t(z) for the chordal chain, or Swallowed(T) if g - W hits zero first."""
    drv = driver.refined(step_cap)
    if t is not None:
        drv = drv.restrict(t)
    z = complex(z)
    if z.imag < 0:
        raise ValueError("point must lie in the closed upper half-plane")
    times, vals = drv.times, drv.values
    g = z
    for k in range(len(times) - 1):
        w, dt = vals[k], times[k + 1] - times[k]
        if abs(g - w) <= eps:
            return Swallowed(float(times[k]))
        hit = _step_swallow_time(g, w, dt, eps)
        if hit is not None:
            return Swallowed(float(times[k] + hit))
        g_new = complex(slit_map(g, w, dt))
        if g.imag == 0 and np.sign(g.real - vals[k + 1]) != np.sign(g_new.real - vals[k + 1]) and k + 1 < len(times) - 1:
            # the driver jumped across a boundary point at the grid time
            return Swallowed(float(times[k + 1]))
        g = g_new
    if abs(g - vals[-1]) <= eps and len(times) > 1:
        return Swallowed(float(times[-1]))
    return g


def _step_swallow_time(g: complex, w: float, dt: float, eps: float):
    """Time within a frozen step at which |g_s - w| first drops to eps, or None.

    Under a frozen driver (g_s - w)^2 = (g - w)^2 + 4 s, so |g_s - w| is minimal
    where the real part of the right side vanishes.
    """
    d2 = (g - w) ** 2
    if d2.real >= 0:
        return None
    s_min = min(-d2.real / 4, dt)
    if abs(d2 + 4 * s_min) > eps**2:
        return None
    lo, hi = 0.0, s_min
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(d2 + 4 * mid) > eps**2:
            lo = mid
        else:
            hi = mid
    return hi


def swallow_time(driver: DriverPath, z: complex, eps: float = SWALLOW_EPS) -> float:
    out = chordal_evolve_point(driver, z, eps=eps)
    return out.time if isinstance(out, Swallowed) else math.inf


def hcap(driver: DriverPath) -> float:
    return 2.0 * driver.horizon


@dataclass(frozen=True)
class Trace:
    points: np.ndarray
    times: np.ndarray


def chordal_tips(times, values):
    """Tips of the frozen-driver chain at every grid time, by backward passes (quadratic cost)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    dts = np.diff(times)
    w = values[:-1]
    n = len(dts)
    tips = np.empty(n + 1, dtype=complex)
    tips[0] = values[0]
    if n == 0:
        return tips
    p = w + 2j * np.sqrt(dts)
    for k in range(n - 2, -1, -1):
        p[k + 1:] = slit_map_inverse(p[k + 1:], w[k], dts[k])
    tips[1:] = p
    return tips


def chordal_trace(driver: DriverPath, step_cap: float = STEP_CAP, jump_tol: float | None = None) -> Trace:
    drv = driver.refined(step_cap)
    tips = chordal_tips(drv.times, drv.values)
    if jump_tol is not None and len(tips) > 1 and np.max(np.abs(np.diff(tips))) > jump_tol:
        raise ResolutionError("trace jumps exceed tolerance; refine the driver")
    return Trace(tips, drv.times)


def _koebe_root(c):
    """Root h with |h| <= 1 of h / (1 + h)^2 = c."""
    c = np.asarray(c, dtype=complex)
    disc = _principal_sqrt(1 - 4 * c)
    b = 1 - 2 * c
    # the roots multiply to 1: take the large one without cancellation, invert it for the small one
    num = np.where(np.abs(b + disc) >= np.abs(b - disc), b + disc, b - disc)
    big = num / (2 * c)
    small = 2 * c / num
    return small, small, big


def _principal_sqrt(q):
    return np.sqrt(np.asarray(q, dtype=complex))


def radial_step(z, w: complex, dt: float):
    """Radial slit map removing a radial slit at w of log conformal radius dt."""
    z = np.asarray(z, dtype=complex)
    zr = z / w
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.exp(dt) * zr / (1 + zr) ** 2
        h, h1, h2 = _koebe_root(c)
    # boundary points: both roots lie on the circle, keep the side of the original point
    on_circle = np.abs(np.abs(zr) - 1) < 1e-12
    if np.any(on_circle):
        pick = np.where(np.sign(h1.imag) == np.sign(zr.imag), h1, h2)
        h = np.where(on_circle, pick, h)
    h = np.where(zr == 0, 0, h)
    h = np.where(zr == -1, -1, h)
    out = w * h
    return out if out.ndim else complex(out)


def radial_step_inverse(zeta, w: complex, dt: float):
    zeta = np.asarray(zeta, dtype=complex)
    hr = zeta / w
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.exp(-dt) * hr / (1 + hr) ** 2
        z, z1, z2 = _koebe_root(c)
    on_circle = np.abs(np.abs(hr) - 1) < 1e-12
    if np.any(on_circle):
        pick = np.where(np.sign(z1.imag) == np.sign(hr.imag), z1, z2)
        z = np.where(on_circle, pick, z)
    z = np.where(hr == 0, 0, z)
    z = np.where(hr == -1, -1, z)
    out = w * z
    return out if out.ndim else complex(out)


def radial_step_derivative(z, w: complex, dt: float):
    z = np.asarray(z, dtype=complex)
    zr = z / w
    h = radial_step(z, w, dt) / w
    kz = (1 - zr) / (1 + zr) ** 3
    kh = (1 - h) / (1 + h) ** 3
    return np.exp(dt) * kz / kh


def radial_evolve_point(driver: DriverPath, z: complex, t: float | None = None,
                        eps: float = SWALLOW_EPS, step_cap: float = STEP_CAP):
    """g_t(z) for the radial chain driven by angles, or Swallowed(T)."""
    drv = driver.refined(step_cap)
    if t is not None:
        drv = drv.restrict(t)
    _check_radial_point(z)
    g = complex(z)
    times = drv.times
    ws = np.exp(1j * drv.values)
    for k in range(len(times) - 1):
        if abs(g - ws[k]) <= eps:
            return Swallowed(float(times[k]))
        g = complex(radial_step(g, ws[k], times[k + 1] - times[k]))
    return g


def radial_tips(times, angles):
    """Tips of the frozen-driver radial chain at every grid time."""
    times = np.asarray(times, dtype=float)
    dts = np.diff(times)
    ws = np.exp(1j * np.asarray(angles, dtype=float))[:-1]
    n = len(dts)
    tips = np.empty(n + 1, dtype=complex)
    tips[0] = np.exp(1j * angles[0])
    if n == 0:
        return tips
    c = np.exp(-dts) / 4
    r = (1 - 2 * c - np.sqrt(1 - 4 * c)) / (2 * c)
    p = ws * r
    for k in range(n - 2, -1, -1):
        p[k + 1:] = radial_step_inverse(p[k + 1:], ws[k], dts[k])
    tips[1:] = p
    return tips


def radial_trace(driver: DriverPath, step_cap: float = STEP_CAP) -> Trace:
    drv = driver.refined(step_cap)
    return Trace(radial_tips(drv.times, drv.values), drv.times)


def chordal_driver_from_trace(points, max_time: float | None = None) -> DriverPath:
    """Zipper: unzip a polyline starting at the origin into a frozen-driver path.

    Each new point is mapped forward by the current chain; its image w + i y
    becomes a vertical slit of height y removed at w, i.e. a step of length y^2 / 4.
    With ``max_time`` the unzipping stops at the first step reaching it.
    """
    pts = np.asarray(points, dtype=complex)[1:]
    times, vals = [0.0], []
    cur = pts.copy()
    t = 0.0
    for k in range(len(pts)):
        z = cur[k]
        w, y = z.real, max(z.imag, 0.0)
        dt = y * y / 4
        if t + dt == t:
            continue
        vals.append(w)
        t += dt
        times.append(t)
        if max_time is not None and t >= max_time:
            break
        if k + 1 < len(pts):
            cur[k + 1:] = slit_map(cur[k + 1:], w, dt)
    if not vals:
        return DriverPath(np.array([0.0]), np.array([0.0]))
    vals.append(vals[-1])
    return DriverPath(np.asarray(times), np.asarray(vals))
