"""Complex-analytic helpers: Mobius maps, Green's functions, conformal radius
and harmonic extension of piecewise constant boundary data."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

KAPPA = 4.0
LAMBDA = math.pi / 2


class DomainError(ValueError):
    pass


class SingularMapError(ValueError):
    pass


class InfiniteValueError(ValueError):
    pass


class UndefinedValueError(ValueError):
    pass


@dataclass(frozen=True)
class MobiusDisc:
    """z -> e^{i theta} (z - a) / (1 - conj(a) z), an automorphism of the unit disc."""

    a: complex
    theta: float = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.exp(1j * self.theta) * (z - self.a) / (1 - np.conj(self.a) * z)
        return out if out.ndim else complex(out)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        a = self.a
        out = np.exp(1j * self.theta) * (1 - abs(a) ** 2) / (1 - np.conj(a) * z) ** 2
        return out if out.ndim else complex(out)

    def inverse(self, w):
        w = np.asarray(w, dtype=complex) * np.exp(-1j * self.theta)
        out = (w + self.a) / (1 + np.conj(self.a) * w)
        return out if out.ndim else complex(out)


def mobius_disc(a: complex, theta: float = 0.0) -> MobiusDisc:
    a = complex(a)
    if not abs(a) < 1:
        raise DomainError(f"Mobius centre must lie in the open unit disc, got |a|={abs(a)}")
    return MobiusDisc(a, float(theta))


def cayley(z):
    """Upper half-plane to unit disc, i -> 0."""
    z = np.asarray(z, dtype=complex)
    out = (z - 1j) / (z + 1j)
    return out if out.ndim else complex(out)


def cayley_inverse(w):
    w = np.asarray(w, dtype=complex)
    out = 1j * (1 + w) / (1 - w)
    return out if out.ndim else complex(out)


def conformal_radius_disc(domain_map_derivative: complex) -> float:
    """Conformal radius 1/|phi'(z)| from the derivative of a uniformizer phi with phi(z)=0."""
    d = abs(complex(domain_map_derivative))
    if d == 0 or not math.isfinite(d):
        raise SingularMapError("uniformizing map has zero or non-finite derivative")
    return 1.0 / d


def conformal_radius_halfplane(z: complex) -> float:
    """CR of the upper half-plane seen from z, via the Cayley map recentred at z."""
    z = complex(z)
    if z.imag <= 0:
        raise DomainError("point must lie in the open upper half-plane")
    # phi(w) = (w - z) / (w - conj z), phi'(z) = 1 / (z - conj z)
    return conformal_radius_disc(1.0 / (z - z.conjugate()))


def green_halfplane(z, w):
    """log |(z - conj w) / (z - w)|; vanishes when either point is on the real line."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    num = np.abs(z - np.conj(w))
    den = np.abs(z - w)
    if np.any(den == 0):
        raise InfiniteValueError("Green's function is infinite on the diagonal")
    out = np.log(num / den)
    out = np.where((z.imag <= 0) | (w.imag <= 0), 0.0, out)
    return out if out.ndim else float(out)


def green_domain(z, w, uniformizer: Callable = None):
    """Green's function of a simply connected domain given a conformal map onto the upper half-plane."""
    if uniformizer is None:
        return green_halfplane(z, w)
    return green_halfplane(uniformizer(z), uniformizer(w))


def disc_to_halfplane(w):
    """Inverse Cayley map, the uniformizer of the unit disc onto the half-plane."""
    return cayley_inverse(w)


@dataclass(frozen=True)
class PiecewiseBoundaryData:
    """Piecewise constant data on the real line.

    ``breakpoints`` are the finite jump locations in increasing order; piece ``k``
    occupies (breakpoints[k-1], breakpoints[k]) with -inf and +inf as outer ends.
    """

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if len(vals) != len(bp) + 1:
            raise ValueError("need exactly one more value than breakpoints")
        if any(b1 >= b2 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if not all(math.isfinite(b) for b in bp):
            raise ValueError("finite breakpoints only; the outer ends are implicit")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, c: float) -> "PiecewiseBoundaryData":
        return cls((), (c,))

    def value_at(self, x: float) -> float:
        k = int(np.searchsorted(self.breakpoints, x, side="right"))
        return self.values[k]


def _arg_upper(z):
    # argument in [0, pi] for points in the closed upper half-plane
    a = np.angle(z)
    return np.where(a < 0, a + 2 * np.pi, a) if np.ndim(a) else (a + 2 * math.pi if a < 0 else a)


def harmonic_measure_interval(z, a: float, b: float):
    """Harmonic measure of (a, b) seen from z in the upper half-plane; a may be -inf, b may be +inf."""
    z = np.asarray(z, dtype=complex)
    # the interval subtends arg(z - b) - arg(z - a) at z
    arg_b = np.full(z.shape, np.pi) if math.isinf(b) else _arg_upper(z - b)
    arg_a = np.zeros(z.shape) if math.isinf(a) else _arg_upper(z - a)
    out = (arg_b - arg_a) / np.pi
    return out if out.ndim else float(out)


def harmonic_extension(data: PiecewiseBoundaryData, z):
    """Bounded harmonic function in the half-plane with the given boundary values."""
    z = np.asarray(z, dtype=complex)
    bp = np.asarray(data.breakpoints)
    on_boundary = z.imag <= 0
    if np.any(on_boundary):
        hits = np.isin(z.real[on_boundary], bp)
        if np.any(hits):
            raise UndefinedValueError("harmonic extension is undefined at a breakpoint")
    ends = [-math.inf, *data.breakpoints, math.inf]
    out = np.zeros(z.shape)
    for k, v in enumerate(data.values):
        out = out + v * harmonic_measure_interval(z, ends[k], ends[k + 1])
    if np.any(on_boundary):
        idx = np.searchsorted(bp, z.real, side="right")
        out = np.where(on_boundary, np.asarray(data.values)[idx], out)
    return out if out.ndim else float(out)


def harmonic_extension_disc(angles: Sequence[float], values: Sequence[float], z):
    """Harmonic extension into the unit disc of data piecewise constant on arcs.

    ``angles`` are increasing breakpoints in [0, 2 pi); ``values[k]`` holds on the
    arc from ``angles[k]`` to ``angles[k+1]`` (cyclically).
    """
    z = np.asarray(z, dtype=complex)
    n = len(angles)
    out = np.zeros(z.shape)
    for k in range(n):
        t0 = angles[k]
        t1 = angles[(k + 1) % n] + (2 * np.pi if k + 1 == n else 0.0)
        out = out + values[k] * arc_harmonic_measure(z, t0, t1)
    return out if out.ndim else float(out)


def arc_harmonic_measure(z, t0: float, t1: float):
    """Harmonic measure of the arc from angle t0 to t1 (counterclockwise) seen from z in the disc."""
    z = np.asarray(z, dtype=complex)
    p0, p1 = np.exp(1j * t0), np.exp(1j * t1)
    # the arc subtends an inscribed angle; omega = (angle at z between p0 and p1)/pi - (t1-t0)/(2 pi)
    ang = np.angle((p1 - z) / (p0 - z))
    ang = np.where(ang < 0, ang + 2 * np.pi, ang)
    out = ang / np.pi - (t1 - t0) / (2 * np.pi)
    return out if out.ndim else float(out)
