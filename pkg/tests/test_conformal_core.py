import math

import numpy as np
import pytest
from scipy import integrate

from artifact.conformal_core import (LAMBDA, DomainError, InfiniteValueError, PiecewiseBoundaryData,
                                     SingularMapError, UndefinedValueError, arc_harmonic_measure, cayley,
                                     cayley_inverse, conformal_radius_disc, conformal_radius_halfplane, green_domain,
                                     green_halfplane, harmonic_extension, harmonic_extension_disc, mobius_disc)


def test_mobius_values():
    assert mobius_disc(0)(0.5) == pytest.approx(0.5)
    assert mobius_disc(0.5)(0.5) == pytest.approx(0)
    assert mobius_disc(0.5)(0) == pytest.approx(-0.5)


def test_mobius_rejects_outside_disc():
    with pytest.raises(DomainError):
        mobius_disc(1.0)


def test_mobius_inverse_roundtrip(rng):
    m = mobius_disc(0.3 - 0.4j, 1.1)
    z = 0.9 * rng.random(20) * np.exp(2j * np.pi * rng.random(20))
    assert np.allclose(m.inverse(m(z)), z)
    assert np.all(np.abs(m(z)) < 1)


def test_conformal_radius():
    assert conformal_radius_disc(mobius_disc(0).derivative(0)) == pytest.approx(1)
    x = 0.6
    assert conformal_radius_disc(mobius_disc(x).derivative(x)) == pytest.approx(1 - x * x)
    assert conformal_radius_halfplane(1j) == pytest.approx(2)
    with pytest.raises(SingularMapError):
        conformal_radius_disc(0)


def test_green_halfplane():
    assert green_halfplane(1j, 2j) == pytest.approx(math.log(3))
    assert green_halfplane(1j, 1 + 1j) == pytest.approx(math.log(math.sqrt(5)))
    assert green_halfplane(1j, 3.0) == 0
    with pytest.raises(InfiniteValueError):
        green_halfplane(1j, 1j)


def test_green_domain_via_uniformizer():
    assert green_domain(1j, 2j) == pytest.approx(math.log(3))
    assert green_domain(0, 0.5, uniformizer=cayley_inverse) == pytest.approx(math.log(2))


def test_cayley_roundtrip():
    z = np.array([1j, 2 + 0.5j, -3 + 4j])
    assert np.allclose(cayley_inverse(cayley(z)), z)
    assert cayley(1j) == 0


def test_harmonic_extension_examples():
    assert harmonic_extension(PiecewiseBoundaryData.constant(1.7), 0.3 + 2j) == pytest.approx(1.7)
    pm = PiecewiseBoundaryData((0.0,), (-LAMBDA, LAMBDA))
    assert harmonic_extension(pm, 1j) == pytest.approx(0, abs=1e-12)
    with pytest.raises(UndefinedValueError):
        harmonic_extension(pm, 0.0)
    assert harmonic_extension(pm, 2.0) == LAMBDA


def test_harmonic_extension_against_poisson_quadrature():
    pm = PiecewiseBoundaryData((0.0,), (-LAMBDA, LAMBDA))
    z = np.exp(1j * np.pi / 4)
    x, y = z.real, z.imag
    kern = lambda s: y / math.pi / ((s - x) ** 2 + y * y)
    right = integrate.quad(kern, 0, np.inf)[0]
    left = integrate.quad(kern, -np.inf, 0)[0]
    assert harmonic_extension(pm, z) == pytest.approx(LAMBDA * (right - left), abs=1e-9)
    assert harmonic_extension(pm, z) == pytest.approx(LAMBDA / 2)


def test_disc_extension_against_poisson_quadrature():
    z = 0.3 + 0.2j
    pk = lambda t: (1 - abs(z) ** 2) / abs(np.exp(1j * t) - z) ** 2 / (2 * math.pi)
    ref = integrate.quad(pk, 0.5, 2.0)[0]
    assert arc_harmonic_measure(z, 0.5, 2.0) == pytest.approx(ref, abs=1e-10)
    val = harmonic_extension_disc([0.0, math.pi], [1.0, -1.0], z)
    ref2 = integrate.quad(pk, 0, math.pi)[0] - integrate.quad(pk, math.pi, 2 * math.pi)[0]
    assert val == pytest.approx(ref2, abs=1e-10)
