import math

import numpy as np
import pytest

from artifact.loewner import (DrivenChain, DriverPath, MalformedDriverError, Swallowed, chordal_driver_from_trace,
                              chordal_evolve_point, chordal_trace, hcap, radial_evolve_point, radial_step,
                              radial_step_inverse, swallow_time)


def test_zero_driver_closed_form():
    d = DriverPath.constant(0.0, 1.0, 100)
    for z in (1 + 1j, -0.5 + 2j):
        ref = np.sqrt(z * z + 4)
        ref = ref if ref.imag > 0 else -ref
        assert chordal_evolve_point(d, z) == pytest.approx(ref, abs=1e-9)
    assert chordal_evolve_point(d, 2.0) == pytest.approx(math.sqrt(8), abs=1e-9)
    out = chordal_evolve_point(d, 0.0)
    assert isinstance(out, Swallowed) and out.time == 0


def test_malformed_driver():
    with pytest.raises(MalformedDriverError):
        DriverPath(np.array([0.0, 0.5, 0.5]), np.zeros(3))
    with pytest.raises(MalformedDriverError):
        DriverPath(np.array([0.1, 0.5]), np.zeros(2))


def test_slit_tip_and_translation():
    d = DriverPath.constant(0.0, 1.0, 400)
    tip = chordal_trace(d).points[-1]
    assert tip == pytest.approx(2j, abs=1e-6)
    shifted = chordal_trace(DriverPath.constant(0.7, 1.0, 400)).points
    assert np.allclose(shifted, chordal_trace(d).points + 0.7)


def test_points_on_the_slit_are_hit():
    d = DriverPath.constant(0.0, 1.0, 100)
    # the slit reaches i at capacity time 1/4
    assert swallow_time(d, 1j) == pytest.approx(0.25, abs=1e-9)
    assert math.isinf(swallow_time(d, 1 + 1j))


def test_capacity_and_swallowing():
    d = DriverPath.constant(0.0, 1.3, 10)
    assert hcap(d) == pytest.approx(2.6)
    # the slit reaches height y at capacity time y^2 / 4
    t1 = swallow_time(DriverPath.constant(0.0, 0.01, 400), 0.001j)
    t2 = swallow_time(DriverPath.constant(0.0, 0.01, 400), 0.002j)
    assert 0 < t1 < t2
    assert t1 == pytest.approx(0.001 ** 2 / 4, rel=0.05)


def test_radial_fixed_origin_and_real_axis():
    d = DriverPath.constant(0.0, 0.2, 50)
    assert radial_evolve_point(d, 0j) == pytest.approx(0)
    # -1 is opposite the driver and stays put; real points in (-1, 0) drift out towards it
    assert radial_evolve_point(d, -1 + 0j) == pytest.approx(-1)
    seq = [radial_evolve_point(d, -0.5 + 0j, t=t) for t in (0.02, 0.05, 0.1)]
    for g in seq:
        assert abs(g.imag) < 1e-12 and -1 < g.real < 0
    assert 0.5 < abs(seq[0]) < abs(seq[1]) < abs(seq[2])


def test_radial_derivative_at_origin(rng):
    t = np.linspace(0, 1, 201)
    d = DriverPath(t, np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.1, 200))]))
    eps = 1e-8
    assert abs(radial_evolve_point(d, eps + 0j) / eps - math.e) < 1e-6
    g0, d0 = DrivenChain(d, radial=True).derivative(0j)
    assert g0 == 0 and abs(d0 - math.e) < 1e-10


def test_radial_step_roundtrip():
    z = np.array([0.3 + 0.4j, -0.9 + 0.01j, 0.99j, np.exp(2j), np.exp(-2.5j)])
    w = np.exp(0.3j)
    assert np.allclose(radial_step_inverse(radial_step(z, w, 0.1), w, 0.1), z, atol=1e-12)


def test_driver_from_trace_recovers_zero_driver():
    pts = 1j * np.linspace(0, 2, 201)
    w = chordal_driver_from_trace(pts)
    assert np.max(np.abs(w.values)) < 1e-8
    assert w.horizon == pytest.approx(1.0, rel=1e-6)
