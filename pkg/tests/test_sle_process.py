import math

import numpy as np
import pytest
from scipy import special

from artifact.conformal_core import LAMBDA, PiecewiseBoundaryData, harmonic_extension
from artifact.sle_process import (ConfigError, DriverWithForcePoints, ForceConfig, chordal_radial_equivalence_check,
                                  eta_conditional_mean, eta_increments, levelline_weights, sample_chordal_batch,
                                  sample_chordal_driver, sample_radial_driver, sample_radial_levelline_batch)
from artifact.loewner import DriverPath


def test_force_config_validation():
    with pytest.raises(ConfigError):
        ForceConfig((math.inf,), (0.0,))
    with pytest.raises(ConfigError):
        ForceConfig((), (), (1.0,), (-1.0,))
    with pytest.raises(ConfigError):
        ForceConfig.parse("Q:1@2")
    cfg = ForceConfig.parse("L:1@-0.5,R:-1@0,R:2@1.5")
    assert cfg.left_weights == (1.0,) and cfg.right_positions == (0.0, 1.5)
    assert ForceConfig.parse("") == ForceConfig()


def test_levelline_weights():
    assert levelline_weights(0.0) == (-1.0, -1.0)
    r = 0.5
    assert levelline_weights(LAMBDA * (r - 1)) == pytest.approx((-r, -2 + r))


def test_plain_driver_variance():
    b = sample_chordal_batch(ForceConfig(), 1.0, 10, 3, 1e-3)
    inc = np.diff(b.W, axis=1).ravel()
    assert inc.size == 10_000
    assert abs(inc.var() / 4e-3 - 1) < 0.05


def test_determinism():
    cfg = ForceConfig((1.0,), (0.0,), (-1.0,), (0.5,))
    a = sample_chordal_driver(cfg, 0.5, 11)
    b = sample_chordal_driver(cfg, 0.5, 11)
    assert np.array_equal(a.driver.values, b.driver.values)
    assert all(np.array_equal(a.tracks[k], b.tracks[k]) for k in a.tracks)


def test_absorbing_threshold_matches_bessel_hitting_law():
    # V - W is 2 x Bessel of dimension (4 + rho) / 2; from gap x it hits 0 at x^2 / (8 Gamma(1 - delta/2))
    rho, x, n = -3.0, 1.0, 2000
    b = sample_chordal_batch(ForceConfig((), (), (rho,), (x,)), 1.0, n, 5, 1e-3)
    delta = (4 + rho) / 2
    p = special.gammaincc(1 - delta / 2, x * x / 8)
    phat = np.mean(b.threshold_time < 1)
    assert abs(phat - p) < 3 * math.sqrt(p * (1 - p) / n)


def _state(cfg):
    t = np.array([0.0, 1e-3])
    tracks = {f"L{j + 1}": np.full(2, x) for j, x in enumerate(cfg.left_positions)}
    tracks.update({f"R{j + 1}": np.full(2, x) for j, x in enumerate(cfg.right_positions)})
    return DriverWithForcePoints(DriverPath(t, np.zeros(2)), tracks)


def test_eta_at_time_zero():
    cfg = ForceConfig()
    assert eta_conditional_mean(_state(cfg), cfg, 1j) == pytest.approx(0, abs=1e-12)
    cfg = ForceConfig((1.0,), (0.0,), (1.0,), (0.0,))
    assert eta_conditional_mean(_state(cfg), cfg, 1j) == pytest.approx(0, abs=1e-12)
    cfg = ForceConfig((), (), (1.0,), (1.0,))
    ref = harmonic_extension(PiecewiseBoundaryData((0.0, 1.0), (-LAMBDA, LAMBDA, 2 * LAMBDA)), 1j)
    assert eta_conditional_mean(_state(cfg), cfg, 1j) == pytest.approx(ref, abs=1e-12)


def test_radial_levelline_orientation_law():
    # clockwise with probability (LAMBDA + a) / (2 LAMBDA)
    a, n = LAMBDA / 2, 4000
    b = sample_radial_levelline_batch(a, n, 9, 1e-3, keep_paths=False)
    p = (LAMBDA + a) / (2 * LAMBDA)
    assert abs(np.mean(b.orientation == 1) - p) < 3 * math.sqrt(p * (1 - p) / n)
    assert np.all(np.isfinite(b.threshold_time))


def test_radial_driver_force_points_bracket_driver():
    p = sample_radial_driver(-0.5, -0.5, horizon=0.5, seed=2)
    gl = p.xi - p.v_left
    gr = p.v_right - p.xi
    assert np.all(gl >= -1e-9) and np.all(gr >= -1e-9)
    assert np.all(gl + gr <= 2 * np.pi + 1e-9)


def test_equivalence_check_contract():
    with pytest.raises(ConfigError):
        chordal_radial_equivalence_check((0.0, 0.0, 0.0), n=50, seed=1)
    rep = chordal_radial_equivalence_check((0.0, 0.0, -2.0), n=50, seed=1, t0=0.0)
    assert rep.passed


def test_eta_martingale_asymmetric_weights():
    cfg = ForceConfig((0.5,), (0.0,), (-0.5,), (0.5,))
    inc, s, _ = eta_increments(cfg, 0.3 + 1j, (0.1, 0.3), 400, 3)
    top = inc[:, -1]
    assert abs(top.mean() / (top.std(ddof=1) / math.sqrt(top.size))) < 3
    ratio = (inc ** 2).mean(axis=0) / s.mean(axis=0)
    assert np.all((ratio > 0.8) & (ratio < 1.2))
