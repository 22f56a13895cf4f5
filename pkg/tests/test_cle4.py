import math

import numpy as np
import pytest

from artifact import cle4, gff
from artifact import levelline_interior as li
from artifact.conformal_core import LAMBDA
from artifact.sle_process import ConfigError


def test_window_length():
    assert cle4.window_length(0.2) == pytest.approx(0.2 / (2 * LAMBDA))
    with pytest.raises(ConfigError):
        cle4.sample_bubble(2 * LAMBDA, seed=1)


def test_bubble_budget():
    with pytest.raises(cle4.BudgetError):
        cle4.sample_bubble(0.005, seed=3, budget=1)


def test_bubble_sample_loop():
    b = cle4.sample_bubble(0.3, seed=4, with_loop=True)
    assert b.attempts >= 1
    assert b.loop.orientation == "cw"
    far = b.loop.points[np.argmax(np.abs(b.loop.points))]
    assert np.angle(far) % (2 * np.pi) == pytest.approx(b.root % (2 * np.pi))


def test_bubble_process_run_contract():
    with pytest.raises(ConfigError):
        cle4.run_bubble_process(0j, seed=1, delta=-1)
    with pytest.raises(ConfigError):
        cle4.run_bubble_process(1.2 + 0j, seed=1)
    run = cle4.run_bubble_process(0.3j, seed=6, eps=0.2)
    assert np.all(np.diff(run.arrival_times) > 0)
    assert np.all(run.arrival_times < run.stop_time)
    assert np.all(run.bubble_sizes > run.delta)
    expect = run.bubble_sizes.sum() + run.final_size - math.log(1 - 0.09)
    assert run.log_cr_decrement == pytest.approx(expect)


def test_bubble_stop_time_mean():
    tau, _ = cle4.bubble_process_statistics(400, seed=2, eps=0.2)
    assert abs(tau.mean() - 1) < 3 / math.sqrt(tau.size)


def test_refinement_violations():
    assert cle4.refinement_violations({1: 2, 2: 3, 3: 6}) == []
    assert cle4.refinement_violations({1: 2, 2: 3, 3: 7}) == [2]


def test_predicted_interior_value_at_unit_time():
    k = 3
    seq = li.UpwardSequence(r=2.0 ** -k, heights=[], orientations=[], stage_times=[], loops=[],
                            N=2 ** (k + 1), T=0.0, status="stopped")
    assert seq.final_boundary_value == pytest.approx(0.0)


def test_interior_average_variance_against_sampler():
    dom = gff.square_domain(24, "zero")
    mask = np.zeros(dom.shape, dtype=bool)
    mask[5:15, 6:18] = True
    sub = gff.LatticeDomain(mask, dom.spacing, np.zeros(dom.shape))
    means = np.array([f.values[mask].mean() for f in gff.sample_dgff(sub, 9, count=4000)])
    mean, sd = cle4.interior_average(gff.sample_dgff(dom, 1), mask)
    assert sd == pytest.approx(means.std(ddof=1), rel=0.05)


def test_timed_loop_continuum():
    z = 0.2 + 0.1j
    tl = cle4.cle4_timed_loop(z, seed=3, k_max=3, with_loop=True)
    assert tl.t_L == pytest.approx(2.0 ** -4 * tl.steps[3])
    assert tl.loop.contains(z)[0]


def test_timed_loop_lattice_levels():
    dom = gff.square_domain(32, "zero")
    f = gff.sample_dgff(dom, 4)
    tl = cle4.cle4_timed_loop(dom.position(16, 16), mode="lattice", field=f, k_max=2)
    assert set(tl.steps) == {1, 2}
    with pytest.raises(ConfigError):
        cle4.cle4_timed_loop(0j, mode="lattice", k_max=2)
