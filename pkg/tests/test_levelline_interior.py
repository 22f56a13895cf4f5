import math

import numpy as np
import pytest

from artifact import gff
from artifact import levelline_interior as li
from artifact.conformal_core import LAMBDA
from artifact.sle_process import ConfigError


def _ptest(k, n, p):
    assert abs(k / n - p) < 3 * math.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("u,p", [(0.0, 0.5), (LAMBDA / 2, 0.75)])
def test_orientation_frequency(u, p):
    # clockwise loops carry +LAMBDA inside: P = (LAMBDA + u) / (2 LAMBDA)
    cw, n = li.orientation_frequency(u, 3000, 5)
    _ptest(cw, n, p)


def test_inadmissible_height():
    with pytest.raises(li.NoLevelLineError):
        li.level_line_to_interior("continuum", u=LAMBDA, seed=1)


def test_continuum_line_and_loop():
    z = 0.2 - 0.1j
    line = li.level_line_to_interior("continuum", z=z, u=0.3, seed=4)
    assert line.orientation in ("cw", "ccw")
    assert line.loop is not None
    assert line.loop.contains(z)[0]
    assert line.time_label == pytest.approx(line.threshold_time - math.log(1 - abs(z) ** 2), rel=1e-9)
    sign = 1 if line.orientation == "cw" else -1
    assert sign * line.loop.signed_area() < 0


def test_lattice_line_conditional_mean():
    dom = gff.square_domain(48, "zero")
    f = gff.sample_dgff(dom, 7)
    line = li.level_line_to_interior("lattice", z=dom.position(24, 24), field=f)
    assert line.conditional_mean == pytest.approx(LAMBDA if line.orientation == "cw" else -LAMBDA)
    assert line.loop.contains(dom.position(24, 24))[0]


def test_transition_step_near_one():
    N, _ = li.upward_statistics(0.98, 2000, 3)
    _ptest(np.sum(N == 1), N.size, 0.49)


def test_upward_continuum_nesting():
    seq = li.upward_sequence(0.5, 0.1j, seed=8, with_loops=True)
    assert seq.N == len(seq.loops)
    assert seq.orientations[-1] == "cw" and all(o == "ccw" for o in seq.orientations[:-1])
    assert li.nesting_violations(seq) == 0
    assert seq.final_boundary_value == pytest.approx(2 * LAMBDA - seq.N * 0.5 * LAMBDA)
    labels = [lp.time_label for lp in seq.loops]
    assert np.all(np.diff(labels) > 0)


def test_upward_lattice_nesting():
    dom = gff.square_domain(64, "zero")
    f = gff.sample_dgff(dom, 12)
    seq = li.upward_sequence(0.5, dom.position(32, 32), mode="lattice", field=f)
    assert li.nesting_violations(seq) == 0
    assert all(c[32, 32] for c in seq.components)


def test_exploration_tree_targets():
    dom = gff.square_domain(48, "zero")
    f = gff.sample_dgff(dom, 5)
    with pytest.raises(ConfigError):
        li.exploration_tree(0.5, [0.5 + 0.5j, 0.5 + 0.5j], field=f)
    a, b = dom.position(24, 24), dom.position(24, 25)
    tree = li.exploration_tree(0.5, [a, b], field=f)
    sa, sb = tree.sequences
    m = tree.shared[(0, 1)]
    assert sa.components[:m] and all(np.array_equal(x, y) for x, y in zip(sa.components[:m], sb.components[:m]))
    if m == len(sa.components) == len(sb.components):
        assert sa.N == sb.N


def test_cr_linearity_small_heights_shrink():
    rep = li.cr_linearity_probe([0.05 - LAMBDA, 0.4 - LAMBDA], seed=2, n=3000)
    small, big = rep.details["mean"]
    assert 0 < small < big / 4
