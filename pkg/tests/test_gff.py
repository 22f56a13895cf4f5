import math

import numpy as np
import pytest

from artifact import gff
from artifact.conformal_core import LAMBDA


@pytest.fixture(scope="module")
def pm_fields():
    dom = gff.square_domain(32, "plusminus")
    return dom, gff.sample_dgff(dom, 21, count=20)


def _ends(dom, n):
    cyc = dom.cycle
    mid = (n + 1) // 2
    return cyc.nearest_straight(cyc.index_near((0, mid))), cyc.nearest_straight(cyc.index_near((n + 1, mid)))


def test_zero_boundary_mean():
    dom = gff.square_domain(31, "zero")
    c = (16, 16)
    vals = np.array([f.values[c] for f in gff.sample_dgff(dom, 4, count=1000)])
    sd = math.sqrt(gff.dgff_variance(dom, c) / vals.size)
    assert abs(vals.mean()) < 3 * sd


def test_variance_matches_green_diagonal():
    dom = gff.square_domain(63, "zero")
    c = (32, 32)
    assert gff.dgff_variance(dom, c) == pytest.approx(gff.green_column(dom, c)[c], abs=1e-10)


def test_sampler_covariance():
    dom = gff.square_domain(7, "zero")
    fs = np.array([f.values for f in gff.sample_dgff(dom, 8, count=40000)])
    a, b = (4, 4), (4, 6)
    emp = np.mean(fs[:, a[0], a[1]] * fs[:, b[0], b[1]])
    assert emp == pytest.approx(gff.green_column(dom, a)[b], rel=0.05)


def test_disconnected_mask_rejected():
    mask = np.zeros((7, 7), dtype=bool)
    mask[1:3, 1:3] = True
    mask[4:6, 4:6] = True
    with pytest.raises(gff.GeometryError):
        gff.LatticeDomain(mask, 0.1, np.zeros((7, 7)))


def test_circle_average_constant_and_linear():
    dom = gff.square_domain(63, 1.5)
    f = gff.DiscreteField(gff.discrete_harmonic_extension(dom), dom)
    z = dom.position(32, 32)
    assert gff.circle_average(f, z, 0.2) == pytest.approx(1.5)
    rr, cc = np.indices(dom.shape)
    lin = dom.position(rr, cc).real * 2 - dom.position(rr, cc).imag
    g = gff.DiscreteField(gff.discrete_harmonic_extension(dom, lin), dom)
    assert np.allclose(g.values[dom.mask], lin[dom.mask])
    assert gff.circle_average(g, z, 0.2) == pytest.approx(lin[32, 32], abs=1e-12)
    with pytest.raises(gff.GeometryError):
        gff.circle_average(g, z, 0.6)


def test_harmonic_plusminus_interface_is_straight():
    n = 128
    dom = gff.square_domain(n, "plusminus")
    f = gff.DiscreteField(gff.discrete_harmonic_extension(dom), dom)
    cyc = dom.cycle
    # junctions where the boundary sign flips, bottom and top
    flips = [i for i in range(len(cyc.rows)) if cyc.straight(i) and cyc.junction_point(i)[0] == n + 1]
    x, y = sorted(flips, key=lambda i: cyc.junction_point(i)[1])
    path = gff.extract_level_line(f, x, y)
    pts = path.points(dom)
    assert np.allclose(pts.real, 0.5)
    assert gff.interface_sign_check(f, path)
    w = gff.driving_function_of_interface(path, dom)
    assert np.max(np.abs(w.values)) < 0.05


def test_reversibility_and_sign_rule(pm_fields):
    dom, fields = pm_fields
    x, y = _ends(dom, 32)
    for f in fields:
        a = gff.extract_level_line(f, x, y)
        assert a.status == "exit"
        assert gff.interface_sign_check(f, a)
        assert a.edge_set() == gff.extract_level_line(-f, y, x).edge_set()


def test_monotone_in_height(pm_fields):
    dom, fields = pm_fields
    x, y = _ends(dom, 32)
    for f in fields:
        lo = gff.right_region(dom, gff.extract_level_line(f, x, y, -LAMBDA / 2))
        hi = gff.right_region(dom, gff.extract_level_line(f, x, y, LAMBDA / 2))
        assert not np.any(lo & ~hi)


def test_height_varying_config_errors(pm_fields):
    dom, fields = pm_fields
    x, y = _ends(dom, 32)
    with pytest.raises(gff.HeightConfigError):
        gff.extract_height_varying(fields[0], x, y, [-1.0, 1.0 + 2 * LAMBDA], [5])
    with pytest.raises(gff.HeightConfigError):
        gff.extract_height_varying(fields[0], x, y, [0.0, 0.1, 0.2], [5])
    p = gff.extract_height_varying(fields[0], x, y, [0.0, 0.0], [10])
    assert p.edge_set() == gff.extract_level_line(fields[0], x, y).edge_set()


def test_walk_to_interior_encloses_target():
    dom = gff.square_domain(48, "zero")
    f = gff.sample_dgff(dom, 2)
    w = gff.walk_to_interior(f, (24, 24), 0.0)
    assert w.component[24, 24]
    assert w.orientation in (1, -1)
