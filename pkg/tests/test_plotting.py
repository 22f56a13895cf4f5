import numpy as np

from artifact import gff, plotting
from artifact.levelline_interior import OrientedLoop


def test_svgs_are_deterministic_and_carry_header():
    th = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    loops = [OrientedLoop(0.5 * np.exp(1j * th), "ccw", 0.7, 0j), OrientedLoop(0.2 * np.exp(-1j * th), "cw", 1.6, 0j)]
    a = plotting.loops_svg(loops, [0j], {"seed": 3})
    assert a == plotting.loops_svg(loops, [0j], {"seed": 3})
    assert "seed" in a and a.lstrip().startswith("<?xml")
    dom = gff.square_domain(8, "plusminus")
    s = plotting.field_svg(gff.sample_dgff(dom, 1), header={"k": 1})
    assert "<svg" in s
    t = np.linspace(0, 1, 11)
    assert "<svg" in plotting.trace_svg(t, [np.sin(t)], [t + 1j * t])
