"""Static SVG renderings of traces, fields and loops."""
from __future__ import annotations

import io
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "levelline",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.linewidth": 0.6,
    "lines.linewidth": 0.9,
})

ORIENTATION_COLORS = {"cw": "tab:red", "ccw": "tab:blue"}


def _svg(fig, header: dict | None) -> str:
    buf = io.StringIO()
    meta = {"Date": None, "Description": json.dumps(header or {}, sort_keys=True, default=str)}
    fig.savefig(buf, format="svg", metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def trace_svg(times, driver, traces, header=None) -> str:
    """Driver paths on the left, traces in the upper half-plane on the right."""
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(8, 3.4))
    for w in driver:
        a0.plot(times, w)
    a0.set_xlabel("t")
    a0.set_ylabel("W(t)")
    for pts in traces:
        a1.plot(pts.real, pts.imag)
    a1.axhline(0, color="k", lw=0.5)
    a1.set_aspect("equal", adjustable="datalim")
    a1.set_title("trace")
    return _svg(fig, header)


def field_svg(field, paths=(), header=None) -> str:
    """Heat map of a lattice field with dual-lattice paths on top."""
    dom = field.domain
    rows, cols = dom.shape
    h = dom.spacing
    x0, y0 = dom.origin.real, dom.origin.imag
    extent = (x0 - h / 2, x0 + (cols - 0.5) * h, y0 - h / 2, y0 + (rows - 0.5) * h)
    fig, ax = plt.subplots(figsize=(4.6, 4))
    vals = np.where(dom.mask, field.values, np.nan)
    im = ax.imshow(vals, origin="lower", extent=extent, cmap="RdBu_r", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.8)
    for p in paths:
        pts = p.points(dom)
        ax.plot(pts.real, pts.imag, color="k", lw=0.8)
    ax.set_aspect("equal")
    return _svg(fig, header)


def loops_svg(loops, targets=(), header=None, disc: bool = True) -> str:
    """Loops coloured by orientation, or by time label when every loop carries one."""
    fig, ax = plt.subplots(figsize=(4.4, 4.4))
    if disc:
        th = np.linspace(0, 2 * np.pi, 400)
        ax.plot(np.cos(th), np.sin(th), color="0.4", lw=0.6)
    labels = [lp.time_label for lp in loops]
    use_time = len(loops) > 1 and all(np.isfinite(labels))
    if use_time:
        norm = plt.Normalize(min(labels), max(labels))
        cmap = plt.get_cmap("viridis")
    for lp in loops:
        pts = np.append(lp.points, lp.points[:1])
        color = cmap(norm(lp.time_label)) if use_time else ORIENTATION_COLORS.get(lp.orientation, "k")
        ax.plot(pts.real, pts.imag, color=color)
    for t in targets:
        ax.plot([t.real], [t.imag], "k+", ms=6)
    ax.set_aspect("equal")
    return _svg(fig, header)
