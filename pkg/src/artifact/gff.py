"""Discrete Gaussian free field on square-lattice domains and its level lines.

Sites live on the integer grid; site (r, c) sits at ``origin + spacing*(c + i r)``.
Level lines run on the dual lattice.  Internally everything is expressed in
doubled coordinates (X, Y) = (2c, 2r), so dual vertices have odd coordinates and
dual edge midpoints have one odd and one even coordinate.

Covariance normalization: 2*pi times the inverse of the unit graph Laplacian, so
the variance near the centre grows like log(1/spacing) and the continuum height
gap is LAMBDA = pi/2.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit
from scipy import ndimage
from scipy.fft import idstn
from scipy.special import ellipk, hyp2f1

from .conformal_core import LAMBDA
from .loewner import DriverPath, chordal_driver_from_trace
from .sle_process import make_rng


class GeometryError(ValueError):
    pass


class ExtractionError(RuntimeError):
    pass


class HeightConfigError(ValueError):
    pass


# walker exit codes
EXIT, CLOSED, CAP, STUCK, BAD = 0, 1, 2, 3, 4
STATUS_NAMES = {EXIT: "exit", CLOSED: "closed", CAP: "cap", STUCK: "stuck", BAD: "inconsistent"}


@dataclass(frozen=True, eq=False)
class LatticeDomain:
    """Interior sites ``mask`` of a grid; every site off the mask is boundary or exterior."""

    mask: np.ndarray
    spacing: float
    boundary_values: np.ndarray
    origin: complex = 0j

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        bv = np.asarray(self.boundary_values, dtype=float)
        if bv.shape != mask.shape:
            raise GeometryError("boundary_values must have the grid shape")
        if mask.any() and (mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any()):
            raise GeometryError("interior sites need all four neighbours inside the grid")
        _, ncomp = ndimage.label(mask)
        if ncomp != 1:
            raise GeometryError(f"interior must be connected and non-empty, found {ncomp} components")
        mask.setflags(write=False)
        bv = np.where(mask, 0.0, bv)
        bv.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "boundary_values", bv)

    @property
    def shape(self):
        return self.mask.shape

    def position(self, r, c):
        return self.origin + self.spacing * (np.asarray(c) + 1j * np.asarray(r))

    def site_of(self, z: complex) -> tuple[int, int]:
        w = (complex(z) - self.origin) / self.spacing
        return int(round(w.imag)), int(round(w.real))

    def doubled_to_complex(self, xy):
        xy = np.asarray(xy, dtype=float)
        return self.origin + self.spacing * 0.5 * (xy[..., 0] + 1j * xy[..., 1])

    @cached_property
    def cycle(self) -> "BoundaryCycle":
        return trace_boundary_cycle(self.mask)

    @cached_property
    def is_rectangle(self) -> bool:
        rows, cols = np.nonzero(self.mask)
        box = (rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1)
        return box == rows.size

    def with_boundary(self, values) -> "LatticeDomain":
        return LatticeDomain(self.mask, self.spacing, values, self.origin)


def rectangle_domain(rows: int, cols: int, boundary="zero", spacing: float | None = None) -> LatticeDomain:
    """rows x cols interior sites plus a one-site ring; the ring sits on [0,1]-scaled edges.

    ``boundary`` is "zero", "plusminus" (-LAMBDA on the left half, +LAMBDA on the
    right half) or a constant.
    """
    if rows < 1 or cols < 1:
        raise GeometryError("need at least one interior site")
    h = spacing if spacing is not None else 1.0 / (max(rows, cols) + 1)
    mask = np.zeros((rows + 2, cols + 2), dtype=bool)
    mask[1:-1, 1:-1] = True
    if isinstance(boundary, str) and boundary == "zero":
        bv = np.zeros(mask.shape)
    elif isinstance(boundary, str) and boundary == "plusminus":
        c = np.arange(cols + 2)
        centre = (cols + 1) / 2
        row = np.where(c < centre, -LAMBDA, np.where(c > centre, LAMBDA, 0.0))
        bv = np.broadcast_to(row, mask.shape).copy()
    elif isinstance(boundary, (int, float)):
        bv = np.full(mask.shape, float(boundary))
    else:
        raise GeometryError(f"unknown boundary spec {boundary!r}")
    return LatticeDomain(mask, h, bv)


def square_domain(n: int, boundary="zero") -> LatticeDomain:
    """n x n interior sites approximating the unit square [0, 1]^2."""
    return rectangle_domain(n, n, boundary)


def disc_domain(radius_sites: int, boundary=0.0) -> LatticeDomain:
    """Sites strictly inside the unit disc at spacing 1/radius_sites, centred at 0."""
    m = int(radius_sites)
    size = 2 * m + 3
    idx = np.arange(size) - (m + 1)
    xx, yy = np.meshgrid(idx, idx)
    mask = xx ** 2 + yy ** 2 < m ** 2
    h = 1.0 / m
    bv = np.full(mask.shape, float(boundary))
    return LatticeDomain(mask, h, bv, origin=complex(-(m + 1) * h, -(m + 1) * h))


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Field values on the whole grid: sampled on the mask, boundary values elsewhere."""

    values: np.ndarray
    domain: LatticeDomain

    def __neg__(self):
        return DiscreteField(-self.values, self.domain.with_boundary(-self.domain.boundary_values))

    def at(self, z: complex) -> float:
        r, c = self.domain.site_of(z)
        return float(self.values[r, c])


# ---------------------------------------------------------------- sampling


def laplacian(domain: LatticeDomain):
    """Unit graph Laplacian on the interior sites (Dirichlet outside), with the site index map."""
    mask = domain.mask
    index = -np.ones(mask.shape, dtype=np.int64)
    rows, cols = np.nonzero(mask)
    n = rows.size
    index[rows, cols] = np.arange(n)
    i_list, j_list = [np.arange(n)], [np.arange(n)]
    v_list = [np.full(n, 4.0)]
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = index[rows + dr, cols + dc]
        ok = nb >= 0
        i_list.append(np.arange(n)[ok])
        j_list.append(nb[ok])
        v_list.append(-np.ones(ok.sum()))
    mat = sp.csc_matrix((np.concatenate(v_list), (np.concatenate(i_list), np.concatenate(j_list))), shape=(n, n))
    return mat, index


def discrete_harmonic_extension(domain: LatticeDomain, values=None) -> np.ndarray:
    """Solve the discrete Dirichlet problem; returns a full grid equal to ``values`` off the mask."""
    vals = domain.boundary_values if values is None else np.asarray(values, dtype=float)
    mat, index = laplacian(domain)
    rows, cols = np.nonzero(domain.mask)
    rhs = np.zeros(rows.size)
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nr, nc = rows + dr, cols + dc
        off = index[nr, nc] < 0
        rhs[off] += vals[nr[off], nc[off]]
    out = np.where(domain.mask, 0.0, vals).astype(float)
    if np.any(rhs):
        out[rows, cols] = spla.spsolve(mat, rhs)
    return out


def _box(mask):
    rows, cols = np.nonzero(mask)
    return rows.min(), rows.max() + 1, cols.min(), cols.max() + 1


def _dst_eigenvalues(nr, nc):
    kr = 2 - 2 * np.cos(np.pi * np.arange(1, nr + 1) / (nr + 1))
    kc = 2 - 2 * np.cos(np.pi * np.arange(1, nc + 1) / (nc + 1))
    return kr[:, None] + kc[None, :]


def _sample_box(nr, nc, rng, count):
    scale = np.sqrt(2 * np.pi / _dst_eigenvalues(nr, nc))
    xi = rng.standard_normal((count, nr, nc))
    return idstn(xi * scale, type=1, axes=(1, 2), norm="ortho")


def sample_dgff(domain: LatticeDomain, seed, count: int | None = None):
    """Exact DGFF sample(s): zero-boundary part plus the discrete harmonic extension of the data.

    Rectangular interiors use the sine basis directly.  Other shapes are sampled on
    their bounding box and corrected by the discrete harmonic extension of the box
    sample's values on the domain boundary (domain Markov property).
    """
    rng = make_rng(seed)
    k = 1 if count is None else int(count)
    r0, r1, c0, c1 = _box(domain.mask)
    box = _sample_box(r1 - r0, c1 - c0, rng, k)
    fields = np.zeros((k,) + domain.shape)
    fields[:, r0:r1, c0:c1] = box
    if not domain.is_rectangle:
        mat, index = laplacian(domain)
        lu = spla.splu(mat)
        rows, cols = np.nonzero(domain.mask)
        for j in range(k):
            f = fields[j]
            rhs = np.zeros(rows.size)
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nr, nc = rows + dr, cols + dc
                off = index[nr, nc] < 0
                rhs[off] += f[nr[off], nc[off]]
            g = np.zeros(domain.shape)
            g[rows, cols] = f[rows, cols] - lu.solve(rhs)
            fields[j] = g
    mean = discrete_harmonic_extension(domain)
    fields = np.where(domain.mask, fields + mean, domain.boundary_values)
    out = [DiscreteField(f, domain) for f in fields]
    return out[0] if count is None else out


def dgff_variance(domain: LatticeDomain, site) -> float:
    """Variance of the sampler at a site of a rectangular domain, from the sine-basis spectrum."""
    if not domain.is_rectangle:
        raise GeometryError("spectral variance is available for rectangular interiors only")
    r0, r1, c0, c1 = _box(domain.mask)
    nr, nc = r1 - r0, c1 - c0
    i, j = site[0] - r0 + 1, site[1] - c0 + 1
    phi_r = np.sqrt(2 / (nr + 1)) * np.sin(np.pi * np.arange(1, nr + 1) * i / (nr + 1))
    phi_c = np.sqrt(2 / (nc + 1)) * np.sin(np.pi * np.arange(1, nc + 1) * j / (nc + 1))
    return float(np.sum(2 * np.pi * np.outer(phi_r ** 2, phi_c ** 2) / _dst_eigenvalues(nr, nc)))


def green_column(domain: LatticeDomain, site) -> np.ndarray:
    """Covariance of every site with ``site``: 2 pi L^{-1} e_site by a sparse solve."""
    mat, index = laplacian(domain)
    e = np.zeros(mat.shape[0])
    e[index[site]] = 2 * np.pi
    col = spla.spsolve(mat, e)
    out = np.zeros(domain.shape)
    rows, cols = np.nonzero(domain.mask)
    out[rows, cols] = col
    return out


def circle_average(field: DiscreteField, z: complex, eps: float) -> float:
    return float(circle_average_many([field], z, eps)[0])


def circle_average_many(fields, z: complex, eps: float) -> np.ndarray:
    """Average over the one-site-thick shell eps - h/2 <= |p - z| < eps + h/2."""
    dom = fields[0].domain
    h = dom.spacing
    if eps < 4 * h:
        raise GeometryError(f"radius {eps} is below four lattice spacings ({4 * h})")
    rr, cc = np.indices(dom.shape)
    dist = np.abs(dom.position(rr, cc) - complex(z))
    disc = dist < eps + h
    inside_or_edge = dom.mask | ndimage.binary_dilation(dom.mask)
    if np.any(disc & ~inside_or_edge) or np.any(disc & ~dom.mask & (dist < eps - h / 2)):
        raise GeometryError("the averaging circle leaves the domain")
    shell = (dist >= eps - h / 2) & (dist < eps + h / 2)
    return np.array([f.values[shell].mean() for f in fields])


# ---------------------------------------------------------------- boundary cycle


@dataclass(frozen=True, eq=False)
class BoundaryCycle:
    """Exterior sites bordering the domain, one entry per visit, counterclockwise.

    A site reached twice (across a one-site fjord, say) gets two entries, and
    forced signs are stored per entry.  ``edges`` lists the boundary edges as
    (inside row, inside col, outside row, outside col, entry) and ``occ`` maps
    each dual vertex and quadrant (0..3, bit 0 east, bit 1 south) to the entry
    whose sign the walker reads there, -1 off the boundary.
    """

    rows: np.ndarray
    cols: np.ndarray
    vertices: np.ndarray
    edges: np.ndarray
    occ: np.ndarray

    def __len__(self):
        return self.rows.size

    def straight(self, i: int) -> bool:
        """True when sites i-1 and i share a lattice edge, so a level line can start or end between them."""
        m = len(self)
        a, b = (i - 1) % m, i % m
        return abs(int(self.rows[a]) - int(self.rows[b])) + abs(int(self.cols[a]) - int(self.cols[b])) == 1

    @cached_property
    def straight_flags(self) -> np.ndarray:
        prev = np.roll(np.arange(len(self)), 1)
        return (np.abs(self.rows - self.rows[prev]) + np.abs(self.cols - self.cols[prev])) == 1

    def nearest_straight(self, i: int) -> int:
        m = len(self)
        flags = self.straight_flags
        for off in range(m):
            for j in (i + off, i - off):
                if flags[j % m]:
                    return j % m
        raise GeometryError("boundary cycle has no straight junction")

    def index_near(self, rc) -> int:
        d = (self.rows - rc[0]) ** 2 + (self.cols - rc[1]) ** 2
        return int(np.argmin(d))

    def junction_point(self, i: int):
        """Doubled coordinates of the inner dual vertex of the junction between sites i-1 and i, with the inward heading."""
        m = len(self)
        a, b = (i - 1) % m, i % m
        lx, ly = 2 * int(self.cols[a]), 2 * int(self.rows[a])
        rx, ry = 2 * int(self.cols[b]), 2 * int(self.rows[b])
        dx, dy = (rx - lx) // 2, (ry - ly) // 2
        hx, hy = -dy, dx
        mx, my = (lx + rx) // 2, (ly + ry) // 2
        return mx + hx, my + hy, hx, hy

    def arc_signs(self, start: int, target: int) -> np.ndarray:
        """Forced signs per entry: +1 on start..target-1 (ccw), -1 elsewhere."""
        m = len(self)
        pos = (np.arange(m) - start) % m < (target - start) % m
        return np.where(pos, 1, -1).astype(np.int8)


def _quadrant(X, Y, r, c):
    return (2 * c > X).astype(np.int64) + 2 * (2 * r > Y).astype(np.int64)


def trace_boundary_cycle(mask: np.ndarray) -> BoundaryCycle:
    inside = np.ascontiguousarray(mask, dtype=np.uint8)
    R, C = mask.shape
    rows, cols = np.nonzero(mask)
    k = np.lexsort((cols, rows))[0]
    r0, c0 = int(rows[k]), int(cols[k])
    cap = 8 * mask.size + 8
    out = np.zeros((cap, 2), dtype=np.int64)
    verts = np.zeros((cap, 2), dtype=np.int64)
    n = _trace_kernel(inside, r0, c0, out, verts)
    v = verts[:n]
    w = np.roll(v, -1, axis=0)
    d = (w - v) // 2
    mid = (v + w) // 2
    ox, oy = mid[:, 0] + d[:, 1], mid[:, 1] - d[:, 0]
    ix, iy = mid[:, 0] - d[:, 1], mid[:, 1] + d[:, 0]
    orr, oc = oy // 2, ox // 2
    new = (orr != np.roll(orr, 1)) | (oc != np.roll(oc, 1))
    first = int(np.argmax(new))
    roll = lambda a: np.roll(a, -first, axis=0)
    v, w, orr, oc, new = roll(v), roll(w), roll(orr), roll(oc), roll(new)
    ir, ic = roll(iy // 2), roll(ix // 2)
    entry = np.cumsum(new) - 1
    edges = np.column_stack([ir, ic, orr, oc, entry]).astype(np.int64)
    occ = -np.ones((R + 1, C + 1, 4), dtype=np.int64)
    for P in (v, w):
        occ[(P[:, 1] + 1) // 2, (P[:, 0] + 1) // 2, _quadrant(P[:, 0], P[:, 1], orr, oc)] = entry
    # diagonal exterior sites at convex corners read the entry of the incoming edge
    prev_entry = np.roll(entry, 1)
    for q, (sx, sy) in enumerate(((-1, -1), (1, -1), (-1, 1), (1, 1))):
        r, c = (v[:, 1] + sy) // 2, (v[:, 0] + sx) // 2
        vi, vj = (v[:, 1] + 1) // 2, (v[:, 0] + 1) // 2
        hole = (occ[vi, vj, q] < 0) & ~mask[r, c]
        occ[vi[hole], vj[hole], q] = prev_entry[hole]
    return BoundaryCycle(orr[new].copy(), oc[new].copy(), v.copy(), edges, occ)


@njit(cache=True)
def _trace_kernel(inside, r0, c0, out, verts):
    # walk with the domain on the left; saddles turn left so diagonal sites stay apart
    X, Y = 2 * c0 + 1, 2 * r0 - 1
    dX, dY = 1, 0
    X0, Y0 = X, Y
    n = 0
    out[n, 0] = r0 - 1
    out[n, 1] = c0
    verts[n, 0] = X
    verts[n, 1] = Y
    n += 1
    for _ in range(out.shape[0] - 1):
        alx, aly = X + dX - dY, Y + dY + dX
        arx, ary = X + dX + dY, Y + dY - dX
        a_out = inside[aly // 2, alx // 2] == 0
        b_out = inside[ary // 2, arx // 2] == 0
        if not a_out and not b_out:
            ndx, ndy = dY, -dX
        elif not a_out and b_out:
            ndx, ndy = dX, dY
        else:
            ndx, ndy = -dY, dX
        mx, my = X + ndx, Y + ndy
        rx, ry = mx + ndy, my - ndx
        X, Y = X + 2 * ndx, Y + 2 * ndy
        dX, dY = ndx, ndy
        if X == X0 and Y == Y0 and dX == 1 and dY == 0:
            break
        out[n, 0] = ry // 2
        out[n, 1] = rx // 2
        verts[n, 0] = X
        verts[n, 1] = Y
        n += 1
    return n


# ---------------------------------------------------------------- walker


@njit(cache=True)
def _forced(occ, osign, X, Y, sx, sy):
    k = occ[(Y + 1) // 2, (X + 1) // 2, (1 if sx > X else 0) + (2 if sy > Y else 0)]
    return 0 if k < 0 else osign[k]


@njit(cache=True)
def _sign(field, u, inside, occ, osign, X, Y, sx, sy):
    r, c = sy // 2, sx // 2
    if inside[r, c]:
        return 1 if field[r, c] + u >= 0.0 else -1
    return _forced(occ, osign, X, Y, sx, sy)


@njit(cache=True)
def _val(field, u, lam, inside, occ, osign, X, Y, sx, sy):
    r, c = sy // 2, sx // 2
    if inside[r, c]:
        return field[r, c] + u
    return _forced(occ, osign, X, Y, sx, sy) * lam + u


@njit(cache=True)
def _turn(s_al, s_ar, avg, dX, dY):
    if s_al < 0 and s_ar < 0:
        return dY, -dX
    if s_al < 0 and s_ar > 0:
        return dX, dY
    if s_al > 0 and s_ar > 0:
        return -dY, dX
    if avg > 0.0:
        return -dY, dX
    return dY, -dX


@njit(cache=True)
def _csign(field, u, inside, cstamp, gen, side, sx, sy):
    r, c = sy // 2, sx // 2
    if inside[r, c] and cstamp[r, c] == gen:
        return 1 if field[r, c] + u >= 0.0 else -1
    return side


@njit(cache=True)
def _cval(field, u, lam, inside, cstamp, gen, side, sx, sy):
    r, c = sy // 2, sx // 2
    if inside[r, c] and cstamp[r, c] == gen:
        return field[r, c] + u
    return side * lam + u


@njit(cache=True)
def _component(inside, blk_h, blk_v, zr, zc, cstamp, gen, stack):
    top = 0
    stack[0, 0] = zr
    stack[0, 1] = zc
    cstamp[zr, zc] = gen
    size = 1
    while top >= 0:
        r = stack[top, 0]
        c = stack[top, 1]
        top -= 1
        for k in range(4):
            if k == 0:
                nr, nc, ok = r, c + 1, blk_h[r, c] == 0
            elif k == 1:
                nr, nc, ok = r, c - 1, blk_h[r, c - 1] == 0
            elif k == 2:
                nr, nc, ok = r + 1, c, blk_v[r, c] == 0
            else:
                nr, nc, ok = r - 1, c, blk_v[r - 1, c] == 0
            if ok and inside[nr, nc] and cstamp[nr, nc] != gen:
                cstamp[nr, nc] = gen
                size += 1
                top += 1
                stack[top, 0] = nr
                stack[top, 1] = nc
    return size


@njit(cache=True)
def _split(inside, blk_h, blk_v, cstamp, gen, mark, tag, qa, qb, ar, ac, br, bc):
    """Interleaved searches inside the component from both sides of a freshly blocked edge.

    Returns 0 when the two sides still meet, otherwise +-n for a pocket of n
    sites found from side a (+) or side b (-); the pocket sites sit in qa or qb.
    """
    mark[ar, ac] = tag
    mark[br, bc] = tag + 1
    qa[0, 0], qa[0, 1] = ar, ac
    qb[0, 0], qb[0, 1] = br, bc
    ha, na, hb, nb = 0, 1, 0, 1
    while True:
        for side in range(2):
            if side == 0:
                if ha == na:
                    return na
                r, c = qa[ha, 0], qa[ha, 1]
                ha += 1
                mine, other = tag, tag + 1
            else:
                if hb == nb:
                    return -nb
                r, c = qb[hb, 0], qb[hb, 1]
                hb += 1
                mine, other = tag + 1, tag
            for k in range(4):
                if k == 0:
                    nr, nc, ok = r, c + 1, blk_h[r, c] == 0
                elif k == 1:
                    nr, nc, ok = r, c - 1, blk_h[r, c - 1] == 0
                elif k == 2:
                    nr, nc, ok = r + 1, c, blk_v[r, c] == 0
                else:
                    nr, nc, ok = r - 1, c, blk_v[r - 1, c] == 0
                if not ok or not inside[nr, nc] or cstamp[nr, nc] != gen:
                    continue
                if mark[nr, nc] == other:
                    return 0
                if mark[nr, nc] != mine:
                    mark[nr, nc] = mine
                    if side == 0:
                        qa[na, 0], qa[na, 1] = nr, nc
                        na += 1
                    else:
                        qb[nb, 0], qb[nb, 1] = nr, nc
                        nb += 1


@njit(cache=True)
def _seen_by_component(edges, blk_h, blk_v, cstamp, gen, seen):
    seen[:] = False
    count = 0
    for j in range(edges.shape[0]):
        ir, ic, orr, oc, k = edges[j, 0], edges[j, 1], edges[j, 2], edges[j, 3], edges[j, 4]
        if seen[k] or cstamp[ir, ic] != gen:
            continue
        if ir == orr:
            blocked = blk_h[ir, min(ic, oc)] != 0
        else:
            blocked = blk_v[min(ir, orr), ic] != 0
        if not blocked:
            seen[k] = True
            count += 1
    return count


@njit(cache=True)
def _retarget(straight, seen, osign, target, side):
    """Keep the target if still seen; otherwise place a new one mid-run and reassign the signs.

    Entries the target's component no longer sees take ``side``, the sign of
    the far side of the tip, so the walk turns into the component.  When the run
    has no straight junction left the whole run takes ``side`` as well and the
    walk proceeds without a boundary target (returns -1).
    """
    m = seen.shape[0]
    if target >= 0 and seen[target % m] and seen[(target - 1) % m]:
        return target
    for i in range(m):
        if not seen[i]:
            osign[i] = side
    if target < 0:
        return target
    best_a, best_len = -1, 0
    for i in range(m):
        if seen[i] and not seen[(i - 1) % m]:
            ln = 0
            while ln < m and seen[(i + ln) % m]:
                ln += 1
            if ln > best_len:
                best_a, best_len = i, ln
    if best_a < 0:
        return target
    a = best_a
    mid = best_len // 2
    new = -1
    for off in range(best_len):
        for k in (mid + off, mid - off):
            if 1 <= k <= best_len - 1 and straight[(a + k) % m]:
                new = k
                break
        if new >= 0:
            break
    for k in range(best_len):
        osign[(a + k) % m] = side if new < 0 else (1 if k < new else -1)
    if new < 0:
        return -1
    return (a + new) % m


@njit(cache=True)
def _walk_kernel(field, heights, switch, lam, inside, occ, osign, x0, y0, dx0, dy0,
                 interior, zr, zc, edges, straight, target,
                 out, blk_h, blk_v, vstamp, cstamp, stack, queue, mark, seen):
    """Deterministic dual-lattice walk keeping negative sites on the left.

    Returns (status, number of vertices, orientation, final target, component size).
    Orientation is +1 when the closing edge has the target's component on its
    left (counterclockwise loop) and -1 when it is on the right.
    """
    max_steps = out.shape[0] - 1
    X, Y, dX, dY = x0, y0, dx0, dy0
    n = 0
    out[0, 0] = X
    out[0, 1] = Y
    vstamp[(Y + 1) // 2, (X + 1) // 2] = 1
    hk = 0
    u = heights[0]
    check = heights.shape[0] == 1
    gen = 1
    tag = 1
    size = 0
    if interior:
        size = _component(inside, blk_h, blk_v, zr, zc, cstamp, gen, stack)
    pending = False
    pend_side = 1
    for step in range(max_steps):
        while hk + 1 < heights.shape[0] and step >= switch[hk]:
            hk += 1
            u = heights[hk]
        lx, ly = X - dX - dY, Y - dY + dX
        rx, ry = X - dX + dY, Y - dY - dX
        alx, aly = X + dX - dY, Y + dY + dX
        arx, ary = X + dX + dY, Y + dY - dX
        s_al = _sign(field, u, inside, occ, osign, X, Y, alx, aly)
        s_ar = _sign(field, u, inside, occ, osign, X, Y, arx, ary)
        if s_al == 0 or s_ar == 0:
            return BAD, n + 1, 0, target, 0
        avg = 0.0
        if s_al != s_ar:
            avg = (_val(field, u, lam, inside, occ, osign, X, Y, lx, ly)
                   + _val(field, u, lam, inside, occ, osign, X, Y, rx, ry)
                   + _val(field, u, lam, inside, occ, osign, X, Y, alx, aly)
                   + _val(field, u, lam, inside, occ, osign, X, Y, arx, ary))
        ndx, ndy = _turn(s_al, s_ar, avg, dX, dY)
        mx, my = X + ndx, Y + ndy
        elx, ely = mx - ndy, my + ndx
        erx, ery = mx + ndy, my - ndx
        lr, lc, rr, rc = ely // 2, elx // 2, ery // 2, erx // 2
        forced = False
        if pending and not ((inside[lr, lc] and cstamp[lr, lc] == gen) or (inside[rr, rc] and cstamp[rr, rc] == gen)):
            # the rule would leave the target's component through a corner contact:
            # everything outside the component reads as the far side of the tip
            s_al = _csign(field, u, inside, cstamp, gen, pend_side, alx, aly)
            s_ar = _csign(field, u, inside, cstamp, gen, pend_side, arx, ary)
            avg = (_cval(field, u, lam, inside, cstamp, gen, pend_side, lx, ly)
                   + _cval(field, u, lam, inside, cstamp, gen, pend_side, rx, ry)
                   + _cval(field, u, lam, inside, cstamp, gen, pend_side, alx, aly)
                   + _cval(field, u, lam, inside, cstamp, gen, pend_side, arx, ary))
            ndx, ndy = _turn(s_al, s_ar, avg, dX, dY)
            mx, my = X + ndx, Y + ndy
            elx, ely = mx - ndy, my + ndx
            erx, ery = mx + ndy, my - ndx
            lr, lc, rr, rc = ely // 2, elx // 2, ery // 2, erx // 2
            forced = True
        pending = False
        if check and not forced and (_sign(field, u, inside, occ, osign, X, Y, elx, ely) >= 0
                      or _sign(field, u, inside, occ, osign, X, Y, erx, ery) <= 0):
            return BAD, n + 1, 0, target, 0
        if lr == rr:
            blk_h[lr, min(lc, rc)] = 1
        else:
            blk_v[min(lr, rr), lc] = 1
        X += 2 * ndx
        Y += 2 * ndy
        dX, dY = ndx, ndy
        n += 1
        out[n, 0] = X
        out[n, 1] = Y
        if not inside[lr, lc] and not inside[rr, rc]:
            return EXIT, n + 1, 0, target, 0
        if not interior:
            continue
        vi, vj = (Y + 1) // 2, (X + 1) // 2
        trig = vstamp[vi, vj] == 1
        vstamp[vi, vj] = 1
        if not trig:
            trig = not (inside[(Y - 1) // 2, (X - 1) // 2] and inside[(Y - 1) // 2, (X + 1) // 2]
                        and inside[(Y + 1) // 2, (X - 1) // 2] and inside[(Y + 1) // 2, (X + 1) // 2])
        if not trig:
            continue
        if inside[lr, lc] and inside[rr, rc] and cstamp[lr, lc] == gen and cstamp[rr, rc] == gen:
            tag += 2
            cut = _split(inside, blk_h, blk_v, cstamp, gen, mark, tag, stack, queue, lr, lc, rr, rc)
            if cut != 0:
                q = stack if cut > 0 else queue
                k = abs(cut)
                if mark[zr, zc] == (tag if cut > 0 else tag + 1):
                    gen += 1
                    for i in range(k):
                        cstamp[q[i, 0], q[i, 1]] = gen
                    size = k
                else:
                    for i in range(k):
                        cstamp[q[i, 0], q[i, 1]] = -1
                    size -= k
        count = _seen_by_component(edges, blk_h, blk_v, cstamp, gen, seen)
        if count == 0:
            if inside[lr, lc] and cstamp[lr, lc] == gen:
                return CLOSED, n + 1, 1, target, size
            if inside[rr, rc] and cstamp[rr, rc] == gen:
                return CLOSED, n + 1, -1, target, size
            return BAD, n + 1, 0, target, size
        if inside[rr, rc] and cstamp[rr, rc] == gen:
            side = -1
        elif inside[lr, lc] and cstamp[lr, lc] == gen:
            side = 1
        else:
            return STUCK, n + 1, 0, target, size
        target = _retarget(straight, seen, osign, target, side)
        pending = True
        pend_side = side
    return CAP, n + 1, 0, target, 0


@dataclass(frozen=True, eq=False)
class LatticePath:
    """Dual-lattice path as a vertex list in doubled coordinates."""

    vertices: np.ndarray
    start: object
    end: object
    status: str = "exit"
    orientation: int = 0

    def __len__(self):
        return max(self.vertices.shape[0] - 1, 0)

    def midpoints(self) -> np.ndarray:
        v = self.vertices
        return (v[1:] + v[:-1]) // 2

    def edge_set(self) -> frozenset:
        return frozenset(map(tuple, self.midpoints().tolist()))

    def directed_edges(self) -> list:
        v = self.vertices
        return list(zip(map(tuple, ((v[1:] + v[:-1]) // 2).tolist()), map(tuple, (v[1:] - v[:-1]).tolist())))

    def points(self, domain: LatticeDomain) -> np.ndarray:
        return domain.doubled_to_complex(self.vertices)


@dataclass
class _WalkBuffers:
    shape: tuple
    cap: int
    out: np.ndarray = dc_field(init=False)
    blk_h: np.ndarray = dc_field(init=False)
    blk_v: np.ndarray = dc_field(init=False)
    vstamp: np.ndarray = dc_field(init=False)
    cstamp: np.ndarray = dc_field(init=False)
    stack: np.ndarray = dc_field(init=False)
    queue: np.ndarray = dc_field(init=False)
    mark: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        R, C = self.shape
        self.out = np.zeros((self.cap + 1, 2), dtype=np.int64)
        self.blk_h = np.zeros((R, C), dtype=np.uint8)
        self.blk_v = np.zeros((R, C), dtype=np.uint8)
        self.vstamp = np.zeros((R + 1, C + 1), dtype=np.uint8)
        self.cstamp = np.zeros((R, C), dtype=np.int64)
        self.stack = np.zeros((R * C + 1, 2), dtype=np.int64)
        self.queue = np.zeros((R * C + 1, 2), dtype=np.int64)
        self.mark = np.zeros((R, C), dtype=np.int64)

    def reset(self):
        self.blk_h[:] = 0
        self.blk_v[:] = 0
        self.vstamp[:] = 0
        self.cstamp[:] = 0
        self.mark[:] = 0


def _resolve_index(cycle: BoundaryCycle, where) -> int:
    if isinstance(where, (int, np.integer)):
        return int(where) % len(cycle)
    raise ExtractionError(f"boundary markers are cycle indices, got {where!r}")


def _run_walk(field: DiscreteField, start: int, target: int, heights, switch, inside=None, cycle=None,
              osign=None, interior_target=None, cap=None, buffers=None):
    dom = field.domain
    inside = dom.mask if inside is None else inside
    cycle = dom.cycle if cycle is None else cycle
    m = len(cycle)
    if not cycle.straight(start):
        raise ExtractionError(f"start {start} is not a straight boundary junction")
    osign = cycle.arc_signs(start, target) if osign is None else osign.copy()
    cap = cap if cap is not None else 4 * inside.size + 16
    buf = buffers if buffers is not None else _WalkBuffers(dom.shape, cap)
    buf.reset()
    x0, y0, dx0, dy0 = cycle.junction_point(start)
    zr, zc = (0, 0) if interior_target is None else interior_target
    seen = np.zeros(m, dtype=np.bool_)
    res = _walk_kernel(np.ascontiguousarray(field.values), np.asarray(heights, dtype=float),
                       np.asarray(switch, dtype=np.int64), LAMBDA, np.ascontiguousarray(inside, dtype=np.uint8),
                       cycle.occ, osign, x0, y0, dx0, dy0, interior_target is not None, zr, zc,
                       cycle.edges, cycle.straight_flags, int(target) % m,
                       buf.out[: cap + 1], buf.blk_h, buf.blk_v, buf.vstamp, buf.cstamp, buf.stack, buf.queue,
                       buf.mark, seen)
    status, nv, orient, final_target, size = res
    verts = buf.out[:nv].copy()
    verts = np.vstack([[x0 - 2 * dx0, y0 - 2 * dy0], verts])
    return status, verts, orient, final_target, size, buf


def extract_level_line(field: DiscreteField, start: int, target: int, u: float = 0.0) -> LatticePath:
    """Interface from boundary junction ``start`` to ``target`` keeping field+u >= 0 on the right.

    Boundary sites carry forced signs: + on the counterclockwise arc from start
    to target, - on the rest.  Saddles are resolved by the sign of the plaquette
    mean, which is the bilinear-interpolation choice and is odd under h -> -h.
    Interior targets are handled by ``levelline_interior.level_line_to_interior``.
    """
    dom = field.domain
    cycle = dom.cycle
    s, t = _resolve_index(cycle, start), _resolve_index(cycle, target)
    if s == t:
        raise ExtractionError("start and target coincide")
    if not cycle.straight(t):
        raise ExtractionError(f"target {t} is not a straight boundary junction")
    if abs(u) >= LAMBDA:
        return LatticePath(np.zeros((0, 2), dtype=np.int64), s, t, status="threshold-at-start")
    status, verts, _, _, _, _ = _run_walk(field, s, t, [u], [0])
    if status != EXIT:
        raise ExtractionError(f"walker stopped with status {STATUS_NAMES[status]}")
    return LatticePath(verts, s, t)


def extract_height_varying(field: DiscreteField, start: int, target: int, heights, switch_steps) -> LatticePath:
    """Level line whose height changes from heights[k] to heights[k+1] after switch_steps[k] steps."""
    heights = [float(h) for h in heights]
    switch = [int(s) for s in switch_steps]
    if len(switch) != len(heights) - 1:
        raise HeightConfigError("need one switch step per height change")
    if any(b < a for a, b in zip(switch, switch[1:])):
        raise HeightConfigError("switch steps must be non-decreasing")
    if heights and max(heights) - min(heights) >= 2 * LAMBDA:
        raise HeightConfigError("pairwise height gaps must stay below 2*LAMBDA")
    if len(heights) == 1:
        return extract_level_line(field, start, target, heights[0])
    cycle = field.domain.cycle
    s, t = _resolve_index(cycle, start), _resolve_index(cycle, target)
    status, verts, _, _, _, _ = _run_walk(field, s, t, heights, switch + [0])
    if status != EXIT:
        raise ExtractionError(f"walker stopped with status {STATUS_NAMES[status]}")
    return LatticePath(verts, s, t)


def interface_sign_check(field: DiscreteField, path: LatticePath, u: float = 0.0) -> bool:
    """Every traversed edge has an interior site with field+u < 0 on its left and >= 0 on its right."""
    dom = field.domain
    v = path.vertices
    d = (v[1:] - v[:-1]) // 2
    m = (v[1:] + v[:-1]) // 2
    left = m + np.stack([-d[:, 1], d[:, 0]], axis=1)
    right = m + np.stack([d[:, 1], -d[:, 0]], axis=1)
    ok = True
    for side, want_pos in ((left, False), (right, True)):
        r, c = side[:, 1] // 2, side[:, 0] // 2
        ins = dom.mask[r, c]
        vals = field.values[r, c][ins] + u
        ok &= bool(np.all(vals >= 0) if want_pos else np.all(vals < 0))
    return ok


def right_region(domain: LatticeDomain, path: LatticePath) -> np.ndarray:
    """Interior sites connected, without crossing the path, to the + arc (start..target-1)."""
    cycle = domain.cycle
    R, C = domain.shape
    big = np.zeros((2 * R - 1, 2 * C - 1), dtype=bool)
    big[::2, ::2] = domain.mask
    inner = domain.mask
    big[::2, 1::2] = inner[:, :-1] & inner[:, 1:]
    big[1::2, ::2] = inner[:-1, :] & inner[1:, :]
    mids = path.midpoints()
    big[mids[:, 1], mids[:, 0]] = False
    labels, _ = ndimage.label(big)
    plus = cycle.arc_signs(path.start, path.end) > 0
    blocked = _mid_lookup(mids)
    keep = set()
    for ir, ic, orr, oc, k in cycle.edges.tolist():
        if plus[k] and (ic + oc, ir + orr) not in blocked:
            keep.add(labels[2 * ir, 2 * ic])
    keep.discard(0)
    return np.isin(labels[::2, ::2], list(keep)) & inner


def _mid_lookup(mids):
    return {(int(x), int(y)) for x, y in mids}


# ---------------------------------------------------------------- square to half-plane


SQUARE_K = float(ellipk(0.5) / math.sqrt(2))  # int_0^1 (1-t^4)^(-1/2) dt
SQUARE_HALF_SIDE = SQUARE_K / math.sqrt(2)


def _sc_diamond(v):
    v = np.asarray(v, dtype=complex)
    return v * hyp2f1(0.25, 0.5, 1.25, v ** 4)


def disc_to_square(w):
    """Conformal map of the unit disc onto the square |Re|,|Im| < SQUARE_HALF_SIDE; +-i go to the side midpoints."""
    rot = np.exp(1j * np.pi / 4)
    return rot * _sc_diamond(np.asarray(w, dtype=complex) / rot)


@functools.lru_cache(maxsize=1)
def _diamond_table():
    from scipy.spatial import cKDTree

    rad = np.linspace(0, 0.999, 200)
    ang = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    grid = (rad[:, None] * np.exp(1j * ang[None, :])).ravel()
    img = _sc_diamond(grid)
    return grid, cKDTree(np.column_stack([img.real, img.imag]))


def square_to_disc(s, tol: float = 1e-12, max_iter: int = 60):
    """Inverse of ``disc_to_square`` by Newton iteration from a tabulated starting guess."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    rot = np.exp(1j * np.pi / 4)
    target = s / rot
    grid, tree = _diamond_table()
    _, idx = tree.query(np.column_stack([target.real, target.imag]))
    v = grid[idx]
    for _ in range(max_iter):
        fv = _sc_diamond(v)
        step = (fv - target) * np.sqrt(1 - v ** 4)
        v_new = v - step
        over = np.abs(v_new) >= 1
        v_new[over] = v[over] - 0.5 * step[over]
        v = v_new
        if np.max(np.abs(step)) < tol:
            break
    out = v * rot
    return out


def disc_to_halfplane_at(w):
    """Mobius map of the disc onto the half-plane sending -i to 0, i to infinity and 0 to i."""
    w = np.asarray(w, dtype=complex)
    return 1j * (w + 1j) / (1j - w)


def driving_function_of_interface(path: LatticePath, domain: LatticeDomain, max_time: float | None = None) -> DriverPath:
    """Map a square-domain interface into the half-plane and unzip it.

    The square's ring is the boundary of [0,1]^2 (up to spacing) with the path
    running from the bottom towards the top.  The bottom middle goes to 0 and the
    top middle to infinity.
    """
    rows, cols = np.nonzero(domain.mask)
    lo = domain.position(rows.min() - 1, cols.min() - 1)
    hi = domain.position(rows.max() + 1, cols.max() + 1)
    centre = (lo + hi) / 2
    half = (hi.real - lo.real) / 2
    if not math.isclose(half, (hi.imag - lo.imag) / 2, rel_tol=1e-9):
        raise GeometryError("driving function extraction needs a square domain")
    pts = path.points(domain)
    # first point is the exterior end of the starting dual edge: replace by the boundary point
    pts = pts.copy()
    pts[0] = (pts[0] + pts[1]) / 2
    s = (pts - centre) / half * SQUARE_HALF_SIDE
    s = np.clip(s.real, -SQUARE_HALF_SIDE, SQUARE_HALF_SIDE) + 1j * np.clip(s.imag, -SQUARE_HALF_SIDE, SQUARE_HALF_SIDE)
    w = square_to_disc(s)
    start_w = square_to_disc(np.array([complex(s[0].real, -SQUARE_HALF_SIDE)]))[0]
    z = disc_to_halfplane_at(w)
    z0 = disc_to_halfplane_at(start_w)
    z = z - z0.real
    z = z[1:]
    z = z[np.isfinite(z) & (np.abs(z) < 1e6)]
    z = np.where(z.imag < 0, z.real + 0j, z)
    drv = chordal_driver_from_trace(z, max_time)
    if max_time is not None and drv.horizon > max_time:
        drv = drv.restrict(max_time)
    return drv


@dataclass(frozen=True, eq=False)
class InteriorWalk:
    """Interface chained towards an interior site until it closes a loop around it.

    ``orientation`` is +1 for a counterclockwise loop and -1 for a clockwise one;
    ``component`` marks the sites enclosed by the loop.
    """

    path: LatticePath
    status: str
    orientation: int
    component: np.ndarray
    start: int
    cycle: BoundaryCycle


def fill_loop_interior(component: np.ndarray) -> np.ndarray:
    """All sites enclosed by the outer boundary of a component."""
    return ndimage.binary_fill_holes(component)


def stage_domain(component: np.ndarray, z_site) -> np.ndarray:
    """Interior sites for a walk inside a closed loop: holes filled, diagonal pinches cut.

    At a pinch two interior sites meet only at a corner and the boundary trace
    visits the same dual vertex twice.  The site with fewer interior neighbours
    is dropped (ties: the later one in row-major order), so the result depends on
    ``z_site`` only through the final choice of component.
    """
    mask = fill_loop_interior(component)
    zr, zc = int(z_site[0]), int(z_site[1])
    while True:
        deg = np.zeros(mask.shape, dtype=np.int64)
        deg[1:-1, 1:-1] = (mask[:-2, 1:-1].astype(int) + mask[2:, 1:-1] + mask[1:-1, :-2] + mask[1:-1, 2:])
        a, b, c, d = mask[:-1, :-1], mask[:-1, 1:], mask[1:, :-1], mask[1:, 1:]
        main = np.argwhere(a & d & ~b & ~c)
        anti = np.argwhere(b & c & ~a & ~d)
        if not (main.size or anti.size):
            return mask
        pairs = [((r, k), (r + 1, k + 1)) for r, k in main] + [((r, k + 1), (r + 1, k)) for r, k in anti]
        for s1, s2 in pairs:
            drop = min(s1, s2, key=lambda s: (deg[s], -s[0], -s[1]))
            mask[drop] = False
        if not mask[zr, zc]:
            raise GeometryError("target site lost while cutting pinches")
        labels, _ = ndimage.label(mask)
        mask = labels == labels[zr, zc]


def default_start(cycle: BoundaryCycle, z_site) -> int:
    """Straight junction closest to the boundary point straight below the target site."""
    below = cycle.rows < z_site[0]
    same_col = np.abs(cycle.cols - z_site[1])
    score = np.where(below, same_col * 4 + (z_site[0] - cycle.rows), np.inf)
    return cycle.nearest_straight(int(np.argmin(score)))


def walk_to_interior(field: DiscreteField, z_site, u: float, mask=None, start: int | None = None,
                     target: int | None = None, buffers=None) -> InteriorWalk:
    """Chained lattice level line of height u targeted at an interior site.

    The walk heads for a boundary junction; whenever a closing step cuts the
    current target off from the component of ``z_site``, the target moves to the
    middle of the boundary run that component still sees, and the run's forced
    signs are reassigned (+ before the new target, - after).  The walk stops once
    the component is bounded by the path alone.
    """
    dom = field.domain
    mask = dom.mask if mask is None else np.asarray(mask, dtype=bool)
    if not mask[tuple(z_site)]:
        raise GeometryError("target site is not inside the domain")
    cycle = dom.cycle if mask is dom.mask else trace_boundary_cycle(mask)
    m = len(cycle)
    s = default_start(cycle, z_site) if start is None else cycle.nearest_straight(start)
    t = cycle.nearest_straight((s + m // 2) % m) if target is None else cycle.nearest_straight(target)
    if t == s:
        t = cycle.nearest_straight((s + 1) % m + 1)
    status, verts, orient, _, _, buf = _run_walk(field, s, t, [u], [0], inside=mask, cycle=cycle,
                                                 interior_target=tuple(int(v) for v in z_site), buffers=buffers)
    comp = np.zeros(dom.shape, dtype=bool)
    if status == CLOSED:
        comp = buf.cstamp == buf.cstamp.max()
        comp &= mask
    path = LatticePath(verts, s, "interior", status=STATUS_NAMES[status], orientation=int(orient))
    return InteriorWalk(path, STATUS_NAMES[status], int(orient), comp, s, cycle)
