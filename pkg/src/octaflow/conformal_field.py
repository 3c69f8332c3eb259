"""Invariant conformal metrics g = e^{2 rho} g_hyp on the octagon surface.

rho lives on a square Cartesian lattice covering the octagon plus a margin.
Margin nodes are ghost copies: their values come from reducing the node into
the octagon, so every field is invariant under the surface group by
construction.  Curvature uses centered second differences, area integrals a
clipped-cell quadrature that is exact to the interpolation order at the
curved octagon boundary.
"""

from functools import cached_property
import math

import numpy as np
from scipy import sparse

from .errors import CurvaturePositive, OutOfRange
from ._interp import SplineTable
from .mobius_geometry import (
    DiskPoint,
    IDENTITY,
    MobiusMap,
    _canonicalize,
    hyperbolic_distance,
    mobius_apply,
    octagon_contains,
)

# grid_spacing is a Euclidean length; the default is 1/256 of the disk diameter
DEFAULT_GRID_SPACING = 2.0 / 256.0

# supported evaluation neighborhood around the octagon (reduction margin)
MARGIN = 0.15

# Euclidean area of the fundamental octagon (Green's theorem along the eight
# wall arcs); used as a build-time self check of the quadrature weights
_OCTAGON_EUCLID_AREA = 1.5271368401776169

_GAUSS_N = 6
_GQ_X, _GQ_W = np.polynomial.legendre.leggauss(_GAUSS_N)
_GQ_X = 0.5 * (_GQ_X + 1.0)
_GQ_W = 0.5 * _GQ_W


def _lagrange_weights(t):
    """Cubic Lagrange weights on the 4-node stencil {-1, 0, 1, 2} at offset t."""
    t = np.asarray(t)
    l0 = -t * (t - 1.0) * (t - 2.0) / 6.0
    l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    l2 = -(t + 1.0) * t * (t - 2.0) / 2.0
    l3 = (t + 1.0) * t * (t - 1.0) / 6.0
    return np.stack([l0, l1, l2, l3], axis=-1)


class _Lattice:
    """Geometry of one lattice resolution: masks, ghost refill, quadrature."""

    def __init__(self, atlas, h):
        vr = atlas.vertex_radius
        collar = min(16, int((0.985 - vr) / h))
        assert collar >= 2, f"grid_spacing {h} too coarse for the ghost margin"
        m = int(math.ceil(vr / h)) + collar
        n = 2 * m + 1
        xs = (np.arange(n) - m) * h
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        Z = X + 1j * Y
        r2 = X * X + Y * Y
        self.atlas = atlas
        self.h = h
        self.m = m
        self.n = n
        self.xs = xs
        self.Z = Z
        self.r2 = r2
        self.inside = octagon_contains(atlas, Z)
        rad = np.abs(Z)
        self.fillable = (~self.inside) & (rad <= vr + MARGIN)
        self.evalmask = self.inside | self.fillable
        self._build_refill()
        self._build_quadrature()

    # -- ghost refill -------------------------------------------------------

    def _build_refill(self):
        atlas = self.atlas
        fi = np.flatnonzero(self.fillable.ravel())
        zf = self.Z.ravel()[fi]
        zc, _, n_left = _canonicalize(atlas, zf)
        assert n_left == 0, "ghost node failed to reduce"
        fx = zc.real / self.h + self.m
        fy = zc.imag / self.h + self.m
        i0 = np.floor(fx).astype(np.int64)
        j0 = np.floor(fy).astype(np.int64)
        lx = _lagrange_weights(fx - i0)
        ly = _lagrange_weights(fy - j0)
        rows = []
        cols = []
        wts = []
        rr = np.arange(fi.size)
        for a in range(4):
            for b in range(4):
                rows.append(rr)
                cols.append((i0 - 1 + a) * self.n + (j0 - 1 + b))
                wts.append(lx[:, a] * ly[:, b])
        self.fill_idx = fi
        self.fill_mat = sparse.csr_matrix(
            (np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))),
            shape=(fi.size, self.n * self.n))
        self.zero_mask = ~self.evalmask

    def refill(self, values):
        """Overwrite ghost margin values from the interior; zero the far zone.

        In place; reads only octagon values plus at most two rings beyond,
        which the caller keeps valid.
        """
        flat = values.reshape(-1)
        ghost = self.fill_mat @ flat
        flat[self.fill_idx] = ghost
        values[self.zero_mask] = 0.0
        return values

    # -- clipped-cell quadrature -------------------------------------------

    def _build_quadrature(self):
        atlas = self.atlas
        h = self.h
        xs = self.xs
        n = self.n
        centers = np.asarray(atlas._iso_centers)
        RC = atlas._iso_radius
        verts = np.asarray(atlas.octagon_vertices)
        Z = self.Z
        dmin = np.abs(Z[..., None] - centers[None, None, :]) - RC
        near = (np.abs(dmin) <= 0.75 * h).any(axis=-1)
        corn_in = np.ones((n, n), dtype=bool)
        for sx in (-0.5, 0.5):
            for sy in (-0.5, 0.5):
                corn_in &= octagon_contains(atlas, Z + (sx + 1j * sy) * h)
        full = corn_in & ~near
        boundary = (~full) & (corn_in | self.inside | near) \
            & ~((dmin < -0.75 * h).any(axis=-1))

        W = np.zeros((n, n))
        W[full] += h * h
        # midpoint rule corrected to O(h^4): h^2 f + (h^2/24)(sum_nbrs - 4f)
        c0 = h * h / 24.0
        fi, fj = np.where(full)
        for di, dj, s in ((1, 0, c0), (-1, 0, c0), (0, 1, c0), (0, -1, c0),
                          (0, 0, -4.0 * c0)):
            np.add.at(W, (fi + di, fj + dj), s)

        # boundary cells: exact x-interval clipping against the wall circles on
        # Gauss lines, with y split at every curve feature inside the cell
        vys = verts.imag
        circ_y = np.concatenate([centers.imag - RC, centers.imag + RC])
        pts_x = []
        pts_y = []
        pts_w = []
        for i, j in zip(*np.where(boundary)):
            x0, x1 = xs[i] - h / 2, xs[i] + h / 2
            y0, y1 = xs[j] - h / 2, xs[j] + h / 2
            brk = {y0, y1}
            for yy in circ_y:
                if y0 < yy < y1:
                    brk.add(float(yy))
            for yy in vys:
                if y0 < yy < y1:
                    brk.add(float(yy))
            # y levels where a circle crosses a cell x-edge start/end an
            # excluded x-interval; without them the strip integrand has kinks
            for k in range(8):
                cx, cy = centers[k].real, centers[k].imag
                for xe in (x0, x1):
                    dd = RC * RC - (xe - cx) ** 2
                    if dd > 0.0:
                        rt = math.sqrt(dd)
                        for yy in (cy - rt, cy + rt):
                            if y0 < yy < y1:
                                brk.add(float(yy))
            brk = sorted(brk)
            for ya, yb in zip(brk[:-1], brk[1:]):
                if yb - ya < 1e-15:
                    continue
                for qy, wy in zip(_GQ_X, _GQ_W):
                    y = ya + (yb - ya) * qy
                    wyy = wy * (yb - ya)
                    iv = [(x0, x1)]
                    for k in range(8):
                        cy = centers[k].imag
                        if abs(y - cy) >= RC:
                            continue
                        half = math.sqrt(RC * RC - (y - cy) ** 2)
                        ex0 = centers[k].real - half
                        ex1 = centers[k].real + half
                        if ex1 <= x0 or ex0 >= x1:
                            continue
                        niv = []
                        for a0, a1 in iv:
                            if ex1 <= a0 or ex0 >= a1:
                                niv.append((a0, a1))
                            else:
                                if a0 < ex0:
                                    niv.append((a0, ex0))
                                if ex1 < a1:
                                    niv.append((ex1, a1))
                        iv = niv
                        if not iv:
                            break
                    for a0, a1 in iv:
                        if a1 - a0 < 1e-15:
                            continue
                        for qx, wx in zip(_GQ_X, _GQ_W):
                            pts_x.append(a0 + (a1 - a0) * qx)
                            pts_y.append(y)
                            pts_w.append(wx * (a1 - a0) * wyy)

        # scatter the clip points adjointly: integrating a nodal function f
        # becomes sum(W * f) with f cubically interpolated at the clip points
        px = np.asarray(pts_x)
        py = np.asarray(pts_y)
        pw = np.asarray(pts_w)
        fx = px / h + self.m
        fy = py / h + self.m
        i0 = np.floor(fx).astype(np.int64)
        j0 = np.floor(fy).astype(np.int64)
        lx = _lagrange_weights(fx - i0)
        ly = _lagrange_weights(fy - j0)
        for a in range(4):
            for b in range(4):
                np.add.at(W, (i0 - 1 + a, j0 - 1 + b), pw * lx[:, a] * ly[:, b])

        total = float(W.sum())
        assert abs(total - _OCTAGON_EUCLID_AREA) < 1e-8, \
            f"quadrature self-check failed: cell area {total!r}"
        self.W = W
        sup = np.flatnonzero(W.ravel())
        self.sup_idx = sup
        self.W_sup = W.ravel()[sup]
        r2s = self.r2.ravel()[sup]
        self.J0_sup = 4.0 / (1.0 - r2s) ** 2
        # hyperbolic area of the zero field; renormalization target, so that
        # rho = 0 is exactly the constant-area representative on this lattice
        self.area_target = float(self.W_sup @ self.J0_sup)

    # -- nodal operators ----------------------------------------------------

    def lap5(self, v):
        """Centered 5-point Euclidean Laplacian; edge ring left at zero."""
        out = np.zeros_like(v)
        out[1:-1, 1:-1] = (v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:]
                           + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]) / (self.h * self.h)
        return out

    def integrate(self, f_sup, rho_sup):
        """Integral over the surface of f dA_g from support-node samples."""
        return float(self.W_sup @ (f_sup * np.exp(2.0 * rho_sup) * self.J0_sup))


_LATTICE_CACHE = {}


def get_lattice(atlas, grid_spacing):
    key = float(grid_spacing)
    lat = _LATTICE_CACHE.get(key)
    if lat is None or lat.atlas is not atlas:
        lat = _Lattice(atlas, key)
        _LATTICE_CACHE[key] = lat
    return lat


class ConformalField:
    """Sampled conformal factor rho; immutable after construction."""

    def __init__(self, atlas, grid_spacing, values):
        self.atlas = atlas
        self.grid_spacing = float(grid_spacing)
        self.lattice = get_lattice(atlas, grid_spacing)
        values = np.array(values, dtype=np.float64)
        assert values.shape == (self.lattice.n, self.lattice.n), \
            f"values shape {values.shape} does not match lattice {self.lattice.n}"
        values.setflags(write=False)
        self.values = values

    @cached_property
    def _rho_sup(self):
        return self.values.ravel()[self.lattice.sup_idx]

    @cached_property
    def area(self):
        lat = self.lattice
        return lat.integrate(np.ones(lat.sup_idx.size), self._rho_sup)

    @cached_property
    def _rho_spline(self):
        return SplineTable(self.values, self.lattice.h, self.lattice.m)

    @cached_property
    def _lap_nodal(self):
        """Hyperbolic Laplacian of rho by the 5-point stencil, ghost-refilled."""
        lat = self.lattice
        lap = (1.0 - lat.r2) ** 2 / 4.0 * lat.lap5(self.values)
        lat.refill(lap)
        return lap

    @cached_property
    def _lap_spline(self):
        return SplineTable(self._lap_nodal, self.lattice.h, self.lattice.m)

    def chart_data(self, zc):
        """rho, d_x rho, d_y rho, K at already-canonical complex positions."""
        v, gx, gy = self._rho_spline.eval(zc)
        lap = self._lap_spline.eval(zc)[0]
        K = np.exp(-2.0 * v) * (-lap - 1.0)
        return v, gx, gy, K


class CurvatureField:
    """Gaussian curvature samples of a ConformalField on the same lattice."""

    def __init__(self, field, values, kbar):
        self.field = field
        self.grid_spacing = field.grid_spacing
        values.setflags(write=False)
        self.values = values
        self.kbar = kbar


def gauss_curvature(field):
    """K = e^{-2 rho} (-(1-|z|^2)^2/4 * lap_eucl rho - 1), kbar = integral/4pi.

    Negative curvature is reported, never assumed: callers inspect values.
    """
    lat = field.lattice
    lap_h = (1.0 - lat.r2) ** 2 / 4.0 * lat.lap5(field.values)
    K = np.exp(-2.0 * field.values) * (-lap_h - 1.0)
    lat.refill(K)
    kbar = lat.integrate(K.ravel()[lat.sup_idx], field._rho_sup) / (4.0 * math.pi)
    return CurvatureField(field, K, kbar)


def area_integral(field, f=None):
    """Integral of f dA_g over the surface; f nodal on the field lattice
    (valid on the octagon plus two ghost rings), or None for the area."""
    lat = field.lattice
    if f is None:
        return field.area
    f = np.asarray(f, dtype=np.float64)
    assert f.shape == field.values.shape, "integrand off-lattice"
    return lat.integrate(f.ravel()[lat.sup_idx], field._rho_sup)


def evaluate(field, z):
    """rho, gradient, hyperbolic Laplacian at disk positions.

    Positions are canonicalized into the octagon first, so the result is
    invariant under the surface group to interpolation accuracy; the chart
    gradient is carried back through the reduction derivative.  Scalar input
    gives (float, (2,) array, float); arrays map elementwise.
    """
    scalar = np.isscalar(z) or isinstance(z, (complex, DiskPoint))
    if isinstance(z, DiskPoint):
        z = z.z
    z = np.asarray(z, dtype=np.complex128)
    vr = field.atlas.vertex_radius
    if z.size and np.max(np.abs(z)) > vr + MARGIN + 1e-12:
        raise OutOfRange(f"evaluation outside supported neighborhood "
                         f"|z| <= {vr + MARGIN:.4f}")
    zc, dz, n_left = _canonicalize(field.atlas, z.reshape(-1), need_deriv=True)
    if n_left:
        raise OutOfRange("point failed to reduce into the octagon")
    zc = np.asarray(zc).reshape(-1)
    v, gx, gy = field._rho_spline.eval(zc)
    lap = field._lap_spline.eval(zc)[0]
    g = (gx + 1j * gy) * np.conj(dz)
    grad = np.stack([g.real, g.imag], axis=-1)
    if scalar:
        return float(v[0]), grad[0], float(lap[0])
    return (v.reshape(z.shape), grad.reshape(z.shape + (2,)),
            lap.reshape(z.shape))


# ---------------------------------------------------------------------------
# construction from bump sums
# ---------------------------------------------------------------------------

def _orbit_words(atlas, length):
    """Coefficient arrays (a, b) of all reduced words of exactly this length."""
    if length == 0:
        return np.array([1.0 + 0j]), np.array([0j])
    a = atlas._ga.copy()
    b = atlas._gb.copy()
    last = np.arange(8)
    for _ in range(length - 1):
        keep = np.arange(8)[None, :] != (last[:, None] + 4) % 8
        wi, ki = np.where(keep)
        a2 = atlas._ga[ki]
        b2 = atlas._gb[ki]
        a, b, last = (a[wi] * a2 + b[wi] * np.conj(b2),
                      a[wi] * b2 + b[wi] * np.conj(a2), ki)
    return a, b


def _apply_words(a, b, z):
    """Images of a single complex point under the word coefficient arrays."""
    return (a * z + b) / (np.conj(b) * z + np.conj(a))


def bump_profile(d, width):
    """C^2 compactly supported radial profile with unit amplitude parameter:
    (width^2/2) (1 - (d/width)^2)^3 inside its support.  The width^2/2 factor
    makes the peak curvature deviation of a unit-amplitude bump about six
    times the amplitude, independent of width."""
    u = np.clip(np.asarray(d) / width, 0.0, 1.0)
    return 0.5 * width * width * (1.0 - u * u) ** 3


def _batch_distance(z, w):
    """Hyperbolic distance between complex arrays (broadcasting)."""
    q = np.abs((z - w) / (1.0 - np.conj(w) * z))
    return 2.0 * np.arctanh(q)


def _orbit_sum(atlas, lat, centers, amplitudes, width):
    """Sum of bump orbits sampled at every octagon and ghost node.

    Ghost nodes get the value at their canonical representative, which makes
    the sampled field exactly invariant.  Word length 2 truncation is checked
    against the actual word-3 and word-4 orbit distances.
    """
    assert width > 0.0, "bump width must be positive"
    assert len(centers) == len(amplitudes)
    centers = [c.z if isinstance(c, DiskPoint) else complex(c) for c in centers]

    # truncation check: a length-3 word whose bump support reaches the octagon
    # invalidates the length-2 orbit sum (longer words sit further out still)
    circum = 2.0 * math.atanh(atlas.vertex_radius)
    fa, fb = _orbit_words(atlas, 3)
    for c in centers:
        img = _apply_words(fa, fb, c)
        reach = _batch_distance(0.0j, img) - circum
        if np.min(reach) < width:
            raise ValueError(
                f"bump width {width} too large for the length-2 orbit "
                f"truncation (long-word clearance {np.min(reach):.3f})")

    w2a, w2b = _orbit_words(atlas, 2)
    wa = np.concatenate([np.array([1.0 + 0j]), atlas._ga, w2a])
    wb = np.concatenate([np.array([0j]), atlas._gb, w2b])
    idx = np.flatnonzero(lat.evalmask.ravel())
    zn = lat.Z.ravel()[idx]
    # canonical representative of every sampled node
    zc, _, n_left = _canonicalize(atlas, zn)
    assert n_left == 0
    acc = np.zeros(idx.size)
    for c, a in zip(centers, amplitudes):
        img = _apply_words(wa, wb, c)
        d = _batch_distance(zc[:, None], img[None, :])
        acc += a * bump_profile(d, width).sum(axis=1)
    out = np.zeros((lat.n, lat.n))
    out.ravel()[idx] = acc
    return out


def field_from_bumps(atlas, centers, amplitudes, width,
                     grid_spacing=DEFAULT_GRID_SPACING):
    """Invariant field rho = sum of bump orbits, shifted to area 4 pi.

    Raises CurvaturePositive if the amplitudes are large enough to push the
    Gaussian curvature to zero or above anywhere.
    """
    lat = get_lattice(atlas, grid_spacing)
    values = _orbit_sum(atlas, lat, centers, amplitudes, width)
    rho_sup = values.ravel()[lat.sup_idx]
    area = lat.integrate(np.ones(lat.sup_idx.size), rho_sup)
    values += -0.5 * math.log(area / lat.area_target)
    values[lat.zero_mask] = 0.0
    field = ConformalField(atlas, grid_spacing, values)
    kmax = float(np.max(gauss_curvature(field).values[lat.inside]))
    if kmax >= 0.0:
        raise CurvaturePositive(f"max curvature {kmax:.4f} >= 0; "
                                f"reduce bump amplitudes")
    return field


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def save_snapshot(field, path):
    """Plain-text snapshot: header then row-major rho values, full precision."""
    kbar = gauss_curvature(field).kbar
    lines = ["octaflow field snapshot v1",
             f"grid_spacing {field.grid_spacing!r}",
             f"half_extent_nodes {field.lattice.m}",
             f"area {field.area!r}",
             f"kbar {kbar!r}"]
    lines.extend(repr(float(v)) for v in field.values.ravel())
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_snapshot(path, atlas):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "octaflow field snapshot v1", "not a field snapshot"
    head = dict(ln.split(" ", 1) for ln in lines[1:5])
    h = float(head["grid_spacing"])
    m = int(head["half_extent_nodes"])
    n = 2 * m + 1
    vals = np.array([float(s) for s in lines[5:5 + n * n]]).reshape(n, n)
    field = ConformalField(atlas, h, vals)
    assert field.lattice.m == m, "lattice extent mismatch"
    assert abs(field.area - float(head["area"])) <= 1e-12, \
        "stored area inconsistent with values"
    return field
