"""Liouville-measure sampling, entropy estimators, and identity checks.

The Liouville measure on the unit tangent bundle factors as the hyperbolic
area element times the uniform fiber angle, so base points are drawn by
rejection against e^{2 rho} 4/(1-|z|^2)^2 from a bounding box and angles
uniformly.  Every estimator keyed by the same (n, seed) pair sees the same
tangents, which turns differences of estimators into common-random-number
comparisons.
"""

from dataclasses import dataclass, field as dc_field
import math

import numpy as np

from .errors import CurvaturePositive, NegativeInput
from .mobius_geometry import _canonicalize, octagon_contains
from ._interp import SplineTable
from .conformal_field import (ConformalField, _orbit_sum, area_integral,
                              gauss_curvature)
from .geodesic_dynamics import (DEFAULT_BURN_IN, DEFAULT_DT, H_S, H_THETA,
                                UnitTangent, _displace_along_rotated,
                                _riccati_batch, _stable_density_path,
                                curvature_bounds, flow_derivative,
                                half_orbit_integral, half_orbit_profile,
                                riccati_value_function, stable_derivative,
                                vertical_derivative)

_BLOCK = 32          # rejection candidates drawn per round and sample
_MAX_ROUNDS = 4096   # acceptance ~ 0.09 per candidate; this never binds
_CHUNK = 1200        # samples per stored-trajectory batch (memory bound)

CSV_HEADER = "quantity,mean,stderr,n,seed,burn_in,dt,tail_bound"


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiouvilleSample:
    """One draw from the Liouville measure; weights stay 1 under exact
    rejection sampling and are carried for estimator bookkeeping."""

    v: UnitTangent
    weight: float = 1.0


def _sample_arrays(field, n, seed):
    """Base points and fiber angles of n Liouville draws, bitwise stable.

    Sample i consumes its own counter-based stream keyed (seed, i), so the
    draw neither depends on n nor on how many rejections other samples
    needed.
    """
    assert n >= 1, "need at least one sample"
    assert seed == int(seed) and seed >= 0, "seed must be a nonnegative integer"
    atlas = field.atlas
    vr = atlas.vertex_radius
    # nodal max of rho bounds the spline between nodes up to the cushion
    bound = (4.0 / (1.0 - vr * vr) ** 2
             * math.exp(2.0 * float(np.max(field.values))) * 1.001)
    spl = field._rho_spline
    z = np.empty(n, dtype=np.complex128)
    th = np.empty(n)
    key = np.empty(2, dtype=np.uint64)
    key[0] = int(seed)
    for i in range(n):
        key[1] = i
        g = np.random.Generator(np.random.Philox(key=key.copy()))
        for _ in range(_MAX_ROUNDS):
            c = g.random((_BLOCK, 4))
            zz = (2.0 * c[:, 0] - 1.0) * vr + 1j * (2.0 * c[:, 1] - 1.0) * vr
            ok = np.flatnonzero(octagon_contains(atlas, zz))
            if ok.size == 0:
                continue
            rho = spl.eval(zz[ok])[0]
            r2 = np.abs(zz[ok]) ** 2
            dens = np.exp(2.0 * rho) * 4.0 / (1.0 - r2) ** 2
            hit = np.flatnonzero(c[ok, 2] * bound <= dens)
            if hit.size:
                j = ok[hit[0]]
                z[i] = zz[j]
                th[i] = 2.0 * math.pi * c[j, 3]
                break
        else:
            raise AssertionError("rejection sampler failed to accept")
    return z, th


def sample_liouville(field, n, seed=0):
    """n independent Liouville samples on the unit tangent bundle."""
    z, th = _sample_arrays(field, n, seed)
    return [LiouvilleSample(UnitTangent(complex(zz), float(tt)))
            for zz, tt in zip(z, th)]


# ---------------------------------------------------------------------------
# estimator reports
# ---------------------------------------------------------------------------

@dataclass
class EstimatorReport:
    """Monte Carlo mean with its standard error and the run parameters."""

    quantity: str
    mean: float
    stderr: float
    n: int
    seed: int
    burn_in: float
    dt: float
    tail_bound: float = 0.0
    dual: object = dc_field(default=None, repr=False)

    def csv_row(self):
        return ",".join([self.quantity, repr(self.mean), repr(self.stderr),
                         str(self.n), str(self.seed), repr(self.burn_in),
                         repr(self.dt), repr(self.tail_bound)])


def _report(quantity, x, seed, burn_in, dt, tail_bound=0.0):
    # np.sum is pairwise over a fixed tree, so means are run-to-run stable
    x = np.asarray(x, dtype=np.float64)
    n = int(x.size)
    assert n >= 2, "need at least two samples for a standard error"
    mean = float(np.sum(x) / n)
    sd = math.sqrt(float(np.sum((x - mean) ** 2)) / (n - 1))
    return EstimatorReport(quantity, mean, sd / math.sqrt(n), n, int(seed),
                           float(burn_in), float(dt), float(tail_bound))


def _riccati_start(field, z, th, burn_in, dt, kind, chunk=_CHUNK):
    """w at t = 0 and the curvature there, solved in sample chunks so the
    stored trajectories stay small."""
    w = np.empty(z.size)
    K0 = np.empty(z.size)
    eb = 0.0
    for a in range(0, z.size, chunk):
        b = min(a + chunk, z.size)
        ws, eb, Kn = _riccati_batch(field, z[a:b], th[a:b], burn_in, dt, kind)
        w[a:b] = ws
        K0[a:b] = Kn[0]
    return w, K0, eb


# ---------------------------------------------------------------------------
# entropy and curvature means
# ---------------------------------------------------------------------------

def entropy_estimate(field, n, burn_in=DEFAULT_BURN_IN, dt=DEFAULT_DT, seed=0):
    """Liouville entropy as the sample mean of -w^s.

    The dual estimate, the mean of +w^u at the same tangents, rides along
    on the report; the two must agree within combined error.
    """
    z, th = _sample_arrays(field, n, seed)
    ws, _, eb = _riccati_start(field, z, th, burn_in, dt, "stable")
    rep = _report("entropy", -ws, seed, burn_in, dt, tail_bound=eb)
    wu, _, ebu = _riccati_start(field, z, th, burn_in, dt, "unstable")
    rep.dual = _report("entropy_dual", wu, seed, burn_in, dt, tail_bound=ebu)
    return rep


def mean_root_curvature(field):
    """Area average of sqrt(-K); equals the entropy when K is constant."""
    lat = field.lattice
    Ks = gauss_curvature(field).values.ravel()[lat.sup_idx]
    mx = float(np.max(Ks))
    if mx >= 0.0:
        raise CurvaturePositive(f"max K = {mx:.3e} on the quadrature support")
    return lat.integrate(np.sqrt(-Ks), field._rho_sup) / field.area


def riccati_mean_check(field, n, seed=0, burn_in=DEFAULT_BURN_IN,
                       dt=DEFAULT_DT):
    """Sample mean of (w^s)^2 + K, which vanishes in expectation."""
    z, th = _sample_arrays(field, n, seed)
    w, K0, eb = _riccati_start(field, z, th, burn_in, dt, "stable")
    K1, K2 = curvature_bounds(field)
    tail = 2.0 * math.sqrt(K2) * eb + eb * eb
    return _report("riccati_mean", w * w + K0, seed, burn_in, dt,
                   tail_bound=tail)


# ---------------------------------------------------------------------------
# perturbation directions
# ---------------------------------------------------------------------------

class Perturbation:
    """Direction of conformal change with zero area pairing.

    Nodal values on the field lattice; construction projects out the
    constant so the first-order area response vanishes, which is what the
    derivative formulas assume.
    """

    def __init__(self, field, values):
        lat = field.lattice
        values = np.array(values, dtype=np.float64)
        assert values.shape == (lat.n, lat.n), \
            f"values shape {values.shape} does not match lattice {lat.n}"
        lat.refill(values)
        mean = (lat.integrate(values.ravel()[lat.sup_idx], field._rho_sup)
                / field.area)
        values -= mean
        values[lat.zero_mask] = 0.0
        resid = lat.integrate(values.ravel()[lat.sup_idx], field._rho_sup)
        assert abs(resid) <= 1e-8, f"area projection left {resid:.2e}"
        values.setflags(write=False)
        self.field = field
        self.atlas = field.atlas
        self.lattice = lat
        self.values = values
        self._spline = SplineTable(values, lat.h, lat.m)

    def __call__(self, z):
        zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        zc, _, n_left = _canonicalize(self.atlas, zz.reshape(-1))
        assert n_left == 0
        out = self._spline.eval(zc)[0].reshape(zz.shape)
        return out if np.ndim(z) else float(out[0])


def perturbation_from_bumps(field, centers, amplitudes, width):
    """Orbit-summed bump profile, projected to zero area pairing."""
    vals = _orbit_sum(field.atlas, field.lattice, centers, amplitudes, width)
    return Perturbation(field, vals)


def ricci_perturbation(field):
    """The normalized Ricci direction -(K - Kbar) as a Perturbation."""
    K = gauss_curvature(field)
    return Perturbation(field, K.kbar - K.values)


def perturbed_field(field, psi, eps):
    """Field with conformal factor rho + eps psi at the exact original area.

    The renormalizing constant is even in eps to leading order because psi
    has zero area pairing, so it drops out of centered differences.
    """
    lat = field.lattice
    vals = field.values + eps * psi.values
    c = -0.5 * math.log(
        ConformalField(field.atlas, field.grid_spacing, vals).area
        / lat.area_target)
    vals = vals + c
    vals[lat.zero_mask] = 0.0
    return ConformalField(field.atlas, field.grid_spacing, vals)


# ---------------------------------------------------------------------------
# derivative formulas and their finite-difference counterparts
# ---------------------------------------------------------------------------

def entropy_derivative_formula(field, psi, n, seed=0, burn_in=DEFAULT_BURN_IN,
                               dt=DEFAULT_DT):
    """Entropy response -1/2 int psi w^s dm to the direction psi.

    The sample mean subtracts the mean Riccati value inside the product:
    psi has zero area pairing, so the subtraction changes nothing in
    expectation while cancelling the O(1) part of w^s sample by sample.
    """
    z, th = _sample_arrays(field, n, seed)
    w, _, eb = _riccati_start(field, z, th, burn_in, dt, "stable")
    pv = psi(z)
    wbar = float(np.sum(w) / w.size)
    x = -0.5 * pv * (w - wbar)
    tail = 0.5 * float(np.max(np.abs(pv))) * eb
    return _report("entropy_derivative", x, seed, burn_in, dt,
                   tail_bound=tail)


def ricci_direction_sign(field, n, seed=0, burn_in=DEFAULT_BURN_IN,
                         dt=DEFAULT_DT):
    """Entropy derivative along -(K - Kbar); nonnegative along the flow."""
    rep = entropy_derivative_formula(field, ricci_perturbation(field), n,
                                     seed=seed, burn_in=burn_in, dt=dt)
    rep.quantity = "ricci_direction"
    return rep


def entropy_derivative_fd(field, psi, n, eps=1e-2, seed=0,
                          burn_in=DEFAULT_BURN_IN, dt=DEFAULT_DT):
    """Centered difference of the entropy at rho +- eps psi.

    The same tangents drive both sides; each side reweights the base
    sample onto its own Liouville measure (self-normalized importance
    weights), so burn-in and quadrature artifacts shared by the two
    sides cancel in the difference.  The standard error comes from the
    per-sample influence values of the paired ratio estimators.
    """
    z, th = _sample_arrays(field, n, seed)
    rho0 = field._rho_spline.eval(z)[0]
    sides = []
    eb = 0.0
    for s in (eps, -eps):
        pf = perturbed_field(field, psi, s)
        w, _, eb = _riccati_start(pf, z, th, burn_in, dt, "stable")
        u = np.exp(2.0 * (pf._rho_spline.eval(z)[0] - rho0))
        ubar = float(np.sum(u) / u.size)
        m = float(np.sum(u * (-w)) / np.sum(u))
        sides.append((m, u * (-w - m) / ubar))
    (mp, gp), (mm, gm) = sides
    g = (gp - gm) / (2.0 * eps)
    rep = _report("entropy_derivative_fd", g, seed, burn_in, dt,
                  tail_bound=eb)
    rep.mean = (mp - mm) / (2.0 * eps)
    return rep


def mrc_derivative_formula(field, psi):
    """Mean-root-curvature response to psi.

    Two lattice quadratures: the direct conformal change of sqrt(-K)
    against the surface area element, and the Laplacian term against the
    hyperbolic background area (the e^{2 rho} factors of the conformal
    Laplacian and the area element cancel).
    """
    lat = field.lattice
    Ks = gauss_curvature(field).values.ravel()[lat.sup_idx]
    mx = float(np.max(Ks))
    if mx >= 0.0:
        raise CurvaturePositive(f"max K = {mx:.3e} on the quadrature support")
    sq = np.sqrt(-Ks)
    t1 = lat.integrate(psi.values.ravel()[lat.sup_idx] * sq, field._rho_sup)
    lap = (1.0 - lat.r2) ** 2 / 4.0 * lat.lap5(psi.values)
    lat.refill(lap)
    t2 = lat.integrate(lap.ravel()[lat.sup_idx] / (2.0 * sq),
                       np.zeros(lat.sup_idx.size))
    return (t1 + t2) / field.area


def mrc_derivative_fd(field, psi, eps=1e-3):
    """Centered difference of the mean root curvature at rho +- eps psi."""
    kp = mean_root_curvature(perturbed_field(field, psi, eps))
    km = mean_root_curvature(perturbed_field(field, psi, -eps))
    return (kp - km) / (2.0 * eps)


def verify_integration_by_parts(field, psi=None, n=400, seed=0,
                                burn_in=DEFAULT_BURN_IN, dt=DEFAULT_DT):
    """int V(w^s) I_psi dm against -1/2 int psi w^s dm on common samples."""
    if psi is None:
        psi = ricci_perturbation(field)
    z, th = _sample_arrays(field, n, seed)
    vs = [UnitTangent(complex(a), float(b)) for a, b in zip(z, th)]
    Vw = vertical_derivative(field, riccati_value_function(field, burn_in, dt),
                             vs)
    Ipsi, _ = half_orbit_integral(field, psi, vs, dt=dt, node_stride=2)
    lhs = _report("ibp_lhs", Vw * Ipsi, seed, burn_in, dt)
    rhs = entropy_derivative_formula(field, psi, n, seed=seed,
                                     burn_in=burn_in, dt=dt)
    comb = math.hypot(lhs.stderr, rhs.stderr)
    return {"lhs": lhs.mean, "lhs_stderr": lhs.stderr,
            "rhs": rhs.mean, "rhs_stderr": rhs.stderr,
            "combined_stderr": comb, "n": n, "seed": seed,
            "passed": abs(lhs.mean - rhs.mean) <= 3.0 * comb}


# ---------------------------------------------------------------------------
# named identity checks
# ---------------------------------------------------------------------------

def _curvature_function(field):
    """K as a base-point function, canonicalizing before the spline."""

    def kf(z):
        zc, _, n_left = _canonicalize(field.atlas, np.asarray(z).reshape(-1))
        assert n_left == 0
        return field.chart_data(zc)[3].reshape(np.shape(z))

    return kf


def identity_checks(field, n=50, seed=0, psi=None, dt=DEFAULT_DT,
                    h_s=H_S):
    """The five named functional identity checks at n sampled tangents.

    Relative errors are measured against the largest term magnitude over
    the sampled set, so tangents where an identity degenerates to 0 = 0
    do not dominate; the coboundary check is absolute.
    """
    if psi is None:
        psi = perturbation_from_bumps(field, [0.12 - 0.17j], [0.1], 0.5)
    z, th = _sample_arrays(field, n, seed)
    vs = [UnitTangent(complex(a), float(b)) for a, b in zip(z, th)]
    w0, K0, eb = _riccati_start(field, z, th, DEFAULT_BURN_IN, dt, "stable")
    checks = []

    # (X + w^s) I_psi + e^s psi = 0, differenced along one shared
    # trajectory per tangent so quadrature phase noise cancels
    I, wn, esf = half_orbit_profile(field, psi, vs, dt=dt, h_s=h_s)
    k = 2
    XI = (I[k + 2] - I[k - 2]) / (4.0 * dt)
    resid = XI + wn[k] * I[k] + esf[k]
    scale = max(float(np.max(np.abs(XI))), float(np.max(np.abs(wn[k] * I[k]))),
                float(np.max(np.abs(esf[k]))))
    checks.append({"name": "eqdiffJf", "error": float(np.max(np.abs(resid))) / scale,
                   "tol": 1e-2, "scale": scale})

    # half-orbit integrals of w^s and (w^s)^2 from one displaced solve set
    Iw, Iw2 = _stable_orbit_integrals(field, z, th, dt, h_s)

    Vw = vertical_derivative(field, riccati_value_function(field), vs)
    scale = max(float(np.max(np.abs(Iw))), float(np.max(np.abs(Vw))))
    checks.append({"name": "I_ws=V(ws)",
                   "error": float(np.max(np.abs(Iw - Vw))) / scale,
                   "tol": 2e-2, "scale": scale})

    # I_{-K} + e^s w^s - I_{(w^s)^2} = 0
    kf = _curvature_function(field)
    ImK, _ = half_orbit_integral(field, lambda q: -kf(q), vs, dt=dt,
                                 node_stride=2)
    esw = stable_derivative(field, riccati_value_function(field), vs)
    resid = ImK + np.asarray(esw) - Iw2
    scale = max(float(np.max(np.abs(ImK))), float(np.max(np.abs(esw))),
                float(np.max(np.abs(Iw2))))
    checks.append({"name": "eq:Y2", "error": float(np.max(np.abs(resid))) / scale,
                   "tol": 2e-2, "scale": scale})

    # w^u + w^s + X ln(w^u - w^s) = 0, absolute
    wu0, _, _ = _riccati_start(field, z, th, DEFAULT_BURN_IN, dt, "unstable")
    fs = riccati_value_function(field)
    fu = riccati_value_function(field, kind="unstable")

    def gap(zz, tt):
        return np.log(fu(zz, tt) - fs(zz, tt))

    Xg = flow_derivative(field, gap, vs)
    resid = wu0 + w0 + np.asarray(Xg)
    checks.append({"name": "coboundary", "error": float(np.max(np.abs(resid))),
                   "tol": 1e-3, "scale": 1.0})

    # mean of (w^s)^2 + K over the same tangents
    rep = _report("riccati_mean", w0 * w0 + K0, seed, DEFAULT_BURN_IN, dt)
    checks.append({"name": "riccati_mean", "error": abs(rep.mean),
                   "tol": 3.0 * rep.stderr + 1e-3, "scale": rep.stderr})

    for c in checks:
        c["passed"] = bool(c["error"] <= c["tol"])
    return checks


def _stable_orbit_integrals(field, z, th, dt, h_s, horizon=16.0,
                            node_stride=10, inner_burn=10.0):
    """Half-orbit integrals of w^s and (w^s)^2 at (z, th).

    One displaced evaluation set serves both integrands: w^s is solved
    fresh at the four offset batches of every trajectory node, and the
    two e^s integrands are assembled from the same values.
    """
    tz, tth, r, wn, _ = _stable_density_path(field, z.copy(), th.copy(),
                                             horizon, dt, 8.0, node_stride)
    fz = tz.reshape(-1)
    fth = tth.reshape(-1)
    zp, thp, zm, thm = _displace_along_rotated(field, fz, fth, h_s)
    wp, _, _ = _riccati_start(field, zp, thp, inner_burn, dt, "stable")
    wm, _, _ = _riccati_start(field, zm, thm, inner_burn, dt, "stable")
    wtp, _, _ = _riccati_start(field, fz, fth + H_THETA, inner_burn, dt,
                               "stable")
    wtm, _, _ = _riccati_start(field, fz, fth - H_THETA, inner_burn, dt,
                               "stable")
    wflat = wn.reshape(-1)
    es_w = (wp - wm) / (2.0 * h_s) + wflat * (wtp - wtm) / (2.0 * H_THETA)
    es_w2 = ((wp * wp - wm * wm) / (2.0 * h_s)
             + wflat * (wtp * wtp - wtm * wtm) / (2.0 * H_THETA))
    Iw = np.trapezoid(r * es_w.reshape(tz.shape), dx=node_stride * dt, axis=0)
    Iw2 = np.trapezoid(r * es_w2.reshape(tz.shape), dx=node_stride * dt,
                       axis=0)
    return Iw, Iw2


# ---------------------------------------------------------------------------
# pinched positivity decomposition
# ---------------------------------------------------------------------------

def _curvature_gradient_flow(field, tz, tth):
    """e^s K = H(K) at trajectory nodes, straight from spline derivatives.

    K depends on the base point alone, so e^s K needs no Riccati data: it
    is the metric-normalized directional derivative of K along theta+pi/2.
    Nodes recorded by the flow are already canonical, so the splines apply
    directly.  Returns (esK, K) in the node layout.
    """
    flat = tz.reshape(-1)
    th = tth.reshape(-1)
    rho, rx, ry = field._rho_spline.eval(flat)
    lap, lx, ly = field._lap_spline.eval(flat)
    e2 = np.exp(-2.0 * rho)
    K = e2 * (-lap - 1.0)
    Kx = -2.0 * rx * K - e2 * lx
    Ky = -2.0 * ry * K - e2 * ly
    conf = 2.0 * np.exp(rho) / (1.0 - np.abs(flat) ** 2)
    esK = (-np.sin(th) * Kx + np.cos(th) * Ky) / conf
    return esK.reshape(tz.shape), K.reshape(tz.shape)


def _pinched_orbit_integrals(field, z, th, dt, horizon, node_stride=5,
                             burn_in=8.0, chunk=800):
    """Half-orbit integrals I_{w^s}, I_{(w^s)^2}, I_{-K} for each tangent.

    Finite transverse displacements are useless here: over a long horizon
    any second-order seed blows up along the unstable direction and buries
    the contracted difference.  Instead e^s K comes from the curvature
    gradient and u = e^s(w^s) solves the linear transport equation
    (X + 3 w^s) u = -e^s K backward along the recorded sweep, which keeps
    every integrand exact to quadrature error.  e^s((w^s)^2) = 2 w^s u.
    Returns (w0, K0, Iw, Iw2, ImK, sup_esf, eb).
    """
    n = z.size
    step = node_stride * dt
    w0 = np.empty(n)
    K0 = np.empty(n)
    Iw = np.empty(n)
    Iw2 = np.empty(n)
    ImK = np.empty(n)
    sup = 0.0
    eb = 0.0
    for a in range(0, n, chunk):
        b = min(a + chunk, n)
        tz, tth, r, wn, eb = _stable_density_path(
            field, z[a:b].copy(), th[a:b].copy(), horizon, dt, burn_in,
            node_stride)
        esK, Kn = _curvature_gradient_flow(field, tz, tth)
        nn = wn.shape[0]
        u = np.zeros_like(wn)
        for k in range(nn - 2, -1, -1):
            ak = np.exp(1.5 * step * (wn[k] + wn[k + 1]))
            u[k] = ak * u[k + 1] + 0.5 * step * (esK[k] + ak * esK[k + 1])
        Iw[a:b] = np.trapezoid(r * u, dx=step, axis=0)
        Iw2[a:b] = np.trapezoid(r * 2.0 * wn * u, dx=step, axis=0)
        ImK[a:b] = np.trapezoid(r * (-esK), dx=step, axis=0)
        sup = max(sup, float(np.max(np.abs(u))),
                  float(np.max(np.abs(2.0 * wn * u))),
                  float(np.max(np.abs(esK))))
        w0[a:b] = wn[0]
        K0[a:b] = Kn[0]
    return w0, K0, Iw, Iw2, ImK, sup, eb


def pinched_positivity_check(field, n, seed=0, burn_in=DEFAULT_BURN_IN,
                             dt=DEFAULT_DT, horizon=16.0, h_s=H_S):
    """Sign decomposition of -int I_{w^s} I_{-K} dm under pinched curvature.

    Both decomposition terms are pointwise nonnegative when K2/K1 <= 6, so
    their sample means must sit above -3 stderr, and their sum must match
    the direct pairing within combined error of the paired difference.
    The equality of the two routes holds for the invariant measure, not
    pointwise, so it genuinely tests the integration-by-parts structure.
    The pinching ratio itself is reported, not asserted.
    """
    z, th = _sample_arrays(field, n, seed)
    w0, K0, Iw, Iw2, ImK, sup, eb = _pinched_orbit_integrals(
        field, z, th, dt, horizon)
    K1, K2 = curvature_bounds(field)
    term1 = K0 / (2.0 * w0 ** 3) * (Iw2 - w0 * Iw) ** 2
    term2 = -w0 * Iw * Iw * (3.0 + K0 / (2.0 * w0 * w0))
    direct = -Iw * ImK
    r1 = _report("pinched_rhs1", term1, seed, burn_in, dt)
    r2 = _report("pinched_rhs2", term2, seed, burn_in, dt)
    rd = _report("pinched_diff", term1 + term2 - direct, seed, burn_in, dt)
    w2 = w0 * w0
    band_tol = 2.0 * math.sqrt(K2) * eb + eb * eb
    viol = max(0.0, float(np.max(K1 - w2)), float(np.max(w2 - K2)))
    tail = sup * math.exp(-math.sqrt(K1) * horizon) / math.sqrt(K1)
    passed = (r1.mean >= -3.0 * r1.stderr and r2.mean >= -3.0 * r2.stderr
              and abs(rd.mean) <= 3.0 * rd.stderr + 3.0 * tail
              and viol <= band_tol)
    return {"rhs1_mean": r1.mean, "rhs1_stderr": r1.stderr,
            "rhs2_mean": r2.mean, "rhs2_stderr": r2.stderr,
            "sum_mean": r1.mean + r2.mean,
            "direct_mean": r1.mean + r2.mean - rd.mean,
            "combined_stderr": rd.stderr,
            "band_violation": viol, "band_tolerance": band_tol,
            "pinching_ratio": K2 / K1, "tail_bound": tail,
            "n": n, "seed": seed, "passed": passed}


# ---------------------------------------------------------------------------
# Jensen configuration check
# ---------------------------------------------------------------------------

def jensen_check(values, weights):
    """Weighted defect sum w_i F_i^2 (F_i - sum w F) for nonnegative F.

    Nonnegative because F and F^2 increase together, and exactly zero when
    F is constant across the support of the weights.
    """
    F = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    assert F.ndim == 1 and F.shape == w.shape, \
        "values and weights must be equal-length vectors"
    assert F.size >= 1, "need at least one value"
    if np.any(F < 0.0):
        raise NegativeInput(f"negative value {float(np.min(F)):.3e}")
    if np.any(w < 0.0):
        raise NegativeInput(f"negative weight {float(np.min(w)):.3e}")
    tot = float(np.sum(w))
    assert abs(tot - 1.0) <= 1e-9, f"weights sum to {tot!r}"
    sup = F[w > 0.0]
    if sup.size == 0 or bool(np.all(sup == sup[0])):
        return 0.0
    Fbar = float(np.dot(w, F))
    return float(np.dot(w, F * F * (F - Fbar)))
