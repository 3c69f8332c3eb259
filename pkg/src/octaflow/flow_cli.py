"""Normalized curvature flow on invariant conformal fields, and the CLI.

The flow moves the conformal factor by d rho / d eps = -(K - Kbar) with
Kbar = -1: at the renormalized area the two agree exactly, the flat field
is a bitwise fixed point, and the discrete stationary state has K = -1 on
the lattice.  Steps are explicit Euler under a parabolic CFL bound, ghost
margins are re-synced every step, and the area is renormalized exactly by
a constant shift, so checkpoint fields live at the target area to machine
precision.

The command line drives the flow and the standalone checks; report paths
receive delimited output plus rendered figures side by side.
"""

from dataclasses import dataclass, replace
import argparse
import math
import os
import sys

import numba
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import CflViolation, CurvaturePositive
from .mobius_geometry import bolza_atlas
from .conformal_field import (DEFAULT_GRID_SPACING, ConformalField,
                              field_from_bumps, gauss_curvature, get_lattice)
from .geodesic_dynamics import DEFAULT_DT
from .liouville_estimators import (CSV_HEADER, _report, _riccati_start,
                                   _sample_arrays, entropy_derivative_fd,
                                   entropy_derivative_formula,
                                   entropy_estimate, identity_checks,
                                   jensen_check, mean_root_curvature,
                                   mrc_derivative_fd, mrc_derivative_formula,
                                   perturbation_from_bumps,
                                   pinched_positivity_check,
                                   ricci_perturbation, riccati_mean_check)

# fraction of the explicit Euler stability limit h^2 / (4 max D) kept as
# safety margin; D = e^{-2 rho} (1 - r^2)^2 / 4 is the parabolic coefficient
CFL_SAFETY = 0.8

# the flow never leaves a thin neighborhood of the flat field for admissible
# starts; a breach means the step went unstable
RHO_BOUND = 0.2

# ghost values near the pairing arcs interpolate across *other* ghost values
# (spectral radius of the ghost-to-ghost block is ~0.98), so iterating the
# plain refill converges far too slowly once the interior moves; the driver
# instead solves (I - G) g = B i exactly, factorized once per lattice
_GHOST_LU_CACHE = {}

FLOW_CSV_HEADER = ("epsilon,h_mean,h_stderr,kappa,k_min,k_max,kbar,pinch,"
                   "dh_formula,dh_fd,dkappa_formula,dkappa_fd,area_defect")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

class ConfigError(Exception):
    """A config file problem the user must fix; reported with exit code 2."""


@dataclass(frozen=True)
class FlowConfig:
    """Run parameters for the flow and the standalone check commands."""

    bump_centers: tuple = (0.2 + 0.1j,)
    bump_amplitudes: tuple = (0.1,)
    bump_width: float = 0.5
    grid_spacing: float = DEFAULT_GRID_SPACING
    dt_flow: float = 0.0          # 0 means the CFL-derived step
    total_flow_time: float = 2.0
    checkpoint_interval: float = 0.1
    n_samples: int = 2500
    # Riccati relaxation is e^{-2 sqrt(K1) t}, under 5e-5 already at t = 8;
    # checkpoints trade the longer default burn-in for sample count
    burn_in: float = 8.0
    dt_geodesic: float = DEFAULT_DT
    seed: int = 0


def _parse_complex_list(s):
    return tuple(complex(t.strip()) for t in s.split(";") if t.strip())


def _parse_float_list(s):
    return tuple(float(t.strip()) for t in s.split(";") if t.strip())


_CONFIG_CASTS = {
    "bump_centers": _parse_complex_list,
    "bump_amplitudes": _parse_float_list,
    "bump_width": float,
    "grid_spacing": float,
    "dt_flow": float,
    "total_flow_time": float,
    "checkpoint_interval": float,
    "n_samples": int,
    "burn_in": float,
    "dt_geodesic": float,
    "seed": int,
}


def load_config(path=None):
    """FlowConfig from a key = value file; '#' starts a comment."""
    cfg = FlowConfig()
    if path is None:
        return cfg
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    updates = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, "
                                  f"got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            cast = _CONFIG_CASTS.get(key)
            if cast is None:
                raise ConfigError(f"{path}:{lineno}: unknown config key: {key}")
            try:
                updates[key] = cast(val.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: "
                                  f"{exc}") from exc
    return replace(cfg, **updates)


def base_field(config):
    """The configured initial field on the configured lattice."""
    atlas = bolza_atlas()
    return field_from_bumps(atlas, list(config.bump_centers),
                            list(config.bump_amplitudes), config.bump_width,
                            grid_spacing=config.grid_spacing)


# ---------------------------------------------------------------------------
# flow stepper
# ---------------------------------------------------------------------------

@numba.njit(cache=True, fastmath=True)
def _euler_kernel(cur, out, upd, c4u, dt, h2i, n):
    mx = 0.0
    for p in range(upd.size):
        f = upd[p]
        lap = (cur[f - 1] + cur[f + 1] + cur[f - n] + cur[f + n]
               - 4.0 * cur[f]) * h2i
        v = cur[f] + dt * (math.exp(-2.0 * cur[f]) * (c4u[p] * lap + 1.0)
                           - 1.0)
        out[f] = v
        a = abs(v)
        if a > mx:
            mx = a
    return mx


@numba.njit(cache=True, fastmath=True)
def _area_kernel(flat, sup, wj):
    s = 0.0
    for p in range(sup.size):
        s += wj[p] * math.exp(2.0 * flat[sup[p]])
    return s


@numba.njit(cache=True)
def _shift_kernel(flat, idx, c):
    for p in range(idx.size):
        flat[idx[p]] += c


def _ghost_solver(lat):
    """LU factorization of the exact ghost-consistency system for lat."""
    key = float(lat.h)
    hit = _GHOST_LU_CACHE.get(key)
    if hit is not None and hit[0] is lat:
        return hit[1]
    eye = sparse.identity(lat.fill_idx.size, format="csc")
    lu = splu((eye - lat.fill_mat[:, lat.fill_idx]).tocsc())
    _GHOST_LU_CACHE[key] = (lat, lu)
    return lu


class _FlowDriver:
    """Mutable double-buffered stepper over the lattice nodal values.

    ConformalField objects are immutable and refit their interpolation
    tables, so the long stepping loop works on raw arrays and only freezes
    a field object at checkpoints.
    """

    def __init__(self, atlas, grid_spacing, values):
        lat = get_lattice(atlas, grid_spacing)
        self.atlas = atlas
        self.grid_spacing = float(grid_spacing)
        self.lat = lat
        self.cur = np.array(values, dtype=np.float64)
        assert self.cur.shape == (lat.n, lat.n), \
            f"values shape {self.cur.shape} does not match lattice {lat.n}"
        self.out = self.cur.copy()
        self.upd = np.flatnonzero(lat.inside.ravel())
        self.eval_idx = np.flatnonzero(lat.evalmask.ravel())
        self.c4u = ((1.0 - lat.r2) ** 2 / 4.0).ravel()[self.upd].copy()
        self.wj = (lat.W_sup * lat.J0_sup).copy()
        self.h2i = 1.0 / (lat.h * lat.h)
        self.max_abs = float(np.max(np.abs(self.cur)))
        self.steps_taken = 0
        self.ghost_lu = _ghost_solver(lat)

    def _sync(self, flat):
        """Exact ghost extension of the interior values, in place."""
        lat = self.lat
        flat[lat.fill_idx] = 0.0
        b = lat.fill_mat @ flat
        flat[lat.fill_idx] = self.ghost_lu.solve(b)

    def cfl_limit(self):
        """Largest admissible Euler step for the current values."""
        d = (np.exp(-2.0 * self.cur.ravel()[self.upd]) * self.c4u)
        return CFL_SAFETY * self.lat.h * self.lat.h / (4.0 * float(np.max(d)))

    def step(self, dt):
        lat = self.lat
        cur = self.cur.reshape(-1)
        out = self.out.reshape(-1)
        mx = _euler_kernel(cur, out, self.upd, self.c4u, dt, self.h2i, lat.n)
        assert math.isfinite(mx) and mx <= RHO_BOUND, \
            f"flow left the admissible band, max |rho| = {mx:.3e}"
        self._sync(out)
        area = _area_kernel(out, lat.sup_idx, self.wj)
        assert area > 0.0
        c = -0.5 * math.log(area / lat.area_target)
        _shift_kernel(out, self.eval_idx, c)
        self.cur, self.out = self.out, self.cur
        self.max_abs = mx + abs(c)
        self.steps_taken += 1

    def freeze(self):
        """Sync ghosts exactly and return an immutable field.

        The exact extension must be a fixed point of the plain linear
        refill, which cross-checks the factorized solve against the
        lattice's own operator.
        """
        self._sync(self.cur.reshape(-1))
        probe = self.cur.copy()
        self.lat.refill(probe)
        drift = float(np.max(np.abs(probe - self.cur)))
        assert drift <= 1e-11, \
            f"ghost solve is not refill-stationary, drift {drift:.2e}"
        return ConformalField(self.atlas, self.grid_spacing, self.cur.copy())


def ricci_step(field, dt=0.0):
    """One explicit Euler step of the normalized flow, area restored exactly.

    dt = 0 takes the CFL-derived step.  An explicit dt beyond the stability
    bound raises CflViolation; a step that pushes curvature to 0 anywhere on
    the quadrature support raises CurvaturePositive.
    """
    drv = _FlowDriver(field.atlas, field.grid_spacing, field.values)
    limit = drv.cfl_limit()
    if dt == 0.0:
        dt = limit
    elif dt > limit or dt <= 0.0:
        raise CflViolation(f"dt {dt:.3e} outside (0, {limit:.3e}]")
    drv.step(dt)
    out = drv.freeze()
    ks = gauss_curvature(out).values.ravel()[out.lattice.sup_idx]
    mxk = float(np.max(ks))
    if mxk >= 0.0:
        raise CurvaturePositive(f"flow reached K = {mxk:.3e}")
    assert abs(out.area - out.lattice.area_target) <= 1e-9 * out.area, \
        f"area renormalization drifted to {out.area!r}"
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class FlowCheckpoint:
    """Observables of one flow time; the CSV row carries the contract
    columns, stderr fields ride along for significance tests."""

    epsilon: float
    h_mean: float
    h_stderr: float
    kappa: float
    k_min: float
    k_max: float
    kbar: float
    pinch: float
    dh_formula: float
    dh_fd: float
    dkappa_formula: float
    dkappa_fd: float
    area_defect: float
    dh_stderr: float = 0.0
    dh_fd_stderr: float = 0.0

    def csv_row(self):
        return ",".join(repr(v) for v in (
            self.epsilon, self.h_mean, self.h_stderr, self.kappa, self.k_min,
            self.k_max, self.kbar, self.pinch, self.dh_formula, self.dh_fd,
            self.dkappa_formula, self.dkappa_fd, self.area_defect))


def _checkpoint(field, epsilon, config, index):
    """All checkpoint observables of one frozen field."""
    seed = config.seed * 1000 + index
    K = gauss_curvature(field)
    ks = K.values.ravel()[field.lattice.sup_idx]
    k_min = float(np.min(ks))
    k_max = float(np.max(ks))
    if k_max >= 0.0:
        raise CurvaturePositive(f"checkpoint at eps = {epsilon:g} has "
                                f"K = {k_max:.3e}")
    kappa = mean_root_curvature(field)

    z, th = _sample_arrays(field, config.n_samples, seed)
    w, _, _ = _riccati_start(field, z, th, config.burn_in,
                             config.dt_geodesic, "stable")
    kv = field.chart_data(z)[3]
    assert float(np.max(kv)) < 0.0, "positive curvature at a sampled tangent"
    # sqrt(-K) at the sample base points is a control variate for the
    # entropy: its area average is the quadrature kappa, known to far
    # better accuracy than the sample mean, and -w^s tracks it closely
    h_rep = _report("entropy", -w - np.sqrt(-kv) + kappa, seed,
                    config.burn_in, config.dt_geodesic)
    # dh formula reuses the entropy samples: psi = -(K - Kbar) evaluated
    # through the same splines, with the mean Riccati value subtracted as
    # control variate (zero pairing makes it free in expectation)
    psiv = K.kbar - kv
    wbar = float(np.sum(w) / w.size)
    dh_rep = _report("dh_formula", -0.5 * psiv * (w - wbar), seed,
                     config.burn_in, config.dt_geodesic)

    psi = ricci_perturbation(field)
    fd_rep = entropy_derivative_fd(field, psi, max(config.n_samples // 2, 500),
                                   eps=1e-2, seed=seed,
                                   burn_in=config.burn_in,
                                   dt=config.dt_geodesic)
    return FlowCheckpoint(
        epsilon=float(epsilon), h_mean=h_rep.mean, h_stderr=h_rep.stderr,
        kappa=kappa, k_min=k_min, k_max=k_max, kbar=K.kbar,
        pinch=k_min / k_max, dh_formula=dh_rep.mean, dh_fd=fd_rep.mean,
        dkappa_formula=mrc_derivative_formula(field, psi),
        dkappa_fd=mrc_derivative_fd(field, psi, eps=1e-3),
        area_defect=field.area / field.lattice.area_target - 1.0,
        dh_stderr=dh_rep.stderr, dh_fd_stderr=fd_rep.stderr)


def run_flow(config, on_checkpoint=None):
    """Flow the configured field and record checkpoints every interval.

    Returns (checkpoints, final_field).  on_checkpoint, when given, receives
    each FlowCheckpoint as soon as it exists, so callers can persist partial
    results if a later step fails.
    """
    assert config.total_flow_time > 0.0 and config.checkpoint_interval > 0.0
    n_checks = int(round(config.total_flow_time / config.checkpoint_interval))
    assert abs(n_checks * config.checkpoint_interval
               - config.total_flow_time) <= 1e-9, \
        "checkpoint_interval must divide total_flow_time"

    field = base_field(config)
    drv = _FlowDriver(field.atlas, field.grid_spacing, field.values)
    limit = drv.cfl_limit()
    dt = config.dt_flow if config.dt_flow > 0.0 else limit
    if dt > limit:
        raise CflViolation(f"dt_flow {dt:.3e} exceeds the stability bound "
                           f"{limit:.3e}")
    per = max(1, int(math.ceil(config.checkpoint_interval / dt - 1e-12)))
    dt = config.checkpoint_interval / per

    checkpoints = []

    def record(fld, eps, k):
        cp = _checkpoint(fld, eps, config, k)
        checkpoints.append(cp)
        if on_checkpoint is not None:
            on_checkpoint(cp)

    record(field, 0.0, 0)
    last = field
    for k in range(1, n_checks + 1):
        for _ in range(per):
            drv.step(dt)
        # the admissible band keeps shrinking toward the flat field, so the
        # starting bound becomes less binding as the flow runs; recheck anyway
        assert dt <= drv.cfl_limit() / CFL_SAFETY, \
            f"step {dt:.3e} left the stability region at eps = " \
            f"{k * config.checkpoint_interval:g}"
        last = drv.freeze()
        record(last, k * config.checkpoint_interval, k)
    return checkpoints, last


def write_flow_csv(checkpoints, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FLOW_CSV_HEADER + "\n")
        for cp in checkpoints:
            fh.write(cp.csv_row() + "\n")


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_flow_figures(checkpoints, final_field, out_dir):
    """flow_summary.png and curvature_final.png next to the CSV."""
    plt = _pyplot()
    eps = [c.epsilon for c in checkpoints]
    fig, ax = plt.subplots(2, 2, figsize=(9.6, 7.2))
    h = np.array([c.h_mean for c in checkpoints])
    hs = np.array([c.h_stderr for c in checkpoints])
    ax[0, 0].errorbar(eps, h, yerr=3.0 * hs, fmt="o-", ms=3, capsize=2)
    ax[0, 0].set_title("Liouville entropy (3 stderr)")
    ax[0, 1].plot(eps, [c.kappa for c in checkpoints], "o-", ms=3)
    ax[0, 1].set_title("mean root curvature")
    sup = [max(abs(c.k_min + 1.0), abs(c.k_max + 1.0)) for c in checkpoints]
    ax[1, 0].semilogy(eps, sup, "o-", ms=3)
    ax[1, 0].set_title("sup |K + 1|")
    dh = np.array([c.dh_formula for c in checkpoints])
    ds = np.array([c.dh_stderr for c in checkpoints])
    ax[1, 1].errorbar(eps, dh, yerr=3.0 * ds, fmt="o-", ms=3, capsize=2)
    ax[1, 1].axhline(0.0, color="k", lw=0.8)
    ax[1, 1].set_title("entropy derivative formula (3 stderr)")
    for a in ax.ravel():
        a.set_xlabel("flow time")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "flow_summary.png"), dpi=110)
    plt.close(fig)

    lat = final_field.lattice
    K = gauss_curvature(final_field).values.copy()
    K[~lat.inside] = np.nan
    ext = [lat.xs[0], lat.xs[-1], lat.xs[0], lat.xs[-1]]
    fig, a = plt.subplots(figsize=(6.4, 5.4))
    im = a.imshow(K.T, origin="lower", extent=ext, cmap="viridis")
    fig.colorbar(im, ax=a, label="K")
    a.set_title(f"curvature at flow time {checkpoints[-1].epsilon:g}")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "curvature_final.png"), dpi=110)
    plt.close(fig)


def render_entropy_figure(values, out_dir):
    plt = _pyplot()
    fig, a = plt.subplots(figsize=(6.4, 4.4))
    a.hist(values, bins=60, color="tab:blue", alpha=0.85)
    a.set_xlabel("-w^s")
    a.set_ylabel("samples")
    a.set_title("entropy integrand distribution")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "entropy_hist.png"), dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# jensen sweep
# ---------------------------------------------------------------------------

def jensen_sweep(trials, size=8, seed=0):
    """Random nonnegative configurations through the defect functional.

    Every tenth trial uses a constant vector, which must give exactly zero;
    the rest must stay above -1e-12.  Returns the observed extremes.
    """
    assert trials >= 1 and size >= 2
    key = np.empty(2, dtype=np.uint64)
    key[0] = int(seed)
    key[1] = 1 << 32
    rng = np.random.Generator(np.random.Philox(key=key))
    min_val = math.inf
    max_const = 0.0
    for t in range(trials):
        k = 2 + t % (size - 1)
        w = rng.random(k) + 1e-12
        w /= w.sum()
        if t % 10 == 9:
            F = np.full(k, float(rng.random() * 10.0))
            max_const = max(max_const, abs(jensen_check(F, w)))
        else:
            F = rng.random(k) * 10.0
            min_val = min(min_val, jensen_check(F, w))
    return {"trials": trials, "min_value": min_val,
            "max_constant_defect": max_const,
            "passed": min_val >= -1e-12 and max_const == 0.0}


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def _cmd_flow(cfg, out_dir):
    rows = []

    def keep(cp):
        rows.append(cp)
        print(f"eps {cp.epsilon:6.3f}  h {cp.h_mean:.6f}  "
              f"kappa {cp.kappa:.9f}  sup|K+1| "
              f"{max(abs(cp.k_min + 1.0), abs(cp.k_max + 1.0)):.3e}",
              flush=True)

    path = os.path.join(out_dir, "flow.csv")
    try:
        checkpoints, final = run_flow(cfg, on_checkpoint=keep)
    except (CurvaturePositive, CflViolation, AssertionError) as exc:
        write_flow_csv(rows, path)
        print(f"FAIL flow: {exc}", file=sys.stderr)
        return 1
    write_flow_csv(checkpoints, path)
    render_flow_figures(checkpoints, final, out_dir)
    return 0


def _cmd_entropy(cfg, out_dir):
    field = base_field(cfg)
    rep = entropy_estimate(field, cfg.n_samples, burn_in=cfg.burn_in,
                           dt=cfg.dt_geodesic, seed=cfg.seed)
    mean_check = riccati_mean_check(field, cfg.n_samples, seed=cfg.seed,
                                    burn_in=cfg.burn_in, dt=cfg.dt_geodesic)
    _write_rows(os.path.join(out_dir, "entropy.csv"), CSV_HEADER,
                [rep.csv_row(), rep.dual.csv_row(), mean_check.csv_row()])
    # same tangents as the report, so the figure shows exactly its sample
    z, th = _sample_arrays(field, cfg.n_samples, cfg.seed)
    w, _, _ = _riccati_start(field, z, th, cfg.burn_in, cfg.dt_geodesic,
                             "stable")
    render_entropy_figure(-w, out_dir)
    gap = abs(rep.mean - rep.dual.mean)
    tol = 3.0 * math.hypot(rep.stderr, rep.dual.stderr)
    print(f"entropy {rep.mean:.6f} +- {rep.stderr:.2e}   "
          f"dual {rep.dual.mean:.6f} +- {rep.dual.stderr:.2e}")
    if gap > tol:
        print(f"FAIL duality: gap {gap:.3e} > {tol:.3e}", file=sys.stderr)
        return 1
    return 0


def _cmd_verify_derivative(cfg, out_dir):
    field = base_field(cfg)
    bump_psi = perturbation_from_bumps(field, list(cfg.bump_centers),
                                       list(cfg.bump_amplitudes),
                                       cfg.bump_width)
    ricci_psi = ricci_perturbation(field)
    rows = []
    failures = []
    for name, psi in (("ricci", ricci_psi), ("bump", bump_psi)):
        form = entropy_derivative_formula(field, psi, cfg.n_samples,
                                          seed=cfg.seed, burn_in=cfg.burn_in,
                                          dt=cfg.dt_geodesic)
        fd = entropy_derivative_fd(field, psi, cfg.n_samples, eps=1e-2,
                                   seed=cfg.seed, burn_in=cfg.burn_in,
                                   dt=cfg.dt_geodesic)
        form.quantity = f"dh_formula_{name}"
        fd.quantity = f"dh_fd_{name}"
        rows += [form.csv_row(), fd.csv_row()]
        gap = abs(form.mean - fd.mean)
        tol = 3.0 * math.hypot(form.stderr, fd.stderr) + 1e-3
        print(f"{'PASS' if gap <= tol else 'FAIL'} entropy derivative "
              f"({name}): gap {gap:.3e} tol {tol:.3e}")
        if gap > tol:
            failures.append(f"entropy derivative ({name})")
    mform = mrc_derivative_formula(field, bump_psi)
    mfd = mrc_derivative_fd(field, bump_psi, eps=1e-3)
    rows += [f"dkappa_formula_bump,{mform!r},0.0,0,{cfg.seed},0.0,0.0,0.0",
             f"dkappa_fd_bump,{mfd!r},0.0,0,{cfg.seed},0.0,0.0,0.0"]
    rel = abs(mform - mfd) / abs(mfd)
    print(f"{'PASS' if rel <= 1e-2 else 'FAIL'} curvature-average derivative: "
          f"relative gap {rel:.3e}")
    if rel > 1e-2:
        failures.append("curvature-average derivative")
    _write_rows(os.path.join(out_dir, "derivative.csv"), CSV_HEADER, rows)
    if failures:
        print(f"FAIL verify derivative: {'; '.join(failures)}",
              file=sys.stderr)
        return 1
    return 0


def _cmd_verify_identities(cfg, out_dir):
    field = base_field(cfg)
    checks = identity_checks(field, n=50, seed=cfg.seed, dt=cfg.dt_geodesic)
    rows = [f"{c['name']},{c['error']!r},{c['tol']!r},{c['scale']!r},"
            f"{c['passed']}" for c in checks]
    _write_rows(os.path.join(out_dir, "identities.csv"),
                "name,error,tol,scale,passed", rows)
    bad = []
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: "
              f"error {c['error']:.3e} tol {c['tol']:.3e}")
        if not c["passed"]:
            bad.append(c["name"])
    if bad:
        print(f"FAIL verify identities: {'; '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def _cmd_verify_pinched(cfg, out_dir):
    field = base_field(cfg)
    res = pinched_positivity_check(field, cfg.n_samples, seed=cfg.seed,
                                   burn_in=cfg.burn_in, dt=cfg.dt_geodesic)
    keys = ["rhs1_mean", "rhs1_stderr", "rhs2_mean", "rhs2_stderr",
            "sum_mean", "direct_mean", "combined_stderr", "band_violation",
            "band_tolerance", "pinching_ratio", "tail_bound", "n", "seed",
            "passed"]
    _write_rows(os.path.join(out_dir, "pinched.csv"), ",".join(keys),
                [",".join(repr(res[k]) for k in keys)])
    print(f"terms {res['rhs1_mean']:.4e} + {res['rhs2_mean']:.4e} "
          f"vs direct {res['direct_mean']:.4e} "
          f"(combined stderr {res['combined_stderr']:.1e})")
    if not res["passed"]:
        print("FAIL verify pinched: decomposition check failed",
              file=sys.stderr)
        return 1
    print("PASS verify pinched")
    return 0


def _cmd_jensen(args, out_dir):
    res = jensen_sweep(args.trials, size=args.size, seed=args.seed)
    _write_rows(os.path.join(out_dir, "jensen.csv"),
                "trials,min_value,max_constant_defect,passed",
                [f"{res['trials']},{res['min_value']!r},"
                 f"{res['max_constant_defect']!r},{res['passed']}"])
    print(f"min defect {res['min_value']:.3e} over {res['trials']} trials, "
          f"constant defect {res['max_constant_defect']:.1e}")
    if not res["passed"]:
        print("FAIL jensen: defect functional went negative", file=sys.stderr)
        return 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="octaflow",
        description="curvature flow and entropy estimators on the "
                    "genus-2 octagon surface")
    p.add_argument("--config", help="key = value parameter file")
    p.add_argument("--out", default=".", help="output directory for CSV "
                   "and figures (default: current directory)")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("flow", help="run the normalized flow, write flow.csv "
                   "and figures")
    sub.add_parser("entropy", help="entropy estimate on the configured "
                   "field, write entropy.csv and histogram")
    pv = sub.add_parser("verify", help="run one check family")
    pv.add_argument("check", choices=["derivative", "identities", "pinched"])
    pj = sub.add_parser("jensen", help="random sweep of the Jensen defect "
                        "functional")
    pj.add_argument("--trials", type=int, default=100000)
    pj.add_argument("--size", type=int, default=8)
    pj.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    if args.command == "flow":
        return _cmd_flow(cfg, out_dir)
    if args.command == "entropy":
        return _cmd_entropy(cfg, out_dir)
    if args.command == "verify":
        if args.check == "derivative":
            return _cmd_verify_derivative(cfg, out_dir)
        if args.check == "identities":
            return _cmd_verify_identities(cfg, out_dir)
        return _cmd_verify_pinched(cfg, out_dir)
    return _cmd_jensen(args, out_dir)


if __name__ == "__main__":
    sys.exit(main())
