"""Poincare-disk model of the genus-2 octagon surface.

The surface is the unit disk modulo the Fuchsian group generated by eight
hyperbolic translations pairing opposite sides of a regular octagon.  The
octagon is the Ford fundamental domain: the set of points lying outside the
isometric circles of all eight generators.  Reduction into the domain is a
greedy walk: apply whichever generator moves the point closest to the origin
until none does.
"""

from dataclasses import dataclass
import cmath
import math

import numpy as np

from .errors import NotReducible

# Greedy reduction applies a generator only if it shrinks |z| by more than
# this wall tolerance; guarantees reduce(reduce(z)) is the identity word.
_WALL_TOL = 1e-14
_MAX_REDUCE_STEPS = 16
DEFAULT_MARGIN = 0.15


@dataclass(frozen=True)
class DiskPoint:
    """A point of the open unit disk, kept strictly away from the ideal circle."""

    z: complex

    def __post_init__(self):
        if abs(self.z) >= 1.0 - 1e-12:
            raise ValueError(f"point too close to the ideal boundary: |z|={abs(self.z)!r}")


@dataclass(frozen=True)
class MobiusMap:
    """Disk isometry z -> (a z + b) / (conj(b) z + conj(a)) with |a|^2 - |b|^2 = 1."""

    a: complex
    b: complex

    def __post_init__(self):
        det = abs(self.a) ** 2 - abs(self.b) ** 2
        if abs(det - 1.0) > 1e-12:
            raise ValueError(f"not a unit-determinant disk isometry: det={det!r}")

    def inverse(self):
        return MobiusMap(self.a.conjugate(), -self.b)

    def compose(self, other):
        """Map equal to (self o other)."""
        a1, b1 = self.a, self.b
        a2, b2 = other.a, other.b
        a = a1 * a2 + b1 * b2.conjugate()
        b = a1 * b2 + b1 * a2.conjugate()
        # real rescale leaves the transformation unchanged; keeps the unit
        # determinant exact over long compositions
        s = 1.0 / math.sqrt(abs(a) ** 2 - abs(b) ** 2)
        return MobiusMap(s * a, s * b)


IDENTITY = MobiusMap(1.0 + 0.0j, 0.0 + 0.0j)


def mobius_apply(m, z):
    """Apply a disk isometry.  z may be complex or a DiskPoint; the result
    has the same kind as the input."""
    if isinstance(z, DiskPoint):
        return DiskPoint(mobius_apply(m, z.z))
    num = m.a * z + m.b
    den = m.b.conjugate() * z + m.a.conjugate()
    return num / den


def mobius_derivative(m, z):
    """Complex derivative of the map at z (conformal factor of the chart action)."""
    den = m.b.conjugate() * z + m.a.conjugate()
    return 1.0 / (den * den)


def hyperbolic_distance(z1, z2):
    """Distance in the curvature -1 metric 2|dz|/(1-|z|^2)."""
    if isinstance(z1, DiskPoint):
        z1 = z1.z
    if isinstance(z2, DiskPoint):
        z2 = z2.z
    q = abs((z1 - z2) / (1.0 - z2.conjugate() * z1))
    return 2.0 * math.atanh(q)


@dataclass(frozen=True)
class SurfaceAtlas:
    """The eight side-pairing generators and the fundamental octagon data.

    generators[k] for k in 0..3 translates the side facing direction
    k*pi/4 + pi onto the opposite side; generators[4+k] are their inverses.
    octagon_vertices are the eight corners, at radius vertex_radius.
    """

    generators: tuple
    octagon_vertices: tuple
    vertex_radius: float

    # cached flat arrays for vectorized work (same object identity per atlas)
    def __post_init__(self):
        ga = np.array([g.a for g in self.generators], dtype=np.complex128)
        gb = np.array([g.b for g in self.generators], dtype=np.complex128)
        object.__setattr__(self, "_ga", ga)
        object.__setattr__(self, "_gb", gb)
        # isometric circles |conj(b) z + conj(a)| = 1: center -conj(a)/conj(b), radius 1/|b|
        object.__setattr__(self, "_iso_centers", -ga.conjugate() / gb.conjugate())
        object.__setattr__(self, "_iso_radius", float(1.0 / abs(gb[0])))


def bolza_atlas():
    """Atlas of the regular-octagon genus-2 surface.

    Generator matrices have a = 1 + sqrt(2) and b = sqrt(2 + 2 sqrt(2)) e^{i k pi/4};
    the unit-determinant identity (1+sqrt2)^2 - (2+2sqrt2) = 1 is exact.  Octagon
    vertices sit at radius 2^(-1/4) in directions pi/8 + k pi/4.
    """
    a = 1.0 + math.sqrt(2.0)
    bmod = math.sqrt(2.0 + 2.0 * math.sqrt(2.0))
    gens = []
    for k in range(4):
        b = bmod * cmath.exp(1j * k * math.pi / 4)
        gens.append(MobiusMap(a + 0j, b))
    for k in range(4):
        b = bmod * cmath.exp(1j * k * math.pi / 4)
        gens.append(MobiusMap(a + 0j, -b))
    vr = 2.0 ** (-0.25)
    verts = tuple(vr * cmath.exp(1j * (math.pi / 8 + k * math.pi / 4)) for k in range(8))
    return SurfaceAtlas(generators=tuple(gens), octagon_vertices=verts, vertex_radius=vr)


def octagon_contains(atlas, z, tol=_WALL_TOL):
    """True if z lies in the closed fundamental octagon (within tol of the walls).

    Accepts a complex scalar or ndarray; vectorized over the trailing shape.
    """
    if isinstance(z, DiskPoint):
        z = z.z
    z = np.asarray(z, dtype=np.complex128)
    den = np.abs(z[..., None] * atlas._gb.conjugate() + atlas._ga.conjugate())
    return np.min(den, axis=-1) >= 1.0 - tol


def _canonicalize(atlas, z, need_deriv=False, max_steps=_MAX_REDUCE_STEPS):
    """Vectorized greedy reduction of a complex array into the octagon.

    Returns (z_reduced, deriv, n_left) where deriv is the accumulated complex
    derivative d(z_reduced)/dz of the reduction map (None unless need_deriv)
    and n_left counts points still outside after max_steps (0 on success).
    Callers decide whether a nonzero n_left is an error.
    """
    z = np.array(z, dtype=np.complex128, copy=True)
    flat = z.reshape(-1)
    deriv = np.ones(flat.shape, dtype=np.complex128) if need_deriv else None
    ga = atlas._ga
    gb = atlas._gb
    gac = ga.conjugate()
    gbc = gb.conjugate()
    active = np.arange(flat.shape[0])
    for _ in range(max_steps):
        za = flat[active]
        den = za[:, None] * gbc[None, :] + gac[None, :]
        f = np.abs(den)
        kbest = np.argmin(f, axis=1)
        rows = np.arange(za.shape[0])
        fbest = f[rows, kbest]
        todo = fbest < 1.0 - _WALL_TOL
        if not np.any(todo):
            active = active[:0]
            break
        sel = active[todo]
        kb = kbest[todo]
        db = den[rows[todo], kb]
        flat[sel] = (ga[kb] * flat[sel] + gb[kb]) / db
        if need_deriv:
            deriv[sel] /= db * db
        active = sel
    n_left = 0
    if active.size:
        za = flat[active]
        den = np.abs(za[:, None] * gbc[None, :] + gac[None, :])
        n_left = int(np.sum(np.min(den, axis=1) < 1.0 - _WALL_TOL))
    return z if z.ndim else flat[0], deriv, n_left


def reduce_to_domain(atlas, z, margin=DEFAULT_MARGIN):
    """Bring a point into the closed fundamental octagon.

    Returns (DiskPoint, MobiusMap): the reduced point and the map carrying it
    back, so that mobius_apply(word, reduced) reproduces the input to 1e-10.
    Greedy: at each step apply the generator that most decreases hyperbolic
    distance to the origin (lowest index on ties); stop when none decreases.
    Raises NotReducible outside the supported neighborhood
    |z| <= vertex_radius + margin or if 16 steps do not suffice.
    """
    if isinstance(z, DiskPoint):
        z = z.z
    if abs(z) > atlas.vertex_radius + margin:
        raise NotReducible(f"|z|={abs(z):.6f} beyond supported radius "
                           f"{atlas.vertex_radius + margin:.6f}")
    ga = atlas._ga
    gb = atlas._gb
    word = IDENTITY
    cur = complex(z)
    for _ in range(_MAX_REDUCE_STEPS):
        den = cur * gb.conjugate() + ga.conjugate()
        f = np.abs(den)
        k = int(np.argmin(f))
        if f[k] >= 1.0 - _WALL_TOL:
            return DiskPoint(cur), word
        cur = (ga[k] * cur + gb[k]) / den[k]
        word = word.compose(MobiusMap(ga[k], gb[k]).inverse())
    raise NotReducible(f"reduction of z={z!r} did not terminate in "
                       f"{_MAX_REDUCE_STEPS} steps")
