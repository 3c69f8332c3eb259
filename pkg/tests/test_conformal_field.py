import math

import numpy as np
import pytest

from octaflow import (
    ConformalField,
    CurvaturePositive,
    OutOfRange,
    area_integral,
    evaluate,
    field_from_bumps,
    gauss_curvature,
    load_snapshot,
    mobius_apply,
    octagon_contains,
    save_snapshot,
)
from octaflow.conformal_field import (
    _apply_words,
    _batch_distance,
    _orbit_words,
    bump_profile,
    get_lattice,
)

FOUR_PI = 4.0 * math.pi
CENTER = 0.2 + 0.1j


def test_zero_field_is_exactly_zero(atlas, zero_field):
    assert np.all(zero_field.values == 0.0)
    f2 = field_from_bumps(atlas, [CENTER], [0.0], 0.5)
    assert np.all(f2.values == 0.0), "zero-amplitude bump must vanish"


def test_zero_field_area_and_curvature(atlas, zero_field):
    lat = zero_field.lattice
    assert abs(zero_field.area / FOUR_PI - 1.0) < 1e-4
    cf = gauss_curvature(zero_field)
    assert np.max(np.abs(cf.values[lat.inside] + 1.0)) == 0.0
    assert abs(cf.kbar + 1.0) < 1e-4


def test_zero_field_evaluate(zero_field):
    rho, grad, lap = evaluate(zero_field, 0.31 - 0.22j)
    assert rho == 0.0 and lap == 0.0
    assert np.all(grad == 0.0)


def test_constant_field_curvature(atlas):
    lat = get_lattice(atlas, 2.0 / 128)
    c = 0.17
    f = ConformalField(atlas, 2.0 / 128, np.full((lat.n, lat.n), c))
    cf = gauss_curvature(f)
    expect = -math.exp(-2.0 * c)
    assert np.max(np.abs(cf.values[lat.inside] - expect)) < 1e-14


def test_area_oracles(atlas, zero_field):
    lat = zero_field.lattice
    one = np.ones((lat.n, lat.n))
    assert area_integral(zero_field, one) == pytest.approx(FOUR_PI, rel=1e-4)
    K = gauss_curvature(zero_field).values
    assert area_integral(zero_field, K) == pytest.approx(-FOUR_PI, rel=1e-3)
    assert area_integral(zero_field, np.sqrt(-K)) == pytest.approx(FOUR_PI, rel=1e-4)


def test_bump_field_curvature_range(atlas, bump_field):
    lat = bump_field.lattice
    cf = gauss_curvature(bump_field)
    kin = cf.values[lat.inside]
    assert kin.max() > -1.0 > kin.min(), \
        f"curvature range [{kin.min():.3f}, {kin.max():.3f}] should straddle -1"
    assert kin.max() < 0.0
    assert abs(cf.kbar + 1.0) < 1e-4, f"Gauss-Bonnet mean {cf.kbar}"


def test_gauss_bonnet(atlas, bump_field):
    K = gauss_curvature(bump_field).values
    assert area_integral(bump_field, K) == pytest.approx(-FOUR_PI, rel=1e-3)


def test_refinement_convergence(atlas):
    defects = []
    for h in (2.0 / 128, 2.0 / 256):
        f = field_from_bumps(atlas, [CENTER], [0.1], 0.5, grid_spacing=h)
        K = gauss_curvature(f).values
        defects.append(abs(area_integral(f, K) + FOUR_PI))
    assert defects[1] <= defects[0] / 3.0, \
        f"halving the spacing only took the defect from {defects[0]:.3e} " \
        f"to {defects[1]:.3e}"


def test_curvature_positive_guard(atlas):
    # amplitude beyond 1/6 drives the curvature positive at the bump peak
    with pytest.raises(CurvaturePositive):
        field_from_bumps(atlas, [CENTER], [0.2], 0.5)


def test_truncation_guard(atlas):
    with pytest.raises(ValueError):
        field_from_bumps(atlas, [CENTER], [0.01], 5.0)


def test_invariance_rho_and_K(atlas, bump_field):
    rng = np.random.default_rng(5)
    pts = []
    while len(pts) < 1000:
        z = complex(*rng.uniform(-0.85, 0.85, 2))
        if octagon_contains(atlas, z):
            pts.append(z)
    pts = np.array(pts)
    worst_rho = worst_K = 0.0
    for g in atlas.generators:
        gz = np.array([mobius_apply(g, z) for z in pts])
        ok = np.abs(gz) <= atlas.vertex_radius + 0.15
        r1, _, l1 = evaluate(bump_field, pts[ok])
        r2, _, l2 = evaluate(bump_field, gz[ok])
        K1 = np.exp(-2 * r1) * (-l1 - 1)
        K2 = np.exp(-2 * r2) * (-l2 - 1)
        worst_rho = max(worst_rho, float(np.max(np.abs(r1 - r2), initial=0)))
        worst_K = max(worst_K, float(np.max(np.abs(K1 - K2), initial=0)))
    assert worst_rho <= 1e-8, f"rho invariance violated: {worst_rho:.3e}"
    assert worst_K <= 1e-6, f"K invariance violated: {worst_K:.3e}"


def test_evaluate_matches_orbit_sum(atlas, bump_field):
    # interpolated differences must match the closed-form orbit sum; the
    # area-normalizing constant cancels in the difference
    w2a, w2b = _orbit_words(atlas, 2)
    wa = np.concatenate([np.array([1.0 + 0j]), atlas._ga, w2a])
    wb = np.concatenate([np.array([0j]), atlas._gb, w2b])
    img = _apply_words(wa, wb, CENTER)

    def raw(z):
        return 0.1 * bump_profile(_batch_distance(z, img), 0.5).sum()

    zref = -0.31 + 0.44j
    for z in (CENTER, 0.05 - 0.3j, 0.52 + 0.08j):
        got = evaluate(bump_field, z)[0] - evaluate(bump_field, zref)[0]
        want = raw(z) - raw(zref)
        assert abs(got - want) < 1e-6, f"orbit-sum mismatch at {z}: " \
            f"{got} vs {want}"


def test_evaluate_gradient_consistency(bump_field):
    # reported gradient must differentiate the reported value (C1 claim)
    h = 1e-5
    for z in (0.21 + 0.13j, -0.4 + 0.3j, 0.6 - 0.1j):
        _, grad, _ = evaluate(bump_field, z)
        fx = (evaluate(bump_field, z + h)[0] - evaluate(bump_field, z - h)[0]) / (2 * h)
        fy = (evaluate(bump_field, z + 1j * h)[0]
              - evaluate(bump_field, z - 1j * h)[0]) / (2 * h)
        assert abs(grad[0] - fx) < 1e-6 and abs(grad[1] - fy) < 1e-6


def test_evaluate_out_of_range(bump_field):
    with pytest.raises(OutOfRange):
        evaluate(bump_field, 0.996 + 0.0j)


def test_ghost_refill_identity_on_invariant_field(atlas, bump_field):
    # refilling an invariant field must reproduce it to interpolation
    # accuracy; the floor is set by the bump-rim fourth derivative times h^4
    lat = bump_field.lattice
    v = bump_field.values.copy()
    lat.refill(v)
    assert np.max(np.abs(v - bump_field.values)) < 2e-6


def test_snapshot_roundtrip(tmp_path, atlas, bump_field):
    p = tmp_path / "field.txt"
    save_snapshot(bump_field, p)
    back = load_snapshot(p, atlas)
    assert np.array_equal(back.values, bump_field.values)
    assert back.grid_spacing == bump_field.grid_spacing
    save_snapshot(back, tmp_path / "field2.txt")
    assert (tmp_path / "field2.txt").read_bytes() == p.read_bytes()


def test_field_values_immutable(bump_field):
    with pytest.raises(ValueError):
        bump_field.values[0, 0] = 1.0
