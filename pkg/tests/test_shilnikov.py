import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from sliding_shilnikov.core import find_pseudo_equilibria
from sliding_shilnikov.errors import PreconditionError
from sliding_shilnikov.pwl_model import PwlParams, build_model
from sliding_shilnikov.shilnikov import (FoldArc, LoopGeometry, count_orbits,
                                         find_periodic_orbits, model_unfolding, mu_curve,
                                         mu_from_points, return_map, separation,
                                         spiral_intersections, unfolded_focus,
                                         unfolded_separation)
from sliding_shilnikov.trajectory import Mode

P = PwlParams(1.0, 1.0)
GEOM = LoopGeometry.for_model(P)
TURN = np.exp(2 * np.pi / np.sqrt(95))


@pytest.fixture(scope="module")
def spiral():
    return spiral_intersections(GEOM, r=0.3, i_max=8)


@pytest.fixture(scope="module")
def orbits():
    return find_periodic_orbits(GEOM, r=0.04, i_max=4)


def test_unfolding_keeps_x_and_fold():
    fam = model_unfolding(P)
    Z0, Ze = fam(0.0), fam(0.05)
    x = np.array([0.3, -0.7, 0.2])
    assert np.array_equal(Ze.X(x), Z0.X(x))
    assert np.allclose(Z0.Y(x), build_model(P).Y(x))
    roots = find_pseudo_equilibria(Ze, ((-0.5, 0.5), (-0.5, 0.5)), grid_n=3)
    assert len(roots) == 1
    assert np.allclose(roots[0].location, unfolded_focus(P, 0.05), atol=1e-12)


def test_mu_through_q_lands_at_p():
    arc = FoldArc.around(GEOM.Z, GEOM.q, 0.1)
    mu = mu_curve(GEOM, arc, 11)
    t, land = mu.land(0.0)
    assert t == pytest.approx(1.5, abs=1e-9)
    assert np.linalg.norm(land) <= 1e-9
    # mu is the parabola y = 3x/4 - 3x^2/8 for the unit model
    x = mu.points[:, 0]
    assert np.allclose(mu.points[:, 1], 0.75 * x - 0.375 * x ** 2, atol=1e-10)


@pytest.mark.parametrize("eps", [1e-3, 1e-2])
def test_mu_under_unfolding_moves_by_order_eps(eps):
    geom = LoopGeometry.for_unfolding(P, eps)
    mu = mu_curve(geom, FoldArc.around(geom.Z, geom.q, 0.05), 5)
    _, land = mu.land(0.0)
    p_eps = geom.pseudo_focus().location
    assert 0.1 * eps < np.linalg.norm(land - p_eps) < 10 * eps


def test_mu_rejects_non_fold_samples():
    arc = FoldArc.around(GEOM.Z, GEOM.q, 0.1)
    with pytest.raises(PreconditionError):
        mu_from_points(GEOM, arc, [0.0], [np.array([0.0, 1.0, 0.0])])


def test_separation_unperturbed():
    assert abs(separation(GEOM)) <= 1e-7


@settings(max_examples=6, deadline=None)
@given(st.floats(-0.05, 0.05))
def test_separation_closed_form(eps):
    g = separation(LoopGeometry.for_unfolding(P, eps))
    assert g == pytest.approx(unfolded_separation(P, eps), abs=1e-10)


def test_separation_sign_change_and_slope():
    g = {e: separation(LoopGeometry.for_unfolding(P, e)) for e in (-2e-3, -1e-3, 1e-3, 2e-3)}
    slope = np.polyfit(list(g), list(g.values()), 1)[0]
    assert slope == pytest.approx(-1.25, rel=1e-3)
    gp = separation(LoopGeometry.for_unfolding(P, 1e-2))
    gm = separation(LoopGeometry.for_unfolding(P, -1e-2))
    assert gp * gm < 0


def _focus_to_mu(geom):
    p = geom.pseudo_focus().location
    mu = mu_curve(geom, FoldArc.around(geom.Z, geom.q, 0.1), 21)
    res = minimize_scalar(lambda s: np.linalg.norm(mu.land(s)[1] - p), bounds=(-0.1, 0.1),
                          method="bounded", options={"xatol": 1e-12})
    return res.fun


@pytest.mark.parametrize("eps", [0.0, 1e-3, -1e-3, 1e-2, -1e-2])
def test_g_zero_iff_connection(eps):
    geom = LoopGeometry.for_unfolding(P, eps)
    zero_g = abs(separation(geom)) <= 1e-7
    connected = _focus_to_mu(geom) <= 1e-6
    assert zero_g == connected == (eps == 0.0)


def test_spiral_truncation():
    inter = spiral_intersections(GEOM, r=0.3, i_max=1)
    assert len(inter.arcs) == 1


def test_spiral_arcs(spiral):
    arcs = spiral.arcs
    assert len(arcs) >= 3
    dist = [a.distance_to_p for a in arcs]
    assert all(d1 > d2 for d1, d2 in zip(dist, dist[1:]))
    # one full turn apart (same side of the focus) the arcs shrink
    diam = [a.diameter for a in arcs]
    assert all(diam[i + 2] < diam[i] for i in range(len(diam) - 2))
    assert all(a.complete for a in arcs)


@pytest.mark.xfail(strict=True, reason="the outer arcs alternate sides of the focus and are "
                                       "not strictly ordered by diameter")
def test_spiral_diameters_strictly_decreasing(spiral):
    diam = [a.diameter for a in spiral.arcs]
    assert all(d1 > d2 for d1, d2 in zip(diam, diam[1:]))


@pytest.mark.xfail(strict=True, reason="outer arcs sit where the spiral is far from linear; "
                                       "the per-turn ratio is off by more than 10% at i = 3, 4")
def test_per_turn_ratio_outer_arcs(spiral):
    diam = [a.diameter for a in spiral.arcs]
    ratios = [diam[i] / diam[i + 2] for i in range(4)]
    assert all(abs(r / TURN - 1) <= 0.1 for r in ratios)


def test_return_map_contracts(spiral):
    arc = spiral.arc(3)
    s1 = 0.5 * (arc.preimage[0] + arc.preimage[1])
    s2 = s1 + 1e-3
    a, b = return_map(spiral, 3, s1), return_map(spiral, 3, s2)
    assert abs(a.s - b.s) < abs(s1 - s2)
    assert a.sliding_time > 0 and a.flight_time == pytest.approx(1.5, abs=0.2)


def test_return_map_bounds(spiral):
    with pytest.raises(PreconditionError):
        spiral.arc(len(spiral.arcs) + 1)
    with pytest.raises(PreconditionError):
        return_map(spiral, 1, 0.31)


def test_periodic_orbits(orbits):
    found = orbits.orbits
    assert len(found) >= 3
    assert all(o.residual <= 1e-8 for o in found)
    assert all(o.closure <= 1e-8 for o in found)
    d = [np.linalg.norm(o.anchor - GEOM.q) for o in found]
    assert all(a > b for a, b in zip(d, d[1:]))
    periods = [o.period for o in found]
    assert all(a < b for a, b in zip(periods, periods[1:]))


def test_period_grows_by_one_turn(orbits):
    # one extra turn of the sliding spiral adds 2 pi / Im(lambda) = 24 pi / sqrt(95)
    per = {o.label: o.period for o in orbits.orbits}
    turn = 24 * np.pi / np.sqrt(95)
    gaps = [per[k + 2] - per[k] for k in per if k + 2 in per]
    assert gaps and all(abs(g / turn - 1) < 0.05 for g in gaps)


def test_orbit_topology(orbits):
    for o in orbits.orbits:
        assert o.orbit.modes == [Mode.FREE_ABOVE, Mode.SLIDING]
        assert o.flight_time + o.sliding_time == pytest.approx(o.period)


def test_unfolded_count_is_finite():
    n = count_orbits(LoopGeometry.for_unfolding(P, 0.1), r=0.04, i_max=12)
    assert 0 <= n < 12
