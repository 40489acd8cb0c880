import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from sliding_shilnikov.core import (FoldType, Region, classify, fold_classify,
                                    normalized_sliding_field, pseudo_equilibrium_at,
                                    sliding_field)
from sliding_shilnikov.pwl_model import (ModelLandmarks, PwlParams, build_model, from_uv,
                                         invariant_region, model_sliding_fields, to_uv,
                                         uv_field, uv_time_factor, verify_region_invariance,
                                         certify_proposition1, x_flight_from_q)
from sliding_shilnikov.trajectory import Event, integrate_smooth

P = PwlParams(1.0, 1.0)
ab = st.tuples(st.floats(0.5, 2.0), st.floats(0.5, 2.0))


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        PwlParams(bad, 1.0)
    with pytest.raises(ValueError):
        PwlParams(1.0, bad)


def test_model_values():
    Z = build_model(P)
    assert np.allclose(Z.X(np.zeros(3)), [-1, -1, -0.375])
    J = Z.Y.jacobian(np.zeros(3))
    assert np.all(J[:, 0] == 0) and np.all(J[:, 2] == 0)


@settings(max_examples=20, deadline=None)
@given(ab, st.floats(-3, 3), st.floats(-3, 3))
def test_no_escaping_region(p, x, y):
    Z = build_model(PwlParams(*p))
    assert Z.yh([x, y, 0.0]) > 0
    assert classify(Z, [x, y, 0.0]).tag is not Region.ESCAPING


@settings(max_examples=20, deadline=None)
@given(ab)
def test_landmarks(p):
    params = PwlParams(*p)
    Z = build_model(params)
    lm = ModelLandmarks.of(params)
    assert pseudo_equilibrium_at(Z, lm.p).residual <= 1e-12
    assert fold_classify(Z, lm.q).tag is FoldType.VISIBLE_X
    assert fold_classify(Z, lm.c).tag is FoldType.CUSP_LIKE


def test_flight_closed_form_examples():
    assert np.allclose(x_flight_from_q(P, 0.0), [1.5, 0.375, 0])
    assert np.allclose(x_flight_from_q(P, 1.5), 0.0, atol=1e-15)
    assert np.allclose(x_flight_from_q(P, 0.5), [1.0, 0.5, 1 / 24])
    # z' = y - k at t = 0.5 equals t (b - a t) / 2
    h = 1e-6
    zdot = (x_flight_from_q(P, 0.5 + h)[2] - x_flight_from_q(P, 0.5 - h)[2]) / (2 * h)
    assert zdot == pytest.approx(0.125, rel=1e-8)


@settings(max_examples=10, deadline=None)
@given(ab)
def test_flight_identity(p):
    params = PwlParams(*p)
    Z = build_model(params)
    lm = ModelLandmarks.of(params)
    path, hit = integrate_smooth(Z.X, lm.q, (0, 10 * lm.t_plus), events=[Event(Z.h, -1)],
                                 t_min=1e-6 * lm.t_plus)
    ts = np.linspace(0, lm.t_plus, 25)
    assert np.max(np.abs(path(ts) - x_flight_from_q(params, ts))) <= 1e-9
    assert hit.t == pytest.approx(lm.t_plus, abs=1e-9)


def test_fold_tangency_order():
    a, b = P.alpha, P.beta
    t = np.linspace(1e-3, P.t_plus - 1e-3, 200)
    assert np.all(x_flight_from_q(P, t)[:, 2] > 0)
    # z(t) = (3b - 2at) t^2 / 12: z'(0) = 0, z''(0) = b/2, z'(t+) = t+(b - a t+)/2 < 0
    zdot = lambda t: t * (b - a * t) / 2
    assert zdot(0.0) == 0.0
    assert (zdot(1e-6) - zdot(-1e-6)) / 2e-6 == pytest.approx(b / 2)
    assert zdot(P.t_plus) < 0


def test_sliding_formula_examples():
    un, nz = model_sliding_fields(P, (1.0, 0.1))
    assert un == pytest.approx([-2 / 13, 2.86 / 5.2], rel=1e-14)
    un0, nz0 = model_sliding_fields(P, (0.0, 0.0))
    assert np.all(un0 == 0) and np.all(nz0 == 0)
    _, n = model_sliding_fields(P, (0.0, 0.2))
    assert n == pytest.approx([-0.2, 0.2 / 8 - 3 * 0.04])


@settings(max_examples=80, deadline=None)
@given(ab, st.floats(-2, 2), st.floats(0.05, 2))
def test_generic_equals_closed_form(p, x, frac):
    params = PwlParams(*p)
    Z = build_model(params)
    y = params.k * (1 - frac)
    xi = np.array([x * params.beta, y, 0.0])
    # near the focus both fields are tiny and cancellation dominates the relative error
    assume(np.hypot(*xi[:2]) >= 1e-2)
    un, nz = model_sliding_fields(params, xi[:2])
    g_un = sliding_field(Z, xi)[:2]
    g_nz = normalized_sliding_field(Z, xi)[:2]
    scale = lambda v: max(np.abs(v).max(), 1e-300)
    assert np.max(np.abs(un - g_un)) <= 1e-12 * scale(g_un)
    assert np.max(np.abs(nz - g_nz)) <= 1e-12 * scale(g_nz)


def test_uv_examples():
    assert np.allclose(to_uv(P, [1.5, 0.375]), [1, 1])
    assert np.allclose(from_uv(P, [1, 1]), [1.5, 0.375])
    assert np.all(uv_field([0.0, 0.0]) == 0)
    assert np.allclose(uv_field([1.0, 1.0]), [1, -2])


@settings(max_examples=40, deadline=None)
@given(ab, st.floats(-1.5, 1.5), st.floats(-1.2, 0.95))
def test_uv_conjugacy(p, u, v):
    # pushforward of the normalized field through to_uv equals uv_field / (dt/dtau)
    params = PwlParams(*p)
    xy = from_uv(params, [u, v])
    _, nz = model_sliding_fields(params, xy)
    push = np.array([2 * nz[0] / (3 * params.beta), nz[1] / params.k])
    want = uv_field([u, v]) / uv_time_factor(params)
    assert np.allclose(push, want, rtol=1e-12, atol=1e-14)


def test_region_contents_and_inflow():
    R = invariant_region(100)
    assert R.contains([0.0, 0.0])
    assert R.contains([0.999, 0.999])
    assert np.all(R.inflow("C2") >= -1e-9)


def test_region_invariance_report():
    rep = verify_region_invariance(P, 100)
    assert rep.passed
    assert rep.n_samples >= 400
    assert rep.min_inflow >= -1e-9
    assert rep.orbit_final_distance <= 1e-6
    assert rep.orbit_max_v_after_start < 1.0


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.0, 0.5), (0.5, 1.7)])
def test_certificate(a, b):
    cert = certify_proposition1(PwlParams(a, b))
    assert cert.certified, cert.failed_condition
    assert cert.flight_time == pytest.approx(1.5 * b / a, abs=1e-9)
    assert cert.eigenvalue_rel_error <= 1e-8


def test_certificate_unreachable_tolerance():
    cert = certify_proposition1(P, tol=1e-15)
    assert not cert.certified
    assert cert.failed_condition == "ToleranceUnreachable"
