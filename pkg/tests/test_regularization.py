import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sliding_shilnikov.core import fd_jacobian
from sliding_shilnikov.errors import DomainError
from sliding_shilnikov.pwl_model import PwlParams, build_model, model_sliding_fields
from sliding_shilnikov.regularization import (TransitionFunction, ab_limits, build_w, ell,
                                              hausdorff, lambda_s_asymptotic,
                                              lambda_u_asymptotic, origin_spectrum,
                                              p_delta_asymptotic, q_delta_asymptotic,
                                              shooting_F, shooting_det_limit,
                                              shooting_jacobian, sigma_asymptotic, slow_fast,
                                              slow_manifold_exit, solve_ab,
                                              st_regularize, stable_manifold_point,
                                              t_delta_asymptotic, shoot, verify_homoclinic)

P = PwlParams(1.0, 1.0)
Z11 = build_model(P)
AS, BS = ab_limits(P)
ab = st.tuples(st.floats(0.5, 2.0), st.floats(0.5, 2.0))


def richardson(err):
    """Ratio error(d) / error(d/2)."""
    return abs(err[0]) / abs(err[1])


# ---------------------------------------------------------------- transition / W

def test_transition_functions():
    for phi in (TransitionFunction.clamp(), TransitionFunction.sine()):
        assert phi(-3.0) == -1.0 and phi(2.0) == 1.0 and phi(0.0) == 0.0
        u = np.linspace(-1, 1, 101)
        assert np.all(np.diff(phi(u)) > 0)


def test_st_regularize_examples():
    d = 0.1
    W = st_regularize(Z11, delta=d)
    x = np.array([0.3, 0.2, d])
    assert np.allclose(W(x), Z11.X(x))
    x0 = np.array([0.3, 0.2, 0.0])
    assert np.allclose(W(x0), 0.5 * (Z11.X(x0) + Z11.Y(x0)))
    assert W([0.0, 0.1, 0.05])[2] == pytest.approx(-0.1125)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(1e-3, 2), st.booleans(),
       st.floats(1e-4, 0.99))
def test_pointwise_regularization_limit(x, y, hz, above, frac):
    z = hz if above else -hz
    xi = np.array([x, y, z])
    W = st_regularize(Z11, TransitionFunction.sine(), delta=frac * hz)
    want = Z11.X(xi) if above else Z11.Y(xi)
    assert np.array_equal(W(xi), want)


def test_build_w_without_perturbation_is_st_regularization():
    rng = np.random.default_rng(0)
    d = 0.01
    W = build_w(P, d).field
    S = st_regularize(Z11, delta=d)
    for v in rng.uniform(-1, 1, size=(200, 3)) * [1, 1, 2 * d]:
        assert np.allclose(W(v), S(v), rtol=1e-12, atol=1e-12)


def test_build_w_continuity_and_third_component():
    rng = np.random.default_rng(1)
    d, A, B = 0.01, 2.0, -3.0
    W = build_w(P, d, A, B).field
    jump = 0.0
    for x, y in rng.uniform(-2, 2, size=(1000, 2)):
        for z in (d, -d):
            inner = W(np.array([x, y, z * (1 - 1e-15)]))
            outer = W(np.array([x, y, z * (1 + 1e-15)]))
            jump = max(jump, np.max(np.abs(inner - outer)))
    assert jump <= 1e-12
    assert W([1.0, 0.0, d])[2] == pytest.approx(-0.375 + d * A, abs=1e-14)


def test_jacobians_match_differences():
    rm = build_w(P, 0.01, 1.5, -2.0)
    v = np.array([0.3, -0.1, 0.004])
    assert np.allclose(rm.field.jacobian(v), fd_jacobian(rm.field.func, v), rtol=1e-5,
                       atol=1e-6)
    sf = slow_fast(P, 0.01, 1.5, -2.0)
    v = np.array([0.3, -0.1, 0.4])
    assert np.allclose(sf.ss_jacobian(v), fd_jacobian(sf.ss, v), rtol=1e-5, atol=1e-6)


# ---------------------------------------------------------------- slow manifold

def test_critical_manifold():
    sf = slow_fast(P, 1e-3)
    assert all(sf.m0(x, 0.0) == 0 for x in (-1.0, 0.0, 2.0))
    assert sf.m0(0.0, 0.1) == pytest.approx(0.4 / 2.6)
    ys = np.linspace(-2, 0.74, 50)
    assert np.all(sf.layer_eigenvalue(ys) < 0)
    with pytest.raises(DomainError):
        sf.m0(0.0, 0.75)
    # the critical manifold is made of equilibria of the layer problem
    assert abs(sf.fs0((0.2, 0.1, sf.m0(0.2, 0.1)))[2]) < 1e-15


def test_reduced_flow_is_sliding_flow():
    sf = slow_fast(P, 1e-3)
    un, _ = model_sliding_fields(P, (1.0, 0.1))
    assert np.allclose(sf.reduced((1.0, 0.1)), un, rtol=1e-12, atol=1e-14)


def test_slow_manifold_residual_is_second_order():
    grid = [(x, y) for x in np.linspace(-1, 1.5, 6) for y in np.linspace(-0.8, 0.3, 6)]

    def worst(d):
        sf = slow_fast(P, d, AS, BS)
        return max(abs(sf.invariance_residual(x, y)) for x, y in grid)

    assert 3.4 <= worst(1e-2) / worst(5e-3) <= 4.6


# ---------------------------------------------------------------- spectrum

@pytest.mark.parametrize("d", [1e-2, 3e-3, 1e-3, 1e-4])
def test_saddle_focus_structure(d):
    spectrum = origin_spectrum(P, d, AS, BS)
    assert spectrum.saddle_focus
    assert spectrum.lambda_s < 0 < spectrum.lambda_u.real and spectrum.lambda_u.imag > 0


def test_lambda_ladders():
    es = [origin_spectrum(P, d, AS, BS).lambda_s - lambda_s_asymptotic(P, d) for d in (2e-3, 1e-3)]
    assert 1.7 <= richardson(es) <= 2.3
    eu = [abs(origin_spectrum(P, d, AS, BS).lambda_u - lambda_u_asymptotic(P))
          for d in (2e-3, 1e-3)]
    assert 1.7 <= richardson(eu) <= 2.3
    assert origin_spectrum(P, 1e-2).lambda_s == pytest.approx(-36.1667, abs=0.2)


def test_perturbation_does_not_move_leading_lambda_s():
    d = 1e-3
    diff = origin_spectrum(P, d, 0, 0).lambda_s - origin_spectrum(P, d, 5, 0).lambda_s
    assert abs(diff) <= 10 * d


def test_sigma():
    spectrum = origin_spectrum(P, 1e-3, AS, BS)
    assert spectrum.sigma < 0
    assert spectrum.sigma == pytest.approx(sigma_asymptotic(P, 1e-3), rel=0.02)


# ---------------------------------------------------------------- manifolds / flight

def test_stable_manifold_point():
    pts = {d: stable_manifold_point(P, d, AS, BS).point for d in (2e-3, 1e-3, 5e-4)}
    assert pts[1e-3][2] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(pts[1e-3][:2], [8e-3 / 3, 8e-3 / 3], rtol=0.02)
    err = [np.linalg.norm(pts[d] - p_delta_asymptotic(P, d)) for d in (1e-3, 5e-4)]
    assert 3.4 <= richardson(err) <= 4.6
    lin = pts[1e-3][:2] / pts[5e-4][:2]
    assert np.allclose(lin, 2.0, atol=0.05)


@settings(max_examples=20, deadline=None)
@given(ab, st.floats(-5, 5), st.floats(-12, 12))
def test_ell_at_exit_matches_q(p, A, B):
    params = PwlParams(*p)
    d = 1e-3
    q = q_delta_asymptotic(params, d, A, B)
    assert ell(params, q[0], d, A, B) == pytest.approx(q[1], rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("x", [1.2, 1.5])
def test_exit_ladder(x):
    err = [slow_manifold_exit(P, d, AS, BS, x_exit=x)[1] - ell(P, x, d, AS, BS)
           for d in (1e-3, 5e-4)]
    assert 3.4 <= richardson(err) <= 4.6


def test_exit_methods():
    q = slow_manifold_exit(P, 1e-3, AS, BS)
    qa = slow_manifold_exit(P, 1e-3, AS, BS, method="asymptotic")
    assert q[0] == 1.5 and q[2] == 1.0
    assert abs(q[1] - qa[1]) <= 20 * 1e-6
    with pytest.raises(ValueError):
        slow_manifold_exit(P, 1e-3, method="spline")


def test_flight_time_ladder():
    err = [shoot(P, d, AS, BS).t_delta - t_delta_asymptotic(P, d, AS) for d in (1e-3, 5e-4)]
    assert 3.4 <= richardson(err) <= 4.6


def test_shooting_function_is_order_delta_at_limits():
    F1, F2 = shooting_F(P, 2e-4, AS, BS), shooting_F(P, 1e-4, AS, BS)
    assert np.linalg.norm(F2) <= 100 * 1e-4
    assert np.allclose(F1 / F2, 2.0, rtol=0.05)


def test_shooting_determinant():
    J = shooting_jacobian(P, 1e-4, AS, BS)
    assert np.linalg.det(J) == pytest.approx(shooting_det_limit(P), rel=0.05)


# ---------------------------------------------------------------- solve / verify

@pytest.fixture(scope="module")
def solved():
    return solve_ab(P, 1e-3, verify=False)


def test_solve_ab(solved):
    assert solved.residual <= 1e-10
    assert abs(solved.A - AS) <= 5e-2 and abs(solved.B - BS) <= 5e-2
    assert solved.sigma < 0
    assert solved.sigma == pytest.approx(-375 + 17 / 12, rel=0.02)
    d = solved.to_dict()
    assert set(d) == {"delta", "A", "B", "residual", "t_delta", "sigma", "lambda_s",
                      "lambda_u_re", "lambda_u_im", "closure_gap", "hausdorff"}


def test_solve_ab_rejects_large_delta():
    with pytest.raises(ValueError):
        solve_ab(P, 0.05)


def test_homoclinic_closure(solved):
    rep = verify_homoclinic(P, 1e-3, solved.A, solved.B)
    assert rep.gap <= 1e-6
    ctrl = verify_homoclinic(P, 1e-3, 0.0, 0.0)
    assert ctrl.gap > 100 * max(rep.gap, 1e-12)


@pytest.mark.xfail(strict=True, reason="the loop is O(delta) close but with constant about 12, "
                                       "set by the slow drift along the spiral")
def test_homoclinic_hausdorff_within_ten_delta(solved):
    rep = verify_homoclinic(P, 1e-3, solved.A, solved.B)
    assert rep.hausdorff <= 10 * 1e-3


def test_hausdorff_basics():
    a = np.array([[0.0, 0, 0], [1, 0, 0]])
    b = np.array([[0.0, 0.5, 0], [1, 0.5, 0]])
    assert hausdorff(a, b) == pytest.approx(0.5)
    assert hausdorff(a, a) == 0.0
