"""The piecewise-linear family Z_{alpha,beta} with a sliding Shilnikov loop.

Above z = 0 the field is X = (-a, x - b, y - k), below it is
Y = (a, 3 a y / b + b, k), with k = 3 b^2 / (8 a).  The origin is an
unstable pseudo saddle-focus, q = (3b/2, k, 0) is a visible fold of X and
the X-flight from q lands exactly on the origin.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .core import (FilippovSystem, FoldType, PseudoType, SmoothField, SwitchingFunction,
                   find_pseudo_equilibria, fold_classify)
from .errors import DoubleTangencyError
from .trajectory import Event, ExitEvent, IntegratorConfig, integrate_smooth, slide

SQRT95 = np.sqrt(95.0)


@dataclass(frozen=True)
class PwlParams:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for key in ("alpha", "beta"):
            val = getattr(self, key)
            if not (isinstance(val, (int, float, np.floating)) and np.isfinite(val) and val > 0):
                raise ValueError(f"{key} must be a positive finite number, got {val!r}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def k(self) -> float:
        """Height of the fold line."""
        return 3.0 * self.beta ** 2 / (8.0 * self.alpha)

    @property
    def t_plus(self) -> float:
        return 1.5 * self.beta / self.alpha

    def focus_eigenvalues(self) -> np.ndarray:
        """Closed-form eigenvalues of the sliding field at the origin."""
        s = self.alpha / (12.0 * self.beta)
        return np.array([s + 1j * s * SQRT95, s - 1j * s * SQRT95])


@dataclass(frozen=True)
class ModelLandmarks:
    p: np.ndarray
    q: np.ndarray
    c: np.ndarray
    fold_y: float
    t_plus: float

    @classmethod
    def of(cls, params: PwlParams) -> "ModelLandmarks":
        a, b, k = params.alpha, params.beta, params.k
        return cls(np.zeros(3), np.array([1.5 * b, k, 0.0]), np.array([b, k, 0.0]), k,
                   params.t_plus)

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "q": self.q.tolist(), "c": self.c.tolist(),
                "fold_y": self.fold_y, "t_plus": self.t_plus}


def model_fields(params: PwlParams) -> tuple[SmoothField, SmoothField]:
    a, b, k = params.alpha, params.beta, params.k
    X = SmoothField.affine([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [-a, -b, -k], name="X")
    Y = SmoothField.affine([[0, 0, 0], [0, 3 * a / b, 0], [0, 0, 0]], [a, b, k], name="Y")
    return X, Y


def default_box(params: PwlParams) -> tuple:
    L = 20.0 * max(1.0, params.beta, params.k)
    return ((-L, -L, -L), (L, L, L))


def build_model(params: PwlParams, box: Optional[tuple] = None) -> FilippovSystem:
    X, Y = model_fields(params)
    return FilippovSystem(X, Y, SwitchingFunction.plane_z(), box or default_box(params),
                          name=f"Z[{params.alpha:g},{params.beta:g}]")


def x_flight_from_q(params: PwlParams, t):
    """Exact X-flow from the fold point q; vectorized over t."""
    a, b = params.alpha, params.beta
    t = np.asarray(t, dtype=float)
    x = -a * t + 1.5 * b
    y = (3 * b - 2 * a * t) * (b + 2 * a * t) / (8 * a)
    z = (3 * b - 2 * a * t) * t ** 2 / 12.0
    return np.stack([x, y, z], axis=-1)


def model_sliding_fields(params: PwlParams, xy) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (unnormalized, normalized) sliding fields at (x, y, 0)."""
    a, b, k = params.alpha, params.beta, params.k
    x, y = map(float, xy)
    normalized = np.array([-a * y, k * x + b * y / 8.0 - 3 * a * y * y / b])
    den = 4 * a * y - 3 * b * b
    if abs(den) <= 1e-14 * max(1.0, b * b):
        raise DoubleTangencyError(f"sliding field singular at y = 3b^2/(4a) = {y}")
    unnormalized = np.array([
        4 * a * a * y / den,
        (3 * b ** 3 * x + a * b * b * y - 24 * a * a * y * y) / (6 * b ** 3 - 8 * a * b * y),
    ])
    return unnormalized, normalized


# ---------------------------------------------------------------- (u, v) chart

def to_uv(params: PwlParams, xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.stack([2.0 * xy[..., 0] / (3.0 * params.beta), xy[..., 1] / params.k], axis=-1)


def from_uv(params: PwlParams, uv) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    return np.stack([1.5 * params.beta * uv[..., 0], params.k * uv[..., 1]], axis=-1)


def uv_time_factor(params: PwlParams) -> float:
    """dt/dtau for the rescaled planar system (negative: orientation flips)."""
    return -4.0 / params.beta


def uv_field(uv) -> np.ndarray:
    u, v = np.asarray(uv, dtype=float)[..., 0], np.asarray(uv, dtype=float)[..., 1]
    return np.stack([v, -6.0 * u - 0.5 * v + 4.5 * v * v], axis=-1)


def m_curve(v):
    v = np.asarray(v, dtype=float)
    return -13.0 / 108.0 + 9.0 * v ** 2 / 13.0 + 54.0 * v ** 3 / 169.0


def m_curve_prime(v):
    v = np.asarray(v, dtype=float)
    return 18.0 * v / 13.0 + 162.0 * v ** 2 / 169.0


V_BOTTOM = -91.0 / 72.0
U_RIGHT = 1.5


def _u_star() -> float:
    """Largest u on the bottom edge where the flow still points inward."""
    vb = V_BOTTOM
    return (-0.5 * vb + 4.5 * vb * vb) / 6.0


@dataclass(eq=False)
class InvariantRegion:
    """Trapping region for the rescaled planar system, in (u, v).

    ``curves`` maps a curve name to ``(points, inward_normals)``.
    """

    curves: dict
    corner_orbit_v: float
    u_star: float

    def inflow(self, name: str) -> np.ndarray:
        pts, normals = self.curves[name]
        return np.einsum("ij,ij->i", uv_field(pts), normals)

    def contains(self, uv) -> bool:
        """Even-odd ray test against the sampled boundary polygon."""
        u, v = map(float, uv)
        P = self.polygon()
        Q = np.roll(P, -1, axis=0)
        crosses = (P[:, 1] > v) != (Q[:, 1] > v)
        with np.errstate(divide="ignore", invalid="ignore"):
            u_cut = P[:, 0] + (v - P[:, 1]) * (Q[:, 0] - P[:, 0]) / (Q[:, 1] - P[:, 1])
        return bool(np.count_nonzero(crosses & (u < u_cut)) % 2)

    def polygon(self) -> np.ndarray:
        order = ["C1", "C2", "C4", "C5", "C3", "left"]
        return np.concatenate([self.curves[c][0] for c in order])


def _corner_arc(n: int):
    """Orbit arc through (u*, v_bottom), traced back to u = 1.5."""
    ustar = _u_star()
    rhs = lambda t, y: uv_field(y)
    hit = lambda t, y: y[0] - U_RIGHT
    hit.terminal, hit.direction = True, 1
    sol = solve_ivp(rhs, (0.0, -5.0), [ustar, V_BOTTOM], method="DOP853", rtol=1e-12,
                    atol=1e-14, events=hit, dense_output=True)
    t_end = float(sol.t_events[0][0])
    ts = np.linspace(t_end, 0.0, n)  # forward-time order: (1.5, v1) -> (u*, vb)
    pts = sol.sol(ts).T
    return pts, float(sol.y_events[0][0][1])


def invariant_region(n_per_curve: int = 100) -> InvariantRegion:
    n = int(n_per_curve)
    ustar = _u_star()
    arc, v1 = _corner_arc(n)
    curves = {}
    u = np.linspace(float(m_curve(1.0)), 1.0, n)
    curves["C1"] = (np.column_stack([u, np.ones(n)]), np.tile([0.0, -1.0], (n, 1)))
    u = np.linspace(1.0, U_RIGHT, n)
    curves["C2"] = (np.column_stack([u, 3.0 - 2.0 * u]), np.tile(-np.array([2.0, 1.0]) / np.sqrt(5), (n, 1)))
    v = np.linspace(0.0, v1, n)
    curves["C4"] = (np.column_stack([np.full(n, U_RIGHT), v]), np.tile([-1.0, 0.0], (n, 1)))
    tang = uv_field(arc)
    normals = np.column_stack([-tang[:, 1], tang[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    # orient toward the origin side
    sign = np.sign(np.einsum("ij,ij->i", -arc, normals))
    curves["C5"] = (arc, normals * sign[:, None])
    u = np.linspace(ustar, float(m_curve(V_BOTTOM)), n)
    curves["C3"] = (np.column_stack([u, np.full(n, V_BOTTOM)]), np.tile([0.0, 1.0], (n, 1)))
    v = np.linspace(V_BOTTOM, 1.0, n)
    normals = np.column_stack([np.ones(n), -m_curve_prime(v)])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    curves["left"] = (np.column_stack([m_curve(v), v]), normals)
    return InvariantRegion(curves, v1, ustar)


@dataclass
class RegionReport:
    passed: bool
    n_samples: int
    min_inflow: float
    min_inflow_by_curve: dict
    first_violation: Optional[tuple]
    orbit_final_distance: float
    orbit_max_v_after_start: float
    orbit_tau: float
    corner_orbit_v: float
    u_star: float

    def to_dict(self) -> dict:
        return asdict(self)


def verify_region_invariance(params: PwlParams, n_samples: int = 100,
                             inflow_tol: float = 1e-9, target: float = 1e-7) -> RegionReport:
    """Boundary inflow sweep of the trapping region plus the orbit of (1, 1).

    ``n_samples`` points are taken on each of the six boundary pieces.  The
    planar system is parameter free; ``params`` only fixes the physical
    scale of the returned landmarks.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    PwlParams(params.alpha, params.beta)
    region = invariant_region(n_samples)
    mins, first, total = {}, None, 0
    for name, (pts, _) in region.curves.items():
        flow_in = region.inflow(name)
        total += len(flow_in)
        mins[name] = float(flow_in.min())
        bad = np.nonzero(flow_in < -inflow_tol)[0]
        if first is None and bad.size:
            first = (name, pts[bad[0]].tolist(), float(flow_in[bad[0]]))

    near = lambda t, y: np.hypot(y[0], y[1]) - target
    near.terminal, near.direction = True, -1
    sol = solve_ivp(lambda t, y: uv_field(y), (0.0, 1e3), [1.0, 1.0], method="DOP853",
                    rtol=1e-12, atol=1e-14, events=near, dense_output=True)
    ts = np.linspace(sol.t[0], sol.t[-1], 20001)[1:]
    vmax = float(np.max(sol.sol(ts)[1]))
    dist = float(np.hypot(*sol.y[:, -1]))
    passed = first is None and dist <= 1e-6 and vmax < 1.0
    return RegionReport(passed, total, float(min(mins.values())), mins, first, dist, vmax,
                        float(sol.t[-1]), region.corner_orbit_v, region.u_star)


# ---------------------------------------------------------------- certificate

@dataclass
class ShilnikovCertificate:
    params: PwlParams
    certified: bool
    failed_condition: Optional[str]
    landmarks: ModelLandmarks
    eigenvalues: list
    eigenvalue_rel_error: float
    pseudo_equilibrium: list
    pseudo_residual: float
    pseudo_class: str
    fold_class: str
    fold_second_derivative: float
    sliding_terminal_distance: float
    sliding_max_y_after_departure: float
    sliding_time: float
    sliding_exit: str
    flight_endpoint_error: float
    flight_time: float
    flight_time_error: float
    closed_form_flight_error: float
    tol: float

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["params"] = {"alpha": self.params.alpha, "beta": self.params.beta}
        d["landmarks"] = self.landmarks.to_dict()
        d["eigenvalues"] = [{"re": float(np.real(e)), "im": float(np.imag(e))}
                            for e in self.eigenvalues]
        return d


def certify_proposition1(params: PwlParams, tol: float = 1e-6,
                         cfg: Optional[IntegratorConfig] = None) -> ShilnikovCertificate:
    """Numerical evidence that Z_{alpha,beta} has a sliding Shilnikov loop.

    Checks, in order: the origin is an unstable pseudo saddle-focus with the
    closed-form spectrum; q is a visible fold of X; the backward sliding
    orbit of q reaches the origin within ``tol`` without touching the fold
    line; and the X-flight from q lands on the origin at t+.
    """
    cfg = cfg or IntegratorConfig()
    Z = build_model(params)
    lm = ModelLandmarks.of(params)
    a, b, k = params.alpha, params.beta, params.k
    failed = None

    roots = find_pseudo_equilibria(Z, ((-b, b), (-k, k)), grid_n=4)
    exact = params.focus_eigenvalues()
    if len(roots) == 1:
        pe = roots[0]
        eig = pe.eigenvalues[np.argsort(-pe.eigenvalues.imag)]
        rel = float(np.max(np.abs(eig - exact) / np.abs(exact)))
        loc, pres, pclass = pe.location, pe.residual, pe.classification
    else:
        eig, rel, loc, pres, pclass = exact * np.nan, np.inf, np.full(3, np.nan), np.inf, None
    if not (pclass is PseudoType.SADDLE_FOCUS_UNSTABLE and np.linalg.norm(loc) <= tol
            and rel <= 1e-8):
        failed = "PseudoSaddleFocus"

    fc = fold_classify(Z, lm.q)
    if failed is None and fc.tag is not FoldType.VISIBLE_X:
        failed = "VisibleFold"

    # backward sliding orbit of q; time budget from the focus expansion rate
    re = a / (12 * b)
    t_cap = (np.log(max(np.linalg.norm(lm.q), 1.0) / 1e-13) / re) * 1.5 + 50.0
    seg = slide(Z, lm.q, (0.0, -t_cap), cfg)
    ts, ys = seg.chronological()
    dist = float(np.linalg.norm(seg.final_state - lm.p))
    departed = np.abs(ts) > 1e-6
    ymax = float(np.max(ys[departed, 1])) if np.any(departed) else float("inf")
    touched = ymax >= k - 1e-9 or seg.exit_event is ExitEvent.FOLD_EXIT
    if failed is None:
        if touched:
            failed = "ConditionJ"
        elif dist > tol:
            failed = ("ToleranceUnreachable" if seg.exit_event is ExitEvent.CONVERGED
                      else "ConditionJ")

    hit_sigma = Event(Z.h, -1, "HitSigma")
    path, hit = integrate_smooth(Z.X, lm.q, (0.0, 10 * lm.t_plus), cfg.tightened(1e-2),
                                 [hit_sigma], Z, t_min=1e-6 * lm.t_plus)
    if hit is None:
        f_err, f_t = float("inf"), float("nan")
    else:
        f_err, f_t = float(np.linalg.norm(hit.state - lm.p)), hit.t
    ts_f = np.linspace(0.0, path.t_last, 41)
    cf_err = float(np.max(np.abs(path(ts_f) - x_flight_from_q(params, ts_f))))
    t_err = abs(f_t - lm.t_plus) if hit is not None else float("inf")
    if failed is None and not (f_err <= tol and t_err <= max(tol, 1e-9)):
        failed = "ToleranceUnreachable" if f_err <= 1e-8 else "ConditionJJ"

    return ShilnikovCertificate(
        params=params, certified=failed is None, failed_condition=failed, landmarks=lm,
        eigenvalues=list(eig), eigenvalue_rel_error=rel, pseudo_equilibrium=list(map(float, loc)),
        pseudo_residual=float(pres), pseudo_class=None if pclass is None else pclass.value,
        fold_class=fc.tag.value, fold_second_derivative=float(fc.second_derivative),
        sliding_terminal_distance=dist, sliding_max_y_after_departure=ymax,
        sliding_time=float(seg.duration), sliding_exit=seg.exit_event.value,
        flight_endpoint_error=f_err, flight_time=float(f_t), flight_time_error=float(t_err),
        closed_form_flight_error=cf_err, tol=float(tol))
