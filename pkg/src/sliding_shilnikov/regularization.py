"""Sotomayor-Teixeira regularization of the model and the smooth homoclinic shooting.

With the transition phi(u) = clamp(u, -1, 1) and a perturbation weighted by
the X-share of the blend, the regularized model W^delta is the system

    x' = -a z/d
    y' = (b x - 3 a y - 2 b^2) z/(2 d b) + (b x + 3 a y)/(2 b)
    z' = (4 a y - 3 b^2) z/(8 d a) + (y + (A x + B y) z)/2 + d (A x + B y)/2

on |z| <= d, glued to X + d(0, 0, Ax + By) above and Y below.  In z = d w
it is a slow-fast system whose attracting slow manifold carries the sliding
spiral.  A two-parameter shooting in (A, B) connects the slow-manifold exit
q_d to the stable-manifold entry p_d by the outer affine flight.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .core import FilippovSystem, SmoothField
from .errors import DomainError, NewtonDiverged, NoHitError, NoReturnError
from .pwl_model import ModelLandmarks, PwlParams, build_model, x_flight_from_q
from .trajectory import DensePath, Event, ExitEvent, IntegratorConfig, integrate_smooth, slide

TIGHT = IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15)


# ---------------------------------------------------------------- transition

@dataclass(frozen=True, eq=False)
class TransitionFunction:
    """Monotone transition: phi(s) = sign(s) for |s| >= 1, increasing on (-1, 1)."""

    phi: Callable[[np.ndarray], np.ndarray]
    name: str = "clamp"

    @classmethod
    def clamp(cls) -> "TransitionFunction":
        return cls(lambda u: np.clip(u, -1.0, 1.0), "clamp")

    @classmethod
    def sine(cls) -> "TransitionFunction":
        return cls(lambda u: np.sin(0.5 * np.pi * np.clip(u, -1.0, 1.0)), "sine")

    def __call__(self, u):
        out = self.phi(np.asarray(u, dtype=float))
        return float(out) if np.ndim(out) == 0 else out


def st_regularize(Z: FilippovSystem, phi: Optional[TransitionFunction] = None,
                  delta: float = 0.01) -> SmoothField:
    """Blend ((1 + phi(h/d))/2) X + ((1 - phi(h/d))/2) Y."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    phi = phi or TransitionFunction.clamp()

    def f(x):
        s = phi(Z.h(x) / delta)
        return 0.5 * (1 + s) * Z.X(x) + 0.5 * (1 - s) * Z.Y(x)

    return SmoothField(f, name=f"ST[{Z.name}, {phi.name}, {delta:g}]")


# ---------------------------------------------------------------- W^delta

@dataclass(frozen=True, eq=False)
class RegularizedModel:
    params: PwlParams
    delta: float
    A: float
    B: float
    field: SmoothField
    outer_x: SmoothField
    outer_y: SmoothField


def _outer_x(params: PwlParams, delta: float, A: float, B: float) -> SmoothField:
    a, b, k = params.alpha, params.beta, params.k
    return SmoothField.affine([[0, 0, 0], [1, 0, 0], [delta * A, 1 + delta * B, 0]],
                              [-a, -b, -k], name="X+dP")


def build_w(params: PwlParams, delta: float, A: float = 0.0, B: float = 0.0) -> RegularizedModel:
    """The perturbed regularization W^delta, continuous across z = +-delta."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    a, b, d = params.alpha, params.beta, float(delta)
    X = _outer_x(params, d, A, B)
    Y = build_model(params).Y

    def inner(v):
        x, y, z = v
        P = A * x + B * y
        return np.array([
            -a * z / d,
            (b * x - 3 * a * y - 2 * b * b) * z / (2 * d * b) + (b * x + 3 * a * y) / (2 * b),
            (4 * a * y - 3 * b * b) * z / (8 * d * a) + (y + P * z) / 2 + d * P / 2,
        ])

    def inner_jac(v):
        x, y, z = v
        P = A * x + B * y
        return np.array([
            [0.0, 0.0, -a / d],
            [z / (2 * d) + 0.5, -3 * a * z / (2 * d * b) + 1.5 * a / b,
             (b * x - 3 * a * y - 2 * b * b) / (2 * d * b)],
            [A * (z + d) / 2, 4 * a * z / (8 * d * a) + 0.5 + B * (z + d) / 2,
             (4 * a * y - 3 * b * b) / (8 * d * a) + P / 2],
        ])

    def f(v):
        v = np.asarray(v, dtype=float)
        if v[2] >= d:
            return X.func(v)
        if v[2] <= -d:
            return Y.func(v)
        return inner(v)

    def jac(v):
        v = np.asarray(v, dtype=float)
        if v[2] >= d:
            return X.jac(v)
        if v[2] <= -d:
            return Y.jac(v)
        return inner_jac(v)

    return RegularizedModel(params, d, float(A), float(B),
                            SmoothField(f, jac, name=f"W[{d:g},{A:g},{B:g}]"), X, Y)


# ---------------------------------------------------------------- slow-fast

@dataclass(frozen=True, eq=False)
class SlowFastDecomposition:
    """Slow system (ss) in (x, y, w) with z = delta w, fast system (fs), layer problem (fs0)."""

    params: PwlParams
    delta: float
    A: float = 0.0
    B: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")

    @property
    def y_max(self) -> float:
        return 3 * self.params.beta ** 2 / (4 * self.params.alpha)

    def _parts(self, v):
        a, b, d = self.params.alpha, self.params.beta, self.delta
        x, y, w = v
        P = self.A * x + self.B * y
        fx = -a * w
        fy = (b * x + 3 * a * y + (b * x - 3 * a * y - 2 * b * b) * w) / (2 * b)
        g = y / 2 + (4 * a * y - 3 * b * b) * w / (8 * a) + d * P * (w + 1) / 2
        return fx, fy, g

    def ss(self, v) -> np.ndarray:
        if self.delta == 0:
            raise ValueError("the slow system needs delta > 0; use fs0 or reduced")
        fx, fy, g = self._parts(v)
        return np.array([fx, fy, g / self.delta])

    def ss_jacobian(self, v) -> np.ndarray:
        a, b, d, A, B = self.params.alpha, self.params.beta, self.delta, self.A, self.B
        x, y, w = v
        P = A * x + B * y
        return np.array([
            [0.0, 0.0, -a],
            [(1 + w) / 2, 3 * a * (1 - w) / (2 * b), (b * x - 3 * a * y - 2 * b * b) / (2 * b)],
            [A * (w + 1) / 2, (1 + w) / (2 * d) + B * (w + 1) / 2,
             (4 * a * y - 3 * b * b) / (8 * a * d) + P / 2],
        ])

    def slow_field(self) -> SmoothField:
        return SmoothField(self.ss, self.ss_jacobian, name="ss")

    def fs(self, v) -> np.ndarray:
        fx, fy, g = self._parts(v)
        return np.array([self.delta * fx, self.delta * fy, g])

    def fs0(self, v) -> np.ndarray:
        a, b = self.params.alpha, self.params.beta
        x, y, w = v
        return np.array([0.0, 0.0, y / 2 + (4 * a * y - 3 * b * b) * w / (8 * a)])

    def layer_eigenvalue(self, y):
        a, b = self.params.alpha, self.params.beta
        return (4 * a * y - 3 * b * b) / (8 * a)

    def _check(self, y):
        if np.any(np.asarray(y) >= self.y_max):
            raise DomainError(f"critical manifold defined only for y < {self.y_max:g}")

    def m0(self, x, y):
        self._check(y)
        a, b = self.params.alpha, self.params.beta
        return 4 * a * y / (3 * b * b - 4 * a * y)

    def m1(self, x, y):
        self._check(y)
        a, b = self.params.alpha, self.params.beta
        D = 4 * a * y - 3 * b * b
        return (12 * a * b * b * (self.A * x + self.B * y) / D ** 2
                - 48 * a * a * b * (3 * b ** 3 * x + a * b * b * y - 24 * a * a * y * y) / D ** 4)

    def m(self, x, y):
        return self.m0(x, y) + self.delta * self.m1(x, y)

    def _m_grad(self, x, y, h: float = 1e-6):
        return np.array([(self.m(x + h, y) - self.m(x - h, y)) / (2 * h),
                         (self.m(x, y + h) - self.m(x, y - h)) / (2 * h)])

    def reduced(self, xy, corrected: bool = False) -> np.ndarray:
        """Slow flow on the critical manifold (or on m0 + d m1 when ``corrected``)."""
        x, y = xy
        w = self.m(x, y) if corrected else self.m0(x, y)
        fx, fy, _ = self._parts((x, y, w))
        return np.array([fx, fy])

    def invariance_residual(self, x, y) -> float:
        """w-component of (fs) minus the manifold's induced rate at w = m0 + d m1."""
        w = self.m(x, y)
        F = self.fs((x, y, w))
        return float(F[2] - self._m_grad(x, y) @ F[:2])


def slow_fast(params: PwlParams, delta: float, A: float = 0.0,
              B: float = 0.0) -> SlowFastDecomposition:
    return SlowFastDecomposition(params, float(delta), float(A), float(B))


# ---------------------------------------------------------------- spectrum

@dataclass(frozen=True)
class OriginSpectrum:
    lambda_s: float
    lambda_u: complex
    saddle_focus: bool
    eigenvalues: np.ndarray
    stable_vector: np.ndarray

    @property
    def sigma(self) -> float:
        return float(self.lambda_s + self.lambda_u.real)


def origin_spectrum(params: PwlParams, delta: float, A: float = 0.0,
                    B: float = 0.0) -> OriginSpectrum:
    """Eigenvalues of the slow system at the origin.

    ``saddle_focus`` reports the 1D-stable / 2D-unstable focus structure; it
    is not asserted, since it can fail for large delta.
    """
    sf = slow_fast(params, delta, A, B)
    ev, vec = np.linalg.eig(sf.ss_jacobian(np.zeros(3)))
    real = [i for i in range(3) if abs(ev[i].imag) <= 1e-12 * max(1.0, abs(ev[i]))]
    cplx = [i for i in range(3) if i not in real]
    if len(real) == 1 and len(cplx) == 2:
        i = real[0]
        lam_s = float(ev[i].real)
        lam_u = complex(ev[cplx[0]])
        lam_u = lam_u if lam_u.imag > 0 else lam_u.conjugate()
        ok = lam_s < 0 and lam_u.real > 0
    else:
        i = int(np.argmin(ev.real))
        lam_s = float(ev[i].real)
        others = [ev[j] for j in range(3) if j != i]
        lam_u = complex(max(others, key=lambda z: z.imag))
        ok = False
    v = np.real(vec[:, i])
    v = v / np.linalg.norm(v)
    if v[2] < 0:
        v = -v
    return OriginSpectrum(lam_s, lam_u, bool(ok), ev, v)


# ---------------------------------------------------------------- asymptotics

def lambda_s_asymptotic(params: PwlParams, delta: float) -> float:
    a, b = params.alpha, params.beta
    return -3 * b * b / (8 * delta * a) + 4 * a / (3 * b)


def lambda_u_asymptotic(params: PwlParams) -> complex:
    a, b = params.alpha, params.beta
    return complex(a / (12 * b), a * np.sqrt(95) / (12 * b))


def sigma_asymptotic(params: PwlParams, delta: float) -> float:
    a, b = params.alpha, params.beta
    return -3 * b * b / (8 * delta * a) + 17 * a / (12 * b)


def p_delta_asymptotic(params: PwlParams, delta: float) -> np.ndarray:
    a, b = params.alpha, params.beta
    return np.array([8 * delta * a * a / (3 * b * b), 8 * delta * a / (3 * b), 1.0])


def ell(params: PwlParams, x, delta: float, A: float, B: float):
    """First-order trace y = l(x, d) of the slow manifold on w = 1."""
    a, b = params.alpha, params.beta
    return params.k + delta * (16 * a * x / (3 * b * b) - A * x - 3 * B * b * b / (8 * a)
                               - 16 * a / (3 * b))


def q_delta_asymptotic(params: PwlParams, delta: float, A: float, B: float) -> np.ndarray:
    a, b = params.alpha, params.beta
    y = params.k + delta * (64 * a * a - 36 * A * a * b * b - 9 * B * b ** 3) / (24 * a * b)
    return np.array([1.5 * b, y, 1.0])


def t_delta_asymptotic(params: PwlParams, delta: float, A: float) -> float:
    a, b = params.alpha, params.beta
    return 1.5 * b / a + delta * (32 * a - 9 * A * b * b) / (3 * b * b)


def ab_limits(params: PwlParams) -> tuple[float, float]:
    a, b = params.alpha, params.beta
    return 40 * a / (9 * b * b), -32 * a * a / (3 * b ** 3)


def shooting_det_limit(params: PwlParams) -> float:
    return -9 * params.beta ** 2 / 8


# ---------------------------------------------------------------- manifolds

@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    point: np.ndarray           # (x, y, w)
    time: float                 # signed time from the seed to the point
    path: DensePath = field(repr=False)


def stable_manifold_point(params: PwlParams, delta: float, A: float = 0.0, B: float = 0.0,
                          eps_s: float = 1e-8, cfg: IntegratorConfig = TIGHT) -> ManifoldPoint:
    """Entry p_d of the 1D stable manifold of the origin into the slab at w = 1.

    Shoots backward from eps_s times the unit stable eigenvector (w > 0 branch).
    """
    sf = slow_fast(params, delta, A, B)
    spectrum = origin_spectrum(params, delta, A, B)
    x0 = eps_s * spectrum.stable_vector
    t_cap = 5 * np.log(1.0 / eps_s) / abs(spectrum.lambda_s) + 10 * delta
    path, hit = integrate_smooth(sf.slow_field(), x0, (0.0, -t_cap), cfg,
                                 [Event(lambda v: v[2] - 1.0, 1, "w=1")])
    if hit is None:
        raise NoHitError(f"stable manifold did not reach w = 1 within t = -{t_cap:g}",
                         path.t_last, path.y[-1])
    return ManifoldPoint(hit.state, hit.t, path)


def _reduced_field(sf: SlowFastDecomposition) -> SmoothField:
    """Corrected reduced flow embedded in R^3 with a frozen third coordinate."""
    return SmoothField(lambda v: np.append(sf.reduced(v[:2], corrected=True), 0.0),
                       name="reduced")


def _fold_rate(params: PwlParams) -> float:
    # slowest normal attraction along the slow manifold below the fold line
    return 3 * params.beta ** 2 / (16 * params.alpha)


def _lifted_exit(sf: SlowFastDecomposition, xy0, cfg: IntegratorConfig, t_cap: float):
    """Lift (x, y) to w = m0 + d m1 and run the slow system forward to w = 1."""
    v0 = np.array([xy0[0], xy0[1], sf.m(*xy0)])
    path, hit = integrate_smooth(sf.slow_field(), v0, (0.0, t_cap), cfg,
                                 [Event(lambda v: v[2] - 1.0, 1, "w=1")])
    if hit is None:
        raise NoHitError("slow-manifold orbit did not reach w = 1", path.t_last, path.y[-1])
    return hit.state, hit.t, path


def _secant(f, c0: float, c1: float, tol: float, max_iter: int = 30,
            f0: Optional[float] = None) -> float:
    f0 = f(c0) if f0 is None else f0
    if abs(f0) <= tol:
        return c0
    f1 = f(c1)
    for _ in range(max_iter):
        if abs(f1) <= tol:
            return c1
        if f1 == f0:
            break
        c0, c1, f0 = c1, c1 - f1 * (c1 - c0) / (f1 - f0), f1
        f1 = f(c1)
    if abs(f1) <= tol:
        return c1
    raise NoHitError(f"secant on the exit abscissa stalled at |f| = {abs(f1):.2e}", 0.0,
                     np.array([c1, np.nan, np.nan]))


def _exit_orbit(params: PwlParams, delta: float, A: float, B: float, x_exit: float,
                cfg: IntegratorConfig):
    """Slow-manifold orbit leaving the slab at x = x_exit.

    Returns the exit state, the reduced-flow start point and the forward
    slow-system path from the lifted start to the exit.
    """
    sf = slow_fast(params, delta, A, B)
    T_pre = 30 * delta / _fold_rate(params)
    rhs = _reduced_field(sf)
    cache = {}

    def run(xs):
        back, _ = integrate_smooth(rhs, [xs, params.k, 0.0], (0.0, -T_pre), cfg)
        start = back.y[-1][:2]
        state, _, path = _lifted_exit(sf, start, cfg, 4 * T_pre)
        cache[xs] = (state, start, path)
        return state[0] - x_exit

    f0 = run(x_exit)
    xs = _secant(run, x_exit, x_exit - f0, 1e-14 * max(1.0, abs(x_exit)), f0=f0)
    return cache[xs]


def slow_manifold_exit(params: PwlParams, delta: float, A: float = 0.0, B: float = 0.0,
                       x_exit: Optional[float] = None, method: str = "numeric",
                       cfg: IntegratorConfig = TIGHT) -> np.ndarray:
    """Point q_d = (x_exit, y, 1) where the slow manifold leaves the slab.

    ``numeric``: slide back along the reduced flow for 30 fast time
    constants, lift to m0 + d m1 and run the full slow system forward to
    w = 1; the start abscissa is adjusted by secant until the exit has
    x = x_exit.  ``asymptotic``: the first-order trace l(x_exit, d).
    """
    x_exit = 1.5 * params.beta if x_exit is None else float(x_exit)
    if method == "asymptotic":
        return np.array([x_exit, ell(params, x_exit, delta, A, B), 1.0])
    if method != "numeric":
        raise ValueError(f"unknown exit method {method!r}")
    state = _exit_orbit(params, delta, A, B, x_exit, cfg)[0].copy()
    state[0], state[2] = x_exit, 1.0
    return state


# ---------------------------------------------------------------- shooting

def outer_flight(params: PwlParams, delta: float, A: float, B: float, start,
                 t_cap: Optional[float] = None, n_scan: int = 4000):
    """Exact affine flight of X + d(0, 0, Ax + By) from z = d back down to z = d.

    Returns ``(t_d, end_point, flow)``; ``flow(t)`` evaluates the orbit.
    """
    X = _outer_x(params, delta, A, B)
    start = np.asarray(start, dtype=float)
    t_cap = 10 * params.t_plus if t_cap is None else t_cap
    t_min = 1e-6 * params.t_plus
    flow = lambda t: X.flow(t, start)
    ts = np.linspace(t_min, t_cap, n_scan)
    zs = np.array([flow(t)[2] - delta for t in ts])
    down = np.nonzero((zs[:-1] > 0) & (zs[1:] <= 0))[0]
    if zs[0] <= 0 or down.size == 0:
        raise NoReturnError(f"outer flight does not return to z = {delta:g} within {t_cap:g}",
                            t_cap, flow(t_cap))
    i = down[0]
    t_d = brentq(lambda t: flow(t)[2] - delta, ts[i], ts[i + 1], xtol=1e-16)
    end = flow(t_d)
    end[2] = delta
    return float(t_d), end, flow


@dataclass(frozen=True, eq=False)
class ShootingEval:
    F: np.ndarray          # pi F = first two components of (psi(t_d) - p_bar)/d
    t_delta: float
    q_bar: np.ndarray
    p_bar: np.ndarray
    end: np.ndarray


def shoot(params: PwlParams, delta: float, A: float, B: float,
          exit: str = "numeric") -> ShootingEval:
    q = slow_manifold_exit(params, delta, A, B, method=exit)
    p = stable_manifold_point(params, delta, A, B).point
    q_bar = np.array([q[0], q[1], delta * q[2]])
    p_bar = np.array([p[0], p[1], delta * p[2]])
    t_d, end, _ = outer_flight(params, delta, A, B, q_bar)
    return ShootingEval((end[:2] - p_bar[:2]) / delta, t_d, q_bar, p_bar, end)


def shooting_F(params: PwlParams, delta: float, A: float, B: float,
               exit: str = "numeric") -> np.ndarray:
    """pi F(A, B, d); the z-component vanishes by construction of the flight event."""
    return shoot(params, delta, A, B, exit).F


def shooting_jacobian(params: PwlParams, delta: float, A: float, B: float,
                      step: float = 1e-6, exit: str = "numeric") -> np.ndarray:
    """Central-difference Jacobian of pi F with respect to (A, B)."""
    J = np.empty((2, 2))
    for j, (dA, dB) in enumerate(((step, 0.0), (0.0, step))):
        J[:, j] = (shooting_F(params, delta, A + dA, B + dB, exit)
                   - shooting_F(params, delta, A - dA, B - dB, exit)) / (2 * step)
    return J


@dataclass(frozen=True, eq=False)
class HomoclinicReport:
    gap: float
    hausdorff: float
    exit_point: np.ndarray
    flight_end: np.ndarray
    p_bar: np.ndarray
    loop: np.ndarray = field(repr=False)
    reference: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class ShootingResult:
    delta: float
    A: float
    B: float
    residual: float
    t_delta: float
    sigma: float
    lambda_s: float
    lambda_u: complex
    iterations: int
    closure_gap: Optional[float] = None
    hausdorff: Optional[float] = None
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "A": self.A, "B": self.B, "residual": self.residual,
                "t_delta": self.t_delta, "sigma": self.sigma, "lambda_s": self.lambda_s,
                "lambda_u_re": self.lambda_u.real, "lambda_u_im": self.lambda_u.imag,
                "closure_gap": self.closure_gap, "hausdorff": self.hausdorff}


def _newton(params, delta, start, tol, max_iter, exit, trace):
    """Damped chord-Newton: the Jacobian is refreshed only when a step stalls."""
    ab = np.array(start, dtype=float)
    F = shooting_F(params, delta, *ab, exit=exit)
    trace.append((delta, ab.tolist(), float(np.linalg.norm(F))))
    J = None
    fresh = False
    for _ in range(max_iter):
        if np.linalg.norm(F) <= tol:
            return ab, F, len(trace) - 1
        if J is None:
            J, fresh = shooting_jacobian(params, delta, *ab, exit=exit), True
        step = np.linalg.solve(J, -F)
        lam = 1.0
        while True:
            trial = ab + lam * step
            Ft = shooting_F(params, delta, *trial, exit=exit)
            if np.linalg.norm(Ft) < 0.5 * np.linalg.norm(F) or lam < 1e-3:
                break
            lam *= 0.5
        if not np.linalg.norm(Ft) < np.linalg.norm(F):
            if fresh:
                break
            J = None
            continue
        ab, F, fresh = trial, Ft, False
        trace.append((delta, ab.tolist(), float(np.linalg.norm(F))))
    if np.linalg.norm(F) <= tol:
        return ab, F, len(trace) - 1
    return None


def solve_ab(params: PwlParams, delta: float, tol: float = 1e-10, max_iter: int = 30,
             exit: str = "numeric", verify: bool = True,
             delta_max: float = 0.02) -> ShootingResult:
    """Damped Newton for pi F(A, B, d) = 0 started at the limits (A*, B*).

    If the cold start fails, the root is continued from delta_max down to
    delta and used as warm start.
    """
    if not 0 < delta <= delta_max:
        raise ValueError(f"delta must lie in (0, {delta_max:g}]")
    trace: list = []
    sol = None
    try:
        sol = _newton(params, delta, ab_limits(params), tol, max_iter, exit, trace)
    except (NoHitError, NoReturnError, np.linalg.LinAlgError):
        sol = None
    if sol is None:
        ab = np.array(ab_limits(params))
        for d in np.geomspace(delta_max, delta, 6):
            step = _newton(params, float(d), ab, tol, max_iter, exit, trace)
            if step is None:
                raise NewtonDiverged(f"shooting Newton failed at delta = {d:g}", trace)
            ab = step[0]
        sol = _newton(params, delta, ab, tol, max_iter, exit, trace)
        if sol is None:
            raise NewtonDiverged(f"shooting Newton failed at delta = {delta:g}", trace)
    ab, F, its = sol
    ev = shoot(params, delta, *ab, exit=exit)
    spectrum = origin_spectrum(params, delta, *ab)
    gap = haus = None
    if verify:
        rep = verify_homoclinic(params, delta, *ab)
        gap, haus = rep.gap, rep.hausdorff
    return ShootingResult(float(delta), float(ab[0]), float(ab[1]), float(np.linalg.norm(F)),
                          ev.t_delta, spectrum.sigma, spectrum.lambda_s, spectrum.lambda_u,
                          its, gap, haus, trace)


# ---------------------------------------------------------------- homoclinic check

def _unstable_branch(params: PwlParams, delta: float, A: float, B: float, rho: float,
                    cfg: IntegratorConfig = TIGHT):
    """Slow-manifold orbit from radius ``rho`` around the origin to its exit at x = 3b/2.

    The origin repels within the slow manifold, so this orbit lies on W^u.
    It is assembled from the corrected reduced flow run backward (where it
    contracts onto the origin and stays accurate), lifted by m0 + d m1,
    followed by the full slow system across the fold.  Returns the exit
    state in (x, y, w) and the orbit as an (n, 3) array in (x, y, w).
    """
    sf = slow_fast(params, delta, A, B)
    state, start, tail = _exit_orbit(params, delta, A, B, 1.5 * params.beta, cfg)
    rhs = _reduced_field(sf)
    radius = Event(lambda v: float(np.hypot(v[0], v[1])) - rho, -1, "rho")
    back, hit = integrate_smooth(rhs, [start[0], start[1], 0.0], (0.0, -1e4), cfg, [radius])
    if hit is None:
        raise NoHitError("corrected reduced flow did not approach the origin", back.t_last,
                         back.y[-1])
    ts = np.sort(back.resample(200.0)[0])
    xy = back(ts)[:, :2]
    spiral = np.column_stack([xy, [sf.m(x, y) for x, y in xy]])
    ts = np.sort(tail.resample(2e4)[0])
    return state, np.vstack([spiral, tail(ts)])


def _densify(pts: np.ndarray, h: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    out = [pts[:1]]
    for i, L in enumerate(seg):
        n = max(1, int(np.ceil(L / h)))
        s = np.linspace(0, 1, n + 1)[1:, None]
        out.append(pts[i] + s * (pts[i + 1] - pts[i]))
    return np.vstack(out)


def _directed(a: np.ndarray, b: np.ndarray) -> float:
    """sup over points of a of the distance to the polyline b."""
    tree = cKDTree(b)
    _, idx = tree.query(a)
    best = np.full(len(a), np.inf)
    for off in (-1, 0):
        i0 = np.clip(idx + off, 0, len(b) - 2)
        p0, p1 = b[i0], b[i0 + 1]
        d = p1 - p0
        L2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
        s = np.clip(np.einsum("ij,ij->i", a - p0, d) / L2, 0, 1)
        best = np.minimum(best, np.linalg.norm(a - (p0 + s[:, None] * d), axis=1))
    return float(best.max())


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    return max(_directed(a, b), _directed(b, a))


def filippov_loop(params: PwlParams, rho: float, cfg: IntegratorConfig = TIGHT) -> np.ndarray:
    """Polyline of the sliding Shilnikov loop: sliding spiral from radius rho to q, then flight."""
    Z = build_model(params)
    lm = ModelLandmarks.of(params)
    inner = Event(lambda v: float(np.hypot(v[0], v[1])) - rho, -1, "rho")
    seg = slide(Z, lm.q, (0.0, -1e4), cfg, extra_events=[inner])
    if seg.exit_event is not ExitEvent.BOUNDARY_EXIT:
        raise NoHitError("backward slide from q did not reach the inner radius", seg.path.t_last,
                         seg.final_state)
    ts = seg.path.resample(200.0)[0]
    spiral = seg.path(np.sort(ts))
    t = np.linspace(0.0, lm.t_plus, 2000)
    return np.vstack([spiral, x_flight_from_q(params, t)])


def verify_homoclinic(params: PwlParams, delta: float, A: float, B: float,
                      rho: Optional[float] = None) -> HomoclinicReport:
    """Assemble W^u exit, outer flight and stable-manifold entry; measure closure.

    ``gap`` is |flight end - p_bar| in (x, y, z); ``hausdorff`` compares the
    assembled loop with the nonsmooth loop of the model.  The spiral is
    truncated at radius ``rho`` (default delta/100) on both curves.
    """
    rho = delta / 100 if rho is None else rho
    state, wu = _unstable_branch(params, delta, A, B, rho)
    q_bar = np.array([state[0], state[1], delta * state[2]])
    t_d, end, flow = outer_flight(params, delta, A, B, q_bar)
    ws = stable_manifold_point(params, delta, A, B)
    p_bar = np.array([ws.point[0], ws.point[1], delta])
    gap = float(np.linalg.norm(end - p_bar))

    to_xyz = lambda v: np.column_stack([v[:, 0], v[:, 1], delta * v[:, 2]])
    part_u = to_xyz(wu)
    part_f = np.array([flow(t) for t in np.linspace(0.0, t_d, 2000)])
    ts = np.sort(ws.path.resample(2e4)[0])
    part_s = to_xyz(ws.path(ts))[::-1]
    loop = np.vstack([part_u, part_f, part_s])
    ref = filippov_loop(params, rho)
    h = delta / 20
    dist = hausdorff(_densify(loop, h), _densify(ref, h))
    return HomoclinicReport(gap, dist, q_bar, end, p_bar, loop, ref)
