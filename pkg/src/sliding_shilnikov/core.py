"""Switching-surface geometry for 3D Filippov systems.

A Filippov system is a pair of smooth fields (X, Y) glued along the zero set
of a switching function h, with X acting where h > 0 and Y where h < 0.  This
module classifies surface points, evaluates the sliding field and its
normalized version, classifies folds and finds pseudo-equilibria.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, DoubleTangencyError, PreconditionError

FD_STEP = 1e-6
DEFAULT_TOL = 1e-9
ON_SURFACE_TOL = 1e-9


def as_state(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    return arr


def fd_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian with step ``step * max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    h = step * max(1.0, float(np.linalg.norm(x)))
    f0 = np.asarray(func(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        jac[:, j] = (np.asarray(func(x + e)) - np.asarray(func(x - e))) / (2.0 * h)
    return jac


@dataclass(frozen=True, eq=False)
class SmoothField:
    """A smooth vector field on R^3.

    ``func`` maps a state to a velocity.  ``jac`` and ``flow`` are optional
    analytic extras; without ``jac`` the Jacobian falls back to central
    differences.
    """

    func: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    flow: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    name: str = "field"
    linear: Optional[tuple] = None  # (M, b) when the field is affine

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=float)
        return fd_jacobian(self.func, x)

    @property
    def has_analytic_jacobian(self) -> bool:
        return self.jac is not None

    @classmethod
    def affine(cls, matrix, offset, name: str = "affine") -> "SmoothField":
        """Field ``x -> M x + b`` with exact Jacobian and exponential flow."""
        M = np.array(matrix, dtype=float)
        b = np.array(offset, dtype=float)
        n = b.size
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = M
        aug[:n, n] = b

        def flow(t: float, x0) -> np.ndarray:
            E = expm(aug * float(t))
            return E[:n, :n] @ np.asarray(x0, dtype=float) + E[:n, n]

        return cls(func=lambda x: M @ x + b, jac=lambda x: M, flow=flow, name=name,
                   linear=(M, b))

    def reversed(self) -> "SmoothField":
        """The time-reversed field -F."""
        jac = None if self.jac is None else (lambda x, j=self.jac: -np.asarray(j(x)))
        flow = None if self.flow is None else (lambda t, x, f=self.flow: f(-t, x))
        lin = None if self.linear is None else (-self.linear[0], -self.linear[1])
        return SmoothField(lambda x, f=self.func: -np.asarray(f(x)), jac, flow,
                           name=f"-{self.name}", linear=lin)

    def shifted(self, offset, name: str | None = None) -> "SmoothField":
        """F + c for a constant vector c.  Any closed-form flow is dropped."""
        c = np.array(offset, dtype=float)
        lin = None if self.linear is None else (self.linear[0], self.linear[1] + c)
        return SmoothField(lambda x, f=self.func: np.asarray(f(x)) + c, self.jac, None,
                           name=name or f"{self.name}+c", linear=lin)


@dataclass(frozen=True, eq=False)
class SwitchingFunction:
    h: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "h"
    plane: bool = False  # True only for the coordinate plane z = 0

    def __call__(self, x) -> float:
        return float(self.h(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, x) -> np.ndarray:
        if self.hess is not None:
            return np.asarray(self.hess(np.asarray(x, dtype=float)), dtype=float)
        return fd_jacobian(self.grad, np.asarray(x, dtype=float))

    @classmethod
    def plane_z(cls) -> "SwitchingFunction":
        e3 = np.array([0.0, 0.0, 1.0])
        zero = np.zeros((3, 3))
        return cls(h=lambda x: x[2], grad=lambda x: e3, hess=lambda x: zero, name="z",
                   plane=True)


@dataclass(frozen=True, eq=False)
class FilippovSystem:
    """Z = X on {h > 0}, Y on {h < 0}, defined on an axis-aligned box."""

    X: SmoothField
    Y: SmoothField
    h: SwitchingFunction = field(default_factory=SwitchingFunction.plane_z)
    box: tuple = ((-1e6, -1e6, -1e6), (1e6, 1e6, 1e6))
    name: str = "Z"

    def __post_init__(self):
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("box must be ((xlo, ylo, zlo), (xhi, yhi, zhi)) with lo < hi")
        object.__setattr__(self, "box", (lo, hi))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.box[0]) and np.all(x <= self.box[1]))

    def check_domain(self, x) -> np.ndarray:
        x = as_state(x)
        if not self.contains(x):
            raise DomainError(f"state {x.tolist()} outside the bounding box")
        return x

    def box_margin(self, x) -> float:
        """Signed distance to the box faces (positive inside)."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.box[0]), np.min(self.box[1] - x)))

    def xh(self, x) -> float:
        return lie_derivative(self.X, self.h, x, self)

    def yh(self, x) -> float:
        return lie_derivative(self.Y, self.h, x, self)

    def reversed(self) -> "FilippovSystem":
        """The system with both fields reversed (backward time)."""
        return FilippovSystem(self.X.reversed(), self.Y.reversed(), self.h, self.box,
                              name=f"reversed({self.name})")

    def with_fields(self, X: SmoothField | None = None, Y: SmoothField | None = None,
                    name: str | None = None) -> "FilippovSystem":
        return FilippovSystem(X or self.X, Y or self.Y, self.h, self.box, name or self.name)


class Region(str, enum.Enum):
    CROSSING_UP = "CrossingUp"
    CROSSING_DOWN = "CrossingDown"
    SLIDING = "Sliding"
    ESCAPING = "Escaping"
    TANGENCY_X = "TangencyX"
    TANGENCY_Y = "TangencyY"
    TANGENCY_BOTH = "TangencyBoth"


class FoldType(str, enum.Enum):
    VISIBLE_X = "VisibleFoldX"
    INVISIBLE_X = "InvisibleFoldX"
    VISIBLE_Y = "VisibleFoldY"
    INVISIBLE_Y = "InvisibleFoldY"
    CUSP_LIKE = "CuspLike"
    NOT_A_FOLD = "NotAFold"


class PseudoType(str, enum.Enum):
    SADDLE_FOCUS_UNSTABLE = "PseudoSaddleFocusUnstable"
    SADDLE_FOCUS_STABLE = "PseudoSaddleFocusStable"
    FOCUS = "PseudoFocus"
    NODE = "PseudoNode"
    SADDLE = "PseudoSaddle"
    NON_HYPERBOLIC = "NonHyperbolic"


@dataclass(frozen=True)
class RegionClass:
    tag: Region
    xh: float
    yh: float


@dataclass(frozen=True)
class FoldClass:
    tag: FoldType
    second_derivative: float


@dataclass(frozen=True, eq=False)
class PseudoEquilibrium:
    location: np.ndarray
    jacobian2d: np.ndarray
    eigenvalues: np.ndarray
    classification: PseudoType
    region: Region
    residual: float


def lie_derivative(field: SmoothField, h: SwitchingFunction, xi,
                   system: FilippovSystem | None = None) -> float:
    """<grad h(xi), F(xi)>; checks the box when ``system`` is given."""
    xi = system.check_domain(xi) if system is not None else as_state(xi)
    return float(h.gradient(xi) @ field(xi))


def lie_gradient(field: SmoothField, h: SwitchingFunction, xi) -> np.ndarray:
    """Gradient of the scalar Fh = <grad h, F>."""
    xi = as_state(xi)
    return field.jacobian(xi).T @ h.gradient(xi) + h.hessian(xi) @ field(xi)


def second_lie_derivative(field: SmoothField, h: SwitchingFunction, xi) -> float:
    """F^2 h = <grad(Fh), F>."""
    return float(lie_gradient(field, h, xi) @ field(as_state(xi)))


def _require_on_surface(Z: FilippovSystem, xi) -> np.ndarray:
    xi = Z.check_domain(xi)
    if abs(Z.h(xi)) > ON_SURFACE_TOL:
        raise PreconditionError(f"point {xi.tolist()} is not on the switching surface "
                                f"(h = {Z.h(xi):.3e})")
    return xi


def region_tag(xh: float, yh: float, tol: float = DEFAULT_TOL) -> Region:
    tx, ty = abs(xh) <= tol, abs(yh) <= tol
    if tx and ty:
        return Region.TANGENCY_BOTH
    if tx:
        return Region.TANGENCY_X
    if ty:
        return Region.TANGENCY_Y
    if xh < 0 < yh:
        return Region.SLIDING
    if yh < 0 < xh:
        return Region.ESCAPING
    return Region.CROSSING_UP if xh > 0 else Region.CROSSING_DOWN


def classify(Z: FilippovSystem, xi, tol: float = DEFAULT_TOL) -> RegionClass:
    xi = _require_on_surface(Z, xi)
    xh, yh = Z.xh(xi), Z.yh(xi)
    return RegionClass(region_tag(xh, yh, tol), xh, yh)


def sliding_field_unchecked(Z: FilippovSystem, xi: np.ndarray) -> np.ndarray:
    """Filippov convex combination without region checks."""
    g = Z.h.gradient(xi)
    X, Y = Z.X(xi), Z.Y(xi)
    xh, yh = float(g @ X), float(g @ Y)
    den = yh - xh
    if abs(den) <= 1e-12:
        raise DoubleTangencyError(f"Yh - Xh = {den:.3e} at {xi.tolist()}")
    return (yh * X - xh * Y) / den


def sliding_field(Z: FilippovSystem, xi, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Sliding vector field (Yh X - Xh Y) / (Yh - Xh) on the sliding or escaping region."""
    rc = classify(Z, xi, tol)
    if rc.tag not in (Region.SLIDING, Region.ESCAPING):
        raise PreconditionError(f"sliding field requested at a {rc.tag.value} point")
    return sliding_field_unchecked(Z, as_state(xi))


def normalized_sliding_field(Z: FilippovSystem, xi) -> np.ndarray:
    """Yh X - Xh Y, defined on all of the surface."""
    xi = _require_on_surface(Z, xi)
    g = Z.h.gradient(xi)
    X, Y = Z.X(xi), Z.Y(xi)
    return float(g @ Y) * X - float(g @ X) * Y


def normalized_jacobian(Z: FilippovSystem, xi) -> np.ndarray:
    """3x3 Jacobian of the ambient extension xi -> Yh X - Xh Y."""
    xi = as_state(xi)
    g = Z.h.gradient(xi)
    X, Y = Z.X(xi), Z.Y(xi)
    DX, DY = Z.X.jacobian(xi), Z.Y.jacobian(xi)
    gx = lie_gradient(Z.X, Z.h, xi)
    gy = lie_gradient(Z.Y, Z.h, xi)
    return (g @ Y) * DX + np.outer(X, gy) - (g @ X) * DY - np.outer(Y, gx)


def fold_classify(Z: FilippovSystem, xi, tol: float = DEFAULT_TOL) -> FoldClass:
    xi = _require_on_surface(Z, xi)
    xh, yh = Z.xh(xi), Z.yh(xi)
    tx, ty = abs(xh) <= tol, abs(yh) <= tol
    if tx and ty:
        return FoldClass(FoldType.CUSP_LIKE, float("nan"))
    if not (tx or ty):
        return FoldClass(FoldType.NOT_A_FOLD, float("nan"))
    if tx:
        s2 = second_lie_derivative(Z.X, Z.h, xi)
        if abs(s2) <= tol:
            return FoldClass(FoldType.CUSP_LIKE, s2)
        return FoldClass(FoldType.VISIBLE_X if s2 > 0 else FoldType.INVISIBLE_X, s2)
    s2 = second_lie_derivative(Z.Y, Z.h, xi)
    if abs(s2) <= tol:
        return FoldClass(FoldType.CUSP_LIKE, s2)
    # Y lives below the surface, so it is visible when it curves downward.
    return FoldClass(FoldType.VISIBLE_Y if s2 < 0 else FoldType.INVISIBLE_Y, s2)


@dataclass(frozen=True, eq=False)
class SurfaceChart:
    """Graph chart of the switching surface over two coordinate axes.

    The dropped axis is the one where |grad h| is largest at ``anchor``.
    """

    h: SwitchingFunction
    drop: int
    anchor: np.ndarray

    @classmethod
    def at(cls, h: SwitchingFunction, xi) -> "SurfaceChart":
        xi = as_state(xi)
        return cls(h, int(np.argmax(np.abs(h.gradient(xi)))), xi.copy())

    @property
    def keep(self) -> tuple:
        return tuple(i for i in range(3) if i != self.drop)

    def coords(self, xi) -> np.ndarray:
        return np.asarray(xi, dtype=float)[list(self.keep)]

    def lift(self, uv, max_iter: int = 50) -> np.ndarray:
        """Point on the surface with the given chart coordinates."""
        p = self.anchor.copy()
        p[list(self.keep)] = np.asarray(uv, dtype=float)
        for _ in range(max_iter):
            val = self.h(p)
            if abs(val) <= 1e-15:
                break
            p[self.drop] -= val / self.h.gradient(p)[self.drop]
        return p

    def tangent_basis(self, xi) -> np.ndarray:
        """3x2 matrix whose columns are d(lift)/du_k."""
        g = self.h.gradient(xi)
        T = np.zeros((3, 2))
        for col, k in enumerate(self.keep):
            T[k, col] = 1.0
            T[self.drop, col] = -g[k] / g[self.drop]
        return T


def _chart_jacobian(Z: FilippovSystem, chart: SurfaceChart, xi: np.ndarray) -> np.ndarray:
    J = normalized_jacobian(Z, xi)
    return J[list(chart.keep), :] @ chart.tangent_basis(xi)


def _classify_spectrum(eigs: np.ndarray, region: Region, tol: float) -> PseudoType:
    re = eigs.real
    if np.any(np.abs(re) <= tol):
        return PseudoType.NON_HYPERBOLIC
    if abs(eigs[0].imag) > tol:
        unstable = re[0] > 0
        if region is Region.SLIDING and unstable:
            return PseudoType.SADDLE_FOCUS_UNSTABLE
        if region is Region.ESCAPING and not unstable:
            return PseudoType.SADDLE_FOCUS_STABLE
        return PseudoType.FOCUS
    if re[0] * re[1] < 0:
        return PseudoType.SADDLE
    return PseudoType.NODE


def pseudo_equilibrium_at(Z: FilippovSystem, xi, chart: SurfaceChart | None = None,
                          tol: float = DEFAULT_TOL) -> PseudoEquilibrium:
    """Classify a known zero of the sliding field."""
    xi = as_state(xi)
    chart = chart or SurfaceChart.at(Z.h, xi)
    rc = classify(Z, xi, tol)
    if rc.tag not in (Region.SLIDING, Region.ESCAPING):
        raise PreconditionError(f"pseudo-equilibrium must lie in the sliding or escaping "
                                f"region, got {rc.tag.value}")
    J2 = _chart_jacobian(Z, chart, xi) / (rc.yh - rc.xh)
    eigs = np.linalg.eigvals(J2)
    eigs = eigs[np.lexsort((-eigs.imag, -eigs.real))]
    residual = float(np.linalg.norm(chart.coords(sliding_field_unchecked(Z, xi))))
    return PseudoEquilibrium(xi, J2, eigs, _classify_spectrum(eigs, rc.tag, tol), rc.tag,
                             residual)


def _newton_chart(Z: FilippovSystem, chart: SurfaceChart, uv0: np.ndarray,
                  max_iter: int = 50, max_halvings: int = 8):
    def resid(uv):
        p = chart.lift(uv)
        if not Z.contains(p):
            return None, p
        return chart.coords(normalized_sliding_field(Z, p)), p

    uv = np.asarray(uv0, dtype=float)
    F, p = resid(uv)
    if F is None:
        return None
    for _ in range(max_iter):
        nF = float(np.linalg.norm(F))
        if nF <= 1e-12:
            return uv
        try:
            step = np.linalg.solve(_chart_jacobian(Z, chart, p), -F)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = uv + lam * step
            Ft, pt = resid(trial)
            if Ft is not None and np.linalg.norm(Ft) < nF:
                break
            lam *= 0.5
        else:
            return None
        uv, F, p = trial, Ft, pt
        if lam * np.linalg.norm(step) <= 1e-13:
            return uv
    return uv if np.linalg.norm(F) <= 1e-12 else None


def find_pseudo_equilibria(Z: FilippovSystem, search_box: Sequence[Sequence[float]],
                           grid_n: int = 10, tol: float = DEFAULT_TOL,
                           chart: SurfaceChart | None = None) -> list[PseudoEquilibrium]:
    """Zeros of the sliding field in a chart-coordinate box of the surface.

    Damped Newton on the normalized field is started from a grid_n x grid_n
    grid.  Roots outside the box, outside the sliding/escaping regions or
    with sliding-field residual above 1e-9 are dropped.
    """
    (a0, a1), (b0, b1) = (sorted(map(float, r)) for r in search_box)
    if chart is None:
        lo, hi = Z.box
        centre = np.clip(np.zeros(3), lo, hi)
        chart = SurfaceChart.at(Z.h, centre)
        chart = SurfaceChart(Z.h, chart.drop, chart.lift(chart.coords(centre)))
    found: list[PseudoEquilibrium] = []
    pad = 1e-9 * max(1.0, a1 - a0, b1 - b0)
    for a in np.linspace(a0, a1, grid_n):
        for b in np.linspace(b0, b1, grid_n):
            uv = _newton_chart(Z, chart, np.array([a, b]))
            if uv is None:
                continue
            if not (a0 - pad <= uv[0] <= a1 + pad and b0 - pad <= uv[1] <= b1 + pad):
                continue
            p = chart.lift(uv)
            if any(np.linalg.norm(p - e.location) < 1e-7 for e in found):
                continue
            rc = classify(Z, p, tol)
            if rc.tag not in (Region.SLIDING, Region.ESCAPING):
                continue
            pe = pseudo_equilibrium_at(Z, p, chart, tol)
            if pe.residual <= 1e-9:
                found.append(pe)
    found.sort(key=lambda e: tuple(e.location))
    return found
