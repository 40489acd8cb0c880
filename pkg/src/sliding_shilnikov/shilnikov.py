"""Separation function, spiral intersections and sliding periodic orbits.

Near a sliding Shilnikov loop the X-flight carries a short arc of the fold
(gamma_r, centred at the fold point q) to a curve mu_r on the switching
surface.  Backward sliding orbits of gamma_r spiral into the pseudo-focus
and cut mu_r in a sequence of arcs I_1, I_2, ...  Composing the backward
slide with the inverse flight gives return maps psi_i of gamma_r whose fixed
points are sliding periodic orbits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .core import (FilippovSystem, FoldType, SmoothField, find_pseudo_equilibria,
                   fold_classify, lie_gradient, sliding_field_unchecked)
from .errors import FitFailure, NoReturnError, OrbitEscape, PreconditionError
from .pwl_model import ModelLandmarks, PwlParams, build_model
from .trajectory import (DensePath, Event, ExitEvent, FilippovTrajectory, IntegratorConfig,
                         Mode, TrajectoryEvent, TrajectorySegment, integrate_smooth, slide)

SPIRAL_CFG = IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15)
CLOSE_CFG = IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15)


# ---------------------------------------------------------------- setup

@dataclass(frozen=True, eq=False)
class UnfoldingFamily:
    base: FilippovSystem
    perturb: Callable[[float], FilippovSystem]

    def __call__(self, eps: float) -> FilippovSystem:
        return self.perturb(float(eps))


def model_unfolding(params: PwlParams) -> UnfoldingFamily:
    """Unfold the model loop through the sliding branch: Y_eps = Y + eps (0, 6a/b, 1).

    X, the fold line and hence mu are untouched while the pseudo-focus moves
    to (-3 a eps / b, -eps, 0).  The y-shift is tuned so that the trace of
    the normalized sliding Jacobian stays at b/8, keeping the focus
    uniformly hyperbolic along the family.
    """
    base = build_model(params)
    a, b, k = params.alpha, params.beta, params.k

    def perturb(eps: float) -> FilippovSystem:
        Y = SmoothField.affine([[0, 0, 0], [0, 3 * a / b, 0], [0, 0, 0]],
                               [a, b + 6 * a * eps / b, k + eps], name=f"Y+{eps:g}")
        return base.with_fields(Y=Y, name=f"{base.name}(eps={eps:g})")

    return UnfoldingFamily(base, perturb)


def unfolded_focus(params: PwlParams, eps: float) -> np.ndarray:
    return np.array([-3 * params.alpha * eps / params.beta, -eps, 0.0])


def unfolded_separation(params: PwlParams, eps: float) -> float:
    """Closed-form g along the model unfolding (mu is the parabola y = 3bx/4a - 3x^2/8a)."""
    a, b = params.alpha, params.beta
    return -1.25 * eps - 27 * a * eps ** 2 / (8 * b ** 2)


@dataclass(frozen=True, eq=False)
class LoopGeometry:
    """A Filippov system together with the landmarks of its (near) loop.

    ``q`` anchors the fold arc, ``p_guess`` seeds the pseudo-focus search and
    ``t_scale`` is the typical flight time.
    """

    Z: FilippovSystem
    q: np.ndarray
    p_guess: np.ndarray
    t_scale: float = 1.0
    search: float = 0.5

    @classmethod
    def for_model(cls, params: PwlParams, Z: Optional[FilippovSystem] = None,
                  p_guess=None) -> "LoopGeometry":
        lm = ModelLandmarks.of(params)
        p = lm.p if p_guess is None else np.asarray(p_guess, dtype=float)
        return cls(Z if Z is not None else build_model(params), lm.q, p, lm.t_plus,
                   0.5 * params.beta)

    @classmethod
    def for_unfolding(cls, params: PwlParams, eps: float) -> "LoopGeometry":
        return cls.for_model(params, model_unfolding(params)(eps), unfolded_focus(params, eps))

    def pseudo_focus(self):
        c = self.p_guess
        box = ((c[0] - self.search, c[0] + self.search), (c[1] - self.search, c[1] + self.search))
        roots = find_pseudo_equilibria(self.Z, box, grid_n=3)
        if not roots:
            raise PreconditionError("no pseudo-equilibrium near the expected location")
        return min(roots, key=lambda e: np.linalg.norm(e.location - c))


@dataclass(frozen=True, eq=False)
class FoldArc:
    """Arc of the X-fold curve {h = 0, Xh = 0} centred at q, by arclength s."""

    Z: FilippovSystem
    center: np.ndarray
    tangent: np.ndarray
    radius: float

    @classmethod
    def around(cls, Z: FilippovSystem, q, r: float) -> "FoldArc":
        q = np.asarray(q, dtype=float)
        t = np.cross(Z.h.gradient(q), lie_gradient(Z.X, Z.h, q))
        t /= np.linalg.norm(t)
        if t @ np.ones(3) < 0:
            t = -t
        return cls(Z, q, t, float(r))

    def point(self, s: float) -> np.ndarray:
        x = self.center + float(s) * self.tangent
        for _ in range(30):
            F = np.array([self.Z.h(x), float(self.Z.h.gradient(x) @ self.Z.X(x))])
            if np.max(np.abs(F)) <= 1e-15:
                break
            J = np.vstack([self.Z.h.gradient(x), lie_gradient(self.Z.X, self.Z.h, x)])
            x = x - np.linalg.lstsq(J, F, rcond=None)[0]
        return x

    def samples(self, n: int):
        s = np.linspace(-self.radius, self.radius, int(n))
        return s, np.array([self.point(v) for v in s])


def flight(Z: FilippovSystem, xi, t_scale: float = 1.0, cfg: Optional[IntegratorConfig] = None,
           t_cap: Optional[float] = None):
    """X-flight from a fold point to its first transversal return to the surface.

    Returns ``(time, landing_point, DensePath)``.
    """
    cfg = cfg or SPIRAL_CFG
    t_cap = 10.0 * t_scale if t_cap is None else t_cap
    path, hit = integrate_smooth(Z.X, xi, (0.0, t_cap), cfg, [Event(Z.h, -1, "HitSigma")], Z,
                                 t_min=1e-6 * t_scale)
    if hit is None or hit.name != "HitSigma":
        raise NoReturnError(f"no return to the surface within t = {t_cap:g}", path.t_last,
                            path.y[-1])
    landing = hit.state.copy()
    landing[2] = 0.0 if Z.h.plane else landing[2]
    return hit.t, landing, path


@dataclass(eq=False)
class MuCurve:
    arc: FoldArc
    s: np.ndarray
    points: np.ndarray
    times: np.ndarray
    t_scale: float

    def __post_init__(self):
        self._spline = CubicSpline(self.s, self.points[:, :2])
        self._dspline = self._spline.derivative()

    def approx(self, s) -> np.ndarray:
        return self._spline(s)

    def approx_tangent(self, s) -> np.ndarray:
        return self._dspline(s)

    def land(self, s: float, cfg: Optional[IntegratorConfig] = None):
        """Exact landing (time, point) for the fold point with parameter s."""
        t, x, _ = flight(self.arc.Z, self.arc.point(s), self.t_scale, cfg)
        return t, x


def mu_curve(geom: LoopGeometry, arc: FoldArc, n: int = 121,
             cfg: Optional[IntegratorConfig] = None) -> MuCurve:
    """Landing curve of the X-flight from ``n`` samples of a fold arc."""
    s, pts = arc.samples(n)
    return mu_from_points(geom, arc, s, pts, cfg)


def mu_from_points(geom: LoopGeometry, arc: FoldArc, s, pts,
                   cfg: Optional[IntegratorConfig] = None) -> MuCurve:
    Z = geom.Z
    times, lands = [], []
    for x in pts:
        fc = fold_classify(Z, x)
        if fc.tag is not FoldType.VISIBLE_X or Z.yh(x) <= 0:
            raise PreconditionError(f"arc sample {np.asarray(x).tolist()} is not a visible "
                                    f"X-fold with Yh > 0 ({fc.tag.value})")
        t, land, _ = flight(Z, x, geom.t_scale, cfg)
        times.append(t)
        lands.append(land)
    return MuCurve(arc, np.asarray(s, float), np.array(lands), np.array(times), geom.t_scale)


# ---------------------------------------------------------------- separation

def separation(geom: LoopGeometry, r: float = 0.3, n: int = 101,
               window: Optional[float] = None) -> float:
    """Signed gap g = k(x*) - y* between mu (fitted as y = k(x)) and the pseudo-focus.

    k is a least-squares quadratic through the 5 mu samples nearest the
    pseudo-focus (x*, y*).  g > 0 when mu passes above it.
    """
    p = geom.pseudo_focus().location
    mu = mu_curve(geom, FoldArc.around(geom.Z, geom.q, r), n)
    d = np.linalg.norm(mu.points[:, :2] - p[:2], axis=1)
    window = 0.5 * r if window is None else window
    inside = np.nonzero(d <= window)[0]
    if inside.size < 5:
        raise FitFailure(f"only {inside.size} mu samples within {window:g} of the pseudo-focus")
    idx = inside[np.argsort(d[inside])[:5]]
    coef = np.polyfit(mu.points[idx, 0] - p[0], mu.points[idx, 1] - p[1], 2)
    return float(np.polyval(coef, 0.0))


# ---------------------------------------------------------------- spiral arcs

@dataclass(frozen=True)
class Crossing:
    label: int
    s_pre: float       # fold-arc parameter of the flight preimage
    time: float        # backward sliding time (positive)
    point: np.ndarray


class _SpiralContext:
    """Shared geometry for detecting and refining crossings with mu."""

    def __init__(self, geom: LoopGeometry, r: float, n_mu: int, cfg: IntegratorConfig):
        self.geom, self.Z, self.cfg = geom, geom.Z, cfg
        pe = geom.pseudo_focus()
        self.pe = pe
        self.p = pe.location
        lam = pe.eigenvalues[0]
        self.half_turn = np.pi / abs(lam.imag)
        self.arc = FoldArc.around(self.Z, geom.q, r)
        self.mu = mu_curve(geom, self.arc, n_mu, cfg)
        P = self.mu.points[:, :2] - self.p[:2]
        _, _, vt = np.linalg.svd(P - P.mean(axis=0))
        e1 = vt[0]
        e2 = np.array([-e1[1], e1[0]])
        self.frame = np.vstack([e1, e2])
        xi = P @ self.frame.T
        if not (np.all(np.diff(xi[:, 0]) > 0) or np.all(np.diff(xi[:, 0]) < 0)):
            raise FitFailure("mu is not a graph over its principal direction")
        order = np.argsort(xi[:, 0])
        self.g_lo, self.g_hi = xi[order[0], 0], xi[order[-1], 0]
        self.graph = CubicSpline(xi[order, 0], xi[order, 1])
        ss = np.linspace(-r, r, 4001)
        dense = self.mu.approx(ss) - self.p[:2]
        j = int(np.argmin(np.linalg.norm(dense, axis=1)))
        self.gap = float(np.linalg.norm(dense[j]))
        scale = float(np.max(np.linalg.norm(P, axis=1)))
        if self.gap > 1e-9 * scale:
            n = dense[j] / self.gap
        else:
            n = e2 if e2 @ (self.geom.q[:2] - self.p[:2]) > 0 else -e2
        self.ref_angle = float(np.arctan2(n[1], n[0]))
        self.rot = 0  # fixed on first use

    def rel(self, pts) -> np.ndarray:
        return (np.atleast_2d(pts)[:, :2] - self.p[:2]) @ self.frame.T

    def f_values(self, pts) -> np.ndarray:
        xi = self.rel(pts)
        out = xi[:, 1] - self.graph(np.clip(xi[:, 0], self.g_lo, self.g_hi))
        out[(xi[:, 0] < self.g_lo) | (xi[:, 0] > self.g_hi)] = np.nan
        return out

    def angles(self, pts) -> np.ndarray:
        d = np.atleast_2d(pts)[:, :2] - self.p[:2]
        return np.arctan2(d[:, 1], d[:, 0]) - self.ref_angle

    @staticmethod
    def label_of(phi: float) -> int:
        m = int(np.round(phi / (2 * np.pi)))
        return 2 * m + (1 if phi - 2 * np.pi * m > 0 else 0)

    def s_guess(self, point) -> float:
        ss = np.linspace(self.mu.s[0], self.mu.s[-1], 2001)
        d = np.linalg.norm(self.mu.approx(ss) - np.asarray(point)[:2], axis=1)
        return float(ss[np.argmin(d)])

    def refine(self, path: DensePath, t0: float, s0: float):
        """Newton on P(t) = L(s) with P the sliding path and L the exact flight landing."""
        t_lo, t_hi = min(path.t_first, path.t_last), max(path.t_first, path.t_last)
        t, s = t0, s0
        for _ in range(12):
            P = path(t)
            _, L = self.mu.land(s, self.cfg)
            R = P[:2] - L[:2]
            if np.linalg.norm(R) <= 1e-13:
                break
            J = np.column_stack([sliding_field_unchecked(self.Z, P)[:2],
                                 -self.mu.approx_tangent(s)])
            dt, ds = np.linalg.solve(J, -R)
            t = float(np.clip(t + dt, t_lo, t_hi))
            s = s + ds
        return t, s, np.linalg.norm(R)

    def backward_crossings(self, s_gen: float, max_label: Optional[int] = None,
                           max_count: Optional[int] = None, max_turns: int = 400,
                           target: Optional[int] = None):
        """Crossings of mu_r along the backward sliding orbit of gamma_r(s_gen)."""
        x = self.arc.point(s_gen)
        t = 0.0
        out: list[Crossing] = []
        phi_prev = None
        stop_radius = self.gap / 3.0 if self.gap > 0 else 0.0
        chunk = 2.0 * self.half_turn
        for _ in range(max_turns):
            seg = slide(self.Z, x, (t, t - chunk), self.cfg)
            if seg.exit_event in (ExitEvent.FOLD_EXIT, ExitEvent.LEFT_DOMAIN,
                                  ExitEvent.BOUNDARY_EXIT):
                raise OrbitEscape(f"backward sliding orbit left the sliding region "
                                  f"({seg.exit_event.value})", seg.path.t_last, seg.final_state)
            path = seg.path
            tt = path.t
            sub = np.concatenate([np.linspace(tt[i], tt[i + 1], 5)[:-1] for i in range(len(tt) - 1)]
                                 + [tt[-1:]])
            pts = path(sub)
            raw = self.angles(pts)
            ang = np.unwrap(raw)
            if phi_prev is None:
                ang = ang - 2 * np.pi * np.round((ang[0]) / (2 * np.pi))  # start in (-pi, pi]
                if self.rot == 0:
                    self.rot = 1 if ang[-1] > ang[0] else -1
                phi = self.rot * ang
            else:
                phi = self.rot * ang
                phi = phi + (phi_prev - phi[0])
            fv = self.f_values(pts)
            for i in range(len(sub) - 1):
                a, b = fv[i], fv[i + 1]
                if not (np.isfinite(a) and np.isfinite(b)) or a * b > 0 or a == b:
                    continue
                w = a / (a - b)
                t_guess = sub[i] + w * (sub[i + 1] - sub[i])
                tc, sc, res = self.refine(path, t_guess, self.s_guess(path(t_guess)))
                if res > 1e-9 or not (-self.arc.radius - 1e-12 <= sc <= self.arc.radius + 1e-12):
                    continue
                phic = phi[i] + w * (phi[i + 1] - phi[i])
                lab = self.label_of(phic)
                if out and out[-1].label == lab and abs(out[-1].time + tc) < 1e-9:
                    continue
                out.append(Crossing(lab, float(sc), float(-tc), path(tc)))
                if target is not None and lab == target:
                    return out
            phi_prev = phi[-1]
            t, x = path.t_last, seg.final_state
            radius = float(np.linalg.norm(x[:2] - self.p[:2]))
            if seg.exit_event is ExitEvent.CONVERGED or radius < stop_radius:
                break
            if max_label is not None and self.label_of(phi_prev) > max_label + 1:
                break
            if max_count is not None and len(out) >= max_count:
                break
        return out


@dataclass
class IntersectionArc:
    index: int
    label: int
    generators: np.ndarray
    preimage: tuple
    endpoints: np.ndarray
    time_window: tuple
    diameter: float
    complete: bool
    distance_to_p: float


@dataclass(eq=False)
class SpiralIntersection:
    geometry: LoopGeometry
    r: float
    p: np.ndarray
    eigenvalues: np.ndarray
    fold_arc: FoldArc
    mu: MuCurve
    arcs: list
    truncated: bool
    context: _SpiralContext = field(repr=False)

    def arc(self, i: int) -> IntersectionArc:
        if not 1 <= i <= len(self.arcs):
            raise PreconditionError(f"arc index {i} outside 1..{len(self.arcs)}")
        return self.arcs[i - 1]


def spiral_intersections(geom: LoopGeometry, r: float = 0.3, i_max: int = 6, n_band: int = 9,
                         n_mu: int = 121, cfg: IntegratorConfig = SPIRAL_CFG,
                         min_diameter: float = 1e-11) -> SpiralIntersection:
    """Arcs I_i of mu_r cut out by the backward sliding band of gamma_r.

    The band is represented by ``n_band`` generator orbits including the two
    arc endpoints.  Arcs are grouped by winding label and ordered toward the
    pseudo-focus; an arc is ``complete`` when every generator reaches it.
    """
    if i_max < 0:
        raise ValueError("i_max must be nonnegative")
    ctx = _SpiralContext(geom, r, n_mu, cfg)
    gens = np.linspace(-r, r, max(2, int(n_band)))
    by_label: dict[int, list] = {}
    for s in gens:
        for c in ctx.backward_crossings(float(s), max_count=i_max + 3):
            by_label.setdefault(c.label, []).append((float(s), c))
    arcs, truncated = [], False
    for lab in sorted(by_label):
        members = by_label[lab]
        spre = np.array([c.s_pre for _, c in members])
        lo, hi = float(spre.min()), float(spre.max())
        ends = np.array([ctx.mu.land(lo, cfg)[1], ctx.mu.land(hi, cfg)[1]])
        diam = float(np.linalg.norm(ends[1] - ends[0]))
        if diam < min_diameter:
            truncated = True
            break
        times = [c.time for _, c in members]
        pts = np.array([c.point for _, c in members])
        arcs.append(IntersectionArc(
            index=0, label=lab, generators=np.array([g for g, _ in members]),
            preimage=(lo, hi), endpoints=ends, time_window=(min(times), max(times)),
            diameter=diam, complete=len(members) == len(gens),
            distance_to_p=float(np.max(np.linalg.norm(np.vstack([pts, ends])[:, :2]
                                                      - ctx.p[:2], axis=1)))))
    # index by Hausdorff distance to the focus, outermost first
    arcs.sort(key=lambda a: -a.distance_to_p)
    arcs = arcs[:i_max]
    for i, a in enumerate(arcs, 1):
        a.index = i
    return SpiralIntersection(geom, float(r), ctx.p, ctx.pe.eigenvalues, ctx.arc, ctx.mu, arcs,
                              truncated, ctx)


@dataclass(frozen=True)
class ReturnPoint:
    s: float
    point: np.ndarray
    sliding_time: float
    flight_time: float


def return_map(inter: SpiralIntersection, i: int, s: float) -> ReturnPoint:
    """psi_i: follow the backward slide from gamma_r(s) to its crossing with I_i,
    then map back to gamma_r through the inverse X-flight."""
    arc = inter.arc(i)
    r = inter.r
    if not -r - 1e-12 <= s <= r + 1e-12:
        raise PreconditionError(f"s = {s} is not on gamma_r (|s| <= {r})")
    ctx = inter.context
    for c in ctx.backward_crossings(float(s), max_label=arc.label, target=arc.label):
        if c.label == arc.label:
            t_fl, _ = ctx.mu.land(c.s_pre, ctx.cfg)
            return ReturnPoint(c.s_pre, inter.fold_arc.point(c.s_pre), c.time, t_fl)
    raise OrbitEscape(f"backward orbit of s = {s} misses arc I_{i}")


@dataclass(eq=False)
class PeriodicOrbit:
    index: int
    label: int
    anchor_s: float
    anchor: np.ndarray
    period: float
    residual: float
    closure: float
    iterations: int
    flight_time: float
    sliding_time: float
    orbit: FilippovTrajectory = field(repr=False)

    def to_dict(self) -> dict:
        return {"index": self.index, "anchor": self.anchor.tolist(), "period": self.period,
                "residual": self.residual}


@dataclass(eq=False)
class OrbitSearch:
    orbits: list
    skipped: list
    intersection: SpiralIntersection


def _close_loop(inter: SpiralIntersection, s: float, cfg: IntegratorConfig = CLOSE_CFG):
    """One period from gamma_r(s): flight, then forward slide to the fold.

    The forward slide spirals outward and amplifies integration error, hence
    the tighter default tolerances.
    """
    ctx = inter.context
    Z = ctx.Z
    start = inter.fold_arc.point(s)
    t_fl, land, fpath = flight(Z, start, ctx.geom.t_scale, cfg)
    seg_f = TrajectorySegment(Mode.FREE_ABOVE, fpath, ExitEvent.HIT_SIGMA)
    t_cap = 4.0 * (inter.arcs[-1].time_window[1] if inter.arcs else 1.0) + 50.0
    sl = slide(Z, land, (t_fl, t_fl + t_cap), cfg)
    if sl.exit_event is not ExitEvent.FOLD_EXIT:
        raise OrbitEscape(f"loop from s = {s} did not return to the fold ({sl.exit_event.value})")
    period = sl.path.t_last
    traj = FilippovTrajectory(
        [seg_f, sl], [TrajectoryEvent(t_fl, ExitEvent.HIT_SIGMA.value, land),
                      TrajectoryEvent(period, ExitEvent.FOLD_EXIT.value, sl.final_state)])
    return period, float(np.linalg.norm(sl.final_state - start)), traj, t_fl


def find_periodic_orbits(geom: LoopGeometry, r: float = 0.04, i_max: int = 6,
                         step_tol: float = 1e-10, max_iter: int = 200,
                         intersection: Optional[SpiralIntersection] = None,
                         close_cfg: IntegratorConfig = CLOSE_CFG, **kwargs) -> OrbitSearch:
    """Fixed points of psi_i for i <= i_max, each closed into a full loop.

    Arcs where the iteration leaves the arc or fails to contract are listed
    in ``skipped`` with the reason.
    """
    inter = intersection or spiral_intersections(geom, r, i_max, **kwargs)
    orbits, skipped = [], []
    for arc in inter.arcs[:i_max]:
        s = 0.5 * (arc.preimage[0] + arc.preimage[1])
        try:
            for it in range(1, max_iter + 1):
                nxt = return_map(inter, arc.index, s).s
                step = abs(nxt - s)
                s = nxt
                if step <= step_tol:
                    break
            else:
                raise OrbitEscape("no contraction within the iteration budget")
            rp = return_map(inter, arc.index, s)
            residual = abs(rp.s - s)
            period, closure, traj, t_fl = _close_loop(inter, s, close_cfg)
        except (OrbitEscape, NoReturnError, PreconditionError) as exc:
            skipped.append((arc.index, str(exc)))
            continue
        orbits.append(PeriodicOrbit(arc.index, arc.label, float(s), inter.fold_arc.point(s),
                                    float(period), float(residual), closure, it, float(t_fl),
                                    float(period - t_fl), traj))
    return OrbitSearch(orbits, skipped, inter)


def count_orbits(geom: LoopGeometry, r: float = 0.04, i_max: int = 60, **kwargs) -> int:
    """Number of sliding periodic orbits found near the loop (finite when unfolded)."""
    return len(find_periodic_orbits(geom, r, i_max, **kwargs).orbits)
