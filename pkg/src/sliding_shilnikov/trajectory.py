"""Event-driven integration of Filippov trajectories.

Free flight uses an adaptive Runge-Kutta pair with dense output.  Sliding
is integrated intrinsically on the switching surface with the sliding
vector field.  A small state machine strings the pieces together.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .core import (DEFAULT_TOL, FilippovSystem, Region, SmoothField, as_state, classify,
                   second_lie_derivative, sliding_field_unchecked)
from .errors import (AmbiguityError, DoubleTangencyError, ImmediateFoldExit, IntegrationError,
                     PreconditionError, StepSizeUnderflow, ZenoError)


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = np.inf
    event_tol: float = 1e-12
    method: str = "DOP853"
    zeno_max_events: int = 10_000
    zeno_window: Optional[float] = None

    def __post_init__(self):
        for key in ("rel_tol", "abs_tol", "max_step", "event_tol", "zeno_max_events"):
            if not getattr(self, key) > 0:
                raise ValueError(f"IntegratorConfig.{key} must be positive")
        if self.zeno_window is not None and not self.zeno_window > 0:
            raise ValueError("IntegratorConfig.zeno_window must be positive")

    @property
    def window(self) -> float:
        return self.zeno_window if self.zeno_window is not None else 1e3 * self.event_tol

    def tightened(self, factor: float) -> "IntegratorConfig":
        return replace(self, rel_tol=self.rel_tol * factor, abs_tol=self.abs_tol * factor)


class Mode(str, enum.Enum):
    FREE_ABOVE = "FreeAbove"
    FREE_BELOW = "FreeBelow"
    SLIDING = "Sliding"


class ExitEvent(str, enum.Enum):
    HIT_SIGMA = "HitSigma"
    FOLD_EXIT = "FoldExit"
    BOUNDARY_EXIT = "BoundaryExit"
    TIME_END = "TimeEnd"
    CONVERGED = "ConvergedToEquilibrium"
    LEFT_DOMAIN = "LeftDomain"


HINTS = ("stay-sliding", "exit-via-X", "exit-via-Y")


@dataclass(frozen=True)
class Event:
    """Scalar event g(state) = 0; ``direction`` filters the crossing sign."""

    func: Callable[[np.ndarray], float]
    direction: int = 0
    name: str = "event"


@dataclass(frozen=True)
class EventHit:
    t: float
    state: np.ndarray
    name: str


class DensePath:
    """Piecewise interpolant with its step samples, in integration order."""

    def __init__(self, t, y, pieces):
        self.t = np.asarray(t, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(-1, 3)
        self.pieces = list(pieces)  # (ta, tb, callable) with ta, tb in integration order

    @classmethod
    def constant(cls, t0: float, t1: float, x) -> "DensePath":
        x = as_state(x).copy()
        return cls([t0, t1], [x, x], [(t0, t1, lambda t, x=x: x.copy())])

    @classmethod
    def concat(cls, paths: Sequence["DensePath"]) -> "DensePath":
        paths = [p for p in paths if p.t.size]
        t = np.concatenate([paths[0].t] + [p.t[1:] for p in paths[1:]])
        y = np.concatenate([paths[0].y] + [p.y[1:] for p in paths[1:]])
        return cls(t, y, [pc for p in paths for pc in p.pieces])

    @property
    def direction(self) -> int:
        return 1 if self.t[-1] >= self.t[0] else -1

    @property
    def t_first(self) -> float:
        return float(self.t[0])

    @property
    def t_last(self) -> float:
        return float(self.t[-1])

    def _piece(self, t: float):
        for ta, tb, sol in self.pieces:
            slack = 1e-14 * max(1.0, abs(t))
            if min(ta, tb) - slack <= t <= max(ta, tb) + slack:
                return sol
        raise ValueError(f"t={t} outside the path [{self.t.min()}, {self.t.max()}]")

    def __call__(self, t):
        if np.ndim(t) == 0:
            return np.asarray(self._piece(float(t))(float(t)), dtype=float).reshape(3)
        return np.array([self(float(s)) for s in np.asarray(t)])

    def time_reversed(self) -> "DensePath":
        """Path s -> self(-s), samples kept in the new integration order."""
        pieces = [(-ta, -tb, (lambda s, f=sol: f(-np.asarray(s)))) for ta, tb, sol in self.pieces]
        return DensePath(-self.t, self.y, pieces)

    def resample(self, n_per_unit: float = 100.0, min_points: int = 2):
        """Uniform-in-time samples (chronological), always including the ends."""
        lo, hi = float(self.t.min()), float(self.t.max())
        n = max(min_points, int(np.ceil((hi - lo) * n_per_unit)) + 1)
        ts = np.linspace(lo, hi, n)
        return ts, self(ts)


@dataclass(eq=False)
class TrajectorySegment:
    mode: Mode
    path: DensePath
    exit_event: ExitEvent
    exit_detail: str = ""

    @property
    def direction(self) -> int:
        return self.path.direction

    @property
    def t_start(self) -> float:
        return float(self.path.t.min())

    @property
    def t_end(self) -> float:
        return float(self.path.t.max())

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def initial_state(self) -> np.ndarray:
        """State where the integration started (the late end for backward runs)."""
        return self.path.y[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.path.y[-1]

    def state_at(self, t: float) -> np.ndarray:
        return self.path(t)

    def chronological(self):
        """(t, y) step samples with increasing time."""
        if self.direction > 0:
            return self.path.t, self.path.y
        return self.path.t[::-1], self.path.y[::-1]


@dataclass(frozen=True)
class TrajectoryEvent:
    t: float
    kind: str
    state: np.ndarray


@dataclass(eq=False)
class FilippovTrajectory:
    segments: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start if self.segments else 0.0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end if self.segments else 0.0

    def state_at(self, t: float) -> np.ndarray:
        for seg in self.segments:
            slack = 1e-14 * max(1.0, abs(t))
            if seg.t_start - slack <= t <= seg.t_end + slack:
                return seg.state_at(t)
        raise ValueError(f"t={t} outside the trajectory")

    @property
    def modes(self) -> list:
        return [s.mode for s in self.segments]


# ---------------------------------------------------------------- smooth flight

def _box_event(system: FilippovSystem) -> Event:
    return Event(system.box_margin, -1, "LeftDomain")


def _ivp_events(events: Sequence[Event]):
    out = []
    for ev in events:
        def f(t, y, g=ev.func):
            return float(g(y))
        f.terminal = True
        f.direction = ev.direction
        out.append(f)
    return out


def _run_ivp(rhs, x0, t_span, cfg: IntegratorConfig, events: Sequence[Event], jac=None):
    kwargs = dict(method=cfg.method, rtol=cfg.rel_tol, atol=cfg.abs_tol, dense_output=True,
                  events=_ivp_events(events) or None)
    if np.isfinite(cfg.max_step):
        kwargs["max_step"] = cfg.max_step
    if jac is not None and cfg.method in ("Radau", "BDF", "LSODA"):
        kwargs["jac"] = jac
    res = solve_ivp(rhs, t_span, np.asarray(x0, dtype=float), **kwargs)
    if res.status == -1:
        cls = StepSizeUnderflow if "step size" in res.message.lower() else IntegrationError
        raise cls(res.message, float(res.t[-1]), res.y[:, -1])
    path = DensePath(res.t, res.y.T, [(float(res.t[0]), float(res.t[-1]), res.sol)])
    hit = None
    if res.status == 1:
        t_hit = float(res.t[-1])
        for k, te in enumerate(res.t_events):
            if te.size and te[-1] == t_hit:
                hit = EventHit(t_hit, res.y[:, -1].copy(), events[k].name)
                break
    return path, hit


def integrate_smooth(field: SmoothField, x0, t_span, cfg: IntegratorConfig | None = None,
                     events: Sequence[Event] = (), system: FilippovSystem | None = None,
                     t_min: float = 0.0):
    """Integrate a smooth field until the first terminal event or the end of t_span.

    Events are located by scipy's bracketing root search on the dense
    output (absolute time accuracy about 4 machine epsilons).  With
    ``t_min`` > 0 events are ignored during the first ``t_min`` time units,
    which skips tangential starts.  When ``system`` is given, leaving its
    box raises a ``LeftDomain`` event.

    Returns ``(DensePath, EventHit | None)``.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = map(float, t_span)
    if t1 == t0:
        raise ValueError("t_span must be nondegenerate")
    x0 = as_state(x0)
    if system is not None:
        system.check_domain(x0)
    evs = list(events) + ([_box_event(system)] if system is not None else [])
    rhs = lambda t, y: field.func(y)
    jac = (lambda t, y: field.jac(y)) if field.jac is not None else None
    sgn = 1.0 if t1 > t0 else -1.0
    paths = []
    if t_min > 0:
        t_mid = t0 + sgn * min(t_min, abs(t1 - t0))
        pre = [_box_event(system)] if system is not None else []
        path, hit = _run_ivp(rhs, x0, (t0, t_mid), cfg, pre, jac)
        paths.append(path)
        if hit is not None or t_mid == t1:
            return path, hit
        t0, x0 = t_mid, path.y[-1]
    path, hit = _run_ivp(rhs, x0, (t0, t1), cfg, evs, jac)
    paths.append(path)
    return (paths[0] if len(paths) == 1 else DensePath.concat(paths)), hit


# ---------------------------------------------------------------- sliding

def _project(Z: FilippovSystem, x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float)
    for _ in range(20):
        val = Z.h(x)
        if abs(val) <= 1e-15:
            break
        g = Z.h.gradient(x)
        x -= val * g / (g @ g)
    return x


def _sliding_side(Z: FilippovSystem, xi: np.ndarray, direction: int, tol: float) -> Region:
    """Region the sliding motion enters from xi, or raise."""
    rc = classify(Z, xi, tol)
    if rc.tag in (Region.SLIDING, Region.ESCAPING):
        return rc.tag
    if rc.tag is Region.TANGENCY_X and abs(rc.yh) > tol:
        s2 = second_lie_derivative(Z.X, Z.h, xi)
        target = Region.SLIDING if rc.yh > 0 else Region.ESCAPING
        inward = direction * s2 < 0 if target is Region.SLIDING else direction * s2 > 0
    elif rc.tag is Region.TANGENCY_Y and abs(rc.xh) > tol:
        s2 = second_lie_derivative(Z.Y, Z.h, xi)
        target = Region.SLIDING if rc.xh < 0 else Region.ESCAPING
        inward = direction * s2 > 0 if target is Region.SLIDING else direction * s2 < 0
    else:
        raise PreconditionError(f"slide must start in the sliding or escaping region, "
                                f"got {rc.tag.value}")
    if not inward:
        raise ImmediateFoldExit(f"sliding field leaves the region at {xi.tolist()}")
    return target


def sliding_rhs(Z: FilippovSystem) -> SmoothField:
    if Z.h.plane and Z.X.linear is not None and Z.Y.linear is not None:
        # fast path for affine fields and the plane z = 0
        (A1, b1), (A2, b2) = Z.X.linear, Z.Y.linear

        def f(x):
            X, Y = A1 @ x + b1, A2 @ x + b2
            den = Y[2] - X[2]
            if abs(den) <= 1e-12:
                raise DoubleTangencyError(f"Yh - Xh = {den:.3e} at {x.tolist()}")
            return (Y[2] * X - X[2] * Y) / den

        return SmoothField(f, name=f"slide({Z.name})")
    return SmoothField(lambda x: sliding_field_unchecked(Z, x), name=f"slide({Z.name})")


def slide(Z: FilippovSystem, xi0, t_span, cfg: IntegratorConfig | None = None,
          tol: float = DEFAULT_TOL, extra_events: Sequence[Event] = (),
          converge_tol: float = 1e-11, converge_time: float = 1.0) -> TrajectorySegment:
    """Integrate the sliding field from xi0 over t_span (forward or backward).

    Terminates on a fold crossing (``FoldExit``), on convergence to a
    pseudo-equilibrium (``ConvergedToEquilibrium``: |sliding field| stays below
    ``converge_tol`` for ``converge_time``), on leaving the box, on any of
    ``extra_events`` (``BoundaryExit``) or at the end of t_span.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = map(float, t_span)
    direction = 1 if t1 > t0 else -1
    xi = _project(Z, Z.check_domain(xi0))
    side = _sliding_side(Z, xi, direction, tol)
    rhs = sliding_rhs(Z)
    sx = 1 if side is Region.SLIDING else -1
    # event directions are relative to integration progress
    if Z.h.plane:
        xh = lambda x: float(Z.X.func(x)[2])
        yh = lambda x: float(Z.Y.func(x)[2])
    else:
        xh = lambda x: float(Z.h.gradient(x) @ Z.X(x))
        yh = lambda x: float(Z.h.gradient(x) @ Z.Y(x))
    fold_events = [Event(xh, sx, "FoldX"), Event(yh, -sx, "FoldY")]
    thr = cfg.abs_tol
    drift = [Event(lambda x: Z.h(x) - thr, 1, "drift"), Event(lambda x: Z.h(x) + thr, -1, "drift")]

    def speed_log(x):
        return float(np.log(max(np.linalg.norm(rhs.func(x)), 1e-300) / converge_tol))

    conv = Event(speed_log, -1, "converge")
    events = fold_events + drift + [conv] + list(extra_events)

    paths: list[DensePath] = []
    t, x = t0, xi

    def stays_converged(t_from, x_from):
        t_to = t_from + direction * converge_time
        if direction * (t_to - t1) > 0:
            t_to = t1
        if t_to == t_from:
            return True, None
        path, hit = integrate_smooth(rhs, x_from, (t_from, t_to), cfg, fold_events, Z)
        ts = np.linspace(path.t_first, path.t_last, 64)
        ok = hit is None and max(np.linalg.norm(rhs.func(path(s))) for s in ts) <= converge_tol
        return ok, path

    if np.linalg.norm(rhs.func(x)) <= converge_tol:
        ok, path = stays_converged(t, x)
        if path is None:
            return TrajectorySegment(Mode.SLIDING, DensePath.constant(t0, t1, x),
                                     ExitEvent.CONVERGED)
        if ok:
            return TrajectorySegment(Mode.SLIDING, path, ExitEvent.CONVERGED)
        paths.append(path)
        t, x = path.t_last, path.y[-1]

    while True:
        if t == t1:
            return TrajectorySegment(Mode.SLIDING, DensePath.concat(paths), ExitEvent.TIME_END)
        path, hit = integrate_smooth(rhs, x, (t, t1), cfg, events, Z)
        paths.append(path)
        t, x = path.t_last, path.y[-1]
        if hit is None:
            return TrajectorySegment(Mode.SLIDING, DensePath.concat(paths), ExitEvent.TIME_END)
        if hit.name in ("FoldX", "FoldY"):
            return TrajectorySegment(Mode.SLIDING, DensePath.concat(paths),
                                     ExitEvent.FOLD_EXIT, hit.name)
        if hit.name == "LeftDomain":
            return TrajectorySegment(Mode.SLIDING, DensePath.concat(paths),
                                     ExitEvent.LEFT_DOMAIN)
        if hit.name == "drift":
            x = _project(Z, x)
            continue
        if hit.name == "converge":
            # the speed may oscillate around the threshold on an elliptic spiral
            first = True
            while t != t1 and (first or np.linalg.norm(rhs.func(x)) <= converge_tol):
                first = False
                ok, tail = stays_converged(t, x)
                if tail is not None:
                    paths.append(tail)
                    t, x = tail.t_last, tail.y[-1]
                if ok:
                    return TrajectorySegment(Mode.SLIDING, DensePath.concat(paths),
                                             ExitEvent.CONVERGED)
            continue
        return TrajectorySegment(Mode.SLIDING, DensePath.concat(paths),
                                 ExitEvent.BOUNDARY_EXIT, hit.name)


# ---------------------------------------------------------------- state machine

_FREEZE = "freeze"


def _hinted(hint: Optional[str], where) -> Mode:
    if hint is None:
        raise AmbiguityError(f"nonunique continuation at {np.asarray(where).tolist()}; "
                             f"supply one of {HINTS}")
    return {"stay-sliding": Mode.SLIDING, "exit-via-X": Mode.FREE_ABOVE,
            "exit-via-Y": Mode.FREE_BELOW}[hint]


def _next_mode(Z: FilippovSystem, p: np.ndarray, tol: float, hint: Optional[str]):
    hv = Z.h(p)
    if hv > tol:
        return Mode.FREE_ABOVE
    if hv < -tol:
        return Mode.FREE_BELOW
    rc = classify(Z, p, tol)
    tag = rc.tag
    if tag is Region.CROSSING_UP:
        return Mode.FREE_ABOVE
    if tag is Region.CROSSING_DOWN:
        return Mode.FREE_BELOW
    if tag is Region.SLIDING:
        return Mode.SLIDING
    if tag is Region.ESCAPING:
        return _hinted(hint, p)
    if tag is Region.TANGENCY_BOTH:
        return _FREEZE
    if tag is Region.TANGENCY_X:
        s2 = second_lie_derivative(Z.X, Z.h, p)
        if abs(s2) <= tol:
            return _FREEZE
        if rc.yh > 0:
            return Mode.FREE_ABOVE if s2 > 0 else Mode.SLIDING
        return _hinted(hint, p) if s2 > 0 else Mode.FREE_BELOW
    s2 = second_lie_derivative(Z.Y, Z.h, p)
    if abs(s2) <= tol:
        return _FREEZE
    if rc.xh < 0:
        return Mode.SLIDING if s2 > 0 else Mode.FREE_BELOW
    return Mode.FREE_ABOVE if s2 > 0 else _hinted(hint, p)


def _run_machine(Z: FilippovSystem, x0, T: float, cfg: IntegratorConfig, tol: float,
                 hint: Optional[str]) -> FilippovTrajectory:
    if T < 0:
        raise ValueError("duration T must be nonnegative")
    x = Z.check_domain(x0)
    traj = FilippovTrajectory()
    if T == 0:
        return traj
    if hint is not None and hint not in HINTS:
        raise ValueError(f"hint must be one of {HINTS}")
    t = 0.0
    recent: deque = deque()

    def record(kind: str, state):
        traj.events.append(TrajectoryEvent(t, kind, np.array(state, dtype=float)))
        recent.append(t)
        while recent and t - recent[0] > cfg.window:
            recent.popleft()
        if len(recent) > cfg.zeno_max_events:
            raise ZenoError(f"{len(recent)} events within {cfg.window:g} time units near t={t}")

    while t < T:
        on_surface = abs(Z.h(x)) <= tol
        if on_surface:
            x = _project(Z, x)
        mode = _next_mode(Z, x, tol, hint)
        if mode == _FREEZE:
            record("SingularTangency", x)
            traj.segments.append(TrajectorySegment(Mode.SLIDING, DensePath.constant(t, T, x),
                                                   ExitEvent.TIME_END, "frozen"))
            break
        if mode is Mode.SLIDING:
            seg = slide(Z, x, (t, T), cfg, tol)
        else:
            fld = Z.X if mode is Mode.FREE_ABOVE else Z.Y
            ev = Event(Z.h, -1 if mode is Mode.FREE_ABOVE else 1, "HitSigma")
            t_min = 1e3 * cfg.event_tol if on_surface else 0.0
            path, hit = integrate_smooth(fld, x, (t, T), cfg, [ev], Z, t_min=t_min)
            kind = ExitEvent.TIME_END if hit is None else ExitEvent(hit.name)
            seg = TrajectorySegment(mode, path, kind)
        traj.segments.append(seg)
        t, x = seg.path.t_last, seg.final_state
        if seg.exit_event is ExitEvent.TIME_END:
            break
        record(seg.exit_event.value, x)
        if seg.exit_event is ExitEvent.LEFT_DOMAIN:
            break
        if seg.exit_event is ExitEvent.CONVERGED:
            if t < T:
                traj.segments.append(TrajectorySegment(
                    Mode.SLIDING, DensePath.constant(t, T, x), ExitEvent.TIME_END, "equilibrium"))
            break
    return traj


def filippov_trajectory(Z: FilippovSystem, x0, T: float, cfg: IntegratorConfig | None = None,
                        tol: float = DEFAULT_TOL) -> FilippovTrajectory:
    """Forward Filippov trajectory over [0, T].

    Escaping points (forward nonuniqueness) raise ``AmbiguityError``.
    """
    return _run_machine(Z, x0, float(T), cfg or IntegratorConfig(), tol, None)


def backward_trajectory(Z: FilippovSystem, x0, T: float, cfg: IntegratorConfig | None = None,
                        hint: Optional[str] = None, tol: float = DEFAULT_TOL) -> FilippovTrajectory:
    """Trajectory over [-T, 0] ending at x0, returned in chronological order.

    Backward time is forward time for the reversed system, where sliding and
    escaping swap roles.  Branch points are resolved with ``hint``.
    """
    fwd = _run_machine(Z.reversed(), x0, float(T), cfg or IntegratorConfig(), tol, hint)
    segs = [TrajectorySegment(s.mode, s.path.time_reversed(), s.exit_event, s.exit_detail)
            for s in reversed(fwd.segments)]
    events = [TrajectoryEvent(-e.t, e.kind, e.state) for e in reversed(fwd.events)]
    return FilippovTrajectory(segs, events)
