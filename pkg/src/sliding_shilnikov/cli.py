"""Command line runner: simulate, certify, orbits, regularize.

Every command accepts ``--config FILE`` (a JSON object with the same keys
as the long flags, dashes replaced by underscores); flags override file
values.  The fully resolved configuration is written into each JSON output.

Exit codes: 0 ok, 2 bad config, 3 integration failure, 4 certification
failed, 5 no orbits found, 6 shooting failed at every delta.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .errors import IntegrationError, NewtonDiverged, SlidingError
from .pwl_model import PwlParams, build_model, certify_proposition1
from .trajectory import HINTS, IntegratorConfig, backward_trajectory, filippov_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRATION, EXIT_CERTIFY, EXIT_NO_ORBITS, EXIT_SHOOTING = 0, 2, 3, 4, 5, 6

COMMON = {"alpha": 1.0, "beta": 1.0, "seed": 0, "rtol": 1e-10, "atol": 1e-12}
DEFAULTS = {
    "simulate": {"x0": None, "T": 10.0, "backward": False, "hint": None,
                 "samples_per_unit": 100.0, "csv": "trajectory.csv", "events": "events.json"},
    "certify": {"tol": 1e-6, "out": None},
    "orbits": {"imax": None, "r": 0.04, "epsilon": None, "out": "orbits.json", "csv_dir": None,
               "samples_per_unit": 100.0},
    "regularize": {"deltas": "1e-3", "ab": None, "no_solve": False, "no_verify": False,
                   "newton_tol": 1e-10, "csv": "regularize.csv", "out": "regularize.json"},
}


class ConfigError(Exception):
    def __init__(self, key: str, msg: str):
        super().__init__(f"invalid config key '{key}': {msg}")
        self.key = key


# ---------------------------------------------------------------- parsing

def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="sliding-shilnikov",
                                  description="Sliding Shilnikov orbits of the model Z_{a,b}.")
    sub = top.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with default values for the flags")
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--seed", type=int, help="recorded for reproducibility")
        p.add_argument("--rtol", type=float, help="integrator relative tolerance")
        p.add_argument("--atol", type=float, help="integrator absolute tolerance")
        return p

    p = add("simulate", "integrate one Filippov trajectory")
    p.add_argument("--x0", help="initial state 'x,y,z'")
    p.add_argument("--T", type=float, help="duration")
    p.add_argument("--backward", action="store_true")
    p.add_argument("--hint", choices=HINTS)
    p.add_argument("--samples-per-unit", type=float)
    p.add_argument("--csv", help="trajectory CSV path")
    p.add_argument("--events", help="events JSON path")

    p = add("certify", "certify the sliding Shilnikov loop")
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="certificate JSON path (stdout if omitted)")

    p = add("orbits", "sliding periodic orbits, or N(eps) and g(eps) for the unfolding")
    p.add_argument("--imax", type=int, help="arcs to search (default 6, or 60 with --epsilon)")
    p.add_argument("--r", type=float, help="radius of the fold arc around q")
    p.add_argument("--epsilon", help="comma separated unfolding parameters")
    p.add_argument("--out")
    p.add_argument("--csv-dir", help="write one CSV per orbit here")
    p.add_argument("--samples-per-unit", type=float)

    p = add("regularize", "solve the shooting problem over a delta list")
    p.add_argument("--deltas", help="comma separated widths")
    p.add_argument("--ab", help="'A,B' to use instead of solving (with --no-solve)")
    p.add_argument("--no-solve", action="store_true")
    p.add_argument("--no-verify", action="store_true", help="skip the homoclinic closure check")
    p.add_argument("--newton-tol", type=float)
    p.add_argument("--csv")
    p.add_argument("--out")
    return top


def _floats(key: str, text, n: Optional[int] = None, allow_empty: bool = False) -> list:
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = [s for s in str(text).split(",") if s.strip()]
    try:
        vals = [float(s) for s in parts]
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected comma separated numbers, got {text!r}") from None
    if not vals and not allow_empty:
        raise ConfigError(key, "empty list")
    if n is not None and len(vals) != n:
        raise ConfigError(key, f"expected {n} numbers, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(key, "non-finite value")
    return vals


def _positive(cfg: dict, key: str) -> None:
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
        raise ConfigError(key, f"must be a positive number, got {v!r}")
    cfg[key] = float(v)


def resolve(command: str, flags: dict) -> dict:
    """Merge defaults < config file < flags and validate."""
    cfg = dict(COMMON, **DEFAULTS[command])
    path = flags.pop("config", None)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError("config", str(exc)) from None
        if not isinstance(data, dict):
            raise ConfigError("config", "file must hold a JSON object")
        for key, val in data.items():
            if key not in cfg:
                raise ConfigError(key, f"unknown key for '{command}'")
            cfg[key] = val
    cfg.update(flags)

    for key in ("alpha", "beta", "rtol", "atol"):
        _positive(cfg, key)
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int):
        raise ConfigError("seed", "must be an integer")

    if command == "simulate":
        if cfg["x0"] is None:
            raise ConfigError("x0", "initial state is required")
        cfg["x0"] = _floats("x0", cfg["x0"], 3)
        T = cfg["T"]
        if isinstance(T, bool) or not isinstance(T, (int, float)) or not math.isfinite(T) or T < 0:
            raise ConfigError("T", f"must be a nonnegative number, got {T!r}")
        cfg["T"] = float(T)
        _positive(cfg, "samples_per_unit")
        if cfg["hint"] is not None and cfg["hint"] not in HINTS:
            raise ConfigError("hint", f"must be one of {HINTS}")
    elif command == "certify":
        _positive(cfg, "tol")
    elif command == "orbits":
        _positive(cfg, "r")
        _positive(cfg, "samples_per_unit")
        if cfg["epsilon"] is not None:
            cfg["epsilon"] = _floats("epsilon", cfg["epsilon"])
        if cfg["imax"] is None:
            cfg["imax"] = 6 if cfg["epsilon"] is None else 60
        if isinstance(cfg["imax"], bool) or not isinstance(cfg["imax"], int) or cfg["imax"] < 0:
            raise ConfigError("imax", "must be a nonnegative integer")
    elif command == "regularize":
        cfg["deltas"] = _floats("deltas", cfg["deltas"])
        if any(not 0 < d <= 0.02 for d in cfg["deltas"]):
            raise ConfigError("deltas", "each delta must lie in (0, 0.02]")
        if cfg["ab"] is not None:
            cfg["ab"] = _floats("ab", cfg["ab"], 2)
        if cfg["no_solve"] and cfg["ab"] is None:
            raise ConfigError("ab", "required with no_solve")
        _positive(cfg, "newton_tol")
    return cfg


def _params(cfg: dict) -> PwlParams:
    return PwlParams(cfg["alpha"], cfg["beta"])


def _integrator(cfg: dict) -> IntegratorConfig:
    return IntegratorConfig(rel_tol=cfg["rtol"], abs_tol=cfg["atol"])


def _envelope(command: str, cfg: dict, result) -> dict:
    return {"schema": io.SCHEMA, "command": command, "config": cfg, "result": result}


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: dict) -> int:
    Z = build_model(_params(cfg))
    run = backward_trajectory if cfg["backward"] else filippov_trajectory
    kwargs = {"hint": cfg["hint"]} if cfg["backward"] else {}
    traj = run(Z, cfg["x0"], cfg["T"], _integrator(cfg), **kwargs)
    io.write_trajectory_csv(traj, cfg["csv"], cfg["samples_per_unit"])
    io.write_json(_envelope("simulate", cfg, io.trajectory_events(traj)), cfg["events"])
    print(f"{len(traj.segments)} segments, t in [{traj.t_start:.6g}, {traj.t_end:.6g}]")
    return EXIT_OK


def cmd_certify(cfg: dict) -> int:
    cert = certify_proposition1(_params(cfg), tol=cfg["tol"], cfg=_integrator(cfg))
    text = io.dumps(_envelope("certify", cfg, cert.to_dict()))
    if cfg["out"]:
        Path(cfg["out"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if not cert.certified:
        print(f"certification failed: {cert.failed_condition}", file=sys.stderr)
        return EXIT_CERTIFY
    return EXIT_OK


def _orbit_catalog(cfg: dict, params: PwlParams) -> tuple[dict, int]:
    from .shilnikov import LoopGeometry, find_periodic_orbits

    if cfg["imax"] == 0:
        return {"orbits": [], "skipped": []}, 0
    geom = LoopGeometry.for_model(params)
    search = find_periodic_orbits(geom, cfg["r"], cfg["imax"])
    q = geom.q
    items = []
    for orb in search.orbits:
        d = orb.to_dict()
        d.update(label=orb.label, anchor_s=orb.anchor_s, closure=orb.closure,
                 iterations=orb.iterations, flight_time=orb.flight_time,
                 sliding_time=orb.sliding_time,
                 distance_to_q=float(np.linalg.norm(orb.anchor - q)))
        items.append(d)
        if cfg["csv_dir"]:
            io.write_trajectory_csv(orb.orbit, Path(cfg["csv_dir"]) / f"orbit_{orb.index}.csv",
                                    cfg["samples_per_unit"])
    skipped = [{"index": i, "reason": why} for i, why in search.skipped]
    return {"orbits": items, "skipped": skipped}, len(items)


def _unfolding_sweep(cfg: dict, params: PwlParams) -> tuple[dict, int]:
    from .shilnikov import LoopGeometry, count_orbits, separation, unfolded_separation

    rows = []
    for eps in cfg["epsilon"]:
        geom = LoopGeometry.for_unfolding(params, eps)
        n = count_orbits(geom, cfg["r"], cfg["imax"]) if cfg["imax"] > 0 else 0
        rows.append({"epsilon": eps, "N": n, "g": separation(geom),
                     "g_closed_form": unfolded_separation(params, eps)})
        print(f"eps={eps:g}  N={n}  g={rows[-1]['g']:.6g}")
    return {"unfolding": rows}, sum(r["N"] for r in rows)


def cmd_orbits(cfg: dict) -> int:
    params = _params(cfg)
    if cfg["epsilon"] is None:
        result, found = _orbit_catalog(cfg, params)
        print(f"{found} periodic orbits")
    else:
        result, found = _unfolding_sweep(cfg, params)
    io.write_json(_envelope("orbits", cfg, result), cfg["out"])
    if found == 0 and cfg["imax"] >= 1:
        print("no periodic orbits found", file=sys.stderr)
        return EXIT_NO_ORBITS
    return EXIT_OK


REG_HEADER = ("delta", "A", "B", "sigma", "residual", "t_delta", "closure_gap", "hausdorff",
              "converged")


def cmd_regularize(cfg: dict) -> int:
    from .regularization import (origin_spectrum, shoot, solve_ab, verify_homoclinic)

    params = _params(cfg)
    rows, results = [], []
    for d in cfg["deltas"]:
        try:
            if cfg["no_solve"]:
                A, B = cfg["ab"]
                ev = shoot(params, d, A, B)
                rep = None if cfg["no_verify"] else verify_homoclinic(params, d, A, B)
                res = {"delta": d, "A": A, "B": B, "sigma": origin_spectrum(params, d, A, B).sigma,
                       "residual": float(np.linalg.norm(ev.F)), "t_delta": ev.t_delta,
                       "closure_gap": None if rep is None else rep.gap,
                       "hausdorff": None if rep is None else rep.hausdorff}
            else:
                res = solve_ab(params, d, tol=cfg["newton_tol"],
                               verify=not cfg["no_verify"]).to_dict()
            res["converged"] = not cfg["no_solve"]
        except (NewtonDiverged, IntegrationError) as exc:
            print(f"delta={d:g}: {exc}", file=sys.stderr)
            res = {"delta": d, "converged": False, "error": str(exc)}
        results.append(res)
        rows.append([("" if res.get(k) is None else res[k]) for k in REG_HEADER])
        if "A" in res:
            print(f"delta={d:g}  A={res['A']:.8f}  B={res['B']:.8f}  sigma={res['sigma']:.6g}")
    io.write_rows(cfg["csv"], REG_HEADER,
                  [[("true" if v is True else "false" if v is False else v) for v in r]
                   for r in rows])
    io.write_json(_envelope("regularize", cfg, {"results": results}), cfg["out"])
    ok = sum(1 for r in results if "A" in r)
    print(f"{ok}/{len(results)} deltas evaluated")
    return EXIT_OK if ok else EXIT_SHOOTING


COMMANDS = {"simulate": cmd_simulate, "certify": cmd_certify, "orbits": cmd_orbits,
            "regularize": cmd_regularize}


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = _parser().parse_args(argv)
    flags = vars(ns)
    command = flags.pop("command")
    try:
        cfg = resolve(command, flags)
        PwlParams(cfg["alpha"], cfg["beta"])
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[command](cfg)
    except (IntegrationError, SlidingError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SHOOTING if isinstance(exc, NewtonDiverged) else EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
