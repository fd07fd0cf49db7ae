"""Command-line entry point and run configuration.

Configuration files are INI-style with three sections::

    [problem]
    preset = example1        ; example1 | example2 | example1-paper | example2-paper | custom
    geometry = square        ; custom preset only: square | reactor
    n = 16
    nt = 80                  ; number of time steps N
    T = 5
    alpha = 5e-5
    nu1 = 0.01               ; either nu1 and nu2 ...
    nu2 = 0.013888888888889
    ; Pr = ..., Ra = ...     ; ... or Pr and Ra
    objective = tracking     ; tracking | vorticity
    projection = normal_trace
    convection = true

    [optimizer]
    m = 1                    ; default 1 on the square, 5 on the reactor
    tol = 5e-3
    max_iter = 200
    max_step =               ; optional clamp on |rho|
    seed = 0

    [output]
    dir = out
    snapshot_stride = 16
    control_every = 0        ; control CSVs every K iterations (0: off)
    timings = false          ; wall-clock seconds in history.csv

Command-line flags override file values.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import artifacts
from .mesh import MeshError, build_reactor, build_unit_square, write_mesh
from .problem import Objective, ProblemSetup, ProjectionVariant, example1, example2, viscosities_from

__all__ = ["ConfigError", "RunConfig", "parse_config", "build_setup", "main",
           "run", "uncontrolled_baseline", "gradcheck", "mesh_dump"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GRADCHECK = 0, 2, 3, 4

PRESETS = ("example1", "example2", "example1-paper", "example2-paper", "custom")
_PRESET_GEOMETRY = {"example1": "square", "example1-paper": "square",
                    "example2": "reactor", "example2-paper": "reactor"}
# full-resolution presets: long running, documented in the README
_PAPER_DEFAULTS = {"example1-paper": {"n": 64, "nt": 320},
                   "example2-paper": {"n": 66, "nt": 960}}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class RunConfig:
    preset: str = "example1"
    geometry: Optional[str] = None
    n: Optional[int] = None
    nt: Optional[int] = None
    T: Optional[float] = None
    alpha: Optional[float] = None
    nu1: Optional[float] = None
    nu2: Optional[float] = None
    Pr: Optional[float] = None
    Ra: Optional[float] = None
    objective: Optional[str] = None
    projection: Optional[str] = None
    convection: bool = True
    m: Optional[int] = None
    tol: float = 5e-3
    max_iter: int = 200
    max_step: Optional[float] = None
    seed: int = 0
    dir: str = "out"
    snapshot_stride: int = 16
    control_every: int = 0
    timings: bool = False

    def validate(self) -> "RunConfig":
        def bad(path, msg):
            raise ConfigError(f"{path}: {msg}")

        if self.preset not in PRESETS:
            bad("problem.preset", f"unknown preset {self.preset!r}")
        geometry = self.resolved_geometry()
        if geometry not in ("square", "reactor"):
            bad("problem.geometry", "must be 'square' or 'reactor'")
        if self.n is not None:
            if self.n < 2:
                bad("problem.n", "must be at least 2")
            if geometry == "square" and self.n % 2:
                bad("problem.n", "must be even for the square")
            if geometry == "reactor" and self.n % 6:
                bad("problem.n", "must be a multiple of 6 for the reactor")
        if self.nt is not None and self.nt < 1:
            bad("problem.nt", "must be a positive integer")
        for name in ("T", "alpha", "nu1", "nu2", "Pr", "Ra"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                bad(f"problem.{name}", "must be a positive number")
        has_nu = (self.nu1 is not None, self.nu2 is not None)
        has_pr = (self.Pr is not None, self.Ra is not None)
        if any(has_nu) and any(has_pr):
            bad("problem", "give either nu1/nu2 or Pr/Ra, not both")
        if any(has_nu) and not all(has_nu):
            bad("problem.nu1" if not has_nu[0] else "problem.nu2", "nu1 and nu2 go together")
        if any(has_pr) and not all(has_pr):
            bad("problem.Pr" if not has_pr[0] else "problem.Ra", "Pr and Ra go together")
        if self.objective is not None:
            try:
                Objective(self.objective)
            except ValueError:
                bad("problem.objective", "must be 'tracking' or 'vorticity'")
            if self.objective == "tracking" and geometry == "reactor":
                bad("problem.objective", "the reactor has no tracking target")
        if self.projection is not None:
            try:
                ProjectionVariant(self.projection)
            except ValueError:
                bad("problem.projection", "must be 'normal_trace' or 'full_dirichlet'")
        if self.m is not None and self.m < 1:
            bad("optimizer.m", "must be at least 1")
        if not self.tol > 0:
            bad("optimizer.tol", "must be positive")
        if self.max_iter < 0:
            bad("optimizer.max_iter", "must be non-negative")
        if self.max_step is not None and not self.max_step > 0:
            bad("optimizer.max_step", "must be positive")
        if self.snapshot_stride < 1:
            bad("output.snapshot_stride", "must be at least 1")
        if self.control_every < 0:
            bad("output.control_every", "must be non-negative")
        return self

    def resolved_geometry(self) -> Optional[str]:
        if self.preset == "custom":
            return self.geometry
        return _PRESET_GEOMETRY[self.preset]

    def memory(self) -> int:
        """L-BFGS memory: one pair for the cavity presets, five otherwise."""
        if self.m is not None:
            return self.m
        return 1 if self.resolved_geometry() == "square" else 5

    def viscosities(self):
        if self.Pr is not None:
            return viscosities_from(self.Pr, self.Ra)
        if self.nu1 is not None:
            return self.nu1, self.nu2
        return None

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in _SECTIONS.items():
            parser[section] = {}
            for key in keys:
                value = getattr(self, key)
                if value is None:
                    continue
                parser[section][key] = _to_text(value)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


_SECTIONS = {
    "problem": ("preset", "geometry", "n", "nt", "T", "alpha", "nu1", "nu2", "Pr", "Ra",
                "objective", "projection", "convection"),
    "optimizer": ("m", "tol", "max_iter", "max_step", "seed"),
    "output": ("dir", "snapshot_stride", "control_every", "timings"),
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _to_text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(path: str, key: str, text: str):
    kind = _TYPES[key]
    text = text.strip()
    if text == "" and "Optional" in kind:
        return None
    try:
        if "bool" in kind:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {text!r}") from None
    return text


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a validated :class:`RunConfig`."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{section}: unknown section")
        for key, raw in parser[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            values[key] = _convert(f"{section}.{key}", key, raw)
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def build_setup(cfg: RunConfig) -> ProblemSetup:
    """Problem instance described by the configuration."""
    cfg.validate()
    geometry = cfg.resolved_geometry()
    kwargs = dict(_PAPER_DEFAULTS.get(cfg.preset, {}))
    if cfg.n is not None:
        kwargs["n"] = cfg.n
    if cfg.nt is not None:
        kwargs["nt"] = cfg.nt
    if "nt" in kwargs:
        kwargs["N"] = kwargs.pop("nt")
    for key in ("T", "alpha"):
        if getattr(cfg, key) is not None:
            kwargs[key] = getattr(cfg, key)
    visc = cfg.viscosities()
    if visc is not None:
        kwargs["nu1"], kwargs["nu2"] = visc
    if cfg.objective is not None:
        kwargs["objective"] = Objective(cfg.objective)
    if cfg.projection is not None:
        kwargs["projection"] = ProjectionVariant(cfg.projection)
    kwargs["convection"] = cfg.convection
    factory = example1 if geometry == "square" else example2
    try:
        setup = factory(**kwargs)
    except (ValueError, MeshError) as exc:
        raise ConfigError(f"problem: {exc}") from None
    if cfg.preset == "custom":
        setup.name = f"custom-{geometry}"
    return setup


# ---------------------------------------------------------------------------
# commands


def _series_outputs(outdir: Path, setup, state):
    from .state import tracking_error_series, vorticity_series

    paths = []
    if setup.target is not None:
        paths.append(artifacts.write_tracking_error(
            outdir / "tracking_error.csv", setup, tracking_error_series(setup, state)))
    paths.append(artifacts.write_vorticity(outdir / "vorticity.csv", setup,
                                           vorticity_series(setup, state)))
    return paths


def _summary(outdir: Path, lines: dict) -> Path:
    path = outdir / "summary.txt"
    path.write_text("".join(f"{k} = {_to_text(v)}\n" for k, v in lines.items()))
    return path


def run(cfg: RunConfig) -> dict:
    """Optimize from the zero control and write all artifacts."""
    from .optimizer import lbfgs_solve
    from .state import evaluate_objective, vorticity_series

    setup = build_setup(cfg)
    outdir = Path(cfg.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.ini").write_text(cfg.to_ini())
    callback = None
    if cfg.control_every:
        def callback(record, u):
            if record.k % cfg.control_every == 0:
                artifacts.write_controls(outdir / "controls" / f"iter_{record.k:04d}", setup, u)

    result = lbfgs_solve(setup, m=cfg.memory(), tol=cfg.tol, max_iter=cfg.max_iter,
                         max_step=cfg.max_step, callback=callback)
    state = result.state
    paths = [artifacts.write_history(outdir / "history.csv", result.history,
                                     with_seconds=cfg.timings)]
    paths += artifacts.write_controls(outdir, setup, result.u)
    paths += _series_outputs(outdir, setup, state)
    paths += artifacts.write_snapshots(outdir / "snapshots", setup, state,
                                       stride=cfg.snapshot_stride)
    J = evaluate_objective(setup, state, result.u)
    integrated = setup.dt * float(np.sum(vorticity_series(setup, state) ** 2))
    paths.append(_summary(outdir, {
        "J": J, "iterations": len(result.history) - 1, "best_iteration": result.best_k,
        "converged": result.converged, "message": result.message,
        "integrated_curl_sq": integrated}))
    return {"result": result, "setup": setup, "paths": paths, "J": J}


def uncontrolled_baseline(cfg: RunConfig) -> dict:
    """Forward solve with the zero control and the same time series as ``run``."""
    from .state import evaluate_objective, solve_state, vorticity_series

    setup = build_setup(cfg)
    outdir = Path(cfg.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    u = setup.control.zeros()
    state = solve_state(setup, u, keep_factors=False)
    paths = _series_outputs(outdir, setup, state)
    paths += artifacts.write_snapshots(outdir / "snapshots", setup, state,
                                       stride=cfg.snapshot_stride)
    J = evaluate_objective(setup, state, u)
    integrated = setup.dt * float(np.sum(vorticity_series(setup, state) ** 2))
    paths.append(_summary(outdir, {"J": J, "integrated_curl_sq": integrated}))
    return {"setup": setup, "state": state, "paths": paths, "J": J}


def gradcheck(cfg: RunConfig, n_dirs: int = 5):
    """Finite-difference check of the adjoint gradient at the zero control."""
    from .oracle import fd_gradient_check

    setup = build_setup(cfg)
    report = fd_gradient_check(setup, None, n_dirs=n_dirs, seed=cfg.seed)
    outdir = Path(cfg.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "gradcheck.csv").write_text(report.to_csv())
    return report


def mesh_dump(cfg: RunConfig) -> list:
    """Write the coarse and fine meshes of the configured geometry."""
    cfg.validate()
    geometry = cfg.resolved_geometry()
    n = cfg.n if cfg.n is not None else _PAPER_DEFAULTS.get(cfg.preset, {}).get(
        "n", 16 if geometry == "square" else 12)
    pair = build_unit_square(n) if geometry == "square" else build_reactor(n)
    outdir = Path(cfg.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / "coarse.mesh", outdir / "fine.mesh"]
    write_mesh(pair.coarse, paths[0])
    write_mesh(pair.fine, paths[1])
    return paths


# ---------------------------------------------------------------------------
# argument parsing

_FLAGS = (
    ("--n", "n", int), ("--nt", "nt", int), ("--T", "T", float), ("--alpha", "alpha", float),
    ("--nu1", "nu1", float), ("--nu2", "nu2", float), ("--pr", "Pr", float),
    ("--ra", "Ra", float), ("--objective", "objective", str),
    ("--projection", "projection", str), ("--geometry", "geometry", str),
    ("--m", "m", int), ("--tol", "tol", float), ("--max-iter", "max_iter", int),
    ("--max-step", "max_step", float), ("--seed", "seed", int), ("--out", "dir", str),
    ("--snapshot-stride", "snapshot_stride", int), ("--control-every", "control_every", int),
)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boussinesq-control",
        description="Boundary heat-flux control of Boussinesq flow (L-BFGS with adjoint gradients).")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "optimize and write all artifacts"),
                       ("baseline", "uncontrolled forward solve"),
                       ("gradcheck", "finite-difference gradient check"),
                       ("mesh-dump", "write the coarse and fine meshes")):
        p = sub.add_parser(name, help=text)
        p.add_argument("preset", nargs="?", choices=PRESETS, help="problem preset")
        p.add_argument("--config", help="INI configuration file")
        for flag, dest, kind in _FLAGS:
            p.add_argument(flag, dest=dest, type=kind, default=None,
                           help=f"override config key {dest!r}")
        p.add_argument("--no-convection", dest="convection", action="store_false", default=None)
        p.add_argument("--timings", dest="timings", action="store_true", default=None,
                       help="record wall-clock seconds in history.csv")
        if name == "gradcheck":
            p.add_argument("--directions", type=int, default=5)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.preset is not None:
        updates["preset"] = args.preset
    for _, dest, _ in _FLAGS:
        value = getattr(args, dest)
        if value is not None:
            updates[dest] = value
    for dest in ("convection", "timings"):
        if getattr(args, dest) is not None:
            updates[dest] = getattr(args, dest)
    # a viscosity pair on the command line replaces the other pair from the file
    if "Pr" in updates or "Ra" in updates:
        updates.setdefault("nu1", None)
        updates.setdefault("nu2", None)
    if "nu1" in updates or "nu2" in updates:
        if updates.get("nu1") is not None or updates.get("nu2") is not None:
            updates.setdefault("Pr", None)
            updates.setdefault("Ra", None)
    return dataclasses.replace(cfg, **updates).validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .optimizer import NonfiniteObjective
    from .oracle import OracleGuardError
    from .state import SolverBreakdown

    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command == "run":
            out = run(cfg)
            res = out["result"]
            print(f"J = {out['J']:.10e} after {len(res.history) - 1} iterations ({res.message})")
        elif args.command == "baseline":
            out = uncontrolled_baseline(cfg)
            print(f"baseline J = {out['J']:.10e}")
        elif args.command == "gradcheck":
            report = gradcheck(cfg, n_dirs=args.directions)
            sys.stdout.write(report.to_text())
            if not report.passed:
                return EXIT_GRADCHECK
        else:
            for path in mesh_dump(cfg):
                print(path)
    except (ConfigError, OracleGuardError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverBreakdown, NonfiniteObjective, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK
