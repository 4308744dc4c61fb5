"""Experiment configuration files.

Plain INI files read with :mod:`configparser`.  Sections and keys::

    [problem]       name = <registry name>; any other key is a problem parameter
    [solver]        N, M, dt, cfl_safety, theta, p_clip, symbol, snapshot_times, keep_all, z
    [metrics]       k, max_mode, dictionary_size
    [lift]          N_list, t_list, method, samples, lip_pairs, k_max, seed_measures
    [verify]        paths, dt_sim, t0, x0, tolerance
    [run]           out, seed, budget_bytes, threads

Values are parsed as int, then float, then bool (true/false), else left as
strings.  Comma-separated values become tuples.  ``T`` and ``a0`` belong to
the problem section.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .measures import SobolevParams
from .problems import REGISTRY, Problem, make_problem
from .solver import SolverConfig, resolve
from .torus import DEFAULT_BUDGET_BYTES, GridSpec

SECTIONS = ("problem", "solver", "metrics", "lift", "verify", "run")

SOLVER_KEYS = {"N", "M", "dt", "cfl_safety", "theta", "p_clip", "symbol", "snapshot_times", "keep_all", "z"}
METRIC_KEYS = {"k", "max_mode", "dictionary_size"}
LIFT_KEYS = {"N_list", "t_list", "method", "samples", "lip_pairs", "k_max", "seed_measures", "M"}
VERIFY_KEYS = {"paths", "dt_sim", "t0", "x0", "tolerance", "sigmas"}
RUN_KEYS = {"out", "seed", "budget_bytes", "threads"}


def parse_value(text: str):
    text = text.strip()
    if not text:
        return None
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return text


def _num(section: str, key: str, v, cast=float, optional: bool = True):
    if v is None and optional:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number, got {v!r}")
    return cast(v)


def _as_tuple(v) -> tuple:
    return v if isinstance(v, tuple) else (v,)


@dataclass
class ExperimentConfig:
    problem: str
    problem_params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    lift: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0
    budget_bytes: int = DEFAULT_BUDGET_BYTES
    threads: int = 1

    # ---------------------------------------------------------------- building

    def build_problem(self) -> Problem:
        return make_problem(self.problem, **self.problem_params)

    def sobolev(self, d: int) -> SobolevParams:
        return SobolevParams(int(self.metrics.get("k", 3)), int(self.metrics.get("max_mode", 16)), d)

    def solver_config(self, problem: Problem, N: int | None = None, M: int | None = None) -> SolverConfig:
        s = self.solver
        N = _num("solver", "N", N if N is not None else s.get("N", 2), int, False)
        M = _num("solver", "M", M if M is not None else s.get("M", 32), int, False)
        grid = GridSpec(problem.d, N, M, has_z=bool(s.get("z", False)))
        snaps = s.get("snapshot_times")
        return SolverConfig(
            grid=grid, T=problem.T, a0=problem.a0, dt=_num("solver", "dt", s.get("dt")),
            cfl_safety=_num("solver", "cfl_safety", s.get("cfl_safety", 0.5), optional=False),
            theta=_num("solver", "theta", s.get("theta")), p_clip=_num("solver", "p_clip", s.get("p_clip")),
            snapshot_times=None if snaps is None else [_num("solver", "snapshot_times", t, optional=False)
                                                        for t in _as_tuple(snaps)],
            keep_all=bool(s.get("keep_all", False)), symbol=str(s.get("symbol", "lattice")),
            budget_bytes=self.budget_bytes,
        )

    @property
    def workers(self) -> int | None:
        return None if self.threads == 0 else self.threads

    def as_dict(self) -> dict:
        return {
            "problem": {"name": self.problem, **self.problem_params}, "solver": dict(self.solver),
            "metrics": dict(self.metrics), "lift": dict(self.lift), "verify": dict(self.verify),
            "run": {"out": self.out, "seed": self.seed, "budget_bytes": self.budget_bytes,
                    "threads": self.threads},
        }

    # ---------------------------------------------------------------- checks

    def validate(self, command: str = "solve") -> Problem:
        """Build every derived config once so invalid settings fail before any compute."""
        if self.problem not in REGISTRY:
            raise ConfigError(f"problem: unknown name {self.problem!r}; known: {', '.join(sorted(REGISTRY))}")
        if self.seed < 0:
            raise ConfigError("run: seed must be a nonnegative integer")
        if self.budget_bytes <= 0:
            raise ConfigError("run: budget_bytes must be positive")
        if self.threads < 0:
            raise ConfigError("run: threads must be >= 0")
        problem = self.build_problem()
        try:
            self.sobolev(problem.d)
        except Exception as exc:
            raise ConfigError(f"metrics: {exc}") from exc
        Ns = [int(n) for n in _as_tuple(self.lift.get("N_list", (1, 2, 3)))] if command == "convergence" else [None]
        M = self.lift.get("M") if command == "convergence" else None
        for N in Ns:
            cfg = self.solver_config(problem, N, M)
            H = problem.H
            resolved = resolve(cfg, H, problem.G, self.seed)
            if problem.H_upper is not None:
                resolve(cfg, problem.H_upper, problem.G, self.seed)
            if command != "convergence":
                resolved.grid.check_budget(self.budget_bytes)
        if command == "mfc-verify" and problem.control is None:
            raise ConfigError(f"problem {self.problem!r} exposes no control structure")
        if command == "isaacs" and not problem.is_game:
            raise ConfigError(f"problem {self.problem!r} exposes no game structure")
        if command == "mfc-verify":
            paths = int(self.verify.get("paths", 10_000))
            dt_sim = float(self.verify.get("dt_sim", 1e-3))
            if paths < 1 or not dt_sim > 0:
                raise ConfigError("verify: paths must be >= 1 and dt_sim > 0")
        return problem


def _check_keys(section: str, keys, allowed: set) -> None:
    extra = set(keys) - allowed
    if extra:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(extra))}")


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (N vs n)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_parser(parser)


def loads_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return from_parser(parser)


def from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    sec = {name: {k: parse_value(v) for k, v in parser[name].items()} if parser.has_section(name) else {}
           for name in SECTIONS}
    prob = dict(sec["problem"])
    if "name" not in prob:
        raise ConfigError("[problem] needs a name")
    name = str(prob.pop("name"))
    _check_keys("solver", sec["solver"], SOLVER_KEYS)
    _check_keys("metrics", sec["metrics"], METRIC_KEYS)
    _check_keys("lift", sec["lift"], LIFT_KEYS)
    _check_keys("verify", sec["verify"], VERIFY_KEYS)
    _check_keys("run", sec["run"], RUN_KEYS)
    run = sec["run"]
    return ExperimentConfig(
        problem=name, problem_params=prob, solver=sec["solver"], metrics=sec["metrics"],
        lift=sec["lift"], verify=sec["verify"], out=str(run.get("out", "out")),
        seed=int(run.get("seed", 0)), budget_bytes=int(run.get("budget_bytes", DEFAULT_BUDGET_BYTES)),
        threads=int(run.get("threads", 1)),
    )


def write_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    d = cfg.as_dict()
    for name in SECTIONS:
        items = d[name]
        if not items:
            continue
        parser[name] = {k: ",".join(map(str, v)) if isinstance(v, (tuple, list)) else str(v)
                        for k, v in items.items() if v is not None}
    with open(Path(path), "w") as fh:
        parser.write(fh)
