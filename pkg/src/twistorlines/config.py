"""Run configuration: a strict YAML key tree mapped onto dataclasses.

Unknown keys, wrong types and malformed YAML raise :class:`ConfigError`
carrying the offending line number.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .hyperpolygon import (HyperpolygonConfig, benchmark_alpha, benchmark_config, benchmark_punctures,
                           complex_level_config, gauge_fix, kempf_ness)
from .twistor import SolverSettings


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class _Node:
    """Parsed value with the line it came from (mappings keep per-key lines)."""

    def __init__(self, value: Any, line: int, key_lines: dict | None = None):
        self.value = value
        self.line = line
        self.key_lines = key_lines or {}


def _compose(text: str) -> _Node | None:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"malformed YAML: {exc.problem}", mark.line + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    finally:
        loader.dispose()
    if root is None:
        return None
    cons = yaml.SafeLoader("")

    def walk(node):
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out, lines = {}, {}
            for k, v in node.value:
                key = cons.construct_object(k, deep=True)
                if key in out:
                    raise ConfigError(f"duplicate key '{key}'", k.start_mark.line + 1)
                out[key] = walk(v)
                lines[key] = k.start_mark.line + 1
            return _Node(out, line, lines)
        if isinstance(node, yaml.SequenceNode):
            return _Node([walk(v) for v in node.value], line)
        try:
            return _Node(cons.construct_object(node, deep=True), line)
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad scalar: {exc}", line) from None

    return walk(root)


# ---------------------------------------------------------------------------
# value coercion
# ---------------------------------------------------------------------------

def _real(node: _Node, name: str) -> float:
    v = node.value
    if isinstance(v, bool):
        raise ConfigError(f"{name}: expected a number, got {v!r}", node.line)
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a number, got {v!r}", node.line) from None


def _int(node: _Node, name: str) -> int:
    v = node.value
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name}: expected an integer, got {v!r}", node.line)
    return v


def _complex(node: _Node, name: str) -> complex:
    v = node.value
    if isinstance(v, list):
        if len(v) != 2:
            raise ConfigError(f"{name}: complex pairs are [re, im]", node.line)
        return complex(_real(v[0], name), _real(v[1], name))
    if isinstance(v, bool):
        raise ConfigError(f"{name}: expected a complex number, got {v!r}", node.line)
    try:
        return complex(str(v).replace(" ", "")) if isinstance(v, str) else complex(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a complex number, got {v!r}", node.line) from None


def _list(node: _Node, name: str) -> list:
    if not isinstance(node.value, list):
        raise ConfigError(f"{name}: expected a list", node.line)
    return node.value


def _matrix(node: _Node, name: str) -> np.ndarray:
    rows = _list(node, name)
    out = []
    for r in rows:
        entries = _list(r, name)
        if len(entries) != 2:
            raise ConfigError(f"{name}: every leg needs two entries", r.line)
        out.append([_complex(e, name) for e in entries])
    return np.array(out, complex).reshape(-1, 2)


def _mapping(node: _Node, name: str, allowed: set) -> dict:
    if not isinstance(node.value, dict):
        raise ConfigError(f"{name}: expected a mapping", node.line)
    for k in node.value:
        if k not in allowed:
            raise ConfigError(f"unknown key '{k}' in {name} (allowed: {', '.join(sorted(allowed))})",
                              node.key_lines.get(k, node.line))
    return node.value


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemConfig:
    """Weights, punctures and legs.

    ``legs`` is ``"benchmark"`` or a dict with ``v`` (and optionally ``w``).
    With only ``v`` the configuration is built on the complex level set with
    ``|w| ~ w_scale`` and moved to the real level by Kempf-Ness.
    """

    alpha: tuple = tuple(benchmark_alpha())
    punctures: tuple = tuple(benchmark_punctures())
    legs: Any = "benchmark"
    w_scale: float = 0.3
    moment_solve: bool = True
    radii: tuple | None = None

    @property
    def n(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True)
class SolverConfig:
    N: int = 6
    M: int | None = None
    ode_tol: float = 1e-11
    newton_tol: float = 1e-11
    max_iter: int = 30
    t_list: tuple = tuple(1e-3 * 2.0 ** k for k in range(7))

    def settings(self) -> SolverSettings:
        return SolverSettings(N=self.N, M=self.M, ode_tol=self.ode_tol, newton_tol=self.newton_tol,
                              max_iter=self.max_iter)


@dataclass(frozen=True)
class MetricsConfig:
    directions: int = 2
    h: float = 1e-4
    collapse_tol: float = 1e-8


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/default"
    formats: tuple = ("json", "csv")


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def build(self) -> HyperpolygonConfig:
        """Level-set configuration for the problem block (no stability check)."""
        return build_configuration(self.problem)

    def to_dict(self) -> dict:
        def conv(x):
            if isinstance(x, complex) or isinstance(x, np.complexfloating):
                return [float(x.real), float(x.imag)]
            if isinstance(x, (tuple, list)):
                return [conv(y) for y in x]
            if isinstance(x, np.ndarray):
                return conv(x.tolist())
            if isinstance(x, dict):
                return {k: conv(v) for k, v in x.items()}
            if isinstance(x, np.floating):
                return float(x)
            return x
        return {f.name: {g.name: conv(getattr(getattr(self, f.name), g.name))
                         for g in fields(getattr(self, f.name))}
                if f.name != "seed" else self.seed for f in fields(self)}


def _parse_problem(node: _Node) -> ProblemConfig:
    m = _mapping(node, "problem", {"alpha", "punctures", "legs", "w_scale", "moment_solve", "radii"})
    kw = {}
    if "alpha" in m:
        kw["alpha"] = tuple(_real(a, "alpha") for a in _list(m["alpha"], "alpha"))
    if "punctures" in m:
        kw["punctures"] = tuple(_complex(p, "punctures") for p in _list(m["punctures"], "punctures"))
    if "w_scale" in m:
        kw["w_scale"] = _real(m["w_scale"], "w_scale")
    if "moment_solve" in m:
        if not isinstance(m["moment_solve"].value, bool):
            raise ConfigError("moment_solve: expected true/false", m["moment_solve"].line)
        kw["moment_solve"] = m["moment_solve"].value
    if "radii" in m and m["radii"].value is not None:
        kw["radii"] = tuple(_real(r, "radii") for r in _list(m["radii"], "radii"))
    if "legs" in m:
        legs = m["legs"]
        if legs.value == "benchmark":
            kw["legs"] = "benchmark"
        else:
            lm = _mapping(legs, "legs", {"v", "w"})
            if "v" not in lm:
                raise ConfigError("legs: 'v' is required", legs.line)
            d = {"v": _matrix(lm["v"], "legs.v")}
            if "w" in lm:
                d["w"] = _matrix(lm["w"], "legs.w")
                if d["w"].shape != d["v"].shape:
                    raise ConfigError("legs: v and w have different lengths", lm["w"].line)
            kw["legs"] = d
    cfg = ProblemConfig(**kw)
    n = cfg.n
    if len(cfg.punctures) != n:
        raise ConfigError(f"{len(cfg.punctures)} punctures for {n} weights", node.line)
    if isinstance(cfg.legs, dict) and len(cfg.legs["v"]) != n:
        raise ConfigError(f"{len(cfg.legs['v'])} legs for {n} weights", m["legs"].line)
    if cfg.legs == "benchmark" and n != 4:
        raise ConfigError("the benchmark legs need four weights", node.line)
    if cfg.radii is not None and len(cfg.radii) != n:
        raise ConfigError("one radius per puncture", m["radii"].line)
    if any(a <= 0 for a in cfg.alpha):
        raise ConfigError("weights must be positive", m["alpha"].line if "alpha" in m else node.line)
    return cfg


def _parse_solver(node: _Node) -> SolverConfig:
    m = _mapping(node, "solver", {"N", "M", "ode_tol", "newton_tol", "max_iter", "t_list", "t_grid"})
    kw = {}
    for k in ("N", "max_iter"):
        if k in m:
            kw[k] = _int(m[k], k)
    if "M" in m and m["M"].value is not None:
        kw["M"] = _int(m["M"], "M")
    for k in ("ode_tol", "newton_tol"):
        if k in m:
            kw[k] = _real(m[k], k)
    if "t_list" in m and "t_grid" in m:
        raise ConfigError("give either t_list or t_grid", m["t_grid"].line)
    if "t_list" in m:
        kw["t_list"] = tuple(_real(t, "t_list") for t in _list(m["t_list"], "t_list"))
    if "t_grid" in m:
        g = _mapping(m["t_grid"], "t_grid", {"start", "ratio", "count"})
        for k in ("start", "ratio", "count"):
            if k not in g:
                raise ConfigError(f"t_grid: '{k}' is required", m["t_grid"].line)
        start, ratio, count = _real(g["start"], "start"), _real(g["ratio"], "ratio"), _int(g["count"], "count")
        kw["t_list"] = tuple(start * ratio ** k for k in range(count))
    cfg = SolverConfig(**kw)
    if cfg.N < 1 or cfg.max_iter < 1:
        raise ConfigError("N and max_iter must be positive", node.line)
    ts = cfg.t_list
    if any(t < 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigError("t_list must be nonnegative and strictly increasing",
                          m.get("t_list", m.get("t_grid", node)).line)
    return cfg


def _parse_metrics(node: _Node) -> MetricsConfig:
    m = _mapping(node, "metrics", {"directions", "h", "collapse_tol"})
    kw = {}
    if "directions" in m:
        kw["directions"] = _int(m["directions"], "directions")
    for k in ("h", "collapse_tol"):
        if k in m:
            kw[k] = _real(m[k], k)
    cfg = MetricsConfig(**kw)
    if cfg.directions < 2:
        raise ConfigError("metrics need at least two directions", m["directions"].line)
    return cfg


def _parse_output(node: _Node) -> OutputConfig:
    m = _mapping(node, "output", {"dir", "formats"})
    kw = {}
    if "dir" in m:
        if not isinstance(m["dir"].value, str):
            raise ConfigError("output.dir must be a string", m["dir"].line)
        kw["dir"] = m["dir"].value
    if "formats" in m:
        fm = tuple(f.value for f in _list(m["formats"], "formats"))
        bad = [f for f in fm if f not in ("json", "csv")]
        if bad:
            raise ConfigError(f"unknown output formats {bad}", m["formats"].line)
        kw["formats"] = fm
    return OutputConfig(**kw)


def parse_config(text: str) -> RunConfig:
    root = _compose(text)
    if root is None:
        return RunConfig()
    top = _mapping(root, "top level", {"problem", "solver", "metrics", "output", "seed"})
    kw = {}
    if "problem" in top:
        kw["problem"] = _parse_problem(top["problem"])
    if "solver" in top:
        kw["solver"] = _parse_solver(top["solver"])
    if "metrics" in top:
        kw["metrics"] = _parse_metrics(top["metrics"])
    if "output" in top:
        kw["output"] = _parse_output(top["output"])
    if "seed" in top:
        kw["seed"] = _int(top["seed"], "seed")
    return RunConfig(**kw)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def initial_configuration(problem: ProblemConfig) -> HyperpolygonConfig:
    """Legs of the problem block before the real moment equations are solved."""
    if problem.legs == "benchmark":
        return benchmark_config(problem.w_scale)
    v = np.asarray(problem.legs["v"], complex)
    if "w" in problem.legs:
        return HyperpolygonConfig(v, np.asarray(problem.legs["w"], complex))
    return complex_level_config(v, problem.w_scale)


def build_configuration(problem: ProblemConfig) -> HyperpolygonConfig:
    """Legs of the problem block on the level set (Kempf-Ness and gauge fixing if requested)."""
    cfg = initial_configuration(problem)
    if problem.moment_solve and problem.legs != "benchmark":
        cfg = gauge_fix(kempf_ness(cfg, np.array(problem.alpha)).cfg)[0]
    return cfg
