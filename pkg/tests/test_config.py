import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from twistorlines.config import (ConfigError, RunConfig, build_configuration, initial_configuration, load_config,
                                 parse_config)
from twistorlines.hyperpolygon import benchmark_alpha, check_stable, moment_maps


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert np.allclose(cfg.problem.alpha, benchmark_alpha())
    assert cfg.solver.t_list[0] == 1e-3 and len(cfg.solver.t_list) == 7


def test_full_config_parses():
    cfg = parse_config("""
problem:
  alpha: [0.1, 0.11, 0.12, 0.14]
  punctures: [0, [1, 0.5], "2+1j", 3]
  legs:
    v: [[1, 0], [0.6, 0.8], ["0.3-0.5j", 0.9], [[0, 0.8], [0.5, 0.3]]]
  w_scale: 0.25
solver:
  N: 8
  M: 48
  ode_tol: 1e-12
  t_grid: {start: 1e-3, ratio: 2, count: 4}
metrics: {directions: 3, h: 2e-4}
output: {dir: out, formats: [csv]}
seed: 7
""")
    assert cfg.problem.punctures[1] == 1 + 0.5j and cfg.problem.punctures[2] == 2 + 1j
    assert cfg.problem.legs["v"][3, 0] == 0.8j
    assert cfg.solver.settings().grid().M == 48
    assert np.allclose(cfg.solver.t_list, [1e-3, 2e-3, 4e-3, 8e-3])
    assert cfg.metrics.directions == 3 and cfg.output.formats == ("csv",) and cfg.seed == 7


@pytest.mark.parametrize("text,line", [
    ("problem:\n  alpha: [0.1, 0.2\n  punctures: [0, 1]\n", 3),
    ("problem:\n  alfa: [0.1]\n", 2),
    ("solver:\n  N: 6\n  N: 7\n", 3),
    ("solver:\n  t_list: [0.1, 0.05]\n", 2),
    ("solver:\n  N: six\n", 2),
    ("problem:\n  alpha: [0.1, 0.2]\n  punctures: [0, 1, 2]\n", 2),
    ("output:\n  formats: [pdf]\n", 2),
    ("metrics:\n  directions: 1\n", 2),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.yaml")


def test_explicit_legs_are_moment_solved():
    cfg = parse_config("problem:\n  legs:\n    v: [[1, 0], [0.6, 0.8], [0.3, 0.9], [0.8, 0.5j]]\n")
    hp = build_configuration(cfg.problem)
    m = moment_maps(hp)
    assert np.abs(m.mu_I - benchmark_alpha()).max() < 1e-12
    assert max(np.abs(m.nu_I).max(), np.abs(m.nu_C).max(), np.abs(m.mu_C).max()) < 1e-12
    assert check_stable(hp, benchmark_alpha()).stable


def test_unsolved_legs_kept_for_checking():
    cfg = parse_config("problem:\n  moment_solve: false\n  legs:\n    v: [[1, 0], [2, 0], [1, 0], [3, 0]]\n"
                       "    w: [[0, 0], [0, 0], [0, 0], [0, 0]]\n")
    hp = initial_configuration(cfg.problem)
    assert not check_stable(hp, benchmark_alpha()).stable


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(1e-14, 1e-6), st.floats(1e-14, 1e-6),
       st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=6, unique=True), st.integers(0, 100))
def test_round_trip_through_yaml(N, ode_tol, newton_tol, ts, seed):
    ts = tuple(sorted(ts))
    text = yaml.safe_dump({"solver": {"N": N, "ode_tol": ode_tol, "newton_tol": newton_tol, "t_list": list(ts)},
                           "seed": seed})
    cfg = parse_config(text)
    again = parse_config(yaml.safe_dump(cfg.to_dict()))
    assert again.to_dict() == cfg.to_dict()
    assert again.solver.t_list == ts and again.solver.N == N and again.seed == seed
