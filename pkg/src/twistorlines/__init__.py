"""Twistor lines of parabolic Higgs moduli near the hyperpolygon limit.

Modules: ``loops`` (Laurent loops, Iwasawa), ``hyperpolygon`` (moment maps,
stability, quotient forms), ``fuchsian`` (transport and monodromy),
``twistor`` (monodromy problem and continuation), ``metrics`` (Kahler
forms along the family) and ``cli``.
"""
from .fuchsian import FuchsianLoopSystem, make_system, monodromies
from .hyperpolygon import (HyperpolygonConfig, benchmark_alpha, benchmark_config, benchmark_punctures,
                           check_stable, check_weights, kempf_ness)
from .loops import CircleGrid, LaurentLoop, iwasawa
from .metrics import calibrate_pairing, metric_study
from .twistor import SolverSettings, TwistorProblem, continuation, solve_at_t, verify_twistor

__all__ = [
    "CircleGrid", "FuchsianLoopSystem", "HyperpolygonConfig", "LaurentLoop", "SolverSettings",
    "TwistorProblem", "benchmark_alpha", "benchmark_config", "benchmark_punctures",
    "calibrate_pairing", "check_stable", "check_weights", "continuation", "iwasawa",
    "kempf_ness", "make_system", "metric_study", "monodromies", "solve_at_t", "verify_twistor",
]
