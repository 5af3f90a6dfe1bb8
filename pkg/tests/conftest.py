import numpy as np
import pytest

from twistorlines.hyperpolygon import benchmark_alpha, benchmark_config, benchmark_punctures
from twistorlines.loops import LaurentLoop
from twistorlines.twistor import SolverSettings, TwistorProblem, continuation

BENCH_T = [1e-3 * 2 ** k for k in range(7)]


def random_loop(rng, lo=-2, hi=2, kind="general", traceless=False, scale=1.0):
    c = scale * (rng.standard_normal((hi - lo + 1, 2, 2)) + 1j * rng.standard_normal((hi - lo + 1, 2, 2)))
    if traceless:
        c[:, 1, 1] = -c[:, 0, 0]
    return LaurentLoop(lo, c, kind)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bench_problem():
    return TwistorProblem(benchmark_config(), benchmark_alpha(), benchmark_punctures(), SolverSettings())


@pytest.fixture(scope="session")
def bench_run(bench_problem):
    return continuation(bench_problem, BENCH_T)
