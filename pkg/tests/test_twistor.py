import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import BENCH_T
from twistorlines.hyperpolygon import (HyperpolygonConfig, benchmark_alpha, benchmark_config, benchmark_punctures,
                                       residue_loops)
from twistorlines.loops import CircleGrid
from twistorlines.twistor import (SolverError, SolverSettings, StabilityError, TwistorProblem, b_finite_difference,
                                  continuation, harmonic_map, hermitian_sup, hyperbolic_distance, line_frame,
                                  model_harmonic_map, parabolic_line, sl2_log, solve_at_t, verify_twistor)

seeds = st.integers(0, 2 ** 31 - 1)


def p_norm(state):
    return max(np.abs(p.coeffs).max() for p in state.P)


# problem setup and residuals ------------------------------------------------------

def test_unstable_configuration_rejected_before_solving():
    v = np.array([[1, 0], [2, 0], [-1, 0], [0.5, 0]], complex)
    with pytest.raises(StabilityError):
        TwistorProblem(HyperpolygonConfig(v, np.zeros_like(v)), benchmark_alpha(), benchmark_punctures())
    with pytest.raises(StabilityError):
        TwistorProblem(benchmark_config(), [0.125] * 4, benchmark_punctures())


def test_pack_unpack_round_trip(bench_problem, rng):
    x = rng.standard_normal(bench_problem.n_unknowns)
    P, eta = bench_problem.unpack(x)
    assert np.allclose(np.trace(P, axis1=-2, axis2=-1), 0)
    assert np.allclose(eta, eta.conj().T) and abs(np.trace(eta)) < 1e-15
    assert np.allclose(bench_problem.pack(P, eta), x)


def test_residuals_vanish_at_t0(bench_problem):
    blocks, _ = bench_problem.residual_blocks(bench_problem.zero(), 0.0)
    assert all(np.abs(b).max(initial=0.0) < 1e-14 for b in blocks.values())


def test_determinant_residual_detects_non_tangent_p(bench_problem, rng):
    x = bench_problem.zero()
    x[:6 * (bench_problem.N + 1)] = 1e-3 * rng.standard_normal(6 * (bench_problem.N + 1))
    blocks, _ = bench_problem.residual_blocks(x, 0.0)
    assert np.abs(blocks["R2"]).max() > 1e-5


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_sl2_log_inverts_exponential(seed):
    import scipy.linalg
    rng = np.random.default_rng(seed)
    a = 0.5 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    a -= np.trace(a) / 2 * np.eye(2)
    L = sl2_log(scipy.linalg.expm(a)[None])[0]
    assert np.abs(L - a).max() < 1e-11


# solving ---------------------------------------------------------------------------

def test_solve_at_zero_is_trivial(bench_problem):
    st0 = solve_at_t(bench_problem, 0.0)
    assert st0.iterations == 0 and np.all(st0.x == 0)


def test_trivial_continuation():
    run = continuation(TwistorProblem(benchmark_config(), benchmark_alpha(), benchmark_punctures()), [0.0])
    assert run.failed_at is None and run.converged_ts == [0.0] and np.all(run.states[0].x == 0)


def test_huge_t_stops_continuation(bench_problem):
    run = continuation(bench_problem, [1e-3, 10.0])
    assert run.failed_at == 10.0 and run.converged_ts == [1e-3]
    assert run.log[-1]["status"] == "failed"


def test_stalled_solve_raises(bench_problem):
    with pytest.raises(SolverError):
        solve_at_t(bench_problem, 10.0, bench_problem.zero())


def test_benchmark_run_converges(bench_run):
    assert bench_run.failed_at is None and bench_run.converged_ts == BENCH_T
    for s in bench_run.states:
        assert s.max_residual() <= 1e-10


def test_p_is_linear_in_small_t(bench_run):
    norms = np.array([p_norm(s) for s in bench_run.states])
    ratios = norms[1:] / norms[:-1]
    assert np.all(np.abs(ratios[:3] - 2) < 0.2)          # doubling t doubles P within 10%
    slope0 = norms[0] / BENCH_T[0]
    assert np.isfinite(slope0) and abs(norms[1] / BENCH_T[1] - slope0) < 0.1 * slope0


def test_converged_state_survives_refinement(bench_problem):
    st1 = solve_at_t(bench_problem, 0.01, tol=1e-11)
    fine = bench_problem.with_settings(M=2 * bench_problem.settings.grid().M,
                                       ode_tol=bench_problem.settings.ode_tol / 2)
    blocks, _ = fine.residual_blocks(st1.x, 0.01)
    assert max(np.abs(b).max(initial=0.0) for b in blocks.values()) <= 1e-10


# certificates ---------------------------------------------------------------------------

def test_certificate(bench_run):
    cert = verify_twistor(bench_run)
    assert cert.sum_P.max() <= 1e-8
    assert cert.unitarity.max() <= 1e-8
    assert cert.det_residual.max() <= 1e-10
    assert cert.B0_error.max() <= 1e-6


def test_finite_difference_hermitian_part_shrinks_with_h(bench_run):
    pr = bench_run.problem
    st4 = bench_run.states[3]
    grid = pr.settings.grid()
    coarse = max(hermitian_sup(b, grid) for b in b_finite_difference(pr, st4, grid, rel_h=0.2))
    fine = max(hermitian_sup(b, grid) for b in b_finite_difference(pr, st4, grid, rel_h=0.1))
    assert fine < coarse


def test_b_at_t0_matches_residue(bench_problem):
    grid = bench_problem.settings.grid()
    ref = -2j * np.pi * np.stack([A(grid.nodes) for A in bench_problem.A])
    errs = []
    for t in (4e-4, 2e-4):
        st1 = solve_at_t(bench_problem, t)
        errs.append(np.abs(b_finite_difference(bench_problem, st1, grid) - ref).max())
    assert errs[1] < errs[0] < 1e-2


# harmonic map --------------------------------------------------------------------------

RADII = np.geomspace(0.5, 0.01, 8)


def test_hyperbolic_distance_normalisation():
    s = 0.7
    assert np.isclose(hyperbolic_distance(np.eye(2), np.diag([np.exp(s), np.exp(-s)])), s)
    U = line_frame([1, 1j])
    assert np.allclose(U.conj().T @ U, np.eye(2)) and np.allclose(U[:, 0], np.array([1, 1j]) / np.sqrt(2))


def test_parabolic_line_is_kernel_of_pole():
    from twistorlines.hyperpolygon import leg_from_xy, residue_loop
    v, w = leg_from_xy(0.6, 0.3j, 0.1)
    A = residue_loop(v, w, 0.1)
    line = parabolic_line(A.coeffs, 0.1)
    assert np.abs(A.coeff(-1) @ line).max() < 1e-14
    assert abs(abs(np.vdot(line, v)) - np.linalg.norm(v)) < 1e-12


def test_model_harmonic_map_constant_without_beta():
    rep = model_harmonic_map(0.2, 0.0, RADII)
    assert np.abs(rep.f - np.eye(2)).max() < 1e-12
    assert rep.sup_distance < 1e-6 and not rep.failures


@pytest.mark.parametrize("beta", [0.3, 0.2 + 0.6j])
def test_model_harmonic_map_bounded_with_beta(beta):
    rep = model_harmonic_map(0.2, beta, RADII)
    assert not rep.failures
    assert np.all(rep.f_distance < 2.0) and rep.sup_distance < 1.0
    steps = np.abs(np.diff(rep.f_distance))
    assert steps[-1] < steps[0]                      # saturating towards the puncture
    assert rep.hermitian_defect <= 1e-10 and rep.det_defect <= 1e-10
    assert np.all(np.linalg.eigvalsh(rep.f) > 0)


def test_benchmark_harmonic_map_is_hermitian_unimodular(bench_run):
    pr, st1 = bench_run.problem, bench_run.states[-1]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = harmonic_map(pr, st1, 1, [0.2, 0.1, 0.05], CircleGrid(32))
    assert rep.hermitian_defect <= 1e-10 and rep.det_defect <= 1e-10
    assert np.all(np.linalg.eigvalsh(rep.f) > 0)


def test_harmonic_map_radius_guard(bench_run):
    with pytest.raises(ValueError):
        harmonic_map(bench_run.problem, bench_run.states[0], 0, [100.0])
