import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from conftest import random_loop
from twistorlines.fuchsian import (LoopPath, OrderingError, PathError, ResidueError, SegmentPath, composite_order,
                                   default_paths, energy_residue, forms_from_coeffs, kks_pairing, make_system,
                                   monodromies, transport, transport_values, twisted_pairing, unitarity_defect)
from twistorlines.hyperpolygon import benchmark_alpha, benchmark_config, benchmark_punctures, residue_loops
from twistorlines.loops import CircleGrid, LaurentLoop, loop_exp, model_residue

seeds = st.integers(0, 2 ** 31 - 1)
GRID = CircleGrid(16)


def single_puncture(A, r=0.5):
    return make_system([0.0], [A], radii=[r], sum_tol=None)


# transport -----------------------------------------------------------------------

def test_transport_of_zero_connection_is_identity():
    sysm = single_puncture(LaurentLoop.zero(-1, 1))
    M = transport(sysm, sysm.paths[0], GRID)
    assert np.abs(M.on_grid(GRID) - np.eye(2)).max() < 1e-15


@pytest.mark.parametrize("alpha,beta", [(0.2, 0.0), (0.3, 0.5 - 0.2j), (0.1, 1.0)])
def test_single_puncture_monodromy_is_exponential(alpha, beta):
    A = model_residue(alpha, beta)
    sysm = single_puncture(A)
    vals = transport_values(sysm.residue_values(GRID.nodes), sysm.punctures, sysm.paths[0], 1e-12).frame
    expect = np.array([scipy.linalg.expm(-2j * np.pi * a) for a in A.on_grid(GRID)])
    assert np.abs(vals - expect).max() < 1e-9


def test_transport_gauge_covariance(rng):
    A = random_loop(rng, -1, 1, traceless=True, scale=0.2)
    g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    g /= np.sqrt(np.linalg.det(g))
    gi = np.linalg.inv(g)
    pts = [0.0, 1.0]
    s1 = make_system(pts, [A, -A], sum_tol=1e-12)
    s2 = make_system(pts, [A.conjugate_by(g), (-A).conjugate_by(g)], sum_tol=1e-12)
    m1 = monodromies(s1, GRID, 1e-12).values
    m2 = monodromies(s2, GRID, 1e-12).values
    assert np.abs(m2 - g @ m1 @ gi).max() <= 1e-10


def test_segment_path_transport_matches_power_law():
    A = model_residue(0.2, 0.3)
    vals = A.on_grid(GRID)
    tr = transport_values(vals[None], np.array([0.0]), SegmentPath(1.0, 0.25), 1e-12).frame
    # Psi(z) = exp(-A log z) solves dPsi/dz = -A/z Psi with Psi(1) = Id
    expect = np.array([scipy.linalg.expm(-np.log(0.25) * a) for a in vals])
    assert np.abs(tr - expect).max() < 1e-9


def test_paths_validate_geometry():
    with pytest.raises(PathError):
        default_paths([0.0, 0.1], radii=[0.5, 0.5])
    path = LoopPath(-1j, 0.0, 0.25)
    assert np.isclose(abs(path.entry), 0.25)


# monodromies ----------------------------------------------------------------------

def test_zero_system_monodromies_trivial():
    sysm = make_system([0, 1, 2], [LaurentLoop.zero(-1, 1)] * 3)
    md = monodromies(sysm, GRID)
    assert np.abs(md.values - np.eye(2)).max() < 1e-15 and md.composite_defect < 1e-15


def test_opposite_residues_have_inverse_monodromies():
    A = LaurentLoop.constant(np.array([[0.2, 0.1], [0.05, -0.2]]))
    md = monodromies(make_system([0, 1], [A, -A]), GRID, 1e-12)
    M1, M2 = md.values
    assert np.abs(M2 @ M1 - np.eye(2)).max() < 1e-9
    assert md.composite_defect < 1e-9


def test_small_t_monodromy_linearizes_to_residue():
    A = residue_loops(benchmark_config(), benchmark_alpha())
    lam = GRID.nodes
    for t in (1e-3, 5e-4):
        sysm = make_system(benchmark_punctures(), [a * t for a in A])
        md = monodromies(sysm, GRID, 1e-12)
        for j, a in enumerate(A):
            lin = np.eye(2) - 2j * np.pi * t * a(lam)
            assert np.abs(md.values[j] - lin).max() < 60 * t * t


def test_benchmark_composite_defect():
    A = residue_loops(benchmark_config(), benchmark_alpha())
    sysm = make_system(benchmark_punctures(), [a * 0.05 for a in A])
    md = monodromies(sysm, CircleGrid(32), 1e-11)
    assert md.composite_defect <= 1e-9
    assert md.order == composite_order(sysm)


def test_wrong_order_detected():
    A = residue_loops(benchmark_config(), benchmark_alpha())
    sysm = make_system(benchmark_punctures(), [a * 0.5 for a in A])
    md = monodromies(sysm, GRID, 1e-11)
    wrong = md.values[3] @ md.values[2] @ md.values[1] @ md.values[0]
    assert np.abs(wrong - np.eye(2)).max() > 1e-3


def test_residue_sum_guard():
    A = LaurentLoop.constant(np.diag([0.1, -0.1]))
    with pytest.raises(ResidueError):
        make_system([0, 1], [A, A])


# unitarity --------------------------------------------------------------------------

def test_unitarity_defect_examples():
    X = model_residue(0.3, 0.7)
    for s in (0.5, -2.0):
        M = loop_exp(X * s, -30, 30).loop
        assert unitarity_defect(M) <= 1e-12
    assert np.isclose(unitarity_defect(LaurentLoop.constant(np.diag([2, 0.5]))), 3.0)
    assert unitarity_defect(LaurentLoop.identity()) == 0


# energy ---------------------------------------------------------------------------------

def test_energy_residue_without_pole_is_zero():
    assert energy_residue(LaurentLoop.constant(np.diag([0.1, -0.1])), 0.1) == 0


def test_energy_residue_conjugation_invariant(rng):
    A = residue_loops(benchmark_config(), benchmark_alpha())[2]
    e = energy_residue(A, 0.12)
    for _ in range(50):
        g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        g /= np.sqrt(np.linalg.det(g))
        e2 = energy_residue(A.conjugate_by(np.linalg.inv(g)), 0.12, real=False)
        assert abs(e2 - e) <= 1e-10 * max(1, abs(e))


# pairings ----------------------------------------------------------------------------------

def test_kks_two_leg_toy():
    alpha, s, u = 0.2, 0.7, -1.3
    A = np.diag([alpha, -alpha])
    E12 = np.array([[0, 1], [0, 0]])
    X1, Y1 = s * E12, u * E12.T
    # equal residues: each leg contributes tr(A [X, Y]) / (8 tr A^2) = s u / (8 alpha)
    same = kks_pairing([A, A], [X1, -X1], [Y1, -Y1])
    assert np.isclose(same, 2 * s * u / (8 * alpha))
    # opposite residues: the pairing is odd in A and even in (X, Y), so the legs cancel
    opposite = kks_pairing([A, -A], [X1, -X1], [Y1, -Y1])
    assert abs(opposite) < 1e-15


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_kks_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    A = [np.diag([a, -a]) for a in (0.1, 0.2)]
    A = [A[0], -A[0]]

    def tangent():
        Z = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        X = A[0] @ Z - Z @ A[0]
        return [X, -X]
    X, Y = tangent(), tangent()
    assert abs(kks_pairing(A, X, Y) + kks_pairing(A, Y, X)) <= 1e-13
    assert abs(kks_pairing(A, X, X)) <= 1e-13


def test_twisted_pairing_diagonal_vanishes(rng):
    A = residue_loops(benchmark_config(), benchmark_alpha())
    Av = np.stack([a.on_grid(GRID) for a in A])
    X = rng.standard_normal(Av.shape) + 1j * rng.standard_normal(Av.shape)
    tp = twisted_pairing(Av, X, X, GRID)
    assert max(abs(c) for c in tp.coeffs.values()) < 1e-15 and tp.collapsed


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=5), st.floats(-5, 5))
def test_forms_from_coeffs_round_trip(Om, wI):
    f = forms_from_coeffs(Om, -2 * wI, np.conj(Om))
    assert np.isclose(f.omega_I, wI) and np.isclose(f.omega_J, Om.real) and np.isclose(f.omega_K, Om.imag)
    assert f.reality < 1e-12
    km, k0 = 0.25, -0.25j
    k1 = -np.conj(km)
    f2 = forms_from_coeffs(km * Om, -2 * k0 * wI, -k1 * np.conj(Om), km, k0)
    assert np.isclose(f2.omega_J, Om.real) and np.isclose(f2.omega_K, Om.imag)
    assert np.isclose(f2.omega_I, wI) and f2.reality < 1e-12
