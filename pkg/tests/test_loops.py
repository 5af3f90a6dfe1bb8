import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_loop
from twistorlines.loops import (BigCellError, CircleGrid, LaurentLoop, LoopError, commutator, evaluate,
                                exponential_example, exponential_example_breakdown, fit_from_samples,
                                fit_function, hat, hermitian_lift, iwasawa, iwasawa_newton, l1_norm,
                                loop_exp, model_residue, multiply, project, solve_commutator, split_uh,
                                star, trace_product_coeffs)

E12 = np.array([[0, 1], [0, 0]], complex)
E21 = E12.T.copy()
seeds = st.integers(0, 2 ** 31 - 1)


def max_diff(a, b):
    return (a - b).max_abs()


# evaluation and products -----------------------------------------------------

def test_eval_zero_identity_and_single_term():
    assert np.all(LaurentLoop.zero(-1, 1)(1j) == 0)
    assert np.allclose(LaurentLoop.identity()(-1.0), np.eye(2))
    assert np.allclose(LaurentLoop.monomial(E12, -1)(2.0), 0.5 * E12)


def test_eval_rejects_zero_lambda():
    with pytest.raises(LoopError):
        LaurentLoop.monomial(E12, -1)(0.0)


def test_multiply_examples():
    a = LaurentLoop.from_dict({-1: E12, 2: np.eye(2)})
    assert max_diff(multiply(LaurentLoop.identity(), a), a) == 0
    prod = multiply(LaurentLoop.monomial(np.eye(2), 1), LaurentLoop.monomial(np.eye(2), -1))
    assert max_diff(prod, LaurentLoop.identity()) == 0
    prod = multiply(LaurentLoop.monomial(E12, 1), LaurentLoop.monomial(E21, 1))
    assert max_diff(prod, LaurentLoop.monomial(np.diag([1, 0]), 2)) == 0


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_multiply_is_pointwise_product(seed):
    rng = np.random.default_rng(seed)
    a, b = random_loop(rng, -2, 1), random_loop(rng, -1, 3)
    lam = np.exp(1j * rng.uniform(0, 2 * np.pi, 5)) * rng.uniform(0.5, 2, 5)
    assert np.allclose(multiply(a, b)(lam), a(lam) @ b(lam), atol=1e-11)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_multiply_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_loop(rng, -1, 1) for _ in range(3))
    assert max_diff(multiply(multiply(a, b), c), multiply(a, multiply(b, c))) < 1e-12


# star and the unitary/Hermitian splitting -------------------------------------

def test_star_fixes_model_residue_and_skew_hermitian_constants():
    X = model_residue(0.0, 1.0)          # mu = i sqrt(0 + 1) = i
    assert np.isclose(X.coeff(0)[0, 0], 1j)
    assert max_diff(star(X), X) < 1e-15
    K = np.array([[1j, 2 + 1j], [-2 + 1j, -1j]])
    assert max_diff(star(LaurentLoop.constant(K)), LaurentLoop.constant(K)) == 0


def test_star_coefficient_rule_matches_pointwise_definition(rng):
    a = random_loop(rng, -3, 3)
    grid = CircleGrid(64)
    lam = grid.nodes
    vals = -np.conj(np.swapaxes(a(-1 / np.conj(lam)), -1, -2))
    refit = fit_from_samples(vals, -3, 3).loop
    assert max_diff(star(a), refit) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_star_is_involutive_lie_automorphism(seed):
    rng = np.random.default_rng(seed)
    a, b = random_loop(rng, -2, 2), random_loop(rng, -1, 2)
    assert max_diff(star(star(a)), a) < 1e-14
    assert max_diff(star(commutator(a, b)), commutator(star(a), star(b))) < 1e-11


def test_group_star_inverts_hat(rng):
    g = loop_exp(random_loop(rng, -1, 1, traceless=True, scale=0.2), -12, 12).loop.with_kind("group")
    grid = CircleGrid(64)
    lhs = star(g, grid).on_grid(grid) @ hat(g).on_grid(grid)
    assert np.abs(lhs - np.eye(2)).max() < 1e-9


def test_split_uh_examples(rng):
    X = model_residue(0.3, 1.0)
    u, h = split_uh(X)
    assert max_diff(u, X) < 1e-15 and h.max_abs() < 1e-15
    u, h = split_uh(X * 1j)
    assert u.max_abs() < 1e-15 and max_diff(h, X * 1j) < 1e-15


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_split_uh_recombines_into_fixed_and_odd_parts(seed):
    a = random_loop(np.random.default_rng(seed), -2, 2)
    u, h = split_uh(a)
    assert max_diff(u + h, a) <= 1e-14
    assert max_diff(star(u), u) <= 1e-14
    assert max_diff(star(h), -h) <= 1e-14


# projections, norms, fitting ------------------------------------------------------

def test_project_examples():
    A, B, C = np.eye(2), E12, E21
    a = LaurentLoop.from_dict({-1: A, 0: B, 1: C})
    assert max_diff(project(a, "geq0"), LaurentLoop.from_dict({0: B, 1: C})) == 0
    assert project(LaurentLoop.constant(A), "pos").max_abs() == 0
    X = model_residue(0.3, 1.0)
    mu = X.coeff(0)[0, 0]
    assert np.allclose(project(X, "zero").coeff(0), np.diag([mu, -mu]))
    with pytest.raises(LoopError):
        project(a, "odd")


def test_l1_norm_examples():
    assert l1_norm(LaurentLoop.zero()) == 0
    assert np.isclose(l1_norm(LaurentLoop.identity()), np.sqrt(2))


def test_l1_norm_submultiplicative(rng):
    for _ in range(100):
        a, b = random_loop(rng, -2, 2), random_loop(rng, -1, 3)
        assert l1_norm(multiply(a, b)) <= l1_norm(a) * l1_norm(b) * (1 + 1e-12)


def test_fit_examples():
    grid = CircleGrid(8)
    fit = fit_from_samples(np.broadcast_to(np.eye(2), (8, 2, 2)), 0, 0)
    assert max_diff(fit.loop, LaurentLoop.identity()) < 1e-15
    vals = grid.nodes[:, None, None] * E12
    assert np.allclose(fit_from_samples(vals, -2, 2).loop.coeff(1), E12, atol=1e-15)


def test_fit_recovers_taylor_coefficients_of_exp():
    from math import factorial
    grid = CircleGrid(64)
    fit = fit_from_samples(np.exp(grid.nodes)[:, None, None] * E12, 0, 6)
    for k in range(7):
        assert abs(fit.loop.coeff(k)[0, 1] - 1 / factorial(k)) < 1e-10
    assert fit.aliased                  # exp has modes beyond degree 6


def test_fit_rejects_too_coarse_grid():
    with pytest.raises(LoopError):
        fit_from_samples(np.zeros((4, 2, 2)), -3, 3)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_fit_round_trip(seed):
    a = random_loop(np.random.default_rng(seed), -3, 4)
    fit = fit_from_samples(a.on_grid(CircleGrid(16)), -3, 4)
    assert max_diff(fit.loop, a) < 1e-13 and fit.tail < 1e-13


def test_fit_function_alias_estimate_on_fine_grid():
    fit = fit_function(lambda lam: np.exp(lam)[..., None, None] * np.eye(2), 0, 20)
    assert not fit.aliased


# Iwasawa factorization -------------------------------------------------------------

def test_iwasawa_identity():
    f = iwasawa(LaurentLoop.identity())
    assert max_diff(f.p.padded(0, 0).truncated(0, 0), LaurentLoop.identity()) < 1e-15
    assert f.residual < 1e-15 and f.unitarity < 1e-15


def test_iwasawa_abelian_example_r0():
    a, x = 0.3, 0.5
    ex = exponential_example(a, 0.0, x)
    f = iwasawa(ex.Psi)
    assert np.allclose(f.p.coeff(0), np.diag([x ** -a, x ** a]), atol=1e-12)
    assert max((np.abs(f.p.coeff(k)).max() for k in range(1, f.p.hi + 1)), default=0.0) < 1e-12
    assert np.allclose(f.u.coeff(0), np.eye(2), atol=1e-12)


def test_iwasawa_matches_closed_form_r_half():
    ex = exponential_example(0.3, 0.5, 0.5)
    f = iwasawa(ex.Psi)
    for k in range(-3, 4):
        assert np.abs(f.p.coeff(k) - ex.B.coeff(k)).max() < 1e-8
        assert np.abs(f.u.coeff(k) - ex.F.coeff(k)).max() < 1e-8


def test_exponential_example_is_consistent():
    ex = exponential_example(0.1, 1.0, 0.3)
    assert max_diff(multiply(ex.B, ex.F), ex.Psi) < 1e-14
    grid = CircleGrid(32)
    vals = ex.F.on_grid(grid)
    anti = np.conj(np.swapaxes(vals[grid.antipode()], -1, -2))
    assert np.abs(anti @ vals - np.eye(2)).max() < 1e-14


def test_iwasawa_fails_at_tilde_breakdown():
    xt = exponential_example_breakdown(0.3, 1.0, tilde=True)
    assert 0 < xt < 1
    assert np.isclose(xt, 1 / exponential_example_breakdown(0.3, 1.0))
    ex_ok = exponential_example(0.3, 1.0, 0.9, tilde=True)
    f = iwasawa(ex_ok.Psi)
    assert np.abs(f.p.coeff(0) - ex_ok.B.coeff(0)).max() < 1e-8
    with pytest.raises(BigCellError):
        exponential_example(0.3, 1.0, xt * 0.5, tilde=True)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_iwasawa_factor_properties_and_agreement_with_newton(seed):
    rng = np.random.default_rng(seed)
    g = loop_exp(random_loop(rng, -1, 1, traceless=True, scale=0.15), -10, 10).loop.with_kind("group")
    f = iwasawa(g, N=14)
    assert f.residual < 1e-9 and f.unitarity < 1e-9
    p0 = f.p.coeff(0)
    assert abs(p0[0, 1]) < 1e-12 and p0[0, 0].real > 0 and p0[1, 1].real > 0
    assert abs(p0[0, 0].imag) < 1e-12 and abs(p0[1, 1].imag) < 1e-12
    fn = iwasawa_newton(g, N=14)
    assert np.abs(fn.p.coeff(0) - p0).max() < 1e-8


# model residue linear solvers ---------------------------------------------------------

def test_solve_commutator_examples():
    alpha = 0.4
    X = model_residue(alpha, 0.0)
    mu = X.coeff(0)[0, 0]
    y = 0.7 - 0.2j
    Yh = solve_commutator(X, LaurentLoop.constant(y * E12))
    assert np.allclose(Yh.padded(0, 0).coeff(0), y / (2 * mu) * E12, atol=1e-15)
    assert solve_commutator(X, LaurentLoop.zero()).max_abs() == 0


def test_solve_commutator_requires_trace_condition():
    X = model_residue(0.4, 0.5)
    with pytest.raises(LoopError):
        solve_commutator(X, X)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.05, 0.45), st.complex_numbers(max_magnitude=2))
def test_solve_commutator_recovers_commutator(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    X = model_residue(alpha, beta)
    Y0 = random_loop(rng, -2, 3, traceless=True)
    Y = commutator(X, Y0)
    Yh = solve_commutator(X, Y)
    assert max_diff(commutator(X, Yh), Y) <= 1e-10 * max(1.0, l1_norm(Y))
    _, tc = trace_product_coeffs(X, Yh)
    assert np.abs(tc).max() < 1e-12 * max(1.0, l1_norm(Y))


def test_hermitian_lift_zero_and_closed_form():
    X = model_residue(0.3, 1.0)
    assert hermitian_lift(X, LaurentLoop.zero()).max_abs() == 0
    a = 0.37
    beta, mu = 1.0, X.coeff(0)[0, 0]
    H = commutator(X, LaurentLoop.constant(np.diag([a, -a]).astype(complex)))
    P = hermitian_lift(X, H)
    P0hat = LaurentLoop.monomial(-2 * a * np.conj(beta) / mu * E21, 1)
    expect = project(commutator(X, P0hat).padded(0, 0), "geq0")
    assert max_diff(P, expect) < 1e-14


def test_hermitian_lift_rejects_non_hermitian_input():
    X = model_residue(0.3, 1.0)
    with pytest.raises(LoopError):
        hermitian_lift(X, X)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.05, 0.45), st.complex_numbers(max_magnitude=2))
def test_hermitian_lift_projects_back(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    X = model_residue(alpha, beta)
    Hh = split_uh(random_loop(rng, -2, 2, traceless=True))[1]
    H = commutator(X, Hh)
    P = hermitian_lift(X, H)
    assert P.lo >= 0
    _, herm = split_uh(P)
    assert max_diff(herm, H) <= 1e-10 * max(1.0, l1_norm(H))
    _, tc = trace_product_coeffs(X, P)
    assert np.abs(tc).max() < 1e-10 * max(1.0, l1_norm(H))


def test_evaluate_function_matches_call():
    a = LaurentLoop.from_dict({-1: E12, 1: E21})
    assert np.allclose(evaluate(a, 2.0), a(2.0))
