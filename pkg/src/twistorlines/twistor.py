"""Real holomorphic sections from the loop-group monodromy problem.

At fixed ``t`` the unknowns are polynomial corrections ``P_j`` (degrees
``0..N``) and a Hermitian traceless ``eta``; the residues are

    Ahat_j = lam^{-1} g N_j g^{-1} + A_j^(0) + lam A_j^(1) + P_j,   g = exp(eta),

where ``N_j`` is the Higgs residue of leg ``j``.  The connection is
``d + t sum_j Ahat_j dz/(z - p_j)`` and the conditions are

* R1: every monodromy ``M_j`` is unitary on the circle (Hermitian part of
  ``log(M_j)/t`` vanishes at every grid node);
* R2: ``det Ahat_j = -alpha_j^2`` coefficientwise;
* R3: for legs with ``w_j = 0`` the ``alpha_j``-eigenline of ``Ahat_j(0)`` is ``g v_j``;
* R4: the constant coefficient of ``sum_j P_j`` has no Hermitian part.

They are solved by Gauss-Newton with an exact Jacobian assembled from the
variational integrals of the frame.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from math import factorial
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .fuchsian import (FuchsianLoopSystem, MonodromyData, default_paths, monodromies,
                       energy_residue)
from .hyperpolygon import (SIGMA, HyperpolygonConfig, check_stable, check_weights,
                           residue_loops, moment_maps)
from .loops import (BigCellError, CircleGrid, LaurentLoop, det_coeffs, iwasawa,
                    unitarity_defect_values)


class SolverError(RuntimeError):
    """Newton iteration failed at a fixed ``t``."""


class StepTooLarge(SolverError):
    """A monodromy left the domain of the principal logarithm."""


class StabilityError(ValueError):
    """Input data are not generic, small and stable."""


# ---------------------------------------------------------------------------
# principal logarithm on SL(2,C)
# ---------------------------------------------------------------------------

_PHI = np.array([(-1) ** k * factorial(k) / np.prod(np.arange(1, 2 * k + 2, 2), dtype=float)
                 for k in range(40)])
_DPHI = np.array([k * _PHI[k] for k in range(1, 40)])


def _phi(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``phi(c) = d / sinh d`` with ``cosh d = c`` and its derivative in ``c``."""
    c = np.asarray(c, complex)
    u = c - 1.0
    small = np.abs(u) < 0.1
    phi = np.empty_like(c)
    dphi = np.empty_like(c)
    if np.any(small):
        us = u[small]
        phi[small] = np.polynomial.polynomial.polyval(us, _PHI)
        dphi[small] = np.polynomial.polynomial.polyval(us, _DPHI)
    big = ~small
    if np.any(big):
        cb = c[big]
        d = np.arccosh(cb)
        phi[big] = d / np.sinh(d)
        dphi[big] = (1 - cb * phi[big]) / (cb ** 2 - 1)
    return phi, dphi


def sl2_log(M: np.ndarray) -> np.ndarray:
    """Principal logarithm of ``(..., 2, 2)`` matrices with ``det = 1``."""
    c = 0.5 * np.trace(M, axis1=-2, axis2=-1)
    if np.any((np.abs(c.imag) < 1e-12) & (c.real <= -1)):
        raise StepTooLarge("monodromy trace left the principal-log domain")
    phi, _ = _phi(c)
    return phi[..., None, None] * (M - c[..., None, None] * np.eye(2))


def sl2_log_derivative(M: np.ndarray, dM: np.ndarray) -> np.ndarray:
    """Directional derivative of :func:`sl2_log`; ``dM`` has shape ``(K, ..., 2, 2)``."""
    c = 0.5 * np.trace(M, axis1=-2, axis2=-1)
    phi, dphi = _phi(c)
    dc = 0.5 * np.trace(dM, axis1=-2, axis2=-1)
    I = np.eye(2)
    return (dphi * dc)[..., None, None] * (M - c[..., None, None] * I) + \
        phi[..., None, None] * (dM - dc[..., None, None] * I)


# ---------------------------------------------------------------------------
# problem setup
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverSettings:
    N: int = 6
    M: int | None = None          # circle grid size; default 4 (N + 2) rounded to even
    ode_tol: float = 1e-11
    newton_tol: float = 1e-11
    max_iter: int = 30
    zero_leg_tol: float = 1e-12
    residual_tol: float = 1e-8    # a stalled Gauss-Newton step is not convergence

    def grid(self) -> CircleGrid:
        M = self.M if self.M is not None else 4 * (self.N + 2)
        return CircleGrid(M + (M % 2))


@dataclass(frozen=True, eq=False)
class TwistorProblem:
    """Level-set hyperpolygon data on the punctured sphere, ready for the monodromy solve."""

    cfg: HyperpolygonConfig
    alpha: np.ndarray
    punctures: np.ndarray
    settings: SolverSettings = SolverSettings()
    radii: np.ndarray | None = None
    check: bool = True

    def __post_init__(self):
        alpha = np.asarray(self.alpha, float)
        p = np.asarray(self.punctures, complex)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "punctures", p)
        if self.check:
            wc = check_weights(alpha)
            if not (wc.generic and wc.small):
                raise StabilityError(f"weights are not generic and small (witness {wc.witness})")
            sc = check_stable(self.cfg, alpha)
            if not sc.stable:
                raise StabilityError(f"configuration is not alpha-stable (witness {sc.witness})")
            m = moment_maps(self.cfg)
            defect = max(np.abs(m.nu_I).max(), np.abs(m.nu_C).max(), np.abs(m.mu_C).max(),
                         np.abs(m.mu_I - alpha).max())
            if defect > 1e-9:
                raise StabilityError(f"configuration is not moment-solved (defect {defect:.2e})")
        A = residue_loops(self.cfg, alpha if self.check else None)
        object.__setattr__(self, "A", [a.padded(-1, 1) for a in A])
        object.__setattr__(self, "paths", tuple(default_paths(p, radii=self.radii)))
        wn = np.linalg.norm(self.cfg.w, axis=1)
        object.__setattr__(self, "zero_legs", tuple(int(j) for j in np.nonzero(
            wn <= self.settings.zero_leg_tol * max(1.0, np.abs(self.cfg.v).max()))[0]))

    @property
    def n(self) -> int:
        return len(self.punctures)

    @property
    def N(self) -> int:
        return self.settings.N

    @property
    def n_unknowns(self) -> int:
        return self.n * 6 * (self.N + 1) + 3

    def with_settings(self, **kw) -> "TwistorProblem":
        return TwistorProblem(self.cfg, self.alpha, self.punctures, replace(self.settings, **kw),
                              self.radii, self.check)

    # unknown vector <-> (P, eta)
    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n, N = self.n, self.N
        z = x[:n * 6 * (N + 1)].reshape(n, N + 1, 3, 2)
        abc = z[..., 0] + 1j * z[..., 1]
        P = np.empty((n, N + 1, 2, 2), complex)
        P[..., 0, 0], P[..., 0, 1], P[..., 1, 0], P[..., 1, 1] = abc[..., 0], abc[..., 1], abc[..., 2], -abc[..., 0]
        eta = np.einsum("a,aij->ij", x[-3:], SIGMA)
        return P, eta

    def pack(self, P: np.ndarray, eta: np.ndarray) -> np.ndarray:
        abc = np.stack([P[..., 0, 0], P[..., 0, 1], P[..., 1, 0]], -1)
        z = np.stack([abc.real, abc.imag], -1).ravel()
        e = np.einsum("aij,ji->a", SIGMA, eta).real / 2
        return np.concatenate([z, e])

    def zero(self) -> np.ndarray:
        return np.zeros(self.n_unknowns)

    def residue_coeffs(self, x: np.ndarray) -> np.ndarray:
        """Coefficients of ``Ahat_j`` on the window ``[-1, max(1, N)]``; shape (n, K, 2, 2)."""
        P, eta = self.unpack(x)
        g = scipy.linalg.expm(eta)
        gi = np.linalg.inv(g)
        hi = max(1, self.N)
        C = np.zeros((self.n, hi + 2, 2, 2), complex)
        for j, A in enumerate(self.A):
            C[j, 0] = g @ A.coeff(-1) @ gi
            C[j, 1] = A.coeff(0)
            C[j, 2] = A.coeff(1)
            C[j, 1:self.N + 2] += P[j]
        return C

    def residues(self, x: np.ndarray) -> list[LaurentLoop]:
        return [LaurentLoop(-1, c, "algebra") for c in self.residue_coeffs(x)]

    def system(self, x: np.ndarray, t: float) -> FuchsianLoopSystem:
        res = tuple(r * t for r in self.residues(x))
        return FuchsianLoopSystem(self.punctures, res, self.paths[0].q, self.paths)

    # ---------------------------------------------------------------------
    def _eval_coeffs(self, C: np.ndarray, lam: np.ndarray) -> np.ndarray:
        powers = lam[None, :] ** np.arange(-1, C.shape[1] - 1)[:, None]
        return np.einsum("jkab,km->jmab", C, powers)

    def residue_samples(self, x: np.ndarray, grid: CircleGrid | None = None) -> np.ndarray:
        """Values of ``Ahat_j`` on the grid nodes; shape (n, M, 2, 2)."""
        grid = grid or self.settings.grid()
        return self._eval_coeffs(self.residue_coeffs(x), grid.nodes)

    def residual_blocks(self, x: np.ndarray, t: float, grid: CircleGrid | None = None,
                        ode_tol: float | None = None, jacobian: bool = False):
        """Residual blocks at ``(x, t)``; with ``jacobian`` also the real Jacobian."""
        grid = grid or self.settings.grid()
        ode_tol = ode_tol or self.settings.ode_tol
        lam = grid.nodes
        C = self.residue_coeffs(x)
        n, K = C.shape[:2]
        half = grid.M // 2
        anti = grid.antipode()
        blocks = {}
        if t == 0:
            # limit of log(M_j)/t is -2 pi i Ahat_j
            Y = -2j * np.pi * self._eval_coeffs(C, lam)
            md = None
        else:
            R = t * self._eval_coeffs(C, lam)
            sysm = FuchsianLoopSystem(self.punctures, tuple(LaurentLoop(-1, c) for c in C * t),
                                      self.paths[0].q, self.paths)
            md = monodromies(sysm, grid, ode_tol, variations=jacobian, check_composite=False,
                             residue_values=R)
            Y = sl2_log(md.values) / t
        H = 0.5 * (Y + np.conj(np.swapaxes(Y[:, anti], -1, -2)))[:, :half]
        blocks["R1"] = _real_entries(H)
        dets = np.array([_det_window(c) for c in C])
        dets[:, 1] += self.alpha ** 2
        blocks["R2"] = np.concatenate([dets.real.ravel(), dets.imag.ravel()])
        P, eta = self.unpack(x)
        g = scipy.linalg.expm(eta)
        r3 = []
        for j in self.zero_legs:
            A0 = C[j, 1]
            r3.append((A0 - self.alpha[j] * np.eye(2)) @ (g @ self.cfg.v[j]))
        r3 = np.array(r3).ravel()
        blocks["R3"] = np.concatenate([r3.real, r3.imag])
        S0 = P[:, 0].sum(0)
        herm = 0.5 * (S0 + S0.conj().T)
        blocks["R4"] = np.einsum("aij,ji->a", SIGMA, herm).real / 2
        if not jacobian:
            return blocks, md
        return blocks, md, self._jacobian(x, t, C, md, grid, lam)

    def _column_perturbations(self, x: np.ndarray):
        """Real directional derivatives of the residue coefficients, one per unknown.

        Returns ``dC`` of shape (n_unknowns, n, K, 2, 2).
        """
        n, N = self.n, self.N
        K = max(1, N) + 2
        nu = self.n_unknowns
        dC = np.zeros((nu, n, K, 2, 2), complex)
        col = 0
        E = [np.array([[1, 0], [0, -1]]), np.array([[0, 1], [0, 0]]), np.array([[0, 0], [1, 0]])]
        for j in range(n):
            for d in range(N + 1):
                for e in range(3):
                    for unit in (1.0, 1j):
                        dC[col, j, d + 1] = unit * E[e]
                        col += 1
        # eta columns: derivative of g N g^{-1} by central differences (cheap, algebraic)
        h = 1e-6
        for a in range(3):
            xp, xm = x.copy(), x.copy()
            xp[col] += h
            xm[col] -= h
            dC[col] = (self.residue_coeffs(xp) - self.residue_coeffs(xm)) / (2 * h)
            dC[col, :, 1:] = 0.0
            col += 1
        return dC

    def _jacobian(self, x, t, C, md: MonodromyData | None, grid: CircleGrid, lam):
        n, K = C.shape[:2]
        half = grid.M // 2
        anti = grid.antipode()
        dC = self._column_perturbations(x)
        dA = np.einsum("cjkab,km->cjmab", dC, lam[None, :] ** np.arange(-1, K - 1)[:, None])
        nu = dC.shape[0]
        if t == 0:
            dY = -2j * np.pi * dA
        else:
            Mv = md.values                       # (n, M, 2, 2)
            W = md.variations                    # (n_paths, n_res, M, 4, 4)
            vec = dA.reshape(nu, n, grid.M, 4)
            s = np.einsum("jkmab,ckmb->cjma", W, vec).reshape(nu, n, grid.M, 2, 2)
            dM = -t * (Mv[None] @ s)
            dY = sl2_log_derivative(Mv[None], dM) / t
        dH = 0.5 * (dY + np.conj(np.swapaxes(dY[:, :, anti], -1, -2)))[:, :, :half]
        J1 = np.stack([_real_entries(dH[c]) for c in range(nu)], 1)
        # determinant: d det(A) = tr(adj(A) dA), coefficientwise via convolution
        J2 = []
        for c in range(nu):
            dd = np.array([_det_derivative_window(C[j], dC[c, j]) for j in range(n)])
            J2.append(np.concatenate([dd.real.ravel(), dd.imag.ravel()]))
        J2 = np.array(J2).T
        P, eta = self.unpack(x)
        g = scipy.linalg.expm(eta)
        J3 = np.zeros((4 * len(self.zero_legs), nu))
        if self.zero_legs:
            h = 1e-6
            for c in range(nu):
                col = []
                for j in self.zero_legs:
                    col.append(dC[c, j, 1] @ (g @ self.cfg.v[j]))
                if c >= nu - 3:
                    xp, xm = x.copy(), x.copy()
                    xp[c] += h
                    xm[c] -= h
                    gp = scipy.linalg.expm(self.unpack(xp)[1])
                    gm = scipy.linalg.expm(self.unpack(xm)[1])
                    col = [(C[j, 1] - self.alpha[j] * np.eye(2)) @ ((gp - gm) @ self.cfg.v[j]) / (2 * h)
                           for j in self.zero_legs]
                col = np.array(col).ravel()
                J3[:, c] = np.concatenate([col.real, col.imag])
        J4 = np.zeros((3, nu))
        for c in range(nu - 3):
            d0 = dC[c, :, 1].sum(0)
            J4[:, c] = np.einsum("aij,ji->a", SIGMA, 0.5 * (d0 + d0.conj().T)).real / 2
        return {"R1": J1, "R2": J2, "R3": J3, "R4": J4}


def _real_entries(H: np.ndarray) -> np.ndarray:
    """Real vector of the (0,0), (0,1), (1,0) entries of traceless matrices."""
    e = np.stack([H[..., 0, 0], H[..., 0, 1], H[..., 1, 0]], -1)
    return np.concatenate([e.real.ravel(), e.imag.ravel()])


def _det_window(C: np.ndarray) -> np.ndarray:
    """Coefficients of ``det`` for degrees -1 .. 2K-4 (degree -2 vanishes identically)."""
    _, d = det_coeffs(LaurentLoop(-1, C))
    return d[1:]


def _det_derivative_window(C: np.ndarray, dC: np.ndarray) -> np.ndarray:
    p, q, r, s = C[:, 0, 0], C[:, 0, 1], C[:, 1, 0], C[:, 1, 1]
    dp, dq, dr, ds = dC[:, 0, 0], dC[:, 0, 1], dC[:, 1, 0], dC[:, 1, 1]
    d = np.convolve(dp, s) + np.convolve(p, ds) - np.convolve(dq, r) - np.convolve(q, dr)
    return d[1:]


# ---------------------------------------------------------------------------
# states and the fixed-t solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MonodromySolverState:
    t: float
    x: np.ndarray
    P: tuple
    eta: np.ndarray
    residuals: dict
    iterations: int
    monodromy: MonodromyData | None = field(default=None, repr=False)

    def max_residual(self) -> float:
        return max((float(np.abs(v).max()) for v in self.residuals.values() if np.size(v)), default=0.0)


def _weights(blocks: dict) -> dict:
    return {"R1": 1.0, "R2": 1.0, "R3": 1.0, "R4": 1.0}


def _stack(blocks: dict) -> np.ndarray:
    return np.concatenate([blocks[k] for k in ("R1", "R2", "R3", "R4")])


def make_state(problem: TwistorProblem, x: np.ndarray, t: float, blocks: dict, iterations: int,
               md: MonodromyData | None) -> MonodromySolverState:
    P, eta = problem.unpack(x)
    loops = tuple(LaurentLoop(0, p, "algebra") for p in P)
    res = {k: float(np.abs(v).max()) if np.size(v) else 0.0 for k, v in blocks.items()}
    return MonodromySolverState(t, x.copy(), loops, eta, res, iterations, md)


def solve_at_t(problem: TwistorProblem, t: float, seed: np.ndarray | None = None,
               tol: float | None = None, max_iter: int | None = None) -> MonodromySolverState:
    """Gauss-Newton solve of R1-R4 at fixed ``t`` (least squares; exact Jacobian)."""
    tol = problem.settings.newton_tol if tol is None else tol
    max_iter = problem.settings.max_iter if max_iter is None else max_iter
    x = problem.zero() if seed is None else np.array(seed, float)
    if t == 0:
        blocks, md = problem.residual_blocks(problem.zero(), 0.0)
        return make_state(problem, problem.zero(), 0.0, blocks, 0, md)
    prev_norm = np.inf
    for it in range(max_iter + 1):
        blocks, md, J = problem.residual_blocks(x, t, jacobian=True)
        r = _stack(blocks)
        Jm = np.vstack([J[k] for k in ("R1", "R2", "R3", "R4")])
        step, *_ = np.linalg.lstsq(Jm, -r, rcond=None)
        rn = np.linalg.norm(r)
        small_step = np.abs(step).max() <= tol * max(1.0, np.abs(x).max())
        # at small t the attainable step size is limited by roundoff in log(M)/t
        stalled = rn >= 0.5 * prev_norm and np.abs(r).max() <= problem.settings.residual_tol
        if small_step or stalled or it == max_iter:
            break
        # backtracking on the least-squares objective
        tau = 1.0
        while True:
            try:
                xt = x + tau * step
                bt, _ = problem.residual_blocks(xt, t)
                if np.linalg.norm(_stack(bt)) <= rn * (1 + 1e-12) or tau < 1e-3:
                    break
            except StepTooLarge:
                pass
            tau /= 4
        x = xt
        prev_norm = rn
    else:  # pragma: no cover
        pass
    if not (small_step or stalled):
        raise SolverError(f"no convergence at t={t:g} after {max_iter} iterations "
                          f"(residual {np.abs(r).max():.3e}, last step {np.abs(step).max():.3e})")
    # the last (tiny) step is still a Newton correction; take it and report fresh residuals
    x = x + step
    blocks, md = problem.residual_blocks(x, t)
    state = make_state(problem, x, t, blocks, it, md)
    if state.max_residual() > problem.settings.residual_tol:
        raise SolverError(f"Gauss-Newton stalled at t={t:g} with residual {state.max_residual():.3e}")
    return state


# ---------------------------------------------------------------------------
# continuation and certificates
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ContinuationRun:
    problem: TwistorProblem
    t_list: list
    states: list
    log: list
    failed_at: float | None = None

    @property
    def converged_ts(self) -> list:
        return [s.t for s in self.states]


def continuation(problem: TwistorProblem, t_list: Sequence[float]) -> ContinuationRun:
    """Predictor (linear in ``t``) / corrector continuation along an increasing ``t`` list."""
    ts = [float(t) for t in t_list]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("t_list must be strictly increasing")
    states, log = [], []
    hist = [(0.0, problem.zero())]
    run = ContinuationRun(problem, ts, states, log)
    for t in ts:
        if len(hist) >= 2:
            (t0, x0), (t1, x1) = hist[-2], hist[-1]
            seed = x1 + (t - t1) * (x1 - x0) / (t1 - t0)
        else:
            t1, x1 = hist[-1]
            seed = x1
        try:
            st = solve_at_t(problem, t, seed)
        except (SolverError, BigCellError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.append({"t": t, "status": "failed", "message": str(exc)})
            run.failed_at = t
            break
        states.append(st)
        hist.append((t, st.x))
        log.append({"t": t, "status": "converged", "iterations": st.iterations,
                    "residuals": st.residuals})
    return run


class Certificate(NamedTuple):
    t: np.ndarray
    sum_P: np.ndarray                 # max |coeff of sum_j P_j| per t
    unitarity: np.ndarray             # (T, n) unitarity defects of M_j(t)
    det_residual: np.ndarray          # (T,) max |det coeff + alpha^2 delta|
    B_hermitian: np.ndarray           # (T, n) Hermitian-part sup norm of finite-difference B_j(t)
    B0_error: np.ndarray              # (n,) sup |B_j(0) - (-2 pi i A_j)| after extrapolation
    B0: np.ndarray                    # (n, M, 2, 2) extrapolated B_j(0) on the grid


def det_residual(problem: TwistorProblem, x: np.ndarray) -> float:
    C = problem.residue_coeffs(x)
    d = np.array([_det_window(c) for c in C])
    d[:, 1] += problem.alpha ** 2
    return float(np.abs(d).max())


def monodromy_values(problem: TwistorProblem, x: np.ndarray, t: float, grid: CircleGrid | None = None,
                     ode_tol: float | None = None) -> MonodromyData:
    grid = grid or problem.settings.grid()
    C = problem.residue_coeffs(x)
    sysm = FuchsianLoopSystem(problem.punctures, tuple(LaurentLoop(-1, c * t) for c in C),
                              problem.paths[0].q, problem.paths)
    return monodromies(sysm, grid, ode_tol or problem.settings.ode_tol, check_composite=False)


def b_finite_difference(problem: TwistorProblem, state: MonodromySolverState, grid: CircleGrid | None = None,
                        rel_h: float = 0.1) -> np.ndarray:
    """``B_j(t) = M_j^{-1} (M_j(t+h) - M_j(t-h)) / 2h`` with ``h = rel_h t``; shape (n, M, 2, 2)."""
    grid = grid or problem.settings.grid()
    t = state.t
    h = rel_h * t
    sp = solve_at_t(problem, t + h, state.x)
    sm = solve_at_t(problem, t - h, state.x)
    Mp = monodromy_values(problem, sp.x, t + h, grid).values
    Mm = monodromy_values(problem, sm.x, t - h, grid).values
    M0 = monodromy_values(problem, state.x, t, grid).values
    return np.linalg.solve(M0, (Mp - Mm) / (2 * h))


def hermitian_sup(Y: np.ndarray, grid: CircleGrid) -> float:
    """Sup norm of the Hermitian part ``(Y(lam) + Y(-lam)^H)/2`` on the grid."""
    anti = grid.antipode()
    return float(np.abs(0.5 * (Y + np.conj(np.swapaxes(Y[..., anti, :, :], -1, -2)))).max())


def verify_twistor(run: ContinuationRun, n_extrapolate: int = 3) -> Certificate:
    """Certificates along a converged run (needs at least three ``t`` values)."""
    problem = run.problem
    states = [s for s in run.states if s.t > 0]
    if len(states) < 3:
        raise ValueError("verify_twistor needs at least three converged t > 0")
    grid = problem.settings.grid()
    ts, sumP, unit, dres, bher, Bs = [], [], [], [], [], []
    for st in states:
        ts.append(st.t)
        S = sum(p.coeffs for p in st.P)
        sumP.append(float(np.abs(S).max()))
        md = monodromy_values(problem, st.x, st.t, grid)
        unit.append(md.unitarity())
        dres.append(det_residual(problem, st.x))
        B = b_finite_difference(problem, st, grid)
        Bs.append(B)
        bher.append([hermitian_sup(B[j], grid) for j in range(problem.n)])
    ts = np.array(ts)
    Bs = np.array(Bs)
    # polynomial extrapolation to t = 0 through the smallest t values
    k = min(n_extrapolate, len(ts))
    idx = np.argsort(ts)[:k]
    V = np.vander(ts[idx], k, increasing=True)
    w0 = np.linalg.solve(V.T, np.eye(k)[0])      # weights of the value at t = 0
    B0 = np.einsum("i,ijmab->jmab", w0, Bs[idx])
    lam = grid.nodes
    ref = -2j * np.pi * np.stack([A(lam) for A in problem.A])
    err = np.abs(B0 - ref).max(axis=(1, 2, 3))
    return Certificate(ts, np.array(sumP), np.array(unit), np.array(dres), np.array(bher), err, B0)


# ---------------------------------------------------------------------------
# harmonic map diagnostics
# ---------------------------------------------------------------------------

class BigCellWarning(UserWarning):
    """The Iwasawa factorization failed at a sample point."""


class HarmonicMapReport(NamedTuple):
    z: np.ndarray               # (S,) sample points
    f: np.ndarray               # (S, 2, 2) f = F(1)^H F(1) with F the unitary Iwasawa factor
    h: np.ndarray               # (S, 2, 2) metric (B(0) B(0)^H)^{-1} in the line-adapted frame
    distance: np.ndarray        # (S,) hyperbolic distance of h to the model metric
    f_distance: np.ndarray      # (S,) hyperbolic distance of f to the identity
    sup_distance: float
    hermitian_defect: float
    det_defect: float
    fit_tail: float             # Laurent mass lost when the frames were fitted
    failures: tuple             # sample points outside the big cell


def hyperbolic_distance(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """Distance between positive ``det = 1`` Hermitian matrices in ``H^3``.

    Normalised so that ``diag(e^s, e^-s)`` is at distance ``|s|`` from the identity.
    """
    x = np.real(np.trace(np.linalg.solve(h1, h2), axis1=-2, axis2=-1)) / 2
    return np.arccosh(np.maximum(x, 1.0))


def line_frame(line: np.ndarray) -> np.ndarray:
    """Unitary matrix whose first column spans ``line``."""
    e = np.asarray(line, complex)
    e = e / np.linalg.norm(e)
    return np.array([[e[0], -np.conj(e[1])], [e[1], np.conj(e[0])]])


def parabolic_line(residue: np.ndarray, weight: float) -> np.ndarray:
    """``lam -> 0`` limit of the ``+weight`` eigenline of a residue with coefficients (K, 2, 2).

    The first coefficient multiplies ``lam^{-1}``; when it is nonzero the limit
    is its kernel, otherwise the eigenline of the constant coefficient.
    """
    N, A0 = residue[0], residue[1]
    if np.abs(N).max() > 1e-12 * max(1.0, np.abs(A0).max()):
        _, _, vh = np.linalg.svd(N)
        return np.conj(vh[-1])
    _, _, vh = np.linalg.svd(A0 - weight * np.eye(2))
    return np.conj(vh[-1])


def sym_bobenko(z: np.ndarray, frames: np.ndarray, grid: CircleGrid, p: complex, weight: float,
                line: np.ndarray, N: int | None = None) -> HarmonicMapReport:
    """Harmonic map and metric diagnostics from frame samples ``frames`` (S, M, 2, 2).

    Each frame is factored ``Psi = B F`` (Iwasawa); ``f = F(1)^H F(1)`` and the
    metric ``h = (B(0) B(0)^H)^{-1}`` is compared with ``diag(r^{2w}, r^{-2w})``,
    ``r = |z - p|``, in the unitary frame adapted to ``line``.
    """
    from .loops import fit_from_samples
    N = N if N is not None else grid.M // 2 - 2
    U = line_frame(line)
    fs, hs, ds, dfs, fails, tails = [], [], [], [], [], []
    for zk, Psi in zip(z, frames):
        fit = fit_from_samples(Psi, -N, N)
        tails.append(fit.tail)
        try:
            fac = iwasawa(fit.loop.with_kind("group"), N=N)
        except BigCellError:
            fails.append(complex(zk))
            warnings.warn(f"Iwasawa factorization failed at z={zk:.6g}", BigCellWarning, stacklevel=2)
            nan = np.full((2, 2), np.nan)
            fs.append(nan), hs.append(nan), ds.append(np.nan), dfs.append(np.nan)
            continue
        F1 = fac.u(np.array([1.0]))[0]
        f = F1.conj().T @ F1
        B0 = fac.p.coeff(0)
        h = U.conj().T @ np.linalg.inv(B0 @ B0.conj().T) @ U
        r = abs(zk - p)
        model = np.diag([r ** (2 * weight), r ** (-2 * weight)])
        fs.append(f)
        hs.append(h)
        ds.append(float(hyperbolic_distance(h, model)))
        dfs.append(float(hyperbolic_distance(np.eye(2), f)))
    fs, hs = np.array(fs), np.array(hs)
    ok = ~np.isnan(np.array(ds))
    herm = float(np.abs(fs[ok] - np.conj(np.swapaxes(fs[ok], -1, -2))).max()) if ok.any() else np.nan
    detd = float(np.abs(np.linalg.det(fs[ok]) - 1).max()) if ok.any() else np.nan
    sup = float(np.nanmax(ds)) if ok.any() else np.nan
    return HarmonicMapReport(np.asarray(z), fs, hs, np.array(ds), np.array(dfs), sup, herm, detd,
                             float(max(tails)), tuple(fails))


def ray_points(p: complex, q: complex, radii: Sequence[float]) -> np.ndarray:
    """Points at distance ``radii`` from ``p`` towards ``q``, farthest first."""
    u = (q - p) / abs(q - p)
    return np.array([p + r * u for r in sorted(radii, reverse=True)])


def harmonic_map(problem: TwistorProblem, state: MonodromySolverState, j: int,
                 radii: Sequence[float], grid: CircleGrid | None = None,
                 N: int | None = None) -> HarmonicMapReport:
    """Harmonic map along the ray from the base point into ``p_j``.

    The frame of ``d + t sum Ahat dz/(z - p)`` (identity at the base point) is
    transported to each sample, factored, and compared with the model metric
    of weight ``t alpha_j`` in a frame adapted to the parabolic line at ``p_j``.
    """
    from .fuchsian import SegmentPath, transport_values
    t = state.t
    grid = grid or CircleGrid(64)
    C = problem.residue_coeffs(state.x)
    R = t * problem._eval_coeffs(C, grid.nodes)
    p = complex(problem.punctures[j])
    q = complex(problem.paths[j].q)
    if max(radii) >= abs(q - p):
        raise ValueError("sample radii must be smaller than the distance to the base point")
    z = ray_points(p, q, radii)
    frames, prev, Psi = [], q, None
    for zk in z:
        Psi = transport_values(R, problem.punctures, SegmentPath(prev, zk), problem.settings.ode_tol,
                               start=Psi).frame
        frames.append(Psi)
        prev = zk
    return sym_bobenko(z, np.array(frames), grid, p, t * problem.alpha[j],
                       parabolic_line(C[j], problem.alpha[j]), N)


def model_harmonic_map(alpha: float, beta: complex, radii: Sequence[float],
                       grid: CircleGrid | None = None, N: int | None = None) -> HarmonicMapReport:
    """Single puncture at 0 with residue ``-i X`` for the unitary model loop ``X``.

    The frame ``Psi(z) = exp(-A log z)`` is normalised at ``z = 1`` and sampled
    along the positive real axis.
    """
    from .loops import model_residue
    grid = grid or CircleGrid(64)
    X = model_residue(alpha, beta)
    A = -1j * X(grid.nodes)
    z = ray_points(0.0, 1.0, radii)
    frames = np.array([np.stack([scipy.linalg.expm(-a * np.log(zk)) for a in A]) for zk in z])
    return sym_bobenko(z, frames, grid, 0.0, alpha, parabolic_line(-1j * X.padded(-1, 1).coeffs, alpha), N)
