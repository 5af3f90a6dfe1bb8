"""Kahler forms along a family of twistor lines and their semiclassical limit.

Tangent vectors of the moduli space are realised as central differences of
the solved residues ``Ahat_j(t)`` between runs for ``cfg +- h X``.  The
residue pairing of two such variations is a Laurent polynomial of degree
``[-1, 1]`` in ``lam`` whose coefficients carry ``(omega_I, omega_J, omega_K)``;
dividing by ``t`` is automatic because the unscaled residues are paired.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fuchsian import FormValues, energy_residue, forms_from_coeffs, twisted_pairing
from .hyperpolygon import (HyperpolygonConfig, _to_complex, complex_level_config, energy_hp,
                           horizontal_basis, kempf_ness, moment_maps, project_complex_level,
                           quotient_metric, residue_values)
from .loops import CircleGrid, LaurentLoop
from .twistor import ContinuationRun, SolverError, TwistorProblem, continuation

FORM_NAMES = ("omega_I", "omega_J", "omega_K")


class GaugeDriftError(RuntimeError):
    """Finite-difference variations violate the tangency constraints."""


class FitError(ValueError):
    """Too few points for a fit or an extrapolation."""


class WindowCollapseWarning(UserWarning):
    """A pairing has Laurent mass outside degrees -1..1."""


class RegimeWarning(UserWarning):
    """Successive extrapolants do not contract."""


# ---------------------------------------------------------------------------
# tangent directions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TangentDirection:
    delta: HyperpolygonConfig
    label: str = ""

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.delta.v) or np.any(self.delta.w))


def complex_moment_derivative(cfg: HyperpolygonConfig, X: HyperpolygonConfig) -> float:
    """First-order change of ``(mu_C, nu_C)`` along ``X`` (exact: the maps are quadratic)."""
    def values(c):
        m = moment_maps(c)
        return np.concatenate([m.mu_C.ravel(), m.nu_C.ravel()])
    d = (values(cfg + X) - values(cfg + X.scaled(-1))) / 2
    return float(np.abs(d).max())


def tangent_directions(cfg: HyperpolygonConfig, k: int = 2, tol: float = 1e-9) -> list[TangentDirection]:
    """The first ``k`` vectors of the orthonormal horizontal basis at ``cfg``."""
    B = horizontal_basis(cfg)
    if k > len(B):
        raise ValueError(f"only {len(B)} horizontal directions available")
    out = []
    for i in range(k):
        X = HyperpolygonConfig.from_flat(_to_complex(B[i]))
        if complex_moment_derivative(cfg, X) > tol:
            raise GaugeDriftError(f"direction {i} leaves the complex level set")
        out.append(TangentDirection(X, f"e{i}"))
    return out


def perturbed_config(cfg: HyperpolygonConfig, alpha: Sequence[float], direction: TangentDirection,
                     h: float) -> HyperpolygonConfig:
    """``cfg + h X`` pushed back onto the level set (complex projection, then Kempf-Ness)."""
    c = cfg + direction.delta.scaled(h)
    c = project_complex_level(c)
    return kempf_ness(c, alpha).cfg


# ---------------------------------------------------------------------------
# calibration of the pairing against the flat model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairingCalibration:
    """Constants with ``c_{-1} = k_{-1} Omega`` and ``c_0 = -2 k_0 omega_I``.

    The degree-one constant is ``-conj(k_{-1})``.
    """

    kappa_m1: complex
    kappa_0: complex
    spread: float = 0.0
    samples: int = 0

    @property
    def kappa_1(self) -> complex:
        return -np.conj(self.kappa_m1)

    def forms(self, coeffs: dict) -> FormValues:
        return forms_from_coeffs(coeffs[-1], coeffs[0], coeffs[1], self.kappa_m1, self.kappa_0)


def exact_residue_variation(cfg: HyperpolygonConfig, X: HyperpolygonConfig, lam: np.ndarray) -> np.ndarray:
    """Derivative of the level-set residues along ``X`` (central difference, exact for quadratics)."""
    return (residue_values(cfg + X, lam) - residue_values(cfg + X.scaled(-1), lam)) / 2


def calibrate_pairing(alpha: Sequence[float] | None = None, n_points: int = 6, seed: int = 0,
                      grid: CircleGrid | None = None) -> PairingCalibration:
    """Fit the pairing constants at ``t = 0`` over random level-set points.

    At ``t = 0`` the residues are the hyperpolygon loops themselves, so the
    pairing of exact variations can be compared with the flat forms of
    the same horizontal vectors.  ``spread`` is the largest relative misfit
    of a single sample against the common constants.
    """
    alpha = np.array([0.10, 0.11, 0.12, 0.14]) if alpha is None else np.asarray(alpha, float)
    n = len(alpha)
    grid = grid or CircleGrid(16)
    rng = np.random.default_rng(seed)
    rows_m1, rows_0 = [], []
    while len(rows_m1) < n_points:
        v = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
        cfg = kempf_ness(complex_level_config(v, 0.3 + 0.2 * rng.random()), alpha).cfg
        B = horizontal_basis(cfg)
        a, b = rng.normal(size=(2, len(B))) @ B
        X = HyperpolygonConfig.from_flat(_to_complex(a))
        Y = HyperpolygonConfig.from_flat(_to_complex(b))
        A = residue_values(cfg, grid.nodes)
        tp = twisted_pairing(A, exact_residue_variation(cfg, X, grid.nodes),
                             exact_residue_variation(cfg, Y, grid.nodes), grid)
        ref = quotient_metric(cfg, X, Y)
        rows_m1.append((tp.coeffs[-1], ref["omega_J"] + 1j * ref["omega_K"]))
        rows_0.append((tp.coeffs[0], -2 * ref["omega_I"]))

    def fit(rows):
        c = np.array([r[0] for r in rows])
        f = np.array([r[1] for r in rows])
        k = np.vdot(f, c) / np.vdot(f, f)
        return k, float(np.max(np.abs(c - k * f) / np.abs(f)))

    k_m1, s_m1 = fit(rows_m1)
    k_0, s_0 = fit(rows_0)
    return PairingCalibration(complex(k_m1), complex(k_0), max(s_m1, s_0), n_points)


# ---------------------------------------------------------------------------
# variations along the family
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FamilyVariation:
    t: np.ndarray
    A: np.ndarray                 # (T, n, M, 2, 2) solved residues of the base run
    X: np.ndarray                 # (T, n, M, 2, 2) central-difference variations
    sum_defect: np.ndarray        # (T,) sup |sum_j X_j|
    trace_defect: np.ndarray      # (T,) sup |tr(A_j X_j)|
    h: float
    direction: TangentDirection | None = None
    A0: np.ndarray | None = None  # (n, M, 2, 2) residues at t = 0
    X0: np.ndarray | None = None  # (n, M, 2, 2) same difference stencil at t = 0


def run_samples(run: ContinuationRun, grid: CircleGrid | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(t, Ahat)`` for the converged positive ``t`` of a run; Ahat has shape (T, n, M, 2, 2)."""
    pr = run.problem
    states = [s for s in run.states if s.t > 0]
    return (np.array([s.t for s in states]),
            np.array([pr.residue_samples(s.x, grid) for s in states]))


def perturbed_runs(run: ContinuationRun, direction: TangentDirection, h: float) -> tuple:
    """Continuations for ``cfg +- h X`` on the converged ``t`` values of ``run``."""
    pr = run.problem
    ts = [s.t for s in run.states if s.t > 0]
    out = []
    for sgn in (1, -1):
        c = perturbed_config(pr.cfg, pr.alpha, direction, sgn * h)
        p2 = TwistorProblem(c, pr.alpha, pr.punctures, pr.settings, pr.radii)
        r2 = continuation(p2, ts)
        if len(r2.states) != len(ts):
            raise SolverError(f"perturbed run stopped at t={r2.failed_at}")
        out.append(r2)
    return tuple(out)


def family_variation(run: ContinuationRun, direction: TangentDirection, h: float = 1e-4,
                     tol: float = 1e-8, runs: tuple | None = None,
                     grid: CircleGrid | None = None) -> FamilyVariation:
    """Per-``t`` residue variations ``(Ahat(cfg + hX) - Ahat(cfg - hX)) / 2h``."""
    grid = grid or run.problem.settings.grid()
    t, A = run_samples(run, grid)
    pr = run.problem
    A0 = pr.residue_samples(pr.zero(), grid)
    if direction.is_zero:
        X = np.zeros_like(A)
        X0 = np.zeros_like(A0)
    else:
        plus, minus = runs if runs is not None else perturbed_runs(run, direction, h)
        _, Ap = run_samples(plus, grid)
        _, Am = run_samples(minus, grid)
        X = (Ap - Am) / (2 * h)
        X0 = (plus.problem.residue_samples(pr.zero(), grid)
              - minus.problem.residue_samples(pr.zero(), grid)) / (2 * h)
    sum_def = np.abs(X.sum(axis=1)).max(axis=(1, 2, 3)) if len(t) else np.zeros(0)
    tr_def = np.abs(np.einsum("tjmab,tjmba->tjm", A, X)).max(axis=(1, 2)) if len(t) else np.zeros(0)
    if np.any(sum_def > tol) or np.any(tr_def > tol):
        raise GaugeDriftError(f"variation defects: sum {sum_def.max():.2e}, trace {tr_def.max():.2e}")
    return FamilyVariation(t, A, X, sum_def, tr_def, h, direction, A0, X0)


def non_tangent_variation(A: np.ndarray, grid: CircleGrid, seed: int = 0, degree: int = 3,
                          scale: float = 1.0) -> np.ndarray:
    """Smooth random variation projected node by node onto ``sum X_j = 0``, ``tr(A_j X_j) = 0``.

    It satisfies the pointwise constraints but is not the variation of a
    family of twistor lines.
    """
    n, M = A.shape[:2]
    rng = np.random.default_rng(seed)
    ks = np.arange(-degree, degree + 1)
    c = (rng.normal(size=(n, len(ks), 3)) + 1j * rng.normal(size=(n, len(ks), 3)))
    c *= scale * np.exp(-np.abs(ks))[None, :, None]
    vals = np.einsum("jke,km->jme", c, grid.nodes[None, :] ** ks[:, None])     # (n, M, 3)
    X = np.zeros((n, M, 2, 2), complex)
    for m in range(M):
        # linear constraints on the 3n coordinates (a, b, c) of traceless X_j
        rows = []
        for e in range(3):
            r = np.zeros(3 * n, complex)
            r[e::3] = 1.0
            rows.append(r)
        for j in range(n):
            r = np.zeros(3 * n, complex)
            Aj = A[j, m]
            r[3 * j:3 * j + 3] = [2 * Aj[0, 0], Aj[1, 0], Aj[0, 1]]
            rows.append(r)
        C = np.array(rows)
        z = vals[:, m].ravel()
        z = z - np.linalg.pinv(C) @ (C @ z)
        z = z.reshape(n, 3)
        X[:, m, 0, 0], X[:, m, 0, 1], X[:, m, 1, 0], X[:, m, 1, 1] = z[:, 0], z[:, 1], z[:, 2], -z[:, 0]
    return X


# ---------------------------------------------------------------------------
# forms on a basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FormsAtT:
    t: np.ndarray
    forms: np.ndarray             # (T, 3, k, k) rescaled omega_I, omega_J, omega_K
    tails: np.ndarray             # (T, k, k) Laurent mass outside [-1, 1]
    reality: np.ndarray           # (T,) largest reality defect of the coefficients
    flagged: list                 # (t, i, j) of pairs whose tail exceeds collapse_tol
    forms0: np.ndarray | None = None   # (3, k, k) forms of the t = 0 difference stencil


def forms_at_t(variations: Sequence[FamilyVariation], calibration: PairingCalibration,
               grid: CircleGrid, collapse_tol: float = 1e-8) -> FormsAtT:
    """Antisymmetric form matrices of the directions at every ``t``."""
    k = len(variations)
    if k < 2:
        raise ValueError("need at least two directions")
    t = variations[0].t
    for v in variations[1:]:
        if v.t.shape != t.shape or np.any(v.t != t):
            raise ValueError("variations are on different t lists")
    A = variations[0].A
    T = len(t)
    forms0 = None
    if all(v.X0 is not None for v in variations):
        forms0 = np.zeros((3, k, k))
        for a in range(k):
            for b in range(a + 1, k):
                tp = twisted_pairing(variations[0].A0, variations[a].X0, variations[b].X0, grid)
                fv = calibration.forms(tp.coeffs)
                vals = np.array([fv.omega_I, fv.omega_J, fv.omega_K])
                forms0[:, a, b], forms0[:, b, a] = vals, -vals
    forms = np.zeros((T, 3, k, k))
    tails = np.zeros((T, k, k))
    reality = np.zeros(T)
    flagged = []
    for s in range(T):
        for a in range(k):
            for b in range(a + 1, k):
                tp = twisted_pairing(A[s], variations[a].X[s], variations[b].X[s], grid, collapse_tol)
                fv = calibration.forms(tp.coeffs)
                vals = np.array([fv.omega_I, fv.omega_J, fv.omega_K])
                forms[s, :, a, b], forms[s, :, b, a] = vals, -vals
                tails[s, a, b] = tails[s, b, a] = tp.tail
                reality[s] = max(reality[s], fv.reality)
                if not tp.collapsed:
                    flagged.append((float(t[s]), a, b))
    if flagged:
        warnings.warn(f"{len(flagged)} pairings did not collapse to degrees -1..1 "
                      f"(max tail {tails.max():.2e})", WindowCollapseWarning, stacklevel=2)
    return FormsAtT(t, forms, tails, reality, flagged, forms0)


def reference_forms(cfg: HyperpolygonConfig, directions: Sequence[TangentDirection]) -> np.ndarray:
    """Hyperpolygon quotient forms on the directions; shape (3, k, k)."""
    k = len(directions)
    out = np.zeros((3, k, k))
    for a in range(k):
        for b in range(a + 1, k):
            q = quotient_metric(cfg, directions[a].delta, directions[b].delta)
            vals = np.array([q[name] for name in FORM_NAMES])
            out[:, a, b], out[:, b, a] = vals, -vals
    return out


# ---------------------------------------------------------------------------
# fits, extrapolation and the first correction
# ---------------------------------------------------------------------------

def loglog_slope(t: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log t``."""
    t, y = np.asarray(t, float), np.asarray(y, float)
    if len(t) < 3:
        raise FitError("need at least three points for a slope")
    if np.any(y <= 0):
        raise FitError("log-log fit needs positive values")
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])


def extrapolate_to_zero(t: Sequence[float], values: np.ndarray, k: int) -> np.ndarray:
    """Value at ``t = 0`` of the degree ``k - 1`` interpolant through the ``k`` smallest ``t``."""
    t = np.asarray(t, float)
    if len(t) < k:
        raise FitError(f"need {k} points, have {len(t)}")
    idx = np.argsort(t)[:k]
    V = np.vander(t[idx], k, increasing=True)
    w = np.linalg.solve(V.T, np.eye(k)[0])
    return np.tensordot(w, np.asarray(values)[idx], axes=(0, 0))


@dataclass(frozen=True)
class ExpansionEstimate:
    g1: np.ndarray                # (3, k, k) first correction of the rescaled forms
    error: float                  # distance to the next extrapolant
    degree: int                   # polynomial degree of the chosen extrapolant
    differences: tuple            # successive extrapolant differences
    regime_ok: bool


def expansion_coeffs(t: Sequence[float], forms: np.ndarray, reference: np.ndarray,
                     max_degree: int = 6) -> ExpansionEstimate:
    """First correction ``g1`` in ``forms(t) = reference + t g1 + t^2 g2 + ...``.

    Richardson extrapolation of ``(forms(t) - reference) / t`` in least-squares
    form: for degree ``d = 1, 2, ...`` the data ``forms(t) - reference`` are
    fitted by ``sum_{k=1}^d g_k t^k`` over all ``t`` (exact interpolation when
    the number of points equals ``d``) and ``g_1`` is the extrapolant.  The
    estimate is the extrapolant whose distance to the next one is smallest;
    that distance is the error bar.  Fitting the forms rather than the
    quotient keeps roughly constant noise in the forms from being amplified
    by ``1/t``.  Passing the ``t = 0`` forms of the same difference stencil
    as ``reference`` cancels the stencil's constant offset.
    """
    t = np.asarray(t, float)
    if len(t) < 3:
        raise FitError("need at least three t values")
    F = np.asarray(forms) - reference[None]
    scale = t.max()
    dmax = max(2, min(max_degree, len(t) - 1))
    ext = []
    for d in range(1, dmax + 1):
        V = np.stack([(t / scale) ** k for k in range(1, d + 1)], 1)
        c, *_ = np.linalg.lstsq(V, F.reshape(len(t), -1), rcond=None)
        ext.append(c[0].reshape(F.shape[1:]) / scale)
    diffs = tuple(float(np.abs(b - a).max()) for a, b in zip(ext, ext[1:]))
    best = int(np.argmin(diffs))
    exact = diffs[0] <= 1e-12 * max(1.0, float(np.abs(ext[0]).max()))
    regime_ok = exact or (best > 0 and all(b < a for a, b in zip(diffs, diffs[1:best + 1])))
    if exact:
        best = 0
    if not regime_ok:
        warnings.warn("successive extrapolants do not contract", RegimeWarning, stacklevel=2)
    return ExpansionEstimate(ext[best], diffs[best], best + 1, diffs, regime_ok)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyCurve:
    t: np.ndarray
    ratio: np.ndarray             # epsilon_t / t
    imag: np.ndarray              # imaginary part of the summed residue energies
    energy_hp: float
    slope: float                  # log-log slope of |ratio - energy_hp|


def energy_curve(run: ContinuationRun) -> EnergyCurve:
    """Rescaled Hitchin energy ``epsilon_t / t = sum_j E(Ahat_j(t))`` along a run."""
    pr = run.problem
    ts, ratio, imag = [], [], []
    for st in run.states:
        if st.t <= 0:
            continue
        C = pr.residue_coeffs(st.x)
        e = sum(energy_residue(LaurentLoop(-1, C[j]), pr.alpha[j], real=False) for j in range(pr.n))
        ts.append(st.t)
        ratio.append(e.real)
        imag.append(e.imag)
    ts, ratio = np.array(ts), np.array(ratio)
    e0 = energy_hp(pr.cfg, pr.alpha)
    slope = loglog_slope(ts, np.abs(ratio - e0)) if len(ts) >= 3 else float("nan")
    return EnergyCurve(ts, ratio, np.array(imag), e0, slope)


# ---------------------------------------------------------------------------
# comparison report
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetricReport:
    t: np.ndarray
    forms: np.ndarray             # (T, 3, k, k)
    reference: np.ndarray         # (3, k, k)
    deviation: np.ndarray         # (T,) max over forms of the spectral norm of forms - reference
    slope: float
    monotone: bool
    extrapolated: np.ndarray      # (3, k, k) t -> 0 limit of the forms
    extrapolation_error: float
    tails: np.ndarray
    reality: np.ndarray
    expansion: ExpansionEstimate
    calibration: PairingCalibration
    energy: EnergyCurve | None = None
    antisymmetry: float = field(default=0.0)
    forms0: np.ndarray | None = None   # forms of the t = 0 difference stencil

    def csv_rows(self) -> list:
        rows = []
        k = self.reference.shape[-1]
        for s, t in enumerate(self.t):
            for f, name in enumerate(FORM_NAMES):
                for i in range(k):
                    for j in range(k):
                        val = self.forms[s, f, i, j]
                        rows.append((float(t), name, i, j, float(val),
                                     float(val - self.reference[f, i, j])))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "form_id", "i", "j", "value", "deviation"])
        for r in self.csv_rows():
            w.writerow([repr(r[0]), r[1], r[2], r[3], repr(r[4]), repr(r[5])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {
            "t": self.t.tolist(),
            "deviation": self.deviation.tolist(),
            "slope": self.slope,
            "monotone": self.monotone,
            "reference": {n: self.reference[f].tolist() for f, n in enumerate(FORM_NAMES)},
            "extrapolated": {n: self.extrapolated[f].tolist() for f, n in enumerate(FORM_NAMES)},
            "extrapolation_error": self.extrapolation_error,
            "max_tail": float(self.tails.max()) if self.tails.size else 0.0,
            "max_reality_defect": float(self.reality.max()) if self.reality.size else 0.0,
            "antisymmetry": self.antisymmetry,
            "g1": {n: self.expansion.g1[f].tolist() for f, n in enumerate(FORM_NAMES)},
            "g1_error": self.expansion.error,
            "g1_degree": self.expansion.degree,
            "g1_regime_ok": self.expansion.regime_ok,
            "calibration": {"kappa_m1": [self.calibration.kappa_m1.real, self.calibration.kappa_m1.imag],
                            "kappa_0": [self.calibration.kappa_0.real, self.calibration.kappa_0.imag],
                            "spread": self.calibration.spread},
        }
        if self.energy is not None:
            d["energy"] = {"t": self.energy.t.tolist(), "ratio": self.energy.ratio.tolist(),
                           "energy_hp": self.energy.energy_hp, "slope": self.energy.slope}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def compare(forms: FormsAtT, reference: np.ndarray, calibration: PairingCalibration,
            energy: EnergyCurve | None = None, n_extrapolate: int = 3) -> MetricReport:
    """Deviation of the rescaled forms from the hyperpolygon forms and its rate."""
    t = forms.t
    if len(t) < 3:
        raise FitError("need at least three t values")
    diff = forms.forms - reference[None]
    D = np.linalg.norm(diff, ord=2, axis=(-2, -1)).max(axis=1)
    order = np.argsort(t)
    monotone = bool(np.all(np.diff(D[order]) > 0))
    ext = extrapolate_to_zero(t, forms.forms, n_extrapolate)
    anchor = reference if forms.forms0 is None else forms.forms0
    anti = float(np.abs(forms.forms + np.swapaxes(forms.forms, -1, -2)).max())
    return MetricReport(t, forms.forms, reference, D, loglog_slope(t, D), monotone, ext,
                        float(np.abs(ext - reference).max()), forms.tails, forms.reality,
                        expansion_coeffs(t, forms.forms, anchor), calibration, energy, anti,
                        forms.forms0)


# ---------------------------------------------------------------------------
# complete study
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MetricStudy:
    run: ContinuationRun
    directions: list
    variations: list
    report: MetricReport


def metric_study(problem: TwistorProblem, t_list: Sequence[float], n_directions: int = 2,
                 h: float = 1e-4, calibration: PairingCalibration | None = None,
                 collapse_tol: float = 1e-8, run: ContinuationRun | None = None) -> MetricStudy:
    """Base and perturbed continuations, forms on ``n_directions`` and the comparison."""
    run = run or continuation(problem, t_list)
    if run.failed_at is not None:
        raise SolverError(f"base run stopped at t={run.failed_at}")
    cal = calibration or calibrate_pairing(problem.alpha)
    dirs = tangent_directions(problem.cfg, n_directions)
    grid = problem.settings.grid()
    var = [family_variation(run, d, h, grid=grid) for d in dirs]
    fat = forms_at_t(var, cal, grid, collapse_tol)
    ref = reference_forms(problem.cfg, dirs)
    report = compare(fat, ref, cal, energy_curve(run))
    return MetricStudy(run, dirs, var, report)
