"""Hyperpolygon data: moment maps, stability, Kempf-Ness, residue loops and flat forms.

A configuration is ``n`` legs ``(v_j, w_j)`` with ``v_j`` a column vector in
C^2 and ``w_j`` a row covector.  Conventions:

* ``mu_I = (|v|^2 - |w|^2)/2``, ``mu_C = i w(v)`` per leg (circle factors);
* ``nu_I = (i/2)(v v^H - w^H w)_0``, ``nu_C = -(v w)_0`` (SU(2) factor);
* the residue loop is ``lam^{-1} nu_C - 2i nu_I + lam ((v w)^H)_0``.

With these formulas a leg has ``det = -alpha^2`` exactly when
``mu_I = alpha``, so the real level used throughout is ``mu_I = alpha_j``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .loops import LaurentLoop

# Hermitian traceless basis, used for the SL(2,C)/SU(2) directions
SIGMA = np.array([[[1, 0], [0, -1]], [[0, 1], [1, 0]], [[0, -1j], [1j, 0]]], complex)


class ConstraintError(ValueError):
    """Configuration violates a moment-map or membership constraint."""


class KempfNessError(RuntimeError):
    """The real moment-map solve diverged (unstable or near-wall configuration)."""


class DegenerateError(RuntimeError):
    """The group action is not free at this point."""


@dataclass(frozen=True, eq=False)
class HyperpolygonConfig:
    """``n`` legs: ``v`` has shape (n, 2) (columns v_j), ``w`` has shape (n, 2) (rows w_j)."""

    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=complex)
        w = np.array(self.w, dtype=complex)
        if v.ndim != 2 or v.shape[1] != 2 or w.shape != v.shape:
            raise ConstraintError(f"legs must have shape (n, 2); got {v.shape}, {w.shape}")
        if v.shape[0] < 1 or not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ConstraintError("legs must be finite and non-empty")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def leg(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        return self.v[j], self.w[j]

    def act(self, g: np.ndarray, scalars: np.ndarray | None = None) -> "HyperpolygonConfig":
        """Left action ``(v_j, w_j) -> (c_j g v_j, c_j^{-1} w_j g^{-1})``."""
        g = np.asarray(g, complex)
        c = np.ones(self.n) if scalars is None else np.asarray(scalars, complex)
        return HyperpolygonConfig(c[:, None] * (self.v @ g.T),
                                  (self.w @ np.linalg.inv(g)) / c[:, None])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.v.ravel(), self.w.ravel()])

    @classmethod
    def from_flat(cls, z: np.ndarray) -> "HyperpolygonConfig":
        n = z.size // 4
        return cls(z[:2 * n].reshape(n, 2), z[2 * n:].reshape(n, 2))

    def __add__(self, other: "HyperpolygonConfig") -> "HyperpolygonConfig":
        return HyperpolygonConfig(self.v + other.v, self.w + other.w)

    def scaled(self, s: complex) -> "HyperpolygonConfig":
        return HyperpolygonConfig(s * self.v, s * self.w)

    def to_record(self) -> list:
        return [{"v": [[float(z.real), float(z.imag)] for z in vj],
                 "w": [[float(z.real), float(z.imag)] for z in wj]}
                for vj, wj in zip(self.v, self.w)]


def traceless(m: np.ndarray) -> np.ndarray:
    tr = np.trace(m, axis1=-2, axis2=-1)
    return m - tr[..., None, None] * np.eye(2) / 2


def outer(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``v (x) w`` for columns ``v`` and rows ``w``; vectorized over leading axes."""
    return v[..., :, None] * w[..., None, :]


class MomentValues(NamedTuple):
    mu_I: np.ndarray       # (n,)
    mu_C: np.ndarray       # (n,)
    nu_I: np.ndarray       # (2, 2) sum over legs, i * Hermitian traceless
    nu_C: np.ndarray       # (2, 2) sum over legs
    nu_I_legs: np.ndarray  # (n, 2, 2)
    nu_C_legs: np.ndarray  # (n, 2, 2)


def moment_maps(cfg: HyperpolygonConfig) -> MomentValues:
    v, w = cfg.v, cfg.w
    mu_I = 0.5 * ((np.abs(v) ** 2).sum(1) - (np.abs(w) ** 2).sum(1))
    mu_C = 1j * (w * v).sum(1)
    vvH = outer(v, v.conj())
    wHw = outer(w.conj(), w)
    nuI = 0.5j * traceless(vvH - wHw)
    nuC = -traceless(outer(v, w))
    return MomentValues(mu_I, mu_C, nuI.sum(0), nuC.sum(0), nuI, nuC)


# ---------------------------------------------------------------------------
# weights and stability
# ---------------------------------------------------------------------------

class WeightCheck(NamedTuple):
    generic: bool
    small: bool
    witness: tuple | None   # 0-based indices of a subset with eps_S = 0


MAX_ENUMERATION = 24


def _subsets(n: int, descending: bool = False):
    sizes = range(n, -1, -1) if descending else range(n + 1)
    for k in sizes:
        yield from itertools.combinations(range(n), k)


def epsilon(alpha: np.ndarray, S: Sequence[int]) -> float:
    mask = np.zeros(len(alpha), bool)
    mask[list(S)] = True
    return float(alpha[mask].sum() - alpha[~mask].sum())


def check_weights(alpha: Sequence[float], tol: float = 1e-12) -> WeightCheck:
    """Genericity (all ``eps_S != 0``) and smallness (``sum alpha < 1``)."""
    alpha = np.asarray(alpha, float)
    n = alpha.size
    if n > MAX_ENUMERATION:
        raise ValueError(f"refusing to enumerate 2^{n} subsets (n > {MAX_ENUMERATION})")
    if np.any(alpha <= 0) or np.any(alpha >= 0.5):
        raise ConstraintError("weights must lie in (0, 1/2)")
    witness = None
    for S in _subsets(n):
        if abs(epsilon(alpha, S)) <= tol:
            witness = S
            break
    return WeightCheck(witness is None, bool(alpha.sum() < 1), witness)


class StabilityCheck(NamedTuple):
    stable: bool
    witness: tuple | None


def is_straight(v: np.ndarray, S: Sequence[int], straight_tol: float = 1e-10) -> bool:
    for j, k in itertools.combinations(S, 2):
        d = abs(v[j, 0] * v[k, 1] - v[j, 1] * v[k, 0])
        if d > straight_tol * np.linalg.norm(v[j]) * np.linalg.norm(v[k]):
            return False
    return True


def check_stable(cfg: HyperpolygonConfig, alpha: Sequence[float], straight_tol: float = 1e-10,
                 zero_tol: float = 1e-12) -> StabilityCheck:
    """alpha-stability: all ``v_j != 0`` and every straight ``S`` with ``w = 0`` off ``S`` is short."""
    alpha = np.asarray(alpha, float)
    if cfg.n > MAX_ENUMERATION:
        raise ValueError(f"refusing to enumerate 2^{cfg.n} subsets")
    scale = max(1.0, float(np.abs(cfg.flat()).max()))
    vnorm = np.linalg.norm(cfg.v, axis=1)
    wnorm = np.linalg.norm(cfg.w, axis=1)
    for j in range(cfg.n):
        if vnorm[j] <= zero_tol * scale:
            return StabilityCheck(False, (j,))
    for S in _subsets(cfg.n, descending=True):
        if not S:
            continue
        off = [k for k in range(cfg.n) if k not in S]
        if any(wnorm[k] > zero_tol * scale for k in off):
            continue
        if is_straight(cfg.v, S, straight_tol) and epsilon(alpha, S) > 0:
            return StabilityCheck(False, S)
    return StabilityCheck(True, None)


# ---------------------------------------------------------------------------
# construction of points in the complex level set
# ---------------------------------------------------------------------------

def leg_from_xy(x: complex, y: complex, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Single leg ``v = a (x, y)``, ``w = (y, -x)`` on the level ``mu_I = alpha``, ``mu_C = 0``."""
    q = abs(x) ** 2 + abs(y) ** 2
    if q == 0:
        raise ConstraintError("(x, y) must be nonzero")
    a = np.sqrt((2 * alpha + q) / q)
    return a * np.array([x, y], complex), np.array([y, -x], complex)


def complex_level_config(v: np.ndarray, scale: float = 1.0) -> HyperpolygonConfig:
    """Choose ``w_j = c_j (v_j2, -v_j1)`` so that ``sum_j (v_j w_j)_0 = 0``.

    ``w_j(v_j) = 0`` holds by construction; the coefficients ``c`` span the
    null space of the linear map ``c -> sum_j c_j v_j (v_j2, -v_j1)``
    (one-dimensional for four generic legs), normalized to ``|c| = scale``.
    """
    v = np.asarray(v, complex)
    J = np.stack([v[:, 1], -v[:, 0]], 1)
    blocks = outer(v, J).reshape(len(v), 4).T
    _, s, vh = np.linalg.svd(blocks)
    c = vh[-1].conj()
    c = c / np.linalg.norm(c) * scale
    # fix the phase so that the first coefficient is real positive
    c = c * np.exp(-1j * np.angle(c[0]))
    return HyperpolygonConfig(v, c[:, None] * J)


def complex_defect(cfg: HyperpolygonConfig) -> float:
    m = moment_maps(cfg)
    return float(max(np.abs(m.mu_C).max(), np.abs(m.nu_C).max()))


def project_complex_level(cfg: HyperpolygonConfig, tol: float = 1e-14, max_iter: int = 50) -> HyperpolygonConfig:
    """Minimum-norm Gauss-Newton projection onto ``mu_C = 0``, ``nu_C = 0``."""
    z = cfg.flat()

    def F(z):
        m = moment_maps(HyperpolygonConfig.from_flat(z))
        return np.concatenate([m.mu_C, m.nu_C.ravel()[:3]])

    for _ in range(max_iter):
        r = F(z)
        if np.abs(r).max() < tol:
            break
        # holomorphic map: complex Jacobian by exact central differences (quadratic map)
        J = np.stack([(F(z + e) - F(z - e)) / 2 for e in np.eye(z.size)], 1)
        z = z - np.linalg.lstsq(J, r, rcond=None)[0]
    else:
        raise ConstraintError("projection onto the complex level set did not converge")
    return HyperpolygonConfig.from_flat(z)


# ---------------------------------------------------------------------------
# Kempf-Ness
# ---------------------------------------------------------------------------

class KempfNessResult(NamedTuple):
    cfg: HyperpolygonConfig
    g: np.ndarray            # SL(2,C) factor
    scalars: np.ndarray      # (C^*)^n factors
    residual: float
    iterations: int


def _real_residual(cfg: HyperpolygonConfig, level: np.ndarray) -> np.ndarray:
    v, w = cfg.v, cfg.w
    H = traceless(outer(v, v.conj()) - outer(w.conj(), w)).sum(0)
    hv = np.einsum("aij,ji->a", SIGMA, H).real / 2
    mu = 0.5 * ((np.abs(v) ** 2).sum(1) - (np.abs(w) ** 2).sum(1))
    return np.concatenate([hv, mu - level])


def _real_jacobian(cfg: HyperpolygonConfig) -> np.ndarray:
    """Derivative of the real residual along Hermitian directions ``(zeta, s)``."""
    v, w = cfg.v, cfg.w
    n = cfg.n
    S = (outer(v, v.conj()) + outer(w.conj(), w))      # (n,2,2)
    J = np.zeros((3 + n, 3 + n))
    for a in range(3):
        # d(v v^H - w^H w) along zeta = {zeta, v v^H + w^H w}
        D = SIGMA[a] @ S.sum(0) + S.sum(0) @ SIGMA[a]
        J[:3, a] = np.einsum("bij,ji->b", SIGMA, traceless(D)).real / 2
        J[3:, a] = np.einsum("ja,ab,jb->j", v.conj(), SIGMA[a], v).real + \
            np.einsum("ja,ab,jb->j", w, SIGMA[a], w.conj()).real
    for j in range(n):
        D = 2 * traceless(S[j])
        J[:3, 3 + j] = np.einsum("bij,ji->b", SIGMA, D).real / 2
        J[3 + j, 3 + j] = (np.abs(v[j]) ** 2).sum() + (np.abs(w[j]) ** 2).sum()
    return J


def kempf_ness(cfg: HyperpolygonConfig, alpha: Sequence[float], level: Sequence[float] | None = None,
               tol: float = 1e-13, max_iter: int = 100) -> KempfNessResult:
    """Move ``cfg`` inside its complexified orbit onto ``nu_I = 0``, ``mu_I = level``.

    Damped Newton over Hermitian directions of SL(2,C) x (C^*)^n; the
    complex moment maps are invariant under the action.  ``level`` defaults
    to ``alpha``.
    """
    alpha = np.asarray(alpha, float)
    level = alpha if level is None else np.asarray(level, float)
    g = np.eye(2, dtype=complex)
    c = np.ones(cfg.n, complex)
    cur = cfg
    r = _real_residual(cur, level)
    for it in range(max_iter):
        nr = np.linalg.norm(r)
        if np.abs(r).max() <= tol * max(1.0, level.max()):
            return KempfNessResult(cur, g, c, float(np.abs(r).max()), it)
        J = _real_jacobian(cur)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise KempfNessError("singular Kempf-Ness Jacobian (unstable or near-wall)") from exc
        tau = 1.0
        while tau > 1e-8:
            h = scipy.linalg.expm(np.einsum("a,aij->ij", tau * step[:3], SIGMA))
            e = np.exp(tau * step[3:])
            trial = cur.act(h, e)
            rt = _real_residual(trial, level)
            if np.linalg.norm(rt) < (1 - 1e-4 * tau) * nr or np.linalg.norm(rt) < 1e-15:
                break
            tau /= 2
        else:
            raise KempfNessError(f"line search failed at residual {nr:.3e} (unstable or near-wall)")
        cur, g, c, r = trial, h @ g, e * c, rt
    raise KempfNessError(f"Kempf-Ness did not converge (residual {np.abs(r).max():.3e})")


def torus_rescale(v: np.ndarray, w: np.ndarray, level: float) -> float:
    """Closed-form ``c`` with ``(|c v|^2 - |w/c|^2)/2 = level`` (``c > 0``)."""
    nv, nw = np.sum(np.abs(v) ** 2), np.sum(np.abs(w) ** 2)
    c2 = (level + np.sqrt(level ** 2 + nv * nw)) / nv
    return float(np.sqrt(c2))


def gauge_fix(cfg: HyperpolygonConfig) -> tuple[HyperpolygonConfig, np.ndarray, np.ndarray]:
    """Fix the compact group: ``v_1 = (r, 0)``, ``r > 0``; ``v_2`` with both entries real
    positive; first entry of every ``v_j`` real positive.  Returns ``(cfg, k, phases)``."""
    a, b = cfg.v[0]
    nv = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    if nv == 0:
        raise DegenerateError("v_1 vanishes")
    k = np.array([[np.conj(a), np.conj(b)], [-b, a]]) / nv
    v2 = k @ cfg.v[1]
    if min(abs(v2[0]), abs(v2[1])) < 1e-12 * np.linalg.norm(v2):
        raise DegenerateError("v_2 is aligned with a coordinate axis; gauge fixing degenerate")
    th = np.angle(v2[1] / v2[0]) / 2
    k = np.diag([np.exp(1j * th), np.exp(-1j * th)]) @ k
    v = cfg.v @ k.T
    first = v[:, 0]
    if np.any(np.abs(first) < 1e-12 * np.linalg.norm(v, axis=1)):
        raise DegenerateError("a leg has vanishing first component; gauge fixing degenerate")
    phases = np.exp(-1j * np.angle(first))
    return cfg.act(k, phases), k, phases


# ---------------------------------------------------------------------------
# residue loops and Higgs data
# ---------------------------------------------------------------------------

def residue_loop(v: np.ndarray, w: np.ndarray, alpha: float | None = None, tol: float = 1e-9) -> LaurentLoop:
    """``lam^{-1} nu_C - 2i nu_I + lam ((v w)^H)_0`` for one leg.

    With ``alpha`` given the leg must satisfy ``mu_I = alpha`` and ``w(v) = 0``.
    """
    v, w = np.asarray(v, complex), np.asarray(w, complex)
    if alpha is not None:
        scale = max(1.0, np.abs(v).max() ** 2, np.abs(w).max() ** 2)
        mu = 0.5 * (np.sum(np.abs(v) ** 2) - np.sum(np.abs(w) ** 2))
        if abs(mu - alpha) > tol * scale or abs(w @ v) > tol * scale:
            raise ConstraintError(f"leg is off the level set (mu_I - alpha = {mu - alpha:.3e}, "
                                  f"w(v) = {abs(w @ v):.3e})")
    vw = outer(v, w)
    c = np.array([-traceless(vw), traceless(outer(v, v.conj()) - outer(w.conj(), w)),
                  traceless(vw.conj().T)])
    return LaurentLoop(-1, c, "algebra")


def residue_loops(cfg: HyperpolygonConfig, alpha: Sequence[float] | None = None, tol: float = 1e-9):
    al = [None] * cfg.n if alpha is None else list(alpha)
    return [residue_loop(cfg.v[j], cfg.w[j], al[j], tol) for j in range(cfg.n)]


def residue_values(cfg: HyperpolygonConfig, lam: np.ndarray) -> np.ndarray:
    """Vectorized ``(n, M, 2, 2)`` samples of all residue loops."""
    v, w = cfg.v, cfg.w
    vw = outer(v, w)
    Am = -traceless(vw)
    A0 = traceless(outer(v, v.conj()) - outer(w.conj(), w))
    A1 = traceless(np.conj(np.swapaxes(vw, -1, -2)))
    lam = np.asarray(lam, complex)
    return (Am[:, None] / lam[None, :, None, None] + A0[:, None]
            + A1[:, None] * lam[None, :, None, None])


class GMHiggs(NamedTuple):
    residues: np.ndarray  # (n, 2, 2) = (v_j w_j)_0
    lines: np.ndarray     # (n, 2) unit spanning vectors of span(v_j)


def gm_higgs(cfg: HyperpolygonConfig) -> GMHiggs:
    res = traceless(outer(cfg.v, cfg.w))
    lines = cfg.v / np.linalg.norm(cfg.v, axis=1)[:, None]
    return GMHiggs(res, lines)


def assemble_connection(cfg: HyperpolygonConfig, alpha: Sequence[float], punctures, tol: float = 1e-10,
                        radii=None):
    """Fuchsian system ``sum_j A_j dz/(z - p_j)`` from level-set data; requires ``sum A_j = 0``."""
    from .fuchsian import make_system
    res = residue_loops(cfg, alpha)
    return make_system(punctures, res, radii=radii, sum_tol=tol)


def energy_hp(cfg: HyperpolygonConfig, alpha: Sequence[float]) -> float:
    """Total energy ``sum_j E(A_j)`` of the residue loops (equals ``sum |w_j|^2``)."""
    from .fuchsian import energy_residue
    return float(sum(energy_residue(A, a) for A, a in zip(residue_loops(cfg, alpha), alpha)))


# ---------------------------------------------------------------------------
# flat forms and the quotient metric
# ---------------------------------------------------------------------------

def _to_real(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag])


def _to_complex(x: np.ndarray) -> np.ndarray:
    m = x.size // 2
    return x[:m] + 1j * x[m:]


def flat_forms(X: HyperpolygonConfig, Y: HyperpolygonConfig) -> dict:
    """Flat metric and forms on ``V + V*``.

    ``g = Re <X, Y>`` and ``omega_I = -g(., I .) = -Im <X, Y>`` with
    ``<X, Y> = sum X conj(Y)``; ``Omega = omega_J + i omega_K = sum (dv_X dw_Y - dv_Y dw_X)``.
    """
    x, y = X.flat(), Y.flat()
    herm = np.sum(x * np.conj(y))
    Om = np.sum(X.v * Y.w) - np.sum(Y.v * X.w)
    return {"g": float(herm.real), "omega_I": float(-herm.imag),
            "omega_J": float(Om.real), "omega_K": float(Om.imag)}


def moment_differentials(cfg: HyperpolygonConfig) -> np.ndarray:
    """Real Jacobian (rows) of all moment maps w.r.t. the real coordinates of ``cfg.flat()``."""
    z0 = cfg.flat()

    def F(z):
        m = moment_maps(HyperpolygonConfig.from_flat(z))
        nuI = m.nu_I / 1j
        return np.concatenate([m.mu_I, m.mu_C.real, m.mu_C.imag,
                               np.einsum("aij,ji->a", SIGMA, nuI).real,
                               m.nu_C.ravel()[:3].real, m.nu_C.ravel()[:3].imag])

    cols = []
    for e in np.eye(2 * z0.size):
        dz = _to_complex(e)
        cols.append((F(z0 + dz) - F(z0 - dz)) / 2)    # exact: maps are quadratic
    return np.array(cols).T


def orbit_tangents(cfg: HyperpolygonConfig) -> np.ndarray:
    """Real tangent vectors (rows) of the compact SU(2) x U(1)^n orbit."""
    vecs = []
    for a in range(3):
        xi = 1j * SIGMA[a]
        vecs.append(_to_real(HyperpolygonConfig(cfg.v @ xi.T, -cfg.w @ xi).flat()))
    for j in range(cfg.n):
        dv = np.zeros_like(cfg.v)
        dw = np.zeros_like(cfg.w)
        dv[j], dw[j] = 1j * cfg.v[j], -1j * cfg.w[j]
        vecs.append(_to_real(HyperpolygonConfig(dv, dw).flat()))
    return np.array(vecs)


def horizontal_basis(cfg: HyperpolygonConfig, rank_tol: float = 1e-9) -> np.ndarray:
    """Orthonormal real basis (rows) of the horizontal space at a level-set point."""
    D = moment_differentials(cfg)
    T = orbit_tangents(cfg)
    C = np.vstack([D, T])
    _, s, vh = np.linalg.svd(C)
    dim = 8 * cfg.n
    expected = 4 * cfg.n - 12
    rank = int(np.sum(s > rank_tol * s[0]))
    if dim - rank != expected:
        raise DegenerateError(f"horizontal space has dimension {dim - rank}, expected {expected}")
    return vh[rank:]


def horizontal_project(cfg: HyperpolygonConfig, X: HyperpolygonConfig) -> HyperpolygonConfig:
    B = horizontal_basis(cfg)
    x = _to_real(X.flat())
    return HyperpolygonConfig.from_flat(_to_complex(B.T @ (B @ x)))


def quotient_metric(cfg: HyperpolygonConfig, X: HyperpolygonConfig, Y: HyperpolygonConfig,
                    tol: float = 1e-9) -> dict:
    """Metric and Kahler forms of the quotient on the horizontal projections of ``X, Y``."""
    m = moment_maps(cfg)
    if max(np.abs(m.mu_C).max(), np.abs(m.nu_C).max(), np.abs(m.nu_I).max()) > tol:
        raise ConstraintError("configuration is not on the zero level of nu_I, mu_C, nu_C")
    return flat_forms(horizontal_project(cfg, X), horizontal_project(cfg, Y))


def benchmark_alpha() -> np.ndarray:
    return np.array([0.10, 0.11, 0.12, 0.14])


def benchmark_punctures() -> np.ndarray:
    return np.array([0.0, 1.0, 2.0, 3.0], complex)


def benchmark_config(w_scale: float = 0.3) -> HyperpolygonConfig:
    """Moment-solved stable ``n = 4`` configuration used for the benchmark runs."""
    v = np.array([[1.0, 0.0], [0.6, 0.8], [0.3 - 0.5j, 0.9], [0.8j, 0.5 + 0.3j]])
    alpha = benchmark_alpha()
    cfg = complex_level_config(v, w_scale)
    kn = kempf_ness(cfg, alpha)
    return gauge_fix(kn.cfg)[0]
