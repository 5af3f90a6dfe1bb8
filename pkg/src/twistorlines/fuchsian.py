"""Loop-valued Fuchsian systems ``d + sum_j A_j(lam) dz/(z - p_j)`` on the sphere.

Everything is computed per node of a :class:`~twistorlines.loops.CircleGrid`:
the parallel frame ``dPsi + xi Psi = 0`` is integrated for all nodes at once
as one vectorized complex ODE, and loops are refitted only at the end.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .loops import CircleGrid, LaurentLoop, fit_from_samples, unitarity_defect_values


class PathError(ValueError):
    """A loop path comes too close to a puncture or the ODE step size collapsed."""


class OrderingError(RuntimeError):
    """The composite monodromy relation fails for the chosen loop ordering."""


class ResidueError(ValueError):
    """Residue data violate a structural requirement (sum, trace, determinant)."""


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoopPath:
    """Segment from ``q`` to the circle ``|z - p| = r``, one positive turn, segment back."""

    q: complex
    p: complex
    r: float

    @property
    def entry(self) -> complex:
        u = (self.q - self.p) / abs(self.q - self.p)
        return self.p + self.r * u

    def pieces(self):
        """List of ``(s_end, z(s), dz/ds(s))`` with ``s`` starting at 0."""
        q, a = complex(self.q), complex(self.entry)
        th0 = np.angle(a - self.p)
        p, r = complex(self.p), float(self.r)
        out = [
            (1.0, lambda s: q + s * (a - q), lambda s: a - q),
            (2 * np.pi, lambda s: p + r * np.exp(1j * (th0 + s)),
             lambda s: 1j * r * np.exp(1j * (th0 + s))),
            (1.0, lambda s: a + s * (q - a), lambda s: q - a),
        ]
        return out

    def margin(self, others: Sequence[complex]) -> float:
        """Minimal distance from the path to the given points."""
        q, a = complex(self.q), complex(self.entry)
        best = np.inf
        for z in others:
            z = complex(z)
            if abs(z - self.p) <= self.r:
                return 0.0              # the loop would enclose z
            d = a - q
            s = np.clip(((z - q) * np.conj(d)).real / abs(d) ** 2, 0.0, 1.0)
            best = min(best, abs(q + s * d - z), abs(abs(z - self.p) - self.r))
        return float(best)


@dataclass(frozen=True)
class SegmentPath:
    """Straight segment from ``a`` to ``b``."""

    a: complex
    b: complex

    def pieces(self):
        a, b = complex(self.a), complex(self.b)
        return [(1.0, lambda s: a + s * (b - a), lambda s: b - a)]


def default_basepoint(punctures: Sequence[complex]) -> complex:
    p = np.asarray(punctures, complex)
    spread = float(np.abs(p - p.mean()).max())
    return complex(p.mean() - 1j * (spread + 1.0))


def default_radii(punctures: Sequence[complex]) -> np.ndarray:
    p = np.asarray(punctures, complex)
    d = np.abs(p[:, None] - p[None, :]) + np.diag(np.full(len(p), np.inf))
    return 0.25 * d.min(axis=1)


def default_paths(punctures: Sequence[complex], q: complex | None = None,
                  radii: Sequence[float] | None = None, r_min: float = 1e-3) -> list[LoopPath]:
    p = np.asarray(punctures, complex)
    q = default_basepoint(p) if q is None else complex(q)
    radii = default_radii(p) if radii is None else np.asarray(radii, float)
    paths = [LoopPath(q, complex(pj), float(rj)) for pj, rj in zip(p, radii)]
    for j, path in enumerate(paths):
        others = [p[k] for k in range(len(p)) if k != j]
        m = path.margin(others)
        if m < r_min or abs(q - p[j]) <= radii[j]:
            raise PathError(f"loop around puncture {j} passes within {m:.3g} of another puncture")
    return paths


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FuchsianLoopSystem:
    """Residues ``A_j`` (loops) at distinct punctures ``p_j``, basepoint and loop paths."""

    punctures: np.ndarray
    residues: tuple
    basepoint: complex = None
    paths: tuple = None
    regular_at_infinity: bool = field(default=False)

    def __post_init__(self):
        p = np.asarray(self.punctures, complex)
        if len(set(np.round(p, 14))) != len(p):
            raise ResidueError("punctures must be distinct")
        if len(self.residues) != len(p):
            raise ResidueError("one residue per puncture is required")
        object.__setattr__(self, "punctures", p)
        object.__setattr__(self, "residues", tuple(self.residues))
        if self.basepoint is None:
            object.__setattr__(self, "basepoint", default_basepoint(p))
        if self.paths is None:
            object.__setattr__(self, "paths", tuple(default_paths(p, self.basepoint)))
        for A in self.residues:
            _, tr = A.trace()
            if np.abs(tr).max() > 1e-10 * max(1.0, A.max_abs()):
                raise ResidueError("residues must be traceless")

    @property
    def n(self) -> int:
        return len(self.punctures)

    def residue_sum(self) -> LaurentLoop:
        total = LaurentLoop.zero()
        for A in self.residues:
            total = total + A
        return total

    def scaled(self, t: float) -> "FuchsianLoopSystem":
        return FuchsianLoopSystem(self.punctures, tuple(A * t for A in self.residues),
                                  self.basepoint, self.paths, self.regular_at_infinity)

    def residue_values(self, lam: np.ndarray) -> np.ndarray:
        return np.stack([A(lam) for A in self.residues])


def make_system(punctures, residues, basepoint=None, radii=None, sum_tol: float | None = 1e-10):
    """Build a system; with ``sum_tol`` set, require ``sum_j A_j = 0`` (no pole at infinity)."""
    p = np.asarray(punctures, complex)
    q = default_basepoint(p) if basepoint is None else complex(basepoint)
    paths = tuple(default_paths(p, q, radii))
    sysm = FuchsianLoopSystem(p, tuple(residues), q, paths)
    if sum_tol is not None:
        s = sysm.residue_sum().max_abs()
        if s > sum_tol:
            raise ResidueError(f"residues do not sum to zero (max coefficient {s:.3e})")
        object.__setattr__(sysm, "regular_at_infinity", True)
    return sysm


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------

def _kron_adj_T(Psi: np.ndarray) -> np.ndarray:
    """Per-node ``adj(Psi) kron Psi^T`` as (M, 4, 4); row-major vec convention."""
    adj = np.empty_like(Psi)
    adj[:, 0, 0], adj[:, 1, 1] = Psi[:, 1, 1], Psi[:, 0, 0]
    adj[:, 0, 1], adj[:, 1, 0] = -Psi[:, 0, 1], -Psi[:, 1, 0]
    K = np.einsum("mij,mlk->mikjl", adj, Psi)
    return K.reshape(-1, 4, 4)


class Transport(NamedTuple):
    frame: np.ndarray               # (M, 2, 2) terminal frame
    variation: np.ndarray | None    # (n, M, 4, 4) integrals of adj(Psi) kron Psi^T dz/(z-p_k)


def transport_values(residue_values: np.ndarray, punctures: np.ndarray, path: LoopPath | SegmentPath,
                     ode_tol: float = 1e-11, variations: bool = False,
                     start: np.ndarray | None = None) -> Transport:
    """Integrate ``dPsi/dz = -xi Psi`` along ``path`` for every grid node at once.

    ``residue_values`` has shape ``(n, M, 2, 2)``.  With ``variations`` the
    integrals ``W_k = int adj(Psi) (x) Psi^T dz/(z - p_k)`` are accumulated so
    that ``dM = -M mat(sum_k W_k vec(dA_k))`` for residue perturbations ``dA_k``.
    """
    R = np.asarray(residue_values, complex)
    n, M = R.shape[:2]
    p = np.asarray(punctures, complex)
    Psi0 = np.broadcast_to(np.eye(2), (M, 2, 2)) if start is None else start
    y = np.asarray(Psi0, complex).reshape(-1)
    if variations:
        y = np.concatenate([y, np.zeros(n * M * 16, complex)])
    for s_end, zf, dzf in path.pieces():
        def rhs(s, yy):
            z, dz = zf(s), dzf(s)
            w = dz / (z - p)
            Psi = yy[:4 * M].reshape(M, 2, 2)
            xi = np.tensordot(w, R, axes=(0, 0))
            out = -(xi @ Psi).reshape(-1)
            if variations:
                K = _kron_adj_T(Psi)
                out = np.concatenate([out, (w[:, None, None, None] * K[None]).reshape(-1)])
            return out
        sol = solve_ivp(rhs, (0.0, s_end), y, method="DOP853", rtol=ode_tol,
                        atol=ode_tol * 1e-2)
        if not sol.success:
            raise PathError(f"transport failed: {sol.message}")
        y = sol.y[:, -1]
    frame = y[:4 * M].reshape(M, 2, 2)
    var = y[4 * M:].reshape(n, M, 4, 4) if variations else None
    return Transport(frame, var)


def transport(system: FuchsianLoopSystem, path: LoopPath, grid: CircleGrid,
              ode_tol: float = 1e-11, window: int | None = None):
    """Terminal frame along ``path`` as a group loop (refit on ``grid``)."""
    vals = transport_values(system.residue_values(grid.nodes), system.punctures, path, ode_tol).frame
    h = window if window is not None else grid.M // 2 - 1
    return fit_from_samples(vals, -h, h).loop.with_kind("group")


@dataclass(frozen=True, eq=False)
class MonodromyData:
    """Monodromy samples ``M_j(lam_m)`` on a grid plus diagnostics."""

    grid: CircleGrid
    values: np.ndarray            # (n, M, 2, 2)
    order: tuple                  # composite product order (indices, first factor applied first)
    composite_defect: float
    condition: np.ndarray         # (n,) max per-node condition number
    variations: np.ndarray | None = None

    def loop(self, j: int, window: int | None = None) -> LaurentLoop:
        h = window if window is not None else self.grid.M // 2 - 1
        return fit_from_samples(self.values[j], -h, h).loop.with_kind("group")

    def unitarity(self) -> np.ndarray:
        return np.array([unitarity_defect_values(v, self.grid) for v in self.values])


def composite_order(system: FuchsianLoopSystem) -> tuple:
    """Order of the loops so that ``M_{o[-1]} ... M_{o[0]} = Id`` for ``sum A_j = 0``.

    Loops are sorted by increasing argument of ``p_j - q`` (basepoint below
    the punctures, so arguments lie in ``(0, pi)``).
    """
    ang = np.angle(system.punctures - system.basepoint)
    return tuple(int(i) for i in np.argsort(ang, kind="stable"))


def composite_product(values: np.ndarray, order: Sequence[int]) -> np.ndarray:
    out = np.broadcast_to(np.eye(2), values.shape[1:]).astype(complex)
    for j in order:
        out = values[j] @ out
    return out


def monodromies(system: FuchsianLoopSystem, grid: CircleGrid, ode_tol: float = 1e-11,
                variations: bool = False, check_composite: bool | None = None,
                residue_values: np.ndarray | None = None) -> MonodromyData:
    """Monodromy ``M_j`` along each loop ``gamma_j`` on every grid node."""
    R = system.residue_values(grid.nodes) if residue_values is None else residue_values
    vals, var = [], []
    for path in system.paths:
        tr = transport_values(R, system.punctures, path, ode_tol, variations)
        vals.append(tr.frame)
        var.append(tr.variation)
    vals = np.array(vals)
    order = composite_order(system)
    defect = float(np.abs(composite_product(vals, order) - np.eye(2)).max())
    cond = np.array([np.linalg.cond(v).max() for v in vals])
    check = system.regular_at_infinity if check_composite is None else check_composite
    if check and defect > 100 * max(ode_tol, 1e-13) * max(1.0, cond.max()):
        raise OrderingError(f"composite monodromy defect {defect:.3e} exceeds tolerance")
    return MonodromyData(grid, vals, order, defect, cond, np.array(var) if variations else None)


def unitarity_defect(M: LaurentLoop, grid: CircleGrid | None = None) -> float:
    """``sup_lam |conj(M(-1/conj lam))^T M(lam) - Id|`` on a circle grid."""
    grid = grid or CircleGrid.for_window(M.lo, M.hi, minimum=64)
    return unitarity_defect_values(M.on_grid(grid), grid)


# ---------------------------------------------------------------------------
# residue invariants and pairings
# ---------------------------------------------------------------------------

def energy_residue(A: LaurentLoop, alpha0: float, tol: float = 1e-8, res_tol: float = 1e-12,
                   real: bool = True):
    """Energy contribution ``E(A)`` of a residue with ``det A = -alpha0^2``.

    Uses the first of ``a_{-1}, b_{-1}, c_{-1}`` above ``res_tol`` (relative)
    and cross-checks every other admissible branch.  Single contributions of
    a twistor line need not be real (only their sum is); pass ``real=False``
    to get the complex value.
    """
    A = A.padded(-1, 0)
    if A.lo < -1:
        raise ResidueError("residue has poles of order > 1 in lam")
    Am, A0 = A.coeff(-1), A.coeff(0)
    a1, b1, c1 = Am[0, 0], Am[0, 1], Am[1, 0]
    a0, b0, c0 = A0[0, 0], A0[0, 1], A0[1, 0]
    scale = max(abs(a1), abs(b1), abs(c1))
    if scale <= res_tol * max(1.0, np.abs(A0).max()):
        return 0.0 if real else 0j
    branches = []
    if abs(a1) > res_tol * scale * 1e3:
        branches.append(-alpha0 + a0 + b0 * c1 / a1)
    if abs(b1) > res_tol * scale * 1e3:
        branches.append(-alpha0 + a0 - b0 * a1 / b1)
    if abs(c1) > res_tol * scale * 1e3:
        branches.append(-alpha0 - a0 + c0 * a1 / c1)
    # branches with small denominators amplify rounding; compare well-conditioned ones only
    dens = [abs(d) for d in (a1, b1, c1) if abs(d) > res_tol * scale * 1e3]
    good = [b for b, d in zip(branches, dens) if d > 1e-3 * scale]
    if max(abs(b - good[0]) for b in good) > tol * max(1.0, abs(good[0])):
        raise ResidueError(f"energy branches disagree: {good}")
    value = complex(branches[0])
    if not real:
        return value
    if abs(value.imag) > tol * max(1.0, abs(value)):
        raise ResidueError(f"energy is not real: {value}")
    return float(value.real)


def kks_pairing(residues: Sequence[np.ndarray], X: Sequence[np.ndarray], Y: Sequence[np.ndarray],
                tol: float = 1e-10) -> complex:
    """Residue pairing ``sum_j tr(A_j [X_j, Y_j]) / (8 tr A_j^2)`` for constant matrices."""
    A, X, Y = (np.asarray(a, complex) for a in (residues, X, Y))
    for name, V in (("X", X), ("Y", Y)):
        if np.abs(V.sum(axis=0)).max() > tol:
            raise ResidueError(f"variations {name} do not sum to zero")
        if np.abs(np.einsum("jab,jba->j", A, V)).max() > tol:
            raise ResidueError(f"variations {name} are not tangent to the residue orbits")
    trA2 = np.einsum("jab,jba->j", A, A)
    if np.abs(trA2).min() <= tol:
        raise ResidueError("nilpotent residue: singular orbit")
    comm = X @ Y - Y @ X
    return complex((np.einsum("jab,jba->j", A, comm) / (8 * trA2)).sum())


class TwistedPairing(NamedTuple):
    coeffs: dict          # degree -> complex coefficient of S(lam)
    tail: float           # ell^1 mass of S outside degrees [-1, 1]
    collapsed: bool


def pairing_samples(A: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Per-node residue pairing; arrays have shape ``(n, M, 2, 2)``."""
    trA2 = np.einsum("jmab,jmba->jm", A, A)
    comm = X @ Y - Y @ X
    return (np.einsum("jmab,jmba->jm", A, comm) / (8 * trA2)).sum(axis=0)


def twisted_pairing(A: np.ndarray, X: np.ndarray, Y: np.ndarray, grid: CircleGrid,
                    collapse_tol: float = 1e-8, window: int = 4) -> TwistedPairing:
    """Laurent expansion of the per-node pairing on ``grid``.

    For variations tangent to a twistor line the pairing is a section of
    ``O(2)`` and only degrees ``-1, 0, 1`` survive; the tail is the mass
    outside that window.
    """
    S = pairing_samples(A, X, Y)
    fc = np.fft.fft(S) / grid.M
    ks = np.fft.fftfreq(grid.M, 1.0 / grid.M).astype(int)
    coeffs = {int(k): complex(fc[k % grid.M]) for k in range(-window, window + 1)}
    tail = float(np.abs(fc[np.abs(ks) > 1]).sum())
    return TwistedPairing(coeffs, tail, tail <= collapse_tol)


class FormValues(NamedTuple):
    omega_I: float
    omega_J: float
    omega_K: float
    reality: float        # size of the part violating c_1 = -conj(c_{-1}) and c_0 real


def forms_from_coeffs(cm1: complex, c0: complex, c1: complex, kappa_m1: complex = 1.0,
                      kappa_0: complex = 1.0) -> FormValues:
    """Read off real forms from ``(c_{-1}, c_0, c_1) = (k_{-1} Omega, -2 k_0 w_I, -k_1 conj(Omega))``.

    ``Omega = w_J + i w_K`` and ``k_1 = -conj(k_{-1})``.  With unit constants this
    is the plain ``lam^{-1}(w_J + i w_K) - 2 w_I + lam (w_J - i w_K)`` expansion.
    """
    kappa_1 = -np.conj(kappa_m1)
    a, b, c = cm1 / kappa_m1, c0 / kappa_0, c1 / kappa_1
    Om = 0.5 * (a - np.conj(c))
    reality = max(abs(a + np.conj(c)) / 2, abs(b.imag) / 2)
    return FormValues(float(-b.real / 2), float(Om.real), float(Om.imag), float(reality))
