"""Truncated Laurent loops with 2x2 complex coefficients.

A loop ``a(lam) = sum_k a_k lam^k`` is stored as a contiguous coefficient
block over the degree window ``[lo, hi]``.  Algebraic operations are exact on
the coefficients; transcendental ones go through samples on the unit circle
and :func:`fit_from_samples`.

The reality involution on the loop algebra is

    a^*(lam) = -conj(a(-1/conj(lam)))^T,

whose coefficient form is ``(a^*)_k = -(-1)^k conj(a_{-k})^T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

KINDS = ("algebra", "group", "general")
PARTS = ("neg", "zero", "pos", "geq0", "geqm1")


class LoopError(ValueError):
    """Raised for invalid loop operations (domain or constraint violations)."""


class BigCellError(ArithmeticError):
    """Raised when an Iwasawa factorization does not exist numerically."""


@dataclass(frozen=True, eq=False)
class CircleGrid:
    """``M`` equispaced nodes ``exp(2 pi i m / M)`` on the unit circle."""

    M: int

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise LoopError(f"grid size must be even and >= 2, got {self.M}")

    @property
    def nodes(self) -> np.ndarray:
        return np.exp(2j * np.pi * np.arange(self.M) / self.M)

    def antipode(self) -> np.ndarray:
        """Index map m -> index of -lam_m (the antipodal node on S^1)."""
        return (np.arange(self.M) + self.M // 2) % self.M

    def supports(self, lo: int, hi: int) -> bool:
        return self.M >= 2 * (hi - lo) + 2

    @classmethod
    def for_window(cls, lo: int, hi: int, minimum: int = 8) -> "CircleGrid":
        M = max(minimum, 2 * (hi - lo) + 2)
        return cls(M + (M % 2))


@dataclass(frozen=True, eq=False)
class LaurentLoop:
    """2x2 matrix-valued Laurent polynomial in ``lam``.

    ``coeffs[i]`` is the coefficient of ``lam**(lo + i)``.
    """

    lo: int
    coeffs: np.ndarray
    kind: str = "general"
    _frozen: bool = field(default=True, repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 3 or c.shape[1:] != (2, 2) or c.shape[0] < 1:
            raise LoopError(f"coefficients must have shape (K, 2, 2), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise LoopError("loop coefficients must be finite")
        if self.kind not in KINDS:
            raise LoopError(f"unknown loop kind {self.kind!r}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "lo", int(self.lo))

    # construction -------------------------------------------------------
    @classmethod
    def zero(cls, lo: int = 0, hi: int = 0, kind: str = "general") -> "LaurentLoop":
        return cls(lo, np.zeros((hi - lo + 1, 2, 2), complex), kind)

    @classmethod
    def constant(cls, mat, kind: str = "general") -> "LaurentLoop":
        return cls(0, np.asarray(mat, complex)[None], kind)

    @classmethod
    def identity(cls) -> "LaurentLoop":
        return cls.constant(np.eye(2), kind="group")

    @classmethod
    def monomial(cls, mat, k: int, kind: str = "general") -> "LaurentLoop":
        return cls(k, np.asarray(mat, complex)[None], kind)

    @classmethod
    def from_dict(cls, mapping: dict[int, np.ndarray], kind: str = "general") -> "LaurentLoop":
        """Build from ``{degree: 2x2 matrix}``."""
        if not mapping:
            return cls.zero(kind=kind)
        lo, hi = min(mapping), max(mapping)
        c = np.zeros((hi - lo + 1, 2, 2), complex)
        for k, m in mapping.items():
            c[k - lo] = m
        return cls(lo, c, kind)

    # basic properties ---------------------------------------------------
    @property
    def hi(self) -> int:
        return self.lo + self.coeffs.shape[0] - 1

    @property
    def degrees(self) -> range:
        return range(self.lo, self.hi + 1)

    def coeff(self, k: int) -> np.ndarray:
        if self.lo <= k <= self.hi:
            return self.coeffs[k - self.lo]
        return np.zeros((2, 2), complex)

    def with_kind(self, kind: str) -> "LaurentLoop":
        return LaurentLoop(self.lo, self.coeffs, kind)

    def padded(self, lo: int, hi: int) -> "LaurentLoop":
        """Same loop on a window containing ``[lo, hi]``; never drops terms."""
        lo, hi = min(lo, self.lo), max(hi, self.hi)
        c = np.zeros((hi - lo + 1, 2, 2), complex)
        c[self.lo - lo:self.hi - lo + 1] = self.coeffs
        return LaurentLoop(lo, c, self.kind)

    def truncated(self, lo: int, hi: int) -> "LaurentLoop":
        """Drop all coefficients outside ``[lo, hi]``."""
        c = np.zeros((hi - lo + 1, 2, 2), complex)
        for k in range(max(lo, self.lo), min(hi, self.hi) + 1):
            c[k - lo] = self.coeffs[k - self.lo]
        return LaurentLoop(lo, c, self.kind)

    def trimmed(self, tol: float = 0.0) -> "LaurentLoop":
        """Remove leading/trailing coefficients with max-abs <= tol."""
        mags = np.abs(self.coeffs).max(axis=(1, 2))
        nz = np.nonzero(mags > tol)[0]
        if nz.size == 0:
            return LaurentLoop(0, np.zeros((1, 2, 2)), self.kind)
        return LaurentLoop(self.lo + nz[0], self.coeffs[nz[0]:nz[-1] + 1], self.kind)

    # evaluation -----------------------------------------------------------
    def __call__(self, lam) -> np.ndarray:
        return evaluate(self, lam)

    def on_grid(self, grid: CircleGrid) -> np.ndarray:
        return evaluate(self, grid.nodes)

    # arithmetic -----------------------------------------------------------
    def _combine(self, other: "LaurentLoop", sign: int) -> "LaurentLoop":
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        c = np.zeros((hi - lo + 1, 2, 2), complex)
        c[self.lo - lo:self.hi - lo + 1] += self.coeffs
        c[other.lo - lo:other.hi - lo + 1] += sign * other.coeffs
        kind = self.kind if self.kind == other.kind == "algebra" else "general"
        return LaurentLoop(lo, c, kind)

    def __add__(self, other):
        if not isinstance(other, LaurentLoop):
            return NotImplemented
        return self._combine(other, 1)

    def __sub__(self, other):
        if not isinstance(other, LaurentLoop):
            return NotImplemented
        return self._combine(other, -1)

    def __neg__(self):
        return LaurentLoop(self.lo, -self.coeffs, self.kind)

    def __mul__(self, scalar):
        if isinstance(scalar, LaurentLoop):
            return NotImplemented
        kind = self.kind if self.kind == "algebra" else "general"
        return LaurentLoop(self.lo, complex(scalar) * self.coeffs, kind)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / complex(scalar))

    def __matmul__(self, other):
        if isinstance(other, LaurentLoop):
            return multiply(self, other)
        other = np.asarray(other, complex)
        return LaurentLoop(self.lo, self.coeffs @ other, "general")

    def __rmatmul__(self, other):
        other = np.asarray(other, complex)
        return LaurentLoop(self.lo, other @ self.coeffs, "general")

    def shift(self, k: int) -> "LaurentLoop":
        """Multiply by ``lam**k``."""
        return LaurentLoop(self.lo + k, self.coeffs, self.kind)

    def conjugate_by(self, g) -> "LaurentLoop":
        """Constant conjugation ``g a g^{-1}``."""
        g = np.asarray(g, complex)
        return LaurentLoop(self.lo, g @ self.coeffs @ np.linalg.inv(g), self.kind)

    def trace(self) -> tuple[int, np.ndarray]:
        return self.lo, np.trace(self.coeffs, axis1=1, axis2=2)

    def max_abs(self) -> float:
        return float(np.abs(self.coeffs).max())

    # serialization --------------------------------------------------------
    def to_record(self) -> dict:
        flat = self.coeffs.reshape(-1, 4)
        return {
            "window_lo": self.lo,
            "window_hi": self.hi,
            "kind": self.kind,
            "coeffs": [[[float(z.real), float(z.imag)] for z in row] for row in flat],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LaurentLoop":
        lo, hi = int(rec["window_lo"]), int(rec["window_hi"])
        raw = np.asarray(rec["coeffs"], float)
        if raw.shape != (hi - lo + 1, 4, 2):
            raise LoopError(f"record coefficient block has shape {raw.shape}")
        c = (raw[..., 0] + 1j * raw[..., 1]).reshape(-1, 2, 2)
        return cls(lo, c, rec.get("kind", "general"))


def evaluate(a: LaurentLoop, lam) -> np.ndarray:
    """Evaluate ``sum_k a_k lam^k``; vectorized over ``lam``."""
    lam = np.asarray(lam, complex)
    if a.lo < 0 and np.any(lam == 0):
        raise LoopError("cannot evaluate a loop with negative degrees at lam = 0")
    flat = lam.reshape(-1)
    out = np.zeros((flat.size, 2, 2), complex)
    # Horner in lam on the shifted polynomial, then scale by lam^lo
    for c in a.coeffs[::-1]:
        out = out * flat[:, None, None] + c
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = flat ** a.lo if a.lo >= 0 else 1.0 / flat ** (-a.lo)
    out = out * np.asarray(scale)[..., None, None] if np.ndim(scale) else out * scale
    return out.reshape(lam.shape + (2, 2))


def multiply(a: LaurentLoop, b: LaurentLoop) -> LaurentLoop:
    """Exact Cauchy product; result window is ``[a.lo + b.lo, a.hi + b.hi]``."""
    na, nb = a.coeffs.shape[0], b.coeffs.shape[0]
    c = np.zeros((na + nb - 1, 2, 2), complex)
    for i in range(na):
        c[i:i + nb] += a.coeffs[i] @ b.coeffs
    kind = "group" if a.kind == b.kind == "group" else "general"
    return LaurentLoop(a.lo + b.lo, c, kind)


def commutator(a: LaurentLoop, b: LaurentLoop) -> LaurentLoop:
    out = multiply(a, b) - multiply(b, a)
    return out.with_kind("algebra")


def det_coeffs(a: LaurentLoop) -> tuple[int, np.ndarray]:
    """Coefficients of the scalar loop ``det a(lam)``; returns ``(lo, c)``."""
    c = a.coeffs
    p, q, r, s = c[:, 0, 0], c[:, 0, 1], c[:, 1, 0], c[:, 1, 1]
    return 2 * a.lo, np.convolve(p, s) - np.convolve(q, r)


def trace_product_coeffs(a: LaurentLoop, b: LaurentLoop) -> tuple[int, np.ndarray]:
    """Coefficients of the scalar loop ``tr(a b)``."""
    lo, c = multiply(a, b).trace()
    return lo, c


def _reflect_sign(lo: int, hi: int) -> np.ndarray:
    ks = np.arange(lo, hi + 1)
    return np.where(ks % 2 == 0, 1.0, -1.0)


def star(a: LaurentLoop, grid: CircleGrid | None = None) -> LaurentLoop:
    """Reality involution.

    Algebra (and general) loops use the coefficient rule
    ``(a^*)_k = -(-1)^k conj(a_{-k})^T``.  Group loops use the group form
    ``g^*(lam) = (conj(g(-1/conj lam))^T)^{-1}``, evaluated on a circle grid
    and refitted on the reflected window.
    """
    if a.kind == "group":
        grid = grid or CircleGrid.for_window(-a.hi, -a.lo, minimum=16)
        vals = a.on_grid(grid)[grid.antipode()]
        vals = np.linalg.inv(np.conj(np.swapaxes(vals, -1, -2)))
        return fit_from_samples(vals, -a.hi, -a.lo).loop.with_kind("group")
    c = a.coeffs[::-1]
    sign = _reflect_sign(-a.hi, -a.lo)
    out = -sign[:, None, None] * np.conj(np.swapaxes(c, -1, -2))
    return LaurentLoop(-a.hi, out, a.kind)


def hat(a: LaurentLoop) -> LaurentLoop:
    """``conj(a(-1/conj lam))^T``; for group loops ``hat(g) = star(g)^{-1}``."""
    c = a.coeffs[::-1]
    sign = _reflect_sign(-a.hi, -a.lo)
    return LaurentLoop(-a.hi, sign[:, None, None] * np.conj(np.swapaxes(c, -1, -2)), "general")


def split_uh(a: LaurentLoop) -> tuple[LaurentLoop, LaurentLoop]:
    """Split into unitary (star-fixed) and Hermitian (star-odd) parts."""
    s = star(a.with_kind("algebra"))
    u = ((a + s) * 0.5).with_kind("algebra")
    h = ((a - s) * 0.5).with_kind("algebra")
    return u, h


def project(a: LaurentLoop, part: str) -> LaurentLoop:
    """Mask coefficients by degree: neg (<0), zero, pos (>0), geq0, geqm1."""
    if part not in PARTS:
        raise LoopError(f"unknown projection {part!r}")
    keep = {
        "neg": lambda k: k < 0,
        "zero": lambda k: k == 0,
        "pos": lambda k: k > 0,
        "geq0": lambda k: k >= 0,
        "geqm1": lambda k: k >= -1,
    }[part]
    c = np.array([a.coeffs[i] if keep(k) else np.zeros((2, 2)) for i, k in enumerate(a.degrees)])
    return LaurentLoop(a.lo, c, a.kind)


def l1_norm(a: LaurentLoop) -> float:
    """ell^1 norm with Frobenius coefficient norm."""
    return float(np.sqrt((np.abs(a.coeffs) ** 2).sum(axis=(1, 2))).sum())


class Fit(NamedTuple):
    loop: LaurentLoop
    tail: float
    aliased: bool


def fit_from_samples(values: np.ndarray, lo: int, hi: int, alias_tol: float = 1e-10) -> Fit:
    """Entrywise discrete Fourier fit of samples on the standard circle grid.

    ``values`` has shape ``(M, 2, 2)`` at ``exp(2 pi i m/M)``.  The returned
    ``tail`` is the ell^1 mass of the discrete spectrum outside ``[lo, hi]``.
    """
    values = np.asarray(values, complex)
    M = values.shape[0]
    if M < hi - lo + 1:
        raise LoopError(f"grid of size {M} cannot resolve window [{lo}, {hi}]")
    fc = np.fft.fft(values, axis=0) / M
    ks = np.arange(lo, hi + 1)
    loop = LaurentLoop(lo, fc[ks % M])
    inside = np.zeros(M, bool)
    inside[ks % M] = True
    tail = float(np.sqrt((np.abs(fc[~inside]) ** 2).sum(axis=(1, 2))).sum())
    return Fit(loop, tail, tail > alias_tol)


def fit_function(f, lo: int, hi: int, M: int | None = None, alias_tol: float = 1e-10) -> Fit:
    """Fit a pointwise-defined loop ``f(lam) -> (..., 2, 2)``.

    The alias estimate refits on the doubled grid and reports the mass
    outside the window there.
    """
    M = M or CircleGrid.for_window(lo, hi, minimum=16).M
    fit = fit_from_samples(f(CircleGrid(M).nodes), lo, hi, alias_tol)
    fine = fit_from_samples(f(CircleGrid(2 * M).nodes), lo, hi, alias_tol)
    return Fit(fit.loop, fine.tail, fine.tail > alias_tol)


def loop_exp(a: LaurentLoop, lo: int, hi: int, M: int = 64) -> Fit:
    return fit_function(lambda lam: scipy.linalg.expm(evaluate(a, lam)), lo, hi, M)


def adjugate(a: LaurentLoop) -> LaurentLoop:
    """Coefficientwise adjugate; equals the inverse when ``det == 1``."""
    c = a.coeffs
    adj = np.empty_like(c)
    adj[:, 0, 0], adj[:, 1, 1] = c[:, 1, 1], c[:, 0, 0]
    adj[:, 0, 1], adj[:, 1, 0] = -c[:, 0, 1], -c[:, 1, 0]
    return LaurentLoop(a.lo, adj, a.kind)


# ---------------------------------------------------------------------------
# Iwasawa factorization g = p u, p in Lambda^{>=0}_B, u in Lambda U
# ---------------------------------------------------------------------------

class Iwasawa(NamedTuple):
    p: LaurentLoop
    u: LaurentLoop
    residual: float
    unitarity: float


def _finish_iwasawa(g: LaurentLoop, p: LaurentLoop, grid: CircleGrid) -> Iwasawa:
    pv, gv = p.on_grid(grid), g.on_grid(grid)
    uv = np.linalg.solve(pv, gv)
    u = fit_from_samples(uv, -(g.hi + p.hi) - 1, g.hi + p.hi + 1).loop.with_kind("group")
    residual = float(np.abs(pv @ u.on_grid(grid) - gv).max())
    return Iwasawa(p.with_kind("group"), u, residual, unitarity_defect_values(u.on_grid(grid), grid))


def unitarity_defect_values(vals: np.ndarray, grid: CircleGrid) -> float:
    """sup_m |conj(M(-lam_m))^T M(lam_m) - Id| for samples on ``grid``."""
    anti = np.conj(np.swapaxes(vals[grid.antipode()], -1, -2))
    return float(np.abs(anti @ vals - np.eye(2)).max())


def iwasawa(g: LaurentLoop, N: int | None = None, grid: CircleGrid | None = None,
            pivot_tol: float = 1e-9) -> Iwasawa:
    """Factor ``g = p u`` with ``p(0)`` lower triangular, positive diagonal.

    With ``G = g hat(g)`` the positive factor satisfies ``G = p hat(p)``.  We
    solve the block-Toeplitz system for ``q = p(0) p^{-1}`` (degree <= N,
    ``q(0) = Id``) killing the positive modes of ``q G``; the constant mode of
    ``q G`` is then ``p(0) p(0)^H`` and a Cholesky factor gives ``p(0)``.
    Failure of positivity means ``g`` is outside the big cell.
    """
    N = N if N is not None else max(4, 2 * (g.hi - g.lo))
    G = multiply(g, hat(g))
    Gk = G.coeff
    if N > 0:
        # unknown block row [q_1 ... q_N]; equations for degrees k = 1..N
        A = np.zeros((2 * N, 2 * N), complex)
        rhs = np.zeros((2, 2 * N), complex)
        for k in range(1, N + 1):
            rhs[:, 2 * (k - 1):2 * k] = -Gk(k)
            for i in range(1, N + 1):
                A[2 * (i - 1):2 * i, 2 * (k - 1):2 * k] = Gk(k - i)
        if np.linalg.cond(A) > 1e13:
            raise BigCellError("singular Toeplitz system: loop is outside the big cell")
        sol = np.linalg.solve(A.T, rhs.T).T
        qs = [np.eye(2)] + [sol[:, 2 * (i - 1):2 * i] for i in range(1, N + 1)]
    else:
        qs = [np.eye(2)]
    q = LaurentLoop(0, np.array(qs))
    Q0 = sum(qs[i] @ Gk(-i) for i in range(N + 1))
    herm_err = np.abs(Q0 - Q0.conj().T).max()
    Q0 = 0.5 * (Q0 + Q0.conj().T)
    evals = np.linalg.eigvalsh(Q0)
    scale = max(1.0, np.abs(evals).max())
    if evals.min() <= pivot_tol * scale or herm_err > 1e-6 * scale:
        raise BigCellError(
            f"constant block is not positive definite (eigenvalues {evals}); outside the big cell")
    L = np.linalg.cholesky(Q0)
    L = L / np.sqrt(np.linalg.det(L).real)
    det_lo, det_c = det_coeffs(q)
    p = multiply(adjugate(q), LaurentLoop.constant(L))
    # q has det 1 up to truncation; renormalize its inverse
    if np.abs(det_c[0] - 1) > 1e-8:
        raise BigCellError("positive factor lost unimodularity")
    grid = grid or CircleGrid.for_window(-(g.hi + N) - 1, g.hi + N + 1, minimum=32)
    return _finish_iwasawa(g, p.trimmed(0.0).padded(0, 0), grid)


def _p_basis(N: int) -> np.ndarray:
    """Real basis of Lambda^{>=0} coefficient blocks with p(0) lower triangular, real diagonal."""
    basis = []
    for idx in [(0, 0), (1, 1)]:
        e = np.zeros((N + 1, 2, 2), complex)
        e[(0,) + idx] = 1.0
        basis.append(e)
    for unit in (1.0, 1j):
        e = np.zeros((N + 1, 2, 2), complex)
        e[0, 1, 0] = unit
        basis.append(e)
    for k in range(1, N + 1):
        for i in range(2):
            for j in range(2):
                for unit in (1.0, 1j):
                    e = np.zeros((N + 1, 2, 2), complex)
                    e[k, i, j] = unit
                    basis.append(e)
    return np.array(basis)


def iwasawa_newton(g: LaurentLoop, N: int, p_init: LaurentLoop | None = None,
                   grid: CircleGrid | None = None, tol: float = 1e-14,
                   max_iter: int = 60) -> Iwasawa:
    """Iwasawa factorization by Gauss-Newton on the coefficients of ``p``.

    Solves ``p(lam) conj(p(-lam))^T = G(lam)`` with ``G = g hat(g)`` and
    ``det p = 1`` on the circle grid.  The system is quadratic in ``p`` so
    the Jacobian is exact.  Independent of :func:`iwasawa`.
    """
    grid = grid or CircleGrid.for_window(-(g.hi + N) - 1, g.hi + N + 1, minimum=32)
    anti = grid.antipode()
    Gv = multiply(g, hat(g)).on_grid(grid)
    basis = _p_basis(N)
    lam = grid.nodes
    powers = lam[None, :] ** np.arange(N + 1)[:, None]          # (N+1, M)
    bvals = np.einsum("bkij,km->bmij", basis, powers)           # basis on grid

    def split(z):
        return np.concatenate([z.real.ravel(), z.imag.ravel()])

    def hat_vals(v):
        return np.conj(np.swapaxes(v[..., anti, :, :], -1, -2))

    c = (p_init.truncated(0, N).coeffs if p_init is not None
         else np.eye(2)[None] * (np.arange(N + 1) == 0)[:, None, None]).astype(complex)
    x = np.einsum("bkij,kij->b", basis.conj(), c).real
    for _ in range(max_iter):
        pv = np.einsum("b,bmij->mij", x, bvals)
        r = split(pv @ hat_vals(pv) - Gv)
        r = np.concatenate([r, split(np.linalg.det(pv) - 1.0)])
        if np.abs(r).max() < tol * max(1.0, np.abs(Gv).max()):
            break
        adj = np.stack([pv[:, 1, 1], -pv[:, 0, 1], -pv[:, 1, 0], pv[:, 0, 0]], -1).reshape(-1, 2, 2)
        dG = bvals @ hat_vals(pv)[None] + pv[None] @ hat_vals(bvals)
        dd = np.einsum("mij,bmji->bm", adj, bvals)
        J = np.stack([np.concatenate([split(dG[b]), split(dd[b])]) for b in range(len(x))], 1)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        x = x + step
        if np.abs(step).max() < 1e-14 * max(1.0, np.abs(x).max()):
            break       # stagnated at the truncation floor; judged below
    p = LaurentLoop(0, np.einsum("b,bkij->kij", x, basis))
    d = np.diag(p.coeff(0)).real
    if np.abs(r).max() > 1e-9 or np.any(d <= 0):
        raise BigCellError(f"Newton Iwasawa iteration did not converge (residual {np.abs(r).max():.2e})")
    return _finish_iwasawa(g, p, grid)


# ---------------------------------------------------------------------------
# linear solvers for the model residue  X = lam^{-1} beta E12 + diag(mu,-mu) + lam conj(beta) E21
# ---------------------------------------------------------------------------

def model_residue(alpha: float, beta: complex) -> LaurentLoop:
    """The unitary model loop with ``mu = i sqrt(alpha^2 + |beta|^2)``."""
    mu = 1j * np.sqrt(alpha ** 2 + abs(beta) ** 2)
    c = np.zeros((3, 2, 2), complex)
    c[0, 0, 1] = beta
    c[1] = np.diag([mu, -mu])
    c[2, 1, 0] = np.conj(beta)
    return LaurentLoop(-1, c, "algebra")


def _model_params(X: LaurentLoop, tol: float = 1e-12) -> tuple[complex, complex]:
    """Return ``(beta, mu)`` for a loop of the model form, validating it."""
    Xp = X.padded(-1, 1)
    beta = Xp.coeff(-1)[0, 1]
    mu = Xp.coeff(0)[0, 0]
    expect = model_residue(1.0, beta)  # shape template only
    ok = (np.abs(Xp.coeff(-1) - expect.coeff(-1)).max() <= tol
          and np.abs(Xp.coeff(1) - expect.coeff(1)).max() <= tol
          and np.abs(Xp.coeff(0) - np.diag([mu, -mu])).max() <= tol
          and all(np.abs(Xp.coeff(k)).max() <= tol for k in Xp.degrees if abs(k) > 1))
    if not ok:
        raise LoopError("loop is not of the model form lam^-1 b E12 + diag(mu,-mu) + lam conj(b) E21")
    return beta, mu


def _D_conj(a: LaurentLoop, inverse: bool = False) -> LaurentLoop:
    """``D^{-1} a D`` with ``D = diag(1, lam)`` (or ``D a D^{-1}``)."""
    s = -1 if inverse else 1
    a = a.padded(a.lo - 1, a.hi + 1)
    c = np.zeros_like(a.coeffs)
    c[:, 0, 0] = a.coeffs[:, 0, 0]
    c[:, 1, 1] = a.coeffs[:, 1, 1]
    # (D^{-1} a D)_{12} = a_{12} lam,  (D^{-1} a D)_{21} = a_{21} / lam
    if s == 1:
        c[1:, 0, 1] = a.coeffs[:-1, 0, 1]
        c[:-1, 1, 0] = a.coeffs[1:, 1, 0]
    else:
        c[:-1, 0, 1] = a.coeffs[1:, 0, 1]
        c[1:, 1, 0] = a.coeffs[:-1, 1, 0]
    return LaurentLoop(a.lo, c, a.kind)


def solve_commutator(X: LaurentLoop, Y: LaurentLoop, tol: float = 1e-10) -> LaurentLoop:
    """Solve ``Y = [X, Yhat]`` for a model residue ``X``.

    After conjugation by ``D = diag(1, lam)`` the residue is a constant matrix
    ``X0`` with ``X0^2 = -alpha^2 Id``; each mode is solved by
    ``c_hat = [X0, c] / (4 X0^2)``, the solution orthogonal to ``X0``.
    """
    beta, mu = _model_params(X)
    X0 = np.array([[mu, beta], [np.conj(beta), -mu]])
    kappa = (X0 @ X0)[0, 0]
    if abs(kappa) < 1e-300:
        raise LoopError("model residue is not invertible")
    lo, tc = trace_product_coeffs(X, Y)
    scale = max(1.0, l1_norm(Y))
    if np.abs(tc).max(initial=0.0) > tol * scale:
        raise LoopError(f"trace condition tr(X Y) = 0 violated ({np.abs(tc).max():.2e})")
    DY = _D_conj(Y)
    c = (X0 @ DY.coeffs - DY.coeffs @ X0) / (4 * kappa)
    Yhat = _D_conj(LaurentLoop(DY.lo, c), inverse=True)
    return Yhat.trimmed(0.0).with_kind("algebra")


def hermitian_lift(X: LaurentLoop, H: LaurentLoop, tol: float = 1e-10) -> LaurentLoop:
    """Find ``P`` in Lambda^{>=0} with ``tr(X P) = 0``, Hermitian part ``H``.

    ``H = [X, Hhat]`` with ``Hhat`` Hermitian; the lift is
    ``P = [X, Phat0 + 2 Hhat^+]`` where ``Phat0`` is built from the constant
    part ``[[a, b], [conj b, -a]]`` of ``Hhat`` as
    ``[[0, 2b], [-2 a conj(beta)/mu lam, 0]]``.
    """
    beta, mu = _model_params(X)
    if np.abs((star(H) + H).coeffs).max() > tol * max(1.0, l1_norm(H)):
        raise LoopError("H is not in the Hermitian part (star(H) != -H)")
    Hhat = split_uh(solve_commutator(X, H, tol))[1]
    Hh = Hhat.padded(0, 0)
    h0 = Hh.coeff(0)
    a, b = h0[0, 0].real, h0[0, 1]
    P0 = LaurentLoop.from_dict({0: np.array([[0, 2 * b], [0, 0]]),
                                1: np.array([[0, 0], [-2 * a * np.conj(beta) / mu, 0]])})
    Pplus = project(Hh, "pos") * 2.0
    P = commutator(X, P0 + Pplus)
    P = project(P.padded(0, 0), "geq0").trimmed(0.0).padded(0, 0)
    return P.with_kind("algebra")


# ---------------------------------------------------------------------------
# closed-form Iwasawa factorization of exp(-A log x)
# ---------------------------------------------------------------------------

class ExponentialExample(NamedTuple):
    A: LaurentLoop
    Psi: LaurentLoop
    B: LaurentLoop
    F: LaurentLoop


def exponential_example_residue(alpha: float, r: float, tilde: bool = False) -> LaurentLoop:
    """``alpha [[s, -2 r^2/lam], [2 r^2 lam, -s]]`` with ``s = +-sqrt(1 + 4 r^4)``."""
    s = (-1 if tilde else 1) * np.sqrt(1 + 4 * r ** 4)
    return LaurentLoop.from_dict({-1: alpha * np.array([[0, -2 * r * r], [0, 0]]),
                                  0: alpha * np.diag([s, -s]),
                                  1: alpha * np.array([[0, 0], [2 * r * r, 0]])})


def exponential_example_breakdown(alpha: float, r: float, tilde: bool = False) -> float:
    """Positive zero of the denominator of ``B``, ``F`` (``inf`` for ``r = 0``)."""
    if r == 0:
        return np.inf
    s = np.sqrt(1 + 4 * r ** 4)
    xr = ((s + 1) / (s - 1)) ** (1 / (4 * alpha))
    return 1 / xr if tilde else xr


def exponential_example(alpha: float, r: float, x: float, tilde: bool = False) -> ExponentialExample:
    """``Psi(x) = exp(-A log x) = B(x) F(x)`` in closed form.

    ``A^2 = alpha^2 Id`` so ``Psi = cosh(alpha L) - sinh(alpha L) A / alpha``
    with ``L = log x``.  ``tilde`` flips the sign of ``sqrt(1 + 4 r^4)``.
    """
    s = (-1 if tilde else 1) * np.sqrt(1 + 4 * r ** 4)
    A = exponential_example_residue(alpha, r, tilde)
    L = np.log(x)
    Psi = (LaurentLoop.identity().padded(-1, 1) * np.cosh(alpha * L)
           - A * (np.sinh(alpha * L) / alpha)).with_kind("group")
    x2, x4 = x ** (2 * alpha), x ** (4 * alpha)
    D2 = -s * (x4 - 1) + x4 + 1
    if D2 <= 0:
        raise BigCellError(f"closed form has no real square root at x={x:g}")
    D = np.sqrt(D2)
    xa = x ** alpha
    B = LaurentLoop.from_dict({0: np.diag([D / (np.sqrt(2) * xa), np.sqrt(2) * xa / D]),
                               1: np.array([[0, 0], [-np.sqrt(2) * r * r * (x4 - 1) / (xa * D), 0]])},
                              kind="group")
    d = (-s * (x2 - 1) + x2 + 1) / (np.sqrt(2) * D)
    o = np.sqrt(2) * r * r * (x2 - 1) / D
    F = LaurentLoop.from_dict({-1: np.array([[0, o], [0, 0]]), 0: np.diag([d, d]),
                               1: np.array([[0, 0], [o, 0]])}, kind="group")
    return ExponentialExample(A, Psi, B, F)
