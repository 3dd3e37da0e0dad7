"""Sparse symmetric/Hermitian linear algebra.

Conjugate gradients with optional constant-mode projection and
preconditioning, plus a smallest-eigenpair solver (inverse iteration
with M-orthogonal deflation) for generalized Hermitian problems.
Complex matrices are carried as explicit (real, imag) sparse pairs and
all iterations run on the doubled real representation, so a single CG
serves both scalar types.  Reductions are plain sequential dots, so
repeated runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.fft import dstn, irfftn, rfftn

__all__ = [
    "SparseSym",
    "SolverError",
    "cg_solve",
    "CGInfo",
    "EigenResult",
    "smallest_eigenpairs",
    "spectral_preconditioner",
    "jacobi_preconditioner",
]


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SparseSym:
    """Symmetric (real) or Hermitian (real + skew imag part) matrix.

    ``real`` is CSR and symmetric; ``imag`` (optional) is CSR and
    skew-symmetric, so real + 1j*imag is Hermitian.  The complex case
    acts on vectors in the stacked real representation
    [re; im] -> [real·re − imag·im; imag·re + real·im].
    """

    n: int
    real: sp.csr_matrix
    imag: sp.csr_matrix | None = None

    def __post_init__(self):
        if self.real.shape != (self.n, self.n):
            raise ValueError("real part has wrong shape")
        if not np.isfinite(self.real.data).all():
            raise ValueError("matrix entries must be finite")
        if self.imag is not None:
            if self.imag.shape != (self.n, self.n):
                raise ValueError("imag part has wrong shape")
            if not np.isfinite(self.imag.data).all():
                raise ValueError("matrix entries must be finite")

    @property
    def is_complex(self) -> bool:
        return self.imag is not None

    @property
    def real_dim(self) -> int:
        return 2 * self.n if self.is_complex else self.n

    def matvec(self, x):
        """Matrix-vector product in the real representation."""
        if not self.is_complex:
            return self.real @ x
        xr, xi = x[: self.n], x[self.n :]
        return np.concatenate(
            [self.real @ xr - self.imag @ xi, self.imag @ xr + self.real @ xi]
        )

    def diagonal_real(self):
        """Diagonal in the real representation (Hermitian => real diag)."""
        d = self.real.diagonal()
        return np.concatenate([d, d]) if self.is_complex else d

    def trace(self) -> float:
        return float(self.real.diagonal().sum())

    @classmethod
    def wrap(cls, obj):
        if isinstance(obj, SparseSym):
            return obj
        if sp.issparse(obj):
            csr = obj.tocsr()
            return cls(n=csr.shape[0], real=csr)
        raise TypeError(f"cannot interpret {type(obj).__name__} as SparseSym")


def jacobi_preconditioner(diag):
    d = np.asarray(diag, dtype=float)
    if np.any(d <= 0):
        raise SolverError("Jacobi preconditioner needs a positive diagonal")
    inv = 1.0 / d

    def apply(r):
        return inv * r

    return apply


@dataclass(frozen=True)
class CGInfo:
    iterations: int
    residual: float  # relative to ||b||


def _operator_parts(op, n):
    if isinstance(op, SparseSym):
        if op.real_dim != n:
            raise ValueError("operator/vector size mismatch")
        return op.matvec, op.diagonal_real()
    if sp.issparse(op):
        csr = op.tocsr()
        if csr.shape[0] != n:
            raise ValueError("operator/vector size mismatch")
        return (lambda x: csr @ x), csr.diagonal()
    if callable(op):
        return op, None
    raise TypeError(f"cannot use {type(op).__name__} as a linear operator")


def cg_solve(
    Kop,
    b,
    tol=1e-10,
    maxit=None,
    project_constants=False,
    precond=None,
    x0=None,
    return_info=False,
    strict=True,
):
    """Preconditioned conjugate gradients for SPD/semidefinite systems.

    ``Kop`` is a SparseSym, a scipy sparse matrix, or a matvec callable.
    With ``project_constants`` the constant component is removed from
    the residual and iterate, for consistent semidefinite systems whose
    kernel is the constants (b must be orthogonal to constants).
    ``precond`` is a callable r -> z; None selects Jacobi when a
    diagonal is available, identity otherwise.  Converges on the true
    relative residual ||Kx − b|| <= tol·||b||; raises SolverError on
    NaN or when maxit is exhausted (reporting the final residual).
    With ``strict=False`` an unconverged solve returns the best iterate
    seen instead of raising, stopping early once the true residual
    stalls across restarts; callers must check info.residual.  Very
    ill-conditioned systems hit a rounding floor near eps·cond(K) that
    no iteration count gets under, which is what strict=False is for.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    matvec, diag = _operator_parts(Kop, n)
    if maxit is None:
        maxit = 50 * int(math.ceil(math.sqrt(n))) + 100
    if precond is None:
        precond = jacobi_preconditioner(diag) if diag is not None else (lambda r: r)

    def demean(v):
        v -= v.mean()

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        x = np.zeros(n)
        return (x, CGInfo(0, 0.0)) if return_info else x

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if project_constants:
        demean(x)
    r = b - matvec(x)
    if project_constants:
        demean(r)
    it = 0
    rnorm = float(np.linalg.norm(r))
    best_x, best_r = x.copy(), rnorm
    stalls = 0
    broke = False
    while it < maxit and rnorm > tol * bnorm:
        z = precond(r)
        if project_constants:
            z = z - z.mean()
        rz = float(r @ z)
        p = z.copy()
        # inner recurrence; on apparent convergence re-check the true
        # residual and restart if rounding drift hid the gap
        while it < maxit:
            Ap = matvec(p)
            if project_constants:
                Ap = Ap - Ap.mean()
            pAp = float(p @ Ap)
            if not np.isfinite(pAp) or pAp <= 0.0:
                if strict:
                    raise SolverError(
                        f"conjugate gradients broke down at iteration {it}: "
                        f"p·Kp = {pAp!r}"
                    )
                broke = True
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            if project_constants:
                demean(r)
            it += 1
            rnorm = float(np.linalg.norm(r))
            if not np.isfinite(rnorm):
                raise SolverError(f"NaN residual at iteration {it}")
            if rnorm <= tol * bnorm:
                break
            z = precond(r)
            if project_constants:
                z = z - z.mean()
            rz_new = float(r @ z)
            beta = rz_new / rz
            rz = rz_new
            p = z + beta * p
        r = b - matvec(x)
        if project_constants:
            demean(r)
        prev_best = best_r
        rnorm = float(np.linalg.norm(r))
        if rnorm < best_r:
            best_x, best_r = x.copy(), rnorm
        if broke:
            break
        if not strict:
            # true residual no longer improving across restart cycles:
            # the rounding floor for this system has been reached
            if rnorm > 0.5 * prev_best:
                stalls += 1
                if stalls >= 3:
                    break
            else:
                stalls = 0
    if rnorm > tol * bnorm:
        if strict:
            raise SolverError(
                f"conjugate gradients did not converge in {maxit} iterations: "
                f"relative residual {rnorm / bnorm:.3e}"
            )
        x, rnorm = best_x, best_r
    if project_constants:
        demean(x)
    if return_info:
        return x, CGInfo(it, rnorm / bnorm)
    return x


# --- constant-coefficient spectral preconditioners ---------------------------


def _axis_symbols(h, theta):
    kappa = (2.0 / h) * (1.0 - np.cos(theta))
    mu = (h / 6.0) * (4.0 + 2.0 * np.cos(theta))
    return kappa, mu


def spectral_preconditioner(grid, kind, c_axes, zero_order=0.0):
    """Exact inverse of a constant-coefficient operator on the same grid.

    The operator is sum_ax c_axes[ax]·(1D stiffness along ax) tensored
    with 1D mass on the other axes, plus zero_order times the full mass;
    its Q1 matrix is exactly diagonalized by the FFT (periodic) or the
    type-I sine transform (dirichlet), so applying the inverse costs one
    forward and one inverse transform.  A zero symbol (periodic,
    zero_order = 0, constant mode) maps to zero, which projects
    constants out.  Intended as a CG preconditioner for variable
    coefficients with the axis means as c_axes.
    """
    d = grid.d
    h = grid.h
    c_axes = np.broadcast_to(np.asarray(c_axes, dtype=float), (d,))
    if kind == "periodic":
        n = grid.nodes_per_dim
        thetas = [2.0 * np.pi * np.arange(n) / n] * d
        shape = (n,) * d
    elif kind == "dirichlet":
        n = grid.nodes_per_dim - 2  # interior nodes per axis
        cells = grid.cells_per_dim
        thetas = [np.pi * np.arange(1, n + 1) / cells] * d
        shape = (n,) * d
    else:
        raise ValueError(f"unknown preconditioner kind {kind!r}")

    kappas, mus = [], []
    for ax in range(d):
        kap, mu = _axis_symbols(h, thetas[ax])
        kappas.append(kap)
        mus.append(mu)

    if kind == "periodic":
        # build on the rfft grid (last axis halved)
        sizes = [len(t) for t in thetas]
        sizes[-1] = sizes[-1] // 2 + 1
        kappas = [k[: sizes[ax]] if ax == d - 1 else k for ax, k in enumerate(kappas)]
        mus = [m[: sizes[ax]] if ax == d - 1 else m for ax, m in enumerate(mus)]
    sym = np.zeros([len(k) for k in kappas])
    for ax in range(d):
        term = np.ones(())
        facs = [
            kappas[bx] * c_axes[ax] if bx == ax else mus[bx] for bx in range(d)
        ]
        term = facs[0]
        for bx in range(1, d):
            term = np.multiply.outer(term, facs[bx])
        sym = sym + term
    if zero_order != 0.0:
        mass = mus[0]
        for bx in range(1, d):
            mass = np.multiply.outer(mass, mus[bx])
        sym = sym + zero_order * mass
    inv = np.zeros_like(sym)
    nz = sym > 0
    inv[nz] = 1.0 / sym[nz]

    if kind == "periodic":
        full_shape = (grid.nodes_per_dim,) * d

        def apply(r):
            rg = r.reshape(full_shape)
            return irfftn(rfftn(rg) * inv, s=full_shape).reshape(-1)

        return apply

    def apply(r):
        rg = r.reshape(shape)
        coeffs = dstn(rg, type=1, norm="ortho")
        return dstn(coeffs * inv, type=1, norm="ortho").reshape(-1)

    return apply


# --- smallest eigenpairs -----------------------------------------------------


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray  # complex for Hermitian problems, real otherwise
    residual: float
    iterations: int


def smallest_eigenpairs(
    K, M, count=1, tol=1e-8, maxit=200, precond=None, cg_tol=1e-12, seed=0
):
    """Smallest ``count`` generalized eigenpairs of K v = λ M v.

    K is positive semidefinite (SparseSym or sparse), M symmetric
    positive definite and real.  Inverse iteration runs on K + σM with
    σ = 1e-8·trace(K)/n, deflating M-orthogonally against converged
    eigenvectors; for Hermitian K both the first eigenvector and its
    i-rotation are deflated, since eigenvalues of the real
    representation come in pairs.  Residual test per pair:
    ||Kv − λMv|| <= tol·(||Kv|| + |λ|·||Mv||), or the rounding floor
    64·eps·||K||_inf·||v|| when that is smaller; a zero mode of a
    semidefinite K reaches the floor (both sides of the relative test
    are matvec noise there, so the relative form alone is vacuous).
    Inner CG solves run non-strict: the shifted system is nearly
    singular by construction and its attainable residual is bounded by
    the floor, while eigenpair quality is guarded by this outer test.
    The second mode advances a small block of vectors with a
    Rayleigh-Ritz step per sweep, because clustered eigenvalues
    (conjugate +-k modes appear as exact double pairs, with the next
    pair often close above) make plain inverse iteration contract at a
    rate arbitrarily close to one; the projected eigenproblem separates
    a cluster exactly while the block converges onto its span at the
    gap to the first eigenvalue outside the block.  Returned vectors
    are M-normalized; complex problems return complex vectors.
    """
    A = SparseSym.wrap(K)
    B = SparseSym.wrap(M)
    if B.is_complex:
        raise ValueError("mass matrix must be real")
    n = A.n
    if B.n != n:
        raise ValueError("K and M sizes differ")
    if count not in (1, 2):
        raise ValueError("count must be 1 or 2")
    N = A.real_dim
    sigma = 1e-8 * A.trace() / n
    rowsum = np.asarray(abs(A.real).sum(axis=1)).ravel()
    if A.is_complex:
        rowsum = rowsum + np.asarray(abs(A.imag).sum(axis=1)).ravel()
    knorm = float(rowsum.max()) if rowsum.size else 0.0
    eps = float(np.finfo(float).eps)

    def bmat(x):
        if A.is_complex:
            return np.concatenate([B.real @ x[:n], B.real @ x[n:]])
        return B.real @ x

    def shifted(x):
        return A.matvec(x) + sigma * bmat(x)

    if precond is None:
        prec_half = jacobi_preconditioner(A.real.diagonal() + sigma * B.real.diagonal())
    else:
        prec_half = precond

    if A.is_complex:

        def prec(r):
            return np.concatenate([prec_half(r[:n]), prec_half(r[n:])])

    else:
        prec = prec_half

    deflate = []

    def project_out(v):
        for u, bu in deflate:
            v -= (v @ bu) * u
        return v

    def m_normalize(v):
        s = math.sqrt(float(v @ bmat(v)))
        if s == 0.0 or not np.isfinite(s):
            raise SolverError("degenerate vector in inverse iteration")
        v /= s
        return v

    rng = np.random.default_rng(seed)

    def fresh(basis=()):
        v = rng.standard_normal(N)
        project_out(v)
        for u in basis:
            v -= float(v @ bmat(u)) * u
        return m_normalize(v)

    def advance(v):
        y = cg_solve(shifted, bmat(v), tol=cg_tol, precond=prec, x0=v, strict=False)
        project_out(y)
        return y

    results = []
    for mode in range(count):
        x = fresh()
        comps = []
        if mode == 1:
            # block width 4 covers a double target pair plus a nearby
            # double pair above it, the generic clustering at eta = 0
            for _ in range(min(4, N - len(deflate)) - 1):
                comps.append(fresh([x] + comps))
        lam = math.inf
        converged = False
        floor = 0.0
        for it in range(1, maxit + 1):
            y = m_normalize(advance(x))
            if comps:
                basis = [y]
                for c in comps:
                    w = advance(c)
                    for u in basis:
                        w -= float(w @ bmat(u)) * u
                    s = math.sqrt(float(w @ bmat(w)))
                    if not np.isfinite(s) or s <= 1e-10:
                        w = fresh(basis)
                    else:
                        w /= s
                    basis.append(w)
                kys = [A.matvec(u) for u in basis]
                nb = len(basis)
                kp = np.empty((nb, nb))
                for i in range(nb):
                    for j in range(i, nb):
                        kp[i, j] = kp[j, i] = float(basis[i] @ kys[j])
                _, U = np.linalg.eigh(kp)
                ky = sum(U[i, 0] * kys[i] for i in range(nb))
                ynew = sum(U[i, 0] * basis[i] for i in range(nb))
                comps = [
                    sum(U[i, j] * basis[i] for i in range(nb)) for j in range(1, nb)
                ]
                y = ynew
            else:
                ky = A.matvec(y)
            by = bmat(y)
            lam = float(y @ ky)
            res = float(np.linalg.norm(ky - lam * by))
            scale = float(np.linalg.norm(ky)) + abs(lam) * float(np.linalg.norm(by))
            floor = 64.0 * eps * knorm * float(np.linalg.norm(y))
            x = y
            if scale == 0.0 or res <= tol * scale or res <= floor:
                converged = True
                break
        if not converged:
            raise SolverError(
                f"inverse iteration for mode {mode + 1} did not converge in "
                f"{maxit} sweeps: residual ratio {res / max(scale, 1e-300):.3e}"
            )
        results.append(
            EigenResult(value=lam, vector=x.copy(), residual=res, iterations=it)
        )
        if mode + 1 < count:
            if res > 100.0 * max(tol * scale, floor):
                raise SolverError(
                    "deflation breakdown: first eigenvector residual too large"
                )
            first = x.copy()
            deflate.append((first, bmat(first)))
            if A.is_complex:
                rot = np.concatenate([-first[n:], first[:n]])
                project_out(rot)
                m_normalize(rot)
                deflate.append((rot, bmat(rot)))

    for r in results:
        if A.is_complex:
            r.vector = r.vector[:n] + 1j * r.vector[n:]
    return results
