"""Shifted-operator spectral analysis on the periodicity cell.

The operator conjugated by the plane wave exp(i eta.y) has, for real
symmetric coefficients, the Hermitian stiffness

    K(eta) = K + G(eta) + i S(eta),

with G the (eta.A eta) mass-weighted term and S the skew first-order
coupling.  Its lowest eigenvalue vanishes quadratically at eta = 0, and
half its Hessian there reproduces the homogenized tensor of the
periodic cell scheme; the Hessian is estimated by finite differences of
eigenvalues on a cross stencil, guarded against eigenvalue crossings.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .assemble import assemble, _entry_average
from .cell import MeshParams, TWO_PI, _as_periodized, solve_corrector
from .grid import build_grid, make_dofmap
from .linalg import SolverError, SparseSym, smallest_eigenpairs, spectral_preconditioner

__all__ = [
    "ShiftedForms",
    "BlochEigenpair",
    "HessianEstimate",
    "GapScan",
    "assemble_shifted",
    "bloch_eigs",
    "bloch_gradient",
    "bloch_hessian",
    "spectral_gap_scan",
    "corrector_mode_correlation",
]

_CHUNK = 1 << 18

# Eigenvectors are scaled so v.M v = (ell/2pi)^d, i.e. ell^d times this
# constant.  The scaling is a bookkeeping convention; eigenvalues do not
# depend on it.
NORMALIZATION_CONSTANT_2PI = True


def _normalization_target(d, ell):
    return (ell / TWO_PI) ** d


@dataclass
class ShiftedForms:
    """Hermitian forms of the shifted operator at one quasimomentum."""

    eta: tuple
    K: SparseSym
    M: sp.csr_matrix
    forms: object  # base assembly (eta-independent parts)

    @property
    def grid(self):
        return self.forms.grid

    @property
    def dofmap(self):
        return self.forms.dofmap


@dataclass
class BlochEigenpair:
    """One eigenpair of K(eta) v = lambda M v.

    ``vector`` is complex, scaled so v.M v equals (ell/2pi)^d, with the
    maximal-modulus component rotated to the positive real axis (a
    smooth gauge for finite differencing).
    """

    eta: tuple
    mode: int
    lam: float
    vector: np.ndarray
    normalization: dict
    residual: float
    iterations: int

    def to_json(self, ell) -> dict:
        return {
            "ell": ell,
            "eta": [float(c) for c in self.eta],
            "mode": self.mode,
            "lambda": self.lam,
        }


@dataclass
class HessianEstimate:
    """Finite-difference Hessian of the lowest eigenvalue at eta = 0."""

    H: np.ndarray  # (d, d), symmetric by construction
    h: float
    lambda0: float
    gap: float  # lambda2(0) - lambda1(0)
    stencil: dict = dc_field(repr=False, default_factory=dict)
    entry_residuals: np.ndarray | None = dc_field(repr=False, default=None)


def _dual_halfwidth(ell):
    # dual cell [-1/(2R), 1/(2R))^d with R = ell/(2 pi)
    return math.pi / ell


def _check_eta(eta, d, ell):
    eta = tuple(float(c) for c in np.atleast_1d(np.asarray(eta, dtype=float)))
    if len(eta) != d:
        raise ValueError(f"eta must have {d} components")
    hw = _dual_halfwidth(ell)
    if any(abs(c) > hw * (1.0 + 1e-12) for c in eta):
        warnings.warn(
            f"eta {eta} lies outside the closed dual cell "
            f"[-{hw:.6g}, {hw:.6g}]^{d}",
            stacklevel=3,
        )
    return eta


def _base_forms(pfield, mesh):
    cells = mesh.cells_for(pfield.ell)
    grid = build_grid(pfield.d, pfield.ell, pfield.origin, cells, "periodic")
    dofmap = make_dofmap(grid, "periodic")
    return assemble(grid, dofmap, pfield, tinv=0.0)


def _shift_locals(forms, eta):
    """Per-element blocks of the mass-weighted and first-order terms."""
    grid = forms.grid
    d, h = grid.d, grid.h
    w, phi, dphi = forms.qweights, forms.phi, forms.dphi
    nloc = phi.shape[1]
    ne = grid.n_elements
    ev = np.asarray(eta, dtype=float)
    vol = h**d
    gloc = np.empty((ne, nloc, nloc))
    bloc = np.empty((ne, nloc, nloc))
    if forms._sqp is not None:
        sqp = forms._sqp
        e2 = float(ev @ ev)
        for i in range(nloc):
            for j in range(i, nloc):
                cq = (w * phi[:, i] * phi[:, j]) * (vol * e2)
                vals = sqp @ cq
                gloc[:, i, j] = vals
                if j != i:
                    gloc[:, j, i] = vals
        for i in range(nloc):
            di = dphi[:, i, :] @ ev  # (nq,)
            for j in range(nloc):
                cq = (w * di * phi[:, j]) * (vol / h)
                bloc[:, i, j] = sqp @ cq
        return gloc, bloc
    # matrix coefficient, chunked over elements
    wphi2 = np.empty((w.size, nloc, nloc))
    for i in range(nloc):
        for j in range(nloc):
            wphi2[:, i, j] = w * phi[:, i] * phi[:, j] * vol
    cb = np.empty((w.size, nloc, nloc, d))
    for i in range(nloc):
        for j in range(nloc):
            cb[:, i, j, :] = (w[:, None] * dphi[:, i, :]) * phi[:, j, None] * (vol / h)
    for lo in range(0, ne, _CHUNK):
        hi = min(lo + _CHUNK, ne)
        aqp = forms._aqp[lo:hi]
        qeta = np.einsum("eqkl,k,l->eq", aqp, ev, ev, optimize=True)
        aeta = np.einsum("eqkl,l->eqk", aqp, ev, optimize=True)
        gloc[lo:hi] = np.einsum("eq,qij->eij", qeta, wphi2, optimize=True)
        bloc[lo:hi] = np.einsum("eqk,qijk->eij", aeta, cb, optimize=True)
    # mirror the upper triangle so the mass-weighted blocks are exactly
    # symmetric regardless of einsum's reduction order
    iu = np.triu_indices(nloc, k=1)
    gloc[:, iu[1], iu[0]] = gloc[:, iu[0], iu[1]]
    return gloc, bloc


def shift_forms(forms, eta):
    """ShiftedForms for an already assembled periodic base system."""
    from .assemble import _stencil_matrix

    grid = forms.grid
    eta = _check_eta(eta, grid.d, grid.cell_side)
    n = forms.dofmap.n_dofs
    if not any(eta):
        return ShiftedForms(eta=eta, K=SparseSym(n=n, real=forms.K), M=forms.M,
                            forms=forms)
    gloc, bloc = _shift_locals(forms, eta)
    G = _stencil_matrix(grid, forms.dofmap, gloc)
    Bg = _stencil_matrix(grid, forms.dofmap, bloc)
    Kr = (forms.K + G).tocsr()
    Kr.sort_indices()
    S = (Bg - Bg.T).tocsr()
    S.sort_indices()
    return ShiftedForms(eta=eta, K=SparseSym(n=n, real=Kr, imag=S), M=forms.M,
                        forms=forms)


def assemble_shifted(field, mesh, eta, ell=None):
    """Hermitian stiffness of the shifted operator at quasimomentum eta.

    ``field`` is a periodized field (or a plain field with ``ell``); the
    problem always lives on the periodic dof map.  At eta = 0 the
    returned stiffness is the real assembly, bit for bit.
    """
    pfield = _as_periodized(field, ell)
    forms = _base_forms(pfield, mesh)
    return shift_forms(forms, eta)


def _precond_for(sf):
    forms = sf.forms
    grid = forms.grid
    c_axes = [_entry_average(forms, ax + 1, ax + 1) for ax in range(grid.d)]
    ev = np.asarray(sf.eta, dtype=float)
    zeta = float(np.dot(np.asarray(c_axes), ev * ev))
    sigma = 1e-8 * sf.K.trace() / sf.K.n
    return spectral_preconditioner(grid, "periodic", c_axes,
                                   zero_order=zeta + sigma)


def _phase_fix(vec):
    j = int(np.argmax(np.abs(vec)))
    piv = vec[j]
    mag = abs(piv)
    if mag > 0:
        vec = vec * (np.conj(piv) / mag)
    return vec


def _eigs_from_shifted(sf, count, tol, maxit, cg_tol):
    ell = sf.grid.cell_side
    d = sf.grid.d
    target = _normalization_target(d, ell)
    precond = _precond_for(sf)
    pairs = smallest_eigenpairs(
        sf.K, sf.M, count=count, tol=tol, maxit=maxit,
        precond=precond, cg_tol=cg_tol,
    )
    out = []
    for m, r in enumerate(pairs, start=1):
        vec = np.asarray(r.vector, dtype=complex) * math.sqrt(target)
        vec = _phase_fix(vec)
        out.append(
            BlochEigenpair(
                eta=sf.eta,
                mode=m,
                lam=r.value,
                vector=vec,
                normalization={
                    "mass_product": target,
                    "constant": TWO_PI ** (-d),
                    "phase": "max-modulus component real positive",
                },
                residual=r.residual,
                iterations=r.iterations,
            )
        )
    return out


def bloch_eigs(field, mesh, eta, count=1, ell=None, tol=1e-8, maxit=200,
               cg_tol=1e-12):
    """Lowest ``count`` (1 or 2) eigenpairs of the shifted operator."""
    sf = assemble_shifted(field, mesh, eta, ell=ell)
    return _eigs_from_shifted(sf, count, tol, maxit, cg_tol)


def _default_step(ell):
    r = ell / TWO_PI
    return 1e-2 / max(r, 1.0)


def _jobs_default(jobs):
    if jobs is not None:
        return max(int(jobs), 1)
    env = os.environ.get("APXHOMOG_JOBS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            pass
    return 1


def _lambda_table(forms, etas, count0, tol, maxit, cg_tol, jobs):
    """lambda_1 at each stencil point (count0 modes at the origin).

    Returns {eta: [lambda, ...]}.  Points are solved independently; the
    table insertion order is the input order, so downstream reductions
    are deterministic.
    """

    def solve(eta):
        sf = shift_forms(forms, eta)
        count = count0 if not any(eta) else 1
        pairs = _eigs_from_shifted(sf, count, tol, maxit, cg_tol)
        return [p.lam for p in pairs]

    jobs = min(_jobs_default(jobs), len(etas))
    if jobs <= 1:
        vals = [solve(eta) for eta in etas]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vals = list(pool.map(solve, etas))
    return dict(zip(etas, vals))


def _stencil_check(eta_list, ell):
    hw = _dual_halfwidth(ell) * (1.0 + 1e-12)
    for eta in eta_list:
        if any(abs(c) > hw for c in eta):
            raise ValueError(
                f"finite-difference stencil point {eta} leaves the dual cell; "
                f"reduce the step below {hw:.6g}"
            )


def bloch_gradient(field, mesh, h=None, ell=None, tol=1e-8, maxit=200,
                   cg_tol=1e-12, jobs=None):
    """Central-difference gradient of the lowest eigenvalue at eta = 0."""
    pfield = _as_periodized(field, ell)
    d = pfield.d
    if h is None:
        h = _default_step(pfield.ell)
    if h <= 0:
        raise ValueError("step h must be positive")
    forms = _base_forms(pfield, mesh)
    etas = []
    for s in range(d):
        for sign in (1.0, -1.0):
            e = [0.0] * d
            e[s] = sign * h
            etas.append(tuple(e))
    _stencil_check(etas, pfield.ell)
    table = _lambda_table(forms, etas, 1, tol, maxit, cg_tol, jobs)
    grad = np.empty(d)
    for s in range(d):
        plus = table[etas[2 * s]][0]
        minus = table[etas[2 * s + 1]][0]
        grad[s] = (plus - minus) / (2.0 * h)
    return grad


def bloch_hessian(field, mesh, h=None, ell=None, tol=1e-8, maxit=200,
                  cg_tol=1e-12, jobs=None):
    """Finite-difference Hessian of the lowest eigenvalue at eta = 0.

    Diagonal entries use the second central difference, mixed entries
    the 4-point cross stencil evaluated once per unordered pair, so the
    result is exactly symmetric.  If the gap between the two lowest
    eigenvalues at the origin is not safely larger than the spread of
    the lowest eigenvalue over the stencil, the estimate aborts: the
    difference quotients would straddle an eigenvalue crossing.
    """
    pfield = _as_periodized(field, ell)
    d = pfield.d
    if h is None:
        h = _default_step(pfield.ell)
    if h <= 0:
        raise ValueError("step h must be positive")
    forms = _base_forms(pfield, mesh)

    def unit(s, sign):
        e = [0.0] * d
        e[s] = sign * h
        return tuple(e)

    def cross(k, l, sk, sl):
        e = [0.0] * d
        e[k] = sk * h
        e[l] = sl * h
        return tuple(e)

    etas = [tuple([0.0] * d)]
    for s in range(d):
        etas.append(unit(s, +1))
        etas.append(unit(s, -1))
    for k in range(d):
        for l in range(k + 1, d):
            for sk in (+1, -1):
                for sl in (+1, -1):
                    etas.append(cross(k, l, sk, sl))
    _stencil_check(etas, pfield.ell)
    table = _lambda_table(forms, etas, 2, tol, maxit, cg_tol, jobs)
    lams1 = {eta: vals[0] for eta, vals in table.items()}
    lam0, lam2 = table[etas[0]][0], table[etas[0]][1]
    gap = lam2 - lam0
    spread = max(lams1.values()) - min(lams1.values())
    if gap < 10.0 * abs(spread):
        raise SolverError(
            "eigenvalue crossing risk: gap lambda2-lambda1 = "
            f"{gap:.3e} at eta=0 is below 10x the lowest-eigenvalue "
            f"stencil spread {spread:.3e}; reduce the step h={h:.3e} "
            "or increase the cell"
        )
    H = np.empty((d, d))
    for s in range(d):
        H[s, s] = (lams1[unit(s, +1)] - 2.0 * lam0 + lams1[unit(s, -1)]) / (h * h)
    for k in range(d):
        for l in range(k + 1, d):
            val = (
                lams1[cross(k, l, +1, +1)]
                - lams1[cross(k, l, +1, -1)]
                - lams1[cross(k, l, -1, +1)]
                + lams1[cross(k, l, -1, -1)]
            ) / (4.0 * h * h)
            H[k, l] = val
            H[l, k] = val
    # entry diagnostics: worst first-order stencil imbalance per axis
    ent_res = np.empty(d)
    for s in range(d):
        ent_res[s] = abs(lams1[unit(s, +1)] - lams1[unit(s, -1)]) / (2.0 * h)
    return HessianEstimate(
        H=H, h=h, lambda0=lam0, gap=gap, stencil=lams1, entry_residuals=ent_res
    )


@dataclass
class GapScan:
    """lambda_2 at the origin across cell radii, with a log-log rate."""

    records: list  # (R, lambda2) pairs, sorted by R
    exponent: float | None
    failures: list  # (R, message) for radii whose eigensolve failed


def spectral_gap_scan(field, mesh, R_list, tol=1e-8, maxit=200, cg_tol=1e-12):
    """Second eigenvalue at eta = 0 for each cell radius in ``R_list``."""
    rs = [float(r) for r in R_list]
    if not rs:
        raise ValueError("R list must be nonempty")
    records = []
    failures = []
    for r in sorted(rs):
        try:
            pairs = bloch_eigs(field, mesh, [0.0] * field.d, count=2,
                               ell=TWO_PI * r, tol=tol, maxit=maxit,
                               cg_tol=cg_tol)
            records.append((r, pairs[1].lam))
        except (SolverError, ValueError) as exc:
            failures.append((r, str(exc)))
    exponent = None
    pos = [(r, lam) for r, lam in records if lam > 0]
    if len(pos) >= 2:
        lr = np.log([r for r, _ in pos])
        ll = np.log([lam for _, lam in pos])
        exponent = float(np.polyfit(lr, ll, 1)[0])
    return GapScan(records=records, exponent=exponent, failures=failures)


def corrector_mode_correlation(field, mesh, direction=1, h=None, ell=None,
                               tol=1e-8, cg_tol=1e-12):
    """Correlation between the eigenvector's quasimomentum derivative and
    the corrector (a qualitative cross-check, not an identity).

    The derivative of the lowest eigenvector in direction s, divided by
    i times the zero-momentum eigenvector, should match the direction-s
    corrector up to an additive constant; returns the mass-weighted
    correlation coefficient of the two mean-free profiles.
    """
    pfield = _as_periodized(field, ell)
    d = pfield.d
    if not 1 <= direction <= d:
        raise ValueError(f"direction must be in 1..{d}")
    if h is None:
        h = _default_step(pfield.ell)
    forms = _base_forms(pfield, mesh)
    s = direction - 1
    ep = [0.0] * d
    ep[s] = h
    em = [0.0] * d
    em[s] = -h
    vp = _eigs_from_shifted(shift_forms(forms, tuple(ep)), 1, tol, 200, cg_tol)[0]
    vm = _eigs_from_shifted(shift_forms(forms, tuple(em)), 1, tol, 200, cg_tol)[0]
    v0 = _eigs_from_shifted(shift_forms(forms, tuple([0.0] * d)), 1, tol, 200,
                            cg_tol)[0]
    c0 = float(np.mean(vp.vector.real + vm.vector.real) / 2.0)
    if c0 == 0.0:
        c0 = float(np.mean(np.abs(v0.vector)))
    dvec = (vp.vector - vm.vector) / (2.0 * h)
    profile = (dvec / (1j * c0)).real
    w = solve_corrector(pfield, mesh, direction, bc="periodic", tinv=0.0)
    M = forms.M
    ones = np.ones(M.shape[0])
    mass = float(ones @ (M @ ones))

    def demean(u):
        return u - (float(ones @ (M @ u)) / mass)

    a = demean(profile)
    b = demean(np.asarray(w.w, dtype=float))
    na = math.sqrt(float(a @ (M @ a)))
    nb = math.sqrt(float(b @ (M @ b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ (M @ b)) / (na * nb)
