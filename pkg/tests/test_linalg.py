"""Conjugate gradients and the shifted inverse-iteration eigensolver."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from apxhomog.assemble import assemble
from apxhomog.fields import make_field, periodize
from apxhomog.grid import build_grid, make_dofmap
from apxhomog.linalg import (
    SolverError,
    SparseSym,
    cg_solve,
    jacobi_preconditioner,
    smallest_eigenpairs,
    spectral_preconditioner,
)


def real_op(dense):
    return SparseSym(dense.shape[0], sp.csr_matrix(dense))


def herm_op(dense):
    return SparseSym(
        dense.shape[0],
        sp.csr_matrix(np.ascontiguousarray(dense.real)),
        sp.csr_matrix(np.ascontiguousarray(dense.imag)),
    )


def random_spd(n, seed, shift=None):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B.T @ B + (shift if shift is not None else n) * np.eye(n)
    return 0.5 * (A + A.T)


def laplacian_pencil(n, ell):
    """1d periodic stiffness/mass pair for the unit coefficient."""
    g = build_grid(1, ell, (0.0,), n, layout="periodic")
    dm = make_dofmap(g, "periodic")
    forms = assemble(g, dm, periodize(make_field(1, [["1"]]), ell))
    return real_op(forms.K.toarray()), real_op(forms.M.toarray()), forms


def test_cg_identity_single_step():
    b = np.array([1.0, -2.0, 3.0, 0.5, 0.0])
    x = cg_solve(real_op(np.eye(5)), b)
    np.testing.assert_allclose(x, b, rtol=0, atol=1e-14)


def test_cg_diagonal_system():
    x = cg_solve(real_op(np.diag([1.0, 2.0, 3.0])), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(x, np.ones(3), rtol=0, atol=1e-12)


def test_cg_singular_periodic_laplacian():
    # 1d periodic second-difference matrix, h=1: compatible rhs, the
    # mean-free solution is +-1/4 alternating
    A = np.array(
        [
            [2.0, -1.0, 0.0, -1.0],
            [-1.0, 2.0, -1.0, 0.0],
            [0.0, -1.0, 2.0, -1.0],
            [-1.0, 0.0, -1.0, 2.0],
        ]
    )
    b = np.array([1.0, -1.0, 1.0, -1.0])
    x = cg_solve(real_op(A), b, project_constants=True)
    np.testing.assert_allclose(
        x, [0.25, -0.25, 0.25, -0.25], rtol=0, atol=1e-12
    )


def test_cg_projected_solution_mean_free():
    K, M, forms = laplacian_pencil(24, 1.0)
    rng = np.random.default_rng(8)
    b = rng.standard_normal(24)
    b -= b.mean()
    x = cg_solve(K, b, project_constants=True)
    assert abs(x.mean()) <= 1e-10 * np.linalg.norm(x) / np.sqrt(x.size)


def test_cg_info_reports_converged_residual():
    A = random_spd(40, seed=1)
    b = np.arange(1.0, 41.0)
    x, info = cg_solve(real_op(A), b, tol=1e-12, return_info=True)
    assert info.iterations >= 1
    assert info.residual <= 1e-12 * np.linalg.norm(b)
    np.testing.assert_allclose(A @ x, b, rtol=1e-9)


def test_cg_strict_raises_when_out_of_iterations():
    A = random_spd(60, seed=2, shift=1e-9)
    b = np.ones(60)
    with pytest.raises(SolverError):
        cg_solve(real_op(A), b, tol=1e-16, maxit=3, strict=True)


def test_cg_non_strict_returns_best_iterate():
    A = random_spd(60, seed=2, shift=1e-9)
    b = np.ones(60)
    x = cg_solve(real_op(A), b, tol=1e-16, maxit=3, strict=False)
    assert np.all(np.isfinite(x))
    # the returned iterate is no worse than the zero start
    assert np.linalg.norm(A @ x - b) <= np.linalg.norm(b)


def test_cg_jacobi_preconditioner():
    A = np.diag(np.arange(1.0, 31.0)) + 0.01 * random_spd(30, seed=3, shift=0.0)
    b = np.ones(30)
    prec = jacobi_preconditioner(np.diag(A).copy())
    x = cg_solve(real_op(A), b, precond=prec)
    np.testing.assert_allclose(A @ x, b, rtol=1e-8)


def test_hermitian_matvec_matches_dense():
    rng = np.random.default_rng(9)
    C = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    H = 0.5 * (C + C.conj().T)
    op = herm_op(H)
    v = rng.standard_normal(2 * 12)
    out = op.matvec(v)
    dense = H @ (v[:12] + 1j * v[12:])
    np.testing.assert_allclose(out[:12], dense.real, atol=1e-12)
    np.testing.assert_allclose(out[12:], dense.imag, atol=1e-12)


def test_sparsesym_rejects_nonfinite():
    bad = np.array([[1.0, np.nan], [np.nan, 1.0]])
    with pytest.raises(ValueError):
        real_op(bad)


def test_eigen_pencil_equal_matrices():
    A = random_spd(20, seed=5)
    op = real_op(A)
    res = smallest_eigenpairs(op, op, count=2)
    for r in res:
        assert r.value == pytest.approx(1.0, rel=1e-8)


def test_eigen_2x2_diagonal():
    res = smallest_eigenpairs(
        real_op(np.diag([0.0, 3.0])), real_op(np.eye(2)), count=2
    )
    assert res[0].value == pytest.approx(0.0, abs=1e-10)
    assert res[1].value == pytest.approx(3.0, rel=1e-8)
    assert abs(res[0].vector[0]) > 0.99
    assert abs(res[1].vector[1]) > 0.99


def test_eigen_periodic_laplacian_modes():
    K, M, forms = laplacian_pencil(63, 2 * np.pi)
    res = smallest_eigenpairs(K, M, count=2, tol=1e-10)
    assert abs(res[0].value) <= 1e-8
    # first nonzero mode of the unit-coefficient ring of length 2*pi
    assert res[1].value == pytest.approx(1.0, rel=5e-3)


def test_eigen_matches_dense_oracle_real():
    n = 120
    A = random_spd(n, seed=6, shift=2.0)
    Md = np.diag(np.linspace(0.5, 1.5, n))
    got = smallest_eigenpairs(real_op(A), real_op(Md), count=3, tol=1e-10)
    ref = scipy.linalg.eigh(A, Md, eigvals_only=True)
    for k in range(3):
        assert got[k].value == pytest.approx(ref[k], rel=1e-8)


def test_eigen_matches_dense_oracle_hermitian():
    n = 60
    rng = np.random.default_rng(12)
    C = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = C.conj().T @ C + 2.0 * np.eye(n)
    got = smallest_eigenpairs(herm_op(H), herm_op(np.eye(n) + 0j * H), count=2, tol=1e-10)
    ref = np.linalg.eigvalsh(H)
    for k in range(2):
        assert got[k].value == pytest.approx(ref[k], rel=1e-8)


def test_eigen_deflation_mass_orthogonal():
    n = 80
    A = random_spd(n, seed=7, shift=1.0)
    Md = np.diag(np.linspace(0.5, 2.0, n))
    res = smallest_eigenpairs(real_op(A), real_op(Md), count=3, tol=1e-10)
    for i in range(3):
        vi = res[i].vector
        assert float(vi @ (Md @ vi)) == pytest.approx(1.0, rel=1e-8)
        for j in range(i):
            assert abs(float(vi @ (Md @ res[j].vector))) <= 1e-8


def test_eigen_residual_contract():
    """Relative residual bound, or the working-precision floor at zero modes."""
    K, M, forms = laplacian_pencil(32, 1.0)
    tol = 1e-8
    res = smallest_eigenpairs(K, M, count=2, tol=tol)
    knorm = np.abs(K.real.toarray()).sum(axis=1).max()
    for r in res:
        kv = K.matvec(r.vector)
        mv = M.matvec(r.vector)
        lhs = np.linalg.norm(kv - r.value * mv)
        scale = np.linalg.norm(kv) + abs(r.value) * np.linalg.norm(mv)
        floor = 64.0 * np.finfo(float).eps * knorm * np.linalg.norm(r.vector)
        assert lhs <= max(tol * scale, floor)


def test_spectral_preconditioner_constant_field_fast():
    ell = 1.0
    g = build_grid(2, ell, None, 12, layout="periodic")
    dm = make_dofmap(g, "periodic")
    forms = assemble(g, dm, periodize(make_field(2, [["2", "0"], ["0", "2"]]), ell))
    K = real_op(forms.K.toarray())
    prec = spectral_preconditioner(g, "periodic", (2.0, 2.0))
    rng = np.random.default_rng(13)
    b = rng.standard_normal(dm.n_dofs)
    b -= b.mean()
    x, info = cg_solve(
        K, b, project_constants=True, precond=prec, return_info=True
    )
    # the transform diagonalizes the constant-coefficient operator, so
    # convergence takes a handful of iterations, not O(n^(1/2))
    assert info.iterations <= 5
    resid = np.linalg.norm(forms.K @ x - b)
    assert resid <= 1e-8 * np.linalg.norm(b)
