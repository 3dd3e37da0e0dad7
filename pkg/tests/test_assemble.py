"""Bilinear form assembly on the structured grid."""

from __future__ import annotations

import numpy as np
import pytest

from apxhomog.assemble import (
    assemble,
    cell_average,
    energy_product,
    flux_average,
    grad_at_quadrature,
)
from apxhomog.cell import MeshParams, solve_corrector
from apxhomog.fields import make_field, periodize
from apxhomog.grid import build_grid, make_dofmap


def constant_forms(c=1.0, d=2, n=5, layout="periodic", ell=1.0):
    g = build_grid(d, ell, None, n, layout=layout)
    dm = make_dofmap(g, layout)
    entries = [[str(c) if i == j else "0" for j in range(d)] for i in range(d)]
    pf = periodize(make_field(d, entries), ell)
    return g, dm, assemble(g, dm, pf)


def test_1d_dirichlet_single_dof_stiffness():
    g = build_grid(1, 1.0, (0.0,), 3, layout="dirichlet")
    dm = make_dofmap(g, "dirichlet")
    pf = periodize(make_field(1, [["1"]]), 1.0)
    forms = assemble(g, dm, pf)
    np.testing.assert_array_equal(forms.K.toarray(), [[4.0]])


def test_constants_in_stiffness_kernel():
    g, dm, forms = constant_forms(c=2.5, n=7)
    ones = np.ones(dm.n_dofs)
    resid = np.abs(forms.K @ ones).max()
    assert resid <= 1e-12 * np.abs(forms.K.data).max()


def test_loads_vanish_for_constant_coefficient():
    g, dm, forms = constant_forms(c=3.0, n=6)
    for load in forms.loads:
        assert np.all(np.asarray(load) == 0.0)


def test_stiffness_bitwise_symmetric():
    a1 = periodize(
        make_field(2, [["2 + sin(2*pi*x)", "0"], ["0", "2 + cos(2*pi*y)"]]),
        1.0,
    )
    g = build_grid(2, 1.0, None, 9, layout="periodic")
    dm = make_dofmap(g, "periodic")
    forms = assemble(g, dm, a1)
    diff = (forms.K - forms.K.T).tocsr()
    assert diff.nnz == 0 or np.abs(diff.data).max() == 0.0


def test_stiffness_positive_semidefinite():
    g, dm, forms = constant_forms(c=1.0, n=4)
    eigs = np.linalg.eigvalsh(forms.K.toarray())
    assert eigs.min() >= -1e-12 * eigs.max()


def test_mass_total_is_cell_volume():
    ell = 2 * np.pi
    g, dm, forms = constant_forms(c=1.0, n=9, ell=ell)
    ones = np.ones(dm.n_dofs)
    total = float(ones @ (forms.M @ ones))
    assert total == pytest.approx(ell**2, rel=1e-12)


def test_mass_not_lumped_rows_positive():
    g, dm, forms = constant_forms(c=1.0, n=6)
    M = forms.M.tocsr()
    offdiag = M.copy()
    offdiag.setdiag(0.0)
    offdiag.eliminate_zeros()
    assert offdiag.nnz > 0
    rowsums = np.asarray(M.sum(axis=1)).ravel()
    assert np.all(rowsums > 0.0)


def test_zero_order_term_adds_mass():
    g = build_grid(1, 1.0, (0.0,), 5, layout="periodic")
    dm = make_dofmap(g, "periodic")
    pf = periodize(make_field(1, [["1"]]), 1.0)
    plain = assemble(g, dm, pf, tinv=0.0)
    reg = assemble(g, dm, pf, tinv=0.5)
    dev = np.abs((reg.K - (plain.K + 0.5 * plain.M)).data)
    assert dev.size == 0 or dev.max() <= 1e-14


def test_affine_gradient_reproduced_per_element():
    # nodal interpolant of x on [0,1): interior elements carry slope 1 exactly
    g = build_grid(1, 1.0, (0.0,), 5, layout="dirichlet")
    dm = make_dofmap(g, "dirichlet")
    u = g.axis_nodes(0)[1:-1]
    gq = grad_at_quadrature(g, dm, u)
    assert gq.shape == (4, 2, 1)
    assert np.all(gq[1:3] == 1.0)


def test_energy_of_uniform_gradient_exact():
    c, ell = 2.25, 1.5
    g, dm, forms = constant_forms(c=c, n=7, ell=ell)
    xi = np.array([0.6, -0.8])
    ne = g.n_elements
    nq = forms.qweights.size
    grad = np.broadcast_to(xi, (ne, nq, 2)).copy()
    energy = energy_product(forms, grad, grad)
    exact = c * float(xi @ xi) * ell**2
    assert energy == pytest.approx(exact, rel=1e-10)


def test_cell_average_of_ones():
    g, dm, forms = constant_forms(c=1.0, n=6)
    assert cell_average(g, dm, np.ones(dm.n_dofs)) == pytest.approx(1.0, rel=1e-14)


def test_cell_average_of_periodic_sine():
    ell = 2.0
    g = build_grid(1, ell, (0.0,), 16, layout="periodic")
    dm = make_dofmap(g, "periodic")
    u = np.sin(2 * np.pi * g.axis_nodes(0)[:-1] / ell)
    assert abs(cell_average(g, dm, u)) <= 1e-12


def test_cell_average_accepts_node_or_dof_vectors():
    g = build_grid(1, 1.0, (0.0,), 5, layout="dirichlet")
    dm = make_dofmap(g, "dirichlet")
    xfull = g.axis_nodes(0)
    # full nodal interpolant of x integrates to 1/2 exactly
    assert cell_average(g, dm, xfull) == pytest.approx(0.5, abs=1e-15)
    # a dof-length vector is extended by the homogeneous boundary values
    assert cell_average(g, dm, xfull[1:-1]) == pytest.approx(0.375, abs=1e-15)


def test_flux_average_zero_corrector():
    g = build_grid(1, 1.0, (0.0,), 8, layout="periodic")
    dm = make_dofmap(g, "periodic")
    pf = periodize(make_field(1, [["2 + sin(2*pi*x)"]]), 1.0)
    fa = flux_average(g, dm, pf, np.zeros(dm.n_dofs), 1, 1)
    assert abs(fa) <= 1e-15


def test_flux_average_shift_invariant():
    pf = periodize(make_field(1, [["2 + sin(2*pi*x)"]]), 1.0)
    g = build_grid(1, 1.0, (0.0,), 16, layout="periodic")
    dm = make_dofmap(g, "periodic")
    rng = np.random.default_rng(5)
    w = rng.standard_normal(dm.n_dofs)
    a = flux_average(g, dm, pf, w, 1, 1)
    b = flux_average(g, dm, pf, w + 7.25, 1, 1)
    assert a == pytest.approx(b, abs=1e-12)


def test_flux_average_matches_harmonic_mean_deficit():
    """Solved 1d corrector: the flux correction equals sqrt(3) - 2."""
    fld = make_field(1, [["2 + sin(2*pi*x)"]], period_hint=1.0)
    c = solve_corrector(fld, MeshParams(nodes_per_unit=200.0), 1, ell=1.0)
    fa = flux_average(c.grid, c.dofmap, periodize(fld, 1.0), c.w, 1, 1)
    assert fa == pytest.approx(np.sqrt(3.0) - 2.0, abs=1e-4)


def test_refined_mesh_moves_tensor_little(a1):
    from apxhomog.cell import solve_cell_problems, tensor_energy

    vals = []
    for npu in (50.0, 100.0):
        fam = solve_cell_problems(a1, MeshParams(nodes_per_unit=npu), ell=1.0)
        vals.append(np.diag(tensor_energy(a1, fam).entries))
    rel = np.abs(vals[1] - vals[0]) / np.abs(vals[1])
    assert rel.max() < 0.005
