"""Structured grid layout and degree-of-freedom numbering."""

from __future__ import annotations

import numpy as np
import pytest

from apxhomog.grid import (
    build_grid,
    element_dof_table,
    element_node_table,
    make_dofmap,
)


def test_1d_dirichlet_three_nodes():
    g = build_grid(1, 1.0, (0.0,), 3, layout="dirichlet")
    np.testing.assert_array_equal(g.axis_nodes(0), [0.0, 0.5, 1.0])
    assert g.h == 0.5
    assert g.n_nodes == 3
    assert make_dofmap(g, "dirichlet").n_dofs == 1


def test_2d_periodic_cell():
    ell = 2 * np.pi
    g = build_grid(2, ell, None, 4, layout="periodic")
    assert g.h == pytest.approx(np.pi / 2)
    assert g.n_nodes == 16
    assert g.n_elements == 16
    # centered cell by default
    assert g.origin == (-np.pi, -np.pi)
    assert make_dofmap(g, "periodic").n_dofs == 16


def test_1d_periodic_three_nodes():
    g = build_grid(1, 1.0, (0.0,), 3, layout="periodic")
    assert make_dofmap(g, "periodic").n_dofs == 3
    assert g.h == pytest.approx(1.0 / 3.0)


def test_dirichlet_interior_dof_count():
    g = build_grid(2, 1.0, (0.0, 0.0), 5, layout="dirichlet")
    dm = make_dofmap(g, "dirichlet")
    assert dm.n_dofs == (5 - 2) ** 2
    # boundary nodes carry no dof
    assert dm.dof_of_node.min() == -1


def test_periodic_dof_count_scales():
    for n in (3, 4, 7):
        g = build_grid(2, 1.0, None, n, layout="periodic")
        assert make_dofmap(g, "periodic").n_dofs == n * n


def test_element_tables_shapes():
    g = build_grid(2, 1.0, (0.0, 0.0), 4, layout="dirichlet")
    ent = element_node_table(g)
    assert ent.shape == (9, 4)
    assert ent.min() >= 0 and ent.max() < g.n_nodes
    dm = make_dofmap(g, "dirichlet")
    edt = element_dof_table(g, dm)
    assert edt.shape == (9, 4)
    # corner elements touch boundary nodes, marked by -1
    assert edt.min() == -1
    assert edt.max() == dm.n_dofs - 1


def test_periodic_wrap_in_element_table():
    g = build_grid(1, 1.0, (0.0,), 4, layout="periodic")
    ent = element_node_table(g)
    # last element wraps to node 0
    assert ent.shape == (4, 2)
    assert ent[-1, 1] == 0


def test_too_few_nodes_rejected():
    with pytest.raises(ValueError):
        build_grid(1, 1.0, (0.0,), 2, layout="dirichlet")
