"""Shared fixtures: coefficient fields and one small solved corrector family.

Session scope keeps the expensive objects (solved cell problems) shared
across test modules; everything here is deterministic, so sharing is safe.
"""

from __future__ import annotations

import numpy as np
import pytest

from apxhomog.cell import MeshParams, solve_cell_problems
from apxhomog.fields import builtin, make_field

# Periodic unit-cell tensor of the first builtin at nodes_per_unit=400,
# frozen from a dedicated fine-mesh run; used as the accuracy yardstick
# wherever a converged reference is needed without recomputing it.
A1_UNIT_CELL = np.array(
    [[2.75682449, -0.00244280], [-0.00244280, 3.42487410]]
)


@pytest.fixture(scope="session")
def a1():
    return builtin("A1")


@pytest.fixture(scope="session")
def a2():
    return builtin("A2")


@pytest.fixture(scope="session")
def a3():
    return builtin("A3")


@pytest.fixture(scope="session")
def laminate():
    """Scalar coefficient varying in the first coordinate only."""
    expr = "2 + sin(2*pi*x)"
    return make_field(
        2, [[expr, "0"], ["0", expr]], period_hint=(1.0, 1.0), name="laminate"
    )


@pytest.fixture(scope="session")
def ident():
    return make_field(
        2, [["1", "0"], ["0", "1"]], period_hint=(1.0, 1.0), name="Id"
    )


@pytest.fixture(scope="session")
def d1_field():
    return make_field(1, [["2 + sin(2*pi*x)"]], period_hint=(1.0,), name="d1")


@pytest.fixture(scope="session")
def coarse_mesh():
    return MeshParams(nodes_per_unit=8.0)


@pytest.fixture(scope="session")
def a1_family(a1, coarse_mesh):
    """Periodic correctors for A1 on the cell of side 2*pi at a coarse mesh."""
    return solve_cell_problems(a1, coarse_mesh, bc="periodic", ell=2 * np.pi)


@pytest.fixture(scope="session")
def a1_unit_ref(a1):
    """Cheap unit-cell tensor for A1, good to about 1e-3."""
    from apxhomog.study import unit_cell_reference

    return unit_cell_reference(a1, nodes_per_unit=32.0)
