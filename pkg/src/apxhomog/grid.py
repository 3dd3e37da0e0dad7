"""Uniform tensor-product grids on a cube and their dof numberings.

Nodes and elements are ordered lexicographically with axis 0 slowest,
so every array in the package has one well-defined layout.  A periodic
grid has as many nodes per axis as elements (the wrapped node is
identified); a boundary-value grid keeps its boundary nodes and a
Dirichlet dof map drops them.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

__all__ = [
    "Grid",
    "build_grid",
    "DofMap",
    "make_dofmap",
    "element_node_table",
    "element_dof_table",
]


@dataclass(frozen=True)
class Grid:
    d: int
    cell_side: float
    origin: tuple
    nodes_per_dim: int
    layout: str  # 'periodic' | 'dirichlet'

    @property
    def cells_per_dim(self) -> int:
        return self.nodes_per_dim if self.layout == "periodic" else self.nodes_per_dim - 1

    @property
    def h(self) -> float:
        return self.cell_side / self.cells_per_dim

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_dim**self.d

    @property
    def n_elements(self) -> int:
        return self.cells_per_dim**self.d

    def axis_nodes(self, ax: int) -> np.ndarray:
        return self.origin[ax] + self.h * np.arange(self.nodes_per_dim)


def build_grid(d, cell_side, origin, nodes_per_dim, layout="periodic"):
    """Uniform grid on ``[origin, origin + cell_side]^d``.

    ``origin`` of None means the centered cell ``[-cell_side/2, ...)``.
    For the periodic layout the right/top boundary nodes are identified
    with the left/bottom ones, so ``nodes_per_dim`` equals the element
    count per axis; for the 'dirichlet' layout boundary nodes are kept
    and the element count is ``nodes_per_dim - 1``.
    """
    if d not in (1, 2):
        raise ValueError("only d = 1 and d = 2 are supported")
    if layout not in ("periodic", "dirichlet"):
        raise ValueError(f"unknown layout {layout!r}")
    if cell_side <= 0:
        raise ValueError("cell side must be positive")
    if nodes_per_dim < 3:
        raise ValueError("need at least 3 nodes per dimension")
    if origin is None:
        origin = (-0.5 * cell_side,) * d
    origin = tuple(float(o) for o in origin)
    if len(origin) != d:
        raise ValueError(f"origin must have {d} components")
    return Grid(
        d=d,
        cell_side=float(cell_side),
        origin=origin,
        nodes_per_dim=int(nodes_per_dim),
        layout=layout,
    )


@dataclass(frozen=True)
class DofMap:
    kind: str  # 'periodic' | 'dirichlet'
    grid: Grid
    dof_of_node: np.ndarray  # (n_nodes,), -1 for dropped nodes
    n_dofs: int

    def expand(self, u):
        """Dof vector -> node vector, zeros on dropped (boundary) nodes."""
        u = np.asarray(u)
        if u.shape != (self.n_dofs,):
            raise ValueError(f"expected a vector of {self.n_dofs} dofs")
        full = np.zeros(self.grid.n_nodes, dtype=u.dtype)
        keep = self.dof_of_node >= 0
        full[keep] = u[self.dof_of_node[keep]]
        return full


def make_dofmap(grid, kind):
    """Dof numbering for a grid; lexicographic over retained nodes.

    'periodic' requires a periodic grid layout (every node is a dof);
    'dirichlet' requires the dirichlet layout (boundary nodes dropped).
    """
    if kind == "periodic":
        if grid.layout != "periodic":
            raise ValueError("periodic dofs need a grid with periodic layout")
        dof = np.arange(grid.n_nodes, dtype=np.int64)
        return DofMap(kind=kind, grid=grid, dof_of_node=dof, n_dofs=grid.n_nodes)
    if kind == "dirichlet":
        if grid.layout != "dirichlet":
            raise ValueError("dirichlet dofs need a grid with dirichlet layout")
        n = grid.nodes_per_dim
        interior_1d = np.zeros(n, dtype=bool)
        interior_1d[1:-1] = True
        keep = interior_1d
        for _ in range(grid.d - 1):
            keep = keep[:, None] & interior_1d[None, :]
            keep = keep.reshape(-1)
        dof = np.full(grid.n_nodes, -1, dtype=np.int64)
        dof[keep] = np.arange(int(keep.sum()))
        return DofMap(kind=kind, grid=grid, dof_of_node=dof, n_dofs=int(keep.sum()))
    raise ValueError(f"unknown dof kind {kind!r}")


def element_node_table(grid):
    """(n_elements, 2^d) node indices of each element's corners.

    Corner order is lexicographic in the local offset (axis 0 slowest):
    d=2 gives (0,0), (0,1), (1,0), (1,1) in (i, j) offsets.
    """
    n = grid.nodes_per_dim
    c = grid.cells_per_dim
    wrap = grid.layout == "periodic"
    idx_1d = np.arange(c)
    corners = []
    for offs in product((0, 1), repeat=grid.d):
        axes = []
        for ax in range(grid.d):
            a = idx_1d + offs[ax]
            axes.append(np.mod(a, n) if wrap else a)
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = mesh[0]
        for ax in range(1, grid.d):
            flat = flat * n + mesh[ax]
        corners.append(flat.reshape(-1))
    return np.stack(corners, axis=1).astype(np.int64)


def element_dof_table(grid, dofmap):
    """(n_elements, 2^d) dof index of each corner, -1 where dropped."""
    nodes = element_node_table(grid)
    return dofmap.dof_of_node[nodes]
