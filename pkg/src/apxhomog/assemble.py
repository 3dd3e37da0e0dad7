"""Q1 finite element assembly on structured grids.

Stiffness, mass, and cell-problem load vectors are assembled with
tensor-product 2-point Gauss quadrature per axis and the coefficient
sampled at quadrature points.  Assembly is structural: per-element
matrices are computed for the upper-triangle basis pairs and mirrored,
then scattered by corner offset, so the global stiffness is bitwise
symmetric without post-symmetrization.  Scalar-times-identity
coefficients take a leaner path that never materializes the full
(d, d) coefficient blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from itertools import product

import numpy as np
import scipy.sparse as sp

from . import kernels
from .expr import evaluate
from .grid import DofMap, Grid, element_node_table

__all__ = [
    "AssembledForms",
    "assemble",
    "cell_average",
    "flux_average",
    "grad_at_quadrature",
    "quadrature_coords",
    "energy_product",
    "dump_forms",
]

_CHUNK = 1 << 18  # elements per coefficient-evaluation chunk

_G0 = 0.5 * (1.0 - 1.0 / np.sqrt(3.0))
_G1 = 0.5 * (1.0 + 1.0 / np.sqrt(3.0))


def _tables(d):
    """Reference-cell tables: corner offsets, quadrature, basis values.

    Corner order matches grid.element_node_table (lexicographic in the
    offset, axis 0 slowest).  Quadrature points use the same product
    order.  Weights sum to 1 (unit reference volume).
    """
    corners = list(product((0, 1), repeat=d))
    qpts = np.array(list(product((_G0, _G1), repeat=d)))  # (nq, d)
    w = np.full(qpts.shape[0], 0.5**d)
    nloc = len(corners)
    phi = np.empty((qpts.shape[0], nloc))
    dphi = np.empty((qpts.shape[0], nloc, d))
    for m, offs in enumerate(corners):
        vals = np.ones(qpts.shape[0])
        for ax in range(d):
            t = qpts[:, ax]
            vals = vals * (t if offs[ax] else 1.0 - t)
        phi[:, m] = vals
        for ax in range(d):
            g = np.ones(qpts.shape[0])
            for bx in range(d):
                t = qpts[:, bx]
                if bx == ax:
                    g = g * (1.0 if offs[bx] else -1.0)
                else:
                    g = g * (t if offs[bx] else 1.0 - t)
            dphi[:, m, ax] = g
    return corners, qpts, w, phi, dphi


@dataclass
class AssembledForms:
    """Assembled bilinear/linear forms on one grid and dof map.

    K is the stiffness of the coefficient field, M the consistent mass,
    loads[p] the cell-problem right-hand side for coordinate direction
    p+1.  The operator actually solved is K + tinv*M.
    """

    grid: Grid
    dofmap: DofMap
    field: object
    tinv: float
    K: sp.csr_matrix
    M: sp.csr_matrix
    loads: np.ndarray  # (d, n_dofs)
    corners: list
    qpts: np.ndarray
    qweights: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    enodes: np.ndarray = dc_field(repr=False, default=None)
    _sqp: np.ndarray | None = dc_field(repr=False, default=None)
    _aqp: np.ndarray | None = dc_field(repr=False, default=None)
    _op: sp.csr_matrix | None = dc_field(repr=False, default=None)

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_side**self.grid.d

    def operator(self) -> sp.csr_matrix:
        if self._op is None:
            self._op = self.K if self.tinv == 0.0 else (self.K + self.tinv * self.M).tocsr()
        return self._op


def quadrature_coords(grid):
    """Physical coordinates of all quadrature points -> d arrays (ne, nq)."""
    _, qpts, _, _, _ = _tables(grid.d)
    c = grid.cells_per_dim
    nq = qpts.shape[0]
    idx = np.arange(c, dtype=float)
    out = []
    for ax in range(grid.d):
        shape_e = [1] * grid.d
        shape_e[ax] = c
        base = idx.reshape(shape_e)
        coord = grid.origin[ax] + (
            np.broadcast_to(base[..., None], tuple([c] * grid.d) + (nq,))
            + qpts[:, ax]
        ) * grid.h
        out.append(coord.reshape(grid.n_elements, nq))
    return tuple(out)


def _eval_coefficient(grid, field):
    """Coefficient at quadrature points, chunked over elements.

    Returns (sqp, aqp): for scalar-times-identity fields sqp is
    (ne, nq) and aqp is None; otherwise sqp is None and aqp is
    (ne, nq, d, d).
    """
    coords = quadrature_coords(grid)
    ne, nq = coords[0].shape
    if field.is_scalar:
        sqp = np.empty((ne, nq))
        for lo in range(0, ne, _CHUNK):
            hi = min(lo + _CHUNK, ne)
            chunk = tuple(cc[lo:hi] for cc in coords)
            sqp[lo:hi] = np.broadcast_to(
                _scalar_entry_eval(field, chunk), (hi - lo, nq)
            )
        return sqp, None
    aqp = np.empty((ne, nq, grid.d, grid.d))
    for lo in range(0, ne, _CHUNK):
        hi = min(lo + _CHUNK, ne)
        chunk = tuple(cc[lo:hi] for cc in coords)
        aqp[lo:hi] = field.entries_at(chunk)
    return None, aqp


def _scalar_entry_eval(field, coords):
    """Evaluate the (1,1) entry of a scalar-times-identity field."""
    base = field.base if hasattr(field, "base") else field
    if hasattr(field, "fold"):
        coords = field.fold(coords)
    return evaluate(base.entries[0][0], coords)


def _scatter_to_nodes(grid, elem_vals, offs, acc):
    """acc[node] += elem_vals[element with base corner at node - offs]."""
    d = grid.d
    c = grid.cells_per_dim
    eg = elem_vals.reshape((c,) * d)
    if grid.layout == "periodic":
        acc += np.roll(eg, shift=offs, axis=tuple(range(d)))
    else:
        sl = tuple(slice(o, o + c) for o in offs)
        acc[sl] += eg


def _neighbor_cols(grid, delta):
    """Flat node index of node + delta per node; -1 when off the grid."""
    n = grid.nodes_per_dim
    d = grid.d
    axes = []
    valid = None
    for ax in range(d):
        a = np.arange(n) + delta[ax]
        if grid.layout == "periodic":
            a = np.mod(a, n)
            ok = np.ones(n, dtype=bool)
        else:
            ok = (a >= 0) & (a < n)
            a = np.clip(a, 0, n - 1)
        shape = [1] * d
        shape[ax] = n
        axes.append(a.reshape(shape))
        valid = ok.reshape(shape) if valid is None else valid & ok.reshape(shape)
    flat = axes[0]
    for ax in range(1, d):
        flat = flat * n + axes[ax]
    flat = np.broadcast_to(flat, (n,) * d).reshape(-1).copy()
    valid = np.broadcast_to(valid, (n,) * d).reshape(-1)
    flat[~valid] = -1
    return flat


def _local_stiffness_pairs(grid, field, sqp, aqp, corners, w, dphi):
    """(ne, nloc, nloc) per-element stiffness, mirrored bitwise."""
    d = grid.d
    nloc = len(corners)
    ne = grid.n_elements
    h = grid.h
    vol = h**d
    out = np.empty((ne, nloc, nloc))
    if sqp is not None:
        # scalar coefficient: contraction reduces to grad_i . grad_j
        for i in range(nloc):
            for j in range(i, nloc):
                cq = (w * np.einsum("qk,qk->q", dphi[:, i, :], dphi[:, j, :])) * (
                    vol / (h * h)
                )
                vals = sqp @ cq
                out[:, i, j] = vals
                if j != i:
                    out[:, j, i] = vals
        return out
    pairs = [(i, j) for i in range(nloc) for j in range(i, nloc)]
    pairprod = np.empty((w.size, len(pairs), d, d))
    for p, (i, j) in enumerate(pairs):
        pairprod[:, p] = dphi[:, i, :, None] * dphi[:, j, None, :]
    pairprod *= vol / (h * h)
    for lo in range(0, ne, _CHUNK):
        hi = min(lo + _CHUNK, ne)
        vals = kernels.local_stiffness(
            np.ascontiguousarray(aqp[lo:hi]), pairprod, w
        )
        for p, (i, j) in enumerate(pairs):
            out[lo:hi, i, j] = vals[:, p]
            if j != i:
                out[lo:hi, j, i] = vals[:, p]
    return out


def _local_mass(grid, corners, w, phi):
    nloc = len(corners)
    vol = grid.h**grid.d
    m = np.empty((nloc, nloc))
    for i in range(nloc):
        for j in range(nloc):
            m[i, j] = vol * float(np.sum(w * phi[:, i] * phi[:, j]))
    return m


def _local_loads(grid, sqp, aqp, corners, w, dphi):
    """(d, ne, nloc) load contributions -int A e_p . grad phi_i."""
    d = grid.d
    nloc = len(corners)
    ne = grid.n_elements
    h = grid.h
    scale = h**d / h
    out = np.empty((d, ne, nloc))
    if sqp is not None:
        for p in range(d):
            for i in range(nloc):
                cq = -(w * dphi[:, i, p]) * scale
                out[p, :, i] = sqp @ cq
        return out
    for p in range(d):
        for lo in range(0, ne, _CHUNK):
            hi = min(lo + _CHUNK, ne)
            out[p, lo:hi] = kernels.local_load(
                np.ascontiguousarray(aqp[lo:hi]), dphi, w, p
            ) * scale
    return out


def _stencil_matrix(grid, dofmap, local_full):
    """Global sparse matrix from per-element (nloc, nloc) blocks.

    local_full: (ne, nloc, nloc), bitwise symmetric blocks.  Entries are
    accumulated per column-offset class, which keeps memory at a few
    arrays of node size and gives a deterministic summation order.
    """
    d = grid.d
    corners, _, _, _, _ = _tables(d)
    nloc = len(corners)
    node_shape = (grid.nodes_per_dim,) * d
    acc = {}
    for i in range(nloc):
        for j in range(nloc):
            delta = tuple(corners[j][ax] - corners[i][ax] for ax in range(d))
            if delta not in acc:
                acc[delta] = np.zeros(node_shape)
            _scatter_to_nodes(grid, local_full[:, i, j], corners[i], acc[delta])
    deltas = sorted(acc)
    n_nodes = grid.n_nodes
    dof = dofmap.dof_of_node
    rows_parts = []
    cols_parts = []
    vals_parts = []
    for delta in deltas:
        cols_node = _neighbor_cols(grid, delta)
        coldof = np.where(cols_node >= 0, dof[cols_node], -1)
        ok = (dof >= 0) & (coldof >= 0)
        rows_parts.append(dof[ok])
        cols_parts.append(coldof[ok])
        vals_parts.append(acc[delta].reshape(-1)[ok])
    n = dofmap.n_dofs
    mat = sp.coo_matrix(
        (
            np.concatenate(vals_parts),
            (np.concatenate(rows_parts), np.concatenate(cols_parts)),
        ),
        shape=(n, n),
    ).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble(grid, dofmap, field, tinv=0.0):
    """Assemble stiffness, mass, and the d cell-problem loads.

    ``field`` is a coefficient field (periodized or not) whose dimension
    matches the grid; ``tinv`` is the zero-order regularization weight.
    The returned forms keep the coefficient samples for reuse by the
    averaging functionals.
    """
    if field.d != grid.d:
        raise ValueError(
            f"field dimension {field.d} does not match grid dimension {grid.d}"
        )
    if tinv < 0:
        raise ValueError("regularization weight tinv must be nonnegative")
    corners, qpts, w, phi, dphi = _tables(grid.d)
    sqp, aqp = _eval_coefficient(grid, field)
    local_k = _local_stiffness_pairs(grid, field, sqp, aqp, corners, w, dphi)
    K = _stencil_matrix(grid, dofmap, local_k)
    del local_k
    mloc = _local_mass(grid, corners, w, phi)
    local_m = np.broadcast_to(mloc, (grid.n_elements,) + mloc.shape)
    M = _stencil_matrix(grid, dofmap, local_m)
    floc = _local_loads(grid, sqp, aqp, corners, w, dphi)
    node_shape = (grid.nodes_per_dim,) * grid.d
    loads = np.empty((grid.d, dofmap.n_dofs))
    keep = dofmap.dof_of_node >= 0
    for p in range(grid.d):
        acc = np.zeros(node_shape)
        for i, offs in enumerate(corners):
            _scatter_to_nodes(grid, floc[p, :, i], offs, acc)
        flat = acc.reshape(-1)
        loads[p, dofmap.dof_of_node[keep]] = flat[keep]
    enodes = element_node_table(grid)
    return AssembledForms(
        grid=grid,
        dofmap=dofmap,
        field=field,
        tinv=float(tinv),
        K=K,
        M=M,
        loads=loads,
        corners=corners,
        qpts=qpts,
        qweights=w,
        phi=phi,
        dphi=dphi,
        enodes=enodes,
        _sqp=sqp,
        _aqp=aqp,
    )


def _node_values(grid, dofmap, u):
    """Accept a dof-sized or node-sized vector; return node values."""
    u = np.asarray(u, dtype=float)
    if u.shape == (dofmap.n_dofs,):
        return dofmap.expand(u)
    if u.shape == (grid.n_nodes,):
        return u
    raise ValueError(
        f"expected {dofmap.n_dofs} dof values or {grid.n_nodes} node values, "
        f"got shape {u.shape}"
    )


def cell_average(grid, dofmap, u):
    """(1/|Y|) integral of the Q1 interpolant, by assembly quadrature.

    ``u`` may be dof-sized (dropped boundary nodes count as zero) or
    node-sized.
    """
    corners, _, w, phi, _ = _tables(grid.d)
    nodal = _node_values(grid, dofmap, u)
    enodes = element_node_table(grid)
    uc = nodal[enodes]  # (ne, nloc)
    per_elem = uc @ (phi.T @ w)
    return float(per_elem.sum()) * grid.h**grid.d / grid.cell_side**grid.d


def grad_at_quadrature(grid, dofmap, u, enodes=None, dphi=None):
    """Gradient of the interpolant at quadrature points -> (ne, nq, d)."""
    if dphi is None:
        _, _, _, _, dphi = _tables(grid.d)
    nodal = _node_values(grid, dofmap, u)
    if enodes is None:
        enodes = element_node_table(grid)
    uc = nodal[enodes]
    return np.einsum("ei,qik->eqk", uc, dphi, optimize=True) / grid.h


def energy_product(forms, gk, gl, eweights=None):
    """sum_e ew_e sum_q w_q h^d (gk . A gl) over the forms' coefficient."""
    w = forms.qweights * forms.grid.h**forms.grid.d
    if forms._sqp is not None:
        gks = gk * forms._sqp[:, :, None]
        return kernels.energy_bilinear(None, np.ascontiguousarray(gks),
                                       np.ascontiguousarray(gl), w, eweights)
    return kernels.energy_bilinear(
        forms._aqp, np.ascontiguousarray(gk), np.ascontiguousarray(gl), w, eweights
    )


def _entry_average(forms, k, l):
    """Cell average of coefficient entry a_{kl} (1-based indices)."""
    w = forms.qweights * forms.grid.h**forms.grid.d
    if forms._sqp is not None:
        if k != l:
            return 0.0
        total = float((forms._sqp @ w).sum())
    else:
        total = float((forms._aqp[:, :, k - 1, l - 1] @ w).sum())
    return total / forms.cell_volume


def flux_average(grid, dofmap, field, w_vec, k, l, forms=None):
    """(1/|Y|) integral of (A grad w)_k for the direction-l corrector.

    ``k`` and ``l`` are 1-based coordinate labels.  ``forms`` reuses an
    existing assembly's coefficient samples; otherwise the coefficient
    is re-evaluated.
    """
    if not 1 <= k <= grid.d:
        raise ValueError(f"axis k must be in 1..{grid.d}")
    if not 1 <= l <= grid.d:
        raise ValueError(f"direction l must be in 1..{grid.d}")
    if forms is None:
        forms = assemble(grid, dofmap, field, tinv=0.0)
    gw = grad_at_quadrature(grid, dofmap, w_vec, forms.enodes, forms.dphi)
    w = forms.qweights * grid.h**grid.d
    if forms._sqp is not None:
        total = np.einsum(
            "eq,eq,q->", forms._sqp, gw[:, :, k - 1], w, optimize=True
        )
    else:
        total = np.einsum(
            "eqp,eqp,q->", forms._aqp[:, :, k - 1, :], gw, w, optimize=True
        )
    return float(total) / forms.cell_volume


def dump_forms(forms, path):
    """Plain-text coordinate dump of K, M, and the load vectors."""
    with open(path, "w", encoding="utf-8") as fh:
        for tag, mat in (("K", forms.K), ("M", forms.M)):
            coo = mat.tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{tag} {r} {c} {v!r}\n")
        for p in range(forms.grid.d):
            for i, v in enumerate(forms.loads[p]):
                fh.write(f"F{p + 1} {i} {v!r}\n")
