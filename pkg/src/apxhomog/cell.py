"""Cell problems and homogenized-tensor extraction.

Four problem variants share one code path: periodic or Dirichlet dof
maps, with or without the zero-order regularization term.  Tensors come
in a flux form (entry average plus corrector flux, with the zero-order
compensation for regularized problems so flux and energy agree
algebraically) and an energy form (quadratic averages, off-diagonals by
polarization, symmetric by construction).  A windowed variant averages
the regularized corrector's energy over an inner sub-cube only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .assemble import (
    assemble,
    cell_average,
    energy_product,
    flux_average,
    grad_at_quadrature,
    _entry_average,
)
from .fields import PeriodizedField, periodize
from .grid import build_grid, make_dofmap
from .linalg import cg_solve, spectral_preconditioner

__all__ = [
    "MeshParams",
    "Corrector",
    "HomTensor",
    "solve_corrector",
    "solve_cell_problems",
    "tensor_flux",
    "tensor_energy",
    "tensor_window",
    "corrector_difference",
    "reference_tensor",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MeshParams:
    """Mesh-size policy for cell problems.

    ``nodes_per_unit`` fixes elements per unit length (element count
    round(ell * nodes_per_unit)); the 'quadratic' preset instead uses
    100 + R^2 points per dimension (R = ell/2pi), growing the point
    budget with the cell radius.
    """

    nodes_per_unit: float = 100.0
    preset: str | None = None

    def cells_for(self, ell) -> int:
        if self.preset is None:
            cells = int(round(ell * self.nodes_per_unit))
        elif self.preset == "quadratic":
            r = ell / TWO_PI
            cells = int(round(100.0 + r * r))
        else:
            raise ValueError(f"unknown mesh preset {self.preset!r}")
        return max(cells, 3)

    def effective_nodes_per_unit(self, ell) -> float:
        return self.cells_for(ell) / ell


@dataclass
class Corrector:
    """One cell-problem solution with its solve diagnostics."""

    direction: int  # 1-based coordinate direction
    bc: str  # 'periodic' | 'dirichlet'
    tinv: float
    grid: object
    dofmap: object
    w: np.ndarray
    residual: float
    iterations: int
    forms: object = dc_field(repr=False, default=None)


@dataclass
class HomTensor:
    """Constant effective tensor with the provenance of its computation."""

    entries: np.ndarray  # (d, d)
    scheme: str  # 'P' | 'PT' | 'D' | 'DT' | 'window'
    form: str  # 'flux' | 'energy'
    ell: float
    tinv: float
    nodes_per_unit: float
    meta: dict = dc_field(default_factory=dict)

    @property
    def R(self) -> float:
        return self.ell / TWO_PI

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "form": self.form,
            "ell": self.ell,
            "R": self.R,
            "Tinv": self.tinv,
            "nodes_per_unit": self.nodes_per_unit,
            "entries": [[float(v) for v in row] for row in self.entries],
        }


def _scheme_tag(bc, tinv):
    if bc == "periodic":
        return "P" if tinv == 0.0 else "PT"
    return "D" if tinv == 0.0 else "DT"


def _as_periodized(field, ell=None):
    if isinstance(field, PeriodizedField):
        if ell is not None and not math.isclose(field.ell, ell):
            raise ValueError(
                f"field is periodized with cell side {field.ell}, not {ell}"
            )
        return field
    if ell is None:
        raise ValueError("a plain coefficient field needs an explicit cell side")
    return periodize(field, ell)


def _build_system(pfield, mesh, bc, tinv):
    cells = mesh.cells_for(pfield.ell)
    if bc == "periodic":
        grid = build_grid(pfield.d, pfield.ell, pfield.origin, cells, "periodic")
    elif bc == "dirichlet":
        grid = build_grid(pfield.d, pfield.ell, pfield.origin, cells + 1, "dirichlet")
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    dofmap = make_dofmap(grid, bc)
    forms = assemble(grid, dofmap, pfield, tinv=tinv)
    c_axes = [_entry_average(forms, ax + 1, ax + 1) for ax in range(grid.d)]
    precond = spectral_preconditioner(grid, bc, c_axes, zero_order=tinv)
    return forms, precond


def _solve_direction(forms, precond, l, cg_tol, cg_maxit):
    bc = forms.dofmap.kind
    project = bc == "periodic" and forms.tinv == 0.0
    b = forms.loads[l - 1]
    w, info = cg_solve(
        forms.operator(),
        b,
        tol=cg_tol,
        maxit=cg_maxit,
        project_constants=project,
        precond=precond,
        return_info=True,
    )
    return Corrector(
        direction=l,
        bc=bc,
        tinv=forms.tinv,
        grid=forms.grid,
        dofmap=forms.dofmap,
        w=w,
        residual=info.residual,
        iterations=info.iterations,
        forms=forms,
    )


def _cg_maxit(grid):
    return 400 + 60 * grid.cells_per_dim


def solve_corrector(field, mesh, l, bc="periodic", tinv=0.0, ell=None, cg_tol=1e-10):
    """Solve one cell problem for coordinate direction ``l`` (1-based).

    ``field`` is a periodized field, or a plain field with ``ell``
    given.  The discrete system is (K + tinv*M) w = F[l]; the periodic
    unregularized problem is solved with constant projection and
    returns a mean-zero dof vector.
    """
    pfield = _as_periodized(field, ell)
    if not 1 <= l <= pfield.d:
        raise ValueError(f"direction l must be in 1..{pfield.d}")
    if tinv < 0:
        raise ValueError("tinv must be nonnegative")
    forms, precond = _build_system(pfield, mesh, bc, tinv)
    return _solve_direction(forms, precond, l, cg_tol, _cg_maxit(forms.grid))


def solve_cell_problems(field, mesh, bc="periodic", tinv=0.0, ell=None, cg_tol=1e-10):
    """All d correctors on one shared assembly -> list of Corrector."""
    pfield = _as_periodized(field, ell)
    forms, precond = _build_system(pfield, mesh, bc, tinv)
    maxit = _cg_maxit(forms.grid)
    return [
        _solve_direction(forms, precond, l, cg_tol, maxit)
        for l in range(1, pfield.d + 1)
    ]


def _check_family(correctors):
    d = correctors[0].grid.d
    if len(correctors) != d:
        raise ValueError(f"need {d} correctors, one per direction")
    dirs = sorted(c.direction for c in correctors)
    if dirs != list(range(1, d + 1)):
        raise ValueError("correctors must cover directions 1..d exactly once")
    first = correctors[0]
    for c in correctors[1:]:
        if (
            c.grid != first.grid
            or c.bc != first.bc
            or c.tinv != first.tinv
        ):
            raise ValueError("correctors were computed on different systems")
    return sorted(correctors, key=lambda c: c.direction)


def _forms_of(correctors, field):
    c = correctors[0]
    if c.forms is not None:
        return c.forms
    pfield = _as_periodized(field, c.grid.cell_side)
    return assemble(c.grid, c.dofmap, pfield, tinv=c.tinv)


def _npu_of(grid):
    return grid.cells_per_dim / grid.cell_side


def tensor_flux(field, correctors):
    """Effective tensor, flux form: entry average plus corrector flux.

    For regularized problems the zero-order compensation
    −tinv·avg(w_k w_l) is included, which makes the flux form agree
    with the energy form identically for the discrete solution and
    reduces to the plain flux formula at tinv = 0.
    """
    cs = _check_family(correctors)
    forms = _forms_of(cs, field)
    grid, dofmap = forms.grid, forms.dofmap
    d = grid.d
    vol = forms.cell_volume
    ent = np.empty((d, d))
    for k in range(1, d + 1):
        for l in range(1, d + 1):
            val = _entry_average(forms, k, l) + flux_average(
                grid, dofmap, forms.field, cs[l - 1].w, k, l, forms=forms
            )
            if forms.tinv > 0.0:
                wk = np.asarray(cs[k - 1].w)
                wl = np.asarray(cs[l - 1].w)
                val -= forms.tinv * float(wk @ (forms.M @ wl)) / vol
            ent[k - 1, l - 1] = val
    return HomTensor(
        entries=ent,
        scheme=_scheme_tag(cs[0].bc, forms.tinv),
        form="flux",
        ell=grid.cell_side,
        tinv=forms.tinv,
        nodes_per_unit=_npu_of(grid),
    )


def _profile_grads(forms, correctors):
    """xi_l + grad w_l at quadrature points, one (ne, nq, d) per l."""
    out = []
    for c in correctors:
        g = grad_at_quadrature(c.grid, c.dofmap, c.w, forms.enodes, forms.dphi)
        g[:, :, c.direction - 1] += 1.0
        out.append(g)
    return out


def _energy_entries(forms, grads, eweights=None, volume=None):
    d = forms.grid.d
    vol = forms.cell_volume if volume is None else volume
    diag = [
        energy_product(forms, grads[l], grads[l], eweights) / vol for l in range(d)
    ]
    ent = np.empty((d, d))
    for k in range(d):
        ent[k, k] = diag[k]
        for l in range(k + 1, d):
            gsum = grads[k] + grads[l]
            both = energy_product(forms, gsum, gsum, eweights) / vol
            val = 0.5 * (both - diag[k] - diag[l])
            ent[k, l] = val
            ent[l, k] = val
    return ent


def tensor_energy(field, correctors):
    """Effective tensor, energy form: averages of (xi+grad w)·A(xi+grad w),
    off-diagonals by polarization (exactly symmetric output)."""
    cs = _check_family(correctors)
    forms = _forms_of(cs, field)
    grads = _profile_grads(forms, cs)
    ent = _energy_entries(forms, grads)
    return HomTensor(
        entries=ent,
        scheme=_scheme_tag(cs[0].bc, forms.tinv),
        form="energy",
        ell=forms.grid.cell_side,
        tinv=forms.tinv,
        nodes_per_unit=_npu_of(forms.grid),
    )


def tensor_window(field, R_outer, R_inner, tinv, mesh):
    """Windowed truncated average: regularized periodic correctors on
    the outer cell, energy averaged over the centered inner sub-cube.

    The window half-width snaps to the nearest element boundary; the
    snapped inner radius is recorded in the metadata.
    """
    if R_inner > R_outer:
        raise ValueError("inner radius must not exceed the outer radius")
    if tinv <= 0:
        raise ValueError("the windowed average needs tinv > 0")
    ell = TWO_PI * R_outer
    pfield = _as_periodized(field, ell)
    correctors = solve_cell_problems(pfield, mesh, bc="periodic", tinv=tinv)
    forms = correctors[0].forms
    grid = forms.grid
    hw = round(math.pi * R_inner / grid.h) * grid.h
    hw = min(hw, 0.5 * ell)
    inside = None
    for ax in range(grid.d):
        centers = grid.origin[ax] + (np.arange(grid.cells_per_dim) + 0.5) * grid.h
        ok = np.abs(centers - (grid.origin[ax] + 0.5 * ell)) <= hw + 1e-12 * ell
        inside = ok if inside is None else (inside[:, None] & ok[None, :]).reshape(-1)
    eweights = inside.astype(float)
    count = int(inside.sum())
    if count == 0:
        raise ValueError("window contains no elements; increase R_inner or the mesh")
    wvol = count * grid.h**grid.d
    grads = _profile_grads(forms, correctors)
    ent = _energy_entries(forms, grads, eweights=eweights, volume=wvol)
    return HomTensor(
        entries=ent,
        scheme="window",
        form="energy",
        ell=ell,
        tinv=float(tinv),
        nodes_per_unit=_npu_of(grid),
        meta={
            "R_outer": float(R_outer),
            "R_inner": hw / math.pi,
            "R_inner_requested": float(R_inner),
        },
    )


def corrector_difference(field, R, mesh):
    """Root mean square gradient gap between the Dirichlet and periodic
    direction-1 correctors on the shared element partition."""
    ell = TWO_PI * R
    pfield = _as_periodized(field, ell)
    wp = solve_corrector(pfield, mesh, 1, bc="periodic", tinv=0.0)
    wd = solve_corrector(pfield, mesh, 1, bc="dirichlet", tinv=0.0)
    if wp.grid.cells_per_dim != wd.grid.cells_per_dim:
        raise ValueError("periodic and Dirichlet grids must share elements")
    gp = grad_at_quadrature(wp.grid, wp.dofmap, wp.w, wp.forms.enodes, wp.forms.dphi)
    gd = grad_at_quadrature(wd.grid, wd.dofmap, wd.w, wd.forms.enodes, wd.forms.dphi)
    diff = np.ascontiguousarray(gd - gp)
    w = wp.forms.qweights * wp.grid.h**wp.grid.d
    from . import kernels

    val = kernels.energy_bilinear(None, diff, diff, w, None)
    return math.sqrt(max(val, 0.0) / wp.forms.cell_volume)


def reference_tensor(field, R=20.0, T=None, mesh=None):
    """Converged-reference proxy: the regularized Dirichlet tensor at a
    large cell (default R = T = 20), energy form."""
    if T is None:
        T = R
    if mesh is None:
        mesh = MeshParams(nodes_per_unit=16.0)
    ell = TWO_PI * R
    pfield = _as_periodized(field, ell)
    correctors = solve_cell_problems(pfield, mesh, bc="dirichlet", tinv=1.0 / T)
    return tensor_energy(pfield, correctors)


def corrector_cell_average(corrector):
    """Cell average of a corrector's interpolant (diagnostic)."""
    return cell_average(corrector.grid, corrector.dofmap, corrector.w)
