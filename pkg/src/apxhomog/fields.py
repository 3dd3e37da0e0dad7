"""Symmetric matrix coefficient fields on R^d (d = 1 or 2).

A field holds one parsed expression per entry of a symmetric d-by-d
matrix and evaluates them vectorized over numpy coordinate arrays.
Construction validates structural symmetry, dimension consistency,
division safety and uniform coercivity on a deterministic quasi-random
sample.  ``periodize`` restricts a field to a cube and extends it
periodically; ``modulus_rho`` estimates how far a field is from being
periodic at a given translation budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.stats import qmc

from . import kernels
from .expr import Const, Expr, divisors, evaluate, parse, to_text, variables

__all__ = [
    "CoefficientField",
    "FieldValidationError",
    "make_field",
    "builtin",
    "BUILTIN_NAMES",
    "PeriodizedField",
    "periodize",
    "SampleGrid",
    "CoercivityResult",
    "coercivity_check",
    "RhoSampling",
    "ModulusEstimate",
    "modulus_rho",
    "field_to_json",
    "field_from_json",
]

_DIV_FLOOR = 1e-6
_VALIDATION_POINTS = 8192
_VALIDATION_BOX = (-2.0, 10.0)


class FieldValidationError(ValueError):
    pass


def _as_expr(v):
    if isinstance(v, str):
        return parse(v)
    if isinstance(v, (int, float)):
        return Const(float(v))
    if isinstance(v, Expr):
        return v
    raise TypeError(f"cannot interpret {v!r} as a coefficient entry")


def _is_zero(e):
    return isinstance(e, Const) and e.value == 0.0


@dataclass(frozen=True)
class CoefficientField:
    """Validated symmetric coefficient, entries indexed [row][col]."""

    d: int
    entries: tuple
    alpha: float  # sampled lower bound on the smallest eigenvalue
    beta: float  # sampled upper bound on the largest entry magnitude
    period_hint: tuple | None = None
    name: str | None = None

    @property
    def is_scalar(self) -> bool:
        """True when the field is a single expression times the identity."""
        if self.d == 1:
            return True
        diag_equal = self.entries[0][0] == self.entries[1][1]
        return diag_equal and _is_zero(self.entries[0][1])

    def entries_at(self, coords):
        """Evaluate at per-axis coordinate arrays -> (..., d, d).

        The result is bitwise symmetric: the (l, k) block is a copy of
        the (k, l) block, never a re-evaluation.
        """
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        out = np.empty(shape + (self.d, self.d))
        for k in range(self.d):
            for l in range(k, self.d):
                v = np.broadcast_to(evaluate(self.entries[k][l], coords), shape)
                out[..., k, l] = v
                if l != k:
                    out[..., l, k] = v
        return out

    def value(self, points):
        """Evaluate at an (..., d) array of points -> (..., d, d)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.d:
            raise ValueError(f"points must have last dimension {self.d}")
        return self.entries_at(tuple(pts[..., ax] for ax in range(self.d)))

    def entry_text(self):
        return tuple(tuple(to_text(e) for e in row) for row in self.entries)


def _lambda_min(mats):
    """Smallest eigenvalue of symmetric (..., d, d) stacks, closed form."""
    d = mats.shape[-1]
    if d == 1:
        return mats[..., 0, 0]
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 1]
    half_diff = 0.5 * (a - c)
    return 0.5 * (a + c) - np.sqrt(half_diff * half_diff + b * b)


def _validation_points(d):
    lo, hi = _VALIDATION_BOX
    sampler = qmc.Halton(d=d, scramble=False)
    pts = sampler.random(_VALIDATION_POINTS)
    return lo + (hi - lo) * pts  # (n, d)


def make_field(d, entries, period_hint=None, name=None, validate=True):
    """Build a :class:`CoefficientField` from entry expressions.

    ``entries`` is either a single scalar entry (expression text, tree,
    or number) meaning that scalar times the identity, or a d-by-d
    nested sequence.  Entries must be structurally symmetric.  With
    ``validate`` (the default) every division denominator is screened
    for near-zeros and the matrix for loss of uniform coercivity over a
    deterministic quasi-random sample; violations raise
    :class:`FieldValidationError` naming a witness point.
    """
    if d not in (1, 2):
        raise ValueError("only d = 1 and d = 2 are supported")
    if isinstance(entries, (str, int, float, Expr)):
        scalar = _as_expr(entries)
        rows = [[None] * d for _ in range(d)]
        for k in range(d):
            for l in range(d):
                rows[k][l] = scalar if k == l else Const(0.0)
    else:
        rows = [[_as_expr(v) for v in row] for row in entries]
        if len(rows) != d or any(len(r) != d for r in rows):
            raise ValueError(f"entries must form a {d}x{d} matrix")
    for k in range(d):
        for l in range(k + 1, d):
            if rows[k][l] != rows[l][k]:
                raise FieldValidationError(
                    f"entries are not symmetric: ({k + 1},{l + 1}) is "
                    f"{to_text(rows[k][l])!r} but ({l + 1},{k + 1}) is "
                    f"{to_text(rows[l][k])!r}"
                )
    for row in rows:
        for e in row:
            bad = variables(e) - set(range(d))
            if bad:
                ax = min(bad)
                raise FieldValidationError(
                    f"entry {to_text(e)!r} uses coordinate axis {ax + 1} "
                    f"but the field is {d}-dimensional"
                )
    tup = tuple(tuple(row) for row in rows)

    pts = _validation_points(d)
    coords = tuple(pts[:, ax] for ax in range(d))
    if validate:
        for row in tup:
            for e in row:
                for div in divisors(e):
                    vals = np.abs(
                        np.broadcast_to(evaluate(div, coords), (pts.shape[0],))
                    )
                    j = int(np.argmin(vals))
                    if vals[j] < _DIV_FLOOR:
                        raise FieldValidationError(
                            f"denominator {to_text(div)!r} reaches magnitude "
                            f"{vals[j]:.3e} (< {_DIV_FLOOR:g}) near point "
                            f"{tuple(round(v, 6) for v in pts[j])}"
                        )
    probe = CoefficientField(d=d, entries=tup, alpha=1.0, beta=1.0)
    mats = probe.entries_at(coords)
    lam = _lambda_min(mats)
    j = int(np.argmin(lam))
    alpha = float(lam[j])
    beta = float(np.abs(mats).max())
    if validate and alpha <= 0.0:
        raise FieldValidationError(
            f"field loses coercivity: smallest eigenvalue {alpha:.3e} "
            f"at sample point {tuple(round(v, 6) for v in pts[j])}"
        )
    return CoefficientField(
        d=d,
        entries=tup,
        alpha=alpha,
        beta=beta,
        period_hint=tuple(period_hint) if period_hint is not None else None,
        name=name,
    )


_BUILTIN_SOURCES = {
    "A1": (
        "(2 + 1.8*sin(2*pi*x))/(2 + 1.8*cos(2*pi*y))"
        " + (2 + sin(2*pi*y))/(2 + 1.8*cos(2*pi*x))",
        (1.0, 1.0),
    ),
    "A2": ("1 + 30*(2 + sin(2*pi*x)*sin(2*pi*y))", (1.0, 1.0)),
    "A3": ("4 + cos(2*pi*(x + y)) + cos(2*pi*sqrt2*(x + y))", None),
}

BUILTIN_NAMES = tuple(sorted(_BUILTIN_SOURCES))


def builtin(name):
    """Named example fields: 'A1' (periodic, mildly oscillatory), 'A2'
    (periodic, contrast about 3:1 around a large mean), 'A3'
    (quasiperiodic: two incommensurate wave numbers)."""
    try:
        src, period = _BUILTIN_SOURCES[name]
    except KeyError:
        raise KeyError(
            f"unknown builtin field {name!r}; choose from {', '.join(BUILTIN_NAMES)}"
        ) from None
    return make_field(2, src, period_hint=period, name=name)


def field_to_json(field):
    """Serializable document: {"d", "entries" (text matrix), "alpha"}."""
    doc = {
        "d": field.d,
        "entries": [list(row) for row in field.entry_text()],
        "alpha": field.alpha,
    }
    if field.period_hint is not None:
        doc["period_hint"] = list(field.period_hint)
    if field.name is not None:
        doc["name"] = field.name
    return doc


def field_from_json(doc):
    """Rebuild a field from its JSON document; entries are re-validated
    (the stored alpha is informational only)."""
    if not isinstance(doc, dict) or "d" not in doc or "entries" not in doc:
        raise FieldValidationError('field document needs "d" and "entries" keys')
    return make_field(
        int(doc["d"]),
        doc["entries"],
        period_hint=doc.get("period_hint"),
        name=doc.get("name"),
    )


# --- periodization -----------------------------------------------------------


@dataclass(frozen=True)
class PeriodizedField:
    """A base field restricted to a cube and repeated periodically.

    Points already inside ``[origin, origin + ell)`` per axis are passed
    through bitwise unchanged; outside points are folded in.
    """

    base: CoefficientField
    ell: float
    origin: tuple

    @property
    def d(self):
        return self.base.d

    @property
    def is_scalar(self):
        return self.base.is_scalar

    def fold(self, coords):
        out = []
        for ax in range(self.d):
            y = np.asarray(coords[ax], dtype=float)
            o = self.origin[ax]
            t = (y - o) / self.ell
            f = t - np.floor(t)
            f = np.where(f >= 1.0, f - 1.0, f)
            folded = o + f * self.ell
            folded = np.where(folded >= o + self.ell, o, folded)
            inside = (y >= o) & (y < o + self.ell)
            out.append(np.where(inside, y, folded))
        return tuple(out)

    def entries_at(self, coords):
        return self.base.entries_at(self.fold(coords))

    def value(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.d:
            raise ValueError(f"points must have last dimension {self.d}")
        return self.entries_at(tuple(pts[..., ax] for ax in range(self.d)))


def periodize(field, ell, origin=None):
    if ell <= 0:
        raise ValueError("cell side must be positive")
    if origin is None:
        origin = (-0.5 * ell,) * field.d
    origin = tuple(float(o) for o in origin)
    if len(origin) != field.d:
        raise ValueError(f"origin must have {field.d} components")
    return PeriodizedField(base=field, ell=float(ell), origin=origin)


# --- coercivity check --------------------------------------------------------


@dataclass(frozen=True)
class SampleGrid:
    points_per_axis: int = 64
    box: tuple = (0.0, 10.0)


@dataclass(frozen=True)
class CoercivityResult:
    alpha_est: float
    ok: bool
    witness: tuple | None = None


def coercivity_check(field, sample_grid=SampleGrid()):
    """Smallest sampled eigenvalue of the field over a uniform grid.

    Returns ``CoercivityResult(alpha_est, ok, witness)`` where
    ``witness`` is the grid point attaining the minimum (always set, so
    a failing check reports where coercivity was lost).
    """
    lo, hi = sample_grid.box
    n = sample_grid.points_per_axis
    axis = np.linspace(lo, hi, n, endpoint=False)
    grids = np.meshgrid(*([axis] * field.d), indexing="ij", sparse=True)
    lam = _lambda_min(field.entries_at(tuple(grids)))
    flat = int(np.argmin(lam))
    idx = np.unravel_index(flat, lam.shape)
    witness = tuple(float(axis[i]) for i in idx)
    alpha_est = float(lam[idx])
    return CoercivityResult(alpha_est=alpha_est, ok=alpha_est > 0.0, witness=witness)


# --- modulus of almost periodicity -------------------------------------------


@dataclass(frozen=True)
class RhoSampling:
    """Sampling plan for :func:`modulus_rho`.

    The comparison window is ``[0, t_box)^d`` sampled at
    ``t_points_per_axis`` per axis; base points y run over a uniform
    grid of ``y_points_per_axis^d`` points on ``[0, y_box]^d`` (y_box
    defaults to 10 L); candidate translations z run over the whole
    sup-ball of radius L on the same lattice step as the window, so the
    z-grids for increasing L are nested.
    """

    t_points_per_axis: int = 64
    t_box: float = 4.0
    y_points_per_axis: int = 9
    y_box: float | None = None


@dataclass(frozen=True)
class ModulusEstimate:
    L: float
    rho: float
    z_step: float
    y_box: float
    sampling: RhoSampling = dc_field(default_factory=RhoSampling, repr=False)


def _sym_exprs(field):
    if field.is_scalar:
        return [(0, 0)]
    return [(k, l) for k in range(field.d) for l in range(k, field.d)]


def _entries_on(field, coords, pairs):
    shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
    n = int(np.prod(shape))
    out = np.empty((n, len(pairs)))
    for j, (k, l) in enumerate(pairs):
        out[:, j] = np.broadcast_to(
            evaluate(field.entries[k][l], coords), shape
        ).reshape(n)
    return out


def modulus_rho(field, L, sampling=None):
    """Estimate sup_y min_{|z| <= L} ||A(. + y) - A(. + z)||_inf.

    Small values mean translations within budget L nearly reproduce any
    shifted copy of the field; for a periodic field the estimate drops
    to rounding noise once L exceeds the period.  All grids are
    deterministic, so repeated calls agree bitwise.
    """
    if L < 0:
        raise ValueError("translation budget L must be nonnegative")
    s = sampling if sampling is not None else RhoSampling()
    d = field.d
    pairs = _sym_exprs(field)

    st = s.t_box / s.t_points_per_axis
    Lu = int(np.floor(L / st + 1e-9))  # translation bound in lattice units
    y_box = 10.0 * L if s.y_box is None else float(s.y_box)

    nt = s.t_points_per_axis
    nb = 2 * Lu + nt
    axis_b = (np.arange(nb) - Lu) * st
    grids_b = np.meshgrid(*([axis_b] * d), indexing="ij", sparse=True)
    bflat = _entries_on(field, tuple(grids_b), pairs)

    axis_t = np.arange(nt) * st
    t_mesh = np.meshgrid(*([axis_t] * d), indexing="ij", sparse=True)

    strides = [1] * d
    for ax in range(d - 2, -1, -1):
        strides[ax] = strides[ax + 1] * nb
    t_idx = sum(
        np.arange(Lu, Lu + nt).reshape((-1,) + (1,) * (d - 1 - ax)) * strides[ax]
        for ax in range(d)
    ).reshape(-1)
    t_idx = np.ascontiguousarray(t_idx, dtype=np.int64)

    # candidate translations: every lattice vector with |z|_inf <= L,
    # nearest first so the scan finds a good incumbent early
    m = np.arange(-Lu, Lu + 1)
    zoffs = np.stack(
        [g.reshape(-1) for g in np.meshgrid(*([m] * d), indexing="ij")], axis=1
    )
    order = np.lexsort(tuple(zoffs[:, ax] for ax in range(d - 1, -1, -1)))
    order = order[np.argsort((zoffs[order] ** 2).sum(axis=1), kind="stable")]
    zbases = np.ascontiguousarray(
        zoffs[order] @ np.asarray(strides, dtype=np.int64)
    )

    ys = np.linspace(0.0, y_box, s.y_points_per_axis)
    y_mesh = np.meshgrid(*([ys] * d), indexing="ij")
    y_pts = np.stack([g.reshape(-1) for g in y_mesh], axis=1)

    rho = 0.0
    for y in y_pts:
        coords_y = tuple(t_mesh[ax] + y[ax] for ax in range(d))
        ay = _entries_on(field, coords_y, pairs)
        v, _ = kernels.rho_scan(bflat, t_idx, ay, zbases, cutoff=rho)
        if v > rho:
            rho = v
    return ModulusEstimate(L=float(L), rho=float(rho), z_step=st, y_box=y_box, sampling=s)
