"""Convergence sweeps, error tables, and rate fits.

Each sweep varies one knob (cell radius R, regularization 1/T, or the
matching length L of the almost-periodicity modulus), records tensors
or scalar gaps against a reference, and fits a log-log rate.  Output is
a fixed-schema CSV plus two-column log10 plot data; identical configs
produce byte-identical files, so timing columns are zeroed unless
explicitly requested.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cell import (
    MeshParams,
    TWO_PI,
    corrector_difference,
    reference_tensor,
    solve_cell_problems,
    tensor_energy,
)
from .fields import modulus_rho, periodize
from .linalg import SolverError

__all__ = [
    "StudyRecord",
    "RateFit",
    "SweepResult",
    "ModulusSweep",
    "fit_rate",
    "sweep_tensor",
    "sweep_regularization",
    "sweep_corrector_difference",
    "sweep_modulus",
    "unit_cell_reference",
    "csv_text",
    "write_csv",
    "write_plot_data",
    "write_modulus_csv",
]

CSV_HEADER = "scheme,ell,R,Tinv,nodes_per_unit,a11,a12,a21,a22,err_max,err_fro,seconds"

_SCHEMES = {
    "P": ("periodic", False),
    "PT": ("periodic", True),
    "D": ("dirichlet", False),
    "DT": ("dirichlet", True),
}


@dataclass
class StudyRecord:
    """One sweep point: a tensor and its errors against the reference."""

    scheme: str
    ell: float
    R: float
    tinv: float
    nodes_per_unit: float
    entries: np.ndarray
    err_max: float
    err_fro: float
    seconds: float

    def csv_row(self, include_timing=False) -> str:
        a = np.zeros((2, 2))
        d = self.entries.shape[0]
        a[:d, :d] = self.entries
        secs = self.seconds if include_timing else 0.0
        cols = [
            self.scheme,
            repr(float(self.ell)),
            repr(float(self.R)),
            repr(float(self.tinv)),
            repr(float(self.nodes_per_unit)),
            repr(float(a[0, 0])),
            repr(float(a[0, 1])),
            repr(float(a[1, 0])),
            repr(float(a[1, 1])),
            repr(float(self.err_max)),
            repr(float(self.err_fro)),
            repr(float(secs)),
        ]
        return ",".join(cols)


@dataclass
class RateFit:
    """Least-squares line through (log10 R, log10 error)."""

    slope: float
    intercept: float
    residual: float  # rms residual of the fit
    R_range: tuple
    exact: bool = False  # all errors were zero; no line fitted


@dataclass
class SweepResult:
    records: list
    reference: object = None  # HomTensor the errors are measured against
    rate: RateFit | None = None
    failures: list = dc_field(default_factory=list)  # (knob value, message)
    meta: dict = dc_field(default_factory=dict)


@dataclass
class ModulusSweep:
    records: list  # (L, rho) pairs
    tau: object = None  # fitted exponent, or the string "exact (periodic)"
    estimates: list = dc_field(default_factory=list)


def fit_rate(points):
    """Fit log10(error) = slope*log10(R) + intercept by least squares.

    Needs at least three points with positive error; a sweep whose
    errors are all zero is flagged exact instead of fitted.
    """
    pts = [(float(r), float(e)) for r, e in points]
    if any(e < 0 for _, e in pts):
        raise ValueError("errors must be nonnegative")
    pos = [(r, e) for r, e in pts if e > 0.0]
    if not pos:
        if not pts:
            raise ValueError("insufficient points: need at least 3 with error > 0")
        rs = [r for r, _ in pts]
        return RateFit(
            slope=math.nan,
            intercept=math.nan,
            residual=0.0,
            R_range=(min(rs), max(rs)),
            exact=True,
        )
    if len(pos) < 3:
        raise ValueError("insufficient points: need at least 3 with error > 0")
    lr = np.log10([r for r, _ in pos])
    le = np.log10([e for _, e in pos])
    slope, intercept = np.polyfit(lr, le, 1)
    fitted = slope * lr + intercept
    rms = float(np.sqrt(np.mean((le - fitted) ** 2)))
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        residual=rms,
        R_range=(min(r for r, _ in pos), max(r for r, _ in pos)),
    )


_UNIT_CELL_CACHE: dict = {}


def unit_cell_reference(field, nodes_per_unit=400.0):
    """Periodic-scheme tensor on the field's exact period cell, cached."""
    if field.period_hint is None:
        raise ValueError("field has no known period; provide a reference tensor")
    key = (field, float(nodes_per_unit))
    hit = _UNIT_CELL_CACHE.get(key)
    if hit is not None:
        return hit
    ell = float(max(field.period_hint))
    pfield = periodize(field, ell, origin=(0.0,) * field.d)
    mesh = MeshParams(nodes_per_unit=nodes_per_unit)
    correctors = solve_cell_problems(pfield, mesh, bc="periodic", tinv=0.0)
    ref = tensor_energy(pfield, correctors)
    _UNIT_CELL_CACHE[key] = ref
    return ref


def _tensor_errors(entries, ref_entries):
    diff = np.abs(np.asarray(entries) - np.asarray(ref_entries))
    return float(diff.max()), float(np.sqrt((diff * diff).sum()))


def _jobs(jobs):
    if jobs is not None:
        return max(int(jobs), 1)
    env = os.environ.get("APXHOMOG_JOBS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            pass
    return 1


def _run_points(points, worker, jobs):
    """Evaluate worker over points, collecting (point, result | error)."""
    nj = min(_jobs(jobs), len(points))

    def safe(p):
        try:
            return p, worker(p), None
        except (SolverError, ValueError, MemoryError) as exc:
            return p, None, f"{type(exc).__name__}: {exc}"

    if nj <= 1:
        return [safe(p) for p in points]
    with ThreadPoolExecutor(max_workers=nj) as pool:
        return list(pool.map(safe, points))


def _mesh_desc(mesh):
    if mesh.preset is not None:
        return f"preset={mesh.preset}"
    return f"nodes_per_unit={mesh.nodes_per_unit:g}"


def sweep_tensor(field, scheme, R_list, mesh=None, reference=None, tinv=None,
                 jobs=None):
    """Tensor error versus cell radius for one scheme.

    The reference defaults to the unit-cell tensor for fields with a
    known period and to the large-cell regularized Dirichlet preset
    otherwise.  Individual radii that fail are recorded and skipped.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of P, PT, D, DT")
    bc, regularized = _SCHEMES[scheme]
    if regularized:
        if tinv is None or tinv <= 0:
            raise ValueError(f"scheme {scheme} needs tinv > 0")
    else:
        if tinv not in (None, 0, 0.0):
            raise ValueError(f"scheme {scheme} does not take a tinv")
        tinv = 0.0
    rs = sorted(float(r) for r in R_list)
    if not rs:
        raise ValueError("R list must be nonempty")
    if mesh is None:
        mesh = MeshParams()
    if reference is None:
        if field.period_hint is not None:
            reference = unit_cell_reference(field)
        else:
            reference = reference_tensor(field)

    def solve(r):
        t0 = time.perf_counter()
        ell = TWO_PI * r
        pfield = periodize(field, ell)
        correctors = solve_cell_problems(pfield, mesh, bc=bc, tinv=float(tinv))
        tensor = tensor_energy(pfield, correctors)
        emax, efro = _tensor_errors(tensor.entries, reference.entries)
        return StudyRecord(
            scheme=scheme,
            ell=ell,
            R=r,
            tinv=float(tinv),
            nodes_per_unit=mesh.effective_nodes_per_unit(ell),
            entries=tensor.entries,
            err_max=emax,
            err_fro=efro,
            seconds=time.perf_counter() - t0,
        )

    outcomes = _run_points(rs, solve, jobs)
    records = [rec for _, rec, err in outcomes if err is None]
    failures = [(p, err) for p, _, err in outcomes if err is not None]
    records.sort(key=lambda r: r.R)
    rate = None
    try:
        rate = fit_rate([(r.R, r.err_max) for r in records])
    except ValueError:
        pass
    return SweepResult(
        records=records,
        reference=reference,
        rate=rate,
        failures=failures,
        meta={"mesh": _mesh_desc(mesh), "scheme": scheme},
    )


def sweep_regularization(field, R, tinv_list, mesh=None, jobs=None):
    """Gap between the regularized and plain periodic tensors at fixed R.

    ``tinv_list`` must be positive and decreasing (T increasing); the
    rate is fitted against T = 1/tinv, so a continuum T^-2 law shows up
    as slope -2.
    """
    tis = [float(t) for t in tinv_list]
    if not tis or any(t <= 0 for t in tis):
        raise ValueError("tinv list must be positive")
    if mesh is None:
        mesh = MeshParams()
    ell = TWO_PI * float(R)
    pfield = periodize(field, ell)
    base_correctors = solve_cell_problems(pfield, mesh, bc="periodic", tinv=0.0)
    base = tensor_energy(pfield, base_correctors)

    def solve(ti):
        t0 = time.perf_counter()
        correctors = solve_cell_problems(pfield, mesh, bc="periodic", tinv=ti)
        tensor = tensor_energy(pfield, correctors)
        emax, efro = _tensor_errors(tensor.entries, base.entries)
        return StudyRecord(
            scheme="PT",
            ell=ell,
            R=float(R),
            tinv=ti,
            nodes_per_unit=mesh.effective_nodes_per_unit(ell),
            entries=tensor.entries,
            err_max=emax,
            err_fro=efro,
            seconds=time.perf_counter() - t0,
        )

    outcomes = _run_points(tis, solve, jobs)
    records = [rec for _, rec, err in outcomes if err is None]
    failures = [(p, err) for p, _, err in outcomes if err is not None]
    records.sort(key=lambda r: -r.tinv)  # increasing T
    rate = None
    try:
        rate = fit_rate([(1.0 / r.tinv, r.err_max) for r in records])
    except ValueError:
        pass
    return SweepResult(
        records=records,
        reference=base,
        rate=rate,
        failures=failures,
        meta={"mesh": _mesh_desc(mesh), "R": float(R)},
    )


def sweep_corrector_difference(field, R_list, mesh=None, jobs=None):
    """Averaged gradient gap between Dirichlet and periodic correctors.

    The scalar E(R) is recorded in both error columns; tensor columns
    are zero for these rows.
    """
    rs = sorted(float(r) for r in R_list)
    if not rs:
        raise ValueError("R list must be nonempty")
    if mesh is None:
        mesh = MeshParams()

    def solve(r):
        t0 = time.perf_counter()
        e = corrector_difference(field, r, mesh)
        ell = TWO_PI * r
        return StudyRecord(
            scheme="DvP",
            ell=ell,
            R=r,
            tinv=0.0,
            nodes_per_unit=mesh.effective_nodes_per_unit(ell),
            entries=np.zeros((field.d, field.d)),
            err_max=e,
            err_fro=e,
            seconds=time.perf_counter() - t0,
        )

    outcomes = _run_points(rs, solve, jobs)
    records = [rec for _, rec, err in outcomes if err is None]
    failures = [(p, err) for p, _, err in outcomes if err is not None]
    records.sort(key=lambda r: r.R)
    rate = None
    try:
        rate = fit_rate([(r.R, r.err_max) for r in records])
    except ValueError:
        pass
    return SweepResult(
        records=records,
        rate=rate,
        failures=failures,
        meta={"mesh": _mesh_desc(mesh)},
    )


def sweep_modulus(field, L_list, sampling=None):
    """Sampled almost-periodicity modulus over increasing match lengths."""
    ls = [float(x) for x in L_list]
    if not ls or any(b <= a for a, b in zip(ls, ls[1:])):
        raise ValueError("L list must be strictly increasing")
    estimates = []
    records = []
    for L in ls:
        est = modulus_rho(field, L, sampling=sampling)
        estimates.append(est)
        records.append((L, est.rho))
    if all(rho == 0.0 for _, rho in records):
        tau = "exact (periodic)"
    else:
        pos = [(L, rho) for L, rho in records if rho > 0]
        tau = None
        if len(pos) >= 3:
            lr = np.log10([L for L, _ in pos])
            lo = np.log10([rho for _, rho in pos])
            tau = float(-np.polyfit(lr, lo, 1)[0])
    return ModulusSweep(records=records, tau=tau, estimates=estimates)


def csv_text(records, include_timing=False):
    """Sweep CSV as one string; see CSV_HEADER for the column order."""
    lines = [CSV_HEADER]
    lines.extend(rec.csv_row(include_timing=include_timing) for rec in records)
    return "\n".join(lines) + "\n"


def write_csv(records, path, include_timing=False):
    """Fixed-schema sweep CSV written atomically."""
    _atomic_write(path, csv_text(records, include_timing=include_timing))
    return path


def write_plot_data(records, path, column="err_max"):
    """Two-column (log10 R, log10 error) file for log-log plots.

    Zero-error points cannot be placed on a log plot and are skipped.
    """
    lines = [f"log10_R,log10_{column}"]
    for rec in records:
        val = getattr(rec, column)
        if val > 0 and rec.R > 0:
            lines.append(f"{repr(math.log10(rec.R))},{repr(math.log10(val))}")
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def write_modulus_csv(records, path):
    lines = ["L,rho"]
    lines.extend(f"{repr(float(L))},{repr(float(rho))}" for L, rho in records)
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
