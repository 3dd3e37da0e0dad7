"""Command-line front end.

Subcommands: ``tensor`` (one homogenized tensor as JSON), ``bloch``
(eigenvalues, optional gradient and Hessian of the lowest branch),
``study`` (sweep CSVs), ``rho`` (almost-periodicity modulus CSV), and
``check`` (runtime invariant suite for a coefficient field).

Configuration comes from flags, a JSON config file, or both; flags win.
The effective configuration is echoed to standard error as one JSON
line, and feeding that line back via --config reproduces the run.
Exit codes: 0 success, 1 invalid input, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import fields
from .assemble import assemble
from .bloch import bloch_eigs, bloch_gradient, bloch_hessian
from .cell import (
    MeshParams,
    TWO_PI,
    solve_cell_problems,
    tensor_energy,
    tensor_flux,
    tensor_window,
)
from .expr import ExprError
from .fields import FieldValidationError, coercivity_check, periodize
from .grid import build_grid, make_dofmap
from .linalg import SolverError
from .study import (
    csv_text,
    sweep_corrector_difference,
    sweep_modulus,
    sweep_regularization,
    sweep_tensor,
    write_plot_data,
)

__all__ = ["RunConfig", "ConfigError", "load_config", "run", "main"]


class ConfigError(ValueError):
    pass


_SCHEMES = ("P", "PT", "D", "DT", "window")
_SWEEPS = ("tensor", "regularization", "corrector")
_PRESETS = ("quadratic",)
_COMMANDS = ("tensor", "bloch", "study", "rho", "check")


@dataclass
class RunConfig:
    """Effective settings of one invocation; serializes to the echo line."""

    command: str | None = None
    builtin: str | None = None
    field: dict | None = None
    scheme: str = "P"
    form: str = "energy"
    ell: float | None = None
    R: float | None = None
    tinv: float = 0.0
    nodes_per_unit: float = 100.0
    preset: str | None = None
    output: str | None = None
    jobs: int | None = None
    eta: list | None = None
    count: int = 1
    gradient: bool = False
    hessian: bool = False
    step: float | None = None
    sweep: str = "tensor"
    R_list: list | None = None
    tinv_list: list | None = None
    L_list: list | None = None
    R_outer: float | None = None
    R_inner: float | None = None
    plot_data: str | None = None
    include_timing: bool = False

    def to_json(self) -> dict:
        return asdict(self)


_FIELD_KEYS = set(RunConfig().to_json())


def _expect(cond, path, msg):
    if not cond:
        raise ConfigError(f"config.{path}: {msg}")


def _num(doc, key, positive=False, nonneg=False):
    v = doc[key]
    _expect(isinstance(v, (int, float)) and not isinstance(v, bool), key,
            "expected a number")
    v = float(v)
    _expect(math.isfinite(v), key, "must be finite")
    if positive:
        _expect(v > 0, key, "must be > 0")
    if nonneg:
        _expect(v >= 0, key, "must be >= 0")
    return v


def _numlist(doc, key, positive=False):
    v = doc[key]
    _expect(isinstance(v, (list, tuple)) and len(v) > 0, key,
            "expected a nonempty list of numbers")
    out = []
    for i, x in enumerate(v):
        _expect(isinstance(x, (int, float)) and not isinstance(x, bool),
                f"{key}[{i}]", "expected a number")
        x = float(x)
        _expect(math.isfinite(x), f"{key}[{i}]", "must be finite")
        if positive:
            _expect(x > 0, f"{key}[{i}]", "must be > 0")
        out.append(x)
    return out


def _validate_doc(doc):
    """Type/range validation of a raw config dict -> RunConfig kwargs."""
    _expect(isinstance(doc, dict), "", "top level must be a JSON object")
    for key in doc:
        _expect(key in _FIELD_KEYS, key, "unknown key")
    out = {}
    if doc.get("command") is not None:
        _expect(doc["command"] in _COMMANDS, "command",
                f"expected one of {', '.join(_COMMANDS)}")
        out["command"] = doc["command"]
    if doc.get("builtin") is not None:
        _expect(isinstance(doc["builtin"], str), "builtin", "expected a string")
        _expect(doc["builtin"] in fields.BUILTIN_NAMES, "builtin",
                f"expected one of {', '.join(fields.BUILTIN_NAMES)}")
        out["builtin"] = doc["builtin"]
    if doc.get("field") is not None:
        _expect(isinstance(doc["field"], dict), "field",
                "expected a coefficient document object")
        out["field"] = doc["field"]
    if "builtin" in out and "field" in out:
        raise ConfigError(
            "config.builtin/config.field: give exactly one coefficient source"
        )
    if doc.get("scheme") is not None:
        _expect(doc["scheme"] in _SCHEMES, "scheme",
                f"expected one of {', '.join(_SCHEMES)}")
        out["scheme"] = doc["scheme"]
    if doc.get("form") is not None:
        _expect(doc["form"] in ("energy", "flux"), "form",
                "expected 'energy' or 'flux'")
        out["form"] = doc["form"]
    for key, kw in (
        ("ell", {"positive": True}),
        ("R", {"positive": True}),
        ("tinv", {"nonneg": True}),
        ("nodes_per_unit", {"positive": True}),
        ("step", {"positive": True}),
        ("R_outer", {"positive": True}),
        ("R_inner", {"positive": True}),
    ):
        if doc.get(key) is not None:
            out[key] = _num(doc, key, **kw)
    if doc.get("ell") is not None and doc.get("R") is not None:
        raise ConfigError("config.ell/config.R: give one of ell or R, not both")
    if doc.get("preset") is not None:
        _expect(doc["preset"] in _PRESETS, "preset",
                f"expected one of {', '.join(_PRESETS)}")
        out["preset"] = doc["preset"]
    for key in ("output", "plot_data"):
        if doc.get(key) is not None:
            _expect(isinstance(doc[key], str) and doc[key], key,
                    "expected a file path")
            out[key] = doc[key]
    if doc.get("jobs") is not None:
        _expect(isinstance(doc["jobs"], int) and not isinstance(doc["jobs"], bool)
                and doc["jobs"] >= 1, "jobs", "expected an integer >= 1")
        out["jobs"] = doc["jobs"]
    if doc.get("eta") is not None:
        out["eta"] = _numlist(doc, "eta")
    if doc.get("count") is not None:
        _expect(doc["count"] in (1, 2), "count", "expected 1 or 2")
        out["count"] = doc["count"]
    for key in ("gradient", "hessian", "include_timing"):
        if doc.get(key) is not None:
            _expect(isinstance(doc[key], bool), key, "expected true or false")
            out[key] = doc[key]
    if doc.get("sweep") is not None:
        _expect(doc["sweep"] in _SWEEPS, "sweep",
                f"expected one of {', '.join(_SWEEPS)}")
        out["sweep"] = doc["sweep"]
    if doc.get("R_list") is not None:
        out["R_list"] = _numlist(doc, "R_list", positive=True)
    if doc.get("tinv_list") is not None:
        out["tinv_list"] = _numlist(doc, "tinv_list", positive=True)
    if doc.get("L_list") is not None:
        lst = _numlist(doc, "L_list", positive=True)
        _expect(all(b > a for a, b in zip(lst, lst[1:])), "L_list",
                "must be strictly increasing")
        out["L_list"] = lst
    return out


def load_config(path):
    """Read and validate a JSON config file -> RunConfig with defaults.

    Requires exactly one coefficient source in the file.  The filled
    config matches what a run echoes to standard error.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
    out = _validate_doc(doc)
    if "builtin" not in out and "field" not in out:
        raise ConfigError(
            "config.builtin/config.field: exactly one coefficient source is required"
        )
    cfg = RunConfig(**out)
    if cfg.ell is None and cfg.R is None:
        cfg.ell = 1.0
    return cfg


# --- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats_csv(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--builtin", help="named example coefficient")
    p.add_argument("--inline", help="inline coefficient JSON document")
    p.add_argument("--output", help="output file (default: standard output)")
    p.add_argument("--jobs", type=int, help="worker pool bound for sweeps")
    p.add_argument("--nodes-per-unit", dest="nodes_per_unit", type=float)
    p.add_argument("--mesh-preset", dest="preset", choices=_PRESETS)
    p.add_argument("--ell", type=float, help="cell side length")
    p.add_argument("--R", type=float, help="cell radius (ell = 2*pi*R)")


def _build_parser():
    top = _Parser(prog="apxhomog", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tensor", help="homogenized tensor of one scheme")
    _add_common(t)
    t.add_argument("--scheme", choices=_SCHEMES)
    t.add_argument("--form", choices=("energy", "flux"))
    t.add_argument("--tinv", type=float, help="zero-order regularization weight")
    t.add_argument("--r-outer", dest="R_outer", type=float)
    t.add_argument("--r-inner", dest="R_inner", type=float)

    b = sub.add_parser("bloch", help="lowest eigenvalues of the shifted operator")
    _add_common(b)
    b.add_argument("--eta", type=_floats_csv, help="quasimomentum, comma separated")
    b.add_argument("--count", type=int, choices=(1, 2))
    b.add_argument("--gradient", action=argparse.BooleanOptionalAction,
                   default=None)
    b.add_argument("--hessian", action=argparse.BooleanOptionalAction,
                   default=None)
    b.add_argument("--step", type=float, help="finite-difference step")

    s = sub.add_parser("study", help="convergence sweep CSV")
    _add_common(s)
    s.add_argument("--sweep", choices=_SWEEPS)
    s.add_argument("--scheme", choices=("P", "PT", "D", "DT"))
    s.add_argument("--tinv", type=float)
    s.add_argument("--R-list", dest="R_list", type=_floats_csv)
    s.add_argument("--tinv-list", dest="tinv_list", type=_floats_csv)
    s.add_argument("--plot-data", dest="plot_data")
    s.add_argument("--include-timing", dest="include_timing",
                   action=argparse.BooleanOptionalAction, default=None)

    r = sub.add_parser("rho", help="almost-periodicity modulus CSV")
    _add_common(r)
    r.add_argument("--L-list", dest="L_list", type=_floats_csv)

    c = sub.add_parser("check", help="invariant suite for a coefficient field")
    _add_common(c)
    return top


def _merge(ns):
    """defaults <- config file <- explicit flags; returns RunConfig."""
    flags = {k: v for k, v in vars(ns).items() if v is not None}
    if "inline" in flags:
        if "builtin" in flags:
            raise ConfigError(
                "config.builtin/config.field: give exactly one coefficient source"
            )
        try:
            flags["field"] = json.loads(flags.pop("inline"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config.field: invalid inline JSON: {exc}") from exc
    if "config" in flags:
        cfg = load_config(flags.pop("config"))
        if cfg.command is not None and cfg.command != ns.command:
            raise ConfigError(
                f"config.command: file says {cfg.command!r} but the "
                f"{ns.command!r} subcommand was invoked"
            )
    else:
        cfg = RunConfig()
    merged = cfg.to_json()
    merged["command"] = ns.command
    if "builtin" in flags:
        merged["builtin"] = None
        merged["field"] = None
    if "field" in flags:
        merged["builtin"] = None
    if "ell" in flags:
        merged["R"] = None
    if "R" in flags:
        merged["ell"] = None
    merged.update(flags)
    out = _validate_doc(merged)
    cfg = RunConfig(**out)
    if cfg.builtin is None and cfg.field is None:
        raise ConfigError(
            "config.builtin/config.field: exactly one coefficient source is required"
        )
    if cfg.ell is None and cfg.R is None:
        cfg.ell = 1.0
    return cfg


def _resolve_field(cfg):
    if cfg.builtin is not None:
        return fields.builtin(cfg.builtin)
    try:
        return fields.field_from_json(cfg.field)
    except (FieldValidationError, ExprError) as exc:
        raise ConfigError(f"config.field: {exc}") from exc


def _resolve_ell(cfg):
    return cfg.ell if cfg.ell is not None else TWO_PI * cfg.R


def _mesh(cfg):
    return MeshParams(nodes_per_unit=cfg.nodes_per_unit, preset=cfg.preset)


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _emit(cfg, text):
    if cfg.output is None:
        sys.stdout.write(text)
        return None
    _atomic_write(cfg.output, text)
    return cfg.output


def _emit_json(cfg, doc):
    return _emit(cfg, json.dumps(doc, indent=2) + "\n")


def _schemes_bc(scheme):
    bc = "periodic" if scheme in ("P", "PT") else "dirichlet"
    regularized = scheme in ("PT", "DT")
    return bc, regularized


def _cmd_tensor(cfg):
    fld = _resolve_field(cfg)
    mesh = _mesh(cfg)
    if cfg.scheme == "window":
        if cfg.R_outer is None or cfg.R_inner is None:
            raise ConfigError(
                "config.R_outer/config.R_inner: the window scheme needs both radii"
            )
        if cfg.tinv <= 0:
            raise ConfigError("config.tinv: the window scheme needs tinv > 0")
        hom = tensor_window(fld, cfg.R_outer, cfg.R_inner, cfg.tinv, mesh)
    else:
        bc, regularized = _schemes_bc(cfg.scheme)
        if regularized and cfg.tinv <= 0:
            raise ConfigError(f"config.tinv: scheme {cfg.scheme} needs tinv > 0")
        if not regularized and cfg.tinv != 0.0:
            raise ConfigError(f"config.tinv: scheme {cfg.scheme} does not take tinv")
        ell = _resolve_ell(cfg)
        pfield = periodize(fld, ell)
        correctors = solve_cell_problems(pfield, mesh, bc=bc, tinv=cfg.tinv)
        make = tensor_energy if cfg.form == "energy" else tensor_flux
        hom = make(pfield, correctors)
    _emit_json(cfg, hom.to_json())
    return 0


def _cmd_bloch(cfg):
    fld = _resolve_field(cfg)
    mesh = _mesh(cfg)
    ell = _resolve_ell(cfg)
    eta = cfg.eta if cfg.eta is not None else [0.0] * fld.d
    if len(eta) != fld.d:
        raise ConfigError(f"config.eta: expected {fld.d} components")
    pairs = bloch_eigs(fld, mesh, eta, count=cfg.count, ell=ell)
    doc = {"ell": ell, "eigenvalues": [p.to_json(ell) for p in pairs]}
    if cfg.gradient:
        grad = bloch_gradient(fld, mesh, h=cfg.step, ell=ell, jobs=cfg.jobs)
        doc["gradient"] = [float(g) for g in grad]
    if cfg.hessian:
        est = bloch_hessian(fld, mesh, h=cfg.step, ell=ell, jobs=cfg.jobs)
        doc["hessian"] = {
            "H": [[float(v) for v in row] for row in est.H],
            "half_H": [[0.5 * float(v) for v in row] for row in est.H],
            "h": est.h,
            "lambda0": est.lambda0,
            "gap": est.gap,
        }
    _emit_json(cfg, doc)
    return 0


def _cmd_study(cfg):
    fld = _resolve_field(cfg)
    mesh = _mesh(cfg)
    if cfg.sweep == "tensor":
        rs = cfg.R_list if cfg.R_list is not None else [float(r) for r in range(2, 13)]
        result = sweep_tensor(fld, cfg.scheme, rs, mesh=mesh,
                              tinv=cfg.tinv or None, jobs=cfg.jobs)
    elif cfg.sweep == "regularization":
        if cfg.R is None:
            raise ConfigError("config.R: the regularization sweep needs a fixed R")
        tis = cfg.tinv_list if cfg.tinv_list is not None else [
            1 / 4, 1 / 8, 1 / 16, 1 / 32,
        ]
        result = sweep_regularization(fld, cfg.R, tis, mesh=mesh, jobs=cfg.jobs)
    else:
        rs = cfg.R_list if cfg.R_list is not None else [2.0, 4.0, 6.0, 8.0, 10.0]
        result = sweep_corrector_difference(fld, rs, mesh=mesh, jobs=cfg.jobs)
    _emit(cfg, csv_text(result.records, include_timing=cfg.include_timing))
    if cfg.plot_data is not None:
        write_plot_data(result.records, cfg.plot_data)
    for knob, msg in result.failures:
        print(f"sweep point {knob} failed: {msg}", file=sys.stderr)
    if result.rate is not None:
        print(
            f"rate: slope={result.rate.slope:.4f} "
            f"intercept={result.rate.intercept:.4f} "
            f"residual={result.rate.residual:.2e}",
            file=sys.stderr,
        )
    if result.failures and not result.records:
        raise SolverError("all sweep points failed")
    return 0


def _cmd_rho(cfg):
    fld = _resolve_field(cfg)
    ls = cfg.L_list if cfg.L_list is not None else [1.0, 2.0, 5.0, 10.0, 20.0, 40.0]
    result = sweep_modulus(fld, ls)
    lines = ["L,rho"]
    lines.extend(f"{repr(float(L))},{repr(float(rho))}" for L, rho in result.records)
    _emit(cfg, "\n".join(lines) + "\n")
    print(f"tau: {result.tau}", file=sys.stderr)
    return 0


def _cmd_check(cfg):
    fld = _resolve_field(cfg)
    mesh = _mesh(cfg)
    ell = _resolve_ell(cfg)
    checks = []

    def record(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    cc = coercivity_check(fld)
    record("coercivity sample positive", cc.ok and cc.alpha_est > 0,
           f"alpha_est={cc.alpha_est:.6g}")

    pfield = periodize(fld, ell)
    cells = mesh.cells_for(ell)
    grid = build_grid(fld.d, ell, pfield.origin, cells, "periodic")
    dofmap = make_dofmap(grid, "periodic")
    forms = assemble(grid, dofmap, pfield)
    ones = np.ones(forms.M.shape[0])
    row_sums = np.asarray(forms.M @ ones)
    record("mass row sums positive", bool((row_sums > 0).all()))
    total = float(ones @ row_sums)
    vol = ell**fld.d
    record("mass total equals cell volume",
           abs(total - vol) <= 1e-12 * vol,
           f"rel dev={abs(total - vol) / vol:.2e}")
    record("stiffness exactly symmetric",
           (forms.K != forms.K.T).nnz == 0)
    kscale = float(np.abs(forms.K.data).max())
    knull = float(np.abs(forms.K @ ones).max())
    record("constants in stiffness kernel", knull <= 1e-10 * kscale,
           f"rel residual={knull / kscale:.2e}")

    correctors = solve_cell_problems(pfield, mesh, bc="periodic", tinv=0.0)
    tf = tensor_flux(pfield, correctors)
    te = tensor_energy(pfield, correctors)
    scale = float(np.abs(te.entries).max())
    dev = float(np.abs(tf.entries - te.entries).max())
    record("flux and energy forms agree", dev <= 1e-6 * scale,
           f"rel gap={dev / scale:.2e}")
    sym = float(np.abs(te.entries - te.entries.T).max())
    record("tensor symmetric", sym <= 1e-8 * scale)
    eigs = np.linalg.eigvalsh(te.entries)
    record("tensor within coercivity bounds",
           eigs.min() >= fld.alpha - 1e-6 and eigs.max() <= fld.beta + 1e-6,
           f"eigs in [{eigs.min():.6g}, {eigs.max():.6g}]")

    failed = [name for name, ok, _ in checks if not ok]
    width = max(len(name) for name, _, _ in checks)
    for name, ok, detail in checks:
        status = "ok " if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"{status} {name.ljust(width)}{suffix}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 0 if not failed else 1


def run(argv=None):
    """Parse arguments, dispatch, and return the process exit code."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = _merge(ns)
        print(json.dumps(cfg.to_json()), file=sys.stderr)
        handler = {
            "tensor": _cmd_tensor,
            "bloch": _cmd_bloch,
            "study": _cmd_study,
            "rho": _cmd_rho,
            "check": _cmd_check,
        }[cfg.command]
        return handler(cfg)
    except (ConfigError, FieldValidationError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
