"""Sweep drivers, rate fitting, and CSV emission."""

from __future__ import annotations

import math

import numpy as np
import pytest

import apxhomog.study as study
from apxhomog.cell import MeshParams
from apxhomog.linalg import SolverError
from apxhomog.study import (
    csv_text,
    fit_rate,
    sweep_corrector_difference,
    sweep_modulus,
    sweep_regularization,
    sweep_tensor,
    unit_cell_reference,
    write_csv,
    write_modulus_csv,
    write_plot_data,
)

CSV_HEADER = "scheme,ell,R,Tinv,nodes_per_unit,a11,a12,a21,a22,err_max,err_fro,seconds"


def test_fit_rate_recovers_power_law():
    pts = [(R, 7.0 / R) for R in (2.0, 3.0, 5.0, 8.0)]
    fit = fit_rate(pts)
    assert fit.slope == pytest.approx(-1.0, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log10(7.0), abs=1e-10)
    assert fit.residual <= 1e-10
    assert not fit.exact
    assert fit.R_range == (2.0, 8.0)


def test_fit_rate_quadratic_decay():
    pts = [(R, 3.0 * R**-2) for R in (1.0, 2.0, 4.0, 8.0, 16.0)]
    assert fit_rate(pts).slope == pytest.approx(-2.0, abs=1e-10)


def test_fit_rate_needs_three_points():
    with pytest.raises(ValueError, match="insufficient"):
        fit_rate([(1.0, 1.0), (2.0, 0.5)])


def test_fit_rate_all_zero_errors_flagged_exact():
    fit = fit_rate([(1.0, 0.0), (2.0, 0.0), (4.0, 0.0)])
    assert fit.exact
    assert math.isnan(fit.slope)


def test_unit_cell_reference_requires_period():
    from apxhomog.fields import make_field

    nohint = make_field(1, [["2 + sin(2*pi*x)"]])
    with pytest.raises(ValueError):
        unit_cell_reference(nohint)


def test_unit_cell_reference_cached(d1_field):
    a = unit_cell_reference(d1_field, nodes_per_unit=64.0)
    b = unit_cell_reference(d1_field, nodes_per_unit=64.0)
    assert a is b
    assert a.entries[0, 0] == pytest.approx(np.sqrt(3.0), rel=1e-3)


def test_sweep_tensor_records_sorted_and_complete(a1, a1_unit_ref):
    mesh = MeshParams(nodes_per_unit=4.0)
    res = sweep_tensor(a1, "P", [2.0, 1.0], mesh=mesh, reference=a1_unit_ref, jobs=2)
    assert [r.R for r in res.records] == [1.0, 2.0]
    assert res.failures == []
    for r in res.records:
        assert r.scheme == "P"
        assert r.entries.shape == (2, 2)
        assert r.seconds > 0.0


def test_sweep_tensor_error_norms_ordered(a1, a1_unit_ref):
    mesh = MeshParams(nodes_per_unit=4.0)
    res = sweep_tensor(a1, "P", [1.0, 2.0, 3.0], mesh=mesh, reference=a1_unit_ref)
    assert res.rate is not None
    for r in res.records:
        assert r.err_max <= r.err_fro <= 2.0 * r.err_max + 1e-15


def test_sweep_tensor_collects_failures(a1, a1_unit_ref, monkeypatch):
    real = study.solve_cell_problems

    def flaky(field, mesh, **kw):
        if abs(kw.get("ell", 0.0) - 2.0 * 2.0 * np.pi) < 1e-9:
            raise SolverError("injected failure")
        return real(field, mesh, **kw)

    monkeypatch.setattr(study, "solve_cell_problems", flaky)
    mesh = MeshParams(nodes_per_unit=4.0)
    res = sweep_tensor(a1, "P", [1.0, 2.0], mesh=mesh, reference=a1_unit_ref)
    assert [r.R for r in res.records] == [1.0]
    assert len(res.failures) == 1
    assert "injected" in str(res.failures[0])


def test_sweep_tensor_all_points_failing_raises(a1, a1_unit_ref, monkeypatch):
    def broken(field, mesh, **kw):
        raise SolverError("nope")

    monkeypatch.setattr(study, "solve_cell_problems", broken)
    with pytest.raises(SolverError):
        sweep_tensor(
            a1, "P", [1.0], mesh=MeshParams(nodes_per_unit=4.0), reference=a1_unit_ref
        )


def test_sweep_regularization_reference_is_unregularized(a1):
    mesh = MeshParams(nodes_per_unit=4.0)
    res = sweep_regularization(a1, 1.0, [0.5, 0.25], mesh=mesh)
    assert [r.tinv for r in res.records] == [0.5, 0.25]
    for r in res.records:
        assert r.err_max > 0.0


def test_sweep_corrector_difference_records(a1):
    mesh = MeshParams(nodes_per_unit=3.0)
    res = sweep_corrector_difference(a1, [1.0, 2.0], mesh=mesh)
    assert [r.R for r in res.records] == [1.0, 2.0]
    for r in res.records:
        assert r.err_max >= 0.0


def test_sweep_modulus_periodic_tagged_exact(a1):
    res = sweep_modulus(a1, [1.0, 2.0])
    assert all(rho <= 1e-12 for _, rho in res.records)
    assert res.tau == "exact (periodic)"


def test_csv_schema_and_timing_column(d1_field):
    mesh = MeshParams(nodes_per_unit=8.0)
    res = sweep_tensor(d1_field, "P", [0.5], mesh=mesh)
    text = csv_text(res.records)
    lines = text.strip().splitlines()
    assert lines[0] == CSV_HEADER
    # timing is zeroed unless requested, for reproducible fixtures
    assert lines[1].endswith(",0.0")
    timed = csv_text(res.records, include_timing=True).strip().splitlines()
    assert not timed[1].endswith(",0.0")


def test_csv_one_dimensional_fields_zero_padded(d1_field):
    # one unit cell: R chosen so ell = 2*pi*R = 1
    mesh = MeshParams(nodes_per_unit=16.0)
    res = sweep_tensor(d1_field, "P", [1.0 / (2.0 * np.pi)], mesh=mesh)
    row = csv_text(res.records).strip().splitlines()[1].split(",")
    a11, a12, a21, a22 = (float(v) for v in row[5:9])
    assert a11 == pytest.approx(np.sqrt(3.0), rel=1e-2)
    assert (a12, a21, a22) == (0.0, 0.0, 0.0)


def test_csv_byte_determinism(a1, a1_unit_ref):
    mesh = MeshParams(nodes_per_unit=4.0)
    texts = []
    for _ in range(2):
        res = sweep_tensor(
            a1, "P", [1.0, 2.0], mesh=mesh, reference=a1_unit_ref, jobs=2
        )
        texts.append(csv_text(res.records))
    assert texts[0] == texts[1]


def test_write_csv_and_modulus_csv(tmp_path, d1_field, a3):
    mesh = MeshParams(nodes_per_unit=8.0)
    res = sweep_tensor(d1_field, "P", [0.5], mesh=mesh)
    p = tmp_path / "sweep.csv"
    write_csv(res.records, p)
    assert p.read_text().startswith(CSV_HEADER)
    mod = sweep_modulus(a3, [1.0, 2.0])
    q = tmp_path / "mod.csv"
    write_modulus_csv(mod.records, q)
    lines = q.read_text().strip().splitlines()
    assert lines[0] == "L,rho"
    assert len(lines) == 3


def test_write_plot_data_log_columns(tmp_path, a1, a1_unit_ref):
    mesh = MeshParams(nodes_per_unit=4.0)
    res = sweep_tensor(a1, "P", [1.0, 2.0], mesh=mesh, reference=a1_unit_ref)
    p = tmp_path / "plot.dat"
    write_plot_data(res.records, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "log10_R,log10_err_max"
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 2
    for (lr, le), rec in zip(rows, res.records):
        assert float(lr) == pytest.approx(math.log10(rec.R), abs=1e-12)
        assert float(le) == pytest.approx(math.log10(rec.err_max), abs=1e-12)


def test_write_plot_data_skips_zero_errors(tmp_path, d1_field):
    mesh = MeshParams(nodes_per_unit=8.0)
    res = sweep_tensor(d1_field, "P", [0.5], mesh=mesh)
    rec = res.records[0]
    zeroed = type(rec)(
        scheme=rec.scheme,
        ell=rec.ell,
        R=rec.R,
        tinv=rec.tinv,
        nodes_per_unit=rec.nodes_per_unit,
        entries=rec.entries,
        err_max=0.0,
        err_fro=0.0,
        seconds=rec.seconds,
    )
    p = tmp_path / "plot.dat"
    write_plot_data([rec, zeroed], p)
    lines = p.read_text().strip().splitlines()
    # the zero-error row cannot be drawn on log axes and is dropped
    assert len(lines) == 2
