"""Coefficient fields: builtins, periodization, coercivity, modulus, JSON."""

from __future__ import annotations

import numpy as np
import pytest

from apxhomog.fields import (
    BUILTIN_NAMES,
    FieldValidationError,
    builtin,
    coercivity_check,
    field_from_json,
    field_to_json,
    make_field,
    modulus_rho,
    periodize,
)

# Frozen sampling-oracle values for the default descriptor; the decay
# across L is asserted in the acceptance suite, these pin the endpoints.
RHO_A3_L1 = 0.7962455465797271
RHO_A3_L40 = 0.020843749702628145


def pt(*coords):
    return np.asarray([coords], dtype=float)


def test_builtin_names():
    assert set(BUILTIN_NAMES) == {"A1", "A2", "A3"}
    with pytest.raises(KeyError):
        builtin("A9")


def test_builtin_point_values():
    assert builtin("A2").value(pt(0.25, 0.25))[0, 0, 0] == pytest.approx(91.0, abs=1e-12)
    assert builtin("A3").value(pt(0.0, 0.0))[0, 0, 0] == pytest.approx(6.0, abs=1e-12)


def test_builtin_offdiagonals_vanish():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-7.0, 7.0, size=(50, 2))
    for name in BUILTIN_NAMES:
        vals = builtin(name).value(pts)
        assert np.all(vals[:, 0, 1] == 0.0)
        assert np.all(vals[:, 1, 0] == 0.0)


def test_builtin_matrices_symmetric_positive():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-3.0, 3.0, size=(64, 2))
    for name in BUILTIN_NAMES:
        fld = builtin(name)
        vals = fld.value(pts)
        np.testing.assert_array_equal(vals, np.swapaxes(vals, 1, 2))
        assert np.linalg.eigvalsh(vals).min() > 0.0
        assert 0.0 < fld.alpha <= fld.beta


def test_make_field_rejects_wrong_axis():
    with pytest.raises(FieldValidationError):
        make_field(1, [["sin(2*pi*y)"]])


def test_make_field_rejects_vanishing_divisor():
    with pytest.raises(FieldValidationError):
        make_field(1, [["1 / sin(2*pi*x)"]])
    # the same entry is accepted when validation is switched off
    make_field(1, [["1 / sin(2*pi*x)"]], validate=False)


def test_periodize_restricts_then_repeats():
    base = make_field(1, [["cos(sqrt2 * x)"]])
    ell = 2 * np.pi
    pf = periodize(base, ell)
    val = pf.value(pt(ell + 0.3))[0, 0, 0]
    assert val == pytest.approx(np.cos(np.sqrt(2.0) * 0.3), abs=1e-9)
    assert val == pytest.approx(0.911342, abs=1e-6)


def test_periodize_half_open_convention():
    base = make_field(1, [["cos(sqrt2 * x)"]])
    ell = 2.0
    pf = periodize(base, ell)
    left = base.value(pt(-ell / 2))[0, 0, 0]
    assert pf.value(pt(-ell / 2))[0, 0, 0] == left
    # the right edge belongs to the next copy, so it folds to the left edge
    assert pf.value(pt(ell / 2))[0, 0, 0] == left


def test_periodize_shift_invariance_dyadic_exact():
    """On a power-of-two cell, shifted copies evaluate bit for bit equal."""
    base = builtin("A1")
    pf = periodize(base, 2.0)
    y = np.arange(-64, 64, dtype=float) / 64.0
    pts = np.stack([y, y * 0.5], axis=1)
    ref = pf.value(pts)
    for k in (1.0, -3.0, 17.0):
        shifted = pts + 2.0 * k
        np.testing.assert_array_equal(pf.value(shifted), ref)


def test_periodize_shift_invariance_generic_cell():
    base = builtin("A1")
    ell = 2 * np.pi
    pf = periodize(base, ell)
    y = np.arange(-64, 64, dtype=float) / 64.0
    pts = np.stack([y, -y], axis=1)
    ref = pf.value(pts)
    for k in (1.0, -2.0):
        shifted = pts + ell * k
        np.testing.assert_allclose(pf.value(shifted), ref, rtol=0.0, atol=1e-12)


def test_coercivity_constant():
    res = coercivity_check(make_field(2, [["5", "0"], ["0", "5"]]))
    assert res.ok
    assert res.alpha_est == 5.0


def test_coercivity_a2_analytic_minimum():
    res = coercivity_check(builtin("A2"))
    assert res.ok
    assert res.alpha_est >= 31.0 - 1e-9


def test_coercivity_sign_change_reports_witness():
    fld = make_field(
        2, [["sin(2*pi*x)", "0"], ["0", "1"]], validate=False
    )
    res = coercivity_check(fld)
    assert not res.ok
    assert res.alpha_est < 0.0
    # the witness is a sample point where the matrix loses definiteness
    wv = fld.value(np.asarray([res.witness], dtype=float))
    assert np.linalg.eigvalsh(wv[0]).min() == pytest.approx(res.alpha_est)


def test_modulus_constant_field_is_zero():
    fld = make_field(2, [["3", "0"], ["0", "3"]])
    assert modulus_rho(fld, 2.0).rho == 0.0


def test_modulus_periodic_field_vanishes():
    # 1-periodic field, translate grid contains the integer lattice
    est = modulus_rho(builtin("A1"), 2.0)
    assert est.rho <= 1e-12


def test_modulus_decay_endpoints_frozen():
    assert modulus_rho(builtin("A3"), 1.0).rho == pytest.approx(RHO_A3_L1, rel=1e-12)
    assert modulus_rho(builtin("A3"), 40.0).rho == pytest.approx(RHO_A3_L40, rel=1e-12)
    assert RHO_A3_L1 > RHO_A3_L40


def test_modulus_monotone_under_nested_translate_grids():
    # dyadic z-grid step makes the L=1 grid a subset of the L=2 grid,
    # so enlarging L can only improve the best translate
    r1 = modulus_rho(builtin("A3"), 1.0).rho
    r2 = modulus_rho(builtin("A3"), 2.0).rho
    assert r2 <= r1 + 1e-15


def test_json_round_trip():
    fld = builtin("A1")
    doc = field_to_json(fld)
    assert doc["d"] == 2
    assert isinstance(doc["entries"][0][0], str)
    back = field_from_json(doc)
    assert back.d == fld.d
    assert back.alpha == pytest.approx(fld.alpha)
    rng = np.random.default_rng(11)
    pts = rng.uniform(-2.0, 2.0, size=(32, 2))
    np.testing.assert_array_equal(back.value(pts), fld.value(pts))
