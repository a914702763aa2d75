from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mdyn import maps
from mdyn.errors import MapDefinitionError, NotDifferentiable, NotInvertible, NotSmooth, PrecisionExhausted
from mdyn.homeo import HomeoSpec
from mdyn.interval import CertifiedValue, PrecisionConfig, rational_str, to_rational
from mdyn.maps import MapSpec, derivative, evaluate, find_critical_points, schwarzian, verify_nonflat

rationals01 = st.fractions(min_value=0, max_value=1, max_denominator=10**6)


# -- certified values -------------------------------------------------------------------


def test_rational_roundtrip_strings():
    assert rational_str(Fraction(3, 10)) == "3/10"
    assert to_rational("3/10") == Fraction(3, 10)
    assert to_rational("0.3") == Fraction(3, 10)


def test_precision_config_validation():
    with pytest.raises(ValueError):
        PrecisionConfig(initial_bits=32)
    with pytest.raises(ValueError):
        PrecisionConfig(initial_bits=256, max_bits=128)
    assert list(PrecisionConfig(128, 1024).ladder()) == [128, 256, 512, 1024]


def test_max_bits_env_override(monkeypatch):
    monkeypatch.setenv("MDYN_MAX_BITS", "256")
    assert PrecisionConfig(128, 16384).with_env().max_bits == 256


@given(rationals01, rationals01)
def test_interval_arithmetic_encloses_exact(a, b):
    va, vb = CertifiedValue.from_rational(a, 64), CertifiedValue.from_rational(b, 64)
    for got, want in ((va + vb, a + b), (va - vb, a - b), (va * vb, a * b), (-va, -a), (abs(va - vb), abs(a - b))):
        assert got.lo <= want <= got.hi
    if b:
        q = va / vb
        assert q.lo <= a / b <= q.hi


@given(st.fractions(min_value=-5, max_value=5, max_denominator=97), rationals01)
def test_mixed_rational_operands_round_outward(r, a):
    # a rational operand that is not exactly representable must not be rounded inward
    v = CertifiedValue.from_rational(a, 64).at(64)
    v = CertifiedValue(v.lo, v.hi, 64)
    for got, want in ((v + r, a + r), (v - r, a - r), (v * r, a * r)):
        assert got.lo <= want <= got.hi


@given(rationals01)
@settings(max_examples=50)
def test_enclosures_nest_under_escalation(x):
    m = maps.logistic()
    lo = m.image(CertifiedValue.point(CertifiedValue.from_rational(x, 64).mid(), 64))
    v = CertifiedValue(CertifiedValue.from_rational(x, 64).lo, CertifiedValue.from_rational(x, 64).hi, 64)
    wide = m.image(v)
    narrow = m.image(CertifiedValue(v.lo, v.hi, 256))
    assert wide.lo <= narrow.lo and narrow.hi <= wide.hi
    assert lo.width() >= 0


# -- evaluation ----------------------------------------------------------------------------------


def test_evaluate_examples():
    assert evaluate(maps.ulam(), Fraction(1, 2)).exact == 1
    assert evaluate(maps.tent(), Fraction(3, 10)).exact == Fraction(3, 5)
    assert evaluate(maps.ulam(), Fraction(3, 10)).exact == Fraction(21, 25)


def test_evaluate_width_request_exhausts():
    m = maps.ulam(PrecisionConfig(64, 128))
    x = CertifiedValue(CertifiedValue.from_rational(Fraction(1, 3), 64).lo, CertifiedValue.from_rational(Fraction(1, 3), 64).hi, 64)
    with pytest.raises(PrecisionExhausted):
        evaluate(m, x, width=2.0**-400)


@given(rationals01)
@settings(max_examples=25)
def test_exact_images_match_fraction_oracle(x):
    for name in ("ulam", "tent", "l3", "f3"):
        m = maps.BUILTINS[name]()
        assert evaluate(m, x).contains(oracles.EXACT[name](x))


def test_derivative_examples():
    u = maps.ulam()
    assert derivative(u, 0).contains(4)
    assert derivative(u, Fraction(1, 2)).contains(0)
    assert derivative(u, 1).contains(-4)
    with pytest.raises(NotDifferentiable):
        derivative(maps.tent(), Fraction(1, 2))


def test_schwarzian_examples():
    u = maps.ulam()
    assert schwarzian(u, 0).contains(-6)
    assert schwarzian(u, Fraction(1, 4)).contains(-24)
    with pytest.raises(NotSmooth):
        schwarzian(maps.tent(), Fraction(1, 3))


@given(st.fractions(min_value=0, max_value=1, max_denominator=10**4))
def test_schwarzian_matches_sympy(x):
    coeffs = [0, 9, -24, 16]
    if x in (Fraction(1, 4), Fraction(3, 4)):
        return
    want = oracles.schwarzian_exact(coeffs, x)
    got = schwarzian(maps.f3(), x)
    assert got.lo <= float(want) + 1e-9 * abs(float(want)) and float(want) - 1e-9 * abs(float(want)) <= got.hi


@pytest.mark.parametrize("name", ["ulam", "f3", "logistic"])
def test_negative_schwarzian_on_dense_grid(name):
    m = maps.BUILTINS[name]()
    assert m.negative_schwarzian
    crit = [float(c) for c in m.critical_points]
    for k in range(1, 10_000):
        x = Fraction(k, 10_000)
        if any(abs(float(x) - c) < 1e-9 for c in crit):
            continue
        assert schwarzian(m, x).hi < 0


def test_negative_schwarzian_flag_rejected_when_false():
    # x + x^2 ... a map with positive Schwarzian somewhere cannot carry the flag
    with pytest.raises(MapDefinitionError):
        MapSpec.polynomial(["0", "3", "-6", "4"], negative_schwarzian=True)


# -- critical points and non-flatness ---------------------------------------------------------------


def test_critical_points_examples():
    cps = find_critical_points(maps.ulam())
    assert len(cps) == 1 and cps[0].exact == Fraction(1, 2) and abs(cps[0].order - 2) < 1e-3
    assert [c.exact for c in find_critical_points(maps.l3())] == [Fraction(1, 3), Fraction(2, 3)]
    f3 = find_critical_points(maps.f3())
    assert [c.exact for c in f3] == [Fraction(1, 4), Fraction(3, 4)]
    assert all(abs(c.order - 2) < 1e-3 for c in f3)


def test_critical_points_interior_and_ordered():
    for name, fn in maps.BUILTINS.items():
        xs = [float(c) for c in fn().critical_points]
        assert all(0 < x < 1 for x in xs), name
        assert xs == sorted(xs)


def test_turning_points_change_derivative_sign():
    for name in ("ulam", "f3", "logistic"):
        m = maps.BUILTINS[name]()
        for c in m.critical_points:
            left = derivative(m, Fraction(c.exact) - Fraction(1, 1000))
            right = derivative(m, Fraction(c.exact) + Fraction(1, 1000))
            assert left.sign() * right.sign() == -1


def test_verify_nonflat():
    rec = verify_nonflat(maps.ulam(), maps.ulam().critical_points[0], 200)
    assert rec.passed and abs(rec.order - 2) < 1e-3 and abs(rec.constant - 8) < 1e-6
    f3 = maps.f3()
    rec = verify_nonflat(f3, f3.critical_points[0], 200)
    assert rec.passed and math.isfinite(rec.constant)
    tent = maps.tent()
    rec = verify_nonflat(tent, tent.critical_points[0], 50)
    assert not rec.passed and rec.rejected
    with pytest.raises(ValueError):
        verify_nonflat(maps.ulam(), maps.ulam().critical_points[0], 5)


def test_boundary_policy():
    assert maps.ulam().boundary_fixed
    assert maps.logistic().q == 1  # 3.9 keeps critical orbit off the boundary


# -- homeomorphisms and pushforwards ---------------------------------------------------------------------


@pytest.mark.parametrize("form", ["square", "sqrt", "sin2", "asin2"])
def test_homeo_inverse_pairs(form):
    h = HomeoSpec(form)
    for k in range(0, 101):
        x = CertifiedValue.from_rational(Fraction(k, 100), 128)
        back = h.inverse()(h(x))
        tol = Fraction(1, 10**25)
        assert to_rational(back.lo) - tol <= Fraction(k, 100) <= to_rational(back.hi) + tol


def test_spline_validation():
    with pytest.raises(NotInvertible):
        HomeoSpec.spline([(0, 0), ("1/2", "3/4"), ("1/3", 1), (1, 1)])
    h = HomeoSpec.spline([(0, 0), ("1/2", "1/4"), (1, 1)])
    assert h(CertifiedValue.from_rational(Fraction(1, 4), 128)).contains(Fraction(1, 8))


@given(st.fractions(min_value=0, max_value=1, max_denominator=1000))
@settings(max_examples=60)
def test_pushforward_wrapper_encloses_conjugate(x):
    h = HomeoSpec("sin2")
    g = MapSpec.pushforward(maps.tent(), h)
    v = CertifiedValue.from_rational(x, 128)
    assert g.image(h(v)).overlaps(h(maps.tent().image(v)))


def test_pushforward_of_tent_is_ulam_on_grid():
    h = HomeoSpec("sin2")
    g = MapSpec.pushforward(maps.tent(), h)
    for k in range(201):
        y = CertifiedValue.from_rational(Fraction(k, 200), 128)
        assert g.image(y).overlaps(maps.ulam().image(y))
    assert abs(float(g.critical_points[0]) - 0.5) < 1e-30


def test_pushforward_derivative_undefined_at_boundary():
    g = MapSpec.pushforward(maps.tent(), HomeoSpec("sin2"))
    with pytest.raises(NotDifferentiable):
        g.derivative(CertifiedValue.from_rational(0, 128))


def test_map_json_roundtrip(tmp_path):
    for name, fn in maps.BUILTINS.items():
        m = fn()
        path = tmp_path / f"{name}.json"
        maps.save_map(m, path)
        back = maps.load_map(path)
        assert maps.map_to_json(back) == maps.map_to_json(m)


def test_map_json_rejects_wrong_critical_declaration():
    obj = maps.map_to_json(maps.ulam())
    obj["critical_points"] = [{"location": "1/3"}]
    with pytest.raises(MapDefinitionError):
        maps.map_from_json(obj)
