from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mdyn import maps
from mdyn.conditions import (
    DELTA_GRID,
    InsufficientHorizon,
    ValueChains,
    birkhoff_lyapunov,
    ce_series,
    check_minimum_principle,
    fit_lemma_constants,
    gap_analysis,
    gap_ratio_tail_max,
    growth_lower_bound,
    short_gaps,
    shrink_ratios,
    simultaneous_windows,
    small_identity,
    sr_sum,
    tail_stats,
    tsr_from_kneading,
    tsr_sum,
)
from mdyn.interval import to_rational
from mdyn.orbits import Dynamics
from mdyn.symbolic import kneading_sequences


@pytest.fixture(scope="module")
def tent_chains():
    m = maps.tent()
    dyn = Dynamics(m)
    return m, dyn, ValueChains(m, 200, dyn)


@pytest.fixture(scope="module")
def ulam_dyn():
    m = maps.ulam()
    return m, Dynamics(m)


# -- tail statistics ------------------------------------------------------------------------------


def test_tail_stats_uses_last_fifth():
    s = tail_stats(list(range(100)))
    assert s["liminf"] == 80 and s["limsup"] == 99
    assert tail_stats([])["liminf"] is None


# -- CE --------------------------------------------------------------------------------------------


def test_ce_ulam_is_log4(ulam_dyn):
    m, dyn = ulam_dyn
    rep = ce_series(m, 200, dyn, bits=256)
    s = rep.series[0]
    assert s.reached == 200
    log4 = oracles.log_fraction(4)
    for n in (1, 10, 100, 200):
        e = s.lambda_enclosure(n)
        assert oracles.enclosure_error(to_rational(e.lo), to_rational(e.hi), log4) < Fraction(1, 10**30)


def test_ce_l3_and_tent_closed_forms():
    l3 = ce_series(maps.l3(), 100)
    assert all(abs(x - math.log(3)) < 1e-15 for s in l3.series for x in s.lambdas())
    tent = ce_series(maps.tent(), 100)
    assert all(abs(x - math.log(2)) < 1e-15 for x in tent.series[0].lambdas())


def test_ce_logistic_positive_tail():
    rep = ce_series(maps.logistic(), 500)
    t = rep.tail(0)
    assert t["liminf"] > 0 and t["mean"] > 0


def test_ce_truncates_on_critical_hit():
    # c^1 = 1/2 hits the critical point at once for the map 2x(1-x)
    m = maps.MapSpec.polynomial(["0", "2", "-2"], name="superattracting")
    rep = ce_series(m, 20)
    assert rep.series[0].reached == 0 and rep.series[0].truncation == "hit_critical"


# -- SR and TSR ------------------------------------------------------------------------------------


def test_sr_ulam_examples(ulam_dyn):
    m, dyn = ulam_dyn
    rep = sr_sum(m, (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)), 100, dyn)
    for n in (1, 50, 100):
        assert rep.value(0, Fraction(1, 4), n) == 0
        assert abs(rep.value(0, Fraction(1, 2), n) - math.log(2)) < 1e-12
        assert abs(rep.value(0, Fraction(3, 4), n) - math.log(2)) < 1e-12
    assert rep.undecided[0] == 0


def test_sr_below_min_distance_is_zero():
    rep = sr_sum(maps.logistic(), (Fraction(1, 2**40),), 200)
    assert all(v == 0 for v in rep.series[(0, "1/1099511627776")])


def test_sr_monotone_in_delta():
    rep = sr_sum(maps.logistic(), DELTA_GRID, 300)
    n = rep.reached[0]
    vals = [rep.value(0, d, n) for d in sorted(DELTA_GRID)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_tsr_ulam_examples(ulam_dyn):
    m, dyn = ulam_dyn
    rep = tsr_sum(m, (1, 2, 3), 100, dyn)
    for n in (1, 50, 100):
        assert rep.value(0, 1, n) == 1
        assert rep.value(0, 2, n) == 0
    assert rep.valid


def test_tsr_tent_equals_ulam():
    a = tsr_sum(maps.tent(), horizon=300)
    b = tsr_sum(maps.ulam(), horizon=300)
    assert a.sums == b.sums and a.s_values == b.s_values


@pytest.mark.parametrize("name", ["f3", "logistic"])
def test_tsr_dual_route_agrees(name):
    m = maps.BUILTINS[name]()
    dyn = Dynamics(m)
    direct = tsr_sum(m, horizon=400, dyn=dyn)
    dual = tsr_from_kneading(kneading_sequences(m, 400 + 600, dyn), horizon=400)
    assert direct.s_values == dual.s_values and direct.sums == dual.sums


def test_tsr_monotone_in_level():
    rep = tsr_sum(maps.logistic(), horizon=400)
    n = 400
    vals = [rep.value(0, k, n) for k in rep.ms]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_tsr_matches_independent_kneading_count():
    m = maps.f3()
    rep = tsr_sum(m, (2, 3, 5), 150)
    crit = oracles.CRIT["f3"]
    for i, c in enumerate(crit):
        orbit = oracles.exact_itinerary(oracles.F3, crit, oracles.F3(c), 800)
        kn = []
        for k, c2 in enumerate(crit):
            tail = oracles.exact_itinerary(oracles.F3, crit, oracles.F3(c2), 799)
            kn.append(([k] + tail, [k + 1] + tail))
        for level in (2, 3, 5):
            acc = 0
            for j in range(1, 151):
                s = oracles.s_from_kneading(orbit[j - 1:], kn)
                if s is not None and s >= level:
                    acc += s
            assert rep.value(i, level, 150) == Fraction(acc, 150)


# -- short gaps ----------------------------------------------------------------------------------------


def test_short_gap_windows_greedy():
    left = short_gaps([1, 2, 10, 11], 3)
    right = short_gaps([2, 3, 11, 12], 3)
    w = simultaneous_windows(left, right, 3, 20)
    assert [(x.t1, x.t2) for x in w] == [(1, 3), (10, 12)]


@given(st.lists(st.integers(1, 400), min_size=2, max_size=60, unique=True),
       st.lists(st.integers(1, 400), min_size=2, max_size=60, unique=True),
       st.integers(2, 40))
@settings(max_examples=80)
def test_windows_are_disjoint_and_short(a, b, T):
    left, right = short_gaps(sorted(a), T), short_gaps(sorted(b), T)
    ws = simultaneous_windows(left, right, T, 400)
    for w in ws:
        assert w.t2 - w.t1 < T
        for g in (w.left_gap, w.right_gap):
            assert w.t1 <= g[0] and g[1] <= w.t2
    for u, v in zip(ws, ws[1:]):
        assert u.t2 < v.t1


def test_small_gap_identity_function():
    seq = [1, 5, 30, 31]
    s = {1: 4, 5: 25, 30: 1}
    rep = small_identity(seq, s.get, 10)
    assert rep == {"lhs": 25, "rhs": 25, "ok": True, "undetermined": 0}


def test_tent_windows_at_unit_gaps(tent_chains):
    m, dyn, chains = tent_chains
    rep = gap_analysis(m, 2, 200, dyn, chains)
    assert rep.epsilon == 0 and rep.eta == 0.25
    assert rep.count(0) >= 200 / 4 and rep.passes(0)
    assert rep.mirrored[0]


def test_tent_window_longer_than_horizon(tent_chains):
    m, dyn, chains = tent_chains
    rep = gap_analysis(m, 500, 200, dyn, chains)
    assert rep.count(0) == 1


def test_gap_analysis_needs_gaps():
    with pytest.raises(InsufficientHorizon):
        gap_analysis(maps.tent(), 10, 4)


def test_logistic_small_gap_identity():
    m = maps.logistic()
    dyn = Dynamics(m)
    from mdyn.symbolic import SeparationTable

    rep = gap_analysis(m, 10, 1000, dyn, table=SeparationTable(dyn, 1000 + 600))
    assert all(v["ok"] for v in rep.identity[0].values())


# -- contraction ------------------------------------------------------------------------------------


def test_tent_shrink_ratios_are_half(tent_chains):
    m, dyn, chains = tent_chains
    rep = shrink_ratios(m, 2, 200, dyn, chains)
    assert rep.ratios and all(r["left"] == 0.5 and r["right"] == 0.5 for r in rep.ratios)
    assert rep.all_below_one and rep.gamma == 0.5


def test_ulam_shrink_ratios_tend_to_quarter():
    m = maps.ulam()
    dyn = Dynamics(m)
    chains = ValueChains(m, 40, dyn)
    left = [chains.side_length(0, n + 1, "left") / chains.side_length(0, n, "left") for n in range(1, 40)]
    for n in range(19, 39):
        assert abs(float(left[n]) - 0.25) <= 0.05 * 0.25
    # closed form from the conjugacy: |I^(n)| = 1 - sin^2(pi (1 - 2^-(n+1)) / 2) = sin^2(pi 2^-(n+2))
    for n in (5, 15, 25):
        want = math.sin(math.pi * 2.0 ** -(n + 2)) ** 2
        assert math.isclose(float(chains.side_length(0, n, "left")), want, rel_tol=1e-10)


# -- derivative growth ---------------------------------------------------------------------------------


def test_minimum_principle_ulam(ulam_dyn):
    m, dyn = ulam_dyn
    rep = growth_lower_bound(m, 150, dyn)
    assert rep.asserted and rep.checked > 0 and rep.violations == 0


def test_minimum_principle_not_asserted_without_schwarzian_flag():
    rep = growth_lower_bound(maps.l3(), 50)
    assert not rep.asserted and rep.checked == 0 and rep.records[0]


def test_growth_negative_control_halved_lengths(ulam_dyn):
    # halving |I^(n)| doubles r_n past |Df^n(c^1)| = 4^n
    m, dyn = ulam_dyn
    rep = growth_lower_bound(m, 100, dyn, length_scale=Fraction(1, 2))
    assert rep.violations == rep.checked > 0


def test_growth_doubled_lengths_cannot_violate(ulam_dyn):
    # r_n is a lower bound, so enlarging the denominator only loosens it
    m, dyn = ulam_dyn
    rep = growth_lower_bound(m, 100, dyn, length_scale=2)
    assert rep.violations == 0


def test_check_minimum_principle_helper():
    assert check_minimum_principle([1.0, 2.0, None], [0.5, 2.5, 9.0]) == [1]


# -- lemma constants ---------------------------------------------------------------------------------


def test_ulam_kappa_insufficient(ulam_dyn):
    m, dyn = ulam_dyn
    fits = fit_lemma_constants(m, 200, dyn)
    assert fits.insufficient_data and fits.pairs == [] and fits.kappa_bar is None
    assert fits.xi_bar > 0


def test_tent_branch_lengths_are_powers_of_two(tent_chains):
    m, dyn, chains = tent_chains
    fits = fit_lemma_constants(m, 200, dyn, chains)
    for _, s, length in fits.branch_samples:
        assert length == 2.0**-s
    assert abs(fits.xi_bar - math.log(2)) < 1e-6


def test_gap_ratio_tail_max():
    series = {"a": [(n, 1 / n) for n in range(1, 11)]}
    assert gap_ratio_tail_max(series) == 1 / 9
    assert gap_ratio_tail_max({"a": []}) is None


# -- Birkhoff ------------------------------------------------------------------------------------------


def test_birkhoff_l3_is_log3():
    rep = birkhoff_lyapunov(maps.l3(), 3, 2000)
    assert abs(rep.mean - math.log(3)) < 1e-12
    for s in rep.series:
        assert all(abs(v - math.log(3)) < 1e-12 for v in s)


def test_birkhoff_fixed_point_is_atypical():
    rep = birkhoff_lyapunov(maps.ulam(), [0], 2000)
    assert rep.atypical == [True]
    assert abs(rep.series[0][-1] - math.log(4)) < 1e-12
    assert rep.mean is None


def test_birkhoff_reproducible():
    a = birkhoff_lyapunov(maps.ulam(), 2, 3000, seed=7)
    b = birkhoff_lyapunov(maps.ulam(), 2, 3000, seed=7)
    assert a.to_json() == b.to_json()


def test_ulam_acim_exponent_oracle():
    assert abs(float(oracles.ulam_acim_exponent()) - math.log(2)) < 1e-20
