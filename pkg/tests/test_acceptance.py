"""End-to-end acceptance runs; a one-line verdict per criterion is printed in the terminal summary."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import pytest

import oracles
from mdyn import maps
from mdyn.cli import main, oracle_agreement
from mdyn.conditions import (
    ValueChains,
    birkhoff_lyapunov,
    ce_series,
    fit_lemma_constants,
    gap_analysis,
    gap_ratio_series,
    gap_ratio_tail_max,
    growth_lower_bound,
    shrink_ratios,
)
from mdyn.conjugacy import compare_combinatorics, load_pair
from mdyn.cylinders import CylinderChain, refine_cylinder, verify_distance_sandwich
from mdyn.interval import to_rational
from mdyn.orbits import Dynamics

MAPS = Path(__file__).resolve().parent.parent / "maps"
FOUR = ("tent", "ulam", "f3", "logistic")
TOL_CE = Fraction(1, 10**30)


@pytest.fixture(scope="module")
def logistic_2000():
    m = maps.logistic()
    dyn = Dynamics(m)
    return m, dyn, ValueChains(m, 2000, dyn)


# -- 1 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(1, "closed-form CE exponents: Ulam log 4 (n <= 500, 256 bits, 1e-30), L3 log 3")
def test_closed_form_ce(record_property):
    for name, k in (("ulam", 4), ("l3", 3)):
        m = maps.BUILTINS[name]()
        rep = ce_series(m, 500, bits=256)
        target = oracles.log_fraction(k)
        worst = Fraction(0)
        for s in rep.series:
            assert s.reached == 500
            for n in range(1, 501):
                e = s.lambda_enclosure(n)
                worst = max(worst, oracles.enclosure_error(to_rational(e.lo), to_rational(e.hi), target))
        record_property("detail", f"{name}: max |lambda_n - log {k}| over n <= 500 is {float(worst):.3e}")
        assert worst < TOL_CE


# -- 2 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(2, "conjugate pairs share kneading (1e4), cut events (depth 1e3), TSR; CE differs")
@pytest.mark.parametrize("pair,lam_f,lam_g", [("pair_tent_ulam", 2, 4), ("pair_l3_f3", 3, 9)])
def test_combinatorial_invariance(pair, lam_f, lam_g, record_property):
    p = load_pair(MAPS / f"{pair}.json")
    rep = compare_combinatorics(p, 1000, kneading_length=10_000, depth=1000)
    assert all(v["match"] and v["compared"] >= 10_000 for v in rep.kneading_match.values())
    assert all(v["match"] and v["depth"] >= 1000 for v in rep.shadowing_match.values())
    assert rep.tsr_delta == 0 and rep.separation_match
    f = [a["tail_mean"] for a in rep.ce_exponents["f"]]
    g = [a["tail_mean"] for a in rep.ce_exponents["g"]]
    assert all(abs(x - math.log(lam_f)) < 1e-12 for x in f)
    assert all(abs(x - math.log(lam_g)) < 1e-12 for x in g)
    assert all(rep.ce_exponents["differ"])
    record_property("detail", f"{pair}: kneading {[v['compared'] for v in rep.kneading_match.values()]}, "
                    f"cut events {[v['cut_events'] for v in rep.shadowing_match.values()]}, tsr_delta 0, "
                    f"lambda {f[0]:.6f} vs {g[0]:.6f}")


# -- 3 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(3, "separation identity and distance sandwich at 100% to horizon 2000; corruptions fail")
@pytest.mark.parametrize("name", FOUR)
def test_structural_identities(name, tmp_path, record_property):
    code = main(["oracle", name, "--horizon", "2000", "--samples", "1000", "--out", str(tmp_path / "clean")])
    manifest = json.loads((tmp_path / "clean" / "manifest.json").read_text())
    sep = json.loads((tmp_path / "clean" / "septime.json").read_text())["checks"]
    dist = json.loads((tmp_path / "clean" / "distance.json").read_text())["checks"]
    eligible = sum(r["checked"] for r in sep)
    sampled = [r["checked"] for r in dist]
    record_property("detail", f"{name}: separation pairs {sum(r['passed'] for r in sep)}/{eligible}, "
                    f"distance samples {sum(r['passed'] for r in dist)}/{sum(sampled)}")
    assert code == 0 and not manifest["status"]["failed"]
    assert eligible > 0 and all(r["ok"] for r in sep)
    assert all(n >= 1000 for n in sampled) and all(r["ok"] for r in dist)

    bad = main(["oracle", name, "--horizon", "2000", "--samples", "200", "--corrupt", "--out", str(tmp_path / "bad")])
    assert bad == 2

    m = maps.BUILTINS[name]()
    chain, _ = refine_cylinder(m, Fraction(2, 7), 2000)
    original = CylinderChain.side_length
    chain.side_length = (lambda self, n, side, rel=2.0**-40: original(self, n, side, rel) * Fraction(1, 4)).__get__(chain)
    scaled = verify_distance_sandwich(m, Fraction(2, 7), samples=200, chain=chain)
    assert scaled.checked > 0 and not scaled.ok


# -- 4 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(4, "certified cylinders match the float64 brute-force hulls within 2/grid (depth <= 12)")
@pytest.mark.parametrize("name", FOUR)
def test_oracle_equivalence(name, record_property):
    m = maps.BUILTINS[name]()
    dyn = Dynamics(m)
    checked = 0
    for x in (Fraction(2, 7), Fraction(3, 11), Fraction(5, 13), Fraction(7, 17), Fraction(3, 10)):
        rep = oracle_agreement(m, x, 12, 100_000, dyn)
        assert rep.ok and rep.checked == 13, rep.failures
        checked += rep.checked
    record_property("detail", f"{name}: {checked} (point, depth) comparisons agree")


# -- 5 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(5, "contraction at simultaneous short gaps: ratios < 1; tent 1/2; Ulam -> 1/4")
def test_contraction(logistic_2000, record_property):
    m, dyn, chains = logistic_2000
    rep = shrink_ratios(m, 50, 2000, dyn, chains)
    assert rep.ratios and rep.all_below_one and rep.skipped == 0
    record_property("detail", f"logistic T=50: {len(rep.ratios)} windows, max ratio {rep.gamma:.4f}")

    tent = maps.tent()
    tdyn = Dynamics(tent)
    trep = shrink_ratios(tent, 50, 2000, tdyn)
    assert trep.ratios and all(r["enclosures"]["left"].contains(Fraction(1, 2)) for r in trep.ratios)
    assert trep.all_below_one

    ulam = maps.ulam()
    uc = ValueChains(ulam, 60, Dynamics(ulam))
    ratios = [float(uc.side_length(0, n + 1, "left") / uc.side_length(0, n, "left")) for n in range(1, 60)]
    late = ratios[19:]
    assert all(abs(r - 0.25) <= 0.05 * 0.25 for r in late)
    record_property("detail", f"tent: {len(trep.ratios)} windows all 1/2; Ulam ratio at depth 20 = {ratios[19]:.5f}")


# -- 6 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(6, "disjoint simultaneous windows >= eta n with eta = (1 - 2 eps) / 2T at T = 50")
def test_window_density(logistic_2000, record_property):
    m, dyn, chains = logistic_2000
    for label, rep in (("tent", gap_analysis(maps.tent(), 50, 2000)), ("logistic", gap_analysis(m, 50, 2000, dyn, chains))):
        record_property("detail", f"{label}: count {rep.count(0)} >= {rep.required():.2f} (eps {rep.epsilon:.4f})")
        assert rep.passes(0)


# -- 7 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(7, "minimum principle |Df^n(c^1)| >= r_n for n <= 500 on Ulam and F3")
@pytest.mark.parametrize("name", ["ulam", "f3"])
def test_minimum_principle(name, record_property):
    m = maps.BUILTINS[name]()
    rep = growth_lower_bound(m, 500)
    record_property("detail", f"{name}: {rep.checked} checked, {rep.violations} violations, "
                    f"{rep.undecided} undecided, {rep.skipped} without a usable side")
    assert rep.asserted and rep.checked > 0 and rep.violations == 0


# -- 8 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(8, "monotone-branch lengths: tent 2^-s with xi = log 2; Ulam xi > 0")
def test_branch_envelope(record_property):
    tent = maps.tent()
    fits = fit_lemma_constants(tent, 200, branch_depth=200)
    assert fits.branch_samples
    for _, s, length in fits.branch_samples:
        assert length == 2.0**-s
    assert abs(fits.xi_bar - math.log(2)) < 1e-6
    ulam = fit_lemma_constants(maps.ulam(), 200, branch_depth=200)
    assert ulam.xi_bar > 0
    record_property("detail", f"tent xi {fits.xi_bar:.12f}; Ulam xi {ulam.xi_bar:.6f}")


# -- 9 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(9, "0 < kappa <= kappa_bar < inf on logistic; gap-ratio tail max decreases with horizon")
def test_lemma_constant_ordering(logistic_2000, record_property):
    m, dyn, chains = logistic_2000
    fits = fit_lemma_constants(m, 2000, dyn, chains)
    assert not fits.insufficient_data
    assert 0 < fits.kappa_lower <= fits.kappa_bar < math.inf
    tails = []
    for h in (500, 1000, 2000):
        tails.append(gap_ratio_tail_max(gap_ratio_series(ValueChains(m, h, dyn))))
    record_property("detail", f"kappa {fits.kappa_lower:.4f} <= kappa_bar {fits.kappa_bar:.4f} over "
                    f"{len(fits.pairs)} pairs; tail max {[round(t, 5) for t in tails]}")
    assert tails[0] > tails[1] > tails[2]


# -- 10 --------------------------------------------------------------------------------------------


@pytest.mark.criterion(10, "Ulam Birkhoff Lyapunov estimate within 0.01 of log 2 (10 seeds, 1e5 steps)")
def test_birkhoff(record_property):
    rep = birkhoff_lyapunov(maps.ulam(), 10, 100_000, seed=0)
    finals = [s[-1] for s, a, t in zip(rep.series, rep.atypical, rep.truncated) if not a and t is None]
    record_property("detail", f"{len(finals)} typical seeds, mean {rep.mean:.6f}, spread {rep.spread:.2e}")
    assert len(finals) == 10
    assert all(abs(v - math.log(2)) < 0.01 for v in finals)
    assert abs(rep.mean - math.log(2)) < 0.01


# -- 11 --------------------------------------------------------------------------------------------


@pytest.mark.criterion(11, "identical configurations give byte-identical reports")
@pytest.mark.parametrize("argv", [
    ["analyze", "logistic", "--horizon", "500", "--seeds", "2", "--birkhoff-horizon", "2000"],
    ["conjugacy", str(MAPS / "pair_l3_f3.json"), "--horizon", "300"],
    ["oracle", "f3", "--horizon", "300", "--samples", "200"],
], ids=["analyze", "conjugacy", "oracle"])
def test_determinism(argv, tmp_path, record_property):
    main([*argv, "--out", str(tmp_path / "a")])
    main([*argv, "--out", str(tmp_path / "b")])
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n
    record_property("detail", f"{argv[0]}: {len(names)} files identical")
