"""Finite-horizon Collet-Eckmann, slow recurrence and topological slow recurrence data.

Limits are never claimed.  Every quantity is a finite series together with
tail statistics: ``liminf`` is the minimum and ``limsup`` the maximum over the
last 20% of a series.  Constants are extremal envelopes (max/min ratios) over
certified data rather than regressions, so each fitted constant is a bound
that the data actually satisfies.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
import numpy as np
from gmpy2 import mpfr

from . import interval as iv
from .cylinders import LEFT, RIGHT, CylinderChain, ShadowingTimes, refine_cylinder
from .errors import (
    AtCriticalPoint,
    InsufficientHorizon,
    NotDifferentiable,
    PrecisionExhausted,
)
from .interval import CertifiedValue, nearest, rational_str, to_rational
from .maps import MapSpec
from .orbits import Dynamics
from .symbolic import (
    DEFAULT_MARGIN,
    KneadingData,
    SeparationTable,
    delta0,
    distance_to_critical,
    masks,
)

TAIL = 0.2
DELTA_GRID = tuple(Fraction(1, 2**k) for k in range(3, 11))
M_GRID = tuple(range(2, 13))
T_GRID = (10, 25, 50, 100)
EXCLUSION_LIMIT = 0.01
MIN_PAIRS = 10
MIN_GAPS = 10
TAIL_CONVENTION = "liminf = min and limsup = max over the last 20% of each series"


def _cell(x: float) -> str:
    """CSV cell with its precision tag (float64 values carry 53 bits)."""
    return f"{x!r}@53"


def tail_stats(series) -> dict:
    vals = [v for v in series if v is not None and math.isfinite(v)]
    if not vals:
        return {"count": 0, "liminf": None, "limsup": None, "mean": None}
    k = max(1, math.ceil(len(vals) * TAIL))
    tail = vals[-k:]
    return {"count": k, "liminf": min(tail), "limsup": max(tail), "mean": math.fsum(tail) / k}


def _dyn(m: MapSpec, dyn: Dynamics | None) -> Dynamics:
    return dyn if dyn is not None else Dynamics(m)


# -- shared chains at the critical values ---------------------------------------------


class ValueChains:
    """Cylinder chains and shadowing times at every critical value c_i^1, built once per horizon.

    A critical value at a domain endpoint has one degenerate side; its
    shadowing times are then mirrored from the other side, as at a critical
    point where N- = N+.
    """

    def __init__(self, m: MapSpec, horizon: int, dyn: Dynamics | None = None):
        self.m = m
        self.horizon = horizon
        self.dyn = _dyn(m, dyn)
        self._data: dict = {}

    def _build(self, i: int):
        if i not in self._data:
            chain, times = refine_cylinder(self.m, ("cval", i), self.horizon, dyn=self.dyn)
            mirror = None
            for side, other in ((LEFT, RIGHT), (RIGHT, LEFT)):
                if chain.is_degenerate(chain.depth, side) and not times.side(side):
                    mirror = (side, other)
            if mirror is not None:
                seq = times.side(mirror[1])
                times = ShadowingTimes(seq, seq, times.depth)
            self._data[i] = (chain, times, mirror)
        return self._data[i]

    def chain(self, i: int) -> CylinderChain:
        return self._build(i)[0]

    def times(self, i: int) -> ShadowingTimes:
        return self._build(i)[1]

    def mirrored(self, i: int) -> bool:
        return self._build(i)[2] is not None

    def real_side(self, i: int, side: str) -> str:
        mirror = self._build(i)[2]
        return mirror[1] if mirror is not None and side == mirror[0] else side

    def side_length(self, i: int, n: int, side: str) -> CertifiedValue:
        return self.chain(i).side_length(n, self.real_side(i, side))


# -- Collet-Eckmann ---------------------------------------------------------------------------


def _log_abs_derivative(m: MapSpec, v: CertifiedValue, bits: int) -> CertifiedValue:
    if v.exact is not None and v.prec < bits:
        v = v.at(bits)
    d = abs(m.derivative(v))
    if d.lo <= 0:
        raise AtCriticalPoint("derivative enclosure touches zero")
    return iv.log(d)


@dataclass
class CESeries:
    """S_n = log|Df^n(c_i^1)| for n = 1 .. reached (enclosures)."""

    critical_index: int
    logs: list
    truncation: str | None = None

    @property
    def reached(self) -> int:
        return len(self.logs)

    def lambda_enclosure(self, n: int) -> CertifiedValue:
        return self.logs[n - 1] * Fraction(1, n)

    def lambdas(self) -> list[float]:
        return [float(s) / (n + 1) for n, s in enumerate(self.logs)]


@dataclass
class CEReport:
    horizon: int
    bits: int
    series: tuple
    max_slope: float
    fits: tuple = ()

    def tail(self, i: int) -> dict:
        return tail_stats(self.series[i].lambdas())

    def to_json(self) -> dict:
        out = []
        for s, fit in zip(self.series, self.fits):
            lam = s.lambdas()
            out.append({
                "critical_index": s.critical_index,
                "reached": s.reached,
                "truncation": s.truncation,
                "lambda": lam,
                "lambda_width_max": max((float(s.lambda_enclosure(n).width()) for n in range(1, s.reached + 1)),
                                        default=0.0),
                "tail": tail_stats(lam),
                "fit": {"C": fit[0], "lambda": fit[1]},
            })
        return {"bits": self.bits, "convention": TAIL_CONVENTION, "D": self.max_slope,
                "horizon": self.horizon, "series": out}

    def csv(self) -> str:
        rows = ["n," + ",".join(f"lambda_c{s.critical_index}" for s in self.series)]
        for n in range(1, self.horizon + 1):
            rows.append(str(n) + "," + ",".join(s.lambda_enclosure(n).tag() if n <= s.reached else ""
                                                 for s in self.series))
        return "\n".join(rows) + "\n"


def _ce_fit(logs: list) -> tuple:
    """(C, lambda): lambda = tail minimum of lambda_n, C the largest constant with S_n >= log C + lambda n."""
    if not logs:
        return (None, None)
    lam = tail_stats([float(s) / (n + 1) for n, s in enumerate(logs)])["liminf"]
    logc = min(float(s.lo) - lam * (n + 1) for n, s in enumerate(logs))
    return (math.exp(logc), lam)


def ce_series(m: MapSpec, horizon: int, dyn: Dynamics | None = None, bits: int | None = None) -> CEReport:
    """lambda_n = (1/n) log|Df^n(c^1)| along every critical value, from certified derivative enclosures."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    dyn = _dyn(m, dyn)
    bits = bits or dyn.cfg.initial_bits
    series = []
    for i in range(m.q):
        orb = dyn.critical_orbit(i)
        orb.ensure(horizon + 1)
        total = CertifiedValue.from_rational(0, bits)
        logs, trunc = [], None
        for j in range(1, horizon + 1):
            if j >= len(orb.codes):
                trunc = orb.reason or "precision_exhausted"
                break
            if orb.codes[j] < 0:
                trunc = "hit_critical"
                break
            try:
                term = _log_abs_derivative(m, orb.points[j], bits)
            except NotDifferentiable:
                trunc = "not_differentiable"
                break
            except AtCriticalPoint:
                trunc = "hit_critical"
                break
            total = total + term
            logs.append(total)
        if trunc is not None:
            dyn.ledger.note_truncation(f"ce_{trunc}")
        series.append(CESeries(i, logs, trunc))
    fits = tuple(_ce_fit(s.logs) for s in series)
    return CEReport(horizon, bits, tuple(series), m.max_slope(), fits)


# -- slow recurrence ------------------------------------------------------------------------


@dataclass
class SRReport:
    """(1/n) sum of log d(c^j)^-1 over visits j <= n to C_delta = {d <= delta}."""

    horizon: int
    deltas: tuple
    series: dict
    reached: dict
    undecided: dict

    def value(self, i: int, delta, n: int) -> float:
        return self.series[(i, rational_str(delta))][n - 1]

    def to_json(self) -> dict:
        cells = {}
        for (i, d), vals in sorted(self.series.items()):
            cells[f"c{i}:delta={d}"] = {"series": vals, "tail": tail_stats(vals)}
        return {"convention": TAIL_CONVENTION, "deltas": [rational_str(d) for d in self.deltas],
                "horizon": self.horizon, "reached": {str(k): v for k, v in sorted(self.reached.items())},
                "sign": "magnitude (1/n) sum log d^-1 >= 0", "cells": cells,
                "undecided_memberships": {str(k): v for k, v in sorted(self.undecided.items())}}

    def csv(self, i: int) -> str:
        keys = [rational_str(d) for d in self.deltas]
        rows = ["n," + ",".join(f"delta={k}" for k in keys)]
        for n in range(1, self.reached[i] + 1):
            rows.append(str(n) + "," + ",".join(_cell(self.series[(i, k)][n - 1]) for k in keys))
        return "\n".join(rows) + "\n"


def sr_sum(m: MapSpec, delta_grid=DELTA_GRID, horizon: int = 500, dyn: Dynamics | None = None) -> SRReport:
    dyn = _dyn(m, dyn)
    deltas = tuple(to_rational(d) for d in delta_grid)
    series, reached, undecided = {}, {}, {}
    for i in range(m.q):
        orb = dyn.critical_orbit(i)
        orb.ensure(horizon + 1)
        dists, logs = [], []
        for j in range(1, min(horizon + 1, len(orb.codes))):
            if orb.codes[j] < 0:
                break
            d = distance_to_critical(m, orb.points[j])
            if d.lo <= 0:
                break
            dists.append(d)
            logs.append(-float(iv.log(d)))
        reached[i] = len(dists)
        undecided[i] = 0
        for delta in deltas:
            acc, vals = 0.0, []
            for n, (d, lg) in enumerate(zip(dists, logs), start=1):
                if d.hi <= delta:
                    acc += lg
                elif d.lo <= delta:
                    undecided[i] += 1
                    if float(d) <= delta:
                        acc += lg
                vals.append(acc / n)
            series[(i, rational_str(delta))] = vals
    return SRReport(horizon, deltas, series, reached, undecided)


# -- topological slow recurrence ------------------------------------------------------------------


@dataclass
class TSRReport:
    """(1/n) sum of s(c^j) over j <= n with s(c^j) >= m; undetermined s are excluded and counted."""

    horizon: int
    ms: tuple
    s_values: dict
    sums: dict
    undetermined: dict

    def value(self, i: int, level: int, n: int) -> Fraction:
        return Fraction(self.sums[(i, level)][n - 1], n)

    def matrix(self, i: int) -> list[list[float]]:
        """Rows n = 1 .. horizon, columns m in ``ms``."""
        cols = [self.sums[(i, lv)] for lv in self.ms]
        return [[c[n] / (n + 1) for c in cols] for n in range(len(cols[0]) if cols else 0)]

    @property
    def valid(self) -> bool:
        return all(u <= EXCLUSION_LIMIT * max(len(self.s_values[i]), 1) for i, u in self.undetermined.items())

    def to_json(self) -> dict:
        cells = {}
        for (i, lv), sums in sorted(self.sums.items()):
            vals = [s / (n + 1) for n, s in enumerate(sums)]
            cells[f"c{i}:m={lv}"] = {"series": vals, "tail": tail_stats(vals)}
        return {"cells": cells, "convention": TAIL_CONVENTION, "horizon": self.horizon, "ms": list(self.ms),
                "undetermined": {str(k): v for k, v in sorted(self.undetermined.items())},
                "valid": self.valid}

    def csv(self, i: int) -> str:
        rows = ["n," + ",".join(f"m={lv}" for lv in self.ms)]
        for n, row in enumerate(self.matrix(i), start=1):
            rows.append(str(n) + "," + ",".join(_cell(v) for v in row))
        return "\n".join(rows) + "\n"


def _tsr_from_s(horizon: int, ms, s_values: dict) -> TSRReport:
    sums, undetermined = {}, {}
    for i, svals in s_values.items():
        undetermined[i] = sum(1 for s in svals if s is None)
        for lv in ms:
            acc, out = 0, []
            for s in svals:
                if s is not None and s >= lv:
                    acc += s
                out.append(acc)
            sums[(i, lv)] = out
    return TSRReport(horizon, tuple(ms), s_values, sums, undetermined)


def tsr_sum(m: MapSpec, m_grid=M_GRID, horizon: int = 500, dyn: Dynamics | None = None,
            margin: int = DEFAULT_MARGIN) -> TSRReport:
    """Purely symbolic: s(c^j) from the kneading data of every critical point."""
    dyn = _dyn(m, dyn)
    table = SeparationTable(dyn, horizon + 1 + margin)
    s_values = {}
    for i in range(m.q):
        crit = table.critical_masks(i)
        vals = []
        for j in range(1, min(horizon + 1, len(crit))):
            value, det = table.s_masks(crit[j:])
            vals.append(value if det else None)
        s_values[i] = vals
    return _tsr_from_s(horizon, m_grid, s_values)


def tsr_from_kneading(kd: KneadingData, m_grid=M_GRID, horizon: int | None = None) -> TSRReport:
    """The same report recomputed from KneadingData alone (an independent route over SymbolSeq).

    The itinerary of c_i^j is the kneading tail from index j; s(c_i^j) is the largest
    1 + (first disagreement of the tails) over the critical points whose sided symbol
    at index 0 matches.
    """
    q = len(kd.left)
    seqs = [(kd.left[i].symbols, kd.right[i].symbols) for i in range(q)]
    length = min(len(s) for pair in seqs for s in pair)
    horizon = horizon if horizon is not None else length - 1
    s_values = {}
    for i in range(q):
        orbit = seqs[i][0]
        vals = []
        for j in range(1, horizon + 1):
            x = orbit[j:length]
            best, det = 0, True
            for l in range(q):
                for side_seq in seqs[l]:
                    if not x or side_seq[0] != x[0]:
                        continue
                    k = next((k for k in range(1, len(x)) if x[k] != side_seq[k]), None)
                    if k is None:
                        det = False
                    else:
                        best = max(best, k)
            vals.append(best if det else None)
        s_values[i] = vals
    return _tsr_from_s(horizon, m_grid, s_values)


# -- short gaps ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    t1: int
    t2: int
    left_gap: tuple
    right_gap: tuple


@dataclass
class GapReport:
    """Disjoint windows [t1, t2], t2 - t1 < T, each holding a left and a right short gap."""

    T: int
    horizon: int
    epsilon: float
    eta: float
    windows: dict
    long_mass: dict
    gap_counts: dict
    mirrored: dict
    identity: dict = field(default_factory=dict)

    def count(self, i: int) -> int:
        return len(self.windows[i])

    def required(self) -> float:
        return self.eta * self.horizon

    def passes(self, i: int) -> bool:
        return self.count(i) >= self.required()

    def to_json(self) -> dict:
        crit = {}
        for i in sorted(self.windows):
            crit[str(i)] = {
                "count": self.count(i), "passes": self.passes(i), "mirrored": self.mirrored[i],
                "gap_counts": self.gap_counts[i], "long_mass": self.long_mass[i],
                "windows": [[w.t1, w.t2, list(w.left_gap), list(w.right_gap)] for w in self.windows[i]],
                "small_identity": self.identity.get(i),
            }
        return {"T": self.T, "critical_values": crit, "epsilon": self.epsilon,
                "epsilon_rule": "smallest epsilon with (sum of gaps >= T) <= epsilon * n on every side",
                "eta": self.eta, "horizon": self.horizon, "required": self.required()}


def short_gaps(seq, T: int) -> list[tuple[int, int]]:
    return [(a, b) for a, b in itertools.pairwise(seq) if b - a < T]


def simultaneous_windows(left, right, T: int, n: int) -> list[Window]:
    """Greedy left-to-right: each window starts at the earliest time admitting a left and a
    right short gap inside [t1, t1 + T - 1] and takes that full span (capped at n)."""
    out: list[Window] = []
    t = 0
    li = ri = 0
    while True:
        while li < len(left) and left[li][0] < t:
            li += 1
        while ri < len(right) and right[ri][0] < t:
            ri += 1
        if li >= len(left) or ri >= len(right):
            break
        best = None
        # candidate starts are gap starts; scan left gaps in order and pair with the best right gap
        for a in range(li, len(left)):
            lg = left[a]
            if best is not None and lg[0] >= best[0]:
                break
            for b in range(ri, len(right)):
                rg = right[b]
                start = min(lg[0], rg[0])
                if best is not None and start >= best[0]:
                    if rg[0] >= best[0]:
                        break
                    continue
                if rg[0] > lg[0] + T:
                    break
                if max(lg[1], rg[1]) <= start + T - 1 and max(lg[1], rg[1]) <= n:
                    best = (start, lg, rg)
                    break
        if best is None:
            break
        start, lg, rg = best
        out.append(Window(start, min(start + T - 1, n), lg, rg))
        t = start + T
    return out


def _long_mass(seq, T: int, n: int) -> int:
    return sum(b - a for a, b in itertools.pairwise(seq) if b - a >= T and a <= n)


def small_identity(seq, s_at, T: int) -> dict:
    """Sum of gaps > T equals the sum of s(x^{n_i}) > T over shadowing times with a successor."""
    lhs = sum(b - a for a, b in itertools.pairwise(seq) if b - a > T)
    rhs, undetermined = 0, 0
    for a in seq[:-1]:
        s = s_at(a)
        if s is None:
            undetermined += 1
        elif s > T:
            rhs += s
    return {"lhs": lhs, "rhs": rhs, "ok": lhs == rhs and undetermined == 0, "undetermined": undetermined}


def gap_analysis(m: MapSpec, T: int, horizon: int, dyn: Dynamics | None = None,
                 chains: ValueChains | None = None, table: SeparationTable | None = None) -> GapReport:
    dyn = _dyn(m, dyn)
    chains = chains if chains is not None and chains.horizon >= horizon else ValueChains(m, horizon, dyn)
    windows, long_mass, gap_counts, mirrored, identity = {}, {}, {}, {}, {}
    eps = 0.0
    for i in range(m.q):
        times = chains.times(i)
        n = min(horizon, times.depth)
        left = [x for x in times.N_minus if x <= n]
        right = [x for x in times.N_plus if x <= n]
        counts = {"left": max(len(left) - 1, 0), "right": max(len(right) - 1, 0)}
        if counts["left"] + counts["right"] < MIN_GAPS:
            raise InsufficientHorizon(f"only {counts['left'] + counts['right']} gaps at critical value {i}")
        gap_counts[i] = counts
        mirrored[i] = chains.mirrored(i)
        lm = {"left": _long_mass(left, T, n), "right": _long_mass(right, T, n)}
        long_mass[i] = lm
        eps = max(eps, lm["left"] / horizon, lm["right"] / horizon)
        windows[i] = simultaneous_windows(short_gaps(left, T), short_gaps(right, T), T, n)
        if table is not None:
            crit = table.critical_masks(i)

            def s_at(j, crit=crit):
                value, det = table.s_masks(crit[j + 1:])
                return value if det else None

            identity[i] = {side: small_identity(seq, s_at, T) for side, seq in (("left", left), ("right", right))}
    eta = (1 - 2 * eps) / (2 * T)
    return GapReport(T, horizon, eps, eta, windows, long_mass, gap_counts, mirrored, identity)


# -- contraction at simultaneous short gaps ----------------------------------------------------------


@dataclass
class ShrinkReport:
    T: int
    ratios: list
    gamma: float | None
    all_below_one: bool
    consequence: dict = field(default_factory=dict)
    skipped: int = 0

    def to_json(self) -> dict:
        return {"T": self.T, "all_below_one": self.all_below_one, "gamma": self.gamma,
                "ratios": [{"critical_index": r["i"], "window": r["window"], "left": r["left"], "right": r["right"]}
                           for r in self.ratios],
                "shrink_consequence": self.consequence, "skipped": self.skipped}


def _ratio(chains: ValueChains, i: int, side: str, gap) -> CertifiedValue:
    return chains.side_length(i, gap[1], side) / chains.side_length(i, gap[0], side)


def shrink_ratios(m: MapSpec, T: int, horizon: int, dyn: Dynamics | None = None,
                  chains: ValueChains | None = None, gaps: GapReport | None = None) -> ShrinkReport:
    """|I^(n_i)| / |I^(n_{i-1})| on both sides of every simultaneous window; gamma = max ratio."""
    dyn = _dyn(m, dyn)
    chains = chains if chains is not None and chains.horizon >= horizon else ValueChains(m, horizon, dyn)
    gaps = gaps if gaps is not None else gap_analysis(m, T, horizon, dyn, chains)
    ratios, skipped, ok = [], 0, True
    certified_max = None
    for i in sorted(gaps.windows):
        chain = chains.chain(i)
        for w in gaps.windows[i]:
            try:
                pair = {}
                for side, gap in ((LEFT, w.left_gap), (RIGHT, w.right_gap)):
                    if chain.is_boundary(gap[0], chains.real_side(i, side)):
                        raise PrecisionExhausted("boundary-sourced side")
                    pair[side] = _ratio(chains, i, side, gap)
            except PrecisionExhausted:
                skipped += 1
                continue
            for r in pair.values():
                ok = ok and r.hi < 1
                certified_max = r.hi if certified_max is None else max(certified_max, r.hi)
            ratios.append({"i": i, "window": [w.t1, w.t2], "left": float(pair[LEFT]), "right": float(pair[RIGHT]),
                           "enclosures": pair})
    gamma = float(certified_max) if certified_max is not None else None
    rep = ShrinkReport(T, ratios, gamma, ok and bool(ratios), skipped=skipped)
    if gamma is not None and 0 < gamma < 1:
        rep.consequence = _shrink_consequence(chains, gaps, gamma)
    return rep


def _shrink_consequence(chains: ValueChains, gaps: GapReport, gamma: float) -> dict:
    """-log|I^(n)| >= k(n) log(1/gamma) at window ends, k(n) = number of windows ending by n."""
    out = {}
    rate_fit = None
    for i in sorted(gaps.windows):
        ok = True
        for k, w in enumerate(gaps.windows[i], start=1):
            for side, gap in ((LEFT, w.left_gap), (RIGHT, w.right_gap)):
                try:
                    length = chains.side_length(i, gap[1], side)
                except PrecisionExhausted:
                    continue
                lhs = -float(iv.log(length))
                ok = ok and lhs >= k * math.log(1 / gamma) - 1e-9
                rate = lhs / gap[1]
                rate_fit = rate if rate_fit is None else min(rate_fit, rate)
        out[str(i)] = ok
    implied = gaps.eta * math.log(1 / gamma)
    return {"per_critical_value": out, "fitted_rate": rate_fit, "implied_rate": implied,
            "rate_ok": rate_fit is not None and rate_fit >= implied}


# -- derivative growth and the minimum principle ---------------------------------------------------------


@dataclass
class GrowthReport:
    horizon: int
    records: dict
    asserted: bool
    checked: int = 0
    violations: int = 0
    undecided: int = 0
    skipped: int = 0
    fit: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        return {"asserted": self.asserted, "checked": self.checked, "fit": self.fit, "horizon": self.horizon,
                "ok": self.ok, "records": {str(i): r for i, r in sorted(self.records.items())},
                "skipped": self.skipped, "undecided": self.undecided, "violations": self.violations}


def growth_lower_bound(m: MapSpec, horizon: int, dyn: Dynamics | None = None, chains: ValueChains | None = None,
                       ce: CEReport | None = None, length_scale=1) -> GrowthReport:
    """r_n = min over sides of |f^n(I^(n))| / |I^(n)|, checked against |Df^n(c^1)| (minimum principle).

    The check is asserted only for maps flagged with negative Schwarzian derivative.
    ``length_scale`` multiplies every cylinder length and exists for negative controls.
    """
    dyn = _dyn(m, dyn)
    chains = chains if chains is not None and chains.horizon >= horizon else ValueChains(m, horizon, dyn)
    ce = ce if ce is not None else ce_series(m, horizon, dyn)
    asserted = bool(m.negative_schwarzian)
    rep = GrowthReport(horizon, {}, asserted)
    scale = to_rational(length_scale)
    all_logs = []
    for i in range(m.q):
        chain = chains.chain(i)
        logs = ce.series[i].logs
        rows = []
        for n in range(1, min(horizon, chain.depth) + 1):
            sides = [s for s in (LEFT, RIGHT) if not chain.is_degenerate(n, s) and not chain.is_boundary(n, s)]
            if not sides:
                rep.skipped += 1
                continue
            try:
                rs = [chain.image_length(n, s) / (chain.side_length(n, s) * scale) for s in sides]
            except PrecisionExhausted:
                rep.skipped += 1
                continue
            r = CertifiedValue(min(x.lo for x in rs), min(x.hi for x in rs), max(x.prec for x in rs))
            if r.lo <= 0:
                rep.skipped += 1
                continue
            log_r = iv.log(r)
            all_logs.append((n, float(log_r)))
            status = "reported"
            if asserted and n <= len(logs):
                rep.checked += 1
                s_n = logs[n - 1]
                if s_n.lo >= log_r.hi:
                    status = "pass"
                elif s_n.hi < log_r.lo:
                    status = "violation"
                    rep.violations += 1
                else:
                    status = "undecided"
                    rep.undecided += 1
            rows.append({"n": n, "log_r": float(log_r), "log_df": float(logs[n - 1]) if n <= len(logs) else None,
                         "status": status})
        rep.records[i] = rows
    if all_logs:
        lam = tail_stats([v / n for n, v in all_logs])["liminf"]
        rep.fit = {"K": math.exp(min(v - lam * n for n, v in all_logs)), "lambda": lam}
    return rep


def check_minimum_principle(log_df, log_r) -> list[int]:
    """Indices where log|Df^n| < log r_n (plain floats; used to audit stored records)."""
    return [k for k, (a, b) in enumerate(zip(log_df, log_r)) if a is not None and a < b]


# -- lemma constants -----------------------------------------------------------------------------------------


DEFAULT_POINTS = (Fraction(2, 7), Fraction(3, 11), Fraction(5, 13))


@dataclass
class LemmaFits:
    kappa_bar: float | None
    kappa_lower: float | None
    pairs: list
    insufficient_data: bool
    xi_bar: float | None
    xi_lower: float | None
    xi_C: float
    branch_samples: list
    epsilon_series: dict
    epsilon_tail_max: float | None
    gamma: float | None = None
    r_fit: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "epsilon_series": {k: [[n, r] for n, r in v] for k, v in sorted(self.epsilon_series.items())},
            "epsilon_tail_max": self.epsilon_tail_max,
            "gamma": self.gamma,
            "insufficient_data": self.insufficient_data,
            "kappa_bar": self.kappa_bar,
            "kappa_lower": self.kappa_lower,
            "pairs": [[j, s, d] for j, s, d in self.pairs],
            "r_fit": self.r_fit,
            "xi_C": self.xi_C,
            "xi_bar": self.xi_bar,
            "xi_lower": self.xi_lower,
            "branch_samples": [[str(b), s, length] for b, s, length in self.branch_samples],
        }

    def scatter_tsv(self) -> str:
        rows = ["log_inv_d\ts"]
        for _, s, d in self.pairs:
            rows.append(f"{-math.log(d)!r}\t{s}")
        return "\n".join(rows) + "\n"


def kappa_pairs(m: MapSpec, horizon: int, dyn: Dynamics | None = None, table: SeparationTable | None = None):
    """(j, s(c^j), d(c^j)) over critical orbits with d certified below delta0 and s determined."""
    dyn = _dyn(m, dyn)
    d0 = delta0(m)
    d0_lo = d0 if not isinstance(d0, CertifiedValue) else to_rational(d0.lo)
    table = table or SeparationTable(dyn, horizon + 1 + DEFAULT_MARGIN)
    pairs = []
    for i in range(m.q):
        orb = dyn.critical_orbit(i)
        orb.ensure(horizon + 1)
        crit = table.critical_masks(i)
        for j in range(1, min(horizon + 1, len(orb.codes))):
            if orb.codes[j] < 0:
                break
            d = distance_to_critical(m, orb.points[j])
            if not (0 < d.lo and d.hi < d0_lo):
                continue
            value, det = table.s_masks(crit[j:])
            if det:
                pairs.append((j, value, float(d)))
    return pairs


def branch_lengths(m: MapSpec, depth: int, dyn: Dynamics | None = None, points=DEFAULT_POINTS,
                   chains: ValueChains | None = None):
    """(base, s, |J|) for monotone branches J = I^(s-1)(x) of f^s, s = 1 .. depth."""
    dyn = _dyn(m, dyn)
    bases = [("cval", i) for i in range(m.q)] + list(points)
    out = []
    for base in bases:
        if chains is not None and isinstance(base, tuple) and chains.horizon >= depth:
            chain = chains.chain(base[1])
        else:
            chain, _ = refine_cylinder(m, base, depth, dyn=dyn)
        for s in range(1, min(depth, chain.depth + 1) + 1):
            try:
                length = chain.length(s - 1)
            except PrecisionExhausted:
                break
            out.append((base if isinstance(base, tuple) else rational_str(base), s, length))
    return out


def _xi_fits(samples):
    rates = []
    for _, s, length in samples:
        if length.lo <= 0:
            continue
        rates.append(-float(iv.log(length)) / s)
    if not rates:
        return None, None
    return min(rates), max(rates)


def gap_ratio_series(chains: ValueChains) -> dict:
    out = {}
    for i in range(chains.m.q):
        times = chains.times(i)
        for side in (LEFT, RIGHT):
            seq = times.side(side)
            out[f"c{i}:{side}"] = [(a, (b - a) / a) for a, b in itertools.pairwise(seq) if a >= 1]
    return out


def gap_ratio_tail_max(series: dict) -> float | None:
    best = None
    for vals in series.values():
        if not vals:
            continue
        k = max(1, math.ceil(len(vals) * TAIL))
        tail = max(r for _, r in vals[-k:])
        best = tail if best is None else max(best, tail)
    return best


def fit_lemma_constants(m: MapSpec, horizon: int, dyn: Dynamics | None = None, chains: ValueChains | None = None,
                        branch_depth: int = 64, points=DEFAULT_POINTS, shrink: ShrinkReport | None = None,
                        growth: GrowthReport | None = None) -> LemmaFits:
    dyn = _dyn(m, dyn)
    chains = chains if chains is not None and chains.horizon >= horizon else ValueChains(m, horizon, dyn)
    pairs = kappa_pairs(m, horizon, dyn)
    ratios = [s / -math.log(d) for _, s, d in pairs]
    insufficient = len(pairs) < MIN_PAIRS
    kb = max(ratios) if ratios and not insufficient else None
    kl = min(ratios) if ratios and not insufficient else None
    samples = branch_lengths(m, min(branch_depth, horizon), dyn, points, chains)
    xb, xl = _xi_fits(samples)
    eps_series = gap_ratio_series(chains)
    return LemmaFits(
        kappa_bar=kb, kappa_lower=kl, pairs=pairs, insufficient_data=insufficient,
        xi_bar=xb, xi_lower=xl, xi_C=1.0,
        branch_samples=[(b, s, float(length)) for b, s, length in samples],
        epsilon_series=eps_series, epsilon_tail_max=gap_ratio_tail_max(eps_series),
        gamma=shrink.gamma if shrink is not None else None,
        r_fit=growth.fit if growth is not None else {},
    )


# -- Birkhoff averages ---------------------------------------------------------------------------------------


@dataclass
class BirkhoffReport:
    """ESTIMATE only: no invariant measure is certified to exist."""

    horizon: int
    bits: int
    seed: int
    seeds: list
    checkpoints: list
    series: list
    atypical: list
    truncated: list
    mean: float | None
    spread: float | None

    def to_json(self) -> dict:
        return {"kind": "ESTIMATE", "bits": self.bits, "checkpoints": self.checkpoints, "horizon": self.horizon,
                "mean": self.mean, "seed": self.seed, "spread": self.spread,
                "per_seed": [{"x0": x, "series": s, "atypical": a, "truncated_at": t}
                             for x, s, a, t in zip(self.seeds, self.series, self.atypical, self.truncated)]}


def birkhoff_lyapunov(m: MapSpec, seeds=10, horizon: int = 100_000, seed: int = 0, bits: int = 128,
                      checkpoints: int = 100) -> BirkhoffReport:
    """Per-seed (1/n) sum log|Df(x^i)| along a round-to-nearest orbit at ``bits`` bits.

    A pseudo-orbit, not a certified one: after ~bits/log2(slope) steps the
    computed orbit only shadows some true orbit.  Seeds whose orbit becomes
    exactly periodic (period <= 8) are flagged atypical.
    """
    if isinstance(seeds, int):
        rng = np.random.default_rng(seed)
        starts = [Fraction(float(u)) for u in rng.uniform(0.0, 1.0, seeds)]
    else:
        starts = [to_rational(x) for x in seeds]
    ctx = nearest(bits)
    every = max(1, horizon // checkpoints)
    marks = list(range(every, horizon + 1, every))
    series, atypical, truncated = [], [], []
    finals = []
    for x0 in starts:
        x = ctx.div(mpfr(x0.numerator), mpfr(x0.denominator)) if x0.denominator != 1 else mpfr(x0.numerator)
        acc = mpfr(0)
        recent: list = []
        flagged, cut = False, None
        out = []
        for n in range(1, horizon + 1):
            try:
                term = m.approx_log_abs_derivative(ctx, x)
            except (NotDifferentiable, ValueError, ZeroDivisionError):
                term = None
            if term is None or not gmpy2.is_finite(term):
                cut = n
                break
            acc = ctx.add(acc, term)
            if n % every == 0:
                out.append(float(acc) / n)
            x = m.approx_step(ctx, x)
            if x < 0:
                x = mpfr(0)
            elif x > 1:
                x = mpfr(1)
            if not flagged:
                if x in recent:
                    flagged = True
                recent.append(x)
                if len(recent) > 8:
                    recent.pop(0)
        series.append(out)
        atypical.append(flagged)
        truncated.append(cut)
        if cut is None and not flagged and out:
            finals.append(out[-1])
    mean = math.fsum(finals) / len(finals) if finals else None
    spread = (max(finals) - min(finals)) if finals else None
    return BirkhoffReport(horizon, bits, seed, [rational_str(s) for s in starts], marks[: len(series[0]) if series else 0],
                          series, atypical, truncated, mean, spread)




__all__ = [
    "BirkhoffReport", "CEReport", "CESeries", "GapReport", "GrowthReport", "LemmaFits", "SRReport",
    "ShrinkReport", "TSRReport", "ValueChains", "Window", "birkhoff_lyapunov", "branch_lengths",
    "ce_series", "check_minimum_principle", "fit_lemma_constants", "gap_analysis", "gap_ratio_series",
    "growth_lower_bound", "kappa_pairs", "masks", "short_gaps", "shrink_ratios", "simultaneous_windows",
    "small_identity", "sr_sum", "tail_stats", "tsr_from_kneading", "tsr_sum",
]
