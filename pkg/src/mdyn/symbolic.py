"""Certified itineraries, kneading sequences and separation times.

Separation times are computed on *masks*: a certified symbol ``k`` becomes the
bit ``1 << k`` and an iterate lying exactly on the critical point ``c_l``
becomes ``(1 << l) | (1 << (l + 1))``, i.e. both sided symbols at once.  Two
itineraries agree at an index when their masks intersect, which is the
"take the max over both sided sequences" convention for points of the
critical set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationFailure, UncertainPrefix
from .interval import CertifiedValue, to_rational
from .maps import MapSpec, hit_index
from .orbits import Dynamics, Orbit

DEFAULT_MARGIN = 512


@dataclass(frozen=True)
class SymbolSeq:
    """Prefix-certified itinerary; at most one trailing uncertain (guessed) symbol."""

    symbols: tuple
    certified: tuple
    truncation_reason: str | None = None
    hit_at: int | None = None
    hit_critical: int | None = None

    def __post_init__(self):
        if len(self.symbols) != len(self.certified):
            raise ValueError("one certification flag per symbol")
        seen_uncertain = False
        for flag in self.certified:
            if flag and seen_uncertain:
                raise ValueError("certified symbol after an uncertain one")
            seen_uncertain = seen_uncertain or not flag

    def __len__(self):
        return len(self.symbols)

    @property
    def certified_length(self) -> int:
        n = 0
        for flag in self.certified:
            if not flag:
                break
            n += 1
        return n

    def shifted(self, k: int) -> SymbolSeq:
        return SymbolSeq(self.symbols[k:], self.certified[k:], self.truncation_reason,
                         None if self.hit_at is None else self.hit_at - k, self.hit_critical)


@dataclass(frozen=True)
class Undetermined:
    """No disagreement within the compared prefix: the separation time is at least ``lower_bound``."""

    lower_bound: int

    def __repr__(self):
        return f"Undetermined(>={self.lower_bound})"


@dataclass(frozen=True)
class KneadingData:
    """Per critical point: (left-sided, right-sided) itineraries, differing only at index 0."""

    left: tuple
    right: tuple

    def pair(self, i: int) -> tuple[SymbolSeq, SymbolSeq]:
        return self.left[i], self.right[i]


@dataclass(frozen=True)
class Calibration:
    delta0: object
    N0: int
    min_depth: int
    components: tuple = ()
    details: dict = field(default_factory=dict)


# -- masks -------------------------------------------------------------------


def code_mask(code: int) -> int:
    if code >= 0:
        return 1 << code
    i = hit_index(code)
    if i is None:
        raise ValueError("uncertain code has no mask")
    return (1 << i) | (1 << (i + 1))


def masks(codes) -> np.ndarray:
    return np.fromiter((code_mask(c) for c in codes), dtype=np.int64, count=len(codes))


def first_disagreement(a: np.ndarray, b: np.ndarray) -> int | None:
    """Least index where the masks do not intersect, or None within the common length."""
    n = min(len(a), len(b))
    if n == 0:
        return None
    bad = np.flatnonzero((a[:n] & b[:n]) == 0)
    return int(bad[0]) if bad.size else None


# -- itineraries ---------------------------------------------------------------


def _to_seq(codes, length: int, reason: str | None, guess: int | None) -> SymbolSeq:
    symbols, flags = [], []
    hit_at = hit_crit = None
    for j, c in enumerate(codes[:length]):
        if c < 0:
            hit_at, hit_crit = j, hit_index(c)
            reason = "hit_critical"
            break
        symbols.append(c)
        flags.append(True)
    else:
        if len(symbols) < length:
            if reason == "precision_exhausted" and guess is not None:
                symbols.append(guess)
                flags.append(False)
        else:
            reason = "horizon"
    return SymbolSeq(tuple(symbols), tuple(flags), reason, hit_at, hit_crit)


def _dynamics(m: MapSpec, dyn: Dynamics | None) -> Dynamics:
    return dyn if dyn is not None else Dynamics(m)


def itinerary(m: MapSpec, x, horizon: int, dyn: Dynamics | None = None) -> SymbolSeq:
    """Symbols a_0 .. a_{horizon-1} of x, truncated at a critical hit or when precision runs out."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    orb = _dynamics(m, dyn).point_orbit(x)
    orb.ensure(horizon)
    return _to_seq(orb.codes, horizon, orb.reason, orb.guess)


def kneading_sequences(m: MapSpec, horizon: int, dyn: Dynamics | None = None) -> KneadingData:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    dyn = _dynamics(m, dyn)
    left, right = [], []
    for i in range(m.q):
        orb = dyn.critical_orbit(i)
        orb.ensure(horizon)
        tail = _to_seq(orb.codes[1:], horizon - 1, orb.reason, orb.guess)
        for side, out in ((i, left), (i + 1, right)):
            out.append(SymbolSeq((side,) + tail.symbols, (True,) + tail.certified, tail.truncation_reason,
                                 None if tail.hit_at is None else tail.hit_at + 1, tail.hit_critical))
    return KneadingData(tuple(left), tuple(right))


def separation_time(a: SymbolSeq, b: SymbolSeq):
    """min{k : a_k != b_k} over the certified prefix, or Undetermined(common certified length)."""
    n = min(len(a), len(b))
    for k in range(n):
        if not (a.certified[k] and b.certified[k]):
            raise UncertainPrefix(k)
        if a.symbols[k] != b.symbols[k]:
            return k
    return Undetermined(n)


# -- separation from the critical set ----------------------------------------------


class SeparationTable:
    """s(x) for orbit points, computed against the sided kneading data of every critical point."""

    def __init__(self, dyn: Dynamics, length: int):
        self.dyn = dyn
        self.m = dyn.m
        self.length = length
        self._tails = {}
        self._orbit_masks = {}

    def critical_masks(self, i: int) -> np.ndarray:
        """Masks of c_i^0 .. c_i^{L-1} (index 0 is the hit at c_i)."""
        if i not in self._tails:
            orb = self.dyn.critical_orbit(i)
            orb.ensure(self.length)
            self._tails[i] = masks(orb.codes[: self.length])
        return self._tails[i]

    def orbit_masks(self, orb: Orbit) -> np.ndarray:
        """Masks of a point orbit, continued through a terminal critical hit along that critical orbit."""
        key = id(orb)
        cached = self._orbit_masks.get(key)
        if cached is not None and cached[0] is orb:
            return cached[1]
        orb.ensure(self.length)
        arr = masks(orb.codes)
        if orb.reason == "hit_critical":
            i = hit_index(orb.codes[-1])
            arr = np.concatenate([arr, self.critical_masks(i)[1: self.length - len(arr) + 1]])
        self._orbit_masks[key] = (orb, arr)
        return arr

    def s_masks(self, x: np.ndarray):
        """(value, determined) for s(x) given the mask array of x's itinerary."""
        if len(x) == 0:
            return 0, False
        best, determined = 0, True
        undetermined_bound = 0
        for i in range(self.m.q):
            if not (int(x[0]) & ((1 << i) | (1 << (i + 1)))):
                continue
            tail = self.critical_masks(i)
            k = first_disagreement(x[1:], tail[1:])
            if k is None:
                determined = False
                undetermined_bound = max(undetermined_bound, 1 + min(len(x) - 1, len(tail) - 1))
            else:
                best = max(best, 1 + k)
        if not determined:
            return max(undetermined_bound, best), False
        return best, True

    def s_critical_point(self, i: int, j: int):
        """s(c_i^j)."""
        return self.s_masks(self.critical_masks(i)[j:])

    def s_orbit_point(self, orb: Orbit, j: int):
        return self.s_masks(self.orbit_masks(orb)[j:])


def separation_from_critical(m: MapSpec, x, horizon: int, dyn: Dynamics | None = None):
    """s(x) = max over critical points and both sides of s(x, c); Undetermined when no disagreement is seen."""
    dyn = _dynamics(m, dyn)
    table = SeparationTable(dyn, horizon)
    orb = dyn.point_orbit(x)
    orb.ensure(horizon)
    if orb.reason == "precision_exhausted" and len(orb.codes) < horizon:
        value, det = table.s_masks(masks(orb.codes))
        if det:
            return value
        raise UncertainPrefix(len(orb.codes))
    value, det = table.s_orbit_point(orb, 0)
    return value if det else Undetermined(value)


# -- neighbourhoods and calibration --------------------------------------------------


@dataclass(frozen=True)
class TopologicalNeighborhood:
    """C_m = {x : s(x) >= m}."""

    m: MapSpec
    level: int
    horizon: int = 256

    def contains(self, x, dyn: Dynamics | None = None) -> bool:
        s = separation_from_critical(self.m, x, max(self.horizon, self.level + 1), dyn)
        if isinstance(s, Undetermined):
            return s.lower_bound >= self.level
        return s >= self.level


def distance_to_critical(m: MapSpec, v: CertifiedValue) -> CertifiedValue:
    """d(x) = min_i |x - c_i| as an enclosure."""
    best = None
    for c in m.critical_enclosures(v.prec):
        if v.exact is not None and c.exact is not None:
            d = CertifiedValue.from_rational(abs(v.exact - c.exact), v.prec)
        else:
            d = abs(v - c)
        if best is None or d.hi < best.lo:
            best = d
        elif not (d.lo > best.hi):
            best = CertifiedValue(min(best.lo, d.lo), min(best.hi, d.hi), v.prec)
    return best


def delta0(m: MapSpec):
    """Half the minimum gap among {0, c_1, ..., c_q, 1} (exact when the critical points are)."""
    if all(e is not None for e in m.critical_exact):
        pts = [0] + [to_rational(e) for e in m.critical_exact] + [1]
        return min(b - a for a, b in zip(pts, pts[1:])) / 2
    b = m.boundaries(m.precision.initial_bits)
    gaps = [b[i + 1] - b[i] for i in range(len(b) - 1)]
    lo = min(g.lo for g in gaps)
    return CertifiedValue(lo, min(g.hi for g in gaps), b[0].prec) * to_rational("1/2")


def calibrate(m: MapSpec, horizon: int = 64, dyn: Dynamics | None = None) -> Calibration:
    """delta0 and N0 = 1 + least n with every one-sided depth-n cylinder at every c_i inside C_delta0.

    s(x) >= N is exactly membership of a depth N-1 one-sided cylinder at some c_i,
    so this N0 is the least value with {s >= N0} contained in the metric neighbourhood.
    """
    from .cylinders import refine_cylinder

    dyn = _dynamics(m, dyn)
    d0 = delta0(m)
    d0_lo = d0 if not isinstance(d0, CertifiedValue) else d0.lo
    crit = m.critical_enclosures(dyn.cfg.initial_bits)
    chains = []
    for i in range(m.q):
        for side in ("left", "right"):
            chain, _ = refine_cylinder(m, ("crit", i, side), horizon, dyn=dyn)
            chains.append((i, side, chain))
    for n in range(horizon + 1):
        ok = True
        for i, side, chain in chains:
            if n >= chain.depth + 1:
                raise CalibrationFailure(f"cylinder at critical point {i} truncated before depth {n}")
            lo, hi = chain.interval(n)
            c = crit[i]
            if side == "left":
                inside = (c - lo).hi <= d0_lo
            else:
                inside = (hi - c).hi <= d0_lo
            if not inside:
                ok = False
                break
        if ok:
            comps = tuple((float(chain.interval(n)[0].lo), float(chain.interval(n)[1].hi)) for _, _, chain in chains)
            return Calibration(d0, n + 1, n, comps, {"horizon": horizon})
    raise CalibrationFailure(f"no depth <= {horizon} puts every critical cylinder inside C_delta0")


def itinerary_dump(points, seqs) -> str:
    """One line per point: decimal x, comma-separated symbols, certified prefix length."""
    lines = []
    for x, seq in zip(points, seqs):
        q = to_rational(x)
        lines.append(f"{float(q)!r}\t{','.join(str(s) for s in seq.symbols)}\t{seq.certified_length}")
    return "\n".join(lines) + "\n"
