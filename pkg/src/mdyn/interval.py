"""Outward-rounded interval arithmetic on MPFR numbers.

Every operation rounds the lower endpoint toward -inf and the upper endpoint
toward +inf using gmpy2 contexts, so a ``CertifiedValue`` always encloses the
exact result of the real computation it stands for.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache

import gmpy2
from gmpy2 import mpfr, mpq

_ZERO = mpfr(0)
_MPQ = type(mpq(0))
_MPFR = type(mpfr(0))


@lru_cache(maxsize=128)
def rounding(prec: int):
    """(round-down, round-up) gmpy2 contexts at ``prec`` bits."""
    return (
        gmpy2.context(precision=prec, round=gmpy2.RoundDown),
        gmpy2.context(precision=prec, round=gmpy2.RoundUp),
    )


@lru_cache(maxsize=128)
def nearest(prec: int):
    return gmpy2.context(precision=prec)


def to_rational(value) -> Fraction:
    """Exact rational from an int, Fraction, float, mpq/mpfr, or a "p/q" / decimal string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value)
    if isinstance(value, _MPQ):
        return Fraction(int(value.numerator), int(value.denominator))
    if isinstance(value, _MPFR):
        q = mpq(value)
        return Fraction(int(q.numerator), int(q.denominator))
    raise TypeError(f"cannot convert {value!r} to a rational")


def rational_str(q: Fraction) -> str:
    q = to_rational(q)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class PrecisionConfig:
    initial_bits: int = 128
    max_bits: int = 16384
    escalation_factor: int = 2
    certification_mode: str = "interval"

    def __post_init__(self):
        if self.initial_bits < 64:
            raise ValueError("initial_bits must be >= 64")
        if self.max_bits < self.initial_bits:
            raise ValueError("max_bits must be >= initial_bits")
        if self.escalation_factor < 2:
            raise ValueError("escalation_factor must be >= 2")
        if self.certification_mode not in ("interval", "ball"):
            raise ValueError(f"unknown certification mode {self.certification_mode!r}")

    def ladder(self):
        """Precisions tried in order: initial, initial*factor, ..., capped at max_bits."""
        bits = self.initial_bits
        while bits < self.max_bits:
            yield bits
            bits *= self.escalation_factor
        yield self.max_bits

    def next_bits(self, bits: int) -> int | None:
        if bits >= self.max_bits:
            return None
        return min(bits * self.escalation_factor, self.max_bits)

    def with_env(self) -> PrecisionConfig:
        """Apply the MDYN_MAX_BITS ceiling override, if set."""
        raw = os.environ.get("MDYN_MAX_BITS")
        if not raw:
            return self
        ceiling = int(raw)
        return replace(self, max_bits=ceiling, initial_bits=min(self.initial_bits, ceiling))


def _as_mpq(value):
    if isinstance(value, _MPQ):
        return value
    q = to_rational(value)
    return mpq(q.numerator, q.denominator)


@lru_cache(maxsize=8192)
def rat_bounds(r, prec: int):
    """(down, up) MPFR bounds of a rational at ``prec`` bits.

    gmpy2 rounds an mpq operand in the direction of the context before the
    operation, which is wrong for subtraction and for negative factors, so
    rationals always enter arithmetic through these bounds.
    """
    down, up = rounding(prec)
    return down.add(_ZERO, r), up.add(_ZERO, r)


class CertifiedValue:
    """Closed interval [lo, hi] with MPFR endpoints; ``exact`` holds the rational it encloses, if known."""

    __slots__ = ("exact", "hi", "lo", "prec")

    def __init__(self, lo, hi=None, prec: int | None = None, exact: Fraction | None = None):
        if hi is None:
            hi = lo
        if not isinstance(lo, _MPFR):
            lo = mpfr(lo)
        if not isinstance(hi, _MPFR):
            hi = mpfr(hi)
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi
        self.prec = prec if prec is not None else max(lo.precision, hi.precision)
        self.exact = exact

    # -- construction -------------------------------------------------

    @classmethod
    def from_rational(cls, value, prec: int) -> CertifiedValue:
        m = _as_mpq(value)
        down, up = rounding(prec)
        return cls(down.add(_ZERO, m), up.add(_ZERO, m), prec, exact=m)

    @classmethod
    def point(cls, x, prec: int) -> CertifiedValue:
        """Degenerate interval at an MPFR number (exactly representable at its own precision)."""
        x = mpfr(x) if not isinstance(x, _MPFR) else x
        return cls(x, x, prec)

    @classmethod
    def hull(cls, *values: CertifiedValue) -> CertifiedValue:
        lo = min(v.lo for v in values)
        hi = max(v.hi for v in values)
        return cls(lo, hi, max(v.prec for v in values))

    def at(self, prec: int) -> CertifiedValue:
        """Re-enclose at a new precision (re-rounds the exact rational when available)."""
        if self.exact is not None:
            return CertifiedValue.from_rational(self.exact, prec)
        down, up = rounding(prec)
        return CertifiedValue(down.add(_ZERO, self.lo), up.add(_ZERO, self.hi), prec)

    # -- inspection ---------------------------------------------------

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi

    def width(self):
        return rounding(self.prec)[1].sub(self.hi, self.lo)

    def mid(self):
        return nearest(self.prec + 2).div(nearest(self.prec + 2).add(self.lo, self.hi), 2)

    def contains(self, x) -> bool:
        if isinstance(x, CertifiedValue):
            return self.lo <= x.lo and x.hi <= self.hi
        return self.lo <= x <= self.hi

    def overlaps(self, other: CertifiedValue) -> bool:
        return not (self.hi < other.lo or other.hi < self.lo)

    def sign(self) -> int | None:
        """+1/-1 when certified, 0 for the exact zero, None when the sign is undecided."""
        if self.lo > 0:
            return 1
        if self.hi < 0:
            return -1
        if self.lo == 0 and self.hi == 0:
            return 0
        return None

    def compare(self, other) -> int | None:
        """-1, 0, +1 when certain (0 only for identical points), else None."""
        if not isinstance(other, CertifiedValue):
            if self.hi < other:
                return -1
            if self.lo > other:
                return 1
            if self.lo == self.hi == other:
                return 0
            return None
        if self.hi < other.lo:
            return -1
        if self.lo > other.hi:
            return 1
        if self.lo == self.hi == other.lo == other.hi:
            return 0
        return None

    def __float__(self) -> float:
        return float(self.mid())

    def __repr__(self) -> str:
        if self.is_point:
            return f"CertifiedValue({float(self.lo)!r}, prec={self.prec})"
        return f"CertifiedValue([{float(self.lo)!r}, {float(self.hi)!r}], prec={self.prec})"

    def tag(self, digits: int = 20) -> str:
        """Midpoint with an explicit precision tag, e.g. ``2.5e-01@128``."""
        # built from mpfr.digits: gmpy2's own "e" formatting is not reliable across versions
        mant, exp, _ = self.mid().digits(10, digits)
        sign = "-" if mant.startswith("-") else ""
        mant = mant.lstrip("-")
        if set(mant) <= {"0"}:
            return f"0.{'0' * (digits - 1)}e+00@{self.prec}"
        return f"{sign}{mant[0]}.{mant[1:]}e{exp - 1:+03d}@{self.prec}"

    # -- arithmetic -----------------------------------------------------

    def _prec_with(self, other) -> int:
        if isinstance(other, CertifiedValue):
            return max(self.prec, other.prec)
        return self.prec

    def __neg__(self):
        # plain unary minus on mpfr rounds to the 53-bit global context
        ex = -self.exact if self.exact is not None else None
        ctx = nearest(max(self.prec, self.lo.precision, self.hi.precision))
        return CertifiedValue(ctx.minus(self.hi), ctx.minus(self.lo), self.prec, ex)

    def __add__(self, other):
        prec = self._prec_with(other)
        down, up = rounding(prec)
        if isinstance(other, CertifiedValue):
            return CertifiedValue(down.add(self.lo, other.lo), up.add(self.hi, other.hi), prec)
        rl, rh = rat_bounds(_as_mpq(other), prec)
        return CertifiedValue(down.add(self.lo, rl), up.add(self.hi, rh), prec)

    __radd__ = __add__

    def __sub__(self, other):
        prec = self._prec_with(other)
        down, up = rounding(prec)
        if isinstance(other, CertifiedValue):
            return CertifiedValue(down.sub(self.lo, other.hi), up.sub(self.hi, other.lo), prec)
        rl, rh = rat_bounds(_as_mpq(other), prec)
        return CertifiedValue(down.sub(self.lo, rh), up.sub(self.hi, rl), prec)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        prec = self._prec_with(other)
        down, up = rounding(prec)
        if not isinstance(other, CertifiedValue):
            rl, rh = rat_bounds(_as_mpq(other), prec)
            if rl == rh:
                if rl >= 0:
                    return CertifiedValue(down.mul(self.lo, rl), up.mul(self.hi, rl), prec)
                return CertifiedValue(down.mul(self.hi, rl), up.mul(self.lo, rl), prec)
            other = CertifiedValue(rl, rh, prec)
        al, ah, bl, bh = self.lo, self.hi, other.lo, other.hi
        if al >= 0:
            if bl >= 0:
                lo, hi = down.mul(al, bl), up.mul(ah, bh)
            elif bh <= 0:
                lo, hi = down.mul(ah, bl), up.mul(al, bh)
            else:
                lo, hi = down.mul(ah, bl), up.mul(ah, bh)
        elif ah <= 0:
            if bl >= 0:
                lo, hi = down.mul(al, bh), up.mul(ah, bl)
            elif bh <= 0:
                lo, hi = down.mul(ah, bh), up.mul(al, bl)
            else:
                lo, hi = down.mul(al, bh), up.mul(al, bl)
        else:
            if bl >= 0:
                lo, hi = down.mul(al, bh), up.mul(ah, bh)
            elif bh <= 0:
                lo, hi = down.mul(ah, bl), up.mul(al, bl)
            else:
                lo = min(down.mul(al, bh), down.mul(ah, bl))
                hi = max(up.mul(al, bl), up.mul(ah, bh))
        return CertifiedValue(lo, hi, prec)

    __rmul__ = __mul__

    def __truediv__(self, other):
        prec = self._prec_with(other)
        down, up = rounding(prec)
        if not isinstance(other, CertifiedValue):
            r = _as_mpq(other)
            if r == 0:
                raise ZeroDivisionError("interval division by zero")
            rl, rh = rat_bounds(r, prec)
            if rl == rh:
                if r > 0:
                    return CertifiedValue(down.div(self.lo, rl), up.div(self.hi, rl), prec)
                return CertifiedValue(down.div(self.hi, rl), up.div(self.lo, rl), prec)
            other = CertifiedValue(rl, rh, prec)
        if other.lo <= 0 <= other.hi:
            raise ZeroDivisionError("divisor interval contains zero")
        cands_lo = [down.div(a, b) for a in (self.lo, self.hi) for b in (other.lo, other.hi)]
        cands_hi = [up.div(a, b) for a in (self.lo, self.hi) for b in (other.lo, other.hi)]
        return CertifiedValue(min(cands_lo), max(cands_hi), prec)

    def __rtruediv__(self, other):
        return CertifiedValue.from_rational(other, self.prec) / self

    def __abs__(self):
        if self.lo >= 0:
            return self
        if self.hi <= 0:
            return -self
        return CertifiedValue(_ZERO, max((-self).hi, self.hi), self.prec)

    def square(self):
        down, up = rounding(self.prec)
        a = abs(self)
        return CertifiedValue(down.mul(a.lo, a.lo), up.mul(a.hi, a.hi), self.prec)


# -- elementary functions ----------------------------------------------------


def pi(prec: int) -> CertifiedValue:
    down, up = rounding(prec)
    return CertifiedValue(down.const_pi(), up.const_pi(), prec)


def sqrt(x: CertifiedValue) -> CertifiedValue:
    if x.hi < 0:
        raise ValueError("sqrt of a negative interval")
    down, up = rounding(x.prec)
    lo = down.sqrt(x.lo) if x.lo > 0 else _ZERO
    return CertifiedValue(lo, up.sqrt(x.hi), x.prec)


def log(x: CertifiedValue) -> CertifiedValue:
    if x.lo <= 0:
        raise ValueError("log of an interval touching zero")
    down, up = rounding(x.prec)
    return CertifiedValue(down.log(x.lo), up.log(x.hi), x.prec)


def exp(x: CertifiedValue) -> CertifiedValue:
    down, up = rounding(x.prec)
    return CertifiedValue(down.exp(x.lo), up.exp(x.hi), x.prec)


def asin(x: CertifiedValue) -> CertifiedValue:
    if x.lo < -1 or x.hi > 1:
        # clip rounding slack; the true argument lies in [-1, 1]
        if x.hi < -1 or x.lo > 1:
            raise ValueError("asin outside [-1, 1]")
        x = CertifiedValue(max(x.lo, mpfr(-1)), min(x.hi, mpfr(1)), x.prec)
    down, up = rounding(x.prec)
    return CertifiedValue(down.asin(x.lo), up.asin(x.hi), x.prec)


def sin(x: CertifiedValue) -> CertifiedValue:
    """Interval sine; widens to +/-1 when a turning point of sine may lie inside."""
    prec = x.prec
    down, up = rounding(prec)
    p = pi(prec + 16)
    lo_s, hi_s = down.sin(x.lo), up.sin(x.hi)
    lo_s2, hi_s2 = down.sin(x.hi), up.sin(x.lo)
    lo = min(lo_s, lo_s2)
    hi = max(hi_s, hi_s2)
    # turning points at pi/2 + k*pi; find k-range conservatively
    half = p * Fraction(1, 2)
    k_lo = int(gmpy2.floor(rounding(prec + 16)[0].div(rounding(prec + 16)[0].sub(x.lo, half.hi), p.hi))) - 1
    k_hi = int(gmpy2.ceil(rounding(prec + 16)[1].div(rounding(prec + 16)[1].sub(x.hi, half.lo), p.lo))) + 1
    for k in range(k_lo, k_hi + 1):
        t = half + p * k
        if t.hi < x.lo or t.lo > x.hi:
            continue
        if k % 2 == 0:
            hi = mpfr(1)
        else:
            lo = mpfr(-1)
    return CertifiedValue(max(lo, mpfr(-1)), min(hi, mpfr(1)), prec)


def cos(x: CertifiedValue) -> CertifiedValue:
    return sin(x + pi(x.prec + 16) * Fraction(1, 2))
