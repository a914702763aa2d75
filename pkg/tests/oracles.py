"""Independent reference computations used by the tests.

Nothing here imports the package under test: orbits are exact ``Fraction``
arithmetic or ``mpmath.iv`` interval arithmetic, derivatives come from sympy,
and integrals from ``mpmath.quad``.
"""

from __future__ import annotations

import math
from fractions import Fraction

import mpmath
import sympy

X = sympy.Symbol("x")


# -- exact maps --------------------------------------------------------------------


def poly(coeffs):
    cs = [Fraction(c) for c in coeffs]

    def f(x):
        acc = Fraction(0)
        for c in reversed(cs):
            acc = acc * x + c
        return acc

    return f


def folded(breaks, values):
    nodes = [Fraction(0)] + [Fraction(b) for b in breaks] + [Fraction(1)]
    vals = [Fraction(v) for v in values]

    def f(x):
        for k in range(len(nodes) - 1):
            if x <= nodes[k + 1]:
                s = (vals[k + 1] - vals[k]) / (nodes[k + 1] - nodes[k])
                return vals[k] + s * (x - nodes[k])
        raise ValueError(x)

    return f


ULAM = poly([0, 4, -4])
TENT = folded(["1/2"], [0, 1, 0])
L3 = folded(["1/3", "2/3"], [0, 1, 0, 1])
F3 = poly([0, 9, -24, 16])

CRIT = {
    "ulam": [Fraction(1, 2)],
    "tent": [Fraction(1, 2)],
    "l3": [Fraction(1, 3), Fraction(2, 3)],
    "f3": [Fraction(1, 4), Fraction(3, 4)],
    "logistic": [Fraction(1, 2)],
}
EXACT = {"ulam": ULAM, "tent": TENT, "l3": L3, "f3": F3}


def symbol(x: Fraction, crit) -> int | None:
    """Partition index of x, None on the critical set."""
    for i, c in enumerate(crit):
        if x < c:
            return i
        if x == c:
            return None
    return len(crit)


def exact_itinerary(f, crit, x, n):
    out = []
    x = Fraction(x)
    for _ in range(n):
        s = symbol(x, crit)
        if s is None:
            break
        out.append(s)
        x = f(x)
    return out


def exact_orbit(f, x, n):
    pts = [Fraction(x)]
    for _ in range(n - 1):
        pts.append(f(pts[-1]))
    return pts


# -- interval orbits with mpmath.iv --------------------------------------------------------


def iv_itinerary(coeffs, crit, x, n, prec=8000):
    """Symbols certified by mpmath interval arithmetic; stops at the first undecided one."""
    ctx = mpmath.iv
    old = ctx.prec
    ctx.prec = prec
    try:
        cs = [ctx.mpf(sympy.Rational(str(c)).p) / sympy.Rational(str(c)).q for c in coeffs]
        cis = [ctx.mpf(sympy.Rational(str(c)).p) / sympy.Rational(str(c)).q for c in crit]
        v = ctx.mpf(sympy.Rational(str(x)).p) / sympy.Rational(str(x)).q
        out = []
        for _ in range(n):
            s = None
            for i, c in enumerate(cis):
                if v.b < c.a:
                    s = i
                    break
                if v.a <= c.b:
                    return out
            if s is None:
                s = len(cis)
            out.append(s)
            acc = cs[-1]
            for c in reversed(cs[:-1]):
                acc = acc * v + c
            v = acc
        return out
    finally:
        ctx.prec = old


def logistic_kneading_tail(n, a="39/10", prec=8000):
    """Itinerary of c^1 = f(1/2) for the logistic map, by interval arithmetic."""
    a = Fraction(a)
    return iv_itinerary([0, a, -a], [Fraction(1, 2)], a / 4, n, prec)


# -- symbolic derivatives -----------------------------------------------------------------------


def sympy_poly(coeffs):
    return sum(sympy.Rational(str(Fraction(c))) * X**k for k, c in enumerate(coeffs))


def schwarzian_exact(coeffs, x):
    p = sympy_poly(coeffs)
    d1, d2, d3 = (sympy.diff(p, X, k) for k in (1, 2, 3))
    s = d3 / d1 - sympy.Rational(3, 2) * (d2 / d1) ** 2
    return sympy.nsimplify(s.subs(X, sympy.Rational(str(Fraction(x)))))


def derivative_exact(coeffs, x):
    return sympy.diff(sympy_poly(coeffs), X).subs(X, sympy.Rational(str(Fraction(x))))


# -- closed forms ---------------------------------------------------------------------------------


def h_sin2(x: float) -> float:
    return math.sin(math.pi * x / 2) ** 2


def tent_value_chain_left(n: int) -> tuple[Fraction, Fraction]:
    """Î^(n) at the tent critical value 1: [1 - 2^-(n+1), 1]."""
    return (1 - Fraction(1, 2 ** (n + 1)), Fraction(1))


def ulam_acim_exponent(dps: int = 30):
    """Integral of log|4 - 8x| against the density 1 / (pi sqrt(x(1-x)))."""
    with mpmath.workdps(dps):
        f = lambda t: mpmath.log(abs(4 - 8 * mpmath.sin(t) ** 2)) * 2 / mpmath.pi  # noqa: E731
        # substitution x = sin^2 t, dx = 2 sin t cos t dt; density * dx = 2/pi dt
        return mpmath.quad(f, [0, mpmath.pi / 4, mpmath.pi / 2])


def separation(a, b) -> int | None:
    n = min(len(a), len(b))
    for k in range(n):
        if a[k] != b[k]:
            return k
    return None


def s_from_kneading(x_syms, kneading_pairs) -> int | None:
    """max over critical points and sides of the first disagreement, sided at index 0."""
    best = 0
    for left, right in kneading_pairs:
        for seq in (left, right):
            if seq[0] != x_syms[0]:
                continue
            k = separation(x_syms, seq)
            if k is None:
                return None
            best = max(best, k)
    return best


def log_fraction(k: int, dps: int = 100) -> Fraction:
    """log k from mpmath at ``dps`` digits, as an exact Fraction of that float."""
    with mpmath.workdps(dps):
        man, exp = mpmath.log(k).man_exp
    return Fraction(man) * Fraction(2) ** exp


def enclosure_error(lo: Fraction, hi: Fraction, target: Fraction) -> Fraction:
    """Distance from target to the farther end of [lo, hi]; large if target lies outside."""
    return max(abs(target - lo), abs(hi - target))
