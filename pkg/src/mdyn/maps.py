"""Multimodal interval maps on [0, 1] with certified evaluation.

Three kinds of map are supported:

* ``polynomial``: exact rational coefficients in ascending powers;
* ``folded_linear``: piecewise linear through exact rational nodes, with a
  turning point at every interior breakpoint;
* ``pushforward``: ``g = h o f o h^-1`` for a base map ``f`` and an increasing
  homeomorphism ``h`` from :mod:`mdyn.homeo`.

Evaluation of a rational map at an exact rational point stays exact (as a
gmpy2 ``mpq``) while denominators remain moderate; everything else is
outward-rounded interval arithmetic at the precision of the argument.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import sympy
from gmpy2 import mpfr, mpq

from .errors import (
    AtCriticalPoint,
    BoundaryViolation,
    MapDefinitionError,
    NotDifferentiable,
    NotSmooth,
    PrecisionExhausted,
    RootIsolationFailure,
)
from .homeo import HomeoSpec
from .interval import (
    CertifiedValue,
    PrecisionConfig,
    nearest,
    rat_bounds,
    rational_str,
    rounding,
    to_rational,
)

KINDS = ("polynomial", "folded_linear", "pushforward")

# exact orbits are abandoned once denominators grow beyond this many bits
EXACT_BITS = 1 << 16

# classification codes returned by MapSpec.classify besides symbols 0..q
UNCERTAIN = -1


def hit_code(i: int) -> int:
    """Classification code for a point lying exactly on critical point ``i``."""
    return -(i + 2)


def hit_index(code: int) -> int | None:
    return -code - 2 if code <= -2 else None


def _mpq(value):
    if isinstance(value, type(mpq(0))):
        return value
    q = to_rational(value)
    return mpq(q.numerator, q.denominator)


def _clip01(v: CertifiedValue) -> CertifiedValue:
    if v.lo >= 0 and v.hi <= 1:
        return v
    lo = v.lo if v.lo > 0 else mpfr(0)
    hi = v.hi if v.hi < 1 else mpfr(1)
    if lo > hi:
        raise MapDefinitionError(f"image {v!r} lies outside [0, 1]")
    return CertifiedValue(lo, hi, v.prec, v.exact)


def _exact_ok(q) -> bool:
    return q.denominator.bit_length() <= EXACT_BITS


def _from_exact(q, prec: int) -> CertifiedValue:
    v = CertifiedValue.from_rational(q, prec)
    if not _exact_ok(q):
        v.exact = None
    return v


def _horner_exact(coeffs, x):
    acc = coeffs[-1]
    for a in reversed(coeffs[:-1]):
        acc = acc * x + a
    return acc


def _horner_point(coeffs, x, prec: int) -> CertifiedValue:
    """Enclosure of p(x) for an MPFR point x (no dependency blow-up)."""
    down, up = rounding(prec)
    lo, hi = rat_bounds(coeffs[-1], prec)
    for a in reversed(coeffs[:-1]):
        if x >= 0:
            lo, hi = down.mul(lo, x), up.mul(hi, x)
        else:
            lo, hi = down.mul(hi, x), up.mul(lo, x)
        al, ah = rat_bounds(a, prec)
        lo, hi = down.add(lo, al), up.add(hi, ah)
    return CertifiedValue(lo, hi, prec)


def _horner_interval(coeffs, v: CertifiedValue) -> CertifiedValue:
    if v.exact is not None:
        return _from_exact(_horner_exact(coeffs, v.exact), v.prec)
    if v.is_point:
        return _horner_point(coeffs, v.lo, v.prec)
    acc = CertifiedValue.from_rational(coeffs[-1], v.prec)
    acc.exact = None
    for a in reversed(coeffs[:-1]):
        acc = acc * v + a
    return acc


def _poly_derivative(coeffs):
    return tuple(coeffs[i] * i for i in range(1, len(coeffs))) or (mpq(0),)


# -- critical point isolation for polynomials --------------------------------


@dataclass(frozen=True)
class _Root:
    """A root of Df: exact rational, or an isolating interval of an irreducible factor."""

    exact: object
    bracket: tuple | None
    factor: object
    multiplicity: int

    def enclosure(self, prec: int) -> CertifiedValue:
        if self.exact is not None:
            return CertifiedValue.from_rational(self.exact, prec)
        a, b = self.factor.refine_root(*self.bracket, eps=sympy.Rational(1, 2 ** (prec + 4)))
        down, up = rounding(prec)
        lo = down.add(mpfr(0), _mpq(Fraction(int(a.p), int(a.q))))
        hi = up.add(mpfr(0), _mpq(Fraction(int(b.p), int(b.q))))
        return CertifiedValue(lo, hi, prec)


def _poly_roots_of_derivative(coeffs) -> list[_Root]:
    x = sympy.symbols("x")
    expr = sum(sympy.Rational(int(a.numerator), int(a.denominator)) * x**i for i, a in enumerate(coeffs))
    dp = sympy.Poly(expr, x, domain="QQ").diff(x)
    if dp.is_zero:
        raise MapDefinitionError("constant map has no turning points")
    roots: list[_Root] = []
    for fac, mult in dp.factor_list()[1]:
        if fac.degree() == 1:
            a1, a0 = fac.all_coeffs()
            r = -sympy.Rational(a0) / sympy.Rational(a1)
            rq = mpq(int(r.p), int(r.q))
            if rq == 0 or rq == 1:
                raise MapDefinitionError("Df vanishes on the boundary of [0, 1]")
            if 0 < rq < 1:
                roots.append(_Root(rq, None, fac, mult))
            continue
        for (a, b), _m in fac.intervals():
            a, b = sympy.Rational(a), sympy.Rational(b)
            # irreducible of degree >= 2: no rational roots, so refinement
            # eventually separates each root from 0 and 1
            for _ in range(200):
                if b < 0 or a > 1 or (a > 0 and b < 1):
                    break
                a, b = fac.refine_root(a, b, eps=(b - a) / 4)
            if a > 0 and b < 1:
                roots.append(_Root(None, (a, b), fac, mult))
    # order roots, refining until enclosures separate
    for bits in (128, 512, 2048):
        encl = [r.enclosure(bits) for r in roots]
        order = sorted(range(len(roots)), key=lambda i: encl[i].lo)
        ok = all(encl[order[i]].hi < encl[order[i + 1]].lo for i in range(len(order) - 1))
        if ok:
            return [roots[i] for i in order]
    raise RootIsolationFailure("critical points could not be separated")


# -- public records ------------------------------------------------------------


@dataclass(frozen=True)
class CriticalPoint:
    """A turning point ``c_i`` with its fitted non-flatness data."""

    index: int
    location: CertifiedValue
    exact: object = None
    order: float | None = None
    nonflat_constant: float | None = None
    neighborhood_radius: Fraction = Fraction(0)

    def __float__(self):
        return float(self.exact) if self.exact is not None else float(self.location)


@dataclass
class NonflatRecord:
    critical_index: int
    samples: int
    order: float | None = None
    constant: float | None = None
    stored_order: float | None = None
    stored_constant: float | None = None
    passed: bool = False
    rejected: str | None = None


@dataclass(frozen=True, eq=False)
class MapSpec:
    """An interval map on [0, 1]; build with :meth:`polynomial`, :meth:`folded_linear` or :meth:`pushforward`."""

    kind: str
    name: str = ""
    coefficients: tuple = ()
    breakpoints: tuple = ()
    values: tuple = ()
    base: MapSpec | None = None
    homeo: HomeoSpec | None = None
    precision: PrecisionConfig = field(default_factory=PrecisionConfig)
    negative_schwarzian: bool | None = None
    critical_points: tuple = ()
    boundary_fixed: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MapDefinitionError(f"unknown map kind {self.kind!r}")
        object.__setattr__(self, "_cache", {})
        if self.kind == "polynomial":
            self._init_polynomial()
        elif self.kind == "folded_linear":
            self._init_folded()
        else:
            if self.base is None or self.homeo is None:
                raise MapDefinitionError("pushforward needs a base map and a homeomorphism")
            object.__setattr__(self, "negative_schwarzian", False)
        self._init_critical_points()
        self._check_boundary()

    # -- constructors ----------------------------------------------------

    @classmethod
    def polynomial(cls, coefficients, name="", precision=None, negative_schwarzian=None) -> MapSpec:
        coeffs = tuple(_mpq(c) for c in coefficients)
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs = coeffs[:-1]
        return cls("polynomial", name, coefficients=coeffs, precision=precision or PrecisionConfig(),
                   negative_schwarzian=negative_schwarzian)

    @classmethod
    def folded_linear(cls, breakpoints, values=None, name="", precision=None) -> MapSpec:
        """Breakpoints are the interior turning points; values the node images at 0, b_1, ..., b_q, 1.

        Without explicit values the nodes alternate 0, 1, 0, ... (full branches).
        """
        bps = tuple(_mpq(b) for b in breakpoints)
        if values is None:
            values = [i % 2 for i in range(len(bps) + 2)]
        vals = tuple(_mpq(v) for v in values)
        return cls("folded_linear", name, breakpoints=bps, values=vals, precision=precision or PrecisionConfig(),
                   negative_schwarzian=False)

    @classmethod
    def pushforward(cls, base: MapSpec, homeo: HomeoSpec, name="") -> MapSpec:
        return cls("pushforward", name or f"{base.name}^{homeo.form}", base=base, homeo=homeo,
                   precision=base.precision)

    # -- validation --------------------------------------------------------

    def _init_polynomial(self):
        if len(self.coefficients) < 3:
            raise MapDefinitionError("polynomial map needs degree >= 2")
        c = self._cache
        c["d1"] = _poly_derivative(self.coefficients)
        c["d2"] = _poly_derivative(c["d1"])
        c["d3"] = _poly_derivative(c["d2"])
        c["roots"] = _poly_roots_of_derivative(self.coefficients)
        for r in c["roots"]:
            if r.multiplicity % 2 == 0:
                raise MapDefinitionError("critical point is not a turning point (even multiplicity)")
        if not c["roots"]:
            raise MapDefinitionError("map has no interior critical point")
        for x in (mpq(0), mpq(1)):
            y = _horner_exact(self.coefficients, x)
            if y < 0 or y > 1:
                raise MapDefinitionError("polynomial does not map [0, 1] into itself")
        for r in c["roots"]:
            y = _horner_interval(self.coefficients, r.enclosure(256))
            if y.lo > 1 or y.hi < 0:
                raise MapDefinitionError("critical value outside [0, 1]")

    def _init_folded(self):
        bps, vals = self.breakpoints, self.values
        if not bps:
            raise MapDefinitionError("folded_linear map needs at least one breakpoint")
        nodes = (mpq(0),) + bps + (mpq(1),)
        if any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise MapDefinitionError("breakpoints must be strictly increasing inside (0, 1)")
        if len(vals) != len(nodes):
            raise MapDefinitionError("folded_linear needs one node value per breakpoint plus both endpoints")
        if any(v < 0 or v > 1 for v in vals):
            raise MapDefinitionError("node values must lie in [0, 1]")
        slopes = tuple((vals[i + 1] - vals[i]) / (nodes[i + 1] - nodes[i]) for i in range(len(nodes) - 1))
        if any(s == 0 for s in slopes):
            raise MapDefinitionError("folded_linear pieces must be strictly monotone")
        if any((a > 0) == (b > 0) for a, b in zip(slopes, slopes[1:])):
            raise MapDefinitionError("every breakpoint must be a turning point")
        self._cache["nodes"] = nodes
        self._cache["slopes"] = slopes

    def _init_critical_points(self):
        prec = self.precision.initial_bits
        if self.kind == "polynomial":
            exacts = [r.exact for r in self._cache["roots"]]
        elif self.kind == "folded_linear":
            exacts = list(self.breakpoints)
        else:
            exacts = [None] * self.base.q
        object.__setattr__(self, "_exacts", tuple(exacts))
        encl = self.critical_enclosures(prec)
        pts = [mpq(0)] + [e if e is not None else _mpq(encl[i].mid()) for i, e in enumerate(exacts)] + [mpq(1)]
        gap = min(b - a for a, b in zip(pts, pts[1:]))
        radius = Fraction(int(gap.numerator), int(gap.denominator)) / 4
        cps = []
        for i, e in enumerate(exacts):
            cp = CriticalPoint(i, encl[i], e, None, None, radius)
            if self.kind != "folded_linear" and self._smooth_near(cp):
                order = _fit_order(self, cp)
                rec = _nonflat_scan(self, cp, order, 200)
                cp = CriticalPoint(i, encl[i], e, order, rec[1], radius)
            cps.append(cp)
        object.__setattr__(self, "critical_points", tuple(cps))
        if self.kind == "polynomial":
            flag = _schwarzian_negative_on_grid(self, 1000)
            if self.negative_schwarzian and not flag:
                raise MapDefinitionError("negative Schwarzian flag set but S(f) >= 0 at a sample point")
            if self.negative_schwarzian is None:
                object.__setattr__(self, "negative_schwarzian", flag)

    def _smooth_near(self, cp: CriticalPoint) -> bool:
        if self.kind == "polynomial":
            return True
        m = self
        while m.kind == "pushforward":
            m = m.base
        return m.kind == "polynomial" or self.kind == "pushforward"

    def _check_boundary(self):
        ends = [self.exact_image(mpq(0)), self.exact_image(mpq(1))]
        if all(e is not None and e in (0, 1) for e in ends):
            object.__setattr__(self, "boundary_fixed", True)
            return
        if self.kind == "pushforward":
            object.__setattr__(self, "boundary_fixed", self.base.boundary_fixed)
            return
        # otherwise critical orbits must avoid {0, 1}; checked on a finite horizon
        prec = self.precision.initial_bits
        for i in range(self.q):
            v = self.critical_value(i, prec)
            for _ in range(256):
                if v.exact is not None and v.exact in (0, 1):
                    raise BoundaryViolation(f"orbit of critical point {i} reaches the boundary")
                if v.hi - v.lo > 0.25:
                    break
                v = self.image(v)

    # -- basic structure --------------------------------------------------------

    @property
    def q(self) -> int:
        if self.kind == "pushforward":
            return self.base.q
        return len(self._exacts)

    @property
    def is_rational(self) -> bool:
        return self.kind != "pushforward"

    @property
    def critical_exact(self) -> tuple:
        return self._exacts

    def critical_enclosures(self, prec: int) -> tuple:
        key = ("crit", prec)
        cache = self._cache
        if key not in cache:
            if self.kind == "polynomial":
                cache[key] = tuple(r.enclosure(prec) for r in cache["roots"])
            elif self.kind == "folded_linear":
                cache[key] = tuple(CertifiedValue.from_rational(b, prec) for b in self.breakpoints)
            else:
                base = self.base.critical_enclosures(prec + 16)
                cache[key] = tuple(self.homeo(c).at(prec) if c.exact is None else self.homeo(c) for c in base)
                cache[key] = tuple(CertifiedValue(v.lo, v.hi, prec) for v in cache[key])
        return cache[key]

    def boundaries(self, prec: int) -> tuple:
        """Enclosures of 0 = c_0 < c_1 < ... < c_q < c_{q+1} = 1."""
        key = ("bounds", prec)
        if key not in self._cache:
            zero = CertifiedValue.from_rational(0, prec)
            one = CertifiedValue.from_rational(1, prec)
            self._cache[key] = (zero,) + self.critical_enclosures(prec) + (one,)
        return self._cache[key]

    def critical_value(self, i: int, prec: int) -> CertifiedValue:
        key = ("cval", i, prec)
        if key not in self._cache:
            c = self.critical_enclosures(prec)[i]
            if self.kind == "polynomial" and c.exact is None:
                v = _clip01(_horner_interval(self.coefficients, c))
            else:
                v = self.image(c)
            self._cache[key] = v
        return self._cache[key]

    def orientation(self, k: int) -> int:
        """+1 if f is increasing on the branch I_k, -1 if decreasing."""
        if self.kind == "pushforward":
            return self.base.orientation(k)
        if self.kind == "folded_linear":
            return 1 if self._cache["slopes"][k] > 0 else -1
        b = self.boundaries(128)
        mid = CertifiedValue.point(nearest(130).div(nearest(130).add(b[k].hi, b[k + 1].lo), 2), 128)
        s = _horner_interval(self._cache["d1"], mid).sign()
        if s is None or s == 0:
            raise RootIsolationFailure("branch orientation undecided")
        return s

    def classify(self, v: CertifiedValue) -> int:
        """Symbol k if v lies strictly inside I_k, hit_code(i) if v is exactly c_i, else UNCERTAIN."""
        prec = v.prec
        crit = self.critical_enclosures(prec)
        if v.exact is not None and self.kind != "pushforward":
            x = v.exact
            for i, e in enumerate(self._exacts):
                if e is not None:
                    if x < e:
                        return i
                    if x == e:
                        return hit_code(i)
                    continue
                c = crit[i]
                if v.hi < c.lo:
                    return i
                if v.lo <= c.hi:
                    return UNCERTAIN
            return len(crit)
        for i, c in enumerate(crit):
            if v.hi < c.lo:
                return i
            if v.lo > c.hi:
                continue
            return UNCERTAIN
        return len(crit)

    # -- evaluation ------------------------------------------------------------

    def exact_image(self, x):
        """f(x) as an exact rational for rational maps and rational x, else None."""
        if self.kind == "polynomial":
            return _horner_exact(self.coefficients, x)
        if self.kind == "folded_linear":
            nodes, slopes, vals = self._cache["nodes"], self._cache["slopes"], self.values
            for k in range(len(slopes)):
                if x <= nodes[k + 1] or k == len(slopes) - 1:
                    return vals[k] + slopes[k] * (x - nodes[k])
        if self.kind == "pushforward" and self.homeo.form == "identity":
            return self.base.exact_image(x)
        return None

    def _point_image(self, x, prec: int) -> CertifiedValue:
        if self.kind == "polynomial":
            return _horner_point(self.coefficients, x, prec)
        nodes, slopes, vals = self._cache["nodes"], self._cache["slopes"], self.values
        for k in range(len(slopes)):
            if x <= nodes[k + 1] or k == len(slopes) - 1:
                return (CertifiedValue.point(x, prec) - nodes[k]) * slopes[k] + vals[k]
        raise AssertionError("unreachable")

    def image(self, v: CertifiedValue) -> CertifiedValue:
        """Certified enclosure of f(v) at the precision of ``v``."""
        prec = v.prec
        if self.kind == "pushforward":
            if self.homeo.form == "identity":
                return self.base.image(v)
            inner = self.homeo.inverse()(v)
            return _clip01(self.homeo(self.base.image(inner)))
        if v.exact is not None:
            return _from_exact(self.exact_image(v.exact), prec)
        parts = [self._point_image(v.lo, prec)]
        if not v.is_point:
            parts.append(self._point_image(v.hi, prec))
            for i, c in enumerate(self.critical_enclosures(prec)):
                if c.hi >= v.lo and c.lo <= v.hi:
                    parts.append(self.critical_value(i, prec))
        return _clip01(CertifiedValue.hull(*parts) if len(parts) > 1 else parts[0])

    def derivative(self, v: CertifiedValue) -> CertifiedValue:
        if self.kind == "polynomial":
            return _horner_interval(self._cache["d1"], v)
        if self.kind == "folded_linear":
            nodes, slopes = self._cache["nodes"], self._cache["slopes"]
            for b in nodes[1:-1]:
                if v.lo <= b <= v.hi:
                    raise NotDifferentiable("folded_linear map is not differentiable at a breakpoint")
            k = next(k for k in range(len(slopes)) if v.hi <= nodes[k + 1])
            return CertifiedValue.from_rational(slopes[k], v.prec)
        hinv = self.homeo.inverse()
        x = hinv(v)
        fx = self.base.image(x)
        return self.homeo.derivative(fx) * self.base.derivative(x) * hinv.derivative(v)

    def schwarzian(self, v: CertifiedValue) -> CertifiedValue:
        if self.kind != "polynomial":
            raise NotSmooth(f"{self.kind} maps have no certified third derivative")
        d1 = _horner_interval(self._cache["d1"], v)
        if d1.lo <= 0 <= d1.hi:
            raise AtCriticalPoint("Df vanishes (or may vanish) at the given point")
        d2 = _horner_interval(self._cache["d2"], v)
        d3 = _horner_interval(self._cache["d3"], v)
        r = d2 / d1
        s = d3 / d1 - r.square() * Fraction(3, 2)
        if v.exact is not None:
            e1 = _horner_exact(self._cache["d1"], v.exact)
            e2 = _horner_exact(self._cache["d2"], v.exact)
            e3 = _horner_exact(self._cache["d3"], v.exact)
            return CertifiedValue.from_rational(e3 / e1 - mpq(3, 2) * (e2 / e1) ** 2, v.prec)
        return s

    def max_slope(self) -> float:
        """Upper bound for max |Df| (rigorous for rational maps, grid estimate for pushforwards)."""
        if "D" in self._cache:
            return self._cache["D"]
        if self.kind == "folded_linear":
            d = float(max(abs(s) for s in self._cache["slopes"]))
        elif self.kind == "polynomial":
            d = 0.0
            n = 512
            for i in range(n):
                piece = CertifiedValue(mpfr(i) / n, mpfr(i + 1) / n, 64)
                d = max(d, float(abs(_horner_interval(self._cache["d1"], piece)).hi))
        else:
            xs = np.linspace(0, 1, 4097)[1:-1]
            eps = 1e-7
            ys = self.float_image(np.clip(xs + eps, 0, 1)) - self.float_image(np.clip(xs - eps, 0, 1))
            d = float(np.max(np.abs(ys)) / (2 * eps))
        self._cache["D"] = d
        return d

    # -- inverse branches --------------------------------------------------------

    def preimage(self, k: int, t: CertifiedValue, guess=None) -> CertifiedValue:
        """Enclosure of the unique y in the branch I_k with f(y) in t (clipped to I_k)."""
        prec = t.prec
        b = self.boundaries(prec)
        if self.kind == "pushforward":
            hinv = self.homeo.inverse()
            g = float(hinv(CertifiedValue.from_rational(to_rational(guess), 64))) if guess is not None else None
            y = self.homeo(self.base.preimage(k, hinv(_clip01(t)), g))
        elif self.kind == "folded_linear":
            nodes, slopes, vals = self._cache["nodes"], self._cache["slopes"], self.values
            if t.exact is not None:
                y = _from_exact(nodes[k] + (t.exact - vals[k]) / slopes[k], prec)
            else:
                y = (t - vals[k]) / slopes[k] + nodes[k]
        elif len(self.coefficients) == 3:
            y = self._preimage_quadratic(k, t)
        else:
            y = self._preimage_newton(k, t, guess)
        lo = max(b[k].lo, y.lo)
        hi = min(b[k + 1].hi, y.hi)
        if lo > hi:
            raise PrecisionExhausted("preimage enclosure left the branch", bits=prec)
        return CertifiedValue(lo, hi, prec, y.exact)

    def _preimage_quadratic(self, k: int, t: CertifiedValue) -> CertifiedValue:
        a0, a1, a2 = self.coefficients
        vertex = -a1 / (2 * a2)
        top = _horner_exact(self.coefficients, vertex)
        arg = (t - top) / a2
        if arg.hi < 0:
            raise PrecisionExhausted("target outside the branch range", bits=t.prec)
        if arg.lo < 0:
            arg = CertifiedValue(mpfr(0), arg.hi, t.prec)
        down, up = rounding(t.prec)
        root = CertifiedValue(down.sqrt(arg.lo), up.sqrt(arg.hi), t.prec)
        naive = root + vertex if k == 1 else -root + vertex
        # the root nearer 0 loses all relative accuracy to cancellation; take it
        # from the product of the roots, (a0 - t) / a2, instead
        sgn = 1 if vertex >= 0 else -1
        big = root * sgn + vertex
        if big.sign() is None:
            return naive
        if (k == 1) == (sgn > 0):
            return big
        small = (-t + a0) / a2 / big
        lo, hi = max(small.lo, naive.lo), min(small.hi, naive.hi)
        return CertifiedValue(lo, hi, t.prec) if lo <= hi else small

    def _preimage_newton(self, k: int, t: CertifiedValue, guess) -> CertifiedValue:
        prec = t.prec
        ctx = nearest(prec + 32)
        b = self.boundaries(prec)
        lo_b, hi_b = b[k].mid(), b[k + 1].mid()
        orient = self.orientation(k)
        coeffs, d1 = self.coefficients, self._cache["d1"]

        def solve(target):
            # safeguarded Newton: Newton step, else secant across the bracket, else bisection
            a, c = lo_b, hi_b
            fa = ctx.sub(_approx_horner(ctx, coeffs, a), target)
            fc = ctx.sub(_approx_horner(ctx, coeffs, c), target)
            if (fa > 0) == (fc > 0):
                # no sign change: the target lies beyond the branch range
                return a if ctx.abs(fa) <= ctx.abs(fc) else c
            y = ctx.add(mpfr(0), guess) if guess is not None else ctx.div(ctx.add(a, c), 2)
            if not (a < y < c):
                y = ctx.div(ctx.add(a, c), 2)
            for _ in range(2 * prec + 100):
                fy = ctx.sub(_approx_horner(ctx, coeffs, y), target)
                if fy == 0:
                    return y
                if (fy > 0) == (orient > 0):
                    c, fc = y, fy
                else:
                    a, fa = y, fy
                dy = _approx_horner(ctx, d1, y)
                # a Newton correction below the tolerance means y is already the root
                if ctx.abs(fy) <= ctx.mul(ctx.abs(dy), ctx.mul(ctx.abs(y), tol)):
                    return y
                nxt = ctx.sub(y, ctx.div(fy, dy)) if dy != 0 else None
                if nxt is None or not (a < nxt < c):
                    den = ctx.sub(fc, fa)
                    nxt = ctx.sub(a, ctx.div(ctx.mul(fa, ctx.sub(c, a)), den)) if den != 0 else None
                    if nxt is None or not (a < nxt < c):
                        nxt = ctx.div(ctx.add(a, c), 2)
                # relative stopping rule: preimages near 0 need relative accuracy
                scale = max(ctx.abs(nxt), ctx.abs(y))
                step = ctx.abs(ctx.sub(nxt, y))
                if step <= ctx.mul(scale, tol) or ctx.sub(c, a) <= ctx.mul(scale, tol):
                    return nxt
                y = nxt
            return y

        tol = mpfr(2) ** (-(prec + 16))
        ya, yb = solve(t.lo), solve(t.hi)
        lo_y, hi_y = min(ya, yb), max(ya, yb)
        lo_t = t.lo if orient > 0 else t.hi
        hi_t = t.hi if orient > 0 else t.lo
        down, up = rounding(prec)
        mag = max(abs(float(lo_y)), abs(float(hi_y)))
        eps = down.mul(max(ctx.abs(lo_y), ctx.abs(hi_y)), mpfr(2) ** (-(prec - 8))) if mag > 0 else mpfr(2) ** (-2 * prec)
        if eps == 0:
            eps = mpfr(2) ** (-2 * prec)
        for _ in range(60):
            left = down.sub(lo_y, eps)
            right = up.add(hi_y, eps)
            ok_left = left <= b[k].lo or self._beyond(left, lo_t, orient, below=True, prec=prec)
            ok_right = right >= b[k + 1].hi or self._beyond(right, hi_t, orient, below=False, prec=prec)
            if ok_left and ok_right:
                return CertifiedValue(max(left, b[k].lo), min(right, b[k + 1].hi), prec)
            eps = up.mul(eps, 4)
        raise PrecisionExhausted("could not certify an inverse-branch enclosure", bits=prec)

    def _beyond(self, y, bound, orient, below, prec) -> bool:
        # below: f(y) is certainly on the far side of the low target end, so nothing left of y maps into t
        v = _horner_point(self.coefficients, y, prec)
        if orient > 0:
            return v.hi < bound if below else v.lo > bound
        return v.lo > bound if below else v.hi < bound

    # -- approximate (round-to-nearest) evaluation --------------------------------

    def approx_step(self, ctx, x):
        if self.kind == "polynomial":
            return _approx_horner(ctx, self.coefficients, x)
        if self.kind == "folded_linear":
            nodes, slopes, vals = self._cache["nodes"], self._cache["slopes"], self.values
            for k in range(len(slopes)):
                if x <= nodes[k + 1] or k == len(slopes) - 1:
                    return ctx.add(ctx.mul(ctx.sub(x, nodes[k]), slopes[k]), vals[k])
        y = self.base.approx_step(ctx, _approx_homeo(ctx, self.homeo.inverse(), x))
        return _approx_homeo(ctx, self.homeo, y)

    def approx_log_abs_derivative(self, ctx, x):
        if self.kind == "polynomial":
            return ctx.log(ctx.abs(_approx_horner(ctx, self._cache["d1"], x)))
        if self.kind == "folded_linear":
            nodes, slopes = self._cache["nodes"], self._cache["slopes"]
            k = next(k for k in range(len(slopes)) if x <= nodes[k + 1] or k == len(slopes) - 1)
            return ctx.log(ctx.abs(ctx.add(mpfr(0), slopes[k])))
        prec = ctx.precision
        d = self.derivative(CertifiedValue.point(x, prec))
        return ctx.log(ctx.abs(d.mid()))

    # -- float64 evaluation (independent oracle path) ------------------------------

    def float_image(self, xs: np.ndarray) -> np.ndarray:
        if self.kind == "polynomial":
            return np.polyval([float(c) for c in reversed(self.coefficients)], xs)
        if self.kind == "folded_linear":
            return np.interp(xs, [float(n) for n in self._cache["nodes"]], [float(v) for v in self.values])
        return self.homeo.float_eval(self.base.float_image(self.homeo.inverse().float_eval(xs)))

    def float_step_error(self) -> float:
        """Bound on |float_image(x) - f(x)| for a single step at float64."""
        u = 2.0**-52
        if self.kind == "polynomial":
            return 4 * len(self.coefficients) * u * float(sum(abs(c) for c in self.coefficients)) + u
        if self.kind == "folded_linear":
            return 8 * u * (1 + float(max(abs(s) for s in self._cache["slopes"])))
        # h^-1 near 0 and 1 has unbounded slope; use a generous margin
        return 1e-10

    def float_critical(self) -> np.ndarray:
        return np.array([float(c) for c in self.critical_enclosures(64)])

    def __repr__(self):
        return f"MapSpec({self.kind}, name={self.name!r}, q={self.q})"


def _approx_horner(ctx, coeffs, x):
    acc = ctx.add(mpfr(0), coeffs[-1])
    for a in reversed(coeffs[:-1]):
        acc = ctx.add(ctx.mul(acc, x), a)
    return acc


def _approx_homeo(ctx, h: HomeoSpec, x):
    return h(CertifiedValue.point(x, ctx.precision)).mid()


# -- non-flatness ----------------------------------------------------------------


def _abs_df_near(m: MapSpec, cp: CriticalPoint, t: Fraction, side: int, prec: int = 256) -> float:
    c = cp.exact if cp.exact is not None else _mpq(m.critical_enclosures(prec)[cp.index].mid())
    x = c + side * _mpq(t)
    v = CertifiedValue.from_rational(x, prec) if m.kind != "pushforward" else CertifiedValue.from_rational(x, prec)
    if m.kind == "pushforward":
        v.exact = None
    return abs(float(m.derivative(v)))


def _fit_order(m: MapSpec, cp: CriticalPoint) -> float:
    """Order l from the log-log slope of |Df(c + t)| against t at small radii."""
    r = cp.neighborhood_radius
    t1, t2 = r / 2**40, r / 2**20
    slopes = []
    for side in (-1, 1):
        a, b = _abs_df_near(m, cp, t1, side), _abs_df_near(m, cp, t2, side)
        slopes.append((math.log(b) - math.log(a)) / (math.log(float(t2)) - math.log(float(t1))))
    return 1.0 + sum(slopes) / 2


def _nonflat_scan(m: MapSpec, cp: CriticalPoint, order: float, samples: int):
    """(ratios, tightest L) of |Df(x)| / |x - c|^(l-1) over a two-sided grid of V(c)."""
    r = cp.neighborhood_radius
    ratios = []
    half = max(samples // 2, 1)
    for side in (-1, 1):
        for j in range(1, half + 1):
            t = r * Fraction(j, half)
            ratios.append(_abs_df_near(m, cp, t, side, 128) / float(t) ** (order - 1))
    lo, hi = min(ratios), max(ratios)
    return ratios, max(hi, 1.0 / lo, 1.0)


def verify_nonflat(m: MapSpec, c: CriticalPoint, samples: int = 200) -> NonflatRecord:
    """Tightest (l, L) consistent with the two-sided non-flat bound on a sample grid of V(c)."""
    if samples < 10:
        raise ValueError("samples must be >= 10")
    rec = NonflatRecord(c.index, samples, stored_order=c.order, stored_constant=c.nonflat_constant)
    if m.kind == "folded_linear":
        rec.rejected = "non-smooth: folded_linear maps have no derivative at turning points"
        return rec
    order = _fit_order(m, c)
    ratios, L = _nonflat_scan(m, c, order, samples)
    rec.order, rec.constant = order, L
    if c.order is None or c.nonflat_constant is None:
        rec.passed = False
        return rec
    # stored pair must bound every sample
    r = c.neighborhood_radius
    ok = True
    half = max(samples // 2, 1)
    slack = 1e-9
    for side in (-1, 1):
        for j in range(1, half + 1):
            t = float(r * Fraction(j, half))
            d = _abs_df_near(m, c, r * Fraction(j, half), side, 128)
            scale = t ** (c.order - 1)
            if not (scale / c.nonflat_constant * (1 - slack) <= d <= c.nonflat_constant * scale * (1 + slack)):
                ok = False
    rec.passed = ok and abs(order - c.order) < 1e-3
    return rec


def _schwarzian_negative_on_grid(m: MapSpec, n: int) -> bool:
    crit = m.critical_enclosures(128)
    for i in range(1, n):
        x = CertifiedValue.from_rational(Fraction(i, n), 128)
        if any(c.lo - 2**-60 <= x.lo <= c.hi + 2**-60 for c in crit):
            continue
        s = m.schwarzian(x)
        if not s.hi < 0:
            return False
    return True


# -- module-level operations ---------------------------------------------------------


def _as_value(x, bits: int) -> CertifiedValue:
    if isinstance(x, CertifiedValue):
        return x.at(bits) if x.exact is not None else x
    return CertifiedValue.from_rational(x, bits)


def evaluate(m: MapSpec, x, prec: PrecisionConfig | None = None, width=None) -> CertifiedValue:
    """Certified f(x); escalates precision until the enclosure is narrower than ``width``."""
    cfg = (prec or m.precision).with_env()
    y = None
    for bits in cfg.ladder():
        y = m.image(_as_value(x, bits))
        if width is None or y.width() <= width:
            return y
    raise PrecisionExhausted(f"evaluation width above {width} at {cfg.max_bits} bits", bits=cfg.max_bits)


def derivative(m: MapSpec, x, prec: PrecisionConfig | None = None) -> CertifiedValue:
    cfg = prec or m.precision
    return m.derivative(_as_value(x, cfg.initial_bits))


def schwarzian(m: MapSpec, x, prec: PrecisionConfig | None = None) -> CertifiedValue:
    cfg = prec or m.precision
    return m.schwarzian(_as_value(x, cfg.initial_bits))


def find_critical_points(m: MapSpec) -> list[CriticalPoint]:
    return list(m.critical_points)


# -- builtin test maps ----------------------------------------------------------------


def ulam(precision=None) -> MapSpec:
    return MapSpec.polynomial([0, 4, -4], name="ulam", precision=precision)


def tent(precision=None) -> MapSpec:
    return MapSpec.folded_linear([Fraction(1, 2)], [0, 1, 0], name="tent", precision=precision)


def l3(precision=None) -> MapSpec:
    return MapSpec.folded_linear([Fraction(1, 3), Fraction(2, 3)], [0, 1, 0, 1], name="l3", precision=precision)


def f3(precision=None) -> MapSpec:
    """(1 - T_3(1 - 2x)) / 2 = 9x - 24x^2 + 16x^3."""
    return MapSpec.polynomial([0, 9, -24, 16], name="f3", precision=precision)


def logistic(a="39/10", precision=None) -> MapSpec:
    a = to_rational(a)
    return MapSpec.polynomial([0, a, -a], name=f"logistic_{rational_str(a)}", precision=precision)


BUILTINS = {"ulam": ulam, "tent": tent, "l3": l3, "f3": f3, "logistic": logistic}


# -- JSON ---------------------------------------------------------------------------


def _precision_json(p: PrecisionConfig) -> dict:
    return {"initial_bits": p.initial_bits, "max_bits": p.max_bits}


def map_to_json(m: MapSpec) -> dict:
    out = {"kind": m.kind, "name": m.name, "precision": _precision_json(m.precision)}
    if m.kind == "polynomial":
        out["coefficients"] = [rational_str(to_rational(c)) for c in m.coefficients]
        out["negative_schwarzian"] = bool(m.negative_schwarzian)
    elif m.kind == "folded_linear":
        out["breakpoints"] = [rational_str(to_rational(b)) for b in m.breakpoints]
        out["values"] = [rational_str(to_rational(v)) for v in m.values]
    else:
        out["base"] = map_to_json(m.base)
        out["homeo"] = m.homeo.to_json()
    out["critical_points"] = [
        {"location": rational_str(to_rational(c.exact)) if c.exact is not None else c.location.tag(),
         "order": c.order, "nonflat_constant": c.nonflat_constant}
        for c in m.critical_points
    ]
    return out


def map_from_json(obj: dict, base_dir: Path | None = None) -> MapSpec:
    kind = obj.get("kind")
    prec = obj.get("precision") or {}
    cfg = PrecisionConfig(initial_bits=int(prec.get("initial_bits", 128)), max_bits=int(prec.get("max_bits", 16384)))
    name = obj.get("name", "")
    if kind == "polynomial":
        m = MapSpec.polynomial(obj["coefficients"], name=name, precision=cfg,
                               negative_schwarzian=obj.get("negative_schwarzian"))
    elif kind == "folded_linear":
        m = MapSpec.folded_linear(obj["breakpoints"], obj.get("values"), name=name, precision=cfg)
    elif kind == "pushforward":
        base = obj["base"]
        if isinstance(base, str):
            base = load_map((base_dir or Path(".")) / base)
        else:
            base = map_from_json(base, base_dir)
        m = MapSpec.pushforward(base, HomeoSpec.from_json(obj["homeo"]), name=name)
    else:
        raise MapDefinitionError(f"unknown map kind {kind!r}")
    declared = obj.get("critical_points")
    if declared:
        if len(declared) != m.q:
            raise MapDefinitionError(f"declared {len(declared)} critical points, found {m.q}")
        for d, cp in zip(declared, m.critical_points):
            loc = d.get("location") if isinstance(d, dict) else d
            if isinstance(loc, str) and "@" not in loc:
                x = to_rational(loc)
                if not cp.location.contains(CertifiedValue.from_rational(x, cp.location.prec)) and \
                        not cp.location.overlaps(CertifiedValue.from_rational(x, cp.location.prec)):
                    raise MapDefinitionError(f"declared critical point {loc} does not match the computed one")
    return m


def load_map(path) -> MapSpec:
    path = Path(path)
    with path.open() as fh:
        obj = json.load(fh)
    return map_from_json(obj, path.parent)


def save_map(m: MapSpec, path) -> None:
    Path(path).write_text(json.dumps(map_to_json(m), indent=2, sort_keys=True) + "\n")
