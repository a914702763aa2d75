"""Increasing homeomorphisms of [0, 1] with certified evaluation and closed-form inverses."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import MapDefinitionError, NotDifferentiable, NotInvertible
from .interval import CertifiedValue, asin, pi, rational_str, sin, sqrt, to_rational

FORMS = ("identity", "square", "sqrt", "sin2", "asin2", "spline")
_INVERSE = {"identity": "identity", "square": "sqrt", "sqrt": "square", "sin2": "asin2", "asin2": "sin2"}


def _clip(x: CertifiedValue) -> CertifiedValue:
    if x.lo >= 0 and x.hi <= 1:
        return x
    lo = max(0, x.lo)
    hi = min(1, x.hi)
    if lo > hi:
        raise ValueError(f"{x!r} lies outside [0, 1]")
    return CertifiedValue(lo, hi, x.prec, x.exact)


@dataclass(frozen=True)
class HomeoSpec:
    """``form`` is one of FORMS; a spline carries its knots as exact rational pairs."""

    form: str
    knots: tuple[tuple[Fraction, Fraction], ...] = field(default=())

    def __post_init__(self):
        if self.form not in FORMS:
            raise MapDefinitionError(f"unsupported homeomorphism form {self.form!r}")
        if self.form == "spline":
            xs = [k[0] for k in self.knots]
            ys = [k[1] for k in self.knots]
            if len(xs) < 2 or xs[0] != 0 or xs[-1] != 1 or ys[0] != 0 or ys[-1] != 1:
                raise NotInvertible("spline must fix 0 and 1")
            if any(b <= a for a, b in zip(xs, xs[1:])) or any(b <= a for a, b in zip(ys, ys[1:])):
                raise NotInvertible("spline knots must be strictly increasing")

    @classmethod
    def spline(cls, knots) -> HomeoSpec:
        return cls("spline", tuple((to_rational(a), to_rational(b)) for a, b in knots))

    def inverse(self) -> HomeoSpec:
        if self.form == "spline":
            return HomeoSpec("spline", tuple((b, a) for a, b in self.knots))
        return HomeoSpec(_INVERSE[self.form])

    def __call__(self, x: CertifiedValue) -> CertifiedValue:
        y = self._apply(_clip(x))
        return y if y.prec == x.prec else CertifiedValue(y.lo, y.hi, x.prec, y.exact)

    def _apply(self, x: CertifiedValue) -> CertifiedValue:
        form = self.form
        if form == "identity":
            return x
        if form == "square":
            return x.square()
        if form == "sqrt":
            return sqrt(x)
        if form == "sin2":
            half_pi = pi(x.prec + 8) * Fraction(1, 2)
            return _clip(sin(half_pi * x).square())
        if form == "asin2":
            two_over_pi = 2 / pi(x.prec + 8)
            return _clip(two_over_pi * asin(sqrt(x)))
        return self._spline(x)

    def _piece(self, v):
        for (x0, y0), (x1, y1) in zip(self.knots, self.knots[1:]):
            if v <= x1:
                return x0, y0, (y1 - y0) / (x1 - x0)
        x0, y0 = self.knots[-2]
        x1, y1 = self.knots[-1]
        return x0, y0, (y1 - y0) / (x1 - x0)

    def _spline(self, x: CertifiedValue) -> CertifiedValue:
        # monotone: image of [lo, hi] is [h(lo), h(hi)]
        def at(v):
            x0, y0, s = self._piece(v)
            return (CertifiedValue(v, v, x.prec) - x0) * s + y0

        return _clip(CertifiedValue.hull(at(x.lo), at(x.hi)))

    def derivative(self, x: CertifiedValue) -> CertifiedValue:
        x = _clip(x)
        form = self.form
        if form == "identity":
            return CertifiedValue.from_rational(1, x.prec)
        if form == "square":
            return x * 2
        if form == "sqrt":
            if x.lo <= 0:
                raise NotDifferentiable("sqrt is not differentiable at 0")
            return 1 / (sqrt(x) * 2)
        if form == "sin2":
            p = pi(x.prec + 8)
            return p * Fraction(1, 2) * sin(p * x)
        if form == "asin2":
            inner = x * (1 - x)
            if inner.lo <= 0:
                raise NotDifferentiable("inverse of sin^2 is not differentiable at 0 or 1")
            return 1 / (pi(x.prec + 8) * sqrt(inner))
        slopes = {self._piece(x.lo)[2], self._piece(x.hi)[2]}
        if len(slopes) > 1:
            raise NotDifferentiable("interval straddles a spline knot")
        return CertifiedValue.from_rational(slopes.pop(), x.prec)

    def float_eval(self, xs):
        """float64 evaluation on a numpy array (oracle path, not certified)."""
        xs = np.clip(np.asarray(xs, dtype=float), 0.0, 1.0)
        form = self.form
        if form == "identity":
            return xs
        if form == "square":
            return xs * xs
        if form == "sqrt":
            return np.sqrt(xs)
        if form == "sin2":
            return np.sin(np.pi * xs / 2) ** 2
        if form == "asin2":
            return 2 / np.pi * np.arcsin(np.sqrt(xs))
        kx = [float(k[0]) for k in self.knots]
        ky = [float(k[1]) for k in self.knots]
        return np.interp(xs, kx, ky)

    def to_json(self) -> dict:
        if self.form == "spline":
            return {"form": "spline", "parameters": {"knots": [[rational_str(a), rational_str(b)] for a, b in self.knots]}}
        return {"form": self.form, "parameters": {}}

    @classmethod
    def from_json(cls, obj: dict) -> HomeoSpec:
        form = obj.get("form")
        if form == "spline":
            return cls.spline(obj.get("parameters", {}).get("knots", []))
        return cls(form)
