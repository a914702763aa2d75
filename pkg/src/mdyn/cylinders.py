"""Nested cylinders around a point, cut events and shadowing times.

The chain is built combinatorially.  For each side of the cylinder we track
the *image* endpoint ``E = f^n(e)``: either an iterate ``c_l^(n - m)`` of a
critical point (after a cut at time ``m`` put ``f^m(e) = c_l``) or an
iterate of a domain boundary point.  Since f^n is monotone on the depth
``n - 1`` cylinder, a cut happens at time n exactly when ``E`` leaves the
closed partition interval ``I_{a_n}`` containing ``x^n``; the new endpoint
is then the preimage of the boundary of ``I_{a_n}`` facing ``E``.  Each step
only needs the classification codes of the orbit tables, so the combinatorics
of a depth-n chain costs O(n).

Domain endpoints are recovered lazily by pulling the critical point back
along the inverse branches ``a_{m-1}, ..., a_0`` with certified preimages,
escalating precision until the requested relative accuracy is met.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import MdynError, PrecisionExhausted, TruncatedByCriticalHit
from .interval import CertifiedValue, to_rational
from .maps import UNCERTAIN, MapSpec
from .orbits import Dynamics, Orbit
from .symbolic import Calibration, SeparationTable, code_mask

LEFT, RIGHT = "left", "right"
REL_TOL = 2.0**-40


@dataclass(frozen=True)
class ShadowingTimes:
    """N- and N+: times n >= 1 at which the left (right) side of the cylinder is cut."""

    N_minus: tuple
    N_plus: tuple
    depth: int

    def side(self, side: str) -> tuple:
        return self.N_minus if side == LEFT else self.N_plus

    def gaps(self, side: str) -> list[tuple[int, int]]:
        seq = self.side(side)
        return list(zip(seq, seq[1:]))


@dataclass(frozen=True)
class PartitionElement:
    """The piece of the side-``side`` cylinder removed at the shadowing time ``n``."""

    n: int
    side: str
    outer: tuple
    inner: tuple


def _base_descriptor(x):
    if isinstance(x, tuple):
        return x
    if isinstance(x, CertifiedValue):
        return ("point", x)
    return ("point", to_rational(x))


@dataclass
class CylinderChain:
    """Î^(n)(x) for n = 0 .. depth, with endpoint provenance and cut events.

    ``sources[side]`` lists (n_from, source) where source is ``("bound", b)``
    or ``("crit", l, m)`` meaning f^m(endpoint) = c_l.
    """

    m: MapSpec
    base: tuple
    symbols: list
    sources: dict
    events: list
    depth: int
    truncation: str | None
    dyn: Dynamics = field(repr=False, default=None)
    _cache: dict = field(default_factory=dict, repr=False)

    # -- combinatorial data ------------------------------------------------

    def source(self, n: int, side: str):
        if n > self.depth:
            raise IndexError(f"depth {n} beyond certified chain depth {self.depth}")
        srcs = self.sources[side]
        lo, hi = 0, len(srcs) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if srcs[mid][0] <= n:
                lo = mid
            else:
                hi = mid - 1
        return srcs[lo][1]

    def cut_events(self) -> list[tuple[int, str]]:
        """(n, left|right|both) for every cut at n >= 1."""
        by_n: dict[int, set] = {}
        for n, side in self.events:
            if n >= 1:
                by_n.setdefault(n, set()).add(side)
        return [(n, "both" if len(s) == 2 else s.pop()) for n, s in sorted(by_n.items())]

    def provenance(self, n: int, side: str):
        """("critical", l, m) with f^m(endpoint) = c_l, ("boundary", b), or ("base",) for a degenerate side."""
        src = self.source(n, side)
        if self.is_degenerate(n, side):
            return ("base",)
        if src[0] == "bound":
            return ("boundary", src[1])
        return ("critical", src[1], src[2])

    def is_degenerate(self, n: int, side: str) -> bool:
        src = self.source(n, side)
        kind = self.base[0]
        if src[0] == "bound":
            bx = self._base_exact()
            return bx is not None and bx == src[1]
        if kind == "crit" and src[1] == self.base[1] and src[2] == 0:
            return True
        return False

    def is_boundary(self, n: int, side: str) -> bool:
        return self.source(n, side)[0] == "bound" and not self.is_degenerate(n, side)

    # -- metric data --------------------------------------------------------

    def _base_exact(self):
        kind = self.base[0]
        if kind == "point":
            x = self.base[1]
            if isinstance(x, CertifiedValue):
                return x.exact
            return x
        if kind == "crit":
            return self.m.critical_exact[self.base[1]]
        if kind == "cval":
            p = self.dyn.critical_orbit(self.base[1]).point(1)
            return p.exact if p is not None else None
        return None

    def base_value(self, bits: int) -> CertifiedValue:
        kind = self.base[0]
        if kind == "point":
            x = self.base[1]
            if isinstance(x, CertifiedValue):
                return x.at(bits) if x.exact is not None else x
            return CertifiedValue.from_rational(x, bits)
        if kind == "crit":
            return self.m.critical_enclosures(bits)[self.base[1]]
        ex = self._base_exact()
        if ex is not None:
            return CertifiedValue.from_rational(ex, bits)
        return self.m.critical_value(self.base[1], bits)

    def orbit_point(self, j: int) -> CertifiedValue:
        """x^j from the orbit tables."""
        kind = self.base[0]
        if kind == "point":
            return self.dyn.point_orbit(self.base[1]).point(j)
        if kind == "crit":
            return self.dyn.critical_orbit(self.base[1]).point(j)
        return self.dyn.critical_orbit(self.base[1]).point(j + 1)

    def _guess(self, j: int):
        p = self.orbit_point(j)
        return None if p is None else p.mid()

    def _pullback(self, src, bits: int) -> CertifiedValue:
        if src[0] == "bound":
            return CertifiedValue.from_rational(src[1], bits)
        _, l, m0 = src
        key = (src, bits)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        t = self.m.critical_enclosures(bits)[l]
        for j in range(m0 - 1, -1, -1):
            t = self.m.preimage(self.symbols[j], t, guess=self._guess(j))
        self._cache[key] = t
        return t

    def endpoint(self, n: int, side: str, bits: int | None = None) -> CertifiedValue:
        """Domain endpoint of Î^(n) on ``side`` at the given precision."""
        if self.is_degenerate(n, side):
            return self.base_value(bits or self.dyn.cfg.initial_bits)
        return self._pullback(self.source(n, side), bits or self.dyn.cfg.initial_bits)

    def side_length(self, n: int, side: str, rel: float = REL_TOL) -> CertifiedValue:
        """|Î^(n)_side| (distance from x to the side's endpoint) with relative accuracy ``rel``."""
        if self.is_degenerate(n, side):
            return CertifiedValue.from_rational(0, self.dyn.cfg.initial_bits)
        src = self.source(n, side)
        key = ("len", src, side, rel)
        if key in self._cache:
            return self._cache[key]
        cfg = self.dyn.cfg
        bits = max(self._cache.get("bits", cfg.initial_bits), cfg.initial_bits)
        while True:
            try:
                e = self._pullback(src, bits)
                x = self.base_value(bits)
                length = (x - e) if side == LEFT else (e - x)
                if e.exact is not None and x.exact is not None:
                    length = CertifiedValue.from_rational(abs(x.exact - e.exact), bits)
                if length.exact is not None or (length.lo > 0 and float(length.width()) <= rel * float(length.lo)):
                    self._cache["bits"] = bits
                    self.dyn.ledger.note_bits(bits)
                    self._cache[key] = length
                    return length
            except PrecisionExhausted:
                pass
            nb = cfg.next_bits(bits)
            if nb is None:
                raise PrecisionExhausted(f"length of depth-{n} {side} cylinder not resolved", bits=bits, reached=n)
            bits = nb

    def length(self, n: int, rel: float = REL_TOL) -> CertifiedValue:
        return self.side_length(n, LEFT, rel) + self.side_length(n, RIGHT, rel)

    def interval(self, n: int, rel: float = REL_TOL) -> tuple[CertifiedValue, CertifiedValue]:
        """(left endpoint, right endpoint) enclosures of Î^(n) at a precision meeting ``rel``."""
        for side in (LEFT, RIGHT):
            self.side_length(n, side, rel)
        bits = self._cache.get("bits", self.dyn.cfg.initial_bits)
        return self.endpoint(n, LEFT, bits), self.endpoint(n, RIGHT, bits)

    def image_point(self, n: int, side: str) -> CertifiedValue | None:
        """E = f^n(endpoint of Î^(n)_side) from the orbit tables."""
        src = self.source(n, side)
        if self.is_degenerate(n, side):
            return self.orbit_point(n)
        if src[0] == "bound":
            return self.dyn.boundary_orbit(src[1]).point(n)
        return self.dyn.critical_orbit(src[1]).point(n - src[2])

    def image_length(self, n: int, side: str) -> CertifiedValue:
        """|f^n(Î^(n)_side)| = |E - x^n|."""
        e, x = self.image_point(n, side), self.orbit_point(n)
        if e.exact is not None and x.exact is not None:
            return CertifiedValue.from_rational(abs(e.exact - x.exact), max(e.prec, x.prec))
        prec = max(e.prec, x.prec)
        return abs(e.at(prec) - x.at(prec)) if e.exact is None and x.exact is None else abs(e - x)

    def partition_elements(self, side: str, times: ShadowingTimes) -> list[PartitionElement]:
        out = []
        for n in times.side(side):
            outer = self.source(n - 1, side)
            inner = self.source(n, side)
            out.append(PartitionElement(n, side, outer, inner))
        return out


# -- construction ---------------------------------------------------------------------


def _symbol_stream(m: MapSpec, dyn: Dynamics, base, depth: int):
    """(codes of x^0..x^depth, reason) for the base point; hit codes end the stream."""
    kind = base[0]
    if kind == "point":
        orb = dyn.point_orbit(base[1])
        orb.ensure(depth + 1)
        return list(orb.codes[: depth + 1]), orb.reason
    orb = dyn.critical_orbit(base[1])
    if kind == "crit":
        orb.ensure(depth + 1)
        side = base[2] if len(base) > 2 else LEFT
        first = base[1] if side == LEFT else base[1] + 1
        codes = [first] + list(orb.codes[1: depth + 1])
        return codes, orb.reason
    orb.ensure(depth + 2)
    return list(orb.codes[1: depth + 2]), orb.reason


def refine_cylinder(m: MapSpec, x, depth: int, dyn: Dynamics | None = None, strict: bool = False):
    """Build Î^(n)(x) for n <= depth and the shadowing times N-, N+.

    ``x`` is a rational, a CertifiedValue, ``("crit", i, "left"|"right")`` for the
    one-sided cylinders at a critical point, or ``("cval", i)`` for the critical value c_i^1.
    The chain is truncated (``chain.truncation``) if the orbit lands on C or
    precision runs out; ``strict=True`` raises instead.
    """
    dyn = dyn if dyn is not None else Dynamics(m)
    base = _base_descriptor(x)
    codes, reason = _symbol_stream(m, dyn, base, depth)
    sources = {LEFT: [(0, ("bound", 0))], RIGHT: [(0, ("bound", 1))]}
    current = {LEFT: ("bound", 0), RIGHT: ("bound", 1)}
    events: list = []
    symbols: list = []
    truncation = None
    last = -1
    for n in range(depth + 1):
        if n >= len(codes):
            truncation = reason or "precision_exhausted"
            break
        a = codes[n]
        if a < 0:
            truncation = "hit_critical"
            if strict:
                raise TruncatedByCriticalHit(n)
            break
        amask = 1 << a
        new = {}
        bad = False
        for side in (LEFT, RIGHT):
            src = current[side]
            code = _source_code(dyn, src, n)
            if code is None:
                bad = True
                break
            cm = code_mask(code)
            if cm & amask:
                continue
            below = (cm & ((1 << a) - 1)) != 0
            l = a - 1 if below else a
            new[side] = ("crit", l, n)
        if bad:
            truncation = "precision_exhausted"
            break
        for side, src in new.items():
            current[side] = src
            sources[side].append((n, src))
            events.append((n, side))
        symbols.append(a)
        last = n
    if truncation is None and last == depth:
        truncation = None
    if strict and truncation == "precision_exhausted":
        raise PrecisionExhausted(f"cylinder chain truncated at depth {last}", bits=dyn.cfg.max_bits, reached=last)
    if truncation is not None:
        dyn.ledger.note_truncation(f"chain_{truncation}")
    chain = CylinderChain(m, base, symbols, sources, events, last, truncation, dyn)
    times = ShadowingTimes(
        tuple(n for n, s in events if s == LEFT and n >= 1),
        tuple(n for n, s in events if s == RIGHT and n >= 1),
        last,
    )
    return chain, times


def _source_code(dyn: Dynamics, src, n: int) -> int | None:
    if src[0] == "bound":
        orb = dyn.boundary_orbit(src[1])
        j = n
    else:
        orb = dyn.critical_orbit(src[1])
        j = n - src[2]
    code = orb.code(j)
    if code is None or code == UNCERTAIN:
        return None
    return code


# -- float64 oracle ---------------------------------------------------------------------


def oracle_cylinder(m: MapSpec, x, depth: int, grid: int = 100_000) -> tuple[float, float]:
    """Brute-force hull of grid points sharing x's first depth+1 symbols (float64, independent path).

    Grid points whose orbit comes within the accumulated float error of a
    critical point are dropped rather than guessed.
    """
    if grid < 1000:
        raise ValueError("grid must be >= 1000")
    xs = (np.arange(grid, dtype=float) + 0.5) / grid
    x0 = float(to_rational(x)) if not isinstance(x, CertifiedValue) else float(x)
    pts = np.concatenate([[x0], xs])
    crit = m.float_critical()
    step = m.float_step_error()
    slope = max(m.max_slope(), 1.0)
    err = 0.0
    keep = np.ones(len(pts), dtype=bool)
    cur = pts.copy()
    syms = []
    for _j in range(depth + 1):
        dist = np.min(np.abs(cur[:, None] - crit[None, :]), axis=1)
        keep &= dist > 4 * err + 1e-300
        syms.append(np.searchsorted(crit, cur))
        cur = np.clip(m.float_image(cur), 0.0, 1.0)
        err = err * slope + step
    sym = np.stack(syms, axis=1)
    if not keep[0]:
        raise MdynError("oracle cannot certify the itinerary of the base point at float64")
    same = keep[1:] & np.all(sym[1:] == sym[0], axis=1)
    if not same.any():
        return x0, x0
    sel = xs[same]
    return float(sel.min()), float(sel.max())


# -- structural identities -----------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    checked: int = 0
    passed: int = 0
    skipped: int = 0
    failures: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.passed == self.checked and not self.failures

    def record(self, ok: bool, info=None):
        self.checked += 1
        if ok:
            self.passed += 1
        elif len(self.failures) < 50:
            self.failures.append(info)

    def to_json(self) -> dict:
        return {"checked": self.checked, "details": self.details, "failures": [str(f) for f in self.failures],
                "name": self.name, "ok": self.ok, "passed": self.passed, "skipped": self.skipped}


def verify_monotone(m: MapSpec, chain: CylinderChain, times: ShadowingTimes, samples: int = 6,
                    max_depth: int = 64) -> CheckReport:
    """For consecutive n_i < n_{i+1} on each side: f^{n_{i+1}} is monotone on Î^(n_i)_side.

    Audits the endpoint provenance (f^m(e) encloses c_l) and checks that interior
    sample points keep x's symbols through n_{i+1} - 1 with a constant, certified
    sign of the derivative product.
    """
    rep = CheckReport("monotone")
    dyn = chain.dyn
    for side in (LEFT, RIGHT):
        seq = [n for n in times.side(side) if n <= max_depth]
        for n0, n1 in zip(seq, seq[1:]):
            if chain.is_boundary(n0, side) or chain.is_degenerate(n0, side):
                rep.skipped += 1
                continue
            try:
                ok, why = _monotone_pair(m, chain, dyn, n0, n1, side, samples)
            except PrecisionExhausted:
                rep.skipped += 1
                continue
            rep.record(ok, (side, n0, n1, why))
    return rep


def _audit_endpoint(m: MapSpec, e: CertifiedValue, src) -> bool:
    _, l, m0 = src
    v = e
    for _ in range(m0):
        v = m.image(v)
    return v.overlaps(m.critical_enclosures(v.prec)[l])


def _monotone_pair(m, chain, dyn, n0, n1, side, samples):
    chain.side_length(n0, side)  # settles the working precision
    bits = chain._cache.get("bits", dyn.cfg.initial_bits)
    e = chain.endpoint(n0, side, bits)
    if not _audit_endpoint(m, e, chain.source(n0, side)):
        return False, "endpoint provenance"
    xb = chain.base_value(bits)
    xq = to_rational(xb.mid()) if xb.exact is None else to_rational(xb.exact)
    eq = to_rational(e.mid()) if e.exact is None else to_rational(e.exact)
    signs = set()
    for k in range(1, samples + 1):
        y = xq + (eq - xq) * k / (samples + 1)
        orb = Orbit(m, lambda b, y=y: CertifiedValue.from_rational(y, b), dyn.cfg, False, dyn.ledger)
        orb.ensure(n1)
        if len(orb.codes) < n1:
            return False, f"sample {k} left the branch structure"
        if any(orb.codes[j] != chain.symbols[j] for j in range(n1)):
            return False, f"sample {k} separates before {n1}"
        sign = 1
        for j in range(n1):
            d = m.derivative(orb.points[j]) if m.kind != "folded_linear" else None
            s = m.orientation(orb.codes[j]) if d is None else d.sign()
            if s is None or s == 0:
                return False, f"derivative sign undecided at sample {k}"
            sign *= s
        signs.add(sign)
    return len(signs) == 1, "derivative sign changes" if len(signs) > 1 else ""


def verify_distance_sandwich(m: MapSpec, x, samples: int = 1000, depth: int = 200, seed: int = 0,
                             chain: CylinderChain | None = None, dyn: Dynamics | None = None,
                             max_bits_log: int = 48) -> CheckReport:
    """|Î^(s-1)_side| >= |y - x| >= |Î^(s)_side| for sampled y, s = s(y, x)."""
    dyn = dyn if dyn is not None else (chain.dyn if chain is not None else Dynamics(m))
    if chain is None:
        chain, _ = refine_cylinder(m, x, depth, dyn=dyn)
    rep = CheckReport("distance")
    rng = np.random.default_rng(seed)
    x_exact = chain._base_exact()
    bits0 = dyn.cfg.initial_bits
    xv = chain.base_value(bits0)
    xq = to_rational(x_exact) if x_exact is not None else to_rational(xv.mid())
    sides = [s for s in (LEFT, RIGHT) if not chain.is_degenerate(1, s) and not chain.is_boundary(1, s)]
    if not sides:
        rep.details["reason"] = "no usable side at depth 1"
        return rep
    lengths1 = {s: chain.side_length(1, s) for s in sides}
    for k in range(samples):
        side = sides[k % len(sides)]
        L1 = to_rational(lengths1[side].lo)
        u = Fraction(float(rng.uniform(0.02, 0.98)))
        if k % 2:
            u = u / 2 ** int(rng.integers(1, max_bits_log))
        d = L1 * u
        y = xq - d if side == LEFT else xq + d
        if not (0 <= y <= 1):
            rep.skipped += 1
            continue
        orb = Orbit(m, lambda b, y=y: CertifiedValue.from_rational(y, b), dyn.cfg, False, dyn.ledger)
        s = _first_separation(orb, chain)
        if s is None or s < 1:
            rep.skipped += 1
            continue
        if chain.is_boundary(s, side) or chain.is_degenerate(s, side):
            rep.skipped += 1
            continue
        try:
            upper = chain.side_length(s - 1, side)
            lower = chain.side_length(s, side)
        except PrecisionExhausted:
            rep.skipped += 1
            continue
        dist = CertifiedValue.from_rational(abs(y - (to_rational(x_exact) if x_exact is not None else xq)),
                                            max(upper.prec, lower.prec))
        if x_exact is None:
            dist = abs(CertifiedValue.from_rational(y, upper.prec) - chain.base_value(upper.prec))
        ok = upper.hi >= dist.lo and dist.hi >= lower.lo
        rep.record(ok, (side, float(y), s))
    return rep


def _first_separation(orb: Orbit, chain: CylinderChain, step: int = 64) -> int | None:
    """Least j where y's certified symbol leaves the chain's itinerary; None on a hit or no split.

    The orbit is extended in doubling chunks, so a sample that separates early
    never pays for the full chain depth.
    """
    limit = chain.depth + 1
    j, n = 0, min(step, limit)
    while True:
        orb.ensure(n)
        while j < min(len(orb.codes), limit):
            c = orb.codes[j]
            if c < 0:
                return None
            if c != chain.symbols[j]:
                return j
            j += 1
        if len(orb.codes) < n or n >= limit:
            return None
        n = min(2 * n, limit)


def verify_septime(m: MapSpec, chain: CylinderChain, times: ShadowingTimes, calib: Calibration,
                   table: SeparationTable | None = None) -> CheckReport:
    """s(x^{n_i}) = n_{i+1} - n_i for consecutive shadowing times with gap >= N0."""
    rep = CheckReport("septime")
    dyn = chain.dyn
    table = table or SeparationTable(dyn, chain.depth + 1 + 512)
    xm = _base_masks(chain, table)
    for side in (LEFT, RIGHT):
        for n0, n1 in times.gaps(side):
            if n1 - n0 < calib.N0:
                continue
            if chain.is_boundary(n0, side):
                rep.skipped += 1
                continue
            value, det = table.s_masks(xm[n0:])
            if not det:
                rep.skipped += 1
                continue
            rep.record(value == n1 - n0, (side, n0, n1, value))
    return rep


def _base_masks(chain: CylinderChain, table: SeparationTable) -> np.ndarray:
    kind = chain.base[0]
    if kind == "point":
        return table.orbit_masks(chain.dyn.point_orbit(chain.base[1]))
    crit = table.critical_masks(chain.base[1])
    if kind == "cval":
        return crit[1:]
    side = chain.base[2] if len(chain.base) > 2 else LEFT
    first = chain.base[1] if side == LEFT else chain.base[1] + 1
    return np.concatenate([[1 << first], crit[1:]])


# -- dumps ------------------------------------------------------------------------------------


def chain_csv(chain: CylinderChain, max_depth: int | None = None) -> str:
    """depth,left,right,cut_side,provenance_iterate,provenance_critical_index."""
    buf = io.StringIO()
    buf.write("depth,left,right,cut_side,provenance_iterate,provenance_critical_index\n")
    cuts = {}
    for n, s in chain.events:
        cuts.setdefault(n, set()).add(s)
    top = chain.depth if max_depth is None else min(chain.depth, max_depth)
    for n in range(top + 1):
        try:
            lo, hi = chain.interval(n)
            left, right = lo.tag(), hi.tag()
        except PrecisionExhausted:
            left = right = "unresolved"
        s = cuts.get(n, set())
        cut = "both" if len(s) == 2 else (next(iter(s)) if s else "")
        its, crs = [], []
        for side in (LEFT, RIGHT):
            p = chain.provenance(n, side)
            if p[0] == "critical":
                its.append(str(p[2]))
                crs.append(str(p[1]))
            else:
                its.append("")
                crs.append(p[0] if p[0] == "base" else "boundary")
        buf.write(f"{n},{left},{right},{cut},{';'.join(its)},{';'.join(crs)}\n")
    return buf.getvalue()

