"""Certified forward orbits with lazy precision escalation.

An :class:`Orbit` records, for each iterate, a classification code from
:meth:`MapSpec.classify`: a symbol ``0..q``, or a hit code when the iterate is
provably a critical point.  When a code cannot be decided the whole orbit is
recomputed at a higher precision; the precision jump is sized from how far the
previous attempt got, so chaotic orbits reach long horizons in few restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .interval import CertifiedValue, PrecisionConfig, to_rational
from .maps import UNCERTAIN, MapSpec, hit_code, hit_index


@dataclass
class PrecisionLedger:
    """Maximum bits used and truncation counts, embedded in every report."""

    max_bits: int = 0
    escalations: int = 0
    truncations: dict = field(default_factory=dict)

    def note_bits(self, bits: int):
        self.max_bits = max(self.max_bits, bits)

    def note_truncation(self, reason: str):
        self.truncations[reason] = self.truncations.get(reason, 0) + 1

    def to_json(self) -> dict:
        return {"escalations": self.escalations, "max_bits": self.max_bits,
                "truncations": dict(sorted(self.truncations.items()))}


class Orbit:
    """Orbit of a seed; ``codes[j]`` classifies f^j(seed)."""

    def __init__(self, m: MapSpec, start, cfg: PrecisionConfig, through_hits: bool, ledger: PrecisionLedger,
                 first_code: int | None = None):
        self.m = m
        self.first_code = first_code
        self._start = start
        self.cfg = cfg
        self.through_hits = through_hits
        self.ledger = ledger
        self.codes: list[int] = []
        self.points: list[CertifiedValue] = []
        self.bits = cfg.initial_bits
        self.reason: str | None = None
        self.guess: int | None = None
        self._next: CertifiedValue | None = None

    def __len__(self):
        return len(self.codes)

    @property
    def hit(self) -> bool:
        return self.reason == "hit_critical"

    def _run(self, bits, n, codes, points, nxt):
        m = self.m
        v = nxt if nxt is not None else self._start(bits)
        while len(codes) < n:
            # a critical orbit starts on c_i even when c_i is only enclosed
            code = self.first_code if not codes and self.first_code is not None else m.classify(v)
            if code == UNCERTAIN:
                return v, "uncertain"
            codes.append(code)
            points.append(v)
            if code <= -2 and not self.through_hits:
                return None, "hit"
            v = m.image(v)
        return v, "done"

    def ensure(self, n: int) -> int:
        """Certify codes for indices < n where possible; returns the certified length."""
        if len(self.codes) >= n or self.reason is not None:
            return len(self.codes)
        nxt, status = self._run(self.bits, n, self.codes, self.points, self._next)
        while status == "uncertain":
            nb = self._escalated_bits(n)
            if nb is None:
                self.reason = "precision_exhausted"
                self.guess = _guess(self.m, nxt)
                self.ledger.note_truncation("precision_exhausted")
                break
            self.ledger.escalations += 1
            self.bits = nb
            self.codes, self.points = [], []
            nxt, status = self._run(nb, n, self.codes, self.points, None)
        if status == "hit":
            self.reason = "hit_critical"
            self.ledger.note_truncation("hit_critical")
        self._next = nxt if status == "done" else None
        self.ledger.note_bits(self.bits)
        return len(self.codes)

    def _escalated_bits(self, n: int) -> int | None:
        # bits grow roughly linearly with the certified length of a chaotic orbit
        target = self.bits * n / max(len(self.codes), 1) * 1.25
        nb = self.cfg.next_bits(self.bits)
        while nb is not None and nb < target and nb < self.cfg.max_bits:
            nb = self.cfg.next_bits(nb)
        return nb

    def code(self, j: int) -> int | None:
        self.ensure(j + 1)
        return self.codes[j] if j < len(self.codes) else None

    def point(self, j: int) -> CertifiedValue | None:
        self.ensure(j + 1)
        return self.points[j] if j < len(self.points) else None


def _guess(m: MapSpec, v: CertifiedValue | None) -> int | None:
    if v is None:
        return None
    mid = CertifiedValue.point(v.mid(), v.prec)
    code = m.classify(mid)
    if code >= 0:
        return code
    i = hit_index(code)
    return i if i is not None else None


class Dynamics:
    """Shared orbit tables for one map: critical orbits, boundary orbits and arbitrary seeds."""

    def __init__(self, m: MapSpec, cfg: PrecisionConfig | None = None):
        self.m = m
        self.cfg = (cfg or m.precision).with_env()
        self.ledger = PrecisionLedger()
        self._orbits: dict = {}

    def _orbit(self, key, start, through_hits, first_code=None) -> Orbit:
        orb = self._orbits.get(key)
        if orb is None:
            orb = Orbit(self.m, start, self.cfg, through_hits, self.ledger, first_code)
            self._orbits[key] = orb
        return orb

    def critical_orbit(self, i: int) -> Orbit:
        """Orbit of c_i itself (index 0 is the hit at c_i); continues through critical hits."""
        m = self.m
        return self._orbit(("crit", i), lambda bits: m.critical_enclosures(bits)[i], True, hit_code(i))

    def boundary_orbit(self, b: int) -> Orbit:
        return self._orbit(("bound", b), lambda bits: CertifiedValue.from_rational(b, bits), True)

    def point_orbit(self, x) -> Orbit:
        """Orbit of an exact rational (or a fixed enclosure); stops at a critical hit."""
        if isinstance(x, CertifiedValue):
            if x.exact is not None:
                q = x.exact
                return self._orbit(("point", q), lambda bits: CertifiedValue.from_rational(q, bits), False)
            return Orbit(self.m, lambda bits: x, self.cfg, False, self.ledger)
        q = to_rational(x)
        return self._orbit(("point", q), lambda bits: CertifiedValue.from_rational(q, bits), False)

    def seed_orbit(self, seed) -> Orbit:
        kind = seed[0]
        if kind == "crit":
            return self.critical_orbit(seed[1])
        if kind == "bound":
            return self.boundary_orbit(seed[1])
        return self.point_orbit(seed[1])
