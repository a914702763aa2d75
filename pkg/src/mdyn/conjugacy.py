"""Conjugate map pairs: the relation h o f = g o h, and which data it preserves.

Combinatorial data (kneading sequences, cut events, shadowing times, TSR
matrices) must coincide exactly across a pair.  Metric data such as the CE
exponent is reported side by side and is expected to differ.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .conditions import M_GRID, ce_series, tail_stats, tsr_sum
from .cylinders import refine_cylinder
from .errors import MapDefinitionError, NotInvertible
from .homeo import HomeoSpec
from .interval import CertifiedValue, PrecisionConfig
from .maps import MapSpec, load_map, map_from_json, map_to_json
from .orbits import Dynamics
from .symbolic import kneading_sequences


@dataclass(frozen=True)
class ConjugacyPair:
    """g = h o f o h^-1 for an increasing homeomorphism h."""

    f: MapSpec
    g: MapSpec
    h: HomeoSpec
    name: str = ""

    def to_json(self) -> dict:
        g = "pushforward" if self.g.kind == "pushforward" and self.g.base is self.f else map_to_json(self.g)
        return {"f": map_to_json(self.f), "g": g, "h": self.h.to_json(), "name": self.name}


@dataclass
class InvarianceReport:
    kneading_match: dict
    shadowing_match: dict
    tsr_delta: float
    ce_exponents: dict
    separation_match: bool = True
    tsr_undetermined: tuple = (0, 0)
    details: dict = field(default_factory=dict)

    @property
    def combinatorics_match(self) -> bool:
        return (all(v["match"] for v in self.kneading_match.values())
                and all(v["match"] for v in self.shadowing_match.values())
                and self.separation_match and self.tsr_delta == 0)

    @property
    def kneading_only(self) -> bool:
        """Weaker flag: equal kneading data, regardless of h."""
        return all(v["match"] for v in self.kneading_match.values())

    def to_json(self) -> dict:
        return {
            "ce_exponents": self.ce_exponents,
            "combinatorics_match": self.combinatorics_match,
            "details": self.details,
            "kneading_match": {str(k): v for k, v in sorted(self.kneading_match.items())},
            "kneading_only": self.kneading_only,
            "separation_match": self.separation_match,
            "shadowing_match": {str(k): v for k, v in sorted(self.shadowing_match.items())},
            "tsr_delta": self.tsr_delta,
            "tsr_undetermined": list(self.tsr_undetermined),
        }


def _check_homeo(h: HomeoSpec, bits: int = 128) -> None:
    for x in (0, 1):
        y = h(CertifiedValue.from_rational(x, bits))
        if not y.contains(x):
            raise NotInvertible(f"h({x}) != {x}")
    # increasing on a coarse grid; the supported forms are monotone by construction
    prev = None
    for k in range(17):
        y = h(CertifiedValue.from_rational(Fraction(k, 16), bits))
        if prev is not None and not (y.hi > prev.lo):
            raise NotInvertible("h is not increasing")
        prev = y


def push_forward(f: MapSpec, h: HomeoSpec, name: str = "") -> MapSpec:
    """g(y) = h(f(h^-1(y))); critical points h(c_i) keep their order."""
    _check_homeo(h)
    return MapSpec.pushforward(f, h, name=name)


def _grid(grid: int):
    if grid < 100:
        raise ValueError("grid must be >= 100")
    return [Fraction(k, grid) for k in range(grid + 1)]


def _gap(a: CertifiedValue, b: CertifiedValue) -> float:
    return max(0.0, float(a.lo - b.hi), float(b.lo - a.hi))


@dataclass
class ResidualReport:
    grid: int
    bits: int
    max_gap: float
    max_width: float
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {"bits": self.bits, "failures": [str(x) for x in self.failures[:20]],
                "failure_count": len(self.failures), "grid": self.grid, "max_gap": self.max_gap,
                "max_width": self.max_width, "ok": self.ok}


def verify_conjugacy(pair: ConjugacyPair, grid: int = 1000, bits: int = 128) -> ResidualReport:
    """Compare enclosures of h(f(x)) and g(h(x)); pass iff they overlap at every grid point."""
    max_gap = max_width = 0.0
    failures = []
    for x in _grid(grid):
        v = CertifiedValue.from_rational(x, bits)
        a = pair.h(pair.f.image(v))
        b = pair.g.image(pair.h(v))
        max_width = max(max_width, float(a.width()), float(b.width()))
        gap = _gap(a, b)
        max_gap = max(max_gap, gap)
        if gap > 0:
            failures.append(x)
    return ResidualReport(grid, bits, max_gap, max_width, failures)


def verify_roundtrip(f: MapSpec, h: HomeoSpec, grid: int = 200, bits: int = 128) -> ResidualReport:
    """Pushing forward by h and then by h^-1 gives back f on the grid."""
    back = push_forward(push_forward(f, h), h.inverse())
    max_gap = max_width = 0.0
    failures = []
    for x in _grid(grid):
        v = CertifiedValue.from_rational(x, bits)
        a, b = f.image(v), back.image(v)
        max_width = max(max_width, float(a.width()), float(b.width()))
        gap = _gap(a, b)
        max_gap = max(max_gap, gap)
        if gap > 0:
            failures.append(x)
    return ResidualReport(grid, bits, max_gap, max_width, failures)


# -- combinatorial comparison ---------------------------------------------------------------


def _compare_seqs(a, b) -> dict:
    n = min(a.certified_length, b.certified_length)
    first = next((k for k in range(n) if a.symbols[k] != b.symbols[k]), None)
    return {"compared": n, "first_difference": first, "match": first is None}


def _ce_summary(rep) -> list:
    out = []
    for s in rep.series:
        lam = s.lambdas()
        stats = tail_stats(lam)
        out.append({"reached": s.reached, "tail_mean": stats["mean"], "tail_min": stats["liminf"],
                    "positive": bool(s.logs) and stats["liminf"] is not None and stats["liminf"] > 0})
    return out


def compare_combinatorics(pair: ConjugacyPair, horizon: int, kneading_length: int | None = None,
                          depth: int | None = None, m_grid=M_GRID,
                          precision: PrecisionConfig | None = None) -> InvarianceReport:
    """Kneading symbol for symbol, cut events and N+/- per critical value, TSR matrices, CE side by side."""
    kneading_length = kneading_length or horizon
    depth = depth or horizon
    df, dg = Dynamics(pair.f, precision), Dynamics(pair.g, precision)
    if pair.f.q != pair.g.q:
        # different critical counts cannot be conjugate; report the failure rather than raise
        cf_rep, cg_rep = ce_series(pair.f, horizon, df), ce_series(pair.g, horizon, dg)
        rep = InvarianceReport({"critical_count": {"compared": 0, "f": pair.f.q, "g": pair.g.q, "match": False}},
                               {}, math.inf, {"f": _ce_summary(cf_rep), "g": _ce_summary(cg_rep)}, False,
                               details={"depth": depth, "horizon": horizon, "kneading_length": kneading_length})
        rep.ce_reports = (cf_rep, cg_rep)
        return rep

    kf, kg = kneading_sequences(pair.f, kneading_length, df), kneading_sequences(pair.g, kneading_length, dg)
    kneading = {}
    for i in range(pair.f.q):
        left = _compare_seqs(kf.left[i], kg.left[i])
        right = _compare_seqs(kf.right[i], kg.right[i])
        kneading[i] = {"compared": min(left["compared"], right["compared"]), "left": left,
                       "match": left["match"] and right["match"], "right": right}

    shadowing = {}
    for i in range(pair.f.q):
        cf, tf = refine_cylinder(pair.f, ("cval", i), depth, dyn=df)
        cg, tg = refine_cylinder(pair.g, ("cval", i), depth, dyn=dg)
        d = min(cf.depth, cg.depth)
        ef = [e for e in cf.cut_events() if e[0] <= d]
        eg = [e for e in cg.cut_events() if e[0] <= d]
        nf = [[n for n in tf.side(s) if n <= d] for s in ("left", "right")]
        ng = [[n for n in tg.side(s) if n <= d] for s in ("left", "right")]
        shadowing[i] = {"cut_events": len(ef), "depth": d, "match": ef == eg and nf == ng,
                        "N_minus": nf[0] == ng[0], "N_plus": nf[1] == ng[1]}

    tf_rep, tg_rep = tsr_sum(pair.f, m_grid, horizon, df), tsr_sum(pair.g, m_grid, horizon, dg)
    delta = Fraction(0)
    for key, sums in tf_rep.sums.items():
        other = tg_rep.sums[key]
        for n, (a, b) in enumerate(zip(sums, other), start=1):
            if a != b:
                delta = max(delta, Fraction(abs(a - b), n))
    separation = tf_rep.s_values == tg_rep.s_values

    cf_rep, cg_rep = ce_series(pair.f, horizon, df), ce_series(pair.g, horizon, dg)
    ce = {"f": _ce_summary(cf_rep), "g": _ce_summary(cg_rep)}
    ce["differ"] = [a["tail_mean"] != b["tail_mean"] for a, b in zip(ce["f"], ce["g"])]
    ce["positivity_agrees"] = [a["positive"] == b["positive"] for a, b in zip(ce["f"], ce["g"])]

    details = {"depth": depth, "horizon": horizon, "kneading_length": kneading_length,
               "precision": {"f": df.ledger.to_json(), "g": dg.ledger.to_json()}}
    rep = InvarianceReport(kneading, shadowing, float(delta), ce, separation,
                           (sum(tf_rep.undetermined.values()), sum(tg_rep.undetermined.values())), details)
    rep.ce_reports = (cf_rep, cg_rep)
    return rep


def ce_side_by_side_csv(rep: InvarianceReport) -> str:
    cf, cg = rep.ce_reports
    header = ["n"]
    cols = []
    for label, r in (("f", cf), ("g", cg)):
        for s in r.series:
            header.append(f"lambda_{label}_c{s.critical_index}")
            cols.append(s)
    n_max = max((s.reached for s in cols), default=0)
    rows = [",".join(header)]
    for n in range(1, n_max + 1):
        rows.append(str(n) + "," + ",".join(s.lambda_enclosure(n).tag() if n <= s.reached else "" for s in cols))
    return "\n".join(rows) + "\n"


# -- pair files ----------------------------------------------------------------------------------


def _load_side(obj, base_dir: Path) -> MapSpec:
    if isinstance(obj, str):
        return load_map(base_dir / obj)
    return map_from_json(obj, base_dir)


def pair_from_json(obj: dict, base_dir: Path | None = None) -> ConjugacyPair:
    base_dir = base_dir or Path(".")
    try:
        f = _load_side(obj["f"], base_dir)
        h = HomeoSpec.from_json(obj["h"])
        g_obj = obj.get("g", "pushforward")
    except KeyError as exc:
        raise MapDefinitionError(f"pair definition lacks {exc}") from None
    g = push_forward(f, h) if g_obj == "pushforward" else _load_side(g_obj, base_dir)
    return ConjugacyPair(f, g, h, obj.get("name", ""))


def load_pair(path) -> ConjugacyPair:
    path = Path(path)
    with path.open() as fh:
        return pair_from_json(json.load(fh), path.parent)
