"""Batch front-end: ``mdyn analyze|conjugacy|oracle|calibrate``.

Exit codes: 0 ok, 1 usage / I-O / configuration error, 2 a check failed.
Outputs are deterministic: identical arguments give byte-identical files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from . import __version__
from .conditions import (
    DELTA_GRID,
    M_GRID,
    T_GRID,
    TAIL_CONVENTION,
    ValueChains,
    birkhoff_lyapunov,
    ce_series,
    fit_lemma_constants,
    gap_analysis,
    growth_lower_bound,
    shrink_ratios,
    sr_sum,
    tsr_from_kneading,
    tsr_sum,
)
from .conjugacy import (
    ce_side_by_side_csv,
    compare_combinatorics,
    load_pair,
    verify_conjugacy,
)
from .cylinders import (
    CheckReport,
    ShadowingTimes,
    chain_csv,
    oracle_cylinder,
    refine_cylinder,
    verify_distance_sandwich,
    verify_monotone,
    verify_septime,
)
from .errors import InsufficientHorizon, MdynError, PrecisionExhausted
from .interval import PrecisionConfig, rational_str, to_rational
from .maps import BUILTINS, MapSpec, load_map, map_to_json
from .orbits import Dynamics
from .report import Bundle, config_hash, tsv
from .symbolic import DEFAULT_MARGIN, SeparationTable, calibrate, kneading_sequences

log = logging.getLogger("mdyn")

ORACLE_POINTS = (Fraction(2, 7), Fraction(3, 11), Fraction(5, 13), Fraction(7, 17))


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    inputs: list
    horizon: int = 500
    delta_grid: list = field(default_factory=lambda: [rational_str(d) for d in DELTA_GRID])
    m_grid: list = field(default_factory=lambda: list(M_GRID))
    gap_T: list = field(default_factory=lambda: list(T_GRID))
    bits: int | None = None
    max_bits: int | None = None
    out: str = "mdyn-out"
    seed: int = 0
    seeds: int = 0
    birkhoff_horizon: int = 100_000
    growth_depth: int = 500
    chain_depth: int = 200
    branch_depth: int = 200
    depth: int = 12
    grid: int = 100_000
    samples: int = 1000
    corrupt: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("--horizon must be >= 1")
        if self.seeds < 0:
            raise ConfigError("--seeds must be >= 0")
        if any(t < 1 for t in self.gap_T):
            raise ConfigError("--gap-T values must be >= 1")

    def precision(self, m: MapSpec) -> PrecisionConfig:
        base = m.precision
        bits = self.bits or base.initial_bits
        max_bits = self.max_bits or max(base.max_bits, bits)
        try:
            return PrecisionConfig(initial_bits=bits, max_bits=max_bits)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> dict:
        return asdict(self)


# -- argument parsing ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _rational_list(text: str) -> list[str]:
    try:
        vals = [to_rational(p.strip()) for p in text.split(",") if p.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("grid values must be positive")
    return [rational_str(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mdyn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mdyn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--horizon", type=int, default=500)
        sp.add_argument("--bits", type=int, default=None, help="initial working precision")
        sp.add_argument("--max-bits", type=int, default=None, help="precision ceiling (MDYN_MAX_BITS overrides)")
        sp.add_argument("--out", default="mdyn-out")

    a = sub.add_parser("analyze", help="CE / SR / TSR series, gaps, contraction, lemma constants")
    a.add_argument("map", help="map JSON file or builtin name (" + ", ".join(sorted(BUILTINS)) + ")")
    common(a)
    a.add_argument("--delta-grid", type=_rational_list, default=None)
    a.add_argument("--m-grid", type=_int_list, default=None, help="e.g. 2..12 or 2,4,8")
    a.add_argument("--gap-T", type=_int_list, default=None)
    a.add_argument("--seeds", type=int, default=0, help="Birkhoff seeds (0 disables the estimate)")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--birkhoff-horizon", type=int, default=100_000)
    a.add_argument("--growth-depth", type=int, default=500)
    a.add_argument("--chain-depth", type=int, default=200)
    a.add_argument("--branch-depth", type=int, default=200)

    c = sub.add_parser("conjugacy", help="compare the combinatorics of a conjugate pair")
    c.add_argument("pair", help="pair JSON file")
    common(c)
    c.add_argument("--depth", type=int, default=None, help="cut-event depth (default: horizon)")
    c.add_argument("--grid", type=int, default=1000, help="conjugacy residual grid")
    c.add_argument("--m-grid", type=_int_list, default=None)

    o = sub.add_parser("oracle", help="cylinder oracle and structural identities")
    o.add_argument("map")
    common(o)
    o.add_argument("--depth", type=int, default=12)
    o.add_argument("--grid", type=int, default=100_000)
    o.add_argument("--samples", type=int, default=1000)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--corrupt", action="store_true", help="negative control: perturb the chains before checking")

    k = sub.add_parser("calibrate", help="delta0 and N0")
    k.add_argument("map")
    common(k)
    return p


def _config(ns) -> RunConfig:
    kw = {"command": ns.command, "inputs": [getattr(ns, "map", None) or ns.pair], "horizon": ns.horizon,
          "bits": ns.bits, "max_bits": ns.max_bits, "out": ns.out}
    for name in ("seed", "seeds", "birkhoff_horizon", "growth_depth", "chain_depth", "branch_depth", "grid",
                 "samples", "corrupt"):
        if getattr(ns, name, None) is not None:
            kw[name] = getattr(ns, name)
    if getattr(ns, "depth", None) is not None:
        kw["depth"] = ns.depth
    elif ns.command == "conjugacy":
        kw["depth"] = ns.horizon
    if getattr(ns, "delta_grid", None):
        kw["delta_grid"] = ns.delta_grid
    if getattr(ns, "m_grid", None):
        kw["m_grid"] = ns.m_grid
    if getattr(ns, "gap_T", None):
        kw["gap_T"] = ns.gap_T
    return RunConfig(**kw)


def _load(name: str) -> MapSpec:
    path = Path(name)
    if path.exists():
        return load_map(path)
    if name in BUILTINS:
        return BUILTINS[name]()
    raise ConfigError(f"no map file or builtin named {name!r}")


def _header(cfg: RunConfig, dyns) -> dict:
    precision = {}
    for label, d in dyns.items():
        precision[label] = d.ledger.to_json()
    conf = cfg.to_json()
    conf.pop("out")
    return {"command": cfg.command, "config": conf, "config_hash": config_hash(conf), "convention": TAIL_CONVENTION,
            "precision": precision, "seed": cfg.seed, "version": __version__}


# -- analyze ------------------------------------------------------------------------------------------


def _non_increasing(cols) -> bool:
    """At every n the values are non-increasing along the given column order."""
    for n in range(min((len(c) for c in cols), default=0)):
        vals = [c[n] for c in cols]
        if any(b > a + 1e-12 for a, b in zip(vals, vals[1:])):
            return False
    return True


def cmd_analyze(cfg: RunConfig) -> int:
    m = _load(cfg.inputs[0])
    dyn = Dynamics(m, cfg.precision(m))
    H = cfg.horizon
    reports, texts, checks, partial = {}, {}, {}, {}

    kd = kneading_sequences(m, H + 1 + DEFAULT_MARGIN, dyn)
    texts["kneading.txt"] = "".join(
        f"c{i}\t{side}\t{''.join(str(s) for s in seq.symbols)}\t{seq.certified_length}\n"
        for i in range(m.q) for side, seq in (("left", kd.left[i]), ("right", kd.right[i]))
    )
    chains = ValueChains(m, H, dyn)
    for i in range(m.q):
        texts[f"chain_c{i}.csv"] = chain_csv(chains.chain(i), min(H, cfg.chain_depth))

    ce = ce_series(m, H, dyn)
    reports["ce.json"] = ce
    texts["ce.csv"] = ce.csv()
    checks["ce_finite"] = all(s.truncation in (None, "hit_critical") or s.reached > 0 for s in ce.series)

    deltas = [to_rational(d) for d in cfg.delta_grid]
    sr = sr_sum(m, deltas, H, dyn)
    reports["sr.json"] = sr
    ordered = [rational_str(d) for d in sorted(deltas, reverse=True)]
    ok = True
    for i in range(m.q):
        texts[f"sr_c{i}.csv"] = sr.csv(i)
        ok = ok and _non_increasing([sr.series[(i, k)] for k in ordered])
    checks["sr_monotone_in_delta"] = ok

    tsr = tsr_sum(m, cfg.m_grid, H, dyn)
    reports["tsr.json"] = tsr
    ok = True
    for i in range(m.q):
        texts[f"tsr_c{i}.csv"] = tsr.csv(i)
        ok = ok and _non_increasing([tsr.sums[(i, lv)] for lv in sorted(cfg.m_grid)])
    checks["tsr_monotone_in_m"] = ok
    checks["tsr_valid"] = tsr.valid
    checks["tsr_symbolic_route"] = tsr_from_kneading(kd, cfg.m_grid, H).sums == tsr.sums

    table = SeparationTable(dyn, H + 1 + DEFAULT_MARGIN)
    gaps_out, shrink_out = {}, {}
    identity_ok = shrink_ok = True
    for T in cfg.gap_T:
        try:
            g = gap_analysis(m, T, H, dyn, chains, table)
        except InsufficientHorizon as exc:
            partial[f"gaps_T{T}"] = str(exc)
            continue
        gaps_out[str(T)] = g
        for sides in g.identity.values():
            for rec in sides.values():
                if rec["undetermined"] == 0:
                    identity_ok = identity_ok and rec["lhs"] == rec["rhs"]
        try:
            sh = shrink_ratios(m, T, H, dyn, chains, g)
        except PrecisionExhausted as exc:
            partial[f"shrink_T{T}"] = str(exc)
            continue
        shrink_out[str(T)] = sh
        shrink_ok = shrink_ok and (sh.all_below_one or not sh.ratios)
    reports["gaps.json"] = {"by_T": gaps_out}
    reports["shrink.json"] = {"by_T": shrink_out}
    checks["small_gap_identity"] = identity_ok
    checks["contraction_below_one"] = shrink_ok

    growth = growth_lower_bound(m, min(H, cfg.growth_depth), dyn, chains, ce)
    reports["growth.json"] = growth
    checks["minimum_principle"] = growth.ok

    main_T = "50" if "50" in shrink_out else (next(iter(shrink_out)) if shrink_out else None)
    lemma = fit_lemma_constants(m, H, dyn, chains, branch_depth=min(H, cfg.branch_depth),
                                shrink=shrink_out.get(main_T) if main_T else None, growth=growth)
    reports["lemma.json"] = lemma
    texts["kappa_scatter.tsv"] = lemma.scatter_tsv()
    checks["kappa_order"] = lemma.kappa_bar is None or lemma.kappa_lower <= lemma.kappa_bar

    if cfg.seeds:
        reports["birkhoff.json"] = birkhoff_lyapunov(m, cfg.seeds, cfg.birkhoff_horizon, seed=cfg.seed)

    series = {}
    for s in ce.series:
        series[f"lambda_c{s.critical_index}"] = list(enumerate(s.lambdas(), start=1))
    for key, vals in lemma.epsilon_series.items():
        series[f"gap_ratio_{key}"] = vals
    texts["plots.tsv"] = tsv(series)

    reports["map.json"] = map_to_json(m)
    return _finish(cfg, {"map": dyn}, reports, texts, checks, partial)


def _finish(cfg, dyns, reports, texts, checks, partial) -> int:
    bundle = Bundle(Path(cfg.out), _header(cfg, dyns))
    for name in sorted(reports):
        bundle.json(name, reports[name])
    for name in sorted(texts):
        bundle.text(name, texts[name])
    for name, why in sorted(partial.items()):
        bundle.flag_partial(name, why)
    failed = sorted(k for k, v in checks.items() if not v)
    bundle.finish({"checks": checks, "failed": failed})
    for k in sorted(checks):
        log.info("%-28s %s", k, "pass" if checks[k] else "FAIL")
    return 2 if failed else 0


# -- conjugacy --------------------------------------------------------------------------------------------


def cmd_conjugacy(cfg: RunConfig) -> int:
    path = Path(cfg.inputs[0])
    if not path.exists():
        raise ConfigError(f"no pair file {path}")
    pair = load_pair(path)
    residual = verify_conjugacy(pair, grid=cfg.grid)
    rep = compare_combinatorics(pair, cfg.horizon, depth=cfg.depth, m_grid=cfg.m_grid,
                                precision=cfg.precision(pair.f))
    reports = {"invariance.json": rep, "residual.json": residual, "pair.json": pair.to_json()}
    texts = {"ce_side_by_side.csv": ce_side_by_side_csv(rep)}
    checks = {"combinatorics_match": rep.combinatorics_match, "conjugacy_residual": residual.ok}
    return _finish(cfg, {}, reports, texts, checks, {})


# -- oracle -----------------------------------------------------------------------------------------------------


def _corrupt(times: ShadowingTimes) -> ShadowingTimes:
    """Shift every shadowing time after the first by one: gaps no longer match separation times."""
    def shift(seq):
        return tuple(seq[:1]) + tuple(n + 1 for n in seq[1:])

    return ShadowingTimes(shift(times.N_minus), shift(times.N_plus), times.depth)


def oracle_agreement(m: MapSpec, x, depth: int, grid: int, dyn: Dynamics) -> CheckReport:
    """refine_cylinder endpoints against the float64 brute-force hull, tolerance 2/grid."""
    rep = CheckReport("oracle")
    chain, _ = refine_cylinder(m, x, depth, dyn=dyn)
    tol = 2 / grid
    for n in range(min(depth, chain.depth) + 1):
        lo, hi = chain.interval(n)
        olo, ohi = oracle_cylinder(m, x, n, grid)
        ok = abs(float(lo) - olo) <= tol and abs(float(hi) - ohi) <= tol
        rep.record(ok, (rational_str(to_rational(x)), n, float(lo), olo, float(hi), ohi))
    return rep


def cmd_oracle(cfg: RunConfig) -> int:
    m = _load(cfg.inputs[0])
    dyn = Dynamics(m, cfg.precision(m))
    calib = calibrate(m, dyn=dyn)
    table = SeparationTable(dyn, cfg.horizon + 1 + DEFAULT_MARGIN)
    reports, checks = {}, {}
    oracle = [oracle_agreement(m, x, cfg.depth, cfg.grid, dyn) for x in ORACLE_POINTS]
    reports["oracle.json"] = {"points": oracle}
    checks["oracle"] = all(r.ok for r in oracle)

    septime, distance, monotone = [], [], []
    bases = [("cval", i) for i in range(m.q)] + list(ORACLE_POINTS)
    for k, base in enumerate(bases):
        chain, times = refine_cylinder(m, base, cfg.horizon, dyn=dyn)
        if cfg.corrupt:
            times = _corrupt(times)
        sep = verify_septime(m, chain, times, calib, table)
        sep.details["base"] = str(base)
        septime.append(sep)
        mono = verify_monotone(m, chain, times)
        mono.details["base"] = str(base)
        monotone.append(mono)
        dist = verify_distance_sandwich(m, base, cfg.samples, cfg.horizon, seed=cfg.seed + k, chain=chain, dyn=dyn)
        dist.details["base"] = str(base)
        distance.append(dist)
    reports["septime.json"] = {"N0": calib.N0, "checks": septime}
    reports["distance.json"] = {"checks": distance}
    reports["monotone.json"] = {"checks": monotone}
    checks["septime"] = all(r.ok for r in septime) and sum(r.checked for r in septime) > 0
    checks["distance"] = all(r.ok for r in distance)
    checks["monotone"] = all(r.ok for r in monotone)
    return _finish(cfg, {"map": dyn}, reports, {}, checks, {})


# -- calibrate ---------------------------------------------------------------------------------------------------


def cmd_calibrate(cfg: RunConfig) -> int:
    m = _load(cfg.inputs[0])
    dyn = Dynamics(m, cfg.precision(m))
    cal = calibrate(m, dyn=dyn)
    report = {"N0": cal.N0, "components": [list(c) for c in cal.components], "delta0": cal.delta0,
              "min_depth": cal.min_depth}
    return _finish(cfg, {"map": dyn}, {"calibration.json": report}, {}, {}, {})


COMMANDS = {"analyze": cmd_analyze, "conjugacy": cmd_conjugacy, "oracle": cmd_oracle, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(ns)
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"mdyn: error: {exc}", file=sys.stderr)
        return 1
    except MdynError as exc:
        print(f"mdyn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
