"""Deterministic report serialization: sorted JSON, exact rationals, config hashes, manifests."""

from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .interval import CertifiedValue, rational_str


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, Fraction):
        return rational_str(obj)
    if isinstance(obj, CertifiedValue):
        return obj.tag()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_json"):
        return to_jsonable(obj.to_json())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps(config).encode()).hexdigest()


def tagged(v: CertifiedValue | float | None, bits: int | None = None) -> str:
    """CSV cell: decimal value with its precision tag, ``value@bits``."""
    if v is None:
        return ""
    if isinstance(v, CertifiedValue):
        return f"{float(v)!r}@{v.prec}"
    return f"{float(v)!r}@{bits}" if bits is not None else repr(float(v))


def tsv(columns: dict) -> str:
    """Two-column plot data for every series, one block per key, blank line between blocks."""
    blocks = []
    for key in sorted(columns):
        rows = [f"# {key}"] + [f"{x!r}\t{y!r}" for x, y in columns[key]]
        blocks.append("\n".join(rows))
    return "\n\n".join(blocks) + "\n"


class Bundle:
    """An output directory plus a manifest of everything written into it."""

    def __init__(self, out: Path, header: dict):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.header = header
        self.files: dict = {}
        self.partial: dict = {}

    def _write(self, name: str, text: str):
        path = self.out / name
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def json(self, name: str, report):
        body = dict(to_jsonable(report))
        body["header"] = self.header
        self._write(name, dumps(body))

    def text(self, name: str, text: str):
        self._write(name, text)

    def flag_partial(self, name: str, reason: str):
        self.partial[name] = reason

    def finish(self, status: dict) -> Path:
        manifest = {"files": self.files, "header": self.header, "partial": self.partial, "status": status}
        self._write("manifest.json", dumps(manifest))
        return self.out / "manifest.json"
