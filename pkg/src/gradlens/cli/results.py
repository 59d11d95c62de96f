"""Versioned CSV result files (RFC 4180 quoting, LF line endings)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields

from ..errors import ParseError

SCHEMA = "gradlens-results v1"

_FIELDS = (
    "attack", "suite", "batch_size", "neurons", "seed", "trial", "user",
    "psnr", "min", "q1", "median", "q3", "max", "mean", "mean_residual", "recovered",
)


@dataclass(frozen=True)
class ResultRow:
    attack: str
    suite: str
    batch_size: int
    neurons: int
    seed: int
    trial: int
    user: int
    psnr: tuple[float, ...]
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    mean_residual: float
    recovered: int

    def key(self):
        return (self.attack, self.suite, self.batch_size, self.neurons, self.seed, self.trial, self.user)

    def to_record(self) -> list[str]:
        out = []
        for name in _FIELDS:
            value = getattr(self, name)
            out.append(";".join(repr(float(v)) for v in value) if name == "psnr" else repr(value) if isinstance(value, float) else str(value))
        return out

    @classmethod
    def from_record(cls, rec: dict[str, str]) -> "ResultRow":
        kw = {}
        for f in fields(cls):
            raw = rec[f.name]
            if f.name == "psnr":
                kw[f.name] = tuple(float(v) for v in raw.split(";")) if raw else ()
            elif f.type in ("int",):
                kw[f.name] = int(raw)
            elif f.type in ("float",):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        return cls(**kw)


def write_rows(rows, schema: str = SCHEMA) -> str:
    buf = io.StringIO()
    buf.write(f"# {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_FIELDS)
    for row in sorted(rows, key=ResultRow.key):
        w.writerow(row.to_record())
    return buf.getvalue()


def read_rows(text: str) -> list[ResultRow]:
    lines = text.split("\n", 1)
    if not lines[0].startswith("# gradlens-results"):
        raise ParseError("missing schema header line", line=1)
    if lines[0] != f"# {SCHEMA}":
        raise ParseError(f"unsupported schema {lines[0][2:]!r}", line=1)
    reader = csv.DictReader(io.StringIO(lines[1] if len(lines) > 1 else ""))
    return [ResultRow.from_record(rec) for rec in reader]


def write_table(header, rows) -> str:
    """Plain CSV for small derived tables (PSNR matrix, utility accuracies)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
