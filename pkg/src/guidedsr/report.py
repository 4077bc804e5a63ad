"""Experiment result rows and their on-disk forms.

A row is one (image, sampling cell) measurement. The CSV is the primary
artifact with a fixed column set; a JSON mirror adds per-group
aggregates. Rows whose metrics are NaN mark per-image sampling failures:
they stay in the files but are excluded from aggregates. Loading the
JSON recomputes the aggregates from the rows and refuses mismatches.

Float formatting uses repr, so equal runs produce byte-identical files
apart from the wall-time column.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError

CSV_HEADER = "id,mode,alpha,perturb,psnr_db,ssim,seed,ms"


@dataclass
class RowResult:
    id: int
    mode: str
    alpha: float
    perturb: int
    psnr_db: float
    ssim: float
    seed: int
    ms: float

    @property
    def failed(self) -> bool:
        return math.isnan(self.psnr_db) or math.isnan(self.ssim)

    def group_key(self) -> str:
        return f"{self.mode}:{repr(float(self.alpha))}:{int(self.perturb)}"


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path, rows) -> None:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.id},{r.mode},{_fmt(r.alpha)},{int(r.perturb)},"
            f"{_fmt(r.psnr_db)},{_fmt(r.ssim)},{r.seed},{_fmt(r.ms)}"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_csv(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ContractError(f"{path}: missing or wrong header, expected {CSV_HEADER!r}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise ContractError(f"{path}: malformed row {ln!r}")
        rows.append(
            RowResult(
                id=int(parts[0]), mode=parts[1], alpha=float(parts[2]),
                perturb=int(parts[3]), psnr_db=float(parts[4]), ssim=float(parts[5]),
                seed=int(parts[6]), ms=float(parts[7]),
            )
        )
    return rows


def aggregate(rows) -> dict:
    """Per-(mode, alpha, perturb) mean/std over non-failed rows."""
    groups: dict[str, list[RowResult]] = {}
    for r in rows:
        groups.setdefault(r.group_key(), []).append(r)
    out = {}
    for key, members in sorted(groups.items()):
        ok = [r for r in members if not r.failed]
        entry = {"count": len(ok), "failures": len(members) - len(ok)}
        if ok:
            p = np.array([r.psnr_db for r in ok], dtype=np.float64)
            s = np.array([r.ssim for r in ok], dtype=np.float64)
            entry.update(
                psnr_mean=float(p.mean()), psnr_std=float(p.std()),
                ssim_mean=float(s.mean()), ssim_std=float(s.std()),
            )
        out[key] = entry
    return out


def _nan_to_none(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def _none_to_nan(v):
    return float("nan") if v is None else v


def write_json(path, rows) -> None:
    doc = {
        "rows": [{k: _nan_to_none(v) for k, v in asdict(r).items()} for r in rows],
        "aggregates": aggregate(rows),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path):
    """Read rows and aggregates; the stored aggregates must match a fresh
    recomputation from the stored rows."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    rows = [
        RowResult(**{k: _none_to_nan(v) for k, v in rec.items()}) for rec in doc["rows"]
    ]
    fresh = aggregate(rows)
    stored = doc["aggregates"]
    if set(fresh) != set(stored):
        raise ContractError(f"{path}: aggregate groups do not match the stored rows")
    for key, entry in fresh.items():
        for field, value in entry.items():
            got = stored[key].get(field)
            if isinstance(value, float):
                if got is None or abs(got - value) > 1e-9:
                    raise ContractError(
                        f"{path}: stored aggregate {key}.{field}={got} differs from recomputed {value}"
                    )
            elif got != value:
                raise ContractError(
                    f"{path}: stored aggregate {key}.{field}={got} differs from recomputed {value}"
                )
    return rows, fresh
