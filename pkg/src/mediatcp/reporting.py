"""Trace and table writers. Every file starts with the schema version and the
resolved config that produced it."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .config import SCHEMA_VERSION, SimConfig, config_to_dict
from .sim import SlotRecord

TRACE_COLUMNS = (
    "slot", "user", "controller", "window", "permissions", "quality", "ratio",
    "w_ref", "p", "lost", "p_hat", "fairness", "bg_mean_window",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else ""
    return str(x)


def _clean(obj):
    # JSON has no NaN/inf; emit null so files stay strict and diff-able
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def provenance(cfg: SimConfig | dict | None) -> list[str]:
    doc = cfg if isinstance(cfg, dict) or cfg is None else config_to_dict(cfg)
    return [
        f"# schema_version={SCHEMA_VERSION}",
        "# config=" + json.dumps(doc, sort_keys=True, separators=(",", ":")),
    ]


def trace_rows(cfg: SimConfig, trace: Sequence[SlotRecord]) -> Iterable[list[str]]:
    for rec in trace:
        for u, us in zip(cfg.users, rec.users):
            yield [
                _fmt(v) for v in (
                    rec.slot, u.name, u.controller, us.window, us.permissions, us.quality,
                    us.ratio, us.w_ref, us.p, us.lost, rec.p_hat, rec.fairness,
                    rec.bg_mean_window,
                )
            ]


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence],
                cfg: SimConfig | dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in provenance(cfg):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_trace(path: str | Path, cfg: SimConfig, trace: Sequence[SlotRecord]) -> None:
    write_table(path, TRACE_COLUMNS, trace_rows(cfg, trace), cfg)


def write_json(path: str | Path, payload: dict, cfg: SimConfig | dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION}
    if cfg is not None:
        doc["config"] = cfg if isinstance(cfg, dict) else config_to_dict(cfg)
    doc.update(payload)
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def read_table(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse a table written by ``write_table``: (config document, rows as dicts)."""
    lines = Path(path).read_text().splitlines()
    meta = {}
    body = []
    for line in lines:
        if line.startswith("# config="):
            meta = json.loads(line[len("# config="):])
        elif not line.startswith("#"):
            body.append(line)
    return meta, list(csv.DictReader(body))
