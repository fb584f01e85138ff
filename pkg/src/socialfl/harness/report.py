"""Fixed-schema CSV output.

Floats are written with ``repr`` so a rerun with the same seed reproduces
the file byte for byte.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

SCHEMAS: dict[str, tuple[str, ...]] = {
    "coalition": ("iteration", "socialfl_avg_payoff", "noncoop_avg_payoff", "num_clusters"),
    "coalition_trace": ("iteration", "mean_individual_payoff", "num_clusters", "moved_count"),
    "consensus": ("height", "decided_hash_or_empty", "committee_sizes", "byz_count", "stages_used"),
    "consensus_summary": (
        "heights", "safety_violations", "empty_block_count", "honest_mean_reputation", "faulty_mean_reputation",
    ),
    "provenance": ("attack", "ratio", "trials", "successes", "rate"),
    "verification": ("check", "trials", "successes", "rate"),
    "pipeline_rounds": ("round", "num_clusters", "global_utility", "satx_count", "block_height", "block_hash"),
    "payments": ("round", "commit_index", "commitment", "settled"),
}


class SchemaError(ValueError):
    pass


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(_cell(v) for v in value)
    return str(value)


def render_csv(kind: str, rows: Iterable[Sequence]) -> str:
    header = SCHEMAS[kind]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise SchemaError(f"{kind}: row has {len(row)} cells, expected {len(header)}")
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, kind: str, rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(kind, rows))
    return path


def read_csv(path: str | Path, kind: str) -> list[dict[str, str]]:
    """Parse a CSV and check its header against the schema for ``kind``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != SCHEMAS[kind]:
            raise SchemaError(f"{path}: header {header} does not match {kind} schema")
        raw = list(reader)
    for r in raw:
        if len(r) != len(header):
            raise SchemaError(f"{path}: ragged row {r}")
    return [dict(zip(header, r)) for r in raw]
