"""
store.py — On-disk formats: field snapshots, diagnostics CSV, run ledger.

Snapshot layout (``*.fld``)::

    {"format": "mixkin-field/1", "name": ..., "time": ..., "axes": [...],
     "shape": [...], "dtype": "<f8", "offset": 256, "attrs": {...}}<spaces>\\n
    <raw little-endian float64 values, C order>

The JSON header is a single line padded with spaces so that the binary block
starts at ``offset`` (a multiple of 64). Values round-trip bit-exactly.

The run ledger is an append-only JSONL file, one event per line.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import SnapshotError
from .grid import Field, Grid

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "mixkin-field/1"
HEADER_ALIGN = 64


# ---------------------------------------------------------------------------
# Stable hashing
# ---------------------------------------------------------------------------

def stable_json_dumps(obj: Any) -> str:
    """Deterministic JSON serialisation for hashing and echo files."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def deterministic_hash(payload: Any, salt: str = "") -> str:
    h = hashlib.sha256()
    h.update(salt.encode("utf-8"))
    h.update(stable_json_dumps(payload).encode("utf-8"))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Field snapshots
# ---------------------------------------------------------------------------

def _header_bytes(header: Dict[str, Any]) -> bytes:
    offset = 0
    for _ in range(8):
        text = json.dumps({**header, "offset": offset}, sort_keys=True)
        needed = -(-(len(text.encode("utf-8")) + 1) // HEADER_ALIGN) * HEADER_ALIGN
        if needed == offset:
            break
        offset = needed
    raw = text.encode("utf-8")
    return raw + b" " * (offset - len(raw) - 1) + b"\n"


def write_snapshot(path: str, field: Field) -> str:
    header = {
        "format": SNAPSHOT_FORMAT,
        "name": field.name,
        "time": float(field.time),
        "axes": field.grid.to_dict()["axes"],
        "shape": list(field.data.shape),
        "dtype": "<f8",
        "attrs": field.attrs,
    }
    payload = np.ascontiguousarray(field.data, dtype="<f8").tobytes(order="C")
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as f:
            f.write(_header_bytes(header))
            f.write(payload)
    except OSError as exc:
        raise SnapshotError(f"cannot write snapshot {path}: {exc}") from exc
    logger.info(f"Wrote snapshot {path} ({field.name}, t={field.time:g})")
    return path


def read_snapshot(path: str) -> Field:
    try:
        with open(path, "rb") as f:
            first = f.readline()
            header = json.loads(first.decode("utf-8"))
            if header.get("format") != SNAPSHOT_FORMAT:
                raise SnapshotError(f"{path} is not a {SNAPSHOT_FORMAT} snapshot")
            f.seek(int(header["offset"]))
            raw = f.read()
    except (OSError, ValueError, KeyError) as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise SnapshotError(f"{path}: expected {expected} data bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype=header["dtype"]).reshape(shape).astype(np.float64)
    grid = Grid.from_dict({"axes": header["axes"]})
    return Field(grid, data, name=header["name"], time=header["time"], attrs=header.get("attrs", {}))


def snapshot_name(scenario: str, time_value: float, label: Optional[str] = None) -> str:
    stem = scenario if label is None else f"{scenario}_{label}"
    return f"{stem}_t{time_value:.6f}.fld"


# ---------------------------------------------------------------------------
# Diagnostics CSV
# ---------------------------------------------------------------------------

def format_value(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{float(value):.17g}"


class CSVSeries:
    """Row-at-a-time CSV writer with a fixed header."""

    def __init__(self, path: str, columns: Sequence[str], append: bool = False) -> None:
        self.path = path
        self.columns = list(columns)
        fresh = not (append and os.path.exists(path))
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self._fh = open(path, "a" if not fresh else "w", newline="", encoding="utf-8")
        except OSError as exc:
            raise SnapshotError(f"cannot open {path}: {exc}") from exc
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            self._writer.writerow(self.columns)

    def write(self, row: Sequence[str]) -> None:
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "CSVSeries":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def truncate_after(path: str, time_value: float) -> None:
    """Drop CSV rows whose first column is at or after ``time_value`` (resume support)."""
    if not os.path.exists(path):
        return
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()
    kept = lines[:1]
    for line in lines[1:]:
        head = line.split(",", 1)[0]
        if float(head) < time_value:
            kept.append(line)
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(kept)


# ---------------------------------------------------------------------------
# Run ledger
# ---------------------------------------------------------------------------

@dataclass
class LedgerEvent:
    kind: str
    payload: Dict[str, Any]
    ts: float


class RunLedger:
    """Append-only JSONL event log for one output directory."""

    def __init__(self, root: str) -> None:
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.log_path = os.path.join(root, "run_log.jsonl")

    def append(self, kind: str, **payload: Any) -> LedgerEvent:
        event = LedgerEvent(kind=kind, payload=payload, ts=time.time())
        try:
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write(stable_json_dumps(event.__dict__) + "\n")
        except OSError as exc:
            raise SnapshotError(f"cannot append to {self.log_path}: {exc}") from exc
        return event

    def load(self) -> List[LedgerEvent]:
        events: List[LedgerEvent] = []
        if os.path.exists(self.log_path):
            with open(self.log_path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line:
                        events.append(LedgerEvent(**json.loads(line)))
        return events

    def count(self, kind: str) -> int:
        return sum(1 for e in self.load() if e.kind == kind)
