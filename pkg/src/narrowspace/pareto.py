"""Pareto fronts, constraint queries and per-model precision selection.

Cost axes are minimized and accuracy is maximized.  ``weight_bytes`` is
the weight storage of a record at its current numeric type:
``parameter_count * storage_width / 8``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .precision import ReducedFloatType

COST_AXES = ("parameter_count", "weight_bytes", "flops", "latency_ms")
FP32 = "fp32"


def type_width(type_name: str) -> int:
    return 32 if type_name == FP32 else ReducedFloatType.parse(type_name).storage_width


@dataclass(frozen=True)
class PrecisionEntry:
    type_name: str
    storage_width: int
    accuracy: float


@dataclass(frozen=True)
class CandidateRecord:
    candidate_id: str
    space_id: str
    parameter_count: int
    flops: int
    accuracy: float | None = None
    latency_ms: float | None = None
    latency_source: str | None = None  # "measured" or "predicted"
    type_name: str = FP32
    precision: tuple[PrecisionEntry, ...] | None = None

    @property
    def weight_bytes(self) -> float:
        return self.parameter_count * type_width(self.type_name) / 8

    def value(self, axis: str) -> float:
        if axis not in COST_AXES and axis != "accuracy":
            raise ValueError(f"unknown axis {axis!r}")
        v = getattr(self, axis)
        if v is None:
            raise ValueError(f"record {self.candidate_id!r} has no {axis}")
        return v


@dataclass(frozen=True)
class Constraint:
    axis: str
    bound: float

    def __post_init__(self):
        if self.axis not in COST_AXES:
            raise ValueError(f"unknown constraint axis {self.axis!r}")
        if not self.bound > 0:
            raise ValueError("constraint bound must be positive")


def dominates(a: CandidateRecord, b: CandidateRecord, cost_axis: str,
              quality_axis: str = "accuracy") -> bool:
    ca, cb = a.value(cost_axis), b.value(cost_axis)
    qa, qb = a.value(quality_axis), b.value(quality_axis)
    return ca <= cb and qa >= qb and (ca < cb or qa > qb)


def pareto_front(records: Iterable[CandidateRecord], cost_axis: str,
                 quality_axis: str = "accuracy") -> list[CandidateRecord]:
    """Non-dominated records sorted by ascending cost.

    Records with identical coordinates collapse to the smallest
    ``(candidate_id, type_name)``.
    """
    ordered = sorted(records, key=lambda r: (r.value(cost_axis), -r.value(quality_axis),
                                             r.candidate_id, r.type_name))
    front, best = [], -math.inf
    for r in ordered:
        q = r.value(quality_axis)
        if q > best:
            front.append(r)
            best = q
    return front


def best_under_constraint(records: Iterable[CandidateRecord],
                          constraint: Constraint) -> CandidateRecord | None:
    feasible = [r for r in records if r.value(constraint.axis) <= constraint.bound]
    if not feasible:
        return None
    return min(feasible, key=lambda r: (-r.value("accuracy"), r.value(constraint.axis),
                                        r.candidate_id, r.type_name))


def reprice(record: CandidateRecord, entry: PrecisionEntry) -> CandidateRecord:
    return replace(record, type_name=entry.type_name, accuracy=entry.accuracy)


def _table(record: CandidateRecord) -> tuple[PrecisionEntry, ...]:
    if not record.precision:
        raise ValueError(f"record {record.candidate_id!r} has no precision table")
    return record.precision


def fixed_type_records(records: Iterable[CandidateRecord], type_name: str) -> list[CandidateRecord]:
    out = []
    for r in records:
        match = [e for e in _table(r) if e.type_name == type_name]
        if not match:
            raise ValueError(f"record {r.candidate_id!r} has no entry for {type_name}")
        out.append(reprice(r, match[0]))
    return out


def best_type_per_model(records: Iterable[CandidateRecord],
                        memory_axis: str = "weight_bytes") -> list[CandidateRecord]:
    """Each model re-priced at every type, keeping its own Pareto set."""
    out = []
    for r in records:
        out.extend(pareto_front([reprice(r, e) for e in _table(r)], memory_axis))
    return out


def envelope(front: Sequence[CandidateRecord], budget: float, cost_axis: str) -> float:
    """Best accuracy reachable within ``budget`` (``-inf`` when nothing fits)."""
    return max((r.value("accuracy") for r in front if r.value(cost_axis) <= budget),
               default=-math.inf)


def front_dominates(upper: Sequence[CandidateRecord], lower: Sequence[CandidateRecord],
                    cost_axis: str) -> bool:
    """True when ``upper`` reaches at least ``lower``'s accuracy at every budget."""
    budgets = {r.value(cost_axis) for r in upper} | {r.value(cost_axis) for r in lower}
    return all(envelope(upper, b, cost_axis) >= envelope(lower, b, cost_axis) for b in budgets)


# -- CSV ----------------------------------------------------------------------------

RECORD_HEADER = ("candidate_id", "space_id", "parameter_count", "flops", "accuracy",
                 "latency_ms", "latency_source", "type_name")
FRONT_HEADER = ("candidate_id", "cost_axis", "cost_value", "accuracy", "type_name")
TABLE_HEADER = ("candidate_id", "type", "storage_width", "accuracy")


def _opt_float(s: str | None) -> float | None:
    return None if s in (None, "") else float(s)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def read_records(path) -> list[CandidateRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"candidate_id", "parameter_count"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"records CSV lacks columns {sorted(missing)}")
        out = []
        for d in reader:
            out.append(CandidateRecord(
                candidate_id=d["candidate_id"],
                space_id=d.get("space_id") or "",
                parameter_count=int(d["parameter_count"]),
                flops=int(d.get("flops") or 0),
                accuracy=_opt_float(d.get("accuracy")),
                latency_ms=_opt_float(d.get("latency_ms")),
                latency_source=d.get("latency_source") or None,
                type_name=d.get("type_name") or FP32,
            ))
        return out


def write_records(path, records: Iterable[CandidateRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([_fmt(getattr(r, k)) for k in RECORD_HEADER])


def read_tables(path) -> dict[str, tuple[PrecisionEntry, ...]]:
    tables: dict[str, list[PrecisionEntry]] = {}
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            tables.setdefault(d["candidate_id"], []).append(
                PrecisionEntry(d["type"], int(d["storage_width"]), float(d["accuracy"])))
    return {k: tuple(v) for k, v in tables.items()}


def attach_tables(records: Iterable[CandidateRecord],
                  tables: dict[str, tuple[PrecisionEntry, ...]]) -> list[CandidateRecord]:
    return [replace(r, precision=tables.get(r.candidate_id)) for r in records]


def front_rows(front: Iterable[CandidateRecord], cost_axis: str) -> list[tuple]:
    return [(r.candidate_id, cost_axis, _fmt(r.value(cost_axis)), _fmt(r.accuracy), r.type_name)
            for r in front]


def write_front(path, front: Iterable[CandidateRecord], cost_axis: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONT_HEADER)
        w.writerows(front_rows(front, cost_axis))
