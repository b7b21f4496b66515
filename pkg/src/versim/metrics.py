"""Request records and run reports.

``summarize`` is a pure fold over the records: any permutation of its inputs
produces the identical Report, and the JSON form is byte-stable (sorted keys,
fixed key set, absent values encoded as null).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .domain import Outcome, VersionId


class RequestKind(Enum):
    ENROLL = "ENROLL"
    RUNTIME = "RUNTIME"
    HANDSHAKE = "HANDSHAKE"


@dataclass(frozen=True, slots=True)
class RequestRecord:
    kind: RequestKind
    user_id: str
    submitted: int
    completed: int
    outcome: Outcome
    reenrollments_in_path: int = 0

    @property
    def latency_ms(self) -> int:
        return self.completed - self.submitted


@dataclass(frozen=True, slots=True)
class BounceEvent:
    """A re-enrollment that moved a user to an older version than the one
    they already had."""

    at: int
    user_id: str
    from_version: VersionId
    to_version: VersionId


@dataclass(frozen=True, slots=True)
class LatencyStats:
    p50: int
    p95: int
    max: int


def nearest_rank(values: Sequence[int], q: float) -> int:
    """Nearest-rank percentile: the ceil(q * n)-th smallest, 1-indexed."""
    if not values:
        raise ValueError("percentile of an empty sequence")
    ordered = sorted(values)
    rank = max(math.ceil(q * len(ordered)), 1)
    return ordered[rank - 1]


def latency_stats(latencies: Sequence[int]) -> LatencyStats:
    return LatencyStats(
        p50=nearest_rank(latencies, 0.50),
        p95=nearest_rank(latencies, 0.95),
        max=max(latencies),
    )


@dataclass(frozen=True, slots=True)
class Report:
    total_requests: dict[str, dict[str, int]]
    latency_ms: dict[str, LatencyStats | None]
    availability: float | None
    total_reenrollments: int
    bounce_count: int
    mismatch_violations: int
    stale_profile_events: int
    maintenance_ms: int


def summarize(
    records: Iterable[RequestRecord],
    bounces: Sequence[BounceEvent],
    *,
    total_reenrollments: int = 0,
    maintenance_ms: int = 0,
    mismatch_violations: int = 0,
) -> Report:
    records = list(records)
    counts: dict[str, dict[str, int]] = {
        kind.value: {outcome.value: 0 for outcome in Outcome} for kind in RequestKind
    }
    latencies: dict[str, list[int]] = {kind.value: [] for kind in RequestKind}
    for rec in records:
        counts[rec.kind.value][rec.outcome.value] += 1
        latencies[rec.kind.value].append(rec.latency_ms)

    runtime = counts[RequestKind.RUNTIME.value]
    runtime_total = sum(runtime.values())
    availability = runtime[Outcome.OK.value] / runtime_total if runtime_total else None

    stale = sum(
        1 for rec in records if rec.outcome is Outcome.STALE_PROFILES
    )
    return Report(
        total_requests=counts,
        latency_ms={
            kind: latency_stats(vals) if vals else None
            for kind, vals in latencies.items()
        },
        availability=availability,
        total_reenrollments=total_reenrollments,
        bounce_count=len(bounces),
        mismatch_violations=mismatch_violations,
        stale_profile_events=stale,
        maintenance_ms=maintenance_ms,
    )


def report_to_dict(report: Report) -> dict:
    return {
        "availability": report.availability,
        "bounce_count": report.bounce_count,
        "latency_ms": {
            kind: (
                None
                if stats is None
                else {"max": stats.max, "p50": stats.p50, "p95": stats.p95}
            )
            for kind, stats in report.latency_ms.items()
        },
        "maintenance_ms": report.maintenance_ms,
        "mismatch_violations": report.mismatch_violations,
        "stale_profile_events": report.stale_profile_events,
        "total_reenrollments": report.total_reenrollments,
        "total_requests": report.total_requests,
    }


def report_to_json(report: Report) -> str:
    """Canonical encoding: UTF-8, alphabetical keys, two-space indent, one
    trailing newline. Parsing and re-encoding is byte-identical."""
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def report_from_dict(data: dict) -> Report:
    return Report(
        total_requests=data["total_requests"],
        latency_ms={
            kind: None if stats is None else LatencyStats(
                p50=stats["p50"], p95=stats["p95"], max=stats["max"]
            )
            for kind, stats in data["latency_ms"].items()
        },
        availability=data["availability"],
        total_reenrollments=data["total_reenrollments"],
        bounce_count=data["bounce_count"],
        mismatch_violations=data["mismatch_violations"],
        stale_profile_events=data["stale_profile_events"],
        maintenance_ms=data["maintenance_ms"],
    )
