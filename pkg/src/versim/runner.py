"""Builds a world from a scenario, feeds it the precomputed workload, runs
the clock, and folds the log into a report.

All request arrivals are generated up front from per-user rng streams, so the
workload a user produces is independent of anything the strategies do during
the run. Each user stream is consumed in a fixed order: enrollment sample
seeds first, then one gap plus one sample seed per runtime arrival (explicit
arrivals skip the gap draw).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .domain import AudioSample, SimulationError
from .kernel import Simulator, node_stream
from .metrics import BounceEvent, Report, RequestRecord, summarize
from .scenario import Scenario
from .strategies import (
    Deployment,
    DeviceWorld,
    DoubleServerWorld,
    HybridDoubleWorld,
    HybridSingleWorld,
    OfflineServerWorld,
    OnlineServerWorld,
    ReenrollEvent,
    RunLog,
    UpdatePolicy,
    WorldBase,
)
from .strategies.common import (
    USER_STREAM_BASE,
    EnrollArrival,
    ReleasePayload,
    RuntimeArrival,
)
from .topology import ModelStorageNode

ENROLL_SAMPLE_MS = 1000
RUNTIME_SAMPLE_MS = 1000


class RunFailedError(Exception):
    """A correctness tripwire (or other simulation error) ended the run."""

    def __init__(self, cause: SimulationError, at: int, seq: int):
        super().__init__(f"{cause} (event at t={at}ms, seq={seq})")
        self.cause = cause
        self.at = at
        self.seq = seq


@dataclass(slots=True)
class RunResult:
    scenario: Scenario
    report: Report
    records: list[RequestRecord]
    bounces: list[BounceEvent]
    reenrolls: list[ReenrollEvent]
    profile_puts: list[tuple[int, str, int]]
    trace: list[str] | None
    world: WorldBase


_WORLDS = {
    (Deployment.DEVICE, UpdatePolicy.SINGLE_ONLINE): DeviceWorld,
    (Deployment.SERVER, UpdatePolicy.SINGLE_OFFLINE): OfflineServerWorld,
    (Deployment.SERVER, UpdatePolicy.SINGLE_ONLINE): OnlineServerWorld,
    (Deployment.SERVER, UpdatePolicy.DOUBLE): DoubleServerWorld,
    (Deployment.HYBRID, UpdatePolicy.SINGLE_ONLINE): HybridSingleWorld,
    (Deployment.HYBRID, UpdatePolicy.DOUBLE): HybridDoubleWorld,
}


def _generate_workload(
    scenario: Scenario,
) -> tuple[dict[str, tuple[AudioSample, ...]], list[tuple[int, str, AudioSample]]]:
    """Per-user enrollment samples plus the full (time, user, sample) arrival
    list, sorted by (time, user)."""
    enroll: dict[str, tuple[AudioSample, ...]] = {}
    arrivals: list[tuple[int, str, AudioSample]] = []
    spec = scenario.runtime_arrivals
    explicit_by_user: dict[str, list[int]] = {}
    if spec.explicit is not None:
        for a in spec.explicit:
            explicit_by_user.setdefault(a.user_id, []).append(a.time_ms)
    for index in range(scenario.users):
        user = f"u{index:03d}"
        rng = node_stream(scenario.seed, USER_STREAM_BASE + index)
        enroll[user] = tuple(
            AudioSample(speaker_id=user, duration_ms=ENROLL_SAMPLE_MS, seed=rng.next_u64())
            for _ in range(scenario.samples_per_user)
        )
        if spec.explicit is not None:
            for t in explicit_by_user.get(user, []):
                sample = AudioSample(
                    speaker_id=user, duration_ms=RUNTIME_SAMPLE_MS, seed=rng.next_u64()
                )
                arrivals.append((t, user, sample))
        else:
            rate = spec.poisson_rate_per_user_per_s
            t = 0
            while True:
                u = 1.0 - rng.uniform()  # (0, 1]
                t += int(-math.log(u) / rate * 1000.0)
                if t > scenario.duration_ms:
                    break
                sample = AudioSample(
                    speaker_id=user, duration_ms=RUNTIME_SAMPLE_MS, seed=rng.next_u64()
                )
                arrivals.append((t, user, sample))
    arrivals.sort(key=lambda a: (a[0], a[1]))
    return enroll, arrivals


def build(scenario: Scenario, trace: bool = False) -> tuple[Simulator, WorldBase, RunLog]:
    storage = ModelStorageNode()
    for version_id in scenario.initial_versions:
        storage.register(version_id, 0, 0, (0, 0))
    log = RunLog()
    trace_lines: list[str] | None = [] if trace else None
    world: WorldBase | None = None
    sim = Simulator(lambda target, payload: world.handle(target, payload), trace=trace_lines)
    world_cls = _WORLDS[(scenario.strategy.deployment, scenario.strategy.policy)]
    world = world_cls(scenario, sim, storage, log)

    enroll, arrivals = _generate_workload(scenario)
    for user in world.user_ids:
        sim.schedule(
            0,
            world.device_target(world.user_device[user]),
            EnrollArrival(user_id=user, samples=enroll[user]),
        )
    for t, user, sample in arrivals:
        sim.schedule(
            t,
            world.device_target(world.user_device[user]),
            RuntimeArrival(user_id=user, sample=sample),
        )
    for release in scenario.releases:
        sim.schedule(
            release.time_ms,
            "storage",
            ReleasePayload(
                version_id=release.version_id,
                download_ms=release.download_ms,
                server_update_ms=release.server_update_ms,
            ),
        )
    return sim, world, log


def run(scenario: Scenario, trace: bool = False) -> RunResult:
    sim, world, log = build(scenario, trace=trace)
    try:
        sim.run_until(scenario.duration_ms)
    except SimulationError as exc:
        at, seq = sim.current if sim.current is not None else (sim.now, -1)
        raise RunFailedError(exc, at, seq) from exc
    report = summarize(
        log.records,
        log.bounces,
        total_reenrollments=len(log.reenrolls),
        maintenance_ms=log.maintenance_ms(scenario.duration_ms),
    )
    return RunResult(
        scenario=scenario,
        report=report,
        records=log.records,
        bounces=log.bounces,
        reenrolls=log.reenrolls,
        profile_puts=log.profile_puts,
        trace=sim.trace,
        world=world,
    )
