"""Shared machinery for the strategy controllers: configuration, the message
vocabulary that travels on the event queue, the run log, and the world base
class that wires nodes to the simulator.

A "world" is one deployment wired up: nodes, their rng streams, and the
handler table that routes every executed event. Request flows are chains of
messages; each hop is one traced event, and each message carries its flow
context object so node handlers stay stateless between hops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, ClassVar

from ..domain import AudioSample, Outcome, RecognitionResult, UserProfile, VersionId
from ..engine import EngineInstance
from ..kernel import LatencyModel, SimRng, Simulator, node_stream
from ..metrics import BounceEvent, RequestKind, RequestRecord
from ..topology import (
    CloudServerNode,
    DatabaseNode,
    DeviceNode,
    DispatchPolicy,
    FrontendNode,
    ModelRelease,
    ModelStorageNode,
)

if TYPE_CHECKING:
    from ..scenario import Scenario


class Deployment(Enum):
    DEVICE = "DEVICE"
    SERVER = "SERVER"
    HYBRID = "HYBRID"


class UpdatePolicy(Enum):
    SINGLE_OFFLINE = "SINGLE_OFFLINE"
    SINGLE_ONLINE = "SINGLE_ONLINE"
    DOUBLE = "DOUBLE"


class Mitigation(Enum):
    NONE = "NONE"
    SYNC_TABLE = "SYNC_TABLE"
    HASH_LB = "HASH_LB"
    MULTI_PROFILE = "MULTI_PROFILE"


@dataclass(frozen=True, slots=True)
class StrategyConfig:
    deployment: Deployment
    policy: UpdatePolicy
    mitigation: Mitigation = Mitigation.NONE
    dispatch: DispatchPolicy = DispatchPolicy.ROUND_ROBIN
    handshake_period_ms: int | None = None
    sync_table_period_ms: int | None = None


# node stream indices; every node's randomness is root_seed XOR one of these
FRONTEND_STREAM = 1
DB_STREAM = 2
STORAGE_STREAM = 3
CLOUD_STREAM_BASE = 16
DEVICE_STREAM_BASE = 4096
USER_STREAM_BASE = 65536


@dataclass(slots=True)
class ReenrollEvent:
    at: int
    user_id: str
    from_seq: int
    to_seq: int
    to_version: VersionId


class RunLog:
    """Everything a run observes: request records, re-enrollments, bounces,
    profile writes and maintenance windows. The Report is folded from this."""

    def __init__(self) -> None:
        self.records: list[RequestRecord] = []
        self.bounces: list[BounceEvent] = []
        self.reenrolls: list[ReenrollEvent] = []
        self.profile_puts: list[tuple[int, str, int]] = []
        self.no_audio_events = 0
        self._maintenance_open: int | None = None
        self._maintenance_total = 0

    def record(
        self,
        kind: RequestKind,
        user_id: str,
        submitted: int,
        completed: int,
        outcome: Outcome,
        reenrollments_in_path: int = 0,
    ) -> None:
        self.records.append(
            RequestRecord(kind, user_id, submitted, completed, outcome, reenrollments_in_path)
        )

    def log_reenroll(self, at: int, user_id: str, from_version: VersionId, to_version: VersionId) -> None:
        self.reenrolls.append(
            ReenrollEvent(at, user_id, from_version.seq, to_version.seq, to_version)
        )
        if to_version.seq < from_version.seq:
            self.bounces.append(BounceEvent(at, user_id, from_version, to_version))

    def log_put(self, at: int, user_id: str, version: VersionId) -> None:
        self.profile_puts.append((at, user_id, version.seq))

    def maintenance_begin(self, at: int) -> None:
        self._maintenance_open = at

    def maintenance_end(self, at: int) -> None:
        assert self._maintenance_open is not None
        self._maintenance_total += at - self._maintenance_open
        self._maintenance_open = None

    def maintenance_ms(self, horizon: int) -> int:
        total = self._maintenance_total
        if self._maintenance_open is not None:
            total += horizon - self._maintenance_open
        return total


# ---------------------------------------------------------------------------
# flow contexts

@dataclass(slots=True)
class EnrollCtx:
    user_id: str
    device_id: str
    submitted: int
    samples: tuple[AudioSample, ...]
    produced: list[UserProfile] = field(default_factory=list)
    plan: list[VersionId] = field(default_factory=list)
    pinned_server: str | None = None
    record: bool = True
    background: bool = False
    parent: "RuntimeCtx | None" = None
    rejected: set[str] = field(default_factory=set)
    refreshed_once: bool = False


@dataclass(slots=True)
class RuntimeCtx:
    user_id: str
    device_id: str
    submitted: int
    sample: AudioSample
    candidate_ids: tuple[str, ...]
    profiles: dict[str, list[UserProfile]] = field(default_factory=dict)
    audio: dict[str, tuple[AudioSample, ...]] = field(default_factory=dict)
    results: dict[str, RecognitionResult] = field(default_factory=dict)
    refreshed: list[UserProfile] = field(default_factory=list)
    reenrolls: int = 0
    pinned_server: str | None = None
    rejected: set[str] = field(default_factory=set)
    refreshed_once: bool = False


@dataclass(slots=True)
class HandshakeCtx:
    user_id: str
    device_id: str
    submitted: int


# ---------------------------------------------------------------------------
# message payloads; one class per event kind that can appear in a trace

@dataclass(slots=True)
class EnrollArrival:
    kind: ClassVar[str] = "enroll-arrival"
    user_id: str
    samples: tuple[AudioSample, ...]

    def summary(self) -> str:
        return f"user={self.user_id} samples={len(self.samples)}"


@dataclass(slots=True)
class RuntimeArrival:
    kind: ClassVar[str] = "runtime-arrival"
    user_id: str
    sample: AudioSample

    def summary(self) -> str:
        return f"user={self.user_id}"


@dataclass(slots=True)
class ReleasePayload:
    kind: ClassVar[str] = "release"
    version_id: str
    download_ms: int
    server_update_ms: tuple[int, int]

    def summary(self) -> str:
        return f"version={self.version_id}"


@dataclass(slots=True)
class NotifyRelease:
    kind: ClassVar[str] = "notify-release"
    version: VersionId

    def summary(self) -> str:
        return f"version={self.version.id}"


@dataclass(slots=True)
class DownloadDone:
    kind: ClassVar[str] = "download-done"
    version: VersionId

    def summary(self) -> str:
        return f"version={self.version.id}"


@dataclass(slots=True)
class DeviceTaskDone:
    """Completion of a device-local engine task (enroll or recognize)."""

    kind: ClassVar[str] = "device-task-done"
    task: str
    ctx: object

    def summary(self) -> str:
        user = getattr(self.ctx, "user_id", "?")
        return f"task={self.task} user={user}"


@dataclass(slots=True)
class DeviceReenrollDone:
    kind: ClassVar[str] = "device-reenroll-done"
    user_id: str

    def summary(self) -> str:
        return f"user={self.user_id}"


@dataclass(slots=True)
class ServerUpdateDone:
    kind: ClassVar[str] = "server-update-done"
    server_id: str
    version: VersionId

    def summary(self) -> str:
        return f"server={self.server_id} version={self.version.id}"


@dataclass(slots=True)
class HandshakeTick:
    kind: ClassVar[str] = "handshake-tick"
    device_id: str

    def summary(self) -> str:
        return f"device={self.device_id}"


@dataclass(slots=True)
class SyncTick:
    kind: ClassVar[str] = "sync-tick"

    def summary(self) -> str:
        return "periodic"


@dataclass(slots=True)
class SyncProbe:
    kind: ClassVar[str] = "sync-probe"
    round_id: int
    server_id: str

    def summary(self) -> str:
        return f"round={self.round_id} server={self.server_id}"


@dataclass(slots=True)
class SyncReply:
    kind: ClassVar[str] = "sync-reply"
    round_id: int
    server_id: str
    versions: tuple[VersionId, ...]

    def summary(self) -> str:
        served = ",".join(v.id for v in self.versions) or "-"
        return f"round={self.round_id} server={self.server_id} serves={served}"


@dataclass(slots=True)
class DispatchRetry:
    kind: ClassVar[str] = "dispatch-retry"
    ctx: object
    flow: str

    def summary(self) -> str:
        return f"flow={self.flow} user={getattr(self.ctx, 'user_id', '?')}"


@dataclass(slots=True)
class EnrollRequestMsg:
    kind: ClassVar[str] = "enroll-request"
    ctx: EnrollCtx

    def summary(self) -> str:
        return f"user={self.ctx.user_id}"


@dataclass(slots=True)
class EnrollResponseMsg:
    kind: ClassVar[str] = "enroll-response"
    ctx: EnrollCtx
    outcome: Outcome
    profiles: tuple[UserProfile, ...] = ()

    def summary(self) -> str:
        return f"user={self.ctx.user_id} outcome={self.outcome.value}"


@dataclass(slots=True)
class RuntimeRequestMsg:
    kind: ClassVar[str] = "runtime-request"
    ctx: RuntimeCtx

    def summary(self) -> str:
        return f"user={self.ctx.user_id}"


@dataclass(slots=True)
class RuntimeResponseMsg:
    kind: ClassVar[str] = "runtime-response"
    ctx: RuntimeCtx
    outcome: Outcome

    def summary(self) -> str:
        return f"user={self.ctx.user_id} outcome={self.outcome.value}"


@dataclass(slots=True)
class EnrollJob:
    kind: ClassVar[str] = "enroll-job"
    ctx: object
    server_id: str
    user_id: str
    samples: tuple[AudioSample, ...]
    token: str

    def summary(self) -> str:
        return f"user={self.user_id} server={self.server_id} for={self.token}"


@dataclass(slots=True)
class EnrollJobDone:
    kind: ClassVar[str] = "enroll-job-done"
    ctx: object
    server_id: str
    profile: UserProfile
    token: str

    def summary(self) -> str:
        return (
            f"user={self.profile.user_id} server={self.server_id} "
            f"version={self.profile.version.id} for={self.token}"
        )


@dataclass(slots=True)
class RecognizeJob:
    kind: ClassVar[str] = "recognize-job"
    ctx: RuntimeCtx
    server_id: str

    def summary(self) -> str:
        return f"user={self.ctx.user_id} server={self.server_id}"


@dataclass(slots=True)
class RecognizeJobDone:
    kind: ClassVar[str] = "recognize-job-done"
    ctx: RuntimeCtx
    server_id: str

    def summary(self) -> str:
        return (
            f"user={self.ctx.user_id} server={self.server_id} "
            f"reenrolled={len(self.ctx.refreshed)}"
        )


@dataclass(slots=True)
class JobRejected:
    kind: ClassVar[str] = "job-rejected"
    ctx: object
    server_id: str
    flow: str

    def summary(self) -> str:
        return f"flow={self.flow} server={self.server_id}"


@dataclass(slots=True)
class RetrySignal:
    kind: ClassVar[str] = "retry-signal"
    ctx: RuntimeCtx
    server_id: str

    def summary(self) -> str:
        return f"user={self.ctx.user_id} server={self.server_id}"


@dataclass(slots=True)
class RetryNeeded:
    kind: ClassVar[str] = "retry-needed"
    ctx: RuntimeCtx
    server_id: str

    def summary(self) -> str:
        return f"user={self.ctx.user_id} server={self.server_id}"


@dataclass(slots=True)
class HandshakeRequest:
    kind: ClassVar[str] = "handshake-request"
    ctx: HandshakeCtx

    def summary(self) -> str:
        return f"user={self.ctx.user_id}"


@dataclass(slots=True)
class HandshakeReply:
    kind: ClassVar[str] = "handshake-reply"
    ctx: HandshakeCtx
    versions: tuple[VersionId, ...]

    def summary(self) -> str:
        served = ",".join(v.id for v in self.versions) or "-"
        return f"user={self.ctx.user_id} serves={served}"


@dataclass(slots=True)
class DbStoreAudio:
    kind: ClassVar[str] = "db-store-audio"
    user_id: str
    samples: tuple[AudioSample, ...]
    token: str
    ctx: object

    def summary(self) -> str:
        return f"user={self.user_id} for={self.token}"


@dataclass(slots=True)
class DbStoreAudioAck:
    kind: ClassVar[str] = "db-store-ack"
    token: str
    ctx: object

    def summary(self) -> str:
        return f"for={self.token}"


@dataclass(slots=True)
class DbFetch:
    kind: ClassVar[str] = "db-fetch"
    user_ids: tuple[str, ...]
    token: str
    ctx: object

    def summary(self) -> str:
        return f"users={','.join(self.user_ids)} for={self.token}"


@dataclass(slots=True)
class DbFetchReply:
    kind: ClassVar[str] = "db-fetch-reply"
    profiles: dict[str, list[UserProfile]]
    audio: dict[str, tuple[AudioSample, ...]]
    token: str
    ctx: object

    def summary(self) -> str:
        return f"rows={len(self.profiles)} for={self.token}"


@dataclass(slots=True)
class DbPutProfile:
    kind: ClassVar[str] = "db-put-profile"
    profiles: tuple[UserProfile, ...]
    retain: int | None
    token: str
    ctx: object

    def summary(self) -> str:
        return (
            ",".join(f"{p.user_id}@{p.version.id}" for p in self.profiles)
            + f" for={self.token}"
        )


@dataclass(slots=True)
class DbPutAck:
    kind: ClassVar[str] = "db-put-ack"
    token: str
    ctx: object

    def summary(self) -> str:
        return f"for={self.token}"


@dataclass(slots=True)
class SweepStep:
    kind: ClassVar[str] = "sweep-step"

    def summary(self) -> str:
        return "next-user"


@dataclass(slots=True)
class MaintenanceOver:
    kind: ClassVar[str] = "maintenance-over"

    def summary(self) -> str:
        return "lifted"


# ---------------------------------------------------------------------------


class WorldBase:
    """One wired deployment. Subclasses register handlers per message kind
    and implement the flows; this base owns node construction helpers, engine
    caching, message sending and request bookkeeping."""

    def __init__(self, scenario: "Scenario", sim: Simulator, storage: ModelStorageNode, log: RunLog):
        self.sc = scenario
        self.sim = sim
        self.storage = storage
        self.log = log
        self.cfg = scenario.strategy
        self._engines: dict[VersionId, EngineInstance] = {}
        self._handlers: dict[str, Callable[[str, object], None]] = {}

        self.user_ids = [f"u{i:03d}" for i in range(scenario.users)]
        self.devices: dict[str, DeviceNode] = {}
        self.device_rng: dict[str, SimRng] = {}
        self.user_device: dict[str, str] = {}
        device_ids = [f"d{i:02d}" for i in range(scenario.devices)]
        initial = storage.releases[0].version
        for j, device_id in enumerate(device_ids):
            owners = [u for i, u in enumerate(self.user_ids) if i % scenario.devices == j]
            self.devices[device_id] = DeviceNode(device_id, owners, initial)
            self.device_rng[device_id] = node_stream(scenario.seed, DEVICE_STREAM_BASE + j)
            for u in owners:
                self.user_device[u] = device_id
        self.storage_rng = node_stream(scenario.seed, STORAGE_STREAM)

        self.pending_releases: list[ModelRelease] = []
        self.active_release: ModelRelease | None = None

    # -- wiring helpers

    def on(self, kind: str, handler: Callable) -> None:
        self._handlers[kind] = handler

    def handle(self, target: str, payload) -> None:
        self._handlers[payload.kind](target, payload)

    def engine_for(self, version: VersionId) -> EngineInstance:
        engine = self._engines.get(version)
        if engine is None:
            engine = EngineInstance(
                model=version,
                enroll_cost_ms_per_sample=self.sc.enroll_cost_ms_per_sample,
                runtime_cost_ms=self.sc.runtime_cost_ms,
            )
            self._engines[version] = engine
        return engine

    def send(
        self,
        link: LatencyModel,
        rng: SimRng,
        target: str,
        payload,
        extra_delay: int = 0,
    ) -> None:
        self.sim.schedule_in(extra_delay + link.sample(rng), target, payload)

    def device_target(self, device_id: str) -> str:
        return f"device:{device_id}"

    # -- release serialization; subclasses implement _begin_release

    def on_release_registered(self, release: ModelRelease) -> None:
        if self.active_release is not None:
            self.pending_releases.append(release)
            return
        self.active_release = release
        self._begin_release(release)

    def finish_release(self) -> None:
        self.active_release = None
        if self.pending_releases:
            nxt = self.pending_releases.pop(0)
            self.active_release = nxt
            self._begin_release(nxt)

    def _begin_release(self, release: ModelRelease) -> None:
        raise NotImplementedError
