"""Node state for the three deployment shapes.

Topology is a star centered on the frontend: devices, cloud servers and the
database all talk through it. Model storage is the release registry. Nodes
hold state and local rules only; the multi-hop request flows live in
``strategies``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .domain import (
    AudioSample,
    NoEligibleServerError,
    UnknownUserError,
    UserProfile,
    VersionId,
)
from .engine import EngineInstance, fnv1a64
from .kernel import SimRng


class DispatchPolicy(Enum):
    ROUND_ROBIN = "ROUND_ROBIN"
    RANDOM = "RANDOM"
    HASH_BY_USER = "HASH_BY_USER"


@dataclass(frozen=True, slots=True)
class ModelRelease:
    version: VersionId
    release_time: int
    download_ms: int
    server_update_ms: tuple[int, int]

    def draw_update_duration(self, rng: SimRng) -> int:
        lo, hi = self.server_update_ms
        return lo + rng.next_u64() % (hi - lo + 1)


class ModelStorageNode:
    """Release registry. Assigns the global sequence numbers that define
    version ordering; everything downstream compares by seq only."""

    def __init__(self) -> None:
        self.releases: list[ModelRelease] = []

    def register(
        self,
        version_id: str,
        release_time: int,
        download_ms: int,
        server_update_ms: tuple[int, int],
    ) -> ModelRelease:
        release = ModelRelease(
            version=VersionId(id=version_id, seq=len(self.releases) + 1),
            release_time=release_time,
            download_ms=download_ms,
            server_update_ms=server_update_ms,
        )
        self.releases.append(release)
        return release

    @property
    def latest(self) -> VersionId:
        return self.releases[-1].version


@dataclass(slots=True)
class DbRow:
    audio: tuple[AudioSample, ...] = ()
    # ascending by version seq, one entry per distinct version
    profiles: list[UserProfile] = field(default_factory=list)


class DatabaseNode:
    """Backend profile store. Operations are free in simulated time; the
    network hops to reach it are not."""

    def __init__(self) -> None:
        self.rows: dict[str, DbRow] = {}

    def store_audio(self, user_id: str, samples: tuple[AudioSample, ...]) -> None:
        row = self.rows.setdefault(user_id, DbRow())
        row.audio = samples

    def fetch(self, user_id: str) -> DbRow | None:
        return self.rows.get(user_id)

    def put_profile(self, profile: UserProfile, retain: int | None) -> None:
        """Insert or replace the profile for its version, keep the list
        ascending by seq, then drop lowest-seq entries beyond ``retain``
        (None means unbounded)."""
        row = self.rows.get(profile.user_id)
        if row is None:
            raise UnknownUserError(
                f"profile put for unknown user {profile.user_id!r}"
            )
        kept = [p for p in row.profiles if p.version.seq != profile.version.seq]
        kept.append(profile)
        kept.sort(key=lambda p: p.version.seq)
        if retain is not None:
            while len(kept) > retain:
                kept.pop(0)
        row.profiles = kept


class CloudServerNode:
    """One cloud machine running one engine (double-version deployments give
    each of the two fixed groups its own version). While an update is in
    flight the old engine keeps running; the swap happens at the completion
    event."""

    __slots__ = ("server_id", "engine", "updating_until", "pending_engine", "group")

    def __init__(self, server_id: str, engine: EngineInstance, group: int = 0):
        self.server_id = server_id
        self.engine = engine
        self.updating_until: int | None = None
        self.pending_engine: EngineInstance | None = None
        self.group = group

    @property
    def updating(self) -> bool:
        return self.updating_until is not None

    def begin_update(self, new_engine: EngineInstance, completes_at: int) -> None:
        self.pending_engine = new_engine
        self.updating_until = completes_at

    def complete_update(self) -> None:
        assert self.pending_engine is not None
        self.engine = self.pending_engine
        self.pending_engine = None
        self.updating_until = None


class FrontendNode:
    """Reverse proxy and dispatcher. Owns the round-robin cursor, the random
    stream used for RANDOM dispatch, and (when the sync-table mitigation is
    on) the per-server served-version table."""

    def __init__(
        self,
        server_ids: list[str],
        policy: DispatchPolicy,
        rng: SimRng,
        version_table: dict[str, set[VersionId]] | None = None,
    ):
        self.server_ids = list(server_ids)
        self.policy = policy
        self.rng = rng
        self.version_table = version_table
        self.maintenance = False
        self._rr_cursor = 0

    def choose(self, user_id: str, eligible: list[str]) -> str:
        """Apply the dispatch policy over ``eligible`` (a subset of all
        servers, in id order). HASH_BY_USER hashes over the full server list
        by definition, so a filtered-out hash pick is a dispatch failure."""
        if not eligible:
            raise NoEligibleServerError(f"no eligible server for {user_id!r}")
        if self.policy is DispatchPolicy.HASH_BY_USER:
            pick = self.server_ids[
                fnv1a64(user_id.encode("utf-8")) % len(self.server_ids)
            ]
            if pick not in eligible:
                raise NoEligibleServerError(
                    f"hash pick {pick!r} is not eligible for {user_id!r}"
                )
            return pick
        if self.policy is DispatchPolicy.RANDOM:
            return eligible[self.rng.randrange(len(eligible))]
        # ROUND_ROBIN: cycle the full id order, skip ineligible entries
        n = len(self.server_ids)
        for step in range(n):
            candidate = self.server_ids[(self._rr_cursor + step) % n]
            if candidate in eligible:
                self._rr_cursor = (self._rr_cursor + step + 1) % n
                return candidate
        raise NoEligibleServerError(f"no eligible server for {user_id!r}")

    def dispatch(self, user_id: str, required_version: VersionId | None = None) -> str:
        """Pick a server for a request. With a version table and a required
        version, only servers whose table entry contains that version are
        eligible."""
        if self.version_table is not None and required_version is not None:
            eligible = [
                s
                for s in self.server_ids
                if required_version in self.version_table[s]
            ]
        else:
            eligible = self.server_ids
        return self.choose(user_id, eligible)


class DeviceNode:
    """End-user device. Server-side deployments use it only as the request
    origin; device and hybrid deployments also store audio, profiles and (for
    the on-device strategy) the local engine's model."""

    __slots__ = (
        "device_id",
        "owner_users",
        "local_model",
        "stored_audio",
        "stored_profiles",
        "updating",
        "deferred",
        "recheck_after_update",
        "bg_enroll_inflight",
    )

    def __init__(self, device_id: str, owner_users: list[str], local_model: VersionId):
        self.device_id = device_id
        self.owner_users = list(owner_users)
        self.local_model = local_model
        self.stored_audio: dict[str, tuple[AudioSample, ...]] = {}
        self.stored_profiles: dict[str, list[UserProfile]] = {}
        self.updating = False
        self.deferred: list = []
        self.recheck_after_update = False
        self.bg_enroll_inflight: set[str] = set()

    def profiles_for(self, user_id: str) -> list[UserProfile]:
        return self.stored_profiles.get(user_id, [])

    def newest_profile(self, user_id: str) -> UserProfile | None:
        profiles = self.stored_profiles.get(user_id)
        return profiles[-1] if profiles else None

    def store_profile(self, profile: UserProfile, cap: int) -> None:
        """Keep at most ``cap`` profiles per user, newest versions win, one
        entry per distinct version, ascending by seq."""
        kept = [
            p
            for p in self.stored_profiles.get(profile.user_id, [])
            if p.version.seq != profile.version.seq
        ]
        kept.append(profile)
        kept.sort(key=lambda p: p.version.seq)
        while len(kept) > cap:
            kept.pop(0)
        self.stored_profiles[profile.user_id] = kept
