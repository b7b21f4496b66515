"""Deterministic mock speech engine.

The engine stands in for feature extraction plus a speaker encoder. Instead
of computing an embedding it hashes the enrollment audio with FNV-1a, and it
scores a candidate 1.0 exactly when the runtime audio was spoken by that
candidate. What it models faithfully is the single property under study: a
profile can only be consumed by the model version that produced it, and
feeding it to any other version is a hard failure, not a degraded score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .domain import (
    AudioSample,
    EmptyAudioError,
    EmptyUserIdError,
    RecognitionResult,
    UserProfile,
    VersionId,
    VersionMismatchError,
    result_from_score,
)

FNV64_OFFSET = 14695981039346656037
FNV64_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """FNV-1a over ``data``, 64-bit."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def profile_digest(model_id: str, user_id: str, seeds: Iterable[int]) -> int:
    """Digest of an enrollment: model id, NUL, user id, NUL, then every audio
    seed as 8 big-endian bytes in ascending order. Seed order in the input
    must not matter, hence the sort."""
    payload = bytearray(model_id.encode("utf-8"))
    payload.append(0)
    payload += user_id.encode("utf-8")
    payload.append(0)
    for seed in sorted(s & _MASK64 for s in seeds):
        payload += seed.to_bytes(8, "big")
    return fnv1a64(bytes(payload))


@dataclass(frozen=True, slots=True)
class EngineInstance:
    """One loaded model. Server nodes hold one (or two) of these; devices hold
    exactly one. Costs are carried here so callers can charge simulated time
    without reaching back into the scenario."""

    model: VersionId
    enroll_cost_ms_per_sample: int
    runtime_cost_ms: int

    def enroll(self, user_id: str, samples: tuple[AudioSample, ...]) -> UserProfile:
        if not user_id:
            raise EmptyUserIdError("enroll called with an empty user id")
        if not samples:
            raise EmptyAudioError(f"enroll for {user_id!r} called with no audio")
        digest = profile_digest(self.model.id, user_id, (s.seed for s in samples))
        return UserProfile(user_id=user_id, version=self.model, digest=digest)

    def enroll_duration_ms(self, sample_count: int) -> int:
        return sample_count * self.enroll_cost_ms_per_sample

    def recognize(
        self,
        runtime_audio: AudioSample,
        profiles: Mapping[str, UserProfile],
    ) -> dict[str, RecognitionResult]:
        """Score every candidate profile against the runtime audio.

        Raises VersionMismatchError if any profile was produced by a model
        other than this instance. That is the tripwire every strategy in this
        package exists to keep silent.
        """
        if not profiles:
            raise EmptyAudioError("recognize called with no candidate profiles")
        for user_id, profile in profiles.items():
            if profile.version != self.model:
                raise VersionMismatchError(
                    f"profile for {user_id!r} is at {profile.version.id!r} "
                    f"but the engine runs {self.model.id!r}"
                )
        return {
            user_id: result_from_score(
                1.0 if profile.user_id == runtime_audio.speaker_id else 0.0
            )
            for user_id, profile in profiles.items()
        }
