"""Mock engine: hashing, enrollment, scoring, and the mismatch tripwire.

The digest reference values below were computed with an independent FNV-1a
implementation before this engine existed, so these tests are the anchor the
engine must hit, not a snapshot of its own output.
"""

import random

import pytest

from versim.domain import (
    AudioSample,
    EmptyAudioError,
    EmptyUserIdError,
    VersionId,
    VersionMismatchError,
)
from versim.engine import EngineInstance, fnv1a64, profile_digest

V1 = VersionId("V1", 1)
V2 = VersionId("V2", 2)
V3 = VersionId("V3", 3)


def _engine(model=V1):
    return EngineInstance(model=model, enroll_cost_ms_per_sample=10, runtime_cost_ms=5)


def _sample(speaker, seed):
    return AudioSample(speaker_id=speaker, duration_ms=1000, seed=seed)


def test_fnv1a64_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_profile_digest_reference_values():
    assert profile_digest("V2", "u1", [7]) == 10261338670014762554
    assert profile_digest("V3", "u1", [7]) == 11969827911593221833


def test_profile_digest_seed_order_is_irrelevant():
    assert profile_digest("V1", "u7", [3, 9]) == 2504644850314720542
    assert profile_digest("V1", "u7", [9, 3]) == 2504644850314720542


def test_digest_separates_model_user_and_audio():
    base = profile_digest("V1", "u1", [1, 2])
    assert profile_digest("V2", "u1", [1, 2]) != base
    assert profile_digest("V1", "u2", [1, 2]) != base
    assert profile_digest("V1", "u1", [1, 3]) != base


def test_enroll_produces_profile_at_engine_version():
    engine = _engine(V2)
    profile = engine.enroll("u1", (_sample("u1", 7),))
    assert profile.user_id == "u1"
    assert profile.version == V2
    assert profile.digest == 10261338670014762554


def test_enroll_rejects_empty_inputs():
    engine = _engine()
    with pytest.raises(EmptyUserIdError):
        engine.enroll("", (_sample("u1", 7),))
    with pytest.raises(EmptyAudioError):
        engine.enroll("u1", ())


def test_enroll_duration_scales_with_samples():
    engine = _engine()
    assert engine.enroll_duration_ms(0) == 0
    assert engine.enroll_duration_ms(3) == 30


def test_recognize_scores_speaker_match_only():
    engine = _engine()
    profiles = {
        "u1": engine.enroll("u1", (_sample("u1", 1),)),
        "u2": engine.enroll("u2", (_sample("u2", 2),)),
    }
    results = engine.recognize(_sample("u1", 99), profiles)
    assert results["u1"].score == 1.0 and results["u1"].accepted
    assert results["u2"].score == 0.0 and not results["u2"].accepted


def test_recognize_requires_profiles():
    with pytest.raises(EmptyAudioError):
        _engine().recognize(_sample("u1", 1), {})


def test_version_mismatch_is_a_hard_failure():
    old = _engine(V1).enroll("u1", (_sample("u1", 7),))
    with pytest.raises(VersionMismatchError):
        _engine(V2).recognize(_sample("u1", 8), {"u1": old})


def test_mismatch_checked_before_any_scoring():
    engine = _engine(V2)
    good = engine.enroll("u1", (_sample("u1", 1),))
    stale = _engine(V1).enroll("u2", (_sample("u2", 2),))
    with pytest.raises(VersionMismatchError):
        engine.recognize(_sample("u1", 3), {"u1": good, "u2": stale})


def test_enrollment_is_pure_and_order_free():
    """Same user, same audio set, same model: identical profile, regardless
    of sample order or how many times it runs."""
    rng = random.Random(20240816)
    engine = _engine(V3)
    for _ in range(200):
        user = f"u{rng.randrange(50):03d}"
        samples = [
            _sample(user, rng.getrandbits(64)) for _ in range(rng.randrange(1, 6))
        ]
        first = engine.enroll(user, tuple(samples))
        rng.shuffle(samples)
        second = engine.enroll(user, tuple(samples))
        assert first == second
        assert first.version == V3
