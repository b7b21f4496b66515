"""Discrete-event core: virtual clock, event queue, seeded randomness and the
link latency model.

Determinism contract: a run is a pure function of (scenario, seed). Time is
integer milliseconds. Events execute in (time, insertion sequence) order, so
ties resolve by who scheduled first. Every random draw comes from a named
SplitMix64 stream, and the trace is a pure function of the executed events.
"""

from __future__ import annotations

from dataclasses import dataclass
from heapq import heappop, heappush
from typing import Callable, Protocol

from .domain import SimulationError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class ScheduleInPastError(SimulationError):
    pass


class SimRng:
    """SplitMix64 stream. Small, fast, and easy to reproduce in any language,
    which is what keeps golden traces portable."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randrange(self, n: int) -> int:
        return self.next_u64() % n

    def uniform(self) -> float:
        """Uniform in [0, 1), 53 usable bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)


def node_stream(root_seed: int, node_index: int) -> SimRng:
    """Per-node stream: SplitMix64 seeded with root_seed XOR node_index."""
    return SimRng((root_seed ^ node_index) & _MASK64)


@dataclass(frozen=True, slots=True)
class LatencyModel:
    """One network link class. A sample always consumes exactly one draw, so
    stream positions do not depend on whether jitter happens to be zero."""

    base_ms: int
    jitter_ms: int

    def sample(self, rng: SimRng) -> int:
        return self.base_ms + rng.next_u64() % (self.jitter_ms + 1)


class Payload(Protocol):
    kind: str

    def summary(self) -> str: ...


class Simulator:
    """Single event queue over a virtual clock.

    The handler receives (target, payload) for every executed event. When a
    trace list is supplied, one tab-separated line is appended per executed
    event before its handler runs.
    """

    __slots__ = ("_handler", "_queue", "_seq", "_now", "trace", "current")

    def __init__(
        self,
        handler: Callable[[str, Payload], None],
        trace: list[str] | None = None,
    ):
        self._handler = handler
        self._queue: list[tuple[int, int, str, Payload]] = []
        self._seq = 0
        self._now = 0
        self.trace = trace
        # (at, seq) of the event being executed; survives an exception so a
        # failed run can report where it died.
        self.current: tuple[int, int] | None = None

    @property
    def now(self) -> int:
        return self._now

    def schedule(self, at: int, target: str, payload: Payload) -> None:
        if at < self._now:
            raise ScheduleInPastError(
                f"event {payload.kind!r} scheduled at {at} but the clock is at {self._now}"
            )
        heappush(self._queue, (at, self._seq, target, payload))
        self._seq += 1

    def schedule_in(self, delay: int, target: str, payload: Payload) -> None:
        self.schedule(self._now + delay, target, payload)

    def run_until(self, t_end: int) -> None:
        """Execute every event with time <= t_end, then set the clock to
        t_end. Later events stay queued."""
        queue = self._queue
        trace = self.trace
        while queue and queue[0][0] <= t_end:
            at, seq, target, payload = heappop(queue)
            self._now = at
            self.current = (at, seq)
            if trace is not None:
                trace.append(
                    f"{at}\t{seq}\t{target}\t{payload.kind}\t{payload.summary()}"
                )
            self._handler(target, payload)
        self._now = t_end
