"""Deterministic discrete-event kernel.

Time is an integer number of microseconds. Events at equal time are
dispatched in the order they were scheduled.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, TextIO

from .errors import BudgetExceeded, InvalidOperation, UnknownEntity

PACKET_ARRIVAL = "packet-arrival"
TIMER_FIRED = "timer-fired"
MOBILITY_TRIGGER = "mobility-trigger"
STATS_TICK = "stats-tick"
SCENARIO_ACTION = "scenario-action"

EVENT_KINDS = frozenset(
    {PACKET_ARRIVAL, TIMER_FIRED, MOBILITY_TRIGGER, STATS_TICK, SCENARIO_ACTION}
)

Handler = Callable[["Event"], None]


@dataclass(frozen=True)
class Event:
    time: int
    seq: int
    target: str
    kind: str
    payload: Any = field(default=None, compare=False)


class Simulator:
    """Single-threaded event scheduler with a seeded RNG.

    Entities register a handler under an id; they interact only by
    scheduling events for each other.
    """

    def __init__(self, seed: int = 0, trace: Optional[TextIO] = None):
        self.now = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._handlers: dict[str, Handler] = {}
        self._cancelled: set[int] = set()
        self._trace_out = trace
        self._digest = hashlib.sha256()
        self.dispatched = 0

    # entities ------------------------------------------------------------
    def register(self, entity_id: str, handler: Handler) -> None:
        if entity_id in self._handlers:
            raise InvalidOperation(f"entity {entity_id!r} already registered")
        self._handlers[entity_id] = handler

    def unregister(self, entity_id: str) -> None:
        self._handlers.pop(entity_id, None)

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self._handlers

    # scheduling ----------------------------------------------------------
    def schedule(self, target: str, delay: int, kind: str, payload: Any = None) -> int:
        """Enqueue an event ``delay`` microseconds from now; returns its id."""
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        if target not in self._handlers:
            raise UnknownEntity(target)
        seq = self._seq
        self._seq += 1
        ev = Event(self.now + int(delay), seq, target, kind, payload)
        heapq.heappush(self._queue, (ev.time, seq, ev))
        return seq

    def call_later(self, target: str, delay: int, fn: Callable[[], None]) -> int:
        """Schedule a timer whose payload is a zero-argument callback."""
        return self.schedule(target, delay, TIMER_FIRED, fn)

    def cancel(self, event_id: int) -> None:
        self._cancelled.add(event_id)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def pending_events(self):
        """Queued, non-cancelled events in dispatch order."""
        return [ev for _, seq, ev in sorted(self._queue) if seq not in self._cancelled]

    def peek_time(self) -> Optional[int]:
        self._drop_cancelled_head()
        return self._queue[0][0] if self._queue else None

    # running -------------------------------------------------------------
    def run_until(self, t: int, max_events: Optional[int] = None) -> int:
        if t < self.now:
            raise ValueError(f"cannot run backwards to {t} (now={self.now})")
        count = 0
        while True:
            self._drop_cancelled_head()
            if not self._queue or self._queue[0][0] > t:
                break
            if max_events is not None and count >= max_events:
                raise BudgetExceeded(f"{count} events dispatched before t={t}")
            self._dispatch(heapq.heappop(self._queue)[2])
            count += 1
        self.now = t
        return count

    def run_to_quiescence(self, max_events: int) -> int:
        if max_events <= 0:
            raise ValueError("max_events must be positive")
        count = 0
        while True:
            self._drop_cancelled_head()
            if not self._queue:
                return count
            if count >= max_events:
                raise BudgetExceeded(f"queue still holds {len(self._queue)} events")
            self._dispatch(heapq.heappop(self._queue)[2])
            count += 1

    def _drop_cancelled_head(self) -> None:
        while self._queue and self._queue[0][1] in self._cancelled:
            self._cancelled.discard(heapq.heappop(self._queue)[1])

    def _dispatch(self, ev: Event) -> None:
        self.now = ev.time
        line = json.dumps(
            {"time": ev.time, "seq": ev.seq, "target": ev.target, "kind": ev.kind},
            sort_keys=True,
        )
        self._digest.update(line.encode())
        self._digest.update(b"\n")
        if self._trace_out is not None:
            self._trace_out.write(line + "\n")
        self.dispatched += 1
        handler = self._handlers.get(ev.target)
        if handler is None:
            # target went away after the event was queued
            return
        if ev.kind == TIMER_FIRED and callable(ev.payload):
            ev.payload()
        else:
            handler(ev)

    def trace_hash(self) -> str:
        return self._digest.hexdigest()
