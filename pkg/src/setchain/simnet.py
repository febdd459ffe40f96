"""Deterministic discrete-event simulated network.

Time is a non-negative integer tick count (one tick is a logical
microsecond; ``TICKS_PER_SECOND`` converts).  All randomness comes from a
single seeded RNG, and simultaneous deliveries are ordered by a global
monotone sequence number, so a run is a pure function of the seed and the
scripted inputs.

Channels are reliable and authenticated: every sent message is delivered
exactly once, unmodified, and the receiver learns the true sender (each
process sends through its own :class:`NetHandle`, so the source field
cannot be spoofed).  Before ``gst`` delivery delays are drawn uniformly
from ``[latency_min, latency_max]``; from ``gst`` on they are additionally
clamped to ``post_gst_bound``.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass
from typing import Callable, Optional

from .core import ProcessId

SimTime = int
TICKS_PER_SECOND = 1_000_000

_ENVELOPE = 0
_TIMER = 1


class SimError(Exception):
    """Harness-level misuse of the network (unknown ids, bad times)."""


@dataclass(frozen=True)
class NetConfig:
    """Latency model and seed for one simulated network."""

    latency_min: int = 1
    latency_max: int = 5
    gst: int = 0
    post_gst_bound: int = 10
    rng_seed: int = 0
    proc_cost: int = 0  # receiver busy-time per delivered message

    def __post_init__(self) -> None:
        if not 0 <= self.latency_min <= self.latency_max:
            raise ValueError("need 0 <= latency_min <= latency_max")
        if self.gst < 0 or self.post_gst_bound <= 0 or self.proc_cost < 0:
            raise ValueError("gst, post_gst_bound, proc_cost out of range")


@dataclass(frozen=True)
class Envelope:
    """One in-flight message; never modified after sending."""

    src: ProcessId
    dst: ProcessId
    body: bytes
    sent_at: SimTime
    deliver_at: SimTime
    seq: int


@dataclass
class LogEntry:
    """One delivered message, recorded at its processing time."""

    t: SimTime
    src: ProcessId
    dst: ProcessId
    type: str
    size: int
    body: Optional[bytes] = None


class NetHandle:
    """A process's capability to use the network under its own identity."""

    def __init__(self, sim: "Simulation", pid: ProcessId):
        self._sim = sim
        self.pid = pid

    @property
    def now(self) -> SimTime:
        return self._sim.now

    def send(self, to: ProcessId, body: bytes) -> None:
        self._sim._send(self.pid, to, body)

    def schedule(self, at: SimTime, fn: Callable, *args) -> None:
        self._sim.schedule(at, fn, *args, pid=self.pid)

    def after(self, delay: SimTime, fn: Callable, *args) -> None:
        self.schedule(self._sim.now + delay, fn, *args)


def _default_classifier(body: bytes) -> str:
    return body[:1].hex() if body else "empty"


class Simulation:
    """The event loop: processes, envelopes, timers, and the delivery log."""

    def __init__(self, config: NetConfig, record_log: bool = True,
                 keep_bodies: bool = False):
        self.config = config
        self.rng = random.Random(config.rng_seed)
        self.now: SimTime = 0
        self.log: list[LogEntry] = []
        self.record_log = record_log
        self.keep_bodies = keep_bodies
        self.counts: dict[str, int] = {}
        self.delivered_total = 0
        self.frame_classifier: Callable[[bytes], str] = _default_classifier
        self.after_event: Optional[Callable[[ProcessId], None]] = None
        self._heap: list = []
        self._seq = 0
        self._handlers: dict[ProcessId, Callable[[ProcessId, bytes], None]] = {}
        self._busy_until: dict[ProcessId, SimTime] = {}

    # -- membership ---------------------------------------------------------

    def register(self, pid: ProcessId,
                 handler: Callable[[ProcessId, bytes], None]) -> NetHandle:
        if pid in self._handlers:
            raise SimError(f"duplicate registration for {pid!r}")
        if any(other.id == pid.id for other in self._handlers):
            raise SimError(f"process id {pid.id} already in use")
        self._handlers[pid] = handler
        self._busy_until[pid] = 0
        return NetHandle(self, pid)

    @property
    def processes(self) -> tuple[ProcessId, ...]:
        return tuple(self._handlers)

    # -- sending and timers -------------------------------------------------

    def _draw_delay(self) -> int:
        delay = self.rng.randint(self.config.latency_min, self.config.latency_max)
        if self.now >= self.config.gst:
            delay = min(delay, self.config.post_gst_bound)
        return delay

    def _send(self, frm: ProcessId, to: ProcessId, body: bytes) -> None:
        if frm not in self._handlers or to not in self._handlers:
            raise SimError(f"send between unregistered processes {frm!r} -> {to!r}")
        self._seq += 1
        env = Envelope(frm, to, body, self.now, self.now + self._draw_delay(), self._seq)
        heapq.heappush(self._heap, (env.deliver_at, env.seq, _ENVELOPE, env))

    def send_as(self, frm: ProcessId, to: ProcessId, body: bytes) -> None:
        """Trusted-harness send on behalf of ``frm`` (used by built-in services)."""
        self._send(frm, to, body)

    def schedule(self, at: SimTime, fn: Callable, *args,
                 pid: Optional[ProcessId] = None) -> None:
        if at < self.now:
            raise SimError(f"cannot schedule at {at} before now={self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, _TIMER, fn, args, pid))

    # -- running ------------------------------------------------------------

    def run_until(self, t: SimTime) -> list[LogEntry]:
        """Process every event with time <= t (inclusive); advance now to t."""
        start = len(self.log)
        while self._heap and self._heap[0][0] <= t:
            entry = heapq.heappop(self._heap)
            when, seq, kind = entry[0], entry[1], entry[2]
            if kind == _ENVELOPE:
                env: Envelope = entry[3]
                busy = self._busy_until[env.dst]
                if busy > when:
                    heapq.heappush(self._heap, (busy, seq, _ENVELOPE, env))
                    continue
                self.now = max(self.now, when)
                self._busy_until[env.dst] = self.now + self.config.proc_cost
                self._deliver(env)
            else:
                _, _, _, fn, args, pid = entry
                self.now = max(self.now, when)
                fn(*args)
                if pid is not None and self.after_event is not None:
                    self.after_event(pid)
        self.now = max(self.now, t)
        return self.log[start:]

    def _deliver(self, env: Envelope) -> None:
        self.delivered_total += 1
        tag = self.frame_classifier(env.body)
        self.counts[tag] = self.counts.get(tag, 0) + 1
        if self.record_log:
            self.log.append(LogEntry(self.now, env.src, env.dst, tag, len(env.body),
                                     env.body if self.keep_bodies else None))
        handler = self._handlers[env.dst]
        try:
            handler(env.src, env.body)
        except Exception as exc:
            raise SimError(
                f"handler for {env.dst!r} failed at t={self.now} on {tag} from "
                f"{env.src!r}: {exc}"
            ) from exc
        if self.after_event is not None:
            self.after_event(env.dst)

    def run_to_quiescence(self, horizon: Optional[SimTime] = None) -> SimTime:
        """Run until no events remain (or ``horizon``); returns final now."""
        while self._heap:
            nxt = self._heap[0][0]
            if horizon is not None and nxt > horizon:
                break
            self.run_until(nxt)
        return self.now

    def pending_events(self) -> int:
        return len(self._heap)

    def notify(self, pid: ProcessId) -> None:
        """Fire the after-event hook for a synchronous harness callback."""
        if self.after_event is not None:
            self.after_event(pid)

    # -- export -------------------------------------------------------------

    def export_jsonl(self, fp) -> None:
        """The delivery log as JSON lines: {t, from, to, type, size}."""
        for entry in self.log:
            fp.write(json.dumps(
                {"t": entry.t, "from": entry.src.id, "to": entry.dst.id,
                 "type": entry.type, "size": entry.size},
                sort_keys=True) + "\n")
