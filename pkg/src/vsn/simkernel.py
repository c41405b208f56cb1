"""Deterministic discrete-event core.

Time is an integer count of microseconds since the start of the run and only
moves when an event is dispatched. Every network transfer goes through
:meth:`Simulator.send`, which applies the link model and appends an entry to
the message log used by the invariant checks.
"""

from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable

log = logging.getLogger(__name__)

US_PER_MS = 1000
US_PER_S = 1_000_000


def ms(value: float) -> int:
    """Milliseconds to simulated microseconds."""
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


class SimError(Exception):
    pass


class PastTime(SimError):
    pass


class UnknownNode(SimError):
    pass


class LinkDown(SimError):
    pass


@dataclass(frozen=True)
class LinkModel:
    """Per-hop delays in microseconds.

    ``session_setup_delay`` is paid once per ordered (sender, receiver,
    channel) session; ``jitter_max`` bounds a seeded uniform integer jitter.
    """

    propagation_delay: int = 0
    processing_delay: int = 0
    session_setup_delay: int = 0
    jitter_max: int = 0
    jitter_seed: int = 0

    def __post_init__(self):
        for name in ("propagation_delay", "processing_delay", "session_setup_delay", "jitter_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def base_delay(self) -> int:
        return self.propagation_delay + self.processing_delay


@dataclass(order=True)
class Event:
    fire_at: int
    sequence: int
    target: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


@dataclass(frozen=True)
class Timer:
    """Payload for a self-scheduled callback."""

    callback: Callable[[], Any]
    label: str = "timer"


@dataclass
class Delivery:
    """A message as it lands in a mailbox."""

    src: str
    dst: str
    msg: Any
    channel: Any
    sent_at: int
    deliver_at: int
    log_index: int
    meta: dict = field(default_factory=dict)


class Simulator:
    """Single-threaded event loop owning clock, queue, mailboxes and sessions."""

    def __init__(self, link: LinkModel | None = None):
        self.now = 0
        self.default_link = link or LinkModel()
        self._links: dict[tuple[str, str], LinkModel] = {}
        self._rngs: dict[int, random.Random] = {}
        self._down: set[tuple[str, str]] = set()
        self._queue: list[Event] = []
        self._seq = 0
        self.handlers: dict[str, Callable[[Delivery], Any] | None] = {}
        self.mailboxes: dict[str, list[Delivery]] = {}
        # (src, dst, channel) -> time the session was opened
        self.sessions: dict[tuple, int] = {}
        # (event id, fire_at, target) for every dispatched event
        self.trace: list[tuple[int, int, str]] = []
        # network transfers, local interface crossings and notes, in append order
        self.log: list[dict] = []

    # -- topology -----------------------------------------------------------

    def add_node(self, node_id: str, handler: Callable[[Delivery], Any] | None = None) -> None:
        self.handlers[node_id] = handler
        self.mailboxes.setdefault(node_id, [])

    def set_handler(self, node_id: str, handler) -> None:
        self._require(node_id)
        self.handlers[node_id] = handler

    def set_link(self, src: str, dst: str, model: LinkModel, symmetric: bool = True) -> None:
        self._links[(src, dst)] = model
        if symmetric:
            self._links[(dst, src)] = model

    def link_for(self, src: str, dst: str) -> LinkModel:
        return self._links.get((src, dst), self.default_link)

    def set_link_down(self, src: str, dst: str, down: bool = True) -> None:
        if down:
            self._down.add((src, dst))
        else:
            self._down.discard((src, dst))

    def _require(self, node_id: str) -> None:
        if node_id not in self.handlers:
            raise UnknownNode(node_id)

    # -- scheduling ---------------------------------------------------------

    def schedule(self, fire_at: int, target: str, payload: Any = None) -> int:
        if fire_at < self.now:
            raise PastTime(f"fire_at {fire_at} < clock {self.now}")
        self._seq += 1
        heapq.heappush(self._queue, Event(fire_at, self._seq, target, payload))
        return self._seq

    def call_at(self, fire_at: int, target: str, callback: Callable[[], Any], label: str = "timer") -> int:
        return self.schedule(fire_at, target, Timer(callback, label))

    def call_later(self, delay: int, target: str, callback: Callable[[], Any], label: str = "timer") -> int:
        return self.call_at(self.now + delay, target, callback, label)

    def _jitter(self, link: LinkModel) -> int:
        if link.jitter_max == 0:
            return 0
        rng = self._rngs.get(id(link))
        if rng is None:
            rng = self._rngs[id(link)] = random.Random(link.jitter_seed)
        return rng.randint(0, link.jitter_max)

    def send(
        self,
        src: str,
        dst: str,
        msg: Any,
        channel: Any = None,
        *,
        response: bool = False,
        meta: dict | None = None,
    ) -> int:
        """Put ``msg`` on the wire and return its delivery time.

        The first request on a (src, dst, channel) session pays the setup
        delay. A response rides the session of the request it answers.
        """
        self._require(src)
        self._require(dst)
        if (src, dst) in self._down:
            raise LinkDown(f"{src}->{dst}")
        link = self.link_for(src, dst)
        delay = link.base_delay
        key = (src, dst, channel)
        setup = False
        if not response and key not in self.sessions:
            self.sessions[key] = self.now
            delay += link.session_setup_delay
            setup = link.session_setup_delay > 0
        delay += self._jitter(link)
        deliver_at = self.now + delay
        index = len(self.log)
        entry = {
            "i": index,
            "type": "msg",
            "sent_at": self.now,
            "deliver_at": deliver_at,
            "src": src,
            "dst": dst,
            "channel": _label(channel),
            "setup": setup,
        }
        if meta:
            entry.update(meta)
        if isinstance(msg, (bytes, bytearray)):
            entry["bytes"] = bytes(msg).hex()
        self.log.append(entry)
        delivery = Delivery(src, dst, msg, channel, self.now, deliver_at, index, dict(meta or {}))
        self.schedule(deliver_at, dst, delivery)
        return deliver_at

    def record_local(self, node: str, channel: Any, msg: Any = None, meta: dict | None = None) -> int:
        """Log an in-process interface crossing (no network hop)."""
        index = len(self.log)
        entry = {
            "i": index,
            "type": "local",
            "sent_at": self.now,
            "deliver_at": self.now,
            "src": node,
            "dst": node,
            "channel": _label(channel),
        }
        if meta:
            entry.update(meta)
        if isinstance(msg, (bytes, bytearray)):
            entry["bytes"] = bytes(msg).hex()
        self.log.append(entry)
        return index

    def note(self, kind: str, **fields) -> int:
        index = len(self.log)
        entry = {"i": index, "type": "note", "kind": kind, "at": self.now}
        entry.update(fields)
        self.log.append(entry)
        return index

    # -- running ------------------------------------------------------------

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        self.now = ev.fire_at
        self.trace.append((ev.sequence, ev.fire_at, ev.target))
        payload = ev.payload
        if isinstance(payload, Timer):
            payload.callback()
            return True
        if isinstance(payload, Delivery):
            self.mailboxes[ev.target].append(payload)
        handler = self.handlers.get(ev.target)
        if handler is not None:
            handler(payload)
        return True

    def run_until(self, t: int) -> int:
        if t < self.now:
            raise PastTime(f"run_until {t} < clock {self.now}")
        count = 0
        while self._queue and self._queue[0].fire_at <= t:
            self.step()
            count += 1
        self.now = t
        return count

    def run(self, limit: int | None = None) -> int:
        """Dispatch until the queue drains (or ``limit`` events)."""
        count = 0
        while self._queue and (limit is None or count < limit):
            self.step()
            count += 1
        return count


def _label(channel: Any):
    if channel is None:
        return None
    return getattr(channel, "value", channel)
