"""Delay metrics: HPD, OCD, FND and the virtualization overhead.

All values are virtual-time milliseconds measured at the sender side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

US_PER_MS = 1000


class MetricError(Exception):
    pass


class NoResponse(MetricError):
    pass


class NeverReady(MetricError):
    pass


class IncompleteRound(MetricError):
    pass


class ZeroBaseline(MetricError):
    pass


class MetricKind(str, Enum):
    HPD = "HPD"
    OCD = "OCD"
    FND = "FND"


@dataclass(frozen=True)
class MetricSample:
    kind: MetricKind
    value: float  # ms
    iteration: int = 0
    context: str = ""
    at: int = 0  # sim time (us) at which the sample closed
    refs: tuple[int, ...] = ()  # event-log indices the value derives from

    def __post_init__(self):
        if self.value < 0:
            raise MetricError("metric values are non-negative")


@dataclass
class PostExchange:
    """A Di POST as seen by its sender."""

    context: str
    sent_at: int
    received_at: int | None = None
    send_index: int | None = None
    receive_index: int | None = None


@dataclass
class OverlayTrace:
    overlay_id: str
    started_at: int
    ready_at: int | None = None
    start_index: int | None = None
    ready_index: int | None = None


@dataclass
class NotificationRound:
    context: str
    sent_at: int
    expected: list[str]
    replies: dict[str, int] = field(default_factory=dict)
    reply_index: dict[str, int] = field(default_factory=dict)
    send_index: int | None = None
    observations: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(p in self.replies for p in self.expected)


def _ms(us: int) -> float:
    return us / US_PER_MS


def measure_hpd(ex: PostExchange, iteration: int = 0) -> MetricSample:
    if ex.received_at is None:
        raise NoResponse(ex.context)
    refs = tuple(i for i in (ex.send_index, ex.receive_index) if i is not None)
    return MetricSample(MetricKind.HPD, _ms(ex.received_at - ex.sent_at), iteration, ex.context,
                        ex.received_at, refs)


def measure_ocd(trace: OverlayTrace, iteration: int = 0) -> MetricSample:
    if trace.ready_at is None:
        raise NeverReady(trace.overlay_id)
    refs = tuple(i for i in (trace.start_index, trace.ready_index) if i is not None)
    return MetricSample(MetricKind.OCD, _ms(trace.ready_at - trace.started_at), iteration,
                        trace.overlay_id, trace.ready_at, refs)


def measure_fnd(rnd: NotificationRound, iteration: int = 0) -> MetricSample:
    if not rnd.expected or not rnd.complete:
        missing = [p for p in rnd.expected if p not in rnd.replies]
        raise IncompleteRound(f"{rnd.context}: waiting on {missing}")
    last_peer = max(rnd.expected, key=lambda p: (rnd.replies[p], p))
    last = rnd.replies[last_peer]
    refs = tuple(i for i in (rnd.send_index, rnd.reply_index.get(last_peer)) if i is not None)
    return MetricSample(MetricKind.FND, _ms(last - rnd.sent_at), iteration, rnd.context, last, refs)


def overhead_pct(fnd_mean: float, hpd_mean: float) -> float:
    """Relative cost of the virtualized path over the direct one, in percent."""
    if hpd_mean <= 0:
        raise ZeroBaseline(hpd_mean)
    return 100.0 * (fnd_mean - hpd_mean) / hpd_mean


def mean(values) -> float:
    values = list(values)
    if not values:
        return math.nan
    return math.fsum(values) / len(values)
