import math

import pytest
from hypothesis import given, strategies as st

from vsn.harness.metrics import (IncompleteRound, MetricError, MetricKind, MetricSample, NeverReady,
                                 NoResponse, NotificationRound, OverlayTrace, PostExchange,
                                 ZeroBaseline, mean, measure_fnd, measure_hpd, measure_ocd,
                                 overhead_pct)


def test_overhead_published_figures():
    # (19.58 - 18.96) / 18.96 = 0.0327004...
    assert abs(overhead_pct(19.58, 18.96) - 3.27) <= 0.005


@pytest.mark.parametrize("fnd,hpd,want", [(15, 10, 50.0), (10, 10, 0.0), (5, 10, -50.0), (19, 19, 0.0)])
def test_overhead_by_hand(fnd, hpd, want):
    assert overhead_pct(fnd, hpd) == want


def test_overhead_zero_baseline():
    with pytest.raises(ZeroBaseline):
        overhead_pct(1.0, 0.0)


@given(st.floats(0.01, 1e6), st.floats(0.01, 1e6))
def test_overhead_inverse(fnd, hpd):
    assert hpd * (1 + overhead_pct(fnd, hpd) / 100) == pytest.approx(fnd, rel=1e-9, abs=1e-12 * hpd)


def test_mean():
    assert mean([18.96]) == 18.96
    assert mean([1, 2, 3, 4]) == 2.5
    assert math.isnan(mean([]))


def test_measure_hpd():
    s = measure_hpd(PostExchange("a->b", 1000, 19_960, 3, 7), iteration=2)
    assert s.kind is MetricKind.HPD and s.value == 18.96 and s.refs == (3, 7) and s.iteration == 2
    with pytest.raises(NoResponse):
        measure_hpd(PostExchange("a->b", 0))


def test_measure_ocd():
    s = measure_ocd(OverlayTrace("o", 5_000, 1_988_000))
    assert s.value == 1983.0 and s.at == 1_988_000
    with pytest.raises(NeverReady):
        measure_ocd(OverlayTrace("o", 5_000))


def test_measure_fnd_uses_last_reply():
    rnd = NotificationRound("sensor-05", 100, ["p1", "p2", "p3"], send_index=0)
    for peer, at, idx in (("p1", 9_000, 4), ("p3", 19_680, 9), ("p2", 12_000, 6)):
        rnd.replies[peer] = at
        rnd.reply_index[peer] = idx
    s = measure_fnd(rnd)
    assert s.value == 19.58 and s.refs == (0, 9)


def test_measure_fnd_incomplete():
    rnd = NotificationRound("x", 0, ["p1", "p2"], replies={"p1": 10})
    assert not rnd.complete
    with pytest.raises(IncompleteRound):
        measure_fnd(rnd)
    with pytest.raises(IncompleteRound):
        measure_fnd(NotificationRound("x", 0, []))


def test_negative_sample_rejected():
    with pytest.raises(MetricError):
        MetricSample(MetricKind.HPD, -0.001)
