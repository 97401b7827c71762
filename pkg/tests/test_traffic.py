import numpy as np
import pytest
from hypothesis import given, strategies as st

from ponsim.model import BusyHourConfig
from ponsim.traffic import (
    MEAN_PKT_BYTES,
    BusyWindow,
    TrafficSource,
    effective_rate,
    read_arrival_trace,
    schedule_busy_windows,
    stream,
    write_arrival_trace,
)

NO_BUSY = BusyHourConfig(ratio_b=1.0)


def source(rate, onu=0, seed=7, busy=NO_BUSY):
    return TrafficSource(onu, rate, busy, stream(seed, 0, onu), window_rng=stream(seed, 1, onu))


def test_empty_horizon():
    assert schedule_busy_windows(BusyHourConfig(), 0, stream(0, 1, 0)) == []


def test_degenerate_recurrence():
    cfg = BusyHourConfig(p_min_us=100, p_max_us=100, l_min_us=50, l_max_us=50)
    got = schedule_busy_windows(cfg, 300, stream(0, 1, 0))
    # start-to-start spacing of 100: starts at 100 and 200; 300 is at the horizon
    assert got == [BusyWindow(100, 150), BusyWindow(200, 250)]


def test_overlap_pushed_to_previous_end():
    cfg = BusyHourConfig(p_min_us=10, p_max_us=10, l_min_us=30, l_max_us=30)
    got = schedule_busy_windows(cfg, 100, stream(0, 1, 0))
    assert got[:3] == [BusyWindow(10, 40), BusyWindow(40, 70), BusyWindow(70, 100)]


@pytest.mark.parametrize("seed", range(50))
def test_default_windows_in_10ms(seed):
    ws = schedule_busy_windows(BusyHourConfig(), 10_000, stream(seed, 1, 3))
    assert 3 <= len(ws) <= 4
    for w in ws:
        assert w.end_us <= 10_000
        if w.end_us < 10_000:
            assert 500 <= w.end_us - w.start_us <= 1000
    assert 2000 <= ws[0].start_us <= 3000
    for a, b in zip(ws, ws[1:]):
        assert 2000 <= b.start_us - a.start_us <= 3000


def test_effective_rate():
    ws = [BusyWindow(100, 200)]
    assert effective_rate(150, 0.03, ws, 3) == pytest.approx(0.09)
    assert effective_rate(50, 0.03, ws, 3) == 0.03
    assert effective_rate(200, 0.03, ws, 3) == 0.03
    assert all(effective_rate(t, 0.03, ws, 1) == 0.03 for t in (0, 150, 500))


def test_zero_rate_has_no_arrivals():
    src = source(0.0)
    assert src.next_arrival() is None
    gen, size = src.arrivals(10**9)
    assert gen.size == 0 and size.size == 0


@pytest.fixture(scope="module")
def million():
    src = source(0.035, seed=99)
    # 1e6 packets at 0.035 Gbps / 791 B take about 1.81e11 ns
    gen, size = src.arrivals(181_000_000_000)
    assert gen.size > 990_000
    return gen, size, 181_000_000_000


def test_byte_rate_within_1pct(million):
    gen, size, horizon = million
    rate_gbps = size.sum() * 8 / horizon
    assert abs(rate_gbps / 0.035 - 1) < 0.01


def test_mean_size_within_1pct(million):
    _, size, _ = million
    assert abs(size.mean() / 791.0 - 1) < 0.01
    assert MEAN_PKT_BYTES == 791.0
    assert size.min() >= 64 and size.max() <= 1518


def test_poisson_dispersion(million):
    gen, _, horizon = million
    counts = np.bincount((gen // 1_000_000).astype(np.int64), minlength=horizon // 1_000_000)
    counts = counts[: horizon // 1_000_000]
    ratio = counts.var() / counts.mean()
    assert 0.95 <= ratio <= 1.05


def test_busy_hours_raise_rate():
    busy = BusyHourConfig(ratio_b=3.0)
    gen, size = source(0.035, busy=busy, seed=5).arrivals(2_000_000_000)
    # busy fraction is about 750 / 2500 of the time
    expected = 0.035 * (1 + 2 * 0.3)
    assert abs(size.sum() * 8 / 2e9 / expected - 1) < 0.05


def test_rate_inside_windows():
    busy = BusyHourConfig(ratio_b=4.0)
    src = source(0.5, busy=busy, seed=11)
    gen, _ = src.arrivals(400_000_000)
    inside = np.zeros(gen.size, bool)
    span = 0.0
    for w in src.windows:
        s, e = w.start_us * 1000, min(w.end_us * 1000, 4e8)
        if s >= 4e8:
            break
        inside |= (gen >= s) & (gen < e)
        span += e - s
    r_in = inside.sum() / span
    r_out = (~inside).sum() / (4e8 - span)
    assert r_in / r_out == pytest.approx(4.0, rel=0.05)


def test_deterministic_per_onu():
    a = source(0.05, onu=3, seed=42).arrivals(50_000_000)
    b = source(0.05, onu=3, seed=42).arrivals(50_000_000)
    c = source(0.05, onu=4, seed=42).arrivals(50_000_000)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0][:50], c[0][:50])


@given(st.integers(1, 10**8), st.integers(0, 2**63 - 1))
def test_nothing_beyond_horizon(horizon, seed):
    gen, _ = source(1.0, seed=seed, busy=BusyHourConfig()).arrivals(horizon)
    assert gen.size == 0 or gen.max() <= horizon
    assert np.all(np.diff(gen) >= 0)


def test_scalar_path_matches_vector_statistics():
    busy = BusyHourConfig()
    src = source(0.2, busy=busy, seed=3)
    horizon = 100_000_000
    times = []
    while True:
        nxt = src.next_arrival(horizon_ns=horizon)
        if nxt is None:
            break
        times.append(nxt[0])
        assert nxt[1].generated_at_ns == nxt[0]
    assert np.all(np.diff(times) >= 0)
    vec, _ = source(0.2, busy=busy, seed=4).arrivals(horizon)
    assert len(times) == pytest.approx(vec.size, rel=0.05)


def test_scalar_ids_increase():
    src = source(0.2)
    ids = [src.next_arrival()[1].id for _ in range(5)]
    assert ids == [0, 1, 2, 3, 4]


def test_trace_round_trip(tmp_path):
    rows = [(0, 10, 64), (3, 25, 1518)]
    p = tmp_path / "t.csv"
    write_arrival_trace(p, rows)
    assert read_arrival_trace(p) == rows
    assert p.read_text().splitlines()[0] == "onu_id,generated_at_ns,size_bytes"
