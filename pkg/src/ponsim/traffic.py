"""Per-ONU packet generation: Poisson arrivals whose rate is raised during busy hours.

Rates are piecewise constant (base rate outside busy windows, ``b`` times
base inside), so arrivals are produced exactly by a time change: a unit-rate
Poisson process in integrated-rate space is mapped back through the
piecewise-linear cumulative intensity.
"""

from __future__ import annotations

import bisect
import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .model import PKT_MAX_BYTES, PKT_MIN_BYTES, BusyHourConfig, Packet

MEAN_PKT_BYTES = (PKT_MIN_BYTES + PKT_MAX_BYTES) / 2  # 791.0

# independent stream families; the second spawn-key element is the ONU (or group) id
STREAM_ARRIVALS = 0
STREAM_WINDOWS = 1
STREAM_RTT = 2
STREAM_GROUP_WINDOWS = 3


def stream(seed: int, family: int, index: int) -> np.random.Generator:
    """Deterministic generator for (seed, family, index), independent of every other index."""
    ss = np.random.SeedSequence(seed & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(family, index))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, slots=True)
class BusyWindow:
    start_us: float
    end_us: float


def _window_stream(cfg: BusyHourConfig, rng: np.random.Generator) -> Iterator[BusyWindow]:
    if cfg.l_max_us <= 0:  # zero-length windows never raise the rate
        return
    prev_start = prev_end = 0.0
    while True:
        # spacing is start to start; a window never overlaps its predecessor
        start = max(prev_start + rng.uniform(cfg.p_min_us, cfg.p_max_us), prev_end)
        end = start + rng.uniform(cfg.l_min_us, cfg.l_max_us)
        prev_start, prev_end = start, end
        if end > start:
            yield BusyWindow(start, end)


def schedule_busy_windows(cfg: BusyHourConfig, horizon_us: float, rng: np.random.Generator) -> list[BusyWindow]:
    """Busy windows in [0, horizon_us).

    Window k starts U[p_min, p_max] after window k-1 started (pushed back to
    its end if they would overlap) and lasts U[l_min, l_max]. The last window
    is clipped at the horizon.
    """
    out: list[BusyWindow] = []
    if horizon_us <= 0:
        return out
    for w in _window_stream(cfg, rng):
        if w.start_us >= horizon_us:
            break
        out.append(BusyWindow(w.start_us, min(w.end_us, horizon_us)))
        if w.end_us >= horizon_us:
            break
    return out


def effective_rate(t_us: float, base_rate: float, windows: list[BusyWindow], b: float) -> float:
    i = bisect.bisect_right([w.start_us for w in windows], t_us) - 1
    if i >= 0 and windows[i].start_us <= t_us < windows[i].end_us:
        return base_rate * b
    return base_rate


def packets_per_ns(rate_gbps: float) -> float:
    # Gbps == bits per ns
    return rate_gbps / (8.0 * MEAN_PKT_BYTES)


@dataclass
class TrafficSource:
    """One ONU's arrival process.

    Busy windows are drawn lazily from ``window_rng`` unless a fixed
    ``windows`` list is supplied (shared-per-group mode).
    """

    onu_id: int
    base_rate_gbps: float
    busy: BusyHourConfig
    rng: np.random.Generator
    window_rng: Optional[np.random.Generator] = None
    windows: list[BusyWindow] = field(default_factory=list)
    ids: Iterator[int] = field(default_factory=itertools.count)
    _clock_ns: float = 0.0
    _win_iter: Optional[Iterator[BusyWindow]] = None

    def __post_init__(self):
        if self.window_rng is not None:
            self._win_iter = _window_stream(self.busy, self.window_rng)

    def _extend_windows(self, until_ns: float) -> None:
        if self._win_iter is None:
            return
        until_us = until_ns / 1000.0
        while not self.windows or self.windows[-1].start_us <= until_us:
            w = next(self._win_iter, None)
            if w is None:
                self._win_iter = None
                return
            self.windows.append(w)

    def _segment(self, t_ns: float) -> tuple[float, float]:
        """(rate in packets/ns, end of the constant-rate segment containing t)."""
        self._extend_windows(t_ns)
        lam = packets_per_ns(self.base_rate_gbps)
        # compare in ns, the same units as the returned boundary, so a
        # boundary hit always advances to the next segment
        starts = [w.start_us * 1000.0 for w in self.windows]
        i = bisect.bisect_right(starts, t_ns) - 1
        if i >= 0 and t_ns < self.windows[i].end_us * 1000.0:
            return lam * self.busy.ratio_b, self.windows[i].end_us * 1000.0
        if i + 1 < len(self.windows):
            return lam, self.windows[i + 1].start_us * 1000.0
        return lam, math.inf

    def next_arrival(self, t_now_ns: Optional[int] = None, horizon_ns: Optional[int] = None):
        """Next (t_arrival_ns, Packet) after max(t_now, last arrival), or None."""
        if self.base_rate_gbps <= 0:
            return None
        t = self._clock_ns if t_now_ns is None else max(float(t_now_ns), self._clock_ns)
        e = self.rng.exponential()
        while True:
            rate, seg_end = self._segment(t)
            cap = rate * (seg_end - t)
            if e <= cap:
                t += e / rate
                break
            e -= cap
            t = seg_end
        self._clock_ns = t
        t_ns = int(math.floor(t))
        if horizon_ns is not None and t_ns > horizon_ns:
            return None
        size = int(self.rng.integers(PKT_MIN_BYTES, PKT_MAX_BYTES + 1))
        return t_ns, Packet(next(self.ids), self.onu_id, size, t_ns)

    def arrivals(self, horizon_ns: int) -> tuple[np.ndarray, np.ndarray]:
        """All arrivals in [0, horizon_ns] as (generated_at_ns int64, size int64) arrays."""
        empty = np.empty(0, dtype=np.int64)
        if self.base_rate_gbps <= 0 or horizon_ns <= 0:
            return empty, empty.copy()
        self._extend_windows(horizon_ns)
        lam = packets_per_ns(self.base_rate_gbps)
        t_pts = [0.0]
        rates = []
        for w in self.windows:
            s, e = w.start_us * 1000.0, min(w.end_us * 1000.0, horizon_ns)
            if s >= horizon_ns:
                break
            if s > t_pts[-1]:
                rates.append(lam)
                t_pts.append(s)
            rates.append(lam * self.busy.ratio_b)
            t_pts.append(e)
        if t_pts[-1] < horizon_ns:
            rates.append(lam)
            t_pts.append(float(horizon_ns))
        t_pts_a = np.asarray(t_pts)
        big_lambda = np.concatenate(([0.0], np.cumsum(np.asarray(rates) * np.diff(t_pts_a))))
        total = big_lambda[-1]

        chunks = []
        acc = 0.0
        while True:
            n = int(total - acc + 6.0 * math.sqrt(total + 1.0) + 16)
            u = acc + np.cumsum(self.rng.exponential(size=n))
            chunks.append(u)
            acc = u[-1]
            if acc > total:
                break
        u = np.concatenate(chunks)
        u = u[: np.searchsorted(u, total, side="right")]
        t = np.floor(np.interp(u, big_lambda, t_pts_a)).astype(np.int64)
        np.minimum(t, horizon_ns, out=t)
        sizes = self.rng.integers(PKT_MIN_BYTES, PKT_MAX_BYTES + 1, size=t.size, dtype=np.int64)
        return t, sizes


def write_arrival_trace(path, rows: Iterable[tuple[int, int, int]]) -> None:
    """CSV ``onu_id,generated_at_ns,size_bytes``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["onu_id", "generated_at_ns", "size_bytes"])
        for row in rows:
            w.writerow([int(x) for x in row])


def read_arrival_trace(path) -> list[tuple[int, int, int]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(int(d["onu_id"]), int(d["generated_at_ns"]), int(d["size_bytes"])) for d in r]
