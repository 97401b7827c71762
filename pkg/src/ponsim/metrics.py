"""Latency aggregation per ONU group and subcarrier.

Latencies are kept as integer nanoseconds, so means are exact and do not
depend on the order packets were recorded in. Percentiles use the
nearest-rank definition: the p-th percentile of n samples is the
ceil(p/100 * n)-th smallest.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .model import Packet

NAN = float("nan")
PERCENTILES = (50, 95, 99)


@dataclass(frozen=True)
class LatencyStats:
    count: int
    mean_us: float
    min_us: float
    max_us: float
    p50_us: float
    p95_us: float
    p99_us: float
    by_group: dict = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "LatencyStats":
        return cls(0, NAN, NAN, NAN, NAN, NAN, NAN)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["by_group"] = {str(k): v.to_dict() for k, v in self.by_group.items()}
        return d


def nearest_rank(values: np.ndarray, p: float):
    """p-th percentile (0 < p <= 100) by nearest rank; ``values`` need not be sorted."""
    n = values.size
    k = max(1, math.ceil(p / 100.0 * n)) - 1
    return np.partition(values, k)[k]


class LogSketch:
    """Fixed-memory quantile sketch with relative error ``rel_err`` on every quantile.

    Samples land in geometric buckets of ratio gamma = (1+e)/(1-e); a bucket
    is reported by a value within a factor (1 +- e) of all its members.
    Count, sum, min and max stay exact.
    """

    def __init__(self, rel_err: float = 0.01):
        self.rel_err = rel_err
        self.gamma = (1 + rel_err) / (1 - rel_err)
        self._log_gamma = math.log(self.gamma)
        self.buckets: dict[int, int] = defaultdict(int)
        self.zeros = 0
        self.count = 0
        self.total = 0
        self.min = None
        self.max = None

    def add(self, values_ns: np.ndarray) -> None:
        v = np.asarray(values_ns, dtype=np.int64)
        if v.size == 0:
            return
        self.count += int(v.size)
        self.total += int(v.sum())
        lo, hi = int(v.min()), int(v.max())
        self.min = lo if self.min is None else min(self.min, lo)
        self.max = hi if self.max is None else max(self.max, hi)
        pos = v[v > 0]
        self.zeros += int(v.size - pos.size)
        idx = np.ceil(np.log(pos) / self._log_gamma).astype(np.int64)
        uniq, cnt = np.unique(idx, return_counts=True)
        for i, c in zip(uniq.tolist(), cnt.tolist()):
            self.buckets[i] += c

    def quantile(self, p: float) -> float:
        rank = max(1, math.ceil(p / 100.0 * self.count))
        if rank <= self.zeros:
            return 0.0
        seen = self.zeros
        for i in sorted(self.buckets):
            seen += self.buckets[i]
            if seen >= rank:
                val = 2 * self.gamma**i / (self.gamma + 1)
                return min(max(val, self.min), self.max)
        return float(self.max)


def _stats_from_array(lat_ns: np.ndarray) -> LatencyStats:
    if lat_ns.size == 0:
        return LatencyStats.empty()
    total = int(lat_ns.sum())
    pct = [float(nearest_rank(lat_ns, p)) / 1000.0 for p in PERCENTILES]
    return LatencyStats(
        count=int(lat_ns.size),
        mean_us=total / lat_ns.size / 1000.0,
        min_us=float(lat_ns.min()) / 1000.0,
        max_us=float(lat_ns.max()) / 1000.0,
        p50_us=pct[0],
        p95_us=pct[1],
        p99_us=pct[2],
    )


def _stats_from_sketch(sk: LogSketch) -> LatencyStats:
    if sk.count == 0:
        return LatencyStats.empty()
    pct = [sk.quantile(p) / 1000.0 for p in PERCENTILES]
    return LatencyStats(
        count=sk.count,
        mean_us=sk.total / sk.count / 1000.0,
        min_us=sk.min / 1000.0,
        max_us=sk.max / 1000.0,
        p50_us=pct[0],
        p95_us=pct[1],
        p99_us=pct[2],
    )


class LatencyRecorder:
    """Collects per-packet latencies keyed by (group, subcarrier).

    ``retain="full"`` keeps every sample (exact percentiles); ``"sketch"``
    keeps a :class:`LogSketch` per key instead.
    """

    def __init__(self, retain: str = "full", sketch_rel_err: float = 0.01):
        if retain not in ("full", "sketch"):
            raise ValueError(f"retain must be 'full' or 'sketch', not {retain!r}")
        self.retain = retain
        self.sketch_rel_err = sketch_rel_err
        self._chunks: dict[tuple, list] = defaultdict(list)
        self._sketches: dict[tuple, LogSketch] = {}

    def record(self, pkt: Packet, group_id: int, subcarrier_id: Optional[int] = None) -> None:
        if pkt.departed_at_ns is None:
            raise ValueError(f"packet {pkt.id} has not departed")
        self.record_many(np.array([pkt.departed_at_ns - pkt.generated_at_ns]), group_id, subcarrier_id)

    def record_many(self, latency_ns, group_id: int, subcarrier_id: Optional[int] = None) -> None:
        lat = np.asarray(latency_ns, dtype=np.int64)
        if lat.size and lat.min() < 0:
            raise ValueError("negative latency")
        key = (group_id, subcarrier_id)
        if self.retain == "full":
            self._chunks[key].append(lat)
        else:
            sk = self._sketches.get(key)
            if sk is None:
                sk = self._sketches[key] = LogSketch(self.sketch_rel_err)
            sk.add(lat)

    def _keys(self):
        return self._chunks.keys() if self.retain == "full" else self._sketches.keys()

    def _collect(self, keys) -> LatencyStats:
        keys = list(keys)
        if self.retain == "full":
            arrs = [a for k in keys for a in self._chunks[k]]
            return _stats_from_array(np.concatenate(arrs) if arrs else np.empty(0, dtype=np.int64))
        merged = LogSketch(self.sketch_rel_err)
        for k in keys:
            sk = self._sketches[k]
            merged.count += sk.count
            merged.total += sk.total
            merged.zeros += sk.zeros
            for i, c in sk.buckets.items():
                merged.buckets[i] += c
            if sk.min is not None:
                merged.min = sk.min if merged.min is None else min(merged.min, sk.min)
                merged.max = sk.max if merged.max is None else max(merged.max, sk.max)
        return _stats_from_sketch(merged)

    def groups(self) -> list[int]:
        return sorted({k[0] for k in self._keys()})

    def subcarriers(self) -> list[int]:
        return sorted({k[1] for k in self._keys() if k[1] is not None})

    def summarize(self, group: Optional[int] = None, subcarrier: Optional[int] = None) -> LatencyStats:
        """Stats for everything (default), one group, or one subcarrier.

        The global summary carries a per-group breakdown in ``by_group``.
        """
        keys = [
            k
            for k in self._keys()
            if (group is None or k[0] == group) and (subcarrier is None or k[1] == subcarrier)
        ]
        stats = self._collect(keys)
        if group is None and subcarrier is None:
            by_group = {g: self.summarize(group=g) for g in self.groups()}
            stats = LatencyStats(**{**stats.__dict__, "by_group": by_group})
        return stats
