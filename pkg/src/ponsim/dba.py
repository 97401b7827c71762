"""Grant computation for one subcarrier and one cycle.

Round-Robin splits the payload equally, Weighted-Fair splits it in
proportion to reported queue bytes, and Hybrid-Switch picks one of the two
each cycle by comparing the total reported load with ``alpha * C / N``.

The ``*_grants`` functions are the array core used by the engine; the
``*_allocate`` functions wrap them into :class:`BWMap` values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import BWMap, ConfigError, Grant, SchedulerMode

DEFAULT_QUANTUM = 4


@dataclass(frozen=True)
class SchedulerInput:
    subcarrier_id: int
    capacity_bytes: int
    onu_order: tuple[int, ...]
    reports: Mapping[int, int]
    cycle_index: int = 0
    overheads: tuple[int, int, int] = (24, 8, 8)  # psbu, xgem header, guard
    quantum: int = DEFAULT_QUANTUM

    def __post_init__(self):
        object.__setattr__(self, "onu_order", tuple(self.onu_order))
        if set(self.reports) != set(self.onu_order) or len(self.reports) != len(self.onu_order):
            raise ValueError("reports must have exactly one entry per ONU in onu_order")
        if any(q < 0 for q in self.reports.values()):
            raise ValueError("reported queue sizes must be >= 0")

    @property
    def psbu_bytes(self) -> int:
        return self.overheads[0]

    @property
    def guard_bytes(self) -> int:
        return self.overheads[2]

    def queue_array(self) -> np.ndarray:
        return np.array([self.reports[o] for o in self.onu_order], dtype=np.int64)


def _payload(capacity: int, n_bursts: int, burst_overhead: int) -> int:
    p = capacity - n_bursts * burst_overhead
    if p < 0:
        raise ConfigError([f"overhead exceeds capacity: {n_bursts} bursts x {burst_overhead} B > {capacity} B"])
    return p


def payload_capacity(inp: SchedulerInput, n_active_bursts: int) -> int:
    """Cycle capacity minus PSBu and guard for each burst (XGEM headers are charged per packet)."""
    if n_active_bursts < 0:
        raise ValueError("n_active_bursts must be >= 0")
    return _payload(inp.capacity_bytes, n_active_bursts, inp.psbu_bytes + inp.guard_bytes)


def compute_threshold(alpha: float, capacity_bytes: int, n_onus: int) -> float:
    if n_onus < 1:
        raise ValueError("threshold needs at least one ONU")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return alpha * capacity_bytes / n_onus


def rotation(n: int, cycle_index: int) -> np.ndarray:
    """Positions (into onu_order) in the RR layout order for this cycle."""
    r = cycle_index % n if n else 0
    return np.roll(np.arange(n), -r)


def rr_grants(capacity: int, n: int, cycle_index: int, psbu: int, guard: int, quantum: int = DEFAULT_QUANTUM):
    """Equal shares. Returns (grants indexed like onu_order, layout order)."""
    payload = _payload(capacity, n, psbu + guard)
    n_quanta, leftover = divmod(payload, quantum)
    share, extra = divmod(n_quanta, n)
    order = rotation(n, cycle_index)
    by_rank = np.full(n, share * quantum, dtype=np.int64)
    by_rank[:extra] += quantum
    # sub-quantum bytes go to the first ONU that did not get an extra quantum
    by_rank[extra] += leftover
    grants = np.empty(n, dtype=np.int64)
    grants[order] = by_rank
    return grants, order


def wf_grants(capacity: int, q: np.ndarray, psbu: int, guard: int, quantum: int = DEFAULT_QUANTUM) -> np.ndarray:
    """Shares proportional to ``q`` by largest remainder over whole quanta.

    ``q`` must have a positive sum. Ties in the remainder go to the earlier
    ONU. All comparisons are integer so the result is invariant to scaling q.
    """
    q = np.asarray(q, dtype=np.int64)
    n_active = int(np.count_nonzero(q))
    payload = _payload(capacity, n_active, psbu + guard)
    n_quanta, leftover = divmod(payload, quantum)
    total = int(q.sum())
    if total * max(payload, 1) >= 2**62:
        qq = q.astype(object)
    else:
        qq = q
    num = qq * n_quanta
    floor = num // total
    rem = num % total
    short = n_quanta - int(floor.sum())
    grants_q = np.asarray(floor, dtype=np.int64)
    if short:
        # stable sort on -rem keeps earlier ONUs first among ties
        top = np.argsort(-np.asarray(rem, dtype=object if qq.dtype == object else np.int64), kind="stable")[:short]
        grants_q[top] += 1
    grants = grants_q * quantum
    if leftover:
        deficit = qq * payload - np.asarray(grants, dtype=qq.dtype) * total
        deficit = np.where(q > 0, deficit, -1)
        best = int(np.argmax(deficit.astype(object) if qq.dtype == object else deficit))
        grants[best] += leftover
    return grants


def layout_offsets(grants: np.ndarray, order: np.ndarray, psbu: int, guard: int) -> np.ndarray:
    """Payload start offset of each ONU (indexed like grants), bursts packed in ``order``.

    A burst is PSBu, payload, guard. Zero grants occupy no time; their offset
    is the position where their burst would have started.
    """
    g = grants[order]
    active = g > 0
    span = np.where(active, psbu + g + guard, 0)
    start = np.concatenate(([0], np.cumsum(span)[:-1])) if g.size else np.zeros(0, dtype=np.int64)
    off_in_order = start + np.where(active, psbu, 0)
    off = np.empty_like(off_in_order)
    off[order] = off_in_order
    return off


def hs_mode(total_reported: int, threshold: float) -> SchedulerMode:
    return SchedulerMode.WF if total_reported >= threshold else SchedulerMode.RR


def _bwmap(inp: SchedulerInput, mode: SchedulerMode, grants: np.ndarray, order: np.ndarray) -> BWMap:
    off = layout_offsets(grants, order, inp.psbu_bytes, inp.guard_bytes)
    entries = tuple(
        Grant(inp.onu_order[i], int(off[i]), int(grants[i])) for i in order
    )
    return BWMap(inp.subcarrier_id, inp.cycle_index, mode, entries)


def rr_allocate(inp: SchedulerInput) -> BWMap:
    n = len(inp.onu_order)
    grants, order = rr_grants(inp.capacity_bytes, n, inp.cycle_index, inp.psbu_bytes, inp.guard_bytes, inp.quantum)
    return _bwmap(inp, SchedulerMode.RR, grants, order)


def wf_allocate(inp: SchedulerInput) -> BWMap:
    q = inp.queue_array()
    if q.sum() == 0:
        return rr_allocate(inp)
    grants = wf_grants(inp.capacity_bytes, q, inp.psbu_bytes, inp.guard_bytes, inp.quantum)
    return _bwmap(inp, SchedulerMode.WF, grants, np.arange(len(q)))


def hs_select(inp: SchedulerInput, threshold: float) -> SchedulerMode:
    return hs_mode(sum(inp.reports.values()), threshold)


def hs_allocate(inp: SchedulerInput, threshold: float) -> BWMap:
    if hs_select(inp, threshold) is SchedulerMode.WF:
        return wf_allocate(inp)
    return rr_allocate(inp)


def allocate(policy, inp: SchedulerInput, alpha: float = 1.5) -> BWMap:
    """Dispatch on a policy name (RR, WF or HS)."""
    policy = getattr(policy, "value", policy)
    if policy == "RR":
        return rr_allocate(inp)
    if policy == "WF":
        return wf_allocate(inp)
    if policy == "HS":
        return hs_allocate(inp, compute_threshold(alpha, inp.capacity_bytes, len(inp.onu_order)))
    raise ValueError(f"unknown policy {policy!r}")


def grants_vector(bwmap: BWMap, onu_order: Sequence[int]) -> list[int]:
    by = {g.onu_id: g.grant_bytes for g in bwmap.grants}
    return [by[o] for o in onu_order]
