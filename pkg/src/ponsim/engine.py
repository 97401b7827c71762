"""Cycle-driven upstream simulation of one OLT and its ONUs.

Timeline (all ONUs share a ranging-equalized upstream clock; cycle ``k``
covers ``[k*T, (k+1)*T)``):

* At ``k*T`` the OLT computes the BWMap for cycle ``k + D`` from the reports
  that have reached it by then. The map reaches every ONU before cycle
  ``k + D`` starts because ``D*T >= max_rtt + olt_proc``.
* In cycle ``k`` each ONU transmits at ``k*T + offset * 8 / rate``. Packets
  generated by that instant are eligible; the longest FIFO prefix that fits
  the grant (each packet charged size + XGEM header) is sent whole.
* The burst carries a report of the queue left at burst end. It reaches the
  OLT ``rtt/2`` later. ONUs with a zero grant send a report-only burst of
  zero length at their slot position.

A packet's latency runs from generation to the departure of its last byte.

:func:`run` is the vectorized engine. :func:`run_reference` simulates the
same timeline packet by packet with :class:`OnuState` queues and the
public schedulers; the two are cross-checked in the test-suite.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Optional

import numpy as np

from . import dba
from .metrics import LatencyRecorder, LatencyStats
from .model import (
    BWMap,
    Grant,
    InvariantError,
    OnuState,
    Packet,
    Policy,
    SchedulerMode,
    SimConfig,
    StatusReport,
    SubcarrierConfig,
    cycle_capacity_bytes,
    ns_to_us,
    us_to_ns,
    validate_config,
)
from .traffic import (
    STREAM_ARRIVALS,
    STREAM_GROUP_WINDOWS,
    STREAM_RTT,
    STREAM_WINDOWS,
    TrafficSource,
    schedule_busy_windows,
    stream,
)

MODE_RR = 0
MODE_WF = 1
_MODE_NAMES = ("RR", "WF")
TRACE_HEADER = ["cycle", "subcarrier", "mode", "onu", "grant_bytes", "carried", "wasted_bytes"]


def pipeline_depth(max_rtt_us: float, olt_proc_us: float, cycle_len_us: float) -> int:
    """Cycles between computing a BWMap and the cycle it applies to."""
    span = Fraction(repr(float(max_rtt_us))) + Fraction(repr(float(olt_proc_us)))
    return max(1, math.ceil(span / Fraction(repr(float(cycle_len_us)))))


def latency_of(pkt: Packet) -> float:
    if pkt.departed_at_ns is None:
        raise ValueError(f"packet {pkt.id} has not departed")
    return ns_to_us(pkt.departed_at_ns - pkt.generated_at_ns)


@dataclass
class UpstreamBurst:
    onu_id: int
    cycle_index: int
    granted_bytes: int
    carried_packets: list
    report: StatusReport
    wasted_bytes: int


def assemble_burst(
    onu: OnuState,
    grant: Grant,
    t_start_ns: float,
    line_rate_gbps: float,
    xgem_header_bytes: int = 8,
    cycle_index: int = -1,
) -> UpstreamBurst:
    """Send the longest FIFO prefix of ``onu``'s queue that fits ``grant``.

    ``t_start_ns`` is the (possibly fractional) instant the payload starts.
    Packets in ``onu.inbox`` generated by then join the queue first; those
    generated before the burst ends are included in the report.
    """
    if grant.onu_id != onu.onu_id:
        raise InvariantError(f"grant for ONU {grant.onu_id} handed to ONU {onu.onu_id}")
    onu.deliver_until(math.floor(t_start_ns))
    carried = []
    used = 0
    q = onu.queue
    while q and used + q[0].size_bytes + xgem_header_bytes <= grant.grant_bytes:
        pkt = q.popleft()
        used += pkt.size_bytes + xgem_header_bytes
        pkt.departed_at_ns = math.ceil(t_start_ns + used * 8 / line_rate_gbps)
        carried.append(pkt)
    end_ns = math.floor(t_start_ns + grant.grant_bytes * 8 / line_rate_gbps)
    onu.deliver_until(end_ns)
    report = StatusReport(onu.onu_id, onu.queue_bytes(), end_ns)
    return UpstreamBurst(onu.onu_id, cycle_index, grant.grant_bytes, carried, report, grant.grant_bytes - used)


@dataclass
class SubcarrierTimeline:
    """Per-cycle record for one subcarrier (index = cycle)."""

    subcarrier_id: int
    policy: str
    capacity_bytes: int
    n_onus: int
    threshold: float
    modes: np.ndarray  # MODE_RR / MODE_WF of the BWMap applied in each cycle
    loads: np.ndarray  # total reported bytes visible when that BWMap was computed
    granted_bytes: np.ndarray
    bursts: np.ndarray  # nonzero grants
    carried_bytes: np.ndarray  # payload incl. XGEM headers
    wasted_bytes: np.ndarray

    @property
    def mode_rr_fraction(self) -> float:
        return float(np.mean(self.modes == MODE_RR)) if self.modes.size else float("nan")

    @property
    def utilization(self) -> np.ndarray:
        return self.carried_bytes / self.capacity_bytes


@dataclass
class PacketTable:
    """Every generated packet; ``departed_ns`` is -1 for packets still queued."""

    ids: np.ndarray
    onu: np.ndarray
    generated_ns: np.ndarray
    size: np.ndarray
    departed_ns: np.ndarray

    def latency_us(self) -> np.ndarray:
        done = self.departed_ns >= 0
        return (self.departed_ns[done] - self.generated_ns[done]) / 1000.0


@dataclass
class SimReport:
    latency: LatencyStats
    by_subcarrier: dict[int, LatencyStats]
    timelines: dict[int, SubcarrierTimeline]
    pipeline_depth: dict[int, int]
    generated_packets: int
    departed_packets: int
    residual_packets: int
    generated_bytes: int
    departed_bytes: int
    residual_bytes: int
    packets: Optional[PacketTable] = None
    rtt_us: dict[int, float] = field(default_factory=dict)

    def summary(self) -> dict:
        """Deterministic JSON-ready digest (no per-packet data)."""
        return {
            "latency": self.latency.to_dict(),
            "by_subcarrier": {str(k): v.to_dict() for k, v in sorted(self.by_subcarrier.items())},
            "mode_rr_fraction": {str(k): t.mode_rr_fraction for k, t in sorted(self.timelines.items())},
            "mean_utilization": {
                str(k): float(t.utilization.mean()) if t.utilization.size else 0.0
                for k, t in sorted(self.timelines.items())
            },
            "wasted_bytes": {str(k): int(t.wasted_bytes.sum()) for k, t in sorted(self.timelines.items())},
            "pipeline_depth": {str(k): v for k, v in sorted(self.pipeline_depth.items())},
            "totals": {
                "generated_packets": self.generated_packets,
                "departed_packets": self.departed_packets,
                "residual_packets": self.residual_packets,
                "generated_bytes": self.generated_bytes,
                "departed_bytes": self.departed_bytes,
                "residual_bytes": self.residual_bytes,
            },
        }


# ---------------------------------------------------------------- traffic


def draw_rtts(cfg: SimConfig) -> dict[int, float]:
    return {
        o: float(stream(cfg.rng_seed, STREAM_RTT, o).uniform(cfg.rtt_min_us, cfg.rtt_max_us))
        for o in range(cfg.n_onus)
    }


def traffic_sources(cfg: SimConfig) -> dict[int, TrafficSource]:
    """One independent source per ONU, seeded from (rng_seed, onu_id)."""
    horizon_us = cfg.sim_duration_us
    shared: dict[int, list] = {}
    out = {}
    for sc in cfg.subcarriers:
        base = cfg.base_rate_gbps if sc.base_rate_gbps is None else sc.base_rate_gbps
        for o in sc.onu_ids:
            rng = stream(cfg.rng_seed, STREAM_ARRIVALS, o)
            if cfg.busy.shared_per_group:
                if sc.group_id not in shared:
                    g_rng = stream(cfg.rng_seed, STREAM_GROUP_WINDOWS, sc.group_id)
                    shared[sc.group_id] = schedule_busy_windows(cfg.busy, horizon_us, g_rng)
                out[o] = TrafficSource(o, base, cfg.busy, rng, windows=list(shared[sc.group_id]))
            else:
                out[o] = TrafficSource(o, base, cfg.busy, rng, window_rng=stream(cfg.rng_seed, STREAM_WINDOWS, o))
    return out


def generate_traffic(cfg: SimConfig) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    h = us_to_ns(cfg.sim_duration_us)
    return {o: src.arrivals(h) for o, src in traffic_sources(cfg).items()}


# ---------------------------------------------------------------- vectorized engine


def _select_mode(policy: Policy, load: int, threshold: float) -> int:
    if load == 0 or policy is Policy.RR:
        return MODE_RR
    if policy is Policy.WF:
        return MODE_WF
    return MODE_WF if load >= threshold else MODE_RR


@dataclass
class _SubResult:
    onus: np.ndarray
    seg: np.ndarray
    gen: np.ndarray
    size: np.ndarray
    departed: np.ndarray
    timeline: SubcarrierTimeline
    depth: int


def _simulate_subcarrier(cfg, sc: SubcarrierConfig, traffic, rtt_us, n_cycles, trace) -> _SubResult:
    T = us_to_ns(cfg.cycle_len_us)
    H = us_to_ns(cfg.sim_duration_us)
    C = cycle_capacity_bytes(sc.rate_gbps, cfg.cycle_len_us)
    R = float(sc.rate_gbps)
    hdr, psbu, guard, quantum = cfg.xgem_header_bytes, cfg.psbu_bytes, cfg.guard_bytes, cfg.grant_quantum_bytes
    onus = np.array(sc.onu_ids, dtype=np.int64)
    N = onus.size
    policy = sc.dba_policy
    threshold = dba.compute_threshold(cfg.alpha, C, N)
    rtt = np.array([us_to_ns(rtt_us[o]) for o in sc.onu_ids], dtype=np.int64)
    half_rtt = rtt // 2
    D = pipeline_depth(max(rtt_us[o] for o in sc.onu_ids), cfg.oltproc_us, cfg.cycle_len_us)

    counts = np.array([traffic[o][0].size for o in sc.onu_ids], dtype=np.int64)
    seg = np.concatenate(([0], np.cumsum(counts)))
    gen = np.concatenate([traffic[o][0] for o in sc.onu_ids]) if N else np.empty(0, np.int64)
    size = np.concatenate([traffic[o][1] for o in sc.onu_ids]) if N else np.empty(0, np.int64)
    big = H + 1
    base_key = np.arange(N, dtype=np.int64) * big
    key = np.repeat(base_key, counts) + gen
    cc = np.concatenate(([0], np.cumsum(size + hdr)))  # charged bytes before packet p
    cr = np.concatenate(([0], np.cumsum(size)))  # raw bytes before packet p
    head = seg[:-1].copy()

    # in-flight reports by cycle slot; a report is folded into `known` once visible
    # and its slot is recycled only after that is guaranteed to have happened
    ring = 2 + math.ceil(int(half_rtt.max()) / T)
    never = np.iinfo(np.int64).max
    rep_q = np.zeros((ring, N), dtype=np.int64)
    rep_vis = np.full((ring, N), never, dtype=np.int64)
    known = np.zeros(N, dtype=np.int64)
    report_idle = cfg.report_without_grant

    modes = np.zeros(n_cycles, dtype=np.int8)
    loads = np.zeros(n_cycles, dtype=np.int64)
    granted = np.zeros(n_cycles, dtype=np.int64)
    bursts = np.zeros(n_cycles, dtype=np.int64)
    carried_b = np.zeros(n_cycles, dtype=np.int64)
    wasted_b = np.zeros(n_cycles, dtype=np.int64)
    maps: dict[int, tuple] = {}
    b_head, b_end, b_start, b_base = [], [], [], []
    burst_cost = psbu + guard

    for k in range(n_cycles):
        t0 = k * T
        # --- OLT: BWMap for cycle k + D from reports visible now
        m = k + D
        if m < n_cycles:
            for back in range(ring, 0, -1):
                slot = (k - back) % ring
                ok = rep_vis[slot] <= t0
                if ok.any():
                    known[ok] = rep_q[slot][ok]
                    rep_vis[slot][ok] = never
            q = known.copy()
            load = int(q.sum())
            mode = _select_mode(policy, load, threshold)
            if mode == MODE_RR:
                g, order = dba.rr_grants(C, N, m, psbu, guard, quantum)
            else:
                g = dba.wf_grants(C, q, psbu, guard, quantum)
                order = np.arange(N)
            maps[m] = (mode, g, dba.layout_offsets(g, order, psbu, guard))
            modes[m] = mode
            loads[m] = load
        if k < D:
            # warm-up maps computed before time 0 from empty reports
            g, order = dba.rr_grants(C, N, k, psbu, guard, quantum)
            maps[k] = (MODE_RR, g, dba.layout_offsets(g, order, psbu, guard))
            modes[k] = MODE_RR

        # --- ONUs: transmit cycle k
        mode, g, off = maps.pop(k)
        n_b = int(np.count_nonzero(g))
        used = int(g.sum()) + n_b * burst_cost
        if used > C:
            raise InvariantError(f"subcarrier {sc.subcarrier_id} cycle {k}: BWMap uses {used} B > capacity {C} B")
        start = t0 + off * 8 / R
        start_ns = np.floor(start).astype(np.int64)
        arrived = np.searchsorted(key, base_key + np.minimum(start_ns, H), side="right")
        fit = np.searchsorted(cc, cc[head] + g, side="right") - 1
        j = np.minimum(fit, arrived)
        sent = j - head
        carried = cc[j] - cc[head]
        moved = sent > 0
        if moved.any():
            b_head.append(head[moved])
            b_end.append(j[moved])
            b_start.append(start[moved])
            b_base.append(cc[head][moved])
        head = j
        end_ns = np.floor(start + g * 8 / R).astype(np.int64)
        arrived_end = np.searchsorted(key, base_key + np.minimum(end_ns, H), side="right")
        slot = k % ring
        rep_q[slot] = cr[arrived_end] - cr[head]
        rep_vis[slot] = end_ns + half_rtt
        if not report_idle:
            rep_vis[slot][g == 0] = never

        granted[k] = int(g.sum())
        bursts[k] = n_b
        carried_b[k] = int(carried.sum())
        wasted_b[k] = int((g - carried).sum())
        if trace is not None:
            name = _MODE_NAMES[mode]
            w = g - carried
            for i in range(N):
                trace.writerow([k, sc.subcarrier_id, name, int(onus[i]), int(g[i]), int(sent[i]), int(w[i])])

    departed = np.full(gen.size, -1, dtype=np.int64)
    if b_head:
        bh, be = np.concatenate(b_head), np.concatenate(b_end)
        bs, bb = np.concatenate(b_start), np.concatenate(b_base)
        n_per = be - bh
        total = int(n_per.sum())
        first = np.concatenate(([0], np.cumsum(n_per)[:-1]))
        p = np.arange(total, dtype=np.int64) - np.repeat(first - bh, n_per)
        departed[p] = np.ceil(np.repeat(bs, n_per) + (cc[p + 1] - np.repeat(bb, n_per)) * 8 / R).astype(np.int64)

    tl = SubcarrierTimeline(
        sc.subcarrier_id, policy.value, C, N, threshold, modes, loads, granted, bursts, carried_b, wasted_b
    )
    return _SubResult(onus, seg, gen, size, departed, tl, D)


def _check_subresult(cfg: SimConfig, sc: SubcarrierConfig, r: _SubResult) -> None:
    done = r.departed >= 0
    ser = (r.size + cfg.xgem_header_bytes) * 8 / sc.rate_gbps
    bad = done & ((r.departed - r.gen) < ser)
    if bad.any():
        raise InvariantError(f"subcarrier {sc.subcarrier_id}: {int(bad.sum())} packets beat their serialization time")
    for i in range(r.onus.size):
        a, b = r.seg[i], r.seg[i + 1]
        d = r.departed[a:b]
        n_done = int(np.count_nonzero(d >= 0))
        if n_done and (np.any(d[:n_done] < 0) or np.any(np.diff(d[:n_done]) < 0) or np.any(d[n_done:] >= 0)):
            raise InvariantError(f"ONU {int(r.onus[i])}: departures out of FIFO order")


def _assign_ids(onu: np.ndarray, gen: np.ndarray) -> np.ndarray:
    order = np.lexsort((onu, gen))
    ids = np.empty(gen.size, dtype=np.int64)
    ids[order] = np.arange(gen.size)
    return ids


def _finish(cfg, subs: dict[int, tuple[SubcarrierConfig, _SubResult]], rtt_us, keep_packets, retain) -> SimReport:
    rec = LatencyRecorder(retain=retain)
    warm = cfg.warmup_cycles * us_to_ns(cfg.cycle_len_us)
    tot = dict(gp=0, dp=0, gb=0, db=0)
    tables = []
    for sc_id, (sc, r) in sorted(subs.items()):
        done = r.departed >= 0
        keep = done & (r.gen >= warm)
        rec.record_many(r.departed[keep] - r.gen[keep], sc.group_id, sc_id)
        tot["gp"] += int(r.gen.size)
        tot["dp"] += int(done.sum())
        tot["gb"] += int(r.size.sum())
        tot["db"] += int(r.size[done].sum())
        if keep_packets:
            tables.append((np.repeat(r.onus, np.diff(r.seg)), r.gen, r.size, r.departed))
    table = None
    if keep_packets:
        onu = np.concatenate([t[0] for t in tables])
        gen = np.concatenate([t[1] for t in tables])
        table = PacketTable(
            _assign_ids(onu, gen), onu, gen, np.concatenate([t[2] for t in tables]), np.concatenate([t[3] for t in tables])
        )
    rep = SimReport(
        latency=rec.summarize(),
        by_subcarrier={s: rec.summarize(subcarrier=s) for s in sorted(subs)},
        timelines={s: r.timeline for s, (_, r) in sorted(subs.items())},
        pipeline_depth={s: r.depth for s, (_, r) in sorted(subs.items())},
        generated_packets=tot["gp"],
        departed_packets=tot["dp"],
        residual_packets=tot["gp"] - tot["dp"],
        generated_bytes=tot["gb"],
        departed_bytes=tot["db"],
        residual_bytes=tot["gb"] - tot["db"],
        packets=table,
        rtt_us=dict(rtt_us),
    )
    return rep


def n_cycles_for(cfg: SimConfig) -> int:
    return math.ceil(us_to_ns(cfg.sim_duration_us) / us_to_ns(cfg.cycle_len_us))


def run(
    cfg: SimConfig,
    *,
    traffic: Optional[dict[int, tuple[np.ndarray, np.ndarray]]] = None,
    keep_packets: bool = False,
    trace: Optional[IO[str]] = None,
    retain: str = "full",
    check: bool = True,
) -> SimReport:
    """Simulate ``cfg.sim_duration_us`` of upstream operation.

    ``traffic`` overrides generated arrivals: ONU id -> (generated_at_ns,
    size_bytes) arrays sorted by time. ``trace`` receives the per-cycle grant
    CSV. Raises :class:`InvariantError` on any internal inconsistency.
    """
    validate_config(cfg)
    rtt_us = draw_rtts(cfg)
    if traffic is None:
        traffic = generate_traffic(cfg)
    n_cycles = n_cycles_for(cfg)
    writer = None
    if trace is not None:
        writer = csv.writer(trace)
        writer.writerow(TRACE_HEADER)
    subs = {}
    for sc in cfg.subcarriers:
        r = _simulate_subcarrier(cfg, sc, traffic, rtt_us, n_cycles, writer)
        if check:
            _check_subresult(cfg, sc, r)
        subs[sc.subcarrier_id] = (sc, r)
    rep = _finish(cfg, subs, rtt_us, keep_packets, retain)
    if rep.generated_packets != rep.departed_packets + rep.residual_packets:
        raise InvariantError("packet conservation violated")
    return rep


# ---------------------------------------------------------------- reference engine


def run_reference(cfg: SimConfig, *, traffic=None) -> SimReport:
    """Packet-by-packet simulation of the same timeline as :func:`run`.

    Slow; meant for small configurations and for checking :func:`run`.
    """
    validate_config(cfg)
    rtt_us = draw_rtts(cfg)
    if traffic is None:
        traffic = generate_traffic(cfg)
    n_cycles = n_cycles_for(cfg)
    T = us_to_ns(cfg.cycle_len_us)
    overheads = (cfg.psbu_bytes, cfg.xgem_header_bytes, cfg.guard_bytes)
    subs = {}
    for sc in cfg.subcarriers:
        C = cycle_capacity_bytes(sc.rate_gbps, cfg.cycle_len_us)
        R = float(sc.rate_gbps)
        N = len(sc.onu_ids)
        threshold = dba.compute_threshold(cfg.alpha, C, N)
        D = pipeline_depth(max(rtt_us[o] for o in sc.onu_ids), cfg.oltproc_us, cfg.cycle_len_us)
        states: dict[int, OnuState] = {}
        all_pkts: list[Packet] = []
        for o in sc.onu_ids:
            gen, size = traffic[o]
            pk = [Packet(-1, o, int(s), int(t)) for t, s in zip(gen, size)]
            all_pkts.extend(pk)
            states[o] = OnuState(o, sc.group_id, sc.subcarrier_id, rtt_us[o], inbox=deque(pk))
        reports: dict[int, list[tuple[int, int]]] = {o: [] for o in sc.onu_ids}  # (visible_at, bytes)
        maps: dict[int, BWMap] = {}
        n = n_cycles
        modes = np.zeros(n, np.int8)
        loads = np.zeros(n, np.int64)
        granted = np.zeros(n, np.int64)
        bursts = np.zeros(n, np.int64)
        carried_b = np.zeros(n, np.int64)
        wasted_b = np.zeros(n, np.int64)

        def visible(o, t):
            for vis, qb in reversed(reports[o]):
                if vis <= t:
                    return qb
            return 0

        for k in range(n):
            t0 = k * T
            m = k + D
            if m < n:
                inp = dba.SchedulerInput(
                    sc.subcarrier_id, C, sc.onu_ids, {o: visible(o, t0) for o in sc.onu_ids}, m, overheads,
                    cfg.grant_quantum_bytes,
                )
                load = sum(inp.reports.values())
                if sc.dba_policy is Policy.RR:
                    bw = dba.rr_allocate(inp)
                elif sc.dba_policy is Policy.WF:
                    bw = dba.wf_allocate(inp)
                else:
                    bw = dba.hs_allocate(inp, threshold)
                maps[m] = bw
                modes[m] = MODE_WF if bw.mode_used is SchedulerMode.WF else MODE_RR
                loads[m] = load
            if k < D:
                inp = dba.SchedulerInput(
                    sc.subcarrier_id, C, sc.onu_ids, {o: 0 for o in sc.onu_ids}, k, overheads, cfg.grant_quantum_bytes
                )
                maps[k] = dba.rr_allocate(inp)
            bw = maps.pop(k)
            if bw.bytes_used(cfg.psbu_bytes, cfg.guard_bytes) > C:
                raise InvariantError(f"cycle {k}: BWMap exceeds capacity")
            for gr in bw.grants:
                onu = states[gr.onu_id]
                burst = assemble_burst(onu, gr, t0 + gr.start_offset_bytes * 8 / R, R, cfg.xgem_header_bytes, k)
                if gr.grant_bytes > 0 or cfg.report_without_grant:
                    vis = burst.report.snapshot_at_ns + us_to_ns(onu.rtt_us) // 2
                    reports[gr.onu_id].append((vis, burst.report.queue_bytes))
                granted[k] += gr.grant_bytes
                bursts[k] += gr.grant_bytes > 0
                carried_b[k] += gr.grant_bytes - burst.wasted_bytes
                wasted_b[k] += burst.wasted_bytes

        onus = np.array(sc.onu_ids, dtype=np.int64)
        counts = [traffic[o][0].size for o in sc.onu_ids]
        r = _SubResult(
            onus,
            np.concatenate(([0], np.cumsum(counts))).astype(np.int64),
            np.array([p.generated_at_ns for p in all_pkts], dtype=np.int64),
            np.array([p.size_bytes for p in all_pkts], dtype=np.int64),
            np.array([-1 if p.departed_at_ns is None else p.departed_at_ns for p in all_pkts], dtype=np.int64),
            SubcarrierTimeline(
                sc.subcarrier_id, sc.dba_policy.value, C, N, threshold, modes, loads, granted, bursts, carried_b, wasted_b
            ),
            D,
        )
        subs[sc.subcarrier_id] = (sc, r)
    return _finish(cfg, subs, rtt_us, True, "full")
