"""Domain types shared by the simulator: packets, reports, grants, topology, config."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Deque, Iterable, Optional, Sequence

PKT_MIN_BYTES = 64
PKT_MAX_BYTES = 1518


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``errors`` holds every violation found, not only the first.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InvariantError(RuntimeError):
    """An internal simulation invariant was breached."""


class Policy(str, enum.Enum):
    RR = "RR"
    WF = "WF"
    HS = "HS"


class SchedulerMode(str, enum.Enum):
    RR = "RR"
    WF = "WF"


def us_to_ns(us: float) -> int:
    return int(round(us * 1000.0))


def ns_to_us(ns: float) -> float:
    return ns / 1000.0


@dataclass(slots=True)
class Packet:
    id: int
    onu_id: int
    size_bytes: int
    generated_at_ns: int
    departed_at_ns: Optional[int] = None

    def __post_init__(self):
        if not PKT_MIN_BYTES <= self.size_bytes <= PKT_MAX_BYTES:
            raise ValueError(f"packet size {self.size_bytes} outside [64, 1518]")

    @property
    def generated_at(self) -> float:
        return ns_to_us(self.generated_at_ns)

    @property
    def departed_at(self) -> Optional[float]:
        if self.departed_at_ns is None:
            return None
        return ns_to_us(self.departed_at_ns)


@dataclass(frozen=True, slots=True)
class StatusReport:
    onu_id: int
    queue_bytes: int
    snapshot_at_ns: int

    @property
    def snapshot_at(self) -> float:
        return ns_to_us(self.snapshot_at_ns)


@dataclass(frozen=True, slots=True)
class Grant:
    onu_id: int
    start_offset_bytes: int
    grant_bytes: int


@dataclass(frozen=True)
class BWMap:
    subcarrier_id: int
    applies_to_cycle: int
    mode_used: SchedulerMode
    grants: tuple[Grant, ...]

    def grant_for(self, onu_id: int) -> Grant:
        for g in self.grants:
            if g.onu_id == onu_id:
                return g
        raise KeyError(onu_id)

    def bytes_used(self, psbu_bytes: int, guard_bytes: int) -> int:
        """Payload plus per-burst framing; zero grants send no burst."""
        return sum(g.grant_bytes + psbu_bytes + guard_bytes for g in self.grants if g.grant_bytes > 0)


@dataclass
class OnuState:
    """An ONU's static attributes and its FIFO queue.

    ``inbox`` holds packets that exist in the traffic stream but have not
    been generated yet at the current simulated instant.
    """

    onu_id: int
    group_id: int
    subcarrier_id: int
    rtt_us: float
    base_rate_gbps: float = 0.0
    queue: Deque[Packet] = field(default_factory=deque)
    inbox: Deque[Packet] = field(default_factory=deque)

    def deliver_until(self, t_ns: int) -> None:
        while self.inbox and self.inbox[0].generated_at_ns <= t_ns:
            self.queue.append(self.inbox.popleft())

    def queue_bytes(self) -> int:
        return sum(p.size_bytes for p in self.queue)


@dataclass(frozen=True)
class BusyHourConfig:
    p_min_us: float = 2000.0
    p_max_us: float = 3000.0
    l_min_us: float = 500.0
    l_max_us: float = 1000.0
    ratio_b: float = 3.0
    shared_per_group: bool = False


@dataclass(frozen=True)
class SubcarrierConfig:
    subcarrier_id: int
    rate_gbps: float
    onu_ids: tuple[int, ...]
    dba_policy: Policy = Policy.HS
    group_id: int = 0
    # per-subcarrier override of SimConfig.base_rate_gbps
    base_rate_gbps: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "onu_ids", tuple(int(i) for i in self.onu_ids))
        object.__setattr__(self, "dba_policy", Policy(self.dba_policy))


@dataclass(frozen=True)
class SimConfig:
    n_onus: int
    subcarriers: tuple[SubcarrierConfig, ...]
    sim_duration_us: float
    rng_seed: int = 0
    base_rate_gbps: float = 0.035
    cycle_len_us: float = 125.0
    alpha: float = 1.5
    psbu_bytes: int = 24
    xgem_header_bytes: int = 8
    guard_bytes: int = 8
    oltproc_us: float = 0.0
    rtt_min_us: float = 80.0
    rtt_max_us: float = 120.0
    grant_quantum_bytes: int = 4
    warmup_cycles: int = 10
    # ONUs with a zero grant still send a report-only burst (no payload, no overhead)
    report_without_grant: bool = True
    busy: BusyHourConfig = field(default_factory=BusyHourConfig)

    def __post_init__(self):
        object.__setattr__(self, "subcarriers", tuple(self.subcarriers))

    def subcarrier_of(self) -> dict[int, SubcarrierConfig]:
        return {o: sc for sc in self.subcarriers for o in sc.onu_ids}


def cycle_capacity_bytes(rate_gbps: float, cycle_len_us: float) -> int:
    """Bytes one subcarrier carries in one cycle, floored to whole bytes."""
    if not rate_gbps > 0 or not cycle_len_us > 0:
        raise ConfigError([f"rate ({rate_gbps}) and cycle length ({cycle_len_us}) must be positive"])
    # decimal-exact so that e.g. 0.516096 Gbps x 125 us is exactly 8064 B
    exact = Fraction(repr(float(rate_gbps))) * Fraction(repr(float(cycle_len_us))) * 1000 / 8
    return math.floor(exact)


def validate_config(cfg: SimConfig) -> SimConfig:
    errors: list[str] = []
    if cfg.n_onus < 1:
        errors.append("n_onus must be >= 1")
    if not cfg.alpha > 0:
        errors.append("alpha must be positive")
    if not cfg.cycle_len_us > 0:
        errors.append("cycle_len_us must be positive")
    if not cfg.sim_duration_us > 0:
        errors.append("sim_duration_us must be positive")
    if cfg.base_rate_gbps < 0:
        errors.append("base_rate_gbps must be >= 0")
    for name in ("psbu_bytes", "xgem_header_bytes", "guard_bytes"):
        if getattr(cfg, name) < 0:
            errors.append(f"{name} must be >= 0")
    if cfg.oltproc_us < 0:
        errors.append("oltproc_us must be >= 0")
    if cfg.grant_quantum_bytes < 1:
        errors.append("grant_quantum_bytes must be >= 1")
    if cfg.warmup_cycles < 0:
        errors.append("warmup_cycles must be >= 0")
    if not 0 <= cfg.rtt_min_us <= cfg.rtt_max_us:
        errors.append("rtt range must satisfy 0 <= rtt_min_us <= rtt_max_us")

    b = cfg.busy
    if b.p_min_us > b.p_max_us:
        errors.append("busy p_min_us must be <= p_max_us")
    if b.l_min_us > b.l_max_us:
        errors.append("busy l_min_us must be <= l_max_us")
    if b.p_min_us < 0 or b.l_min_us < 0:
        errors.append("busy window bounds must be >= 0")
    if b.ratio_b < 1:
        errors.append("busy ratio_b must be >= 1")

    if not cfg.subcarriers:
        errors.append("at least one subcarrier is required")
    seen: dict[int, int] = {}
    ids = set()
    for sc in cfg.subcarriers:
        if sc.subcarrier_id in ids:
            errors.append(f"duplicate subcarrier id {sc.subcarrier_id}")
        ids.add(sc.subcarrier_id)
        if not sc.rate_gbps > 0:
            errors.append(f"subcarrier {sc.subcarrier_id}: rate_gbps must be positive")
        if not sc.onu_ids:
            errors.append(f"subcarrier {sc.subcarrier_id}: no ONUs assigned")
        if sc.base_rate_gbps is not None and sc.base_rate_gbps < 0:
            errors.append(f"subcarrier {sc.subcarrier_id}: base_rate_gbps must be >= 0")
        if len(set(sc.onu_ids)) != len(sc.onu_ids):
            errors.append(f"subcarrier {sc.subcarrier_id}: duplicate ONU ids")
        for o in sc.onu_ids:
            if not 0 <= o < cfg.n_onus:
                errors.append(f"subcarrier {sc.subcarrier_id}: ONU {o} out of range [0, {cfg.n_onus})")
            elif o in seen and seen[o] != sc.subcarrier_id:
                errors.append(
                    f"overlapping assignment: ONU {o} on subcarriers {seen[o]} and {sc.subcarrier_id}"
                )
            else:
                seen[o] = sc.subcarrier_id
    if cfg.n_onus >= 1:
        missing = [o for o in range(cfg.n_onus) if o not in seen]
        if missing:
            head = ", ".join(map(str, missing[:8]))
            more = "..." if len(missing) > 8 else ""
            errors.append(f"uncovered ONUs: {len(missing)} not assigned ({head}{more})")
    if errors:
        raise ConfigError(errors)
    return cfg


def single_carrier_config(
    n_onus: int,
    rate_gbps: float = 100.0,
    policy: Policy | str = Policy.HS,
    sim_duration_us: float = 500_000.0,
    **kw,
) -> SimConfig:
    """Convenience: every ONU on one subcarrier, one group."""
    sc = SubcarrierConfig(0, rate_gbps, tuple(range(n_onus)), Policy(policy), group_id=0)
    return SimConfig(n_onus=n_onus, subcarriers=(sc,), sim_duration_us=sim_duration_us, **kw)


def with_policy(cfg: SimConfig, policy: Policy | str) -> SimConfig:
    from dataclasses import replace

    return replace(cfg, subcarriers=tuple(replace(sc, dba_policy=Policy(policy)) for sc in cfg.subcarriers))


def iter_onus(cfg: SimConfig) -> Iterable[tuple[int, SubcarrierConfig]]:
    for sc in cfg.subcarriers:
        for o in sc.onu_ids:
            yield o, sc
