"""Upstream dynamic bandwidth allocation simulator for TDM/TFDM coherent PONs."""

from .dba import (
    SchedulerInput,
    compute_threshold,
    hs_allocate,
    hs_select,
    payload_capacity,
    rr_allocate,
    wf_allocate,
)
from .engine import SimReport, assemble_burst, latency_of, pipeline_depth, run, run_reference
from .metrics import LatencyRecorder, LatencyStats
from .model import (
    BusyHourConfig,
    BWMap,
    ConfigError,
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
    single_carrier_config,
    validate_config,
    with_policy,
)

__version__ = "0.1.0"
