"""Scenario files and built-in presets.

A scenario is an INI-style text file::

    [scenario]
    name = my-run
    policies = RR, WF, HS
    replications = 4
    sweep_param = base_rate_gbps
    sweep_values = 0.01, 0.05, 0.09

    [sim]
    n_onus = 512
    sim_duration_us = 500000
    rng_seed = 1

    [busy]
    ratio_b = 3.0

    [subcarrier 0]
    rate_gbps = 100
    onus = all
    group = 1

``onus`` takes ``all`` or a comma list of ids and inclusive ranges
(``0-31, 40``). Unset keys fall back to :class:`SimConfig` defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

from .model import BusyHourConfig, ConfigError, Policy, SimConfig, SubcarrierConfig, validate_config

_SIM_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig) if f.name not in ("subcarriers", "busy")}
_BUSY_FIELDS = {f.name: f for f in dataclasses.fields(BusyHourConfig)}
_TYPES = {"int": int, "float": float, "bool": bool}


def _field_type(f: dataclasses.Field) -> type:
    t = f.type if isinstance(f.type, str) else f.type.__name__
    return _TYPES.get(t, str)


def _coerce(name: str, raw: Any, typ: type):
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            f = float(text)
            if f != int(f):
                raise ValueError(text)
            return int(f)
        return typ(text)
    except ValueError:
        raise ConfigError([f"{name}: cannot read {text!r} as {typ.__name__}"]) from None


@dataclass(frozen=True)
class SubcarrierSpec:
    """A subcarrier before ONU ids are resolved (``onus='all'`` tracks n_onus)."""

    subcarrier_id: int
    rate_gbps: float
    onus: str
    dba_policy: Policy = Policy.HS
    group_id: int = 0
    base_rate_gbps: Optional[float] = None

    def resolve(self, n_onus: int) -> SubcarrierConfig:
        return SubcarrierConfig(
            self.subcarrier_id, self.rate_gbps, parse_onus(self.onus, n_onus), self.dba_policy, self.group_id,
            self.base_rate_gbps,
        )


def parse_onus(text: str, n_onus: int) -> tuple[int, ...]:
    text = text.strip()
    if text.lower() == "all":
        return tuple(range(n_onus))
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigError([f"onus: cannot parse {part!r}"]) from None
    return tuple(out)


@dataclass(frozen=True)
class Scenario:
    name: str
    sim: dict  # SimConfig keyword overrides, excluding subcarriers and busy
    busy: BusyHourConfig
    subcarriers: tuple[SubcarrierSpec, ...]
    sweep_param: Optional[str] = None
    sweep_values: tuple = ()
    replications: int = 1
    policies: tuple[Policy, ...] = (Policy.RR, Policy.WF, Policy.HS)

    def __post_init__(self):
        errors = []
        if self.replications < 1:
            errors.append("replications must be >= 1")
        if not self.policies:
            errors.append("at least one policy is required")
        if self.sweep_param is not None:
            if not self.sweep_values:
                errors.append(f"sweep over {self.sweep_param} has no values")
            try:
                typ = sweep_type(self.sweep_param)
                object.__setattr__(
                    self, "sweep_values", tuple(_coerce(self.sweep_param, v, typ) for v in self.sweep_values)
                )
            except ConfigError as e:
                errors.extend(e.errors)
        if errors:
            raise ConfigError(errors)

    def config(self, sweep_value=None, seed_offset: int = 0, policy: Optional[Policy] = None) -> SimConfig:
        """Materialize a validated SimConfig, optionally at one sweep value / replication / policy."""
        sim = dict(self.sim)
        busy = self.busy
        if sweep_value is not None and self.sweep_param is not None:
            if self.sweep_param.startswith("busy."):
                busy = replace(busy, **{self.sweep_param[5:]: sweep_value})
            else:
                sim[self.sweep_param] = sweep_value
        for req in ("n_onus", "sim_duration_us"):
            if req not in sim:
                raise ConfigError([f"missing required field {req!r} in [sim]"])
        n = sim["n_onus"]
        scs = tuple(s.resolve(n) for s in self.subcarriers)
        if policy is not None:
            scs = tuple(replace(s, dba_policy=Policy(policy)) for s in scs)
        sim["rng_seed"] = sim.get("rng_seed", 0) + seed_offset
        return validate_config(SimConfig(subcarriers=scs, busy=busy, **sim))

    def points(self) -> list:
        return list(self.sweep_values) if self.sweep_param else [None]


def sweep_type(param: str) -> type:
    if param.startswith("busy."):
        f = _BUSY_FIELDS.get(param[5:])
    else:
        f = _SIM_FIELDS.get(param)
    if f is None:
        raise ConfigError([f"unknown sweep parameter {param!r}"])
    return _field_type(f)


def parse_policies(text: str | Sequence) -> tuple[Policy, ...]:
    items = text.split(",") if isinstance(text, str) else text
    out = []
    for p in items:
        p = str(getattr(p, "value", p)).strip().upper()
        if not p:
            continue
        try:
            out.append(Policy(p))
        except ValueError:
            raise ConfigError([f"unknown policy {p!r} (expected RR, WF or HS)"]) from None
    return tuple(out)


def _split_values(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError([f"{source}: line {e.lineno}: expected a [section] header"]) from None
    except configparser.ParsingError as e:
        raise ConfigError([f"{source}: line {n}: cannot parse {line}" for n, line in e.errors]) from None
    except configparser.Error as e:
        n = getattr(e, "lineno", None)
        where = f"{source}: line {n}: " if n else f"{source}: "
        raise ConfigError([where + e.message.splitlines()[0]]) from None

    errors: list[str] = []
    known = {"scenario", "sim", "busy"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith("subcarrier"):
            errors.append(f"unknown section [{sec}]")

    sc_sec = cp["scenario"] if cp.has_section("scenario") else {}
    sim_sec = cp["sim"] if cp.has_section("sim") else {}
    busy_sec = cp["busy"] if cp.has_section("busy") else {}

    sim: dict[str, Any] = {}
    for k, v in sim_sec.items():
        if k not in _SIM_FIELDS:
            errors.append(f"[sim] unknown field {k!r}")
            continue
        try:
            sim[k] = _coerce(k, v, _field_type(_SIM_FIELDS[k]))
        except ConfigError as e:
            errors.extend(e.errors)
    for req in ("n_onus", "sim_duration_us"):
        if req not in sim and not any(req in e for e in errors):
            errors.append(f"missing required field {req!r} in [sim]")

    busy_kw: dict[str, Any] = {}
    for k, v in busy_sec.items():
        if k not in _BUSY_FIELDS:
            errors.append(f"[busy] unknown field {k!r}")
            continue
        try:
            busy_kw[k] = _coerce(k, v, _field_type(_BUSY_FIELDS[k]))
        except ConfigError as e:
            errors.extend(e.errors)

    subs = []
    for sec in cp.sections():
        if not sec.startswith("subcarrier"):
            continue
        s = cp[sec]
        ident = sec[len("subcarrier"):].strip()
        try:
            sid = int(ident) if ident else len(subs)
        except ValueError:
            errors.append(f"[{sec}] subcarrier id must be an integer")
            continue
        for req in ("rate_gbps", "onus"):
            if req not in s:
                errors.append(f"missing required field {req!r} in [{sec}]")
        if any(req not in s for req in ("rate_gbps", "onus")):
            continue
        allowed = {"rate_gbps", "onus", "group", "policy", "base_rate_gbps"}
        for k in s:
            if k not in allowed:
                errors.append(f"[{sec}] unknown field {k!r}")
        try:
            subs.append(
                SubcarrierSpec(
                    sid,
                    _coerce("rate_gbps", s["rate_gbps"], float),
                    s["onus"],
                    parse_policies(s.get("policy", "HS"))[0],
                    _coerce("group", s.get("group", "0"), int),
                    _coerce("base_rate_gbps", s["base_rate_gbps"], float) if "base_rate_gbps" in s else None,
                )
            )
        except (ConfigError, IndexError) as e:
            errors.extend(getattr(e, "errors", [f"[{sec}] bad policy"]))
    if not subs and not any("subcarrier" in e for e in errors):
        errors.append("missing required section [subcarrier N]")
    if errors:
        raise ConfigError(errors)

    try:
        scen = Scenario(
            name=sc_sec.get("name", os.path.splitext(os.path.basename(source))[0]),
            sim=sim,
            busy=BusyHourConfig(**busy_kw),
            subcarriers=tuple(subs),
            sweep_param=sc_sec.get("sweep_param") or None,
            sweep_values=_split_values(sc_sec.get("sweep_values", "")),
            replications=_coerce("replications", sc_sec.get("replications", "1"), int),
            policies=parse_policies(sc_sec.get("policies", "RR, WF, HS")),
        )
    except TypeError as e:
        raise ConfigError([str(e)]) from None
    # surface config-level violations (overlaps, coverage, ...) at load time
    scen.config()
    return scen


PRESETS = {
    "fig5-tdm512": """
[scenario]
name = fig5-tdm512
policies = RR, WF, HS
replications = 4
sweep_param = base_rate_gbps
sweep_values = 0.01, 0.03, 0.05, 0.07, 0.09, 0.10

[sim]
n_onus = 512
sim_duration_us = 1000000
rng_seed = 1
base_rate_gbps = 0.035
alpha = 1.5

[busy]
p_min_us = 2000
p_max_us = 3000
l_min_us = 500
l_max_us = 1000

[subcarrier 0]
rate_gbps = 100
onus = all
group = 1
""",
    "fig6-onu-sweep": """
[scenario]
name = fig6-onu-sweep
policies = RR, WF, HS
replications = 4
sweep_param = n_onus
sweep_values = 64, 128, 256, 512

[sim]
n_onus = 512
sim_duration_us = 1000000
rng_seed = 1
base_rate_gbps = 0.035
alpha = 1.5

[subcarrier 0]
rate_gbps = 100
onus = all
group = 1
""",
    "fig7-tfdm": """
[scenario]
name = fig7-tfdm
policies = RR, WF, HS
replications = 4
sweep_param = base_rate_gbps
sweep_values = 0.01, 0.02, 0.03

[sim]
n_onus = 512
sim_duration_us = 1000000
rng_seed = 1
base_rate_gbps = 0.03
alpha = 1.5

# first-class group: 32 ONUs alone on Ch1
[subcarrier 1]
rate_gbps = 25
onus = 0-31
group = 1

# normal-class group: 480 ONUs split evenly over Ch2-Ch4
[subcarrier 2]
rate_gbps = 25
onus = 32-191
group = 2

[subcarrier 3]
rate_gbps = 25
onus = 192-351
group = 2

[subcarrier 4]
rate_gbps = 25
onus = 352-511
group = 2
""",
}


def load_scenario(path_or_preset: str) -> Scenario:
    """Read a scenario file, or build a preset by name."""
    if path_or_preset in PRESETS:
        return parse_scenario(PRESETS[path_or_preset], source=path_or_preset)
    try:
        with open(path_or_preset) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError([f"cannot read scenario {path_or_preset!r}: {e.strerror}"]) from None
    return parse_scenario(text, source=path_or_preset)
