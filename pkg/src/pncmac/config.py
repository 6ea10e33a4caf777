"""Scenario configuration: defaults, strict validation and file loading.

A scenario is a single YAML (or JSON) mapping; unknown keys are rejected so
typos fail loudly.  Command-line overrides use dotted leaf keys and take
precedence over the file, which takes precedence over defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

import yaml

from .frames import TimingParams
from .phy import PhyParams
from .sim import PROTOCOLS, TrafficSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TopologySpec:
    kind: str  # wheel | line | random
    pairs: int = 1  # wheel
    n: int = 3  # line
    node_count: int = 40  # random
    area_m: float = 1000.0
    flow_count: int = 10
    seed_base: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    topology: TopologySpec
    protocol: str = "pnc"
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    duration_s: float = 50.0
    seeds: tuple[int, ...] = tuple(range(10))
    phy: PhyParams = field(default_factory=PhyParams)
    timing: TimingParams = field(default_factory=TimingParams)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "topology": dataclasses.asdict(self.topology),
            "protocol": self.protocol,
            "traffic": dataclasses.asdict(self.traffic),
            "duration_s": self.duration_s,
            "seeds": list(self.seeds),
            "phy": dataclasses.asdict(self.phy),
            "timing": dataclasses.asdict(self.timing),
        }


def _build(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    top_keys = {"scenario_id", "topology", "protocol", "traffic", "duration_s",
                "seeds", "phy", "timing"}
    unknown = set(data) - top_keys
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    if "topology" not in data:
        raise ConfigError("missing required key 'topology'")
    topo_raw = data.pop("topology")
    if not isinstance(topo_raw, dict) or "kind" not in topo_raw:
        raise ConfigError("'topology' must be a mapping with a 'kind'")
    if topo_raw["kind"] not in ("wheel", "line", "random"):
        raise ConfigError(f"unknown topology kind {topo_raw['kind']!r}")
    topology = _build(TopologySpec, topo_raw, "topology")
    protocol = data.pop("protocol", "pnc")
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    traffic = _build(TrafficSpec, data.pop("traffic", {}), "traffic")
    if traffic.model not in ("backlogged", "poisson"):
        raise ConfigError(f"unknown traffic model {traffic.model!r}")
    if traffic.model == "poisson" and traffic.rate_pkts_s <= 0:
        raise ConfigError("traffic rate_pkts_s must be positive")
    phy = _build(PhyParams, data.pop("phy", {}), "phy")
    timing = _build(TimingParams, data.pop("timing", {}), "timing")
    seeds = data.pop("seeds", list(range(10)))
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    if not seeds:
        raise ConfigError("seeds must be non-empty")
    duration_s = float(data.pop("duration_s", 50.0))
    if duration_s < 0:
        raise ConfigError("duration_s must be >= 0")
    scenario_id = str(data.pop("scenario_id", _default_id(topology, protocol)))
    return ScenarioConfig(scenario_id=scenario_id, topology=topology,
                          protocol=protocol, traffic=traffic,
                          duration_s=duration_s, seeds=tuple(int(s) for s in seeds),
                          phy=phy, timing=timing)


def _default_id(topology: TopologySpec, protocol: str) -> str:
    detail = {"wheel": f"p{topology.pairs}", "line": f"n{topology.n}",
              "random": f"s{topology.seed_base}"}[topology.kind]
    return f"{topology.kind}-{detail}-{protocol}"


def load_config(path: str, overrides: dict | None = None) -> ScenarioConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_dict(data)


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides such as ``phy.cca_sensitivity_dbm=-95``."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        cur = out
        for p in parts[:-1]:
            nxt = cur.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"cannot override through scalar key {p!r}")
            cur = nxt
        cur[parts[-1]] = yaml.safe_load(str(value))
    return out
