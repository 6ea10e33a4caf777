"""Scenario execution: topology construction, multi-seed runs, CSV rows.

The CSV schema is fixed:
scenario_id,protocol,swept_value,seed,flow,throughput_bps,mean_delay_s,drops,pnc_count,cnc_count
with one row per (seed, flow), one aggregate row per seed (flow="all") and a
final aggregate row (seed="all"); output is byte-stable for fixed inputs.
"""

from __future__ import annotations

from .config import ScenarioConfig, TopologySpec
from .phy import PhyParams
from .sim import RunResult, Simulation, TrafficSpec
from .topology import Topology, build_line, build_random, build_wheel

CSV_COLUMNS = ("scenario_id", "protocol", "swept_value", "seed", "flow",
               "throughput_bps", "mean_delay_s", "drops", "pnc_count", "cnc_count")


def build_topology(spec: TopologySpec, phy: PhyParams, run_seed: int = 0) -> Topology:
    if spec.kind == "wheel":
        return build_wheel(spec.pairs, phy)
    if spec.kind == "line":
        return build_line(spec.n, phy)
    if spec.kind == "random":
        return build_random(phy, spec.node_count, spec.area_m, spec.flow_count,
                            seed=spec.seed_base + run_seed)
    raise ValueError(f"unknown topology kind {spec.kind!r}")


def run_single(config: ScenarioConfig, seed: int) -> RunResult:
    topo = build_topology(config.topology, config.phy, run_seed=seed)
    sim = Simulation(topo, config.protocol, config.traffic, config.duration_s,
                     seed, config.phy, config.timing)
    return sim.run()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def run_scenario(config: ScenarioConfig, swept_value: str = "") -> list[dict]:
    """Run every seed and produce the per-(seed, flow) and aggregate rows."""
    rows = []
    agg_tp, agg_delay = [], []
    for seed in config.seeds:
        result = run_single(config, seed)
        m = result.metrics
        drops = sum(m.drops.values())
        for idx, (a, b) in enumerate(result.flows):
            rows.append(_row(config, swept_value, seed, f"{a}-{b}",
                             m.flow_throughput_bps(idx, config.duration_s),
                             m.mean_delay_s(idx), drops, m.counters))
        tp = m.aggregate_throughput_bps(config.duration_s)
        rows.append(_row(config, swept_value, seed, "all", tp, m.mean_delay_s(),
                         drops, m.counters))
        agg_tp.append(tp)
        d = m.mean_delay_s()
        if d is not None:
            agg_delay.append(d)
    rows.append({
        "scenario_id": config.scenario_id, "protocol": config.protocol,
        "swept_value": swept_value, "seed": "all", "flow": "all",
        "throughput_bps": _fmt(sum(agg_tp) / len(agg_tp)),
        "mean_delay_s": _fmt(sum(agg_delay) / len(agg_delay) if agg_delay else None),
        "drops": "", "pnc_count": "", "cnc_count": "",
    })
    return rows


def _row(config, swept_value, seed, flow, tp, delay, drops, counters) -> dict:
    return {
        "scenario_id": config.scenario_id, "protocol": config.protocol,
        "swept_value": swept_value, "seed": str(seed), "flow": flow,
        "throughput_bps": _fmt(tp), "mean_delay_s": _fmt(delay),
        "drops": str(drops),
        "pnc_count": str(counters.get("pnc_success", 0)),
        "cnc_count": str(counters.get("cnc_success", 0)),
    }


def rows_to_csv(rows: list[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(row[c] for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def seed_mean_throughputs(config: ScenarioConfig) -> list[float]:
    """Aggregate throughput per seed; convenience for tests and campaigns."""
    out = []
    for seed in config.seeds:
        result = run_single(config, seed)
        out.append(result.metrics.aggregate_throughput_bps(config.duration_s))
    return out
