"""Multi-point sweep campaigns reproducing the headline experiment figures.

Each campaign group runs one parameter sweep across the three protocols and
emits two datasets (throughput and delay) plus rendered figures.  Points
fan out across worker processes; every point is an isolated run, so the
aggregation is order-independent and partial failures only lose their own
points.
"""

from __future__ import annotations

import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .config import ScenarioConfig, TopologySpec
from .runner import run_single
from .sim import TrafficSpec

CCA_GRID = (-105.0, -102.5, -100.0, -97.5, -95.0, -90.0, -85.0, -82.5)
RATE_GRID = (1.0, 2.0, 5.0, 10.0, 20.0)
TIMEOUT_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
PROTOCOLS = ("pnc", "cnc", "dot11")

DATASET_COLUMNS = ("figure", "protocol", "x", "mean", "std", "n")


@dataclass(frozen=True)
class CampaignDef:
    name: str  # group key, e.g. "fig8-9"
    throughput_fig: str
    delay_fig: str
    xlabel: str
    sweep: str  # config leaf being swept
    values: tuple
    base: ScenarioConfig
    x_of: object = None  # value -> x-axis coordinate


def _wheel_base() -> ScenarioConfig:
    return ScenarioConfig(
        scenario_id="wheel-sweep", topology=TopologySpec(kind="wheel", pairs=1),
        traffic=TrafficSpec(model="backlogged"))


def _line_base(n: int = 3) -> ScenarioConfig:
    return ScenarioConfig(
        scenario_id="line-sweep", topology=TopologySpec(kind="line", n=n),
        traffic=TrafficSpec(model="backlogged"))


def _random_base() -> ScenarioConfig:
    return ScenarioConfig(
        scenario_id="random-sweep", topology=TopologySpec(kind="random"),
        traffic=TrafficSpec(model="poisson", rate_pkts_s=5.0))


def campaign_groups() -> dict[str, CampaignDef]:
    groups = {
        "fig8-9": CampaignDef(
            "fig8-9", "fig8", "fig9", "nodes in the circle", "pairs",
            (1, 2, 3, 4, 5), _wheel_base(), x_of=lambda pairs: 2 * pairs),
        "fig10-11": CampaignDef(
            "fig10-11", "fig10", "fig11", "nodes in the line", "n",
            (3, 4, 6, 8, 10), _line_base()),
        "fig12-13": CampaignDef(
            "fig12-13", "fig12", "fig13", "CCA sensitivity (dBm)",
            "cca_sensitivity_dbm", CCA_GRID, _line_base(10)),
        "fig14-15": CampaignDef(
            "fig14-15", "fig14", "fig15", "packet rate (pkts/s)",
            "rate_pkts_s", RATE_GRID, _random_base()),
        "fig16-17": CampaignDef(
            "fig16-17", "fig16", "fig17", "wait-for-PNC timeout (s)",
            "pnc_wait_timeout_s", TIMEOUT_GRID, _random_base()),
    }
    return groups


def group_for(figure: str) -> CampaignDef:
    for g in campaign_groups().values():
        if figure in (g.throughput_fig, g.delay_fig) or figure == g.name:
            return g
    raise KeyError(f"unknown campaign {figure!r}")


def apply_sweep(base: ScenarioConfig, sweep: str, value) -> ScenarioConfig:
    if sweep == "pairs":
        return base.replace(topology=replace(base.topology, pairs=value),
                            scenario_id=f"wheel-p{value}")
    if sweep == "n":
        return base.replace(topology=replace(base.topology, n=value),
                            scenario_id=f"line-n{value}")
    if sweep == "cca_sensitivity_dbm":
        return base.replace(phy=replace(base.phy, cca_sensitivity_dbm=value),
                            scenario_id=f"cca{value}")
    if sweep == "rate_pkts_s":
        return base.replace(traffic=replace(base.traffic, rate_pkts_s=value),
                            scenario_id=f"rate{value}")
    if sweep == "pnc_wait_timeout_s":
        return base.replace(timing=replace(base.timing, pnc_wait_timeout_s=value),
                            scenario_id=f"timeout{value}")
    raise KeyError(f"unknown sweep parameter {sweep!r}")


def desk_scale(config: ScenarioConfig) -> ScenarioConfig:
    """Shrink a scenario to desk scale: same protocol parameters, less time."""
    return config.replace(duration_s=10.0, seeds=(0, 1, 2))


def _point_job(args):
    config, seed = args
    try:
        result = run_single(config, seed)
        m = result.metrics
        return (config.scenario_id, config.protocol, seed,
                m.aggregate_throughput_bps(config.duration_s), m.mean_delay_s(), None)
    except Exception:
        return (config.scenario_id, config.protocol, seed, None, None,
                traceback.format_exc())


@dataclass
class CampaignResult:
    throughput_rows: list[dict] = field(default_factory=list)
    delay_rows: list[dict] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)


def run_campaign(group: CampaignDef, desk: bool = False,
                 workers: int | None = None) -> CampaignResult:
    base = desk_scale(group.base) if desk else group.base
    jobs = []
    keys = {}
    for value in group.values:
        for proto in PROTOCOLS:
            cfg = apply_sweep(base, group.sweep, value).replace(protocol=proto)
            cfg = cfg.replace(scenario_id=f"{cfg.scenario_id}-{proto}")
            keys[cfg.scenario_id] = value
            for seed in cfg.seeds:
                jobs.append((cfg, seed))
    results = []
    workers = workers if workers is not None else (os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_point_job, jobs))
    else:
        results = [_point_job(j) for j in jobs]

    out = CampaignResult()
    by_point: dict[tuple, list] = {}
    for sid, proto, seed, tp, delay, err in results:
        if err is not None:
            out.failures.append(f"{sid} seed {seed}: {err.splitlines()[-1]}")
            continue
        by_point.setdefault((keys[sid], proto), []).append((tp, delay))
    x_of = group.x_of or (lambda v: v)
    for (value, proto) in sorted(by_point, key=lambda k: (group.values.index(k[0]), k[1])):
        samples = by_point[(value, proto)]
        tps = [s[0] for s in samples]
        delays = [s[1] for s in samples if s[1] is not None]
        out.throughput_rows.append(_stat_row(group.throughput_fig, proto,
                                             x_of(value), tps))
        out.delay_rows.append(_stat_row(group.delay_fig, proto, x_of(value), delays))
    return out


def _stat_row(figure: str, proto: str, x, samples: list[float]) -> dict:
    if not samples:
        return {"figure": figure, "protocol": proto, "x": f"{x}", "mean": "",
                "std": "", "n": "0"}
    mean = sum(samples) / len(samples)
    var = sum((s - mean) ** 2 for s in samples) / len(samples)
    return {"figure": figure, "protocol": proto, "x": f"{x}",
            "mean": f"{mean:.6f}", "std": f"{var ** 0.5:.6f}",
            "n": str(len(samples))}


def dataset_csv(rows: list[dict]) -> str:
    lines = [",".join(DATASET_COLUMNS)]
    for row in rows:
        lines.append(",".join(row[c] for c in DATASET_COLUMNS))
    return "\n".join(lines) + "\n"
