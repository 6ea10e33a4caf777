"""Topology generators and static shortest-path routing.

Link existence is decided by the PHY's own 1%-PER RSS threshold, so the
connectivity graph always matches what the reception model can actually
sustain.  Routes are hop-count shortest paths with ties broken toward the
smallest next-hop id, which keeps every build deterministic.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import phy as phymod
from .phy import PhyParams


class TopologyError(ValueError):
    pass


@dataclass
class Topology:
    positions: dict[int, tuple[float, float]]
    flows: list[tuple[int, int]]  # bidirectional endpoint pairs
    routes: dict[tuple[int, int], int] = field(default_factory=dict)  # (node, dest) -> next hop

    @property
    def nodes(self) -> list[int]:
        return sorted(self.positions)

    def distance(self, a: int, b: int) -> float:
        (xa, ya), (xb, yb) = self.positions[a], self.positions[b]
        return math.hypot(xa - xb, ya - yb)

    def next_hop(self, node: int, dest: int) -> int | None:
        if node == dest:
            return None
        return self.routes.get((node, dest))

    def second_hop(self, node: int, dest: int) -> int | None:
        nh = self.next_hop(node, dest)
        if nh is None or nh == dest:
            return None
        return self.next_hop(nh, dest)


def link_exists(topo: Topology, a: int, b: int, phy: PhyParams) -> bool:
    gain = phymod.pathloss_gain(topo.distance(a, b), phy.path_loss_exp)
    return phymod.rss_dbm(phy.tx_power_dbm, gain) >= phymod.per_threshold_dbm(phy)


def _adjacency(topo: Topology, phy: PhyParams) -> dict[int, list[int]]:
    nodes = topo.nodes
    adj: dict[int, list[int]] = {n: [] for n in nodes}
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if link_exists(topo, a, b, phy):
                adj[a].append(b)
                adj[b].append(a)
    for n in adj:
        adj[n].sort()
    return adj


def shortest_path_routes(topo: Topology, phy: PhyParams) -> None:
    """Fill ``topo.routes`` with hop-count shortest next hops toward every
    reachable destination; unroutable flow endpoints raise."""
    adj = _adjacency(topo, phy)
    routes: dict[tuple[int, int], int] = {}
    for dest in topo.nodes:
        # BFS from the destination; dist and best (smallest-id) neighbor toward it
        dist = {dest: 0}
        frontier = deque([dest])
        while frontier:
            cur = frontier.popleft()
            for nb in adj[cur]:
                if nb not in dist:
                    dist[nb] = dist[cur] + 1
                    frontier.append(nb)
        for node in topo.nodes:
            if node == dest or node not in dist:
                continue
            nxt = min(nb for nb in adj[node] if nb in dist and dist[nb] == dist[node] - 1)
            routes[(node, dest)] = nxt
    topo.routes = routes
    for a, b in topo.flows:
        if (a, b) not in routes or (b, a) not in routes:
            raise TopologyError(f"flow {a}<->{b} is not routable")


def build_wheel(pair_count: int, phy: PhyParams, max_radius: float = 150.0) -> Topology:
    """Spoke nodes on a circle around a central relay; opposite nodes are flow
    partners and must be out of range of each other while every non-opposite
    pair stays in range.

    The radius window is derived from the PHY's computed link range rather
    than nominal figures, otherwise the in/out-of-range constraints cannot
    both hold as the circle fills up.
    """
    if pair_count < 1:
        raise TopologyError("need at least one pair of spokes")
    rng_m = phymod.link_range_m(phy)
    margin = 0.995
    r_lower = rng_m / (2.0 * margin)  # opposite distance 2r must exceed the range
    if pair_count == 1:
        r_upper = max_radius
    else:
        # widest non-opposite chord is between spokes (pair_count - 1) apart
        chord = 2.0 * math.sin((pair_count - 1) * math.pi / (2.0 * pair_count))
        r_upper = min(max_radius, margin * rng_m / chord)
    if r_upper < r_lower:
        raise TopologyError(
            f"wheel with {pair_count} pairs infeasible: need radius > {r_lower:.1f} m "
            f"for opposite nodes out of range but <= {r_upper:.1f} m to keep "
            f"non-opposite nodes in range")
    radius = r_upper
    n_spokes = 2 * pair_count
    positions = {0: (0.0, 0.0)}
    for k in range(n_spokes):
        ang = 2.0 * math.pi * k / n_spokes
        positions[k + 1] = (radius * math.cos(ang), radius * math.sin(ang))
    flows = [(k + 1, k + 1 + pair_count) for k in range(pair_count)]
    topo = Topology(positions, flows)
    shortest_path_routes(topo, phy)
    return topo


def build_line(n: int, phy: PhyParams, spacing: float = 150.0) -> Topology:
    """Collinear nodes with one bidirectional flow between the end nodes."""
    if n < 2:
        raise TopologyError("a line needs at least two nodes")
    positions = {i: (i * spacing, 0.0) for i in range(n)}
    topo = Topology(positions, [(0, n - 1)])
    shortest_path_routes(topo, phy)
    return topo


def build_random(phy: PhyParams, node_count: int = 40, area: float = 1000.0,
                 flow_count: int = 10, seed: int = 0, max_tries: int = 200) -> Topology:
    """Uniform random placement with randomly paired flow endpoints,
    regenerated until every flow is routable."""
    if 2 * flow_count > node_count:
        raise TopologyError("not enough nodes for the requested flow count")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x7090])))
    for _ in range(max_tries):
        pts = rng.uniform(0.0, area, size=(node_count, 2))
        positions = {i: (float(x), float(y)) for i, (x, y) in enumerate(pts)}
        endpoints = rng.permutation(node_count)[: 2 * flow_count]
        flows = [(int(endpoints[2 * i]), int(endpoints[2 * i + 1]))
                 for i in range(flow_count)]
        topo = Topology(positions, flows)
        try:
            shortest_path_routes(topo, phy)
            return topo
        except TopologyError:
            continue
    raise TopologyError(
        f"no routable random topology found in {max_tries} tries (seed {seed})")
