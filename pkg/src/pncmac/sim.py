"""Deterministic discrete-event kernel, shared-medium model and metrics.

One run is one single-threaded event loop.  Every RNG draw comes from a
named substream derived from the run seed, so traffic, placement, backoff
and reception sampling never perturb each other and identical configs
yield bit-identical traces.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from . import phy as phymod
from .frames import Frame, FrameKind, TimingParams, frame_airtime
from .mac import NodeMac
from .phy import PhyParams
from .queues import Packet
from .topology import Topology

# how long a finished transmission stays queryable for interference math
HISTORY_KEEP_US = 50_000.0


class SimulationError(RuntimeError):
    pass


class Timer:
    __slots__ = ("time", "fn", "cancelled")

    def __init__(self, time, fn):
        self.time = time
        self.fn = fn
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class Kernel:
    """Priority-queue event loop ordered by (time, priority, sequence)."""

    def __init__(self):
        self.now = 0.0
        self._heap = []
        self._seq = 0

    def schedule(self, time: float, fn, prio: int = 1) -> Timer:
        if time < self.now - 1e-9:
            raise SimulationError(f"event scheduled in the past: {time} < {self.now}")
        timer = Timer(max(time, self.now), fn)
        heapq.heappush(self._heap, (timer.time, prio, self._seq, timer))
        self._seq += 1
        return timer

    def run(self, until: float):
        while self._heap:
            time, prio, seq, timer = heapq.heappop(self._heap)
            if time > until:
                break
            if timer.cancelled:
                continue
            self.now = time
            timer.fn()
        self.now = until


@dataclass
class TraceRecord:
    time: float
    node: int
    kind: str
    detail: str
    tx: "Transmission"

    @property
    def outcome(self) -> str:
        t = self.tx
        if not t.addressed:
            return "-"
        if t.delivered >= t.addressed:
            return "ok"
        if t.delivered:
            return "partial"
        return "lost"

    def line(self) -> str:
        return f"{self.time:.3f}\t{self.node}\t{self.kind}\t{self.outcome}\t{self.detail}"

    def key(self):
        return (round(self.time, 3), self.node, self.kind, self.outcome)


@dataclass
class Transmission:
    transmitter: int
    frame: Frame
    start: float
    end: float
    power_w: float
    phase: float
    addressed: set[int] = field(default_factory=set)
    delivered: set[int] = field(default_factory=set)


class Medium:
    """Shared-medium state: live transmissions, per-node receiver locks,
    interference accounting and reception sampling."""

    def __init__(self, kernel: Kernel, topo: Topology, phy: PhyParams,
                 timing: TimingParams, rx_rngs, phase_rng):
        self.kernel = kernel
        self.topo = topo
        self.phy = phy
        self.timing = timing
        self.rx_rngs = rx_rngs
        self.phase_rng = phase_rng
        self.macs: dict[int, NodeMac] = {}
        self.node_ids: list[int] = sorted(topo.positions)
        self.gain = {}
        self.rss_dbm = {}
        for i in self.node_ids:
            for j in self.node_ids:
                if i == j:
                    continue
                g = phymod.pathloss_gain(topo.distance(i, j), phy.path_loss_exp)
                self.gain[(i, j)] = g.magnitude_sq
                self.rss_dbm[(i, j)] = phymod.rss_dbm(phy.tx_power_dbm, g)
        # a frame can be locked onto only when the radio can detect it at
        # all: the capture floor, or the CCA sensitivity when that is the
        # weaker sense (a receiver deaf to a signal cannot sync to it either)
        self.capture_dbm = max(phymod.capture_threshold_dbm(phy),
                               phy.cca_sensitivity_dbm)
        self.active: list[Transmission] = []
        self.history: deque[Transmission] = deque()
        self.locks: dict[int, Transmission | None] = {n: None for n in self.node_ids}
        self.trace: list[TraceRecord] = []

    # -- transmission lifecycle -------------------------------------------

    def begin_transmission(self, node: int, frame: Frame) -> Transmission:
        now = self.kernel.now
        mac = self.macs[node]
        if mac.nav_until > now + 1e-9:
            raise SimulationError(
                f"node {node} started transmitting at {now} under a NAV "
                f"until {mac.nav_until}")
        if any(t.transmitter == node for t in self.active):
            raise SimulationError(f"node {node} is already transmitting")
        dur = frame_airtime(frame, self.timing)
        tx = Transmission(node, frame, now, now + dur, self.phy.tx_power_w,
                          phase=float(self.phase_rng.uniform(0.0, 2.0 * math.pi)))
        addressed = frame.info.get("addressed")
        if addressed is None:
            addressed = {a for a in (frame.ra, frame.ra2) if a is not None}
        tx.addressed = set(addressed)
        self.active.append(tx)
        self.history.append(tx)
        while self.history and self.history[0].end < now - HISTORY_KEEP_US:
            self.history.popleft()
        self.trace.append(TraceRecord(
            now, node, frame.kind.name,
            f"dur={frame.duration:.0f} len={frame.payload_len}", tx))
        self.kernel.schedule(tx.end, lambda: self._end_transmission(tx), prio=0)
        # the transmitter cannot keep receiving
        self.locks[node] = None
        for j in self.node_ids:
            if j == node:
                continue
            jm = self.macs[j]
            if jm.transmitting():
                continue
            mode, peers = jm.rx_mode()
            if mode == "joint":
                if node in peers:
                    jm.session.joint_txs.append(tx)
                continue
            if self.rss_dbm[(node, j)] < self.capture_dbm:
                continue
            if mode == "peers" and node not in peers:
                continue
            if self.locks[j] is None:
                self.locks[j] = tx
        self._notify_all()
        return tx

    def _end_transmission(self, tx: Transmission):
        self.active.remove(tx)
        for j in self.node_ids:
            if self.locks[j] is tx:
                self.locks[j] = None
                self._evaluate_and_deliver(tx, j)
        self._notify_all()

    def _notify_all(self):
        for j in self.node_ids:
            self.macs[j].on_medium_change()

    def live_tx_from(self, node: int) -> Transmission | None:
        for t in self.active:
            if t.transmitter == node:
                return t
        return None

    # -- sensing -------------------------------------------------------------

    def cca_level_w(self, node: int, started_before: float | None = None) -> float:
        return sum(t.power_w * self.gain[(t.transmitter, node)]
                   for t in self.active
                   if t.transmitter != node
                   and (started_before is None or t.start < started_before))

    def cca_is_busy(self, node: int, started_before: float | None = None) -> bool:
        """Clear-channel assessment; ``started_before`` bounds which live
        transmissions are visible, so a commit decision at a slot boundary
        cannot see a frame that began at that same instant (which is what
        makes same-slot collisions possible at zero propagation delay)."""
        return phymod.cca_busy(self.cca_level_w(node, started_before),
                               self.phy.cca_sensitivity_dbm)

    # -- interference accounting ----------------------------------------------

    def interference_segments(self, receiver: int, lo: float, hi: float,
                              intended: set[int]) -> list[tuple[float, float, float]]:
        """Partition [lo, hi] at every boundary of other transmissions; each
        piece carries the summed received power of transmitters outside the
        intended set."""
        if hi <= lo:
            raise SimulationError("empty interference interval")
        others = [t for t in self.history
                  if t.start < hi and t.end > lo
                  and t.transmitter not in intended and t.transmitter != receiver]
        bounds = {lo, hi}
        for t in others:
            bounds.add(min(max(t.start, lo), hi))
            bounds.add(min(max(t.end, lo), hi))
        edges = sorted(bounds)
        segs = []
        for s, e in zip(edges[:-1], edges[1:]):
            if e - s <= 0:
                continue
            mid = 0.5 * (s + e)
            power = sum(t.power_w * self.gain[(t.transmitter, receiver)]
                        for t in others if t.start <= mid < t.end)
            segs.append((s, e, power))
        return segs

    def signal_segments(self, receiver: int, tx: Transmission,
                        intended: set[int] | None = None) -> list[phymod.SignalSegment]:
        """SignalSegment view of one frame's MAC-bit interval at a receiver."""
        intended = intended or {tx.transmitter}
        lo = tx.start + self.timing.phy_hdr
        es = tx.power_w * self.gain[(tx.transmitter, receiver)] * self.phy.chip_time_s
        return [phymod.SignalSegment(s, e, es, p, (e - s) * self.timing.bit_rate)
                for s, e, p in self.interference_segments(receiver, lo, tx.end, intended)]

    # -- reception ------------------------------------------------------------

    def _chip_ber(self, es: float, interference_w: float, dnf: bool = False) -> float:
        n0 = self.phy.noise_density_w_hz
        ie = interference_w * self.phy.chip_time_s
        if dnf:
            return phymod.ber_dnf_chip(es, n0, ie)
        return phymod.ber_dbpsk_chip(es, n0, ie)

    def _per_over(self, receiver: int, lo: float, hi: float, es: float,
                  intended: set[int]) -> float:
        pieces = []
        for s, e, p_w in self.interference_segments(receiver, lo, hi, intended):
            ber = phymod.ber_despread(self._chip_ber(es, p_w))
            pieces.append((ber, (e - s) * self.timing.bit_rate))
        return phymod.packet_error_prob(pieces)

    def _evaluate_and_deliver(self, tx: Transmission, receiver: int):
        frame = tx.frame
        if frame.info.get("coded"):
            ok = self._evaluate_coded(tx, receiver)
        else:
            es = tx.power_w * self.gain[(tx.transmitter, receiver)] * self.phy.chip_time_s
            per = self._per_over(receiver, tx.start + self.timing.phy_hdr, tx.end,
                                 es, {tx.transmitter})
            ok = phymod.sample_reception(per, self.rx_rngs[receiver])
        if ok:
            if receiver in tx.addressed:
                tx.delivered.add(receiver)
            self.macs[receiver].on_frame(frame, tx)
        else:
            self.macs[receiver].on_corrupted(tx)

    def _evaluate_coded(self, tx: Transmission, receiver: int) -> bool:
        spec = tx.frame.info["coded"].get(receiver)
        if spec is None:
            # overhearing bystander: treat like a plain frame
            es = tx.power_w * self.gain[(tx.transmitter, receiver)] * self.phy.chip_time_s
            per = self._per_over(receiver, tx.start + self.timing.phy_hdr, tx.end,
                                 es, {tx.transmitter})
            return phymod.sample_reception(per, self.rx_rngs[receiver])
        lo = tx.start + self.timing.phy_hdr
        es = tx.power_w * self.gain[(tx.transmitter, receiver)] * self.phy.chip_time_s
        rate = self.timing.bit_rate
        link = [((s - lo) * rate, (e - lo) * rate, self._chip_ber(es, p_w))
                for s, e, p_w in self.interference_segments(
                    receiver, lo, tx.end, {tx.transmitter})]
        per = composed_packet_error(spec["relay_profile"], link, spec["bits"])
        return phymod.sample_reception(per, self.rx_rngs[receiver])

    def evaluate_superposed(self, relay: int, tx_a: Transmission,
                            tx_b: Transmission) -> dict:
        """Relay-side outcome of two staggered source frames.

        Returns header decode results plus the relay-stage chip-error
        profiles each destination's copy of the coded forward will carry.
        The second frame is bit-reversed, so its MAC header occupies its
        final header-time on air and both header windows are free of the
        partner signal by construction.
        """
        t = self.timing
        phy_hdr, mac_hdr = t.phy_hdr, t.mac_hdr
        rate = t.bit_rate
        a, b = tx_a.transmitter, tx_b.transmitter
        es_a = tx_a.power_w * self.gain[(a, relay)] * self.phy.chip_time_s
        es_b = tx_b.power_w * self.gain[(b, relay)] * self.phy.chip_time_s
        es_min = min(es_a, es_b)
        hdr_a = (tx_a.start + phy_hdr, tx_a.start + phy_hdr + mac_hdr)
        hdr_b = (tx_b.end - mac_hdr, tx_b.end)
        if tx_b.start < hdr_a[1] - 1e-6 or tx_a.end > hdr_b[0] + 1e-6:
            raise SimulationError("superposed frames overlap a header window")
        intended = {a, b}
        hdr_a_ok = phymod.sample_reception(
            self._per_over(relay, hdr_a[0], hdr_a[1], es_a, intended),
            self.rx_rngs[relay])
        hdr_b_ok = phymod.sample_reception(
            self._per_over(relay, hdr_b[0], hdr_b[1], es_b, intended),
            self.rx_rngs[relay])
        if hdr_a_ok:
            tx_a.delivered.add(relay)
        if hdr_b_ok:
            tx_b.delivered.add(relay)
        bits_a = (tx_a.end - tx_a.start - phy_hdr) * rate
        bits_b = (tx_b.end - tx_b.start - phy_hdr) * rate
        overlap_lo, overlap_hi = tx_b.start, tx_a.end

        # A's packet as the relay will re-encode it, in normal bit order.
        # Verified header bits are exact; clean bits before the overlap are
        # plain DBPSK; overlapped bits go through the DNF mapping.
        prof_b = []  # for destination b, which extracts A's packet
        lo_a = tx_a.start + phy_hdr
        for s, e, p_w in self._pieces(relay, lo_a, tx_a.end, intended,
                                      extra_bounds=(hdr_a[1], overlap_lo)):
            if e <= hdr_a[1]:
                ber = 0.0
            elif e <= overlap_lo:
                ber = self._chip_ber(es_a, p_w)
            else:
                ber = self._chip_ber(es_min, p_w, dnf=True)
            prof_b.append(((s - lo_a) * rate, (e - lo_a) * rate, ber))

        # B's packet: on-air content is reversed, so bit i sits at offset
        # (bits_b - i) from the end of the MAC interval.
        prof_a = []  # for destination a, which extracts B's packet
        lo_b = tx_b.start + phy_hdr
        for s, e, p_w in self._pieces(relay, lo_b, tx_b.end, intended,
                                      extra_bounds=(overlap_hi, hdr_b[0])):
            if s >= hdr_b[0]:
                ber = 0.0
            elif s < overlap_hi:
                ber = self._chip_ber(es_min, p_w, dnf=True)
            else:
                ber = self._chip_ber(es_b, p_w)
            prof_a.append(((tx_b.end - e) * rate, (tx_b.end - s) * rate, ber))
        prof_a.sort()
        return {"hdr_a_ok": hdr_a_ok, "hdr_b_ok": hdr_b_ok,
                "bits_a": bits_a, "bits_b": bits_b,
                "profile_for_a": prof_a, "profile_for_b": prof_b,
                "es_a": es_a, "es_b": es_b}

    def _pieces(self, receiver, lo, hi, intended, extra_bounds=()):
        segs = self.interference_segments(receiver, lo, hi, intended)
        bounds = sorted({b for b in extra_bounds if lo < b < hi})
        out = []
        for s, e, p in segs:
            cuts = [s] + [b for b in bounds if s < b < e] + [e]
            for cs, ce in zip(cuts[:-1], cuts[1:]):
                out.append((cs, ce, p))
        return out


def composed_packet_error(relay_profile, link_profile, bits: float) -> float:
    """Packet error over ``bits`` when relay-stage and forward-link chip
    errors compose independently before despreading."""
    bounds = {0.0, bits}
    for lo, hi, _ in relay_profile:
        bounds.update((min(lo, bits), min(hi, bits)))
    for lo, hi, _ in link_profile:
        bounds.update((min(lo, bits), min(hi, bits)))
    edges = sorted(bounds)

    def value_at(profile, x):
        for lo, hi, p in profile:
            if lo <= x < hi:
                return p
        return 0.0

    pieces = []
    for s, e in zip(edges[:-1], edges[1:]):
        if e - s <= 0:
            continue
        mid = 0.5 * (s + e)
        p1 = value_at(relay_profile, mid)
        p2 = value_at(link_profile, mid)
        p = 1.0 - (1.0 - p1) * (1.0 - p2)
        pieces.append((phymod.ber_despread(p), e - s))
    return phymod.packet_error_prob(pieces)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class Metrics:
    def __init__(self, flows: list[tuple[int, int]]):
        self.flows = flows
        self._flow_of = {}
        for idx, (x, y) in enumerate(flows):
            self._flow_of[(x, y)] = idx
            self._flow_of[(y, x)] = idx
        self.delivered_bits = [0] * len(flows)
        self.delays = [[] for _ in flows]
        self.delivered_ids: set[int] = set()
        self.generated: dict[int, Packet] = {}
        self.drops = Counter()
        self.dropped_ids: set[int] = set()
        self.counters = Counter()
        self.journeys: dict[int, list[list]] = {}

    def generate(self, packet: Packet):
        self.generated[packet.id] = packet

    def deliver(self, packet: Packet, now: float):
        if packet.id in self.delivered_ids:
            return
        self.delivered_ids.add(packet.id)
        idx = self._flow_of.get((packet.src, packet.dest))
        if idx is None:
            return
        self.delivered_bits[idx] += packet.length * 8
        self.delays[idx].append(now - packet.created_at)

    def drop(self, reason: str, packet: Packet):
        self.drops[reason] += 1
        self.dropped_ids.add(packet.id)

    def count(self, name: str):
        self.counters[name] += 1

    def journey_enqueue(self, pid: int, node: int, t: float):
        self.journeys.setdefault(pid, []).append([node, t, None])

    def journey_dequeue(self, pid: int, node: int, t: float):
        for rec in reversed(self.journeys.get(pid, [])):
            if rec[0] == node and rec[2] is None:
                rec[2] = t
                return

    def journey_bypass(self, pid: int, node: int, t: float):
        self.journeys.setdefault(pid, []).append([node, t, t])

    def flow_throughput_bps(self, idx: int, duration_s: float) -> float:
        return self.delivered_bits[idx] / duration_s

    def aggregate_throughput_bps(self, duration_s: float) -> float:
        return sum(self.delivered_bits) / duration_s

    def mean_delay_s(self, idx: int | None = None) -> float | None:
        pools = self.delays if idx is None else [self.delays[idx]]
        all_delays = [d for pool in pools for d in pool]
        if not all_delays:
            return None
        return (sum(all_delays) / len(all_delays)) / 1e6


# ---------------------------------------------------------------------------
# traffic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrafficSpec:
    model: str = "backlogged"  # or "poisson"
    rate_pkts_s: float = 5.0
    payload_bytes: int = 1000
    backlog_watermark: int = 2


class TrafficManager:
    def __init__(self, sim: "Simulation", spec: TrafficSpec, rngs):
        self.sim = sim
        self.spec = spec
        self.rngs = rngs
        self._next_id = 0
        # both endpoints of every flow originate packets toward their partner
        self.dest_of: dict[int, int] = {}
        for a, b in sim.topology.flows:
            self.dest_of[a] = b
            self.dest_of[b] = a

    def start(self):
        for node in sorted(self.dest_of):
            if self.spec.model == "backlogged":
                self.sim.kernel.schedule(0.0, lambda n=node: self.top_up(n))
            elif self.spec.model == "poisson":
                self._schedule_arrival(node)
            else:
                raise SimulationError(f"unknown traffic model {self.spec.model!r}")

    def _gen_packet(self, node: int) -> Packet:
        pid = self._next_id
        self._next_id += 1
        return Packet(pid, node, self.dest_of[node], self.spec.payload_bytes,
                      self.sim.kernel.now)

    def _inject(self, node: int):
        mac = self.sim.macs[node]
        packet = self._gen_packet(node)
        self.sim.metrics.generate(packet)
        nh = self.sim.topology.next_hop(node, packet.dest)
        sh = self.sim.topology.second_hop(node, packet.dest)
        if mac.queues.enqueue_actual(packet, nh, sh, 0.0, self.sim.kernel.now):
            self.sim.metrics.journey_enqueue(packet.id, node, self.sim.kernel.now)
        else:
            self.sim.metrics.drop("queue_full", packet)

    def top_up(self, node: int):
        mac = self.sim.macs[node]
        while sum(1 for e in mac.queues.actual
                  if e.packet.src == node) < self.spec.backlog_watermark:
            self._inject(node)
        mac.on_queue_update()

    def _schedule_arrival(self, node: int):
        gap = self.rngs[node].exponential(1e6 / self.spec.rate_pkts_s)
        self.sim.kernel.schedule(self.sim.kernel.now + gap,
                                 lambda: self._arrive(node))

    def _arrive(self, node: int):
        self._inject(node)
        self.sim.macs[node].on_queue_update()
        self._schedule_arrival(node)

    def on_departure(self, node: int):
        if self.spec.model == "backlogged" and node in self.dest_of:
            self.top_up(node)


# ---------------------------------------------------------------------------
# simulation wiring
# ---------------------------------------------------------------------------

PROTOCOLS = ("pnc", "cnc", "dot11")


class Simulation:
    def __init__(self, topology: Topology, protocol: str, traffic: TrafficSpec,
                 duration_s: float, seed: int, phy: PhyParams, timing: TimingParams):
        if protocol not in PROTOCOLS:
            raise SimulationError(f"unknown protocol {protocol!r}")
        self.topology = topology
        self.protocol = protocol
        self.duration_s = duration_s
        self.seed = seed
        self.phy = phy
        self.timing = timing
        self.kernel = Kernel()
        self.metrics = Metrics(topology.flows)
        node_ids = sorted(topology.positions)

        def rng(*key):
            return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))

        rx_rngs = {n: rng(seed, 2, n) for n in node_ids}
        self.medium = Medium(self.kernel, topology, phy, timing, rx_rngs,
                             phase_rng=rng(seed, 4))
        enable_pnc = protocol == "pnc"
        enable_cnc = protocol in ("pnc", "cnc")
        self.macs = {n: NodeMac(n, self, timing, enable_pnc, enable_cnc,
                                backoff_rng=rng(seed, 1, n))
                     for n in node_ids}
        self.medium.macs = self.macs
        self.traffic = TrafficManager(self, traffic,
                                      {n: rng(seed, 3, n) for n in node_ids})

    def on_queue_departure(self, node: int, packet: Packet, delivered: bool):
        self.metrics.journey_dequeue(packet.id, node, self.kernel.now)
        self.traffic.on_departure(node)

    def run(self) -> "RunResult":
        self.traffic.start()
        self.kernel.run(self.duration_s * 1e6)
        return RunResult(self)


class RunResult:
    def __init__(self, sim: Simulation):
        self.protocol = sim.protocol
        self.seed = sim.seed
        self.duration_s = sim.duration_s
        self.metrics = sim.metrics
        self.trace = sim.medium.trace
        self.flows = sim.topology.flows
        self.final_queues = {n: [e.packet.id for e in m.queues.actual]
                             for n, m in sim.macs.items()}

    def trace_keys(self):
        return [r.key() for r in self.trace]

    def trace_lines(self):
        return [r.line() for r in self.trace]
