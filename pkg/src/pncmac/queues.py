"""Per-node actual and virtual queues and the transmission selector.

The actual queue holds real packets with their residence clocks; the
virtual queue summarizes neighbor packets routed through this node, which
is what lets the node initiate a coded two-source exchange as relay.
Clocks are stored as absolute enqueue timestamps and differenced at
evaluation time.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Packet:
    id: int
    src: int
    dest: int
    length: int  # payload bytes
    created_at: float  # µs


@dataclass
class ActualQueueEntry:
    packet: Packet
    next_hop: int
    second_hop: int | None
    enqueued_at: float
    t_q_prev: float = 0.0  # residence at the previous hop, frozen at reception
    prev_hop: int | None = None  # None for locally generated packets
    retry_count: int = 0

    def t_q(self, now: float) -> float:
        return now - self.enqueued_at

    def total_age(self, now: float) -> float:
        return self.t_q(now) + self.t_q_prev


@dataclass
class VirtualPacket:
    prev_hop: int
    next_hop: int
    length: int
    prev_enqueued_at: float  # now - T_vq-prev at ingest time

    def t_vq_prev(self, now: float) -> float:
        return now - self.prev_enqueued_at

    @property
    def key(self) -> tuple[int, int]:
        return (self.prev_hop, self.next_hop)


@dataclass(frozen=True)
class TxAction:
    kind: str  # "pnc" | "cnc" | "unicast" | "none"
    entry: ActualQueueEntry | None = None
    partner: ActualQueueEntry | None = None  # cnc: the entry coded with `entry`
    pv: VirtualPacket | None = None
    pv_reverse: VirtualPacket | None = None

    def __post_init__(self):
        if self.kind == "pnc" and (self.pv is None or self.pv_reverse is None):
            raise ValueError("pnc action needs a reverse pair")
        if self.kind == "cnc" and (self.entry is None or self.partner is None):
            raise ValueError("cnc action needs two entries")
        if self.kind == "unicast" and self.entry is None:
            raise ValueError("unicast action needs an entry")


NONE_ACTION = TxAction("none")


class NodeQueues:
    """Queue state owned by one node's MAC state machine."""

    def __init__(self, capacity: int = 50):
        self.capacity = capacity
        self.actual: list[ActualQueueEntry] = []
        self.virtual: list[VirtualPacket] = []
        # wait-for-PNC flags keyed by (next_hop, second_hop), value = armed-until time
        self.wait_keys: dict[tuple[int, int], float] = {}
        self.drops_full = 0

    # -- actual queue -------------------------------------------------------

    def enqueue_actual(self, packet: Packet, next_hop: int, second_hop: int | None,
                       t_q_prev: float, now: float, prev_hop: int | None = None) -> bool:
        if len(self.actual) >= self.capacity:
            self.drops_full += 1
            return False
        self.actual.append(
            ActualQueueEntry(packet, next_hop, second_hop, now, t_q_prev, prev_hop))
        return True

    def remove_entry(self, entry: ActualQueueEntry) -> None:
        self.actual.remove(entry)

    def first_matching(self, next_hop: int, second_hop: int | None) -> ActualQueueEntry | None:
        for e in self.actual:
            if e.next_hop == next_hop and e.second_hop == second_hop:
                return e
        return None

    def next_after(self, entry: ActualQueueEntry) -> ActualQueueEntry | None:
        """First later entry sharing ``entry``'s next and second hops."""
        seen = False
        for e in self.actual:
            if e is entry:
                seen = True
            elif seen and e.next_hop == entry.next_hop and e.second_hop == entry.second_hop:
                return e
        return None

    # -- wait-for-PNC flags ---------------------------------------------------

    def is_waiting(self, entry: ActualQueueEntry, now: float) -> bool:
        if entry.second_hop is None:
            return False
        until = self.wait_keys.get((entry.next_hop, entry.second_hop))
        return until is not None and until > now

    def set_wait_flag(self, key: tuple[int, int], now: float, timeout_us: float) -> None:
        self.wait_keys[key] = now + timeout_us

    def rearm_wait_flag(self, key: tuple[int, int], now: float, timeout_us: float) -> None:
        if key in self.wait_keys:
            self.wait_keys[key] = now + timeout_us

    def clear_wait_flag(self, key: tuple[int, int]) -> None:
        self.wait_keys.pop(key, None)

    def expire_wait_flags(self, now: float) -> None:
        for key in [k for k, until in self.wait_keys.items() if until <= now]:
            del self.wait_keys[key]

    def purge_exhausted_wait_flags(self) -> None:
        """Drop flags whose (next, second) route has no packet left to wait."""
        live = {(e.next_hop, e.second_hop) for e in self.actual if e.second_hop is not None}
        for key in [k for k in self.wait_keys if k not in live]:
            del self.wait_keys[key]

    # -- virtual queue --------------------------------------------------------

    def _sort_virtual(self) -> None:
        # front = largest T_vq-prev = smallest previous-hop enqueue time
        self.virtual.sort(key=lambda v: (v.prev_enqueued_at, v.prev_hop, v.next_hop))

    def ingest_advert(self, prev_hop: int, second_hop: int | None, len_next: int,
                      t_q_next: float, now: float) -> bool:
        """Apply one neighbor advert; returns True when the queue changed.

        ``prev_hop`` is the node holding the advertised packet, ``second_hop``
        that packet's hop after this node.  Zero ``len_next`` (or a missing
        second hop) removes the entry for the pair rather than inserting one.
        """
        if second_hop is None or len_next <= 0:
            return self.remove_virtual((prev_hop, second_hop))
        key = (prev_hop, second_hop)
        kept = [v for v in self.virtual if v.key != key]
        removed = len(kept) != len(self.virtual)
        if len(kept) >= self.capacity:
            self.virtual = kept
            self._sort_virtual()
            return removed
        kept.append(VirtualPacket(prev_hop, second_hop, len_next, now - t_q_next))
        self.virtual = kept
        self._sort_virtual()
        return True

    def remove_virtual(self, key: tuple[int, int]) -> bool:
        before = len(self.virtual)
        self.virtual = [v for v in self.virtual if v.key != key]
        return len(self.virtual) != before

    def find_reverse_pair(self) -> tuple[VirtualPacket, VirtualPacket] | None:
        """First front-ordered virtual packet that has a reverse partner."""
        for pv in self.virtual:
            rev = self.find_reverse_of(pv)
            if rev is not None:
                return pv, rev
        return None

    def find_reverse_of(self, pv: VirtualPacket) -> VirtualPacket | None:
        for cand in self.virtual:
            if cand.prev_hop == pv.next_hop and cand.next_hop == pv.prev_hop:
                return cand
        return None

    def has_reverse_pair_for(self, a: int, b: int) -> bool:
        keys = {v.key for v in self.virtual}
        return (a, b) in keys and (b, a) in keys

    # -- selector -------------------------------------------------------------

    def cnc_partner(self, entry: ActualQueueEntry) -> ActualQueueEntry | None:
        """XOR partner: the first packet flowing the opposite way through us.

        The partner's destination already holds ``entry``'s native packet and
        vice versa, which is the only pairing decodable without overhearing.
        """
        if entry.prev_hop is None:
            return None
        for e in self.actual:
            if e is entry or e.prev_hop is None:
                continue
            if e.next_hop == entry.prev_hop and entry.next_hop == e.prev_hop:
                return e
        return None

    def select_action(self, now: float, *, enable_pnc: bool = True,
                      enable_cnc: bool = True) -> TxAction:
        """Pick the next transmission: coded two-source exchange as relay if a
        sufficiently aged reverse pair exists, otherwise the head-of-line
        packet via XOR broadcast or plain unicast."""
        p = None
        for e in self.actual:
            if not self.is_waiting(e, now):
                p = e
                break
        if enable_pnc:
            for pv in self.virtual:
                if p is not None and not pv.t_vq_prev(now) >= p.total_age(now):
                    break
                rev = self.find_reverse_of(pv)
                if rev is not None:
                    return TxAction("pnc", pv=pv, pv_reverse=rev)
        if p is None:
            return NONE_ACTION
        if enable_cnc:
            partner = self.cnc_partner(p)
            if partner is not None:
                return TxAction("cnc", entry=p, partner=partner)
        return TxAction("unicast", entry=p)
