"""Per-node MAC engine.

One class drives all three operating modes: the relay-initiated two-source
coded exchange, the XOR broadcast of two counter-flowing packets, and plain
RTS/CTS/DATA/ACK unicast.  With both coding features disabled the engine
degenerates to the DCF baseline frame-for-frame.

Every node is a deterministic state machine invoked only by the single
event loop of its run; timing inside an exchange is slot-exact (responses
at SIFS boundaries), so exchange progress is driven by scheduled timers
plus frame deliveries from the medium.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .frames import (Frame, FrameKind, QueueAdvert, TimingParams, data_airtime,
                     nav_cnc_cts, nav_cnc_data, nav_cnc_rts, nav_co_pnc,
                     nav_coded_forward, nav_cts, nav_cts_unicast, nav_data,
                     nav_data_unicast, nav_rts, nav_rts_pnc)
from .queues import ActualQueueEntry, NodeQueues, TxAction

IDLE = "idle"
PENDING = "packet_pending"


@dataclass
class Pending:
    action: TxAction
    retries: int = 0


@dataclass
class Session:
    kind: str  # relay_pnc | src_pnc | relay_cnc | dst_cnc | uni_tx | uni_rx
    state: str
    peers: set[int] = field(default_factory=set)
    joint: bool = False  # attach overlapping frames from peers instead of locking
    data: dict = field(default_factory=dict)
    joint_txs: list = field(default_factory=list)


class NodeMac:
    def __init__(self, node_id: int, sim, timing: TimingParams,
                 enable_pnc: bool, enable_cnc: bool, backoff_rng):
        self.id = node_id
        self.sim = sim
        self.timing = timing
        self.enable_pnc = enable_pnc
        self.enable_cnc = enable_cnc
        self.rng = backoff_rng
        self.queues = NodeQueues(timing.queue_capacity)
        self.phase = IDLE
        self.nav_until = 0.0
        self.cw = timing.cw_min
        self.pending: Pending | None = None
        self.session: Session | None = None
        self.transmitting_until = 0.0
        self.seen_packets: set[int] = set()  # forwarded/delivered ids, for duplicates
        # contention bookkeeping
        self._slots = 0
        self._planned = None
        self._idle_since: float | None = None

    # ------------------------------------------------------------------
    # small helpers
    # ------------------------------------------------------------------

    @property
    def now(self) -> float:
        return self.sim.kernel.now

    def _timer(self, at: float, fn, prio: int = 1):
        return self.sim.kernel.schedule(at, fn, prio)

    def _tx(self, frame: Frame):
        tx = self.sim.medium.begin_transmission(self.id, frame)
        self.transmitting_until = tx.end
        return tx

    def transmitting(self) -> bool:
        return self.transmitting_until > self.now

    def rx_mode(self):
        """How the receiver treats new frames: open capture, session peers
        only, or joint attachment for an expected superposition."""
        s = self.session
        if s is None:
            return ("open", None)
        if s.joint:
            return ("joint", s.peers)
        return ("peers", s.peers)

    def airtime_of(self, entry: ActualQueueEntry) -> float:
        return data_airtime(entry.packet.length, self.timing)

    # ------------------------------------------------------------------
    # selection (state-machine edges out of IDLE)
    # ------------------------------------------------------------------

    def maybe_select(self):
        """Run the selector if idle; enter contention when it yields work."""
        if self.phase != IDLE or self.session is not None or self.pending is not None:
            return
        self.queues.expire_wait_flags(self.now)
        action = self.queues.select_action(
            self.now, enable_pnc=self.enable_pnc, enable_cnc=self.enable_cnc)
        if action.kind == "none":
            return
        self.pending = Pending(action)
        self._enter_contention()

    def _enter_contention(self):
        self.phase = PENDING
        self._slots = int(self.rng.integers(0, self.cw + 1))
        self._idle_since = None
        self._reeval_contention()

    def on_queue_update(self):
        self.maybe_select()

    # ------------------------------------------------------------------
    # CSMA/CA contention
    # ------------------------------------------------------------------

    def _busy(self) -> bool:
        return (self.sim.medium.cca_is_busy(self.id)
                or self.nav_until > self.now
                or self.transmitting())

    def on_medium_change(self):
        self._reeval_contention()

    def _set_nav(self, until: float):
        if until > self.nav_until:
            self.nav_until = until
            if self.phase == PENDING:
                self._timer(until, self._reeval_contention)
            self._reeval_contention()

    def _reeval_contention(self):
        eligible = (self.phase == PENDING and self.pending is not None
                    and self.session is None and not self.transmitting())
        if not eligible or self._busy():
            if self._planned is not None:
                if eligible and self._planned.time <= self.now + 1e-9:
                    # the commit fires this very instant; whether it goes
                    # ahead (same-slot collision) is decided there
                    return
                # freeze: bank the slots that elapsed after DIFS
                elapsed = self.now - self._idle_since - self.timing.difs
                if elapsed > 0:
                    self._slots = max(0, self._slots - int(elapsed / self.timing.slot))
                self._planned.cancel()
                self._planned = None
                self._idle_since = None
            return
        if self._planned is not None:
            return
        self._idle_since = self.now
        start = self.now + self.timing.difs + self._slots * self.timing.slot
        self._planned = self._timer(start, self._backoff_done)

    def _backoff_done(self):
        self._planned = None
        self._idle_since = None
        busy_commit = (self.nav_until > self.now or self.transmitting()
                       or self.sim.medium.cca_is_busy(
                           self.id, started_before=self.now - 1e-9))
        if self.phase != PENDING or self.pending is None or self.session is not None \
                or busy_commit:
            self._reeval_contention()
            return
        self._slots = 0
        self._start_exchange()

    # ------------------------------------------------------------------
    # outcome bookkeeping shared by all exchanges
    # ------------------------------------------------------------------

    def _exchange_succeeded(self):
        self.cw = self.timing.cw_min
        self.pending = None
        self.session = None
        self.phase = IDLE
        self.queues.purge_exhausted_wait_flags()
        self.maybe_select()

    def _attempt_failed(self):
        """A transmission attempt failed: back off harder, retry or flush."""
        self.cw = min(2 * self.cw + 1, self.timing.cw_max)
        self.session = None
        pending = self.pending
        if pending is None:
            self.phase = IDLE
            self.maybe_select()
            return
        pending.retries += 1
        action = pending.action
        limit = self.timing.retry_limit
        if action.kind in ("unicast", "cnc"):
            action.entry.retry_count += 1
            if action.entry.retry_count >= limit:
                self._drop_entry(action.entry, "retry_limit")
                self.pending = None
                self.cw = self.timing.cw_min
                self.phase = IDLE
                self.maybe_select()
                return
            if action.kind == "cnc":
                # a two-destination reservation that could not be granted
                # degrades to a plain send of the head-of-line packet
                pending.action = TxAction("unicast", entry=action.entry)
        elif action.kind == "pnc":
            if pending.retries >= limit:
                # flush both pending virtual packets
                self.queues.remove_virtual(action.pv.key)
                self.queues.remove_virtual(action.pv_reverse.key)
                self.sim.metrics.count("pnc_flush")
                self.pending = None
                self.cw = self.timing.cw_min
                self.phase = IDLE
                self.maybe_select()
                return
        self.phase = PENDING
        self._slots = int(self.rng.integers(0, self.cw + 1))
        self._reeval_contention()

    def _abandon_pending(self):
        """Pending action invalidated by fresh information; reselect."""
        self.session = None
        self.pending = None
        self.phase = IDLE
        self.maybe_select()

    def _drop_entry(self, entry: ActualQueueEntry, reason: str):
        if entry in self.queues.actual:
            self.queues.remove_entry(entry)
        self.sim.metrics.drop(reason, entry.packet)
        self.sim.on_queue_departure(self.id, entry.packet, delivered=False)
        self.queues.purge_exhausted_wait_flags()

    def _entry_delivered(self, entry: ActualQueueEntry):
        if entry in self.queues.actual:
            self.queues.remove_entry(entry)
        self.sim.on_queue_departure(self.id, entry.packet, delivered=True)
        self.queues.purge_exhausted_wait_flags()

    def _source_attempt_failed(self, entry: ActualQueueEntry):
        """A packet polled by a relay went unacknowledged."""
        entry.retry_count += 1
        if entry.retry_count >= self.timing.retry_limit:
            self._drop_entry(entry, "retry_limit")

    def _invalidate_pending_if_gone(self):
        p = self.pending
        if p is None:
            return
        e = p.action.entry
        if p.action.kind in ("unicast", "cnc") and e not in self.queues.actual:
            self.pending = None
            if self.phase == PENDING:
                self.phase = IDLE

    # ------------------------------------------------------------------
    # advert plumbing
    # ------------------------------------------------------------------

    def _advert_for(self, entry: ActualQueueEntry, tx_time: float) -> QueueAdvert:
        """Advert carried in a DATA frame: the next same-route packet."""
        nxt = self.queues.next_after(entry)
        return QueueAdvert(
            next_hop=entry.next_hop, second_hop=entry.second_hop,
            t_q_cur=entry.t_q(tx_time),
            t_q_next=nxt.t_q(tx_time) if nxt else 0.0,
            len_next=nxt.packet.length if nxt else 0)

    def _ack_advert(self, next_hop: int | None, second_hop: int | None) -> QueueAdvert | None:
        """Advert carried in an ACK: first queued packet on the onward route."""
        if next_hop is None:
            return None
        first = self.queues.first_matching(next_hop, second_hop)
        return QueueAdvert(
            next_hop=next_hop, second_hop=second_hop, t_q_cur=None,
            t_q_next=first.t_q(self.now) if first else 0.0,
            len_next=first.packet.length if first else 0)

    def _wait_flag_for(self, receiver: int, prev_hop: int | None) -> bool:
        """Tell ``receiver`` to hold its reverse-path packets for a coded
        exchange through us (set only when a reverse pair is actually known)."""
        if not self.enable_pnc or prev_hop is None:
            return False
        return self.queues.has_reverse_pair_for(receiver, prev_hop)

    def _ingest_ack_advert(self, frame: Frame):
        adv = frame.advert
        if adv is None or adv.next_hop != self.id or frame.ta is None:
            return
        changed = self.queues.ingest_advert(frame.ta, adv.second_hop, adv.len_next,
                                            adv.t_q_next, self.now)
        if changed:
            self.maybe_select()

    def _apply_data_advert_and_flag(self, frame: Frame):
        """Bookkeeping carried by a DATA frame addressed to me."""
        adv = frame.advert
        if adv is not None and adv.next_hop == self.id:
            self.queues.ingest_advert(frame.ta, adv.second_hop, adv.len_next,
                                      adv.t_q_next, self.now)
        if frame.prev_hop is not None and frame.ta is not None:
            key = (frame.ta, frame.prev_hop)
            if frame.wait_for_pnc_set:
                self.queues.set_wait_flag(key, self.now, self.timing.pnc_wait_timeout_us)
                self._timer(self.queues.wait_keys[key] + 1.0, self._wait_flag_tick)
            else:
                self.queues.clear_wait_flag(key)

    def _wait_flag_tick(self):
        self.queues.expire_wait_flags(self.now)
        self.maybe_select()

    # ------------------------------------------------------------------
    # packet intake (unicast DATA, single-source data at relay, coded copies)
    # ------------------------------------------------------------------

    def _accept_packet(self, packet, t_q_prev: float, prev_hop: int | None
                       ) -> tuple[bool, int | None, int | None]:
        """Deliver or enqueue a received packet.

        Returns (accepted, next_hop, second_hop).  A fresh packet that finds
        the queue full is refused, which suppresses the acknowledgement and
        pushes the sender into backoff until room opens up.
        """
        if packet.dest == self.id:
            self.sim.metrics.deliver(packet, self.now)
            self.seen_packets.add(packet.id)
            return True, None, None
        next_hop = self.sim.topology.next_hop(self.id, packet.dest)
        second_hop = self.sim.topology.second_hop(self.id, packet.dest)
        if packet.id in self.seen_packets or any(
                e.packet.id == packet.id for e in self.queues.actual):
            return True, next_hop, second_hop
        if not self.queues.enqueue_actual(packet, next_hop, second_hop, t_q_prev,
                                          self.now, prev_hop):
            self.sim.metrics.drop("queue_full", packet)
            return False, next_hop, second_hop
        self.seen_packets.add(packet.id)
        self.sim.metrics.journey_enqueue(packet.id, self.id, self.now)
        return True, next_hop, second_hop

    # ------------------------------------------------------------------
    # exchange start
    # ------------------------------------------------------------------

    def _start_exchange(self):
        action = self.pending.action
        if action.kind == "unicast":
            self._start_unicast(action.entry)
        elif action.kind == "cnc":
            self._start_cnc(action)
        elif action.kind == "pnc":
            self._start_pnc(action)
        else:
            raise AssertionError(f"cannot start exchange for action {action.kind}")

    # -- unicast sender -------------------------------------------------

    def _start_unicast(self, entry: ActualQueueEntry):
        t = self.timing
        rts = Frame(FrameKind.RTS, duration=nav_rts(self.airtime_of(entry), t),
                    ra=entry.next_hop, ta=self.id)
        tx = self._tx(rts)
        self.session = Session("uni_tx", "await_cts", peers={entry.next_hop},
                               data={"entry": entry})
        sess = self.session
        self._timer(tx.end + t.sifs + t.airtime(FrameKind.CTS),
                    lambda: self._uni_cts_deadline(sess))

    def _uni_cts_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_cts":
            return
        self._attempt_failed()

    def _uni_send_data(self, sess: Session):
        if self.session is not sess:
            return
        entry = sess.data["entry"]
        t = self.timing
        frame = Frame(
            FrameKind.DATA, duration=nav_data_unicast(t), ra=entry.next_hop,
            ta=self.id, dest=entry.packet.dest, seq=entry.packet.id,
            payload_len=entry.packet.length, prev_hop=entry.prev_hop,
            advert=self._advert_for(entry, self.now),
            wait_for_pnc_set=self._wait_flag_for(entry.next_hop, entry.prev_hop),
            info={"packet": entry.packet})
        tx = self._tx(frame)
        sess.state = "await_ack"
        self._timer(tx.end + t.sifs + t.airtime(FrameKind.ACK),
                    lambda: self._uni_ack_deadline(sess))

    def _uni_ack_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_ack":
            return
        self._attempt_failed()

    def _uni_done(self, sess: Session):
        entry = sess.data["entry"]
        self.sim.metrics.count("unicast_success")
        self._entry_delivered(entry)
        self._exchange_succeeded()

    # -- receiver side of unicast ----------------------------------------

    def _handle_rts(self, frame: Frame, tx):
        if self.session is not None or self.nav_until > self.now or self.transmitting():
            return
        if len(self.queues.actual) >= self.queues.capacity:
            return  # cannot buffer the payload; silence sends the sender into backoff
        sess = Session("uni_rx", "send_cts", peers={frame.ta},
                       data={"peer": frame.ta, "rts_dur": frame.duration})
        self.session = sess
        self._reeval_contention()
        self._timer(self.now + self.timing.sifs, lambda: self._uni_rx_cts(sess))

    def _uni_rx_cts(self, sess: Session):
        if self.session is not sess:
            return
        t = self.timing
        cts = Frame(FrameKind.CTS, duration=nav_cts_unicast(sess.data["rts_dur"], t),
                    ra=sess.data["peer"])
        ctx = self._tx(cts)
        sess.state = "await_data"
        # grace past the exact slot edge so the peer's start is observable
        self._timer(ctx.end + t.sifs + 1.0, lambda: self._uni_rx_data_check(sess))

    def _uni_rx_data_check(self, sess: Session):
        if self.session is not sess or sess.state != "await_data":
            return
        if self.sim.medium.live_tx_from(sess.data["peer"]) is None:
            self.session = None
            self._reeval_contention()
            self.maybe_select()

    def _uni_rx_got_data(self, sess: Session, frame: Frame):
        self._apply_data_advert_and_flag(frame)
        packet = frame.info["packet"]
        t_q_prev = frame.advert.t_q_cur if frame.advert else 0.0
        ok, nxt, second = self._accept_packet(packet, t_q_prev, frame.ta)
        if not ok:
            self.session = None
            self._reeval_contention()
            self.maybe_select()
            return
        sess.state = "send_ack"
        self._timer(self.now + self.timing.sifs,
                    lambda: self._send_plain_ack(sess, nxt, second))

    def _send_plain_ack(self, sess: Session, next_hop, second_hop):
        if self.session is not sess:
            return
        peer = sess.data.get("peer", sess.data.get("relay"))
        ack = Frame(FrameKind.ACK, duration=0.0, ta=self.id,
                    advert=self._ack_advert(next_hop, second_hop),
                    info={"addressed": {peer}})
        atx = self._tx(ack)
        self._timer(atx.end, lambda: self._finish_rx_session(sess))

    def _finish_rx_session(self, sess: Session):
        if self.session is sess:
            self.session = None
            self._reeval_contention()
            self.maybe_select()

    # -- relay-initiated coded exchange: relay side ----------------------

    def _start_pnc(self, action: TxAction):
        pv, rev = action.pv, action.pv_reverse
        s1, l1 = pv.prev_hop, pv.length
        s2, l2 = rev.prev_hop, rev.length
        if (l1, s1) <= (l2, s2):
            a, b, la, lb = s1, s2, l1, l2
        else:
            a, b, la, lb = s2, s1, l2, l1
        t = self.timing
        rts = Frame(FrameKind.RTS_PNC, duration=nav_rts_pnc(t),
                    ra=a, ra2=b, ta=self.id)
        tx = self._tx(rts)
        sess = Session("relay_pnc", "await_cts", peers={a, b},
                       data={"a": a, "b": b, "la": la, "lb": lb,
                             "cts": {}, "rts_end": tx.end})
        self.session = sess
        t_cts = t.airtime(FrameKind.CTS)
        self._timer(tx.end + 2 * t.sifs + 2 * t_cts,
                    lambda: self._pnc_cts_deadline(sess))

    def _pnc_cts_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_cts":
            return
        a, b = sess.data["a"], sess.data["b"]
        cts = sess.data["cts"]
        # stale-info cleanup: a source that answered "no packet" has nothing
        # for us, so the corresponding virtual packet is wrong
        for src, other in ((a, b), (b, a)):
            if src in cts and not cts[src]["has_packet"]:
                self.queues.remove_virtual((src, other))
        usable = [s for s in (a, b) if cts.get(s, {}).get("has_packet")]
        if not cts:
            self._attempt_failed()
            return
        if not usable:
            self._abandon_pending()
            return
        mode = "both" if len(usable) == 2 else ("a_only" if usable[0] == a else "b_only")
        t = self.timing
        nav = nav_co_pnc(mode,
                         cts.get(a, {}).get("nav"), cts.get(b, {}).get("nav"), t)
        co = Frame(FrameKind.CO_PNC, duration=nav, ta=self.id,
                   a_has_data=a in usable, b_has_data=b in usable,
                   clear_wait_flags=any(
                       s in cts and not cts[s]["has_packet"] for s in (a, b)),
                   info={"addressed": set(usable)})
        sess.data["mode"] = mode
        sess.state = "send_co"
        self._timer(self.now + t.sifs, lambda: self._pnc_send_co(sess, co, usable))

    def _pnc_send_co(self, sess: Session, co: Frame, usable: list[int]):
        if self.session is not sess:
            return
        tx = self._tx(co)
        t = self.timing
        a, b = sess.data["a"], sess.data["b"]
        stagger = 2 * t.sifs + t.phy_hdr + t.mac_hdr
        if sess.data["mode"] == "both":
            sess.state = "await_data"
            sess.peers = {a, b}
            sess.joint = True
            expected_end = tx.end + stagger + data_airtime(sess.data["lb"], t)
            sess.data["co_end"] = tx.end
            sess.data["nav_end"] = tx.end + co.duration
            self._timer(expected_end, lambda: self._pnc_data_deadline(sess))
        else:
            src = usable[0]
            sess.state = "await_single_data"
            sess.peers = {src}
            sess.joint = False
            start = tx.end + (t.sifs if src == a else stagger)
            length = sess.data["la"] if src == a else sess.data["lb"]
            sess.data["single_src"] = src
            self._timer(start + data_airtime(length, t) + 1.0,
                        lambda: self._pnc_single_deadline(sess))

    def _pnc_single_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_single_data":
            return
        live = self.sim.medium.live_tx_from(sess.data["single_src"])
        if live is not None:
            # advertised length was stale; wait for the real frame end
            self._timer(live.end + 1.0, lambda: self._pnc_single_deadline(sess))
            return
        self._attempt_failed()

    def _pnc_single_got_data(self, sess: Session, frame: Frame):
        self._apply_data_advert_and_flag(frame)
        packet = frame.info["packet"]
        t_q_prev = frame.advert.t_q_cur if frame.advert else 0.0
        ok, nxt, second = self._accept_packet(packet, t_q_prev, frame.ta)
        if not ok:
            self._attempt_failed()
            return
        sess.state = "send_single_ack"
        self.sim.metrics.count("pnc_single")
        self._timer(self.now + self.timing.sifs,
                    lambda: self._pnc_single_ack(sess, nxt, second))

    def _pnc_single_ack(self, sess: Session, next_hop, second_hop):
        if self.session is not sess:
            return
        ack = Frame(FrameKind.ACK, duration=0.0, ta=self.id,
                    advert=self._ack_advert(next_hop, second_hop),
                    info={"addressed": {sess.data["single_src"]}})
        atx = self._tx(ack)
        self._timer(atx.end, lambda: self._pnc_relay_done(sess))

    def _pnc_data_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_data":
            return
        live = [tx for tx in sess.joint_txs if tx.end > self.now]
        if live:
            self._timer(max(tx.end for tx in live) + 0.0,
                        lambda: self._pnc_data_deadline(sess))
            return
        a, b = sess.data["a"], sess.data["b"]

        def source_data(src):
            # a source that missed the coordination frame may transmit
            # something else entirely inside the window; only its staggered
            # data frame counts as one leg of the superposition
            return next((x for x in sess.joint_txs
                         if x.transmitter == src
                         and x.frame.kind is FrameKind.DATA
                         and x.frame.ra == self.id
                         and "packet" in x.frame.info), None)

        tx_a, tx_b = source_data(a), source_data(b)
        if tx_a is None or tx_b is None:
            self._attempt_failed()
            return
        result = self.sim.medium.evaluate_superposed(self.id, tx_a, tx_b)
        if not (result["hdr_a_ok"] and result["hdr_b_ok"]):
            self.sim.metrics.count("pnc_header_fail")
            self._attempt_failed()
            return
        # fresh queue state decoded straight from both headers
        self._apply_data_advert_and_flag(tx_a.frame)
        self._apply_data_advert_and_flag(tx_b.frame)
        sess.state = "send_coded"
        sess.data.update(result=result, tx_a=tx_a, tx_b=tx_b)
        self._timer(self.now + self.timing.sifs, lambda: self._pnc_forward(sess))

    def _pnc_forward(self, sess: Session):
        if self.session is not sess:
            return
        t = self.timing
        a, b = sess.data["a"], sess.data["b"]
        tx_a, tx_b = sess.data["tx_a"], sess.data["tx_b"]
        result = sess.data["result"]
        coded = Frame(
            FrameKind.DATA, duration=nav_coded_forward(t), ra=a, ra2=b, ta=self.id,
            payload_len=tx_b.frame.payload_len,
            info={"coded": {
                a: {"bits": result["bits_b"], "relay_profile": result["profile_for_a"],
                    "origin": tx_b.frame},
                b: {"bits": result["bits_a"], "relay_profile": result["profile_for_b"],
                    "origin": tx_a.frame},
            }})
        # forwarded immediately; the superposed payloads never touch our queue
        self.sim.metrics.journey_bypass(tx_a.frame.info["packet"].id, self.id, self.now)
        self.sim.metrics.journey_bypass(tx_b.frame.info["packet"].id, self.id, self.now)
        ctx = self._tx(coded)
        sess.state = "await_acks"
        sess.joint = False
        sess.peers = {a, b}
        sess.data["acked_sources"] = set()
        t_ack = t.airtime(FrameKind.ACK)
        self._timer(ctx.end + 2 * t.sifs + 2 * t_ack,
                    lambda: self._pnc_ack_deadline(sess))

    def _pnc_ack_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_acks":
            return
        acked = sorted(sess.data["acked_sources"])
        if not acked:
            self._attempt_failed()
            return
        sess.state = "send_ack_pnc"
        self._timer(self.now + self.timing.sifs, lambda: self._pnc_ack_pnc(sess, acked))

    def _pnc_ack_pnc(self, sess: Session, acked: list[int]):
        if self.session is not sess:
            return
        frame = Frame(FrameKind.ACK_PNC, duration=0.0, ra=acked[0],
                      ra2=acked[1] if len(acked) > 1 else None)
        atx = self._tx(frame)
        self.sim.metrics.count("pnc_success")
        self._timer(atx.end, lambda: self._pnc_relay_done(sess))

    def _pnc_relay_done(self, sess: Session):
        if self.session is not sess:
            return
        self._exchange_succeeded()

    # -- relay-initiated coded exchange: source side ---------------------

    def _handle_rts_pnc(self, frame: Frame, tx):
        if self.session is not None or self.nav_until > self.now or self.transmitting():
            return
        role = "A" if frame.ra == self.id else "B"
        relay = frame.ta
        other = frame.ra2 if role == "A" else frame.ra
        entry = self.queues.first_matching(relay, other)
        self.queues.rearm_wait_flag((relay, other), self.now,
                                    self.timing.pnc_wait_timeout_us)
        t = self.timing
        t_cts = t.airtime(FrameKind.CTS)
        sess = Session("src_pnc", "send_cts", peers={relay},
                       data={"relay": relay, "other": other, "role": role,
                             "entry": entry, "rts_end": tx.end})
        self.session = sess
        self._reeval_contention()
        slot = tx.end + t.sifs if role == "A" else tx.end + 2 * t.sifs + t_cts
        self._timer(slot, lambda: self._src_send_cts(sess))
        co_end = tx.end + 3 * t.sifs + 2 * t_cts + t.airtime(FrameKind.CO_PNC)
        self._timer(co_end + 1.0, lambda: self._src_co_deadline(sess))

    def _src_send_cts(self, sess: Session):
        if self.session is not sess:
            return
        entry = sess.data["entry"]
        role = sess.data["role"]
        if entry is None:
            nav = 0.0
        else:
            nav = nav_cts(role, self.airtime_of(entry), self.timing)
        sess.data["cts_nav"] = nav
        sess.state = "await_co"
        self._tx(Frame(FrameKind.CTS, duration=nav, ra=sess.data["relay"]))

    def _src_co_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_co":
            return
        self.session = None
        self._reeval_contention()
        self.maybe_select()

    def _src_got_co(self, sess: Session, frame: Frame):
        t = self.timing
        relay, other, role = sess.data["relay"], sess.data["other"], sess.data["role"]
        entry = sess.data["entry"]
        if frame.clear_wait_flags:
            self.queues.clear_wait_flag((relay, other))
        mine = frame.a_has_data if role == "A" else frame.b_has_data
        partner = frame.b_has_data if role == "A" else frame.a_has_data
        co_end = self.now
        sess.data["co_end"] = co_end
        sess.data["nav_end"] = co_end + frame.duration
        if not mine or entry is None:
            # someone else's exchange now; stay silent for its duration
            self.session = None
            self._set_nav(co_end + frame.duration)
            self.maybe_select()
            return
        both = mine and partner
        stagger = 2 * t.sifs + t.phy_hdr + t.mac_hdr
        start = co_end + (t.sifs if role == "A" else stagger)
        if both:
            dur = nav_data(role, frame.duration, self.airtime_of(entry), t)
        else:
            dur = 0.0
        sess.state = "send_data"
        sess.data["both"] = both
        self._timer(start, lambda: self._src_send_data(sess, dur))

    def _src_send_data(self, sess: Session, dur: float):
        if self.session is not sess or sess.state != "send_data":
            return
        entry = sess.data["entry"]
        frame = Frame(
            FrameKind.DATA, duration=dur, ra=sess.data["relay"], ta=self.id,
            dest=entry.packet.dest, seq=entry.packet.id,
            payload_len=entry.packet.length, prev_hop=entry.prev_hop,
            advert=self._advert_for(entry, self.now),
            wait_for_pnc_set=self._wait_flag_for(sess.data["relay"], entry.prev_hop),
            bit_reversed=(sess.data["role"] == "B"),
            info={"packet": entry.packet})
        dtx = self._tx(frame)
        if sess.data["both"]:
            sess.state = "await_coded"
            # relay forwards straight away on success; otherwise wait out the NAV
            self._timer(sess.data["nav_end"], lambda: self._src_session_expired(sess))
        else:
            sess.state = "await_relay_ack"
            self._timer(sess.data["nav_end"] + 1.0,
                        lambda: self._src_session_expired(sess))

    def _src_session_expired(self, sess: Session):
        if self.session is not sess:
            return
        if sess.state in ("await_coded", "await_relay_ack", "await_ack_pnc"):
            self._source_attempt_failed(sess.data["entry"])
            self.session = None
            self._invalidate_pending_if_gone()
            self._reeval_contention()
            self.maybe_select()

    def _src_got_coded(self, sess: Session, frame: Frame, ok: bool):
        t = self.timing
        sess.data["decoded"] = ok
        coded_end = self.now
        role = sess.data["role"]
        t_ack = t.airtime(FrameKind.ACK)
        if ok:
            mine = frame.info["coded"][self.id]
            origin = mine["origin"]
            packet = origin.info["packet"]
            t_q_prev = origin.advert.t_q_cur if origin.advert else 0.0
            accepted, nxt, second = self._accept_packet(packet, t_q_prev, origin.ta)
            # partner queue drained: no point waiting for further pairings
            if origin.advert is not None and origin.advert.len_next == 0:
                self.queues.clear_wait_flag((sess.data["relay"], sess.data["other"]))
            if accepted:
                slot = (coded_end + t.sifs if role == "A"
                        else coded_end + 2 * t.sifs + t_ack)
                self._timer(slot, lambda: self._src_send_ack(sess, nxt, second))
        sess.state = "await_ack_pnc"
        ack_pnc_end = (coded_end + 3 * t.sifs + 2 * t_ack
                       + t.airtime(FrameKind.ACK_PNC))
        self._timer(ack_pnc_end + 1.0, lambda: self._src_ack_pnc_deadline(sess))

    def _src_send_ack(self, sess: Session, next_hop, second_hop):
        if self.session is not sess or sess.state != "await_ack_pnc":
            return
        self._tx(Frame(FrameKind.ACK, duration=0.0, ta=self.id,
                       advert=self._ack_advert(next_hop, second_hop),
                       info={"addressed": {sess.data["relay"]}}))

    def _src_got_ack_pnc(self, sess: Session, frame: Frame):
        entry = sess.data["entry"]
        if self.id in (frame.ra, frame.ra2):
            self._entry_delivered(entry)
        else:
            self._source_attempt_failed(entry)
        self.session = None
        self._invalidate_pending_if_gone()
        self._reeval_contention()
        self.maybe_select()

    def _src_ack_pnc_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_ack_pnc":
            return
        self._src_session_expired(sess)

    # -- XOR broadcast: relay side ---------------------------------------

    def _start_cnc(self, action: TxAction):
        p, q = action.entry, action.partner
        t = self.timing
        coded_len = max(p.packet.length, q.packet.length)
        coded_air = t.airtime(FrameKind.CNC_DATA, coded_len)
        rts = Frame(FrameKind.CNC_RTS, duration=nav_cnc_rts(coded_air, t),
                    ra=p.next_hop, ra2=q.next_hop, ta=self.id,
                    coded_len=coded_len)
        tx = self._tx(rts)
        sess = Session("relay_cnc", "await_cts", peers={p.next_hop, q.next_hop},
                       data={"p": p, "q": q, "coded_len": coded_len, "cts": set()})
        self.session = sess
        t_cts = t.airtime(FrameKind.CTS)
        self._timer(tx.end + 2 * t.sifs + 2 * t_cts,
                    lambda: self._cnc_cts_deadline(sess))

    def _cnc_cts_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_cts":
            return
        p, q = sess.data["p"], sess.data["q"]
        got = sess.data["cts"]
        t = self.timing
        if p.next_hop in got and q.next_hop in got:
            sess.state = "send_coded"
            self._timer(self.now + t.sifs, lambda: self._cnc_send_coded(sess))
        elif p.next_hop in got:
            # partner destination silent: send the head-of-line packet alone
            sess.state = "fallback_data"
            sess.peers = {p.next_hop}
            self._timer(self.now + t.sifs, lambda: self._cnc_fallback_data(sess))
        else:
            self._attempt_failed()

    def _cnc_send_coded(self, sess: Session):
        if self.session is not sess:
            return
        t = self.timing
        p, q = sess.data["p"], sess.data["q"]
        frame = Frame(
            FrameKind.CNC_DATA, duration=nav_cnc_data(t), ra=p.next_hop,
            ra2=q.next_hop, ta=self.id, payload_len=sess.data["coded_len"],
            info={"cnc": {
                p.next_hop: {"entry_frame": self._embedded_data(p)},
                q.next_hop: {"entry_frame": self._embedded_data(q)},
            }})
        ctx = self._tx(frame)
        sess.state = "await_acks"
        sess.data["acked"] = set()
        t_ack = t.airtime(FrameKind.ACK)
        self._timer(ctx.end + 2 * t.sifs + 2 * t_ack,
                    lambda: self._cnc_ack_deadline(sess))

    def _embedded_data(self, entry: ActualQueueEntry) -> Frame:
        """The per-destination view carried inside a coded broadcast."""
        return Frame(
            FrameKind.DATA, duration=0.0, ra=entry.next_hop, ta=self.id,
            dest=entry.packet.dest, seq=entry.packet.id,
            payload_len=entry.packet.length, prev_hop=entry.prev_hop,
            advert=self._advert_for(entry, self.now),
            wait_for_pnc_set=self._wait_flag_for(entry.next_hop, entry.prev_hop),
            info={"packet": entry.packet})

    def _cnc_fallback_data(self, sess: Session):
        if self.session is not sess:
            return
        entry = sess.data["p"]
        t = self.timing
        frame = Frame(
            FrameKind.DATA, duration=nav_data_unicast(t), ra=entry.next_hop,
            ta=self.id, dest=entry.packet.dest, seq=entry.packet.id,
            payload_len=entry.packet.length, prev_hop=entry.prev_hop,
            advert=self._advert_for(entry, self.now),
            wait_for_pnc_set=self._wait_flag_for(entry.next_hop, entry.prev_hop),
            info={"packet": entry.packet})
        dtx = self._tx(frame)
        sess.state = "await_fallback_ack"
        self._timer(dtx.end + t.sifs + t.airtime(FrameKind.ACK),
                    lambda: self._cnc_fallback_deadline(sess))

    def _cnc_fallback_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_fallback_ack":
            return
        self._attempt_failed()

    def _cnc_ack_deadline(self, sess: Session):
        if self.session is not sess or sess.state != "await_acks":
            return
        p, q = sess.data["p"], sess.data["q"]
        acked = sess.data["acked"]
        any_ok = False
        for entry in (p, q):
            if entry.next_hop in acked:
                any_ok = True
                self._entry_delivered(entry)
            else:
                entry.retry_count += 1
                if entry.retry_count >= self.timing.retry_limit:
                    self._drop_entry(entry, "retry_limit")
        if any_ok:
            self.sim.metrics.count("cnc_success")
            self._exchange_succeeded()
        else:
            self._attempt_failed()

    # -- XOR broadcast: destination side ----------------------------------

    def _handle_cnc_rts(self, frame: Frame, tx):
        if self.session is not None or self.nav_until > self.now or self.transmitting():
            return
        if len(self.queues.actual) >= self.queues.capacity:
            return
        position = 0 if frame.ra == self.id else 1
        t = self.timing
        t_cts = t.airtime(FrameKind.CTS)
        coded_air = t.airtime(FrameKind.CNC_DATA, frame.coded_len)
        sess = Session("dst_cnc", "send_cts", peers={frame.ta},
                       data={"relay": frame.ta, "position": position,
                             "coded_air": coded_air, "rts_end": tx.end})
        self.session = sess
        self._reeval_contention()
        slot = tx.end + t.sifs if position == 0 else tx.end + 2 * t.sifs + t_cts
        self._timer(slot, lambda: self._cnc_dst_cts(sess))

    def _cnc_dst_cts(self, sess: Session):
        if self.session is not sess:
            return
        t = self.timing
        pos = sess.data["position"]
        nav = nav_cnc_cts(pos, sess.data["coded_air"], t)
        self._tx(Frame(FrameKind.CTS, duration=max(0.0, nav), ra=sess.data["relay"]))
        sess.state = "await_data"
        data_start = (sess.data["rts_end"] + 3 * t.sifs
                      + 2 * t.airtime(FrameKind.CTS))
        self._timer(data_start + 1.0, lambda: self._cnc_dst_data_check(sess))

    def _cnc_dst_data_check(self, sess: Session):
        if self.session is not sess or sess.state != "await_data":
            return
        if self.sim.medium.live_tx_from(sess.data["relay"]) is None:
            self.session = None
            self._reeval_contention()
            self.maybe_select()

    def _cnc_dst_got_data(self, sess: Session, frame: Frame):
        t = self.timing
        mine = frame.info["cnc"][self.id]["entry_frame"]
        self._apply_data_advert_and_flag(mine)
        packet = mine.info["packet"]
        t_q_prev = mine.advert.t_q_cur if mine.advert else 0.0
        ok, nxt, second = self._accept_packet(packet, t_q_prev, mine.ta)
        if not ok:
            self.session = None
            self._reeval_contention()
            self.maybe_select()
            return
        data_end = self.now
        pos = sess.data["position"]
        slot = data_end + t.sifs if pos == 0 else \
            data_end + 2 * t.sifs + t.airtime(FrameKind.ACK)
        sess.state = "send_ack"
        self._timer(slot, lambda: self._send_plain_ack(sess, nxt, second))

    # ------------------------------------------------------------------
    # frame dispatch from the medium
    # ------------------------------------------------------------------

    def on_frame(self, frame: Frame, tx):
        kind = frame.kind
        sess = self.session
        # overheard ACK adverts update the virtual queue of the named next hop
        if kind is FrameKind.ACK:
            self._ingest_ack_advert(frame)

        if sess is not None:
            self._session_frame(sess, frame, tx)
            return

        if kind is FrameKind.RTS and frame.ra == self.id:
            self._handle_rts(frame, tx)
            return
        if kind is FrameKind.RTS_PNC and self.id in (frame.ra, frame.ra2):
            self._handle_rts_pnc(frame, tx)
            return
        if kind is FrameKind.CNC_RTS and self.id in (frame.ra, frame.ra2):
            self._handle_cnc_rts(frame, tx)
            return
        # bystander: virtual carrier sensing
        if self.id not in (frame.ra, frame.ra2, frame.ta) and frame.duration > 0:
            self._set_nav(self._nav_anchor(frame, tx) + frame.duration)

    def _nav_anchor(self, frame: Frame, tx) -> float:
        """When the duration field takes effect for an overhearing node."""
        if frame.kind is FrameKind.DATA and frame.ra2 is None and frame.duration > 0 \
                and frame.ta is not None and not frame.info.get("coded"):
            # staggered two-source data frames anchor at MAC-header completion
            if frame.bit_reversed:
                return tx.end
            hdr_end = tx.start + self.timing.phy_hdr + self.timing.mac_hdr
            if frame.duration > nav_data_unicast(self.timing):
                return hdr_end
        return tx.end

    def _session_frame(self, sess: Session, frame: Frame, tx):
        kind = frame.kind
        k = sess.kind
        if k == "uni_tx":
            if kind is FrameKind.CTS and frame.ra == self.id and sess.state == "await_cts":
                sess.state = "got_cts"
                self._timer(self.now + self.timing.sifs,
                            lambda: self._uni_send_data(sess))
            elif kind is FrameKind.ACK and frame.ta in sess.peers \
                    and sess.state == "await_ack":
                self._uni_done(sess)
        elif k == "uni_rx":
            if kind is FrameKind.DATA and frame.ra == self.id \
                    and sess.state == "await_data":
                self._uni_rx_got_data(sess, frame)
        elif k == "relay_pnc":
            if kind is FrameKind.CTS and frame.ra == self.id and sess.state == "await_cts":
                sess.data["cts"][tx.transmitter] = {
                    "has_packet": frame.duration > 0, "nav": frame.duration}
            elif kind is FrameKind.DATA and sess.state == "await_single_data" \
                    and tx.transmitter in sess.peers:
                self._pnc_single_got_data(sess, frame)
            elif kind is FrameKind.ACK and sess.state == "await_acks" \
                    and tx.transmitter in sess.peers:
                a, b = sess.data["a"], sess.data["b"]
                sess.data["acked_sources"].add(b if tx.transmitter == a else a)
        elif k == "src_pnc":
            if kind is FrameKind.CO_PNC and frame.ta == sess.data["relay"] \
                    and sess.state == "await_co":
                self._src_got_co(sess, frame)
            elif kind is FrameKind.DATA and frame.info.get("coded") \
                    and tx.transmitter == sess.data["relay"] \
                    and sess.state == "await_coded":
                self._src_got_coded(sess, frame, ok=True)
            elif kind is FrameKind.ACK_PNC and sess.state == "await_ack_pnc":
                self._src_got_ack_pnc(sess, frame)
            elif kind is FrameKind.ACK and sess.state == "await_relay_ack" \
                    and frame.ta == sess.data["relay"]:
                self._entry_delivered(sess.data["entry"])
                self.session = None
                self._invalidate_pending_if_gone()
                self._reeval_contention()
                self.maybe_select()
        elif k == "relay_cnc":
            if kind is FrameKind.CTS and frame.ra == self.id and sess.state == "await_cts":
                sess.data["cts"].add(tx.transmitter)
            elif kind is FrameKind.ACK and sess.state == "await_acks" \
                    and tx.transmitter in sess.peers:
                sess.data["acked"].add(tx.transmitter)
            elif kind is FrameKind.ACK and sess.state == "await_fallback_ack" \
                    and tx.transmitter == sess.data["p"].next_hop:
                entry = sess.data["p"]
                self.sim.metrics.count("unicast_success")
                self._entry_delivered(entry)
                self._exchange_succeeded()
        elif k == "dst_cnc":
            if kind is FrameKind.CNC_DATA and self.id in (frame.ra, frame.ra2) \
                    and sess.state == "await_data":
                self._cnc_dst_got_data(sess, frame)
            elif kind is FrameKind.DATA and frame.ra == self.id \
                    and sess.state == "await_data":
                # relay fell back to a plain send of its head-of-line packet
                self._uni_rx_got_data(sess, frame)

    def on_corrupted(self, tx):
        sess = self.session
        if sess is None:
            return
        if sess.kind == "src_pnc" and sess.state == "await_coded" \
                and tx.transmitter == sess.data["relay"]:
            self._src_got_coded(sess, tx.frame, ok=False)
        elif sess.kind == "uni_rx" and sess.state == "await_data":
            self.session = None
            self._reeval_contention()
            self.maybe_select()
        elif sess.kind == "dst_cnc" and sess.state == "await_data":
            self.session = None
            self._reeval_contention()
            self.maybe_select()
