"""Frame definitions, on-air durations, NAV arithmetic and wire encoding.

Byte sizes follow IEEE 802.11 control-frame skeletons extended with the
extra addressing and queue-advert fields this MAC carries.  All NAV values
are in microseconds and are measured from the point the carrying frame's
duration field takes effect (frame end for control frames, MAC-header end
for the staggered data frames of a two-source exchange).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from enum import Enum


class FrameKind(Enum):
    RTS = 1
    CTS = 2
    RTS_PNC = 3
    CO_PNC = 4
    DATA = 5
    ACK = 6
    ACK_PNC = 7
    CNC_RTS = 8
    CNC_DATA = 9


# MAC-level byte counts per kind (DATA entries are header-only; payload adds on top)
MAC_BYTES = {
    FrameKind.RTS: 20,
    FrameKind.CTS: 14,
    FrameKind.RTS_PNC: 26,
    FrameKind.CO_PNC: 16,
    FrameKind.DATA: 46,
    FrameKind.ACK: 30,
    FrameKind.ACK_PNC: 20,
    FrameKind.CNC_RTS: 28,  # RTS + second destination + coded length
    FrameKind.CNC_DATA: 52,
}

# wire value standing in for "no node"
NO_NODE = 0xFFFFFFFFFFFF


@dataclass(frozen=True)
class TimingParams:
    sifs: float = 10.0
    difs: float = 50.0
    slot: float = 20.0
    phy_hdr: float = 192.0
    bit_rate: float = 1.0  # bits per microsecond
    pnc_wait_timeout_s: float = 1.0
    cw_min: int = 31
    cw_max: int = 1023
    retry_limit: int = 7
    queue_capacity: int = 50

    def __post_init__(self):
        if min(self.sifs, self.difs, self.slot, self.phy_hdr, self.bit_rate) <= 0:
            raise ValueError("all timing parameters must be positive")
        if abs(self.difs - (self.sifs + 2 * self.slot)) > 1e-9:
            raise ValueError("DIFS must equal SIFS + 2 slots")

    @property
    def mac_hdr(self) -> float:
        """Airtime of the DATA MAC header."""
        return 8.0 * MAC_BYTES[FrameKind.DATA] / self.bit_rate

    @property
    def pnc_wait_timeout_us(self) -> float:
        return self.pnc_wait_timeout_s * 1e6

    def airtime(self, kind: FrameKind, payload_len: int = 0) -> float:
        return self.phy_hdr + 8.0 * (MAC_BYTES[kind] + payload_len) / self.bit_rate


@dataclass(frozen=True)
class QueueAdvert:
    """Neighbor-queue summary piggybacked on DATA and ACK frames.

    ``len_next`` of zero signals that no further packet shares the route.
    Times are carried in whole milliseconds on the wire (saturating); the
    in-memory values here stay in microseconds.
    """

    next_hop: int
    second_hop: int | None
    t_q_cur: float | None  # residence of the carried packet (DATA only)
    t_q_next: float  # residence of the advertised next packet
    len_next: int


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    duration: float = 0.0
    ra: int | None = None  # receiver (first receiver for two-receiver kinds)
    ra2: int | None = None  # second receiver (RTS_PNC, ACK_PNC, CNC kinds)
    ta: int | None = None  # transmitter
    dest: int | None = None  # final destination of a DATA payload
    seq: int = 0  # packet id (low 16 bits on the wire)
    payload_len: int = 0
    prev_hop: int | None = None
    advert: QueueAdvert | None = None
    wait_for_pnc_set: bool = False
    bit_reversed: bool = False
    # CO_PNC control bits
    a_has_data: bool = False
    b_has_data: bool = False
    clear_wait_flags: bool = False
    coded_len: int = 0  # CNC_RTS: advertised size of the coming broadcast
    # simulation-only context (never serialized): embedded packets of a coded
    # forward, relay-side error profiles, session references
    info: dict = field(default_factory=dict, compare=False)

    def airtime(self, timing: TimingParams) -> float:
        return frame_airtime(self, timing)

    def with_info(self, **kw) -> "Frame":
        d = dict(self.info)
        d.update(kw)
        return replace(self, info=d)


def frame_airtime(frame: Frame, timing: TimingParams) -> float:
    """Total on-air time: PHY header plus MAC bytes plus payload."""
    return timing.airtime(frame.kind, frame.payload_len)


def data_airtime(payload_len: int, timing: TimingParams) -> float:
    return timing.airtime(FrameKind.DATA, payload_len)


# ---------------------------------------------------------------------------
# NAV arithmetic for the relay-coordinated two-source exchange
# ---------------------------------------------------------------------------

def nav_rts_pnc(timing: TimingParams) -> float:
    """Channel hold from RTS-PNC end until CO-PNC has been sent."""
    t_cts = timing.airtime(FrameKind.CTS)
    t_co = timing.airtime(FrameKind.CO_PNC)
    return 3 * timing.sifs + 2 * t_cts + t_co


def nav_cts(role: str, data_airtime_us: float, timing: TimingParams) -> float:
    """CTS NAV assuming only the responding source ends up transmitting.

    ``role`` is "A", "B" or "no_packet".  A responds first and its schedule
    includes the partner's CTS slot; B's delayed start replaces that slot
    with the header stagger.
    """
    if role == "no_packet":
        return 0.0
    t_cts = timing.airtime(FrameKind.CTS)
    t_co = timing.airtime(FrameKind.CO_PNC)
    t_ack = timing.airtime(FrameKind.ACK)
    if role == "A":
        return 4 * timing.sifs + t_cts + t_co + data_airtime_us + t_ack
    if role == "B":
        return (4 * timing.sifs + t_co + timing.phy_hdr + timing.mac_hdr
                + data_airtime_us + t_ack)
    raise ValueError(f"unknown CTS role {role!r}")


def nav_co_pnc(mode: str, nav_cts_a: float | None, nav_cts_b: float | None,
               timing: TimingParams) -> float:
    """CO-PNC NAV covering the remaining exchange, derived from the CTS NAVs."""
    t_cts = timing.airtime(FrameKind.CTS)
    t_co = timing.airtime(FrameKind.CO_PNC)
    t_ack_pnc = timing.airtime(FrameKind.ACK_PNC)
    if mode == "a_only":
        if nav_cts_a is None:
            raise ValueError("a_only mode requires the NAV from source A's CTS")
        return nav_cts_a - 2 * timing.sifs - t_cts - t_co
    if mode == "b_only":
        if nav_cts_b is None:
            raise ValueError("b_only mode requires the NAV from source B's CTS")
        return nav_cts_b - timing.sifs - t_co
    if mode == "both":
        if nav_cts_b is None:
            raise ValueError("both mode requires the NAV from source B's CTS")
        return 2 * (nav_cts_b - t_co) - timing.sifs + t_ack_pnc
    raise ValueError(f"unknown CO-PNC mode {mode!r}")


def nav_data(role: str, nav_co_pnc_both: float, data_airtime_b: float,
             timing: TimingParams) -> float:
    """NAV carried in a source's data frame, anchored at its MAC-header end."""
    if role == "single":
        return 0.0
    hdr = timing.sifs + timing.phy_hdr + timing.mac_hdr
    if role == "A":
        value = nav_co_pnc_both - hdr
    elif role == "B":
        value = nav_co_pnc_both - timing.sifs - hdr - data_airtime_b
    else:
        raise ValueError(f"unknown DATA role {role!r}")
    if value < 0:
        raise ValueError("negative data NAV; frame sizes are inconsistent")
    return value


def nav_coded_forward(timing: TimingParams) -> float:
    """NAV in the relay's coded forward, covering both ACK slots and ACK-PNC."""
    t_ack = timing.airtime(FrameKind.ACK)
    return 3 * timing.sifs + 2 * t_ack + timing.airtime(FrameKind.ACK_PNC)


def nav_rts(data_airtime_us: float, timing: TimingParams) -> float:
    return (3 * timing.sifs + timing.airtime(FrameKind.CTS)
            + data_airtime_us + timing.airtime(FrameKind.ACK))


def nav_cts_unicast(rts_nav: float, timing: TimingParams) -> float:
    return rts_nav - timing.sifs - timing.airtime(FrameKind.CTS)


def nav_data_unicast(timing: TimingParams) -> float:
    return timing.sifs + timing.airtime(FrameKind.ACK)


def nav_cnc_rts(coded_airtime_us: float, timing: TimingParams) -> float:
    return (5 * timing.sifs + 2 * timing.airtime(FrameKind.CTS)
            + coded_airtime_us + 2 * timing.airtime(FrameKind.ACK))


def nav_cnc_cts(position: int, coded_airtime_us: float, timing: TimingParams) -> float:
    """NAV of the ``position``-th (0 or 1) destination's CTS in a CNC exchange."""
    t_ack = timing.airtime(FrameKind.ACK)
    rest = 3 * timing.sifs + coded_airtime_us + 2 * t_ack
    if position == 0:
        return rest + timing.sifs + timing.airtime(FrameKind.CTS)
    return rest


def nav_cnc_data(timing: TimingParams) -> float:
    return 2 * timing.sifs + 2 * timing.airtime(FrameKind.ACK)


def xor_payload(a: bytes, b: bytes) -> bytes:
    """XOR coding of two payloads, the shorter zero-padded to the longer.

    Self-inverse: xoring the result with either native payload recovers the
    other (up to the padding length).
    """
    n = max(len(a), len(b))
    aa = a.ljust(n, b"\x00")
    bb = b.ljust(n, b"\x00")
    return bytes(x ^ y for x, y in zip(aa, bb))


# ---------------------------------------------------------------------------
# Wire encoding
# ---------------------------------------------------------------------------
#
# Canonical layout, big-endian integers.  A two-byte payload-length prefix
# stands in for the PHY-layer length field and is not counted in MAC_BYTES.
# Every frame ends with a CRC32 over the preceding MAC bytes.

def _addr(node: int | None) -> bytes:
    return (NO_NODE if node is None else node).to_bytes(6, "big")


def _read_addr(b: bytes) -> int | None:
    v = int.from_bytes(b, "big")
    return None if v == NO_NODE else v


def _ms_sat(us: float, bits: int) -> int:
    return min((1 << bits) - 1, int(round(us / 1000.0)))


def encode_frame(frame: Frame, timing: TimingParams | None = None) -> bytes:
    k = frame.kind
    flags = (1 if frame.bit_reversed else 0)
    head = bytes([k.value, flags]) + int(round(frame.duration)).to_bytes(2, "big")
    if k is FrameKind.RTS:
        body = head + _addr(frame.ra) + _addr(frame.ta)
    elif k is FrameKind.CTS:
        body = head + _addr(frame.ra)
    elif k is FrameKind.RTS_PNC:
        body = head + _addr(frame.ra) + _addr(frame.ra2) + _addr(frame.ta)
    elif k is FrameKind.CO_PNC:
        ctrl = ((1 if frame.a_has_data else 0)
                | (2 if frame.b_has_data else 0)
                | (4 if frame.clear_wait_flags else 0))
        body = head + _addr(frame.ta) + ctrl.to_bytes(2, "big")
    elif k is FrameKind.DATA:
        adv = frame.advert
        t_q_cur = _ms_sat(adv.t_q_cur or 0.0, 16) if adv else 0
        if adv and adv.len_next > 0:
            offset = _ms_sat(max(0.0, (adv.t_q_cur or 0.0) - adv.t_q_next), 15)
        else:
            offset = 0
        off_flag = offset | (0x8000 if frame.wait_for_pnc_set else 0)
        body = (head + _addr(frame.ra) + _addr(frame.ta) + _addr(frame.dest)
                + (frame.seq & 0xFFFF).to_bytes(2, "big")
                + _addr(adv.second_hop if adv else None) + _addr(frame.prev_hop)
                + t_q_cur.to_bytes(2, "big") + off_flag.to_bytes(2, "big")
                + (adv.len_next if adv else 0).to_bytes(2, "big"))
    elif k is FrameKind.ACK:
        adv = frame.advert
        body = (head + _addr(frame.ta)
                + _addr(adv.next_hop if adv else None)
                + _addr(adv.second_hop if adv else None)
                + _ms_sat(adv.t_q_next if adv else 0.0, 16).to_bytes(2, "big")
                + (adv.len_next if adv else 0).to_bytes(2, "big"))
    elif k is FrameKind.ACK_PNC:
        body = head + _addr(frame.ra) + _addr(frame.ra2)
    elif k is FrameKind.CNC_RTS:
        body = (head + _addr(frame.ra) + _addr(frame.ra2) + _addr(frame.ta)
                + frame.coded_len.to_bytes(2, "big"))
    elif k is FrameKind.CNC_DATA:
        info = frame.info
        flags2 = ((1 if info.get("wait_flag_1") else 0)
                  | (2 if info.get("wait_flag_2") else 0))
        body = (head + _addr(frame.ra) + _addr(frame.ra2) + _addr(frame.ta)
                + _addr(info.get("prev_1")) + _addr(info.get("prev_2"))
                + (info.get("seq_1", 0) & 0xFFFF).to_bytes(2, "big")
                + (info.get("seq_2", 0) & 0xFFFF).to_bytes(2, "big")
                + info.get("len_1", 0).to_bytes(2, "big")
                + info.get("len_2", 0).to_bytes(2, "big")
                + flags2.to_bytes(2, "big") + bytes(4))
    else:
        raise ValueError(f"cannot encode frame kind {k}")
    body += zlib.crc32(body).to_bytes(4, "big")
    if len(body) != MAC_BYTES[k]:
        raise AssertionError(f"{k} encoded to {len(body)} bytes, expected {MAC_BYTES[k]}")
    return frame.payload_len.to_bytes(2, "big") + body


def decode_frame(data: bytes) -> Frame:
    payload_len = int.from_bytes(data[:2], "big")
    body, crc = data[2:-4], data[-4:]
    if zlib.crc32(body).to_bytes(4, "big") != crc:
        raise ValueError("frame check sequence mismatch")
    kind = FrameKind(body[0])
    bit_reversed = bool(body[1] & 1)
    duration = float(int.from_bytes(body[2:4], "big"))
    f = body[4:]
    if kind is FrameKind.RTS:
        return Frame(kind, duration, ra=_read_addr(f[0:6]), ta=_read_addr(f[6:12]))
    if kind is FrameKind.CTS:
        return Frame(kind, duration, ra=_read_addr(f[0:6]))
    if kind is FrameKind.RTS_PNC:
        return Frame(kind, duration, ra=_read_addr(f[0:6]), ra2=_read_addr(f[6:12]),
                     ta=_read_addr(f[12:18]))
    if kind is FrameKind.CNC_RTS:
        return Frame(kind, duration, ra=_read_addr(f[0:6]), ra2=_read_addr(f[6:12]),
                     ta=_read_addr(f[12:18]),
                     coded_len=int.from_bytes(f[18:20], "big"))
    if kind is FrameKind.CO_PNC:
        ctrl = int.from_bytes(f[6:8], "big")
        return Frame(kind, duration, ta=_read_addr(f[0:6]),
                     a_has_data=bool(ctrl & 1), b_has_data=bool(ctrl & 2),
                     clear_wait_flags=bool(ctrl & 4))
    if kind is FrameKind.DATA:
        t_q_cur = int.from_bytes(f[32:34], "big") * 1000.0
        off_flag = int.from_bytes(f[34:36], "big")
        len_next = int.from_bytes(f[36:38], "big")
        second = _read_addr(f[20:26])
        ra = _read_addr(f[0:6])
        advert = QueueAdvert(next_hop=ra, second_hop=second, t_q_cur=t_q_cur,
                             t_q_next=t_q_cur - (off_flag & 0x7FFF) * 1000.0,
                             len_next=len_next)
        return Frame(kind, duration, ra=ra, ta=_read_addr(f[6:12]),
                     dest=_read_addr(f[12:18]),
                     seq=int.from_bytes(f[18:20], "big"),
                     payload_len=payload_len, prev_hop=_read_addr(f[26:32]),
                     advert=advert, wait_for_pnc_set=bool(off_flag & 0x8000),
                     bit_reversed=bit_reversed)
    if kind is FrameKind.ACK:
        advert = QueueAdvert(next_hop=_read_addr(f[6:12]), second_hop=_read_addr(f[12:18]),
                             t_q_cur=None,
                             t_q_next=int.from_bytes(f[18:20], "big") * 1000.0,
                             len_next=int.from_bytes(f[20:22], "big"))
        return Frame(kind, duration, ta=_read_addr(f[0:6]), advert=advert)
    if kind is FrameKind.ACK_PNC:
        return Frame(kind, duration, ra=_read_addr(f[0:6]), ra2=_read_addr(f[6:12]))
    if kind is FrameKind.CNC_DATA:
        flags2 = int.from_bytes(f[38:40], "big")
        info = {"prev_1": _read_addr(f[18:24]), "prev_2": _read_addr(f[24:30]),
                "seq_1": int.from_bytes(f[30:32], "big"),
                "seq_2": int.from_bytes(f[32:34], "big"),
                "len_1": int.from_bytes(f[34:36], "big"),
                "len_2": int.from_bytes(f[36:38], "big"),
                "wait_flag_1": bool(flags2 & 1), "wait_flag_2": bool(flags2 & 2)}
        return Frame(kind, duration, ra=_read_addr(f[0:6]), ra2=_read_addr(f[6:12]),
                     ta=_read_addr(f[12:18]), payload_len=payload_len, info=info)
    raise ValueError(f"cannot decode frame kind {kind}")
