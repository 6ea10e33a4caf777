"""Analytic physical layer for the simulator.

Path-loss channel gains, interference-aware chip error rates for DBPSK,
the denoise-and-forward (DNF) error bound, 11-chip Barker despreading,
packet error probability and CCA sensing.  All functions are pure; the
simulation kernel owns every piece of mutable medium state.

Unit conventions: times in microseconds unless a name says otherwise,
powers in watts, energies in joules, spectral densities in W/Hz (= J).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from scipy.optimize import brentq

# binomial weights for the 11-chip Barker despreading sum
_BARKER_COMB = [math.comb(11, m) for m in range(6)]


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0 - 3.0)


def w_to_dbm(watts: float) -> float:
    if watts <= 0.0:
        return float("-inf")
    return 10.0 * math.log10(watts * 1000.0)


@dataclass(frozen=True)
class ChannelGain:
    """Deterministic power gain of a link plus its (unused downstream) phase."""

    magnitude_sq: float
    phase: float = 0.0


@dataclass(frozen=True)
class PhyParams:
    tx_power_dbm: float = 3.0
    noise_density_dbm_hz: float = -174.0
    noise_figure_db: float = 6.0
    path_loss_exp: float = 4.0
    chip_rate_hz: float = 11e6
    bit_rate_bps: float = 1e6
    cca_sensitivity_dbm: float = -100.0

    def __post_init__(self):
        if abs(self.chip_rate_hz - 11.0 * self.bit_rate_bps) > 1e-6 * self.chip_rate_hz:
            raise ValueError("chip rate must be 11x the bit rate (11-chip Barker spreading)")

    @property
    def tx_power_w(self) -> float:
        return dbm_to_w(self.tx_power_dbm)

    @property
    def noise_density_w_hz(self) -> float:
        # receiver noise figure folded into the effective density
        return dbm_to_w(self.noise_density_dbm_hz + self.noise_figure_db)

    @property
    def chip_time_s(self) -> float:
        return 1.0 / self.chip_rate_hz


@dataclass(frozen=True)
class SignalSegment:
    """A constant-interference slice of a frame's airtime.

    ``bit_count`` may be fractional: segment boundaries fall wherever another
    transmission starts or stops, not on bit edges.
    """

    start: float
    end: float
    useful_energy_per_chip: float
    interference_power_w: float
    bit_count: float

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("segment end must be after start")
        if self.interference_power_w < 0.0 or self.bit_count < 0.0:
            raise ValueError("negative interference or bit count")


def pathloss_gain(distance_m: float, alpha: float, phase: float = 0.0) -> ChannelGain:
    """Power gain 1/d^alpha of the link between two nodes."""
    if distance_m <= 0.0:
        raise ValueError("distance must be positive")
    return ChannelGain(magnitude_sq=distance_m ** (-alpha), phase=phase)


def rss_dbm(tx_power_dbm: float, gain: ChannelGain) -> float:
    """Received signal strength over a deterministic path-loss link."""
    return tx_power_dbm + 10.0 * math.log10(gain.magnitude_sq)


def q_function(x: float) -> float:
    """Gaussian tail probability P(N(0,1) > x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def ber_dbpsk_chip(es: float, n0: float, interference_energy: float = 0.0) -> float:
    """Chip error rate for DBPSK under noise plus Gaussian-approximated interference.

    ``interference_energy`` is the total interference power times the chip
    duration.  The 2Q(.) expression exceeds 0.5 at low SNR, which is
    meaningless for binary decisions, so the result is capped there.
    """
    if es < 0.0 or n0 <= 0.0 or interference_energy < 0.0:
        raise ValueError("es >= 0, n0 > 0, interference >= 0 required")
    p = 2.0 * q_function(math.sqrt(2.0 * es / (n0 + interference_energy)))
    return min(0.5, p)


def ber_dnf_chip(es_min: float, n0: float, interference_energy: float = 0.0) -> float:
    """Upper-bound chip error rate of the DNF mapping at the relay.

    ``es_min`` must be the smaller per-chip energy of the two superposed
    components; the bound is twice the DBPSK rate at that energy.
    """
    return min(0.5, 2.0 * ber_dbpsk_chip(es_min, n0, interference_energy))


def ber_despread(p_chip: float) -> float:
    """Post-despreading bit error rate: >= 6 of the 11 Barker chips wrong."""
    if not 0.0 <= p_chip <= 1.0:
        raise ValueError("chip error rate must be a probability")
    q = 1.0 - p_chip
    return sum(_BARKER_COMB[m] * q**m * p_chip ** (11 - m) for m in range(6))


def packet_error_prob(segments) -> float:
    """Packet error probability from per-segment despread BERs.

    ``segments`` is an iterable of ``(bit_error_rate, bit_count)`` pairs whose
    bit counts sum to the frame's bit length.  A packet is erroneous when at
    least one bit is.
    """
    segs = list(segments)
    if not segs:
        raise ValueError("no signal segments")
    ok = 1.0
    for ber, bits in segs:
        if bits < 0.0:
            raise ValueError("negative bit count")
        ok *= (1.0 - ber) ** bits
    return 1.0 - ok


def sample_reception(per: float, rng) -> bool:
    """Bernoulli reception draw; True means the packet survived."""
    if not 0.0 <= per <= 1.0:
        raise ValueError("packet error rate must be a probability")
    if per <= 0.0:
        return True
    if per >= 1.0:
        return False
    return rng.random() >= per


def cca_busy(total_rss_w: float, sensitivity_dbm: float) -> bool:
    """Clear-channel assessment: busy when the summed RSS reaches the threshold."""
    if total_rss_w < 0.0:
        raise ValueError("total received power cannot be negative")
    return w_to_dbm(total_rss_w) >= sensitivity_dbm


@lru_cache(maxsize=32)
def _per_threshold_dbm(tx_cache_key, frame_bits: float, target: float) -> float:
    n0, chip_time = tx_cache_key

    def per_at(rss):
        es = dbm_to_w(rss) * chip_time
        return packet_error_prob([(ber_despread(ber_dbpsk_chip(es, n0)), frame_bits)]) - target

    return brentq(per_at, -120.0, -60.0, xtol=1e-9)


def per_threshold_dbm(phy: PhyParams, frame_bits: float = 8368.0, target: float = 0.01) -> float:
    """Interference-free RSS at which a frame of ``frame_bits`` reaches ``target`` PER.

    The default frame is a 1000-byte payload plus the 46-byte MAC header.
    This threshold doubles as the link-existence rule for routing.
    """
    return _per_threshold_dbm((phy.noise_density_w_hz, phy.chip_time_s), frame_bits, target)


def capture_threshold_dbm(phy: PhyParams) -> float:
    """Weakest standalone RSS an idle receiver will lock onto (6 dB under 1%-PER)."""
    return per_threshold_dbm(phy) - 6.0


def link_range_m(phy: PhyParams) -> float:
    """Distance at which the interference-free RSS equals the 1%-PER threshold."""
    margin_db = phy.tx_power_dbm - per_threshold_dbm(phy)
    return 10.0 ** (margin_db / (10.0 * phy.path_loss_exp))
