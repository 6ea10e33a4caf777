import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from pncmac import phy


def normal_tail(x):
    val, _ = quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), x, x + 60)
    return val


class TestQFunction:
    def test_symmetry_at_zero(self):
        assert phy.q_function(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_deep_tail_vanishes(self):
        assert phy.q_function(40.0) < 1e-300

    def test_ten_percent_point(self):
        assert phy.q_function(1.2816) == pytest.approx(0.100, abs=5e-4)

    def test_against_quadrature(self):
        for x in [-8, -3, -1, -0.5, 0.3, 1, 2, 4, 6, 8]:
            assert phy.q_function(x) == pytest.approx(normal_tail(x), abs=1e-12)


class TestPathloss:
    def test_unit_distance(self):
        assert phy.pathloss_gain(1.0, 4.0).magnitude_sq == 1.0

    def test_closed_form(self):
        g = phy.pathloss_gain(150.0, 4.0)
        assert g.magnitude_sq == pytest.approx(150.0 ** -4, rel=1e-12)
        assert phy.pathloss_gain(300.0, 4.0).magnitude_sq == pytest.approx(1.2346e-10,
                                                                           rel=1e-4)

    def test_phase_stored(self):
        assert phy.pathloss_gain(10.0, 4.0, phase=1.25).phase == 1.25

    @pytest.mark.parametrize("bad", [0.0, -3.0])
    def test_nonpositive_distance_rejected(self, bad):
        with pytest.raises(ValueError):
            phy.pathloss_gain(bad, 4.0)


class TestRss:
    # interference-free RSS at one, two and three 150 m hops
    @pytest.mark.parametrize("dist,expected", [(150.0, -84.0), (300.0, -96.1),
                                               (450.0, -103.1)])
    def test_hop_reference_values(self, dist, expected):
        got = phy.rss_dbm(3.0, phy.pathloss_gain(dist, 4.0))
        assert got == pytest.approx(expected, abs=0.05)


class TestChipBer:
    def test_zero_signal_capped_at_chance(self):
        assert phy.ber_dbpsk_chip(0.0, 1e-20) == 0.5

    def test_formula_against_q(self):
        n0 = 1e-20
        es = 2.18 * n0
        expected = 2 * phy.q_function(math.sqrt(2 * 2.18))
        assert phy.ber_dbpsk_chip(es, n0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.0368, abs=2e-4)

    def test_noiseless_limit(self):
        assert phy.ber_dbpsk_chip(1e-10, 1e-20) == 0.0

    def test_interference_enters_denominator(self):
        n0 = 1e-20
        with_i = phy.ber_dbpsk_chip(5 * n0, n0, interference_energy=n0)
        assert with_i == pytest.approx(2 * phy.q_function(math.sqrt(2 * 2.5)), rel=1e-12)

    @given(st.floats(0, 1e-18), st.floats(1e-22, 1e-18), st.floats(0, 1e-18),
           st.floats(0, 1e-19))
    @settings(max_examples=200)
    def test_monotone_in_signal_and_interference(self, es, n0, ie, bump):
        base = phy.ber_dbpsk_chip(es, n0, ie)
        assert phy.ber_dbpsk_chip(es + bump, n0, ie) <= base + 1e-15
        assert phy.ber_dnf_chip(es, n0, ie + bump) >= phy.ber_dnf_chip(es, n0, ie) - 1e-15

    @given(st.floats(0, 1e-18), st.floats(1e-22, 1e-18), st.floats(0, 1e-18))
    @settings(max_examples=200)
    def test_dnf_sandwich(self, es, n0, ie):
        p = phy.ber_dbpsk_chip(es, n0, ie)
        p_dnf = phy.ber_dnf_chip(es, n0, ie)
        assert p - 1e-15 <= p_dnf <= min(0.5, 2 * p) + 1e-15

    def test_dnf_doubles_below_cap(self):
        n0 = 1e-20
        es = 2.18 * n0
        assert phy.ber_dnf_chip(es, n0) == pytest.approx(
            2 * phy.ber_dbpsk_chip(es, n0), rel=1e-12)
        assert phy.ber_dnf_chip(0.0, n0) == 0.5


def despread_by_enumeration(p):
    """Walk all 2^11 chip-error patterns; the bit is wrong when >= 6 chips are."""
    total = 0.0
    for pattern in itertools.product((0, 1), repeat=11):
        errors = sum(pattern)
        if errors >= 6:
            total += p ** errors * (1 - p) ** (11 - errors)
    return total


class TestDespread:
    @pytest.mark.parametrize("p", [0.0, 0.01, 0.037, 0.2, 0.5, 0.8, 1.0])
    def test_matches_enumeration(self, p):
        assert phy.ber_despread(p) == pytest.approx(despread_by_enumeration(p),
                                                    abs=1e-12)

    def test_reference_points(self):
        assert phy.ber_despread(0.0) == 0.0
        assert phy.ber_despread(0.5) == pytest.approx(0.5, abs=1e-12)
        assert phy.ber_despread(0.037) == pytest.approx(1.01e-6, rel=0.02)

    @given(st.floats(0.0, 0.4999))
    @settings(max_examples=200)
    def test_spreading_gain(self, p):
        assert phy.ber_despread(p) <= p + 1e-15


class TestPacketError:
    def test_single_bit(self):
        assert phy.packet_error_prob([(0.123, 1.0)]) == pytest.approx(0.123, rel=1e-12)

    def test_long_frame(self):
        per = phy.packet_error_prob([(1e-4, 8000.0)])
        assert per == pytest.approx(1 - (1 - 1e-4) ** 8000, rel=1e-12)
        assert per == pytest.approx(0.551, abs=1e-3)

    def test_error_free_segment_is_neutral(self):
        a = phy.packet_error_prob([(1e-3, 100.0)])
        b = phy.packet_error_prob([(1e-3, 100.0), (0.0, 500.0)])
        assert a == b

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            phy.packet_error_prob([])

    @given(st.floats(0, 0.2), st.floats(1, 4000), st.floats(0.01, 0.99))
    @settings(max_examples=200)
    def test_split_invariance(self, ber, bits, frac):
        whole = phy.packet_error_prob([(ber, bits)])
        split = phy.packet_error_prob([(ber, bits * frac), (ber, bits * (1 - frac))])
        assert whole == pytest.approx(split, abs=1e-12)


class TestReceptionSampling:
    def test_boundary_probabilities(self):
        rng = np.random.default_rng(0)
        assert phy.sample_reception(0.0, rng) is True
        assert phy.sample_reception(1.0, rng) is False

    def test_law_of_large_numbers(self):
        rng = np.random.default_rng(1234)
        n = 100_000
        corrupted = sum(not phy.sample_reception(0.3, rng) for _ in range(n))
        assert corrupted / n == pytest.approx(0.3, abs=0.01)


class TestCca:
    def test_silent_channel_idle(self):
        assert not phy.cca_busy(0.0, -100.0)

    def test_neighbor_triggers(self):
        one_hop = phy.dbm_to_w(-84.0)
        assert phy.cca_busy(one_hop, -100.0)

    def test_three_hops_below_default_threshold(self):
        assert not phy.cca_busy(phy.dbm_to_w(-103.1), -100.0)

    def test_powers_add_linearly(self):
        each = phy.dbm_to_w(-103.0)
        assert not phy.cca_busy(each, -100.0)
        assert phy.cca_busy(10 * each, -100.0)


class TestCalibration:
    def test_one_percent_threshold_window(self):
        thr = phy.per_threshold_dbm(phy.PhyParams())
        assert -94.7 <= thr <= -91.7  # -93.2 +/- 1.5

    def test_threshold_solves_the_chain(self):
        p = phy.PhyParams()
        thr = phy.per_threshold_dbm(p)
        es = phy.dbm_to_w(thr) * p.chip_time_s
        ber = phy.ber_despread(phy.ber_dbpsk_chip(es, p.noise_density_w_hz))
        assert phy.packet_error_prob([(ber, 8368.0)]) == pytest.approx(0.01, abs=1e-6)

    def test_capture_is_six_db_below(self):
        p = phy.PhyParams()
        assert phy.capture_threshold_dbm(p) == pytest.approx(
            phy.per_threshold_dbm(p) - 6.0)

    def test_deterministic_reception_chain(self):
        p = phy.PhyParams()
        draws = []
        for _ in range(2):
            rng = np.random.default_rng(7)
            es = phy.dbm_to_w(-92.0) * p.chip_time_s
            ber = phy.ber_despread(phy.ber_dbpsk_chip(es, p.noise_density_w_hz))
            per = phy.packet_error_prob([(ber, 8368.0)])
            draws.append([phy.sample_reception(per, rng) for _ in range(64)])
        assert draws[0] == draws[1]
