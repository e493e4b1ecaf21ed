"""DSP primitives: filters, channels, superposition, modems, BER, IQF1 files."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from waveform_adv import dsp
from waveform_adv.errors import SchemaError

LINEAR = ["BPSK", "QPSK", "PSK8", "QAM16", "QAM64", "OOK"]


def qfunc(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def noisy(rng, n, var):
    return math.sqrt(var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


complex_arrays = hnp.arrays(
    np.complex128,
    st.integers(1, 64),
    elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
)


class TestConvolveFir:
    @settings(max_examples=40, deadline=None)
    @given(x=complex_arrays)
    def test_identity_is_bit_exact(self, x):
        y = dsp.convolve_fir(x, dsp.FirFilter.identity(4))
        assert np.array_equal(y, x)

    def test_quarter_turn_tap(self, rng):
        x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        taps = np.zeros(3, dtype=complex)
        taps[1] = 0.5 * np.exp(1j * np.pi / 2)
        y = dsp.convolve_fir(x, taps)
        assert y[0] == 0
        np.testing.assert_allclose(y[1:], 0.5j * x[:-1], atol=1e-15)

    def test_impulse_gives_taps(self, rng):
        taps = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        x = np.zeros(12, dtype=complex)
        x[0] = 1
        y = dsp.convolve_fir(x, taps)
        np.testing.assert_array_equal(y[:5], taps)
        assert np.all(y[5:] == 0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            dsp.convolve_fir([1, np.nan], [1])
        with pytest.raises(ValueError):
            dsp.convolve_fir(np.ones((2, 2)), [1])


class TestChannel:
    def test_transparent(self, rng):
        x = rng.standard_normal(50) + 0j
        assert np.array_equal(dsp.apply_channel(x, dsp.ChannelModel.transparent(), 3), x)

    def test_attenuation(self, rng):
        x = rng.standard_normal(50) + 1j
        np.testing.assert_array_equal(dsp.apply_channel(x, dsp.ChannelModel(taps=[0.5]), 0), 0.5 * x)

    def test_path_loss(self, rng):
        x = rng.standard_normal(20) + 0j
        z = dsp.apply_channel(x, dsp.ChannelModel(path_loss_db=20.0), 0)
        np.testing.assert_allclose(z, 0.1 * x)

    def test_rayleigh_seeded(self, rng):
        x = rng.standard_normal(64) + 0j
        ch = dsp.ChannelModel.rayleigh(noise_variance=0.1)
        a, b, c = (dsp.apply_channel(x, ch, s) for s in (5, 5, 6))
        assert np.array_equal(a, b)
        assert not np.allclose(a, c)

    def test_rayleigh_power_profile(self):
        ch = dsp.ChannelModel.rayleigh(k=4, decay_db=3.0)
        taps = np.array([ch.draw(s, 1)[0] for s in range(4000)])
        power = np.mean(np.abs(taps) ** 2, axis=0)
        expected = 10 ** (-0.3 * np.arange(4))
        expected /= expected.sum()
        np.testing.assert_allclose(power, expected, rtol=0.1)

    def test_noise_variance(self):
        _, w = dsp.ChannelModel(noise_variance=0.25).draw(1, 200_000)
        assert abs(np.mean(np.abs(w) ** 2) - 0.25) < 0.005

    @pytest.mark.parametrize("name", dsp.FADING_REGIMES)
    def test_regimes(self, name):
        ch = dsp.channel_regime(name)
        assert ch.is_transparent == (name == "none")

    def test_unknown_regime(self):
        with pytest.raises(ValueError, match="fading regime"):
            dsp.channel_regime("medium")

    def test_dict_round_trip(self):
        ch = dsp.ChannelModel([1, 0.5j], 0.1, 3.0, True, 2.0)
        back = dsp.ChannelModel.from_dict(ch.to_dict())
        assert back.to_dict() == ch.to_dict()


class TestSuperimpose:
    def test_zero_jammer(self, rng):
        a = rng.standard_normal(10) + 0j
        assert np.array_equal(dsp.superimpose(a, np.zeros(4)), a)

    def test_direct_sum(self):
        np.testing.assert_array_equal(dsp.superimpose([1 + 0j], [1j]), [1 + 1j])

    def test_tiling_loop_oracle(self, rng):
        a = rng.standard_normal(1024) + 1j * rng.standard_normal(1024)
        b = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        out = dsp.superimpose(a, b, 0, tile=True)
        expect = a.copy()
        for n in range(1024):
            expect[n] += b[n % 256]
        np.testing.assert_array_equal(out, expect)

    def test_truncation_and_offset(self):
        out = dsp.superimpose(np.zeros(5), np.ones(4), offset=3)
        np.testing.assert_array_equal(out, [0, 0, 0, 1, 1])
        with pytest.raises(ValueError):
            dsp.superimpose(np.zeros(5), np.ones(2), offset=5)


class TestEnergy:
    def test_trivial(self):
        assert dsp.energy(np.zeros(4)) == 0
        assert dsp.energy([3 + 4j]) == 25

    @settings(max_examples=40, deadline=None)
    @given(x=complex_arrays)
    def test_naive_sum(self, x):
        naive = 0.0
        for v in x:
            naive += v.real * v.real + v.imag * v.imag
        assert math.isclose(dsp.energy(x), naive, rel_tol=1e-12, abs_tol=1e-300)


class TestModem:
    @pytest.mark.parametrize(
        "name,pulse", [(n, p) for n in LINEAR for p in ("rect", "rrc")] + [("GFSK", "rect")]
    )
    def test_loopback(self, rng, name, pulse):
        sc = dsp.get_scheme(name, 8, pulse)
        bits = rng.integers(0, 2, 60 * sc.bits_per_symbol).astype(np.uint8)
        z = dsp.modulate(bits, sc)
        assert z.size == 60 * 8
        np.testing.assert_array_equal(dsp.demodulate(z, sc), bits)
        assert dsp.measure_ber(bits, z, sc) == 0.0

    @pytest.mark.parametrize("name", LINEAR)
    def test_unit_power(self, rng, name):
        sc = dsp.get_scheme(name, 4)
        bits = rng.integers(0, 2, 4000 * sc.bits_per_symbol)
        assert abs(np.mean(np.abs(dsp.modulate(bits, sc)) ** 2) - 1) < 0.05

    def test_complement_bpsk(self, rng):
        sc = dsp.get_scheme("BPSK")
        bits = rng.integers(0, 2, 128).astype(np.uint8)
        assert dsp.measure_ber(bits, dsp.modulate(1 - bits, sc), sc) == 1.0

    def test_bpsk_monte_carlo(self, rng):
        sc = dsp.get_scheme("BPSK", sps=1)
        es_n0 = 10 ** 0.6
        bits = rng.integers(0, 2, 200_000)
        z = dsp.modulate(bits, sc) + noisy(rng, bits.size, 1 / es_n0)
        ber = dsp.measure_ber(bits, z, sc)
        oracle = qfunc(math.sqrt(2 * es_n0))
        assert abs(ber - oracle) <= 0.2 * oracle
        assert math.isclose(float(dsp.theoretical_ber(sc, es_n0)), oracle, rel_tol=1e-9)

    def test_qpsk_monte_carlo(self, rng):
        sc = dsp.get_scheme("QPSK", sps=1)
        es_n0 = 10 ** 0.8
        bits = rng.integers(0, 2, 200_000)
        z = dsp.modulate(bits, sc) + noisy(rng, bits.size // 2, 1 / es_n0)
        oracle = qfunc(math.sqrt(es_n0))
        assert abs(dsp.measure_ber(bits, z, sc) - oracle) <= 0.2 * oracle

    def test_qam16_at_20db(self, rng):
        sc = dsp.get_scheme("QAM16", sps=8)
        bits = rng.integers(0, 2, 100_000)
        z = dsp.modulate(bits, sc)
        z = z + noisy(rng, z.size, 10 ** -2)
        assert dsp.measure_ber(bits, z, sc) < 1e-3

    def test_measure_ber_loop_oracle(self, rng):
        sc = dsp.get_scheme("QPSK")
        bits = rng.integers(0, 2, 256).astype(np.uint8)
        z = dsp.modulate(bits, sc) + noisy(rng, 1024, 1.0)
        rx = dsp.demodulate(z, sc)
        diff = sum(int(a != b) for a, b in zip(bits, rx))
        assert dsp.measure_ber(bits, z, sc) == diff / bits.size

    def test_symbol_adjoint(self, rng):
        sc = dsp.get_scheme("QPSK", 4, "rrc")
        z = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        g = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        lhs = np.vdot(g, dsp.symbol_estimates(z, sc))
        rhs = np.vdot(dsp.symbol_estimates_adjoint(g, sc, 64), z)
        assert abs(lhs - rhs) < 1e-10

    def test_bad_bits(self):
        sc = dsp.get_scheme("QPSK")
        with pytest.raises(ValueError):
            dsp.modulate([1, 0, 1], sc)
        with pytest.raises(ValueError):
            dsp.modulate([2, 0], sc)

    def test_evm_threshold_inverts_ber(self):
        sc = dsp.get_scheme("QAM16")
        v = dsp.evm_threshold(sc, 1e-2)
        assert math.isclose(float(dsp.theoretical_ber(sc, 1 / v)), 1e-2, rel_tol=1e-6)
        assert dsp.evm_threshold(sc, 0.5) == math.inf


class TestIqf:
    def test_round_trip(self, tmp_path, rng):
        x = (rng.standard_normal(100) + 1j * rng.standard_normal(100)).astype(np.complex64).astype(complex)
        dsp.write_iqf(tmp_path / "a.iqf", x, {"label": "QPSK", "seed": 3})
        y, meta = dsp.read_iqf(tmp_path / "a.iqf")
        assert np.array_equal(x, y)
        assert meta == {"label": "QPSK", "seed": 3}

    def test_layout(self, tmp_path):
        dsp.write_iqf(tmp_path / "b.iqf", [1 + 2j])
        raw = (tmp_path / "b.iqf").read_bytes()
        assert raw[:8] == b"IQF1\x00\x00\x00\x00"
        assert np.frombuffer(raw[8:12], "<u4")[0] == 1
        np.testing.assert_array_equal(np.frombuffer(raw[12:], "<f4"), [1, 2])

    def test_corrupt(self, tmp_path):
        p = tmp_path / "c.iqf"
        dsp.write_iqf(p, np.ones(4))
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(SchemaError):
            dsp.read_iqf(p)
        p.write_bytes(b"XXXX")
        with pytest.raises(SchemaError):
            dsp.read_iqf(p)
