"""Synthetic datasets, fingerprints, splits, RadioML import and the directory container."""

import filecmp

import h5py
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from waveform_adv import data, dsp, nn
from waveform_adv.errors import SchemaError


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files:
        return False
    files = [p.relative_to(a) for p in a.rglob("*") if p.is_file()]
    return all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


class TestModulationDataset:
    def test_counts(self):
        ds = data.gen_modulation_dataset(snr_grid=(10, 20), slices_per_cell=100, n_i=64, seed=1)
        assert len(ds) == 800
        assert set(ds.counts.values()) == {200}
        assert ds.classes == ["BPSK", "QPSK", "PSK8", "QAM16"]

    def test_bpsk_30db_loopback(self):
        ds = data.gen_modulation_dataset(schemes=("BPSK",), snr_grid=(30,), slices_per_cell=5, n_i=256, seed=2)
        for i in range(len(ds)):
            assert dsp.measure_ber(ds.tx_bits(i), ds.iq[i], ds.scheme_of(i)) == 0.0

    def test_snr_meta(self):
        ds = data.gen_modulation_dataset(snr_grid=(0, 10), slices_per_cell=3, n_i=64)
        assert sorted({m["snr_db"] for m in ds.metas}) == [0.0, 10.0]

    def test_same_seed_same_files(self, tmp_path):
        for name in ("a", "b"):
            data.save_dataset(data.gen_modulation_dataset(slices_per_cell=4, n_i=64, seed=9), tmp_path / name)
        assert same_tree(tmp_path / "a", tmp_path / "b")

    def test_different_seed_differs(self):
        a = data.gen_modulation_dataset(slices_per_cell=2, n_i=64, seed=1)
        b = data.gen_modulation_dataset(slices_per_cell=2, n_i=64, seed=2)
        assert not np.allclose(a.iq, b.iq)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            data.gen_modulation_dataset(n_i=100, sps=8)
        with pytest.raises(ValueError):
            data.gen_modulation_dataset(schemes=())


class TestFingerprint:
    def test_identity_apply(self, rng):
        x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        np.testing.assert_allclose(data.DeviceFingerprint.identity(0).apply(x)[0], x)

    def test_iq_imbalance_coefficients(self):
        fp = data.DeviceFingerprint(0, gain_mismatch=0.05, phase_skew=0.08)
        mu, nu = fp.iq_coefficients
        g, phi = 1.05, 0.08
        assert np.isclose(mu, (1 + g * np.exp(-1j * phi)) / 2)
        assert np.isclose(nu, (1 - g * np.exp(1j * phi)) / 2)
        y = fp.apply(np.array([1j]))[0, 0]
        assert np.isclose(y, mu * 1j + nu * (-1j))

    def test_cfo_rotation(self):
        fp = data.DeviceFingerprint(0, cfo=1e-3)
        y = fp.apply(np.ones(100))[0]
        np.testing.assert_allclose(np.angle(y[1:] * np.conj(y[:-1])), 1e-3, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**20), scale=st.floats(0, 1))
    def test_random_within_bounds(self, seed, scale):
        fp = data.DeviceFingerprint.random(1, np.random.default_rng(seed), scale)
        assert np.max(np.abs(fp.impairment_fir - [1, 0, 0])) <= 0.2
        assert abs(fp.impairment_fir[0] - 1) <= 0.1
        back = data.DeviceFingerprint.from_dict(fp.to_dict())
        assert back.to_dict() == fp.to_dict()

    def test_validation(self):
        with pytest.raises(ValueError):
            data.DeviceFingerprint(0, impairment_fir=[1, 0.5, 0])
        with pytest.raises(ValueError):
            data.DeviceFingerprint(0, cfo=0.1)

    def test_dataset_shape_and_devices(self):
        ds = data.gen_fingerprint_dataset(4, slices_per_device=10, n_i=96, seed=3)
        assert len(ds) == 40 and ds.n_i == 96
        assert ds.classes == ["dev0", "dev1", "dev2", "dev3"]
        assert len(ds.fingerprints) == 4
        assert len({tuple(np.round(f.impairment_fir, 9)) for f in ds.fingerprints}) == 4

    def test_metadata_round_trip(self, tmp_path):
        ds = data.gen_fingerprint_dataset(3, slices_per_device=5, n_i=48, seed=3)
        data.save_dataset(ds, tmp_path / "fp")
        back = data.load_dataset(tmp_path / "fp")
        assert [f.to_dict() for f in back.fingerprints] == [f.to_dict() for f in ds.fingerprints]
        assert back.info == ds.info
        np.testing.assert_array_equal(back.tx_bits(7), ds.tx_bits(7))

    def test_identical_devices_are_indistinguishable(self):
        base = data.BaseWaveform(identical_devices=True)
        ds = data.gen_fingerprint_dataset(5, base, slices_per_device=200, n_i=96, seed=4)
        train, test = data.split(ds, (0.6, 0.4), seed=0)
        model = nn.fingerprint_surrogate(ds.classes, 96, filters=8, dense=(32, 16), seed=0)
        model, _ = nn.train(model, train, nn.TrainConfig(lr=3e-3, epochs=10, seed=0))
        acc = np.mean(model.predict(test.iq) == test.labels)
        sigma = np.sqrt(0.2 * 0.8 / len(test))
        assert abs(acc - 0.2) <= 4 * sigma


class TestSplit:
    @pytest.fixture
    def ds(self):
        return data.gen_modulation_dataset(schemes=("BPSK", "QPSK"), slices_per_cell=50, n_i=32, seed=0)

    def test_exact_halves(self, ds):
        a, b = data.split(ds, (0.5, 0.5), seed=3)
        assert a.counts == b.counts == {"BPSK": 25, "QPSK": 25}

    def test_disjoint_subset(self, ds):
        a, b = data.split(ds, (0.3, 0.7), seed=3)
        ids = [m["seed"] for m in a.metas] + [m["seed"] for m in b.metas]
        assert len(ids) == len(set(ids)) == len(ds)

    def test_deterministic(self, ds):
        a1, _ = data.split(ds, (0.5, 0.5), seed=8)
        a2, _ = data.split(ds, (0.5, 0.5), seed=8)
        a3, _ = data.split(ds, (0.5, 0.5), seed=9)
        assert np.array_equal(a1.iq, a2.iq)
        assert not np.array_equal(a1.iq, a3.iq)

    @settings(max_examples=30, deadline=None)
    @given(f=st.floats(0.05, 0.95), n=st.integers(4, 40))
    def test_proportions_within_one(self, f, n):
        assume(f * n >= 1 and (1 - f) * n >= 1)
        ds = data.Dataset(np.zeros((2 * n, 4)), np.repeat([0, 1], n), ["x", "y"], "test")
        a, b = data.split(ds, (f, 1 - f), seed=0)
        for c in ("x", "y"):
            assert abs(a.counts[c] - f * n) <= 1
            assert a.counts[c] + b.counts[c] == n

    def test_empty_part(self, ds):
        with pytest.raises(ValueError, match="empty"):
            data.split(ds, (1.0, 0.0))


class TestRadioML:
    def write(self, path, n, snr=None):
        rng = np.random.default_rng(0)
        y = np.zeros((n, 24), dtype=np.int64)
        labels = rng.integers(0, 24, n)
        y[np.arange(n), labels] = 1
        with h5py.File(path, "w") as fh:
            fh["X"] = rng.standard_normal((n, 1024, 2)).astype(np.float32)
            fh["Y"] = y
            fh["Z"] = (np.arange(n) * 2 - 10 if snr is None else snr).reshape(n, 1)
        return labels

    def test_ten_records(self, tmp_path):
        labels = self.write(tmp_path / "r.h5", 10)
        ds = data.import_radioml(tmp_path / "r.h5")
        assert len(ds) == 10 and ds.n_i == 1024 and len(ds.classes) == 24
        np.testing.assert_array_equal(ds.labels, labels)
        assert [m["snr_db"] for m in ds.metas] == [float(v) for v in np.arange(10) * 2 - 10]

    def test_limit(self, tmp_path):
        self.write(tmp_path / "r.h5", 10)
        assert len(data.import_radioml(tmp_path / "r.h5", limit=4)) == 4

    def test_empty_and_garbage(self, tmp_path):
        (tmp_path / "empty.h5").write_bytes(b"")
        with pytest.raises(SchemaError):
            data.import_radioml(tmp_path / "empty.h5")
        with h5py.File(tmp_path / "nox.h5", "w") as fh:
            fh["Y"] = np.zeros((1, 24))
        with pytest.raises(SchemaError, match="missing"):
            data.import_radioml(tmp_path / "nox.h5")
        with pytest.raises(FileNotFoundError):
            data.import_radioml(tmp_path / "absent.h5")


class TestContainer:
    def test_lossless_at_float32(self, tmp_path):
        ds = data.gen_modulation_dataset(slices_per_cell=3, n_i=64, seed=5)
        data.save_dataset(ds, tmp_path / "d")
        back = data.load_dataset(tmp_path / "d")
        f32 = ds.iq.real.astype(np.float32) + 1j * ds.iq.imag.astype(np.float32)
        assert np.array_equal(back.iq, f32)
        np.testing.assert_array_equal(back.labels, ds.labels)
        for i in range(len(ds)):
            np.testing.assert_array_equal(back.tx_bits(i), ds.tx_bits(i))
            assert back.scheme_of(i) == ds.scheme_of(i)

    def test_missing_and_corrupt(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_dataset(tmp_path / "nope")
        (tmp_path / "bad").mkdir()
        (tmp_path / "bad" / "manifest.json").write_text("{not json")
        with pytest.raises(SchemaError):
            data.load_dataset(tmp_path / "bad")
        (tmp_path / "bad" / "manifest.json").write_text('{"format_version": 7}')
        with pytest.raises(SchemaError, match="version"):
            data.load_dataset(tmp_path / "bad")


def test_derive_seed_stable():
    assert data.derive_seed(1, 2, 3) == data.derive_seed(1, 2, 3)
    assert data.derive_seed(1, 2, 3) != data.derive_seed(1, 2, 4)
    assert 0 <= data.derive_seed(5) < 2**32
