"""FIR generator layers, the feedback oracle, losses and blackbox training."""

import math

import numpy as np
import pytest

from waveform_adv import dsp, firnet as fn, nn, whitebox as wb
from waveform_adv.errors import SchemaError


class Stub:
    """Classifier double returning fixed probability rows."""

    def __init__(self, rows, n=16):
        self.rows = np.asarray(rows, dtype=float)
        self.classes = [f"c{i}" for i in range(self.rows.shape[1])]
        self.n_classes = len(self.classes)
        self.input_len = n

    def probabilities(self, z):
        return np.resize(self.rows, (len(z), self.n_classes))


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestForward:
    def test_fresh_net_is_identity(self, rng):
        net = fn.FirNetModel(["a", "b"], n_taps=12, epsilon=0.3, n_layers=3)
        z = cplx(rng, 5, 64)
        assert np.array_equal(fn.firnet_forward(net, z, "b"), z)
        assert np.array_equal(fn.firnet_forward(net, z[0], 0), z[0])

    def test_quarter_turn_matches_convolve(self, rng):
        net = fn.FirNetModel(["a"], n_taps=3)
        taps = np.array([0.5j, 0, 0])
        net.bank(0)[0].taps = taps
        z = cplx(rng, 50)
        np.testing.assert_allclose(fn.firnet_forward(net, z, 0), dsp.convolve_fir(z, taps), atol=1e-15)

    def test_two_layer_composition(self, rng):
        net = fn.FirNetModel(["a"], n_taps=4, n_layers=2)
        f, g = cplx(rng, 4), cplx(rng, 4)
        net.bank(0)[0].taps, net.bank(0)[1].taps = f, g
        z = cplx(rng, 40)
        expect = dsp.convolve_fir(dsp.convolve_fir(z, f), g)
        np.testing.assert_allclose(fn.firnet_forward(net, z, "a"), expect, atol=1e-12)

    def test_unknown_target(self, rng):
        net = fn.FirNetModel(["a", "b", "c"], targets=["b"])
        with pytest.raises(ValueError):
            fn.firnet_forward(net, cplx(rng, 8), "a")
        with pytest.raises(ValueError):
            fn.firnet_forward(net, cplx(rng, 8), "zzz")

    def test_projection_is_deviation_box(self):
        layer = fn.FirLayer(3, 0.1)
        layer.taps = np.array([0.5 + 0.3j, -1.0, 0.05j])
        layer.project()
        np.testing.assert_allclose(layer.taps, [0.9 + 0.1j, -0.1, 0.05j])
        assert layer.box_ok()


class TestLoss:
    def test_certain_target(self):
        orc = fn.FeedbackOracle(Stub([[0, 1, 0]]))
        assert fn.firnet_loss(orc, (np.zeros((4, 16)), [1, 1, 1, 1])) == 0.0

    def test_uniform_oracle(self):
        orc = fn.FeedbackOracle(Stub([[0.2] * 5]))
        assert math.isclose(fn.firnet_loss(orc, (np.zeros((3, 16)), [0, 2, 4])), math.log(5))

    def test_onebit_fraction(self):
        acks = np.zeros(100)
        acks[:73] = 1
        assert math.isclose(fn.onebit_loss(acks), 0.27)
        rows = np.tile([[0.1, 0.9]], (100, 1))
        rows[73:] = [0.9, 0.1]
        orc = fn.FeedbackOracle(Stub(rows), fn.ONEBIT)
        assert math.isclose(fn.firnet_loss(orc, (np.zeros((100, 16)), np.ones(100, int))), 0.27)

    def test_empty(self):
        with pytest.raises(ValueError):
            fn.firnet_loss(fn.FeedbackOracle(Stub([[1.0]])), (np.zeros((0, 16)), []))
        with pytest.raises(ValueError):
            fn.onebit_loss([])

    def test_oracle_counts_queries_and_hides_model(self):
        orc = fn.FeedbackOracle(Stub([[0.5, 0.5]]), fn.ONEBIT)
        out = orc.query(np.zeros((7, 16)), np.zeros(7, int), 0)
        assert set(out) <= {0.0, 1.0} and orc.queries == 7
        with pytest.raises(ValueError):
            fn.FeedbackOracle(Stub([[1.0]]), "logits")


class TestGraybox:
    @pytest.mark.parametrize("normalize", [False, True])
    def test_gradient_matches_finite_difference(self, fp_model, fp_data, rng, normalize):
        ds = fp_data[0]
        orc = fn.FeedbackOracle.simulated(fp_model, ds, seed=3, normalize=normalize)
        net = fn.FirNetModel(fp_model.classes, n_taps=5, epsilon=1.0, n_layers=2)
        net.set_params(net.get_params() + 0.1 * rng.standard_normal(net.get_params().size))
        x = fn.PayloadSource(ds.subset(np.arange(12))).payloads
        ys = np.arange(12) % 3
        targets = [0, 1, 2]

        def loss(theta):
            net.set_params(theta)
            per = orc.per_slice_loss(fn._forward_batch(net, x, ys), ys, 17)
            return sum(per[ys == t].mean() for t in targets)

        theta = net.get_params()
        grad = fn._graybox_grad(net, orc, x, ys, 17, targets, net.param_slices())
        for k in rng.choice(theta.size, 25, replace=False):
            e = np.zeros_like(theta)
            e[k] = 1e-5
            num = (loss(theta + e) - loss(theta - e)) / 2e-5
            assert abs(num - grad[k]) <= max(1e-5, 1e-4 * abs(num))
        net.set_params(theta)

    def test_graybox_needs_softmax(self, fp_model, fp_data):
        orc = fn.FeedbackOracle.simulated(fp_model, fp_data[0], fn.ONEBIT)
        net = fn.FirNetModel(fp_model.classes)
        with pytest.raises(ValueError, match="softmax"):
            fn.train_firnet(net, orc, fn.PayloadSource(fp_data[2]), hyper=fn.FirNetTrainConfig(estimator="graybox"))
        with pytest.raises(ValueError, match="estimator"):
            fn.train_firnet(net, orc, fn.PayloadSource(fp_data[2]), hyper=fn.FirNetTrainConfig(estimator="adam"))


class TestTraining:
    @pytest.fixture
    def setup(self, fp_model, fp_data):
        orc = fn.FeedbackOracle.simulated(fp_model, fp_data[0], seed=0)
        return orc, fn.PayloadSource(fp_data[2])

    def test_zero_budget_keeps_identity(self, setup):
        orc, src = setup
        net = fn.FirNetModel(orc.classes, 8, epsilon=0.0)
        res = fn.train_firnet(net, orc, src, hyper=fn.FirNetTrainConfig(epochs=2, steps_per_epoch=3, eval_slices=60))
        fresh = fn.FirNetModel(orc.classes, 8, epsilon=0.0)
        assert np.array_equal(net.get_params(), fresh.get_params())
        eval_payloads = src.sample(60, np.random.default_rng(fn.derive_seed(0, 1)))
        base = fn.fooling_rate(fresh, orc, eval_payloads, fresh.targets, fn.derive_seed(0, 2))[0]
        assert res.fooling_curve == [base] * 3 and res.final_fooling == base

    @pytest.mark.parametrize("estimator", ["spsa", "graybox"])
    def test_box_holds_and_rate_improves(self, setup, estimator):
        orc, src = setup
        net = fn.FirNetModel(orc.classes, 8, epsilon=0.05)
        hyper = fn.FirNetTrainConfig(batch=30, epochs=3, steps_per_epoch=8, lr=0.5, estimator=estimator, eval_slices=90)
        res = fn.train_firnet(net, orc, src, hyper=hyper)
        assert net.box_ok()
        dev = net.get_params() - fn.FirNetModel(orc.classes, 8, 0.05).get_params()
        assert np.isclose(np.max(np.abs(dev)), 0.05)
        assert res.final_fooling > res.fooling_curve[0]
        assert res.queries > 0

    def test_deterministic(self, setup):
        orc, src = setup
        runs = []
        for _ in range(2):
            net = fn.FirNetModel(orc.classes, 6, epsilon=0.5)
            fn.train_firnet(net, orc, src, hyper=fn.FirNetTrainConfig(batch=20, epochs=1, steps_per_epoch=4, eval_slices=30))
            runs.append(net.get_params())
        assert np.array_equal(*runs)

    def test_agrees_with_whitebox_synthesis(self, fp_model, fp_data):
        opt = fp_data[2]
        orc = fn.FeedbackOracle(fp_model)
        src = fn.PayloadSource(opt)
        rows = np.random.default_rng(0).integers(0, len(opt), 60)
        pay = src.payloads[rows]
        for t in range(3):
            net = fn.FirNetModel(fp_model.classes, 8, 0.5, targets=[t])
            hyper = fn.FirNetTrainConfig(epochs=5, steps_per_epoch=20, estimator="graybox")
            fn.train_firnet(net, orc, src, hyper=hyper)
            blackbox = fn.fooling_rate(net, orc, pay, [t], 5)[0]
            w = np.eye(3)[t]
            pb = wb.GwapProblem(wb.SYNTHESIS, w, pay, [opt.tx_bits(int(i)) for i in rows],
                                [opt.scheme_of(int(i)) for i in rows], 8, 0.5, channel_seeds=list(range(60)), ber_max=0.5)  # fmt: skip
            strat, _ = wb.solve_gwap(pb, fp_model)
            whitebox = np.mean(fp_model.predict(wb.adversary_waveform(strat, pay)) == t)
            assert abs(blackbox - whitebox) <= 0.10


class TestCollapse:
    def test_detector(self):
        classes = ["a", "b", "c"]
        assert fn.detect_collapse([1] * 95 + [0] * 5, classes)[:2] == (True, "b")
        flag, cls, hist = fn.detect_collapse([0, 1, 2, 1], classes)
        assert not flag and cls is None and hist == {"a": 1, "b": 2, "c": 1}

    def test_reported_by_training(self, fp_data):
        flat = nn.fingerprint_surrogate(fp_data[0].classes, 96, filters=4, dense=(8, 8), seed=0)
        for p in flat.param_list():
            p[...] = 0
        orc = fn.FeedbackOracle.simulated(flat, fp_data[0])
        net = fn.FirNetModel(flat.classes, 4, 0.1)
        res = fn.train_firnet(net, orc, fn.PayloadSource(fp_data[2]), hyper=fn.FirNetTrainConfig(epochs=1, steps_per_epoch=1, eval_slices=30))
        assert res.collapsed and res.collapse_class == "dev0"
        assert res.prediction_histogram["dev0"] == 30


class TestArtifact:
    def test_round_trip(self, tmp_path, rng):
        net = fn.FirNetModel(["x", "y", "z"], 6, 0.4, n_layers=2, targets=["z", "x"])
        net.set_params(net.get_params() + 0.01 * rng.standard_normal(net.get_params().size))
        back = fn.load_firnet(fn.save_firnet(net, tmp_path / "f.json"))
        assert back.targets == [0, 2]
        assert np.array_equal(back.get_params(), net.get_params())
        z = cplx(rng, 2, 32)
        assert np.array_equal(fn.firnet_forward(back, z, "z"), fn.firnet_forward(net, z, "z"))

    def test_bad_files(self, tmp_path):
        d = fn.FirNetModel(["x"]).to_dict()
        d["format_version"] = 2
        with pytest.raises(SchemaError, match="version"):
            fn.FirNetModel.from_dict(d)
        (tmp_path / "g.json").write_text("nope")
        with pytest.raises(SchemaError):
            fn.load_firnet(tmp_path / "g.json")


def test_replay_waveforms(fp_data):
    ds = fp_data[2]
    out = fn.replay_waveforms(ds, "dev1")
    assert np.array_equal(out, ds.iq[ds.labels == 1])
