"""Whitebox attack: strategies, problem gradients, constraints, the AL/NCG solver and drivers."""

import math

import numpy as np
import pytest

from waveform_adv import dsp, whitebox as wb
from waveform_adv.errors import SchemaError

REGIMES = ("none", "high")


def cplx(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def problem_for(kind, model, ds, regime, n, eps=0.3, rows=(0, 1, 2), weights=None, **cfg):
    config = wb.AttackConfig(fading=regime, **cfg)
    rows = np.asarray(rows)
    w = np.zeros(model.n_classes) if weights is None else weights
    return wb.build_problem(kind, model, ds, rows, w, n, eps, config, (1, 2, 3))


def perturbed(problem, rng, scale=0.1):
    st = wb.initial_strategy(problem, seed=1)
    st.values = st.values + scale * cplx(rng, problem.n_params)
    return st


def fd_component(problem, model, st, c, s, k, h=1e-4):
    n = problem.n_params

    def f(x):
        v = st.values.copy()
        if k < n:
            v[k] += x
        else:
            v[k - n] += 1j * x
        return model.probabilities(problem.received(v, slice(s, s + 1)))[0, c]

    return (f(h) - f(-h)) / (2 * h)


class TestStrategy:
    def test_dict_round_trip(self, rng):
        st = wb.AttackStrategy(wb.JAMMING, cplx(rng, 8), meta={"a": 1})
        back = wb.AttackStrategy.from_dict(st.to_dict())
        assert back.epsilon == math.inf
        np.testing.assert_array_equal(back.values, st.values)
        assert back.meta == {"a": 1}

    def test_box_violation(self):
        st = wb.AttackStrategy(wb.SYNTHESIS, [1.2 + 0.1j, 0.05j], epsilon=0.1)
        assert math.isclose(st.box_violation(), 0.1)
        assert wb.AttackStrategy.identity(4, 0.1).box_violation() == -0.1

    def test_bad_values(self):
        with pytest.raises(ValueError):
            wb.AttackStrategy("other", [0j])
        with pytest.raises(ValueError):
            wb.AttackStrategy(wb.JAMMING, [0j], epsilon=-1)


class TestAdversaryWaveform:
    def test_identity_fir_keeps_payload(self, rng):
        x = cplx(rng, 40)
        assert np.array_equal(wb.adversary_waveform(wb.AttackStrategy.identity(5), x), x)

    def test_zero_jammer_leaves_reception(self, mod_model, mod_data):
        pb = problem_for(wb.JAMMING, mod_model, mod_data[2], "high", 16)
        zero = wb.AttackStrategy.zero(16)
        assert np.all(wb.adversary_waveform(zero) == 0)
        assert np.array_equal(pb.received(zero.values), pb.slices)

    def test_quarter_turn_halves(self, rng):
        x = cplx(rng, 30)
        st = wb.AttackStrategy(wb.SYNTHESIS, [0.5 * np.exp(1j * np.pi / 2), 0, 0])
        np.testing.assert_allclose(wb.adversary_waveform(st, x), 0.5j * x, atol=1e-15)

    def test_payload_rules(self):
        with pytest.raises(ValueError):
            wb.adversary_waveform(wb.AttackStrategy.zero(4), np.ones(8))
        with pytest.raises(ValueError):
            wb.adversary_waveform(wb.AttackStrategy.identity(4))


class TestStrategyGradient:
    @pytest.mark.parametrize("regime", REGIMES)
    def test_jamming_finite_difference(self, rng, mod_model, mod_data, regime):
        pb = problem_for(wb.JAMMING, mod_model, mod_data[2], regime, 32)
        st = perturbed(pb, rng)
        self.check(pb, mod_model, st, rng)

    @pytest.mark.parametrize("regime", REGIMES)
    def test_synthesis_finite_difference(self, rng, fp_model, fp_data, regime):
        pb = problem_for(wb.SYNTHESIS, fp_model, fp_data[2], regime, 8)
        st = perturbed(pb, rng)
        self.check(pb, fp_model, st, rng)

    def check(self, pb, model, st, rng, probes=50):
        for _ in range(probes):
            c = int(rng.integers(model.n_classes))
            s = int(rng.integers(pb.n_slices))
            k = int(rng.integers(2 * pb.n_params))
            g = wb.strategy_gradient(pb, model, st, c, s)
            fd = fd_component(pb, model, st, c, s, k)
            assert abs(fd - g[k]) <= max(1e-4, 1e-3 * abs(fd)), (c, s, k, fd, g[k])

    def test_delta_payload_reads_input_gradient(self, fp_model, fp_data):
        ds = fp_data[2]
        m = 8
        delta = np.zeros((1, ds.n_i), dtype=complex)
        delta[0, 0] = 1
        pb = wb.GwapProblem(
            wb.SYNTHESIS, np.zeros(3), delta, [ds.tx_bits(0)], [ds.scheme_of(0)], m, 1.0,
            channel_seeds=[0], rho_rogue=1,
        )  # fmt: skip
        phi = np.linspace(0.5, 1.5, m) + 0.2j
        st = wb.AttackStrategy(wb.SYNTHESIS, phi)
        z = np.zeros(ds.n_i, dtype=complex)
        z[:m] = phi
        for c in range(3):
            gz = fp_model.weighted_input_gradient(z[None], np.eye(3)[c])[1][0]
            g = wb.strategy_gradient(pb, fp_model, st, c, 0)
            np.testing.assert_allclose(g, np.concatenate([gz.real[:m], gz.imag[:m]]), atol=1e-12)

    def test_zero_weight_model(self, mod_model, mod_data, rng):
        flat = mod_model.copy()
        for p in flat.param_list():
            p[...] = 0
        pb = problem_for(wb.JAMMING, flat, mod_data[2], "none", 16)
        g = wb.strategy_gradient(pb, flat, perturbed(pb, rng), 1, 0)
        assert np.all(g == 0)

    def test_needs_frozen_channel(self, mod_model, mod_data):
        pb = problem_for(wb.JAMMING, mod_model, mod_data[2], "none", 16)
        pb.channel_seeds = None
        pb._realization = None
        with pytest.raises(ValueError, match="channel"):
            wb.strategy_gradient(pb, mod_model, wb.AttackStrategy.zero(16), 0, 0)


class TestConstraints:
    @pytest.fixture
    def pb(self, mod_model, mod_data):
        return problem_for(wb.JAMMING, mod_model, mod_data[2], "none", 16, eps=0.5)

    def test_zero_jammer_ber_term(self, pb):
        g = wb.evaluate_constraints(pb, wb.AttackStrategy.zero(16, 0.5), 1)
        clean = dsp.measure_ber(pb.tx_bits[1], pb.slices[1], pb.schemes[1])
        assert g[0] == clean - pb.ber_max
        assert g[0] <= 0

    def test_energy_boundary(self, pb, rng):
        phi = cplx(rng, 16)
        phi *= math.sqrt(pb.e_max / dsp.energy(phi))
        g = wb.evaluate_constraints(pb, wb.AttackStrategy(wb.JAMMING, phi, 0.5), 0)
        assert abs(g[1]) < 1e-12

    def test_energy_naive_oracle(self, pb, rng):
        phi = 0.3 * cplx(rng, 16)
        naive = 0.0
        for v in phi:
            naive += v.real**2 + v.imag**2
        g = wb.evaluate_constraints(pb, wb.AttackStrategy(wb.JAMMING, phi, 0.5), 0)
        assert math.isclose(g[1], naive - pb.e_max, rel_tol=1e-12)
        assert g.size == 2 + 32
        np.testing.assert_allclose(g[2:18], np.abs(phi.real) - 0.5)

    def test_missing_bits(self, pb):
        pb.tx_bits[0] = None
        with pytest.raises(SchemaError):
            wb.evaluate_constraints(pb, wb.AttackStrategy.zero(16), 0)

    def test_default_energy_budget(self, pb):
        assert pb.e_max == 2 * 0.5**2 * 16


class TestSolver:
    a = np.array([2.0, 1.0, -0.5])
    b = np.ones(3)
    c = 1.0

    def evaluate(self, x, need_grad):
        f = -np.sum((x - self.a) ** 2)
        g = np.array([self.b @ x - self.c])
        return f, -2 * (x - self.a), g, (lambda w: w[0] * self.b)

    def test_kkt_point(self):
        mu = 2 * (self.b @ self.a - self.c) / (self.b @ self.b)
        x_star = self.a - mu * self.b / 2
        opts = wb.SolverOptions(max_outer=40, max_ncg=200, rho_pen=100, gamma0=100, tol=1e-12, feas_tol=1e-8)
        inf = np.full(3, np.inf)
        st = wb.augmented_lagrangian(self.evaluate, np.zeros(3), -inf, inf, 1, opts)
        assert np.max(np.abs(st.x - x_star)) < 1e-4
        assert abs(st.lam[0] - mu) < 1e-3
        assert min(st.trace.lambda_min) >= 0

    def test_ncg_never_decreases(self, rng):
        a = rng.standard_normal(6)

        def fun(x):
            return -np.sum((x - a) ** 4), -4 * (x - a) ** 3

        x0 = np.zeros(6)
        for it in range(1, 6):
            _, val, _, _ = wb.ncg_maximize(fun, x0, -np.ones(6), np.ones(6), it, wb.SolverOptions())
            assert val >= fun(x0)[0]
            x1, _, _, _ = wb.ncg_maximize(fun, x0, -np.ones(6), np.ones(6), it, wb.SolverOptions())
            assert np.all(np.abs(x1) <= 1)

    def test_divergence_raises(self):
        def fun(x):
            return np.nan, np.zeros_like(x)

        with pytest.raises(wb.SolverDivergence):
            wb.ncg_maximize(fun, np.zeros(2), -np.ones(2), np.ones(2), 3, wb.SolverOptions())

    def test_zero_budget_is_clean(self, mod_model, mod_data):
        ds = mod_data[2]
        rows = np.arange(0, len(ds), 7)
        pb = problem_for(wb.JAMMING, mod_model, ds, "high", 32, eps=0.0, rows=rows, weights=np.array([-1.0, 0, 0, 0]))
        st, state = wb.solve_gwap(pb, mod_model)
        assert np.all(st.values == 0)
        assert state.trace.objective == []
        np.testing.assert_array_equal(mod_model.predict(pb.received(st.values)), mod_model.predict(ds.iq[rows]))

    def test_smoke_trace_and_box(self, mod_model, mod_data):
        cfg = wb.AttackConfig(epsilons=(0.2,), n_params=(32,), slices_per_class=8, sources=("QPSK",), seed=0)
        art = wb.attack_awj_untargeted(mod_model, mod_data[2], cfg)
        (st,) = art.strategies
        obj = st.meta["trace"]["objective"]
        assert len(obj) == cfg.solver.max_outer
        assert np.min(np.diff(obj)) >= -1e-6
        assert min(st.meta["trace"]["lambda_min"]) >= 0
        assert st.box_violation() <= 0
        assert dsp.energy(st.values) <= 2 * 0.2**2 * 32 * (1 + 1e-9)


class TestDrivers:
    def test_untargeted_weights_and_meta(self, mod_model, mod_data):
        cfg = wb.AttackConfig(epsilons=(0.0, 0.1), n_params=(16,), slices_per_class=4, sources=("BPSK",))
        art = wb.attack_awj_untargeted(mod_model, mod_data[2], cfg)
        assert [s.epsilon for s in art.strategies] == [0.0, 0.1]
        meta = art.strategies[1].meta
        assert meta["source"] == 0 and meta["target"] is None and meta["n"] == 16
        assert len(meta["opt_rows"]) == len(meta["channel_seeds"]) == len(meta["offsets"]) == 4

    def test_weight_vectors(self, mod_model):
        assert wb._weights(mod_model, None, (1,), 2).tolist() == [0, -1, -1, 0]
        assert wb._weights(mod_model, 3, (1,)).tolist() == [0, -1, 0, 1]
        with pytest.raises(ValueError):
            wb.GwapProblem(wb.JAMMING, [0.5, 0, 0, 0], np.zeros((1, 8)), [np.zeros(16)], [dsp.get_scheme("QPSK", 1)], 4, 0.1)

    def test_same_source_and_target(self, mod_model, mod_data):
        cfg = wb.AttackConfig(sources=("QPSK",), targets=("QPSK",))
        with pytest.raises(ValueError, match="target"):
            wb.attack_awj_targeted(mod_model, mod_data[2], cfg)

    def test_aws_identity_without_steps_is_baseline(self, fp_model, fp_data):
        opt = fp_data[2]
        solver = wb.SolverOptions(max_outer=2, max_ncg=0)
        cfg = wb.AttackConfig(epsilons=(0.5,), n_params=(8,), slices_per_class=20, sources=("dev0",), targets=("dev1",), solver=solver)
        (st,) = wb.attack_aws(fp_model, opt, cfg).strategies
        np.testing.assert_array_equal(st.values, wb.default_center(wb.SYNTHESIS, 8))
        rows = np.array(st.meta["opt_rows"])
        pb = problem_for(wb.SYNTHESIS, fp_model, opt, "none", 8, 0.5, rows)
        attacked = np.mean(fp_model.predict(pb.received(st.values)) == 1)
        baseline = np.mean(fp_model.predict(opt.iq[rows]) == 1)
        assert attacked == baseline

    @pytest.mark.xfail(strict=False, reason="ablation gap does not reproduce on these surrogates; see decisions ledger")
    def test_naive_targeting_ablation(self, mod_model, mod_data):
        _, _, opt, test = mod_data
        rates = {}
        for naive in (False, True):
            cfg = wb.AttackConfig(epsilons=(0.2,), n_params=(32,), slices_per_class=16, naive=naive, seed=0)
            out = []
            for st in wb.attack_awj_targeted(mod_model, opt, cfg).strategies:
                src, tgt = st.meta["source"], st.meta["target"]
                rows = np.flatnonzero(test.labels == src)[:60]
                pb = wb.build_problem(wb.JAMMING, mod_model, test, rows, np.zeros(4), 32, 0.2, cfg, (9, src, tgt + 1))
                out.append(np.mean(mod_model.predict(pb.received(st.values)) == tgt))
            rates[naive] = np.array(out)
        assert np.mean(rates[True] < rates[False]) >= 0.6


class TestArtifact:
    @pytest.fixture
    def art(self, fp_model, fp_data):
        cfg = wb.AttackConfig(epsilons=(0.5,), n_params=(4,), slices_per_class=4, sources=("dev2",), targets=("dev0",),
                              solver=wb.SolverOptions(max_outer=1, max_ncg=2))  # fmt: skip
        return wb.attack_aws(fp_model, fp_data[2], cfg)

    def test_round_trip(self, art, tmp_path):
        back = wb.AttackArtifact.load(art.save(tmp_path / "a.json"))
        assert back.to_dict() == art.to_dict()
        assert wb.AttackConfig.from_dict(back.config).to_dict() == wb.AttackConfig.from_dict(art.config).to_dict()

    def test_version_mismatch(self, art):
        d = art.to_dict()
        d["format_version"] = 99
        with pytest.raises(SchemaError, match="version"):
            wb.AttackArtifact.from_dict(d)
        d = art.to_dict()
        del d["strategies"]
        with pytest.raises(SchemaError):
            wb.AttackArtifact.from_dict(d)

    def test_garbage_file(self, tmp_path):
        (tmp_path / "x.json").write_text("{{")
        with pytest.raises(SchemaError):
            wb.AttackArtifact.load(tmp_path / "x.json")

    def test_config_round_trip(self):
        cfg = wb.AttackConfig(epsilons=(0.1, 0.3), sources=("a",), solver=wb.SolverOptions(max_outer=3))
        assert wb.AttackConfig.from_dict(cfg.to_dict()) == cfg
