"""
Measurement: clean and attacked accuracy, fooling matrices, constraint
audits, baselines (replay, single-step signed gradient) and reports.

Every figure is averaged over several channel seeds with its standard
error.  Reports serialize to JSON with sorted keys and no timestamps, so
the same inputs always give the same bytes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, kernels
from . import firnet as fn
from . import whitebox as wb
from .data import Dataset, derive_seed
from .errors import SchemaError

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
AUDIT_FIELDS = ["strategy", "seed", "slice", "ber", "ber_ok", "energy", "energy_ok"]


def mean_se(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _key(n, eps):
    return f"n={int(n)},eps={float(eps):g}"


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


def confusion_counts(labels, predictions, n_classes) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(labels), np.asarray(predictions)), 1)
    return m


def confusion_matrix(model, dataset: Dataset):
    """Row-normalized confusion matrix and support-weighted accuracy."""
    pred = model.predict(dataset.iq)
    counts = confusion_counts(dataset.labels, pred, len(dataset.classes))
    support = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, support, out=np.zeros(counts.shape), where=support > 0)
    acc = float(np.trace(counts) / max(counts.sum(), 1))
    return matrix, acc


@dataclass
class FoolingMatrix:
    """``cells[s][t]``: fraction of slices attacked from source s that land on class t."""

    classes: list
    cells: np.ndarray
    n_per_cell: np.ndarray

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "cells": np.round(self.cells, 12).tolist(),
            "n_per_cell": self.n_per_cell.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "FoolingMatrix":
        return cls(d["classes"], np.asarray(d["cells"], dtype=np.float64), np.asarray(d["n_per_cell"]))


@dataclass
class EvalReport:
    kind: str
    classes: list
    attack: str | None = None
    clean_accuracy: float | None = None
    clean_confusion: list | None = None
    clean_per_class: dict = field(default_factory=dict)
    attacked: dict = field(default_factory=dict)
    fooling: dict = field(default_factory=dict)
    audits: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    per_device: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    config_digest: str = ""
    seeds: list = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fooling"] = {k: (v.to_dict() if isinstance(v, FoolingMatrix) else v) for k, v in self.fooling.items()}
        return _clean_json(d)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise SchemaError(f"unsupported report schema {d.get('schema_version')}")
        d = dict(d)
        d["fooling"] = {k: FoolingMatrix.from_dict(v) for k, v in d.get("fooling", {}).items()}
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _clean_json(obj):
    if isinstance(obj, dict):
        return {str(k): _clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean_json(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# applying strategies to held-out slices
# ---------------------------------------------------------------------------


def apply_strategy(strategy: wb.AttackStrategy, slices, channel: dsp.ChannelModel, seed, rows):
    """Received waveforms and the waveform judged for BER, with a fresh channel per slice.

    Seeds depend on (seed, row) only, so strategies for different eps see
    identical channel draws and tiling offsets.
    """
    slices = np.atleast_2d(slices)
    b, n_i = slices.shape
    draws = [channel.draw(derive_seed(seed, 11, int(r)), n_i) for r in rows]
    taps = np.array([d[0] for d in draws])
    if strategy.kind == wb.JAMMING:
        offs = np.array([np.random.default_rng(derive_seed(seed, 12, int(r))).integers(0, strategy.n) for r in rows])
        xa = kernels.tile(strategy.values, offs, n_i)
        z = slices + kernels.fir_filter(xa, taps)
        return z, z, xa
    xa = kernels.fir_filter(slices, np.broadcast_to(strategy.values, (b, strategy.n)))
    noise = np.array([d[1] for d in draws])
    return kernels.fir_filter(xa, taps) + noise, xa, xa


def _check_artifact(model, artifact: wb.AttackArtifact):
    if list(artifact.classes) != list(model.classes) or artifact.n_i != model.input_len:
        raise SchemaError("attack artifact does not match the model (classes or input length)")


def run_attack_eval(model, artifact: wb.AttackArtifact, test: Dataset, regime: str | None = None,
                    seeds=DEFAULT_SEEDS, config_digest: str = "") -> EvalReport:  # fmt: skip
    """Apply every strategy to held-out slices of its source (or rogue) class."""
    _check_artifact(model, artifact)
    if list(test.classes) != list(model.classes):
        raise SchemaError("test set classes differ from the model's")
    regime = regime or artifact.fading
    channel = dsp.channel_regime(regime, noise_variance=artifact.noise_variance)
    classes = list(model.classes)
    nc = len(classes)
    matrix, clean_acc = confusion_matrix(model, test)
    clean_pred = model.predict(test.iq)
    per_class = {classes[c]: float(np.mean(clean_pred[test.labels == c] == c)) for c in range(nc) if np.any(test.labels == c)}

    targeted = artifact.attack != wb.AWJ_U
    e_max = (artifact.config or {}).get("e_max")
    groups: dict = {}
    records = []
    for si, strat in enumerate(artifact.strategies):
        src = strat.meta["source"]
        tgt = strat.meta.get("target")
        rows = np.flatnonzero(test.labels == src)
        if rows.size == 0:
            raise SchemaError(f"test set has no slices of class {classes[src]!r}")
        key = _key(strat.n, strat.epsilon)
        g = groups.setdefault(key, {"n": strat.n, "eps": strat.epsilon, "per_seed": {s: [] for s in seeds},
                                    "counts": np.zeros((nc, nc)), "support": np.zeros((nc, nc))})  # fmt: skip
        for seed in seeds:
            z, wber, xa = apply_strategy(strat, test.iq[rows], channel, seed, rows)
            pred = model.predict(z)
            hits = int(np.sum(pred == tgt)) if targeted else int(np.sum(pred == src))
            g["per_seed"][seed].append((hits, rows.size))
            if targeted:
                g["counts"][src, tgt] += np.sum(pred == tgt)
                g["support"][src, tgt] += rows.size
            else:
                g["counts"][src] += np.bincount(pred, minlength=nc)
                g["support"][src] += rows.size
            energy = dsp.energy(strat.values) if strat.kind == wb.JAMMING else None
            for j, r in enumerate(rows):
                ber = dsp.measure_ber(test.tx_bits(int(r)), wber[j], test.scheme_of(int(r)))
                en = energy if energy is not None else dsp.energy(xa[j])
                cap = _energy_cap(strat, e_max)
                records.append([si, seed, int(r), ber, ber <= artifact.ber_max, en, en <= cap * (1 + 1e-9) + 1e-12])
    attacked, fooling, sweep = {}, {}, {}
    for key, g in groups.items():
        seed_vals = []
        for seed in seeds:
            vals = g["per_seed"][seed]
            seed_vals.append(sum(v[0] for v in vals) / sum(v[1] for v in vals))
        mean, se = mean_se(seed_vals)
        attacked[key] = {
            "metric": "fooling" if targeted else "accuracy",
            "n": int(g["n"]),
            "eps": float(g["eps"]),
            "mean": mean,
            "se": se,
            "per_seed": seed_vals,
        }
        cells = np.divide(g["counts"], g["support"], out=np.zeros((nc, nc)), where=g["support"] > 0)
        fooling[key] = FoolingMatrix(classes, cells, g["support"])
        sweep.setdefault(str(int(g["n"])), []).append({"eps": float(g["eps"]), "mean": mean, "se": se})
    for curve in sweep.values():
        curve.sort(key=lambda p: p["eps"])
    ber_ok = np.array([r[4] for r in records], dtype=bool)
    en_ok = np.array([r[6] for r in records], dtype=bool)
    audits = {
        "fields": AUDIT_FIELDS,
        "records": records,
        "ber_max": artifact.ber_max,
        "ber_pass_fraction": float(ber_ok.mean()) if records else 1.0,
        "energy_pass_fraction": float(en_ok.mean()) if records else 1.0,
        "flagged": int(np.sum(~ber_ok)),
    }
    return EvalReport(
        "attack",
        classes,
        artifact.attack,
        clean_acc,
        matrix.tolist(),
        per_class,
        attacked,
        fooling,
        audits,
        sweep,
        extra={"regime": regime},
        config_digest=config_digest,
        seeds=list(seeds),
    )


def _energy_cap(strat, e_max):
    if e_max is not None:
        return e_max
    if strat.kind == wb.JAMMING and math.isfinite(strat.epsilon):
        return 2.0 * strat.epsilon**2 * strat.n
    return math.inf


def in_sample_eval(model, artifact: wb.AttackArtifact, opt: Dataset) -> dict:
    """Efficacy of each strategy on its own optimization slices and frozen channels."""
    _check_artifact(model, artifact)
    config = wb.AttackConfig.from_dict(artifact.config) if artifact.config else wb.AttackConfig()
    out = {}
    for strat in artifact.strategies:
        rows = np.asarray(strat.meta["opt_rows"])
        problem = wb.GwapProblem(
            strat.kind, np.zeros(model.n_classes), opt.iq[rows],
            [opt.tx_bits(int(r)) for r in rows], [opt.scheme_of(int(r)) for r in rows],
            strat.n, strat.epsilon, dsp.channel_regime(artifact.fading, noise_variance=artifact.noise_variance),
            strat.meta["channel_seeds"], np.asarray(strat.meta["offsets"]) if strat.kind == wb.JAMMING else None,
            config.ber_max, config.e_max,
        )  # fmt: skip
        pred = model.predict(problem.received(strat.values))
        tgt = strat.meta.get("target")
        hits = int(np.sum(pred == (tgt if tgt is not None else strat.meta["source"])))
        out.setdefault(_key(strat.n, strat.epsilon), []).append((hits, rows.size))
    return {k: sum(h for h, _ in v) / sum(n for _, n in v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def baseline_replay(model, dataset: Dataset, channel: dsp.ChannelModel | None = None,
                    impairment=None, seeds=DEFAULT_SEEDS, jitter_gain_db=0.0, jitter_phase=0.0,
                    config_digest: str = "") -> EvalReport:  # fmt: skip
    """Re-transmit recorded slices of each device through the adversary's radio and channel.

    Fooling for device d is the fraction of its replayed slices still classified as d.
    """
    oracle = fn.FeedbackOracle(
        model, fn.ONEBIT, channel or dsp.ChannelModel.transparent(), impairment, jitter_gain_db, jitter_phase
    )
    classes = list(model.classes)
    per_device = {}
    seed_means = []
    for seed in seeds:
        hits, total = 0.0, 0
        for d in range(len(classes)):
            z = dataset.iq[dataset.labels == d]
            if len(z) == 0:
                continue
            acks = oracle.acks(z, d, derive_seed(seed, 21, d))
            per_device.setdefault(classes[d], []).append(float(acks.mean()))
            hits += acks.sum()
            total += acks.size
        seed_means.append(hits / total)
    mean, se = mean_se(seed_means)
    return EvalReport(
        "replay",
        classes,
        attacked={"replay": {"metric": "fooling", "mean": mean, "se": se, "per_seed": seed_means}},
        per_device={k: {"mean": mean_se(v)[0], "se": mean_se(v)[1], "per_seed": v} for k, v in per_device.items()},
        extra={"channel": oracle.channel.to_dict(), "reimpaired": impairment is not None},
        config_digest=config_digest,
        seeds=list(seeds),
    )


def fgsm_perturbations(model, problem: wb.GwapProblem) -> np.ndarray:
    """One signed-gradient jammer per optimization slice, through that slice's frozen channel."""
    if problem.kind != wb.JAMMING:
        raise ValueError("the single-step baseline perturbs jamming waveforms")
    zero = np.zeros(problem.n_params, dtype=np.complex128)
    z = problem.received(zero)
    _, gz = model.weighted_input_gradient(z, problem.class_weights)
    g = problem.pullback_received(gz)
    eps = problem.box_epsilon
    return eps * (np.sign(g.real) + 1j * np.sign(g.imag))


def baseline_fgsm(model, opt: Dataset, eps: float, test: Dataset | None = None, n_j: int = 64,
                  config: wb.AttackConfig | None = None, seeds=DEFAULT_SEEDS, config_digest: str = "") -> EvalReport:  # fmt: skip
    """Single-step per-slice jamming baseline for the untargeted attack.

    In-sample: slice s gets its own perturbation and the channel it was
    computed for.  Held-out: test slice i gets perturbation ``i mod S`` of
    its class with fresh channel draws.
    """
    config = config or wb.AttackConfig(epsilons=(eps,), n_params=(n_j,))
    classes = list(model.classes)
    channel = dsp.channel_regime(config.fading, noise_variance=config.noise_variance)
    in_hits, in_total = 0, 0
    held = {s: [0, 0] for s in seeds}
    per_class = {}
    for c in range(len(classes)):
        if not np.any(opt.labels == c):
            continue
        rows = wb._opt_indices(opt, c, config.slices_per_class, config.seed)
        key = (wb._ATTACK_CODES[wb.AWJ_U], c, 0)
        problem = wb.build_problem(wb.JAMMING, model, opt, rows, wb._weights(model, None, (c,)), n_j, eps, config, key)
        deltas = fgsm_perturbations(model, problem) if eps > 0 else np.zeros((rows.size, n_j), dtype=complex)
        z_in = np.concatenate([problem.received(deltas[i], [i]) for i in range(rows.size)])
        pred = model.predict(z_in)
        in_hits += int(np.sum(pred == c))
        in_total += rows.size
        per_class[classes[c]] = {"in_sample": float(np.mean(pred == c))}
        if test is None:
            continue
        trows = np.flatnonzero(test.labels == c)
        for seed in seeds:
            accs = 0
            for j, r in enumerate(trows):
                strat = wb.AttackStrategy(wb.JAMMING, deltas[j % rows.size], eps)
                z, _, _ = apply_strategy(strat, test.iq[r : r + 1], channel, seed, [r])
                accs += int(model.predict(z)[0] == c)
            held[seed][0] += accs
            held[seed][1] += trows.size
    in_acc = in_hits / max(in_total, 1)
    attacked = {"in_sample": {"metric": "accuracy", "mean": in_acc, "se": 0.0, "per_seed": [in_acc]}}
    if test is not None:
        vals = [held[s][0] / max(held[s][1], 1) for s in seeds]
        m, se = mean_se(vals)
        attacked["held_out"] = {"metric": "accuracy", "mean": m, "se": se, "per_seed": vals}
    return EvalReport(
        "fgsm",
        classes,
        attack=wb.AWJ_U,
        attacked=attacked,
        extra={"eps": eps, "n": n_j, "per_class": per_class, "fading": config.fading},
        config_digest=config_digest,
        seeds=list(seeds),
    )


def run_firnet_eval(net: fn.FirNetModel, oracle: fn.FeedbackOracle, payloads: fn.PayloadSource,
                    seeds=DEFAULT_SEEDS, count: int = 200, config_digest: str = "") -> EvalReport:  # fmt: skip
    """Fooling rate of a trained FIRNet on fresh payloads and fresh air-interface draws."""
    targets = net.targets
    vals, per = [], {}
    preds = []
    for seed in seeds:
        rng = np.random.default_rng(derive_seed(seed, 31))
        x = payloads.sample(count, rng)
        rate, per_t, pred = fn.fooling_rate(net, oracle, x, targets, derive_seed(seed, 32))
        vals.append(rate)
        preds.append(pred)
        for k, v in per_t.items():
            per.setdefault(k, []).append(v)
    mean, se = mean_se(vals)
    collapsed, cls, hist = fn.detect_collapse(np.concatenate(preds), oracle.classes)
    return EvalReport(
        "firnet",
        list(oracle.classes),
        attack="firnet",
        attacked={_key(net.n_taps, net.epsilon): {"metric": "fooling", "n": net.n_taps, "eps": net.epsilon,
                                                   "mean": mean, "se": se, "per_seed": vals}},  # fmt: skip
        per_device={k: {"mean": mean_se(v)[0], "se": mean_se(v)[1], "per_seed": v} for k, v in per.items()},
        extra={"collapsed": collapsed, "collapse_class": cls, "prediction_histogram": hist},
        config_digest=config_digest,
        seeds=list(seeds),
    )


def merge_sweep(reports) -> dict:
    """Combine ``attacked`` entries of several reports into eps curves keyed by n."""
    sweep = {}
    for r in reports:
        for v in r.attacked.values():
            if "n" in v and "eps" in v:
                sweep.setdefault(str(v["n"]), []).append({"eps": v["eps"], "mean": v["mean"], "se": v["se"]})
    for curve in sweep.values():
        curve.sort(key=lambda p: p["eps"])
    return sweep


def sweep(model, opt: Dataset, test: Dataset, attack: str, config: wb.AttackConfig,
          seeds=DEFAULT_SEEDS, config_digest: str = "") -> EvalReport:  # fmt: skip
    """Solve and evaluate an attack over the eps x n grid of ``config``."""
    artifact = wb.ATTACKS[attack](model, opt, config)
    report = run_attack_eval(model, artifact, test, None, seeds, config_digest)
    report.extra["in_sample"] = in_sample_eval(model, artifact, opt)
    return report


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(report: EvalReport, out_dir, formats=("json", "csv", "plots"), stem: str | None = None) -> list:
    """Write the report; filenames derive from the config digest.  Returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"report-{report.config_digest or 'nodigest'}"
    written = []
    if "json" in formats:
        p = out_dir / f"{stem}.json"
        p.write_text(report.to_json())
        written.append(p)
    matrices = {}
    if report.clean_confusion is not None:
        matrices["confusion"] = np.asarray(report.clean_confusion)
    for key, fm in report.fooling.items():
        matrices[f"fooling_{key.replace(',', '_').replace('=', '')}"] = fm.cells
    if "csv" in formats:
        for name, mat in matrices.items():
            p = out_dir / f"{stem}_{name}.csv"
            _write_csv(p, ["source"] + list(report.classes),
                       [[report.classes[i]] + [f"{v:.6f}" for v in row] for i, row in enumerate(mat)])  # fmt: skip
            written.append(p)
        if report.sweep:
            p = out_dir / f"{stem}_sweep.csv"
            rows = [[n, f"{pt['eps']:g}", f"{pt['mean']:.6f}", f"{pt['se']:.6f}"]
                    for n, curve in sorted(report.sweep.items()) for pt in curve]  # fmt: skip
            _write_csv(p, ["n", "eps", "mean", "se"], rows)
            written.append(p)
    if "plots" in formats:
        written += _plots(report, matrices, out_dir, stem)
    return written


def _plots(report, matrices, out_dir, stem):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for name, mat in matrices.items():
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(mat, vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(len(report.classes)), report.classes, rotation=90, fontsize=6)
        ax.set_yticks(range(len(report.classes)), report.classes, fontsize=6)
        ax.set_title(name, fontsize=8)
        fig.tight_layout()
        p = out_dir / f"{stem}_{name}.png"
        fig.savefig(p, dpi=80, metadata={"Software": None})
        plt.close(fig)
        written.append(p)
    if report.sweep:
        fig, ax = plt.subplots(figsize=(4, 3))
        for n, curve in sorted(report.sweep.items()):
            ax.errorbar([c["eps"] for c in curve], [c["mean"] for c in curve], yerr=[c["se"] for c in curve],
                        marker="o", label=f"n={n}")  # fmt: skip
        ax.set_xlabel("eps")
        ax.set_ylabel("attacked metric")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = out_dir / f"{stem}_sweep.png"
        fig.savefig(p, dpi=80, metadata={"Software": None})
        plt.close(fig)
        written.append(p)
    return written


def load_report(path) -> EvalReport:
    try:
        return EvalReport.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
