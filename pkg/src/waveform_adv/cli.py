"""
``waveform-adv`` command line.

Verbs: gen-mod, gen-fp, import-radioml, train, attack {awj-u,awj-t,aws},
firnet {train,apply}, eval, sweep, report.

Every option can also come from a YAML file given with ``--config``.  Keys
are option names with underscores; a top-level key applies to every verb,
a key under a section named after the verb (``attack:``, ``firnet-train:``,
...) applies to that verb only, and command-line flags win over both.

Each run is registered as ``$WAVEFORM_ADV_OUT/runs/<digest>.json`` holding
the resolved parameters.  The digest hashes those parameters and the
contents of every input file but not output locations, and
``waveform-adv replay <digest>`` re-executes the run.

Exit codes: 0 ok, 2 usage, 3 io, 4 schema, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data, dsp, nn
from . import evaluation as ev
from . import firnet as fn
from . import whitebox as wb
from .errors import NumericalError, SchemaError

log = logging.getLogger("waveform_adv")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SCHEMA, EXIT_NUMERICAL = 0, 2, 3, 4, 5
OUT_ENV = "WAVEFORM_ADV_OUT"
RUN_FORMAT_VERSION = 1

# per-verb defaults; None means "not given" and stays out of the library call
DEFAULTS = {
    "gen-mod": dict(schemes=["BPSK", "QPSK", "PSK8", "QAM16"], snr=[20.0], slices=100, n_i=1024, sps=8,
                    pulse="rect", seed=0, output=None),  # fmt: skip
    "gen-fp": dict(devices=5, slices=500, n_i=288, scheme="QPSK", snr=20.0, seed=0, output=None),
    "import-radioml": dict(input=None, limit=None, output=None),
    "train": dict(dataset=None, arch=None, train_frac=0.8, epochs=10, lr=1e-4, batch=64, l2=1e-4,
                  filters=None, depth=None, seed=0, output=None),  # fmt: skip
    "attack": dict(model=None, dataset=None, eps=[0.05, 0.1, 0.2], n=[64], fading="none", noise_var=0.01,
                   ber_max=1e-2, e_max=None, slices_per_class=32, sources=None, targets=None,
                   adversary_class=None, naive=False, max_outer=8, max_ncg=10, seed=0, output=None),  # fmt: skip
    "firnet-train": dict(model=None, dataset=None, taps=10, eps=1.0, layers=1, mode="softmax", estimator="spsa",
                         epochs=10, steps=20, batch=100, lr=0.02, targets=None, transparent=False, seed=0,
                         output=None),  # fmt: skip
    "firnet-apply": dict(firnet=None, dataset=None, target=None, count=100, seed=0, output=None),
    "eval": dict(model=None, dataset=None, attack=None, firnet=None, regime=None, seeds=[0, 1, 2, 3, 4],
                 baseline=None, format=["json", "csv", "plots"], output=None),  # fmt: skip
    "sweep": dict(model=None, dataset=None, kind="awj-u", eps=[0.05, 0.1, 0.2], n=[64], fading="none",
                  noise_var=0.01, ber_max=1e-2, slices_per_class=32, max_outer=8, max_ncg=10,
                  seeds=[0, 1, 2, 3, 4], seed=0, format=["json", "csv", "plots"], output=None),  # fmt: skip
    "report": dict(input=None, format=["csv", "plots"], output=None),
}
INPUT_KEYS = {"dataset", "model", "attack", "firnet", "input"}
OUTPUT_KEYS = {"output"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _floats(s):
    return [float(v) for v in str(s).split(",") if v != ""]


def _ints(s):
    return [int(v) for v in str(s).split(",") if v != ""]


def _strs(s):
    return [v.strip() for v in str(s).split(",") if v.strip()]


def _add(p, name, type_=str, help_=None, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, type=type_, default=None, help=help_, **kw)


def _common(p):
    p.add_argument("--config", default=None, help="YAML file with option values")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="waveform-adv", description="Adversarial waveform attacks on RF classifiers")
    top.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV} or ./waveform-adv-out)")
    top.add_argument("--workers", type=int, default=1, help="worker count (runs are deterministic for any value)")
    top.add_argument("-v", "--verbose", action="count", default=0)
    sub = top.add_subparsers(dest="verb", metavar="VERB")

    p = sub.add_parser("gen-mod", help="generate a synthetic modulation dataset")
    _common(p)
    _add(p, "schemes", _strs, "comma-separated scheme names")
    _add(p, "snr", _floats, "comma-separated SNR grid in dB")
    _add(p, "slices", int, "slices per (scheme, SNR) cell")
    _add(p, "n_i", int, "samples per slice")
    _add(p, "sps", int, "samples per symbol")
    _add(p, "pulse", str, "rect or rrc")
    _add(p, "seed", int)
    _add(p, "output", str, "dataset directory")

    p = sub.add_parser("gen-fp", help="generate a synthetic device-fingerprint dataset")
    _common(p)
    _add(p, "devices", int)
    _add(p, "slices", int, "slices per device")
    _add(p, "n_i", int)
    _add(p, "scheme", str)
    _add(p, "snr", float)
    _add(p, "seed", int)
    _add(p, "output", str)

    p = sub.add_parser("import-radioml", help="convert a RadioML HDF5 file into a dataset directory")
    _common(p)
    _add(p, "input", str, "HDF5 file")
    _add(p, "limit", int)
    _add(p, "output", str)

    p = sub.add_parser("train", help="train the surrogate classifier")
    _common(p)
    _add(p, "dataset", str)
    _add(p, "arch", str, "modulation or fingerprint (default from dataset kind)")
    _add(p, "train_frac", float)
    _add(p, "epochs", int)
    _add(p, "lr", float)
    _add(p, "batch", int)
    _add(p, "l2", float)
    _add(p, "filters", int)
    _add(p, "depth", int, "conv blocks for the modulation arch (default: deepest of 3 that fits)")
    _add(p, "seed", int)
    _add(p, "output", str, "model file")

    p = sub.add_parser("attack", help="solve a whitebox attack")
    p.add_argument("kind", choices=[wb.AWJ_U, wb.AWJ_T, wb.AWS])
    _common(p)
    _add(p, "model", str)
    _add(p, "dataset", str)
    _add(p, "eps", _floats, "comma-separated box radii")
    _add(p, "n", _ints, "comma-separated jammer lengths / FIR tap counts")
    p.add_argument("--taps", dest="n", type=_ints, default=None, help="alias of --n")
    _add(p, "fading", str, "none, high or low")
    _add(p, "noise_var", float)
    _add(p, "ber_max", float)
    _add(p, "e_max", float)
    _add(p, "slices_per_class", int)
    _add(p, "sources", _strs)
    _add(p, "targets", _strs)
    _add(p, "adversary_class", str)
    p.add_argument("--naive", dest="naive", action="store_const", const=True, default=None)
    _add(p, "max_outer", int)
    _add(p, "max_ncg", int)
    _add(p, "seed", int)
    _add(p, "output", str, "strategy artifact (JSON)")

    p = sub.add_parser("firnet", help="blackbox FIR network")
    fsub = p.add_subparsers(dest="action", metavar="ACTION")
    q = fsub.add_parser("train", help="train a FIRNet against a simulated oracle")
    _common(q)
    _add(q, "model", str, "classifier behind the oracle")
    _add(q, "dataset", str)
    _add(q, "taps", int)
    _add(q, "eps", float)
    _add(q, "layers", int)
    _add(q, "mode", str, "softmax or onebit")
    _add(q, "estimator", str, "spsa or graybox")
    _add(q, "epochs", int)
    _add(q, "steps", int)
    _add(q, "batch", int)
    _add(q, "lr", float)
    _add(q, "targets", _strs)
    q.add_argument("--transparent", dest="transparent", action="store_const", const=True, default=None)
    _add(q, "seed", int)
    _add(q, "output", str)
    q = fsub.add_parser("apply", help="synthesize waveforms with a trained FIRNet")
    _common(q)
    _add(q, "firnet", str)
    _add(q, "dataset", str, "payload source")
    _add(q, "target", str)
    _add(q, "count", int)
    _add(q, "seed", int)
    _add(q, "output", str, "dataset directory")

    p = sub.add_parser("eval", help="evaluate a model, attack artifact or FIRNet")
    _common(p)
    _add(p, "model", str)
    _add(p, "dataset", str)
    _add(p, "attack", str, "strategy artifact")
    _add(p, "firnet", str, "FIRNet artifact")
    _add(p, "baseline", str, "replay or replay-rayleigh")
    _add(p, "regime", str)
    _add(p, "seeds", _ints)
    _add(p, "format", _strs, "json,csv,plots")
    _add(p, "output", str, "report directory")

    p = sub.add_parser("sweep", help="solve and evaluate an attack over an eps x n grid")
    _common(p)
    _add(p, "model", str)
    _add(p, "dataset", str)
    _add(p, "kind", str)
    _add(p, "eps", _floats)
    _add(p, "n", _ints)
    _add(p, "fading", str)
    _add(p, "noise_var", float)
    _add(p, "ber_max", float)
    _add(p, "slices_per_class", int)
    _add(p, "max_outer", int)
    _add(p, "max_ncg", int)
    _add(p, "seeds", _ints)
    _add(p, "seed", int)
    _add(p, "format", _strs)
    _add(p, "output", str)

    p = sub.add_parser("report", help="render CSV/plots from a report JSON")
    _common(p)
    _add(p, "input", str)
    _add(p, "format", _strs)
    _add(p, "output", str)

    p = sub.add_parser("replay", help="re-run a registered run from its digest")
    p.add_argument("digest")
    p.add_argument("--to", default=None, help="write outputs under this directory instead")
    return top


def _section(verb, action):
    return f"firnet-{action}" if verb == "firnet" else verb


def load_config(path) -> dict:
    import yaml

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(cfg, dict):
        raise SchemaError(f"{path}: config must be a mapping")
    return cfg


def resolve(section: str, args: argparse.Namespace) -> dict:
    """Defaults, then config file (top level, then verb section), then flags."""
    params = dict(DEFAULTS[section])
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        layers = [{k: v for k, v in cfg.items() if not isinstance(v, dict)}, cfg.get(section, {}) or {}]
        for layer in layers:
            for k, v in layer.items():
                key = k.replace("-", "_")
                if key in params:
                    params[key] = v
                elif layer is layers[1]:
                    raise SchemaError(f"config: unknown key {k!r} for {section}")
    for k in params:
        v = getattr(args, k, None)
        if v is not None:
            params[k] = v
    if section == "attack":
        params["kind"] = args.kind
    return params


# ---------------------------------------------------------------------------
# digests and run registry
# ---------------------------------------------------------------------------


def _hash_path(path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(f.relative_to(path).as_posix().encode())
            h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def config_digest(section: str, params: dict) -> str:
    """sha256 over the resolved parameters and input contents, excluding paths."""
    payload = {"verb": section, "params": {}, "inputs": {}}
    for k, v in sorted(params.items()):
        if k in OUTPUT_KEYS:
            continue
        if k in INPUT_KEYS and v is not None:
            payload["inputs"][k] = _hash_path(v)
        else:
            payload["params"][k] = v
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "waveform-adv-out")


def register_run(root: Path, section: str, params: dict, digest: str, outputs: list) -> Path:
    runs = root / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    rec = {
        "format_version": RUN_FORMAT_VERSION,
        "verb": section,
        "digest": digest,
        "params": params,
        "outputs": [str(p) for p in outputs],
    }
    path = runs / f"{digest}.json"
    path.write_text(json.dumps(rec, sort_keys=True, indent=1))
    return path


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def _need(params, *keys):
    for k in keys:
        if params.get(k) is None:
            raise UsageError(f"missing required option --{k.replace('_', '-')}")


def _exists(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")


def _class_ref(classes, v):
    if v is None:
        return None
    if isinstance(v, int) or str(v).lstrip("-").isdigit():
        i = int(v)
        if not 0 <= i < len(classes):
            raise UsageError(f"class index {i} out of range")
        return i
    if v not in classes:
        raise UsageError(f"unknown class {v!r}; known: {', '.join(classes)}")
    return classes.index(v)


def _refs(classes, vs):
    return None if vs is None else tuple(_class_ref(classes, v) for v in vs)


def _default_out(root, sub, digest, suffix=""):
    return root / sub / f"{digest}{suffix}"


def holdout(model, dataset: data.Dataset):
    """(opt, test) halves of the slices the model was not trained on."""
    info = model.meta.get("split")
    rest = dataset
    if info and info.get("dataset_digest") == _dataset_digest(dataset):
        _, rest = data.split(dataset, (info["train_frac"], 1 - info["train_frac"]), info["seed"])
    return data.split(rest, (0.5, 0.5), seed=info["seed"] + 1 if info else 0)


def _dataset_digest(ds: data.Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.iq).tobytes())
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    return h.hexdigest()[:16]


def run_gen_mod(p, root, digest):
    ds = data.gen_modulation_dataset(tuple(p["schemes"]), tuple(p["snr"]), p["slices"], p["n_i"], p["seed"], p["sps"], p["pulse"])  # fmt: skip
    out = Path(p["output"] or _default_out(root, "datasets", f"mod-{digest}"))
    return [data.save_dataset(ds, out)]


def run_gen_fp(p, root, digest):
    base = data.BaseWaveform(scheme=p["scheme"], snr_db=p["snr"])
    ds = data.gen_fingerprint_dataset(p["devices"], base, p["slices"], p["n_i"], p["seed"])
    out = Path(p["output"] or _default_out(root, "datasets", f"fp-{digest}"))
    return [data.save_dataset(ds, out)]


def run_import(p, root, digest):
    _need(p, "input")
    _exists(p["input"], "RadioML file")
    ds = data.import_radioml(p["input"], p["limit"])
    out = Path(p["output"] or _default_out(root, "datasets", f"radioml-{digest}"))
    return [data.save_dataset(ds, out)]


def _fit_depth(n_i, limit=3, width=7, pool=4):
    n, depth = n_i, 0
    while depth < limit:
        n = (n - (width if depth == 0 else 5) + 1) // pool
        if n < 1:
            break
        depth += 1
    return depth


def run_train(p, root, digest):
    _need(p, "dataset")
    ds = data.load_dataset(p["dataset"])
    arch = p["arch"] or ("fingerprint" if ds.kind == "fingerprint" else "modulation")
    kw = {} if p["filters"] is None else {"filters": p["filters"]}
    if arch == "modulation":
        depth = p["depth"] or _fit_depth(ds.n_i)
        if depth < 1:
            raise UsageError(f"n_i={ds.n_i} too short for the modulation arch")
        model = nn.modulation_surrogate(ds.classes, ds.n_i, depth=depth, seed=p["seed"], **kw)
    elif arch == "fingerprint":
        model = nn.fingerprint_surrogate(ds.classes, ds.n_i, seed=p["seed"], **kw)
    else:
        raise UsageError("--arch must be modulation or fingerprint")
    train, _ = data.split(ds, (p["train_frac"], 1 - p["train_frac"]), p["seed"])
    hyper = nn.TrainConfig(l2_lambda=p["l2"], lr=p["lr"], epochs=p["epochs"], batch=p["batch"], seed=p["seed"])
    model, hist = nn.train(model, train, hyper)
    if not np.all(np.isfinite(hist.loss)):
        raise NumericalError("training loss became non-finite")
    model.meta["split"] = {"train_frac": p["train_frac"], "seed": p["seed"], "dataset_digest": _dataset_digest(ds)}
    out = Path(p["output"] or _default_out(root, "models", digest, ".bin"))
    out.parent.mkdir(parents=True, exist_ok=True)
    log.info("trained %s model: final loss %.4f, train accuracy %.3f", arch, hist.loss[-1], hist.accuracy[-1])
    return [nn.save_model(model, out)]


def _attack_config(p, classes, kind=None):
    return wb.AttackConfig(
        epsilons=tuple(p["eps"]),
        n_params=tuple(p["n"]),
        fading=p["fading"],
        noise_variance=p["noise_var"],
        ber_max=p["ber_max"],
        e_max=p.get("e_max"),
        slices_per_class=p["slices_per_class"],
        adversary_class=_class_ref(classes, p.get("adversary_class")),
        sources=_refs(classes, p.get("sources")),
        targets=_refs(classes, p.get("targets")),
        naive=bool(p.get("naive")),
        seed=p["seed"],
        solver=wb.SolverOptions(max_outer=p["max_outer"], max_ncg=p["max_ncg"]),
    )


def _load_pair(p):
    _need(p, "model", "dataset")
    model = nn.load_model(p["model"])
    ds = data.load_dataset(p["dataset"])
    if list(ds.classes) != list(model.classes) or ds.n_i != model.input_len:
        raise SchemaError("dataset and model disagree on classes or slice length")
    return model, ds


def run_attack(p, root, digest):
    model, ds = _load_pair(p)
    if p["fading"] not in dsp.FADING_REGIMES:
        raise UsageError(f"--fading must be one of {', '.join(dsp.FADING_REGIMES)}")
    opt, _ = holdout(model, ds)
    artifact = wb.ATTACKS[p["kind"]](model, opt, _attack_config(p, model.classes))
    out = Path(p["output"] or _default_out(root, "attacks", f"{p['kind']}-{digest}", ".json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    return [artifact.save(out)]


def run_firnet_train(p, root, digest):
    model, ds = _load_pair(p)
    train, test = holdout(model, ds)
    oracle = fn.FeedbackOracle.simulated(model, ds, p["mode"], p["seed"], transparent=bool(p["transparent"]))
    targets = _refs(model.classes, p["targets"])
    net = fn.FirNetModel(model.classes, p["taps"], p["eps"], p["layers"], targets)
    hyper = fn.FirNetTrainConfig(p["batch"], p["epochs"], p["steps"], p["lr"], p["seed"], p["estimator"])
    result = fn.train_firnet(net, oracle, fn.PayloadSource(train), None, hyper)
    if result.collapsed:
        log.warning("FIRNet output collapsed onto class %s", result.collapse_class)
    out = Path(p["output"] or _default_out(root, "firnet", digest, ".json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    return [fn.save_firnet(result, out)]


def run_firnet_apply(p, root, digest):
    _need(p, "firnet", "dataset", "target")
    net = fn.load_firnet(p["firnet"])
    ds = data.load_dataset(p["dataset"])
    t = _class_ref(net.classes, p["target"])
    rng = np.random.default_rng(data.derive_seed(p["seed"], 41))
    src = fn.PayloadSource(ds)
    idx = rng.integers(0, len(src.payloads), p["count"])
    z = fn.firnet_forward(net, src.payloads[idx], t)
    metas = [dict(ds.metas[i], firnet_target=net.classes[t]) for i in idx]
    labels = np.full(idx.size, t)
    out_ds = data.Dataset(z, labels, list(net.classes), "synthesized", metas, p["seed"], info={"firnet_target": t})
    out = Path(p["output"] or _default_out(root, "datasets", f"firnet-{digest}"))
    return [data.save_dataset(out_ds, out)]


def _report_paths(report, p, root, digest):
    out = Path(p["output"] or _default_out(root, "reports", digest))
    return ev.emit_report(report, out, tuple(p["format"]), stem=f"report-{digest}")


def run_eval(p, root, digest):
    model, ds = _load_pair(p)
    _, test = holdout(model, ds)
    seeds = tuple(p["seeds"])
    if p["attack"]:
        artifact = wb.AttackArtifact.load(p["attack"])
        report = ev.run_attack_eval(model, artifact, test, p["regime"], seeds, digest)
    elif p["firnet"]:
        net = fn.load_firnet(p["firnet"])
        oracle = fn.FeedbackOracle.simulated(model, ds, fn.SOFTMAX, 0)
        report = ev.run_firnet_eval(net, oracle, fn.PayloadSource(test), seeds, config_digest=digest)
    elif p["baseline"]:
        if p["baseline"] not in ("replay", "replay-rayleigh"):
            raise UsageError("--baseline must be replay or replay-rayleigh")
        oracle = fn.FeedbackOracle.simulated(model, ds, fn.ONEBIT, 0)
        channel = oracle.channel
        if p["baseline"] == "replay-rayleigh":
            channel = dsp.ChannelModel.rayleigh(noise_variance=channel.noise_variance)
        report = ev.baseline_replay(model, test, channel, oracle.impairment, seeds,
                                    oracle.jitter_gain_db, oracle.jitter_phase, digest)  # fmt: skip
    else:
        matrix, acc = ev.confusion_matrix(model, test)
        report = ev.EvalReport("clean", list(model.classes), clean_accuracy=acc, clean_confusion=matrix.tolist(),
                               config_digest=digest, seeds=list(seeds))  # fmt: skip
    return _report_paths(report, p, root, digest)


def run_sweep(p, root, digest):
    model, ds = _load_pair(p)
    if p["kind"] not in wb.ATTACKS:
        raise UsageError(f"--kind must be one of {', '.join(wb.ATTACKS)}")
    opt, test = holdout(model, ds)
    report = ev.sweep(model, opt, test, p["kind"], _attack_config(p, model.classes), tuple(p["seeds"]), digest)
    return _report_paths(report, p, root, digest)


def run_report(p, root, digest):
    _need(p, "input")
    report = ev.load_report(p["input"])
    out = Path(p["output"] or Path(p["input"]).parent)
    return ev.emit_report(report, out, tuple(p["format"]), stem=Path(p["input"]).stem)


RUNNERS = {
    "gen-mod": run_gen_mod,
    "gen-fp": run_gen_fp,
    "import-radioml": run_import,
    "train": run_train,
    "attack": run_attack,
    "firnet-train": run_firnet_train,
    "firnet-apply": run_firnet_apply,
    "eval": run_eval,
    "sweep": run_sweep,
    "report": run_report,
}


def execute(section: str, params: dict, root: Path) -> tuple:
    for k in INPUT_KEYS:
        if params.get(k) is not None:
            _exists(params[k], k)
    digest = config_digest(section, params)
    outputs = RUNNERS[section](params, root, digest)
    register_run(root, section, params, digest, outputs)
    for o in outputs:
        print(o)
    return digest, outputs


def replay(root: Path, digest: str, to=None):
    path = root / "runs" / f"{digest}.json"
    if not path.exists():
        raise FileNotFoundError(f"no registered run {digest} under {root / 'runs'}")
    try:
        rec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if rec.get("format_version") != RUN_FORMAT_VERSION or rec.get("verb") not in RUNNERS:
        raise SchemaError(f"{path}: not a run record")
    params = dict(rec["params"])
    if to is not None:
        orig = params.get("output") or (rec["outputs"][0] if rec["outputs"] else None)
        params["output"] = str(Path(to) / Path(orig).name) if orig and rec["verb"] not in ("eval", "sweep", "report") else to
    if config_digest(rec["verb"], params) != digest:
        raise SchemaError(f"inputs of run {digest} changed since it was registered")
    return execute(rec["verb"], params, root)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    if args.verb is None:
        parser.print_usage(sys.stderr)
        print("waveform-adv: error: a verb is required", file=sys.stderr)
        return EXIT_USAGE
    if args.verb == "firnet" and args.action is None:
        print("waveform-adv firnet: error: choose train or apply", file=sys.stderr)
        return EXIT_USAGE
    root = out_root(args)
    try:
        if args.verb == "replay":
            replay(root, args.digest, args.to)
            return EXIT_OK
        section = _section(args.verb, getattr(args, "action", None))
        execute(section, resolve(section, args), root)
        return EXIT_OK
    except UsageError as exc:
        print(f"waveform-adv: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaError as exc:
        print(f"waveform-adv: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericalError as exc:
        print(f"waveform-adv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"waveform-adv: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, KeyError) as exc:
        print(f"waveform-adv: invalid value: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
