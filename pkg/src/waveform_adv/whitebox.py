"""
Whitebox waveform attacks posed as one constrained maximization.

For S optimization slices the adversary maximizes

    F(phi) = (1/S) sum_s sum_c w_c f_c(z_s(phi))

subject to per-slice decodability (BER) and energy constraints, with phi
confined to a box of half-width eps around its starting point.  Two
waveform models share the solver:

* jamming:   z_s = z_L,s + h_s * tile(phi, offset_s)
* synthesis: z_s = h_s * (x_BB,s * phi) + w_s

``*`` is causal FIR convolution and ``h_s, w_s`` are a frozen channel
realization per slice.  The solver is an augmented Lagrangian outer loop
(multipliers ``lam <- max(0, lam + gamma_t g)``, ``gamma_t = gamma_0/(1+t)``)
around a projected Polak-Ribiere+ conjugate-gradient ascent with Armijo
backtracking.

Complex gradients are packed as ``dRe + 1j*dIm`` throughout; the public
:func:`strategy_gradient` returns them unpacked as ``[Re..., Im...]``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, kernels
from .data import Dataset, derive_seed
from .errors import SchemaError, SolverDivergence

log = logging.getLogger(__name__)

JAMMING = "jamming"
SYNTHESIS = "synthesis"
ARTIFACT_VERSION = 1


def _pairs(a):
    return [[float(v.real), float(v.imag)] for v in np.asarray(a, dtype=np.complex128)]


def _from_pairs(p):
    arr = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


def _json_float(v):
    return None if v is None or not math.isfinite(v) else float(v)


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


@dataclass
class AttackStrategy:
    """Adversary free variables: N_J jamming samples or M FIR taps.

    ``center`` is the box origin: zeros for jamming, the identity FIR for
    synthesis.  The box is ``|Re(phi - center)|, |Im(phi - center)| <= epsilon``.
    """

    kind: str
    values: np.ndarray
    epsilon: float = math.inf
    center: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (JAMMING, SYNTHESIS):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        self.values = dsp.as_waveform(self.values)
        if self.center is None:
            self.center = default_center(self.kind, self.values.size)
        self.center = np.asarray(self.center, dtype=np.complex128)
        if self.center.shape != self.values.shape:
            raise ValueError("center and values differ in length")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def n(self) -> int:
        return self.values.size

    @classmethod
    def zero(cls, n, epsilon=math.inf, **meta) -> "AttackStrategy":
        return cls(JAMMING, np.zeros(n, dtype=np.complex128), epsilon, meta=meta)

    @classmethod
    def identity(cls, m, epsilon=math.inf, **meta) -> "AttackStrategy":
        return cls(SYNTHESIS, default_center(SYNTHESIS, m), epsilon, meta=meta)

    def box_violation(self) -> float:
        d = self.values - self.center
        return float(max(np.max(np.abs(d.real)), np.max(np.abs(d.imag))) - self.epsilon)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "values": _pairs(self.values),
            "center": _pairs(self.center),
            "epsilon": _json_float(self.epsilon),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackStrategy":
        eps = d.get("epsilon")
        return cls(
            d["kind"],
            _from_pairs(d["values"]),
            math.inf if eps is None else eps,
            _from_pairs(d["center"]),
            dict(d.get("meta", {})),
        )


def default_center(kind, n):
    c = np.zeros(n, dtype=np.complex128)
    if kind == SYNTHESIS:
        c[0] = 1.0
    return c


def adversary_waveform(strategy: AttackStrategy, payload=None) -> np.ndarray:
    """x_A(phi): the jamming samples themselves, or the payload filtered by phi.

    ``payload`` may be one waveform or a (S, N) batch.
    """
    if strategy.kind == JAMMING:
        if payload is not None:
            raise ValueError("jamming strategies take no payload")
        return strategy.values.copy()
    if payload is None:
        raise ValueError("synthesis strategies need a payload x_BB")
    x = np.asarray(payload, dtype=np.complex128)
    x2 = np.atleast_2d(x)
    dsp.as_waveform(x2.ravel())
    y = kernels.fir_filter(x2, np.broadcast_to(strategy.values, (x2.shape[0], strategy.n)))
    return y[0] if x.ndim == 1 else y


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------


@dataclass
class GwapProblem:
    """One instance of the generic constrained attack.

    ``slices`` holds z_L (jamming) or x_BB payloads (synthesis), one row per
    optimization slice, with matching ``tx_bits`` and ``schemes`` for the
    decodability constraint.  ``channel_seeds`` freeze one channel draw per
    slice; ``offsets`` set the circular tiling phase of a jammer.
    """

    kind: str
    class_weights: np.ndarray
    slices: np.ndarray
    tx_bits: list
    schemes: list
    n_params: int
    box_epsilon: float
    channel: dsp.ChannelModel = field(default_factory=dsp.ChannelModel.transparent)
    channel_seeds: list | None = None
    offsets: np.ndarray | None = None
    ber_max: float = 1e-2
    e_max: float | None = None
    rho_rogue: int = 0

    def __post_init__(self):
        if self.kind not in (JAMMING, SYNTHESIS):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        allowed = {-1.0, 0.0, 1.0, -float(self.rho_rogue), float(self.rho_rogue)}
        if not set(np.unique(self.class_weights)) <= allowed:
            raise ValueError(f"class weights must lie in {sorted(allowed)}")
        if self.rho_rogue not in (0, 1):
            raise ValueError("rho_rogue is a 0/1 flag")
        self.slices = np.atleast_2d(np.asarray(self.slices, dtype=np.complex128))
        s = self.slices.shape[0]
        if s < 1:
            raise ValueError("problem needs at least one slice")
        if len(self.tx_bits) != s or len(self.schemes) != s:
            raise SchemaError("tx_bits and schemes must be given for every slice")
        if any(b is None for b in self.tx_bits):
            raise SchemaError("missing tx_bits for the BER constraint")
        if not 0 <= self.ber_max <= 0.5:
            raise ValueError("ber_max must lie in [0, 0.5]")
        if self.n_params < 1:
            raise ValueError("n_params must be >= 1")
        if self.box_epsilon < 0:
            raise ValueError("box_epsilon must be >= 0")
        if self.e_max is None:
            # the box already bounds jammer energy by 2 eps^2 N_J
            self.e_max = 2.0 * self.box_epsilon**2 * self.n_params if self.kind == JAMMING else math.inf
        if self.e_max <= 0 and self.box_epsilon > 0:
            raise ValueError("e_max must be > 0")
        if self.offsets is None:
            self.offsets = np.zeros(s, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.int64) % max(self.n_params, 1)
        self._symbols = [dsp.bits_to_symbols(b, sc) for b, sc in zip(self.tx_bits, self.schemes)]
        self._vstar = np.array([max(dsp.evm_threshold(sc, self.ber_max), 1e-12) for sc in self.schemes])
        self._realization = None

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def n_i(self) -> int:
        return self.slices.shape[1]

    @property
    def has_energy_constraint(self) -> bool:
        return math.isfinite(self.e_max)

    def realization(self):
        """Frozen (taps (S, K), noise (S, N)); jamming drops the adversary noise term."""
        if self.channel_seeds is None:
            raise ValueError("gradients need a fixed channel realization; set channel_seeds")
        if self._realization is None:
            if len(self.channel_seeds) != self.n_slices:
                raise ValueError("one channel seed per slice required")
            draws = [self.channel.draw(seed, self.n_i) for seed in self.channel_seeds]
            taps = np.array([d[0] for d in draws])
            noise = np.array([d[1] for d in draws])
            if self.kind == JAMMING:
                noise[:] = 0
            self._realization = (taps, noise)
        return self._realization

    def adversary_signal(self, phi, rows=None):
        """x_A per slice before the channel."""
        rows = slice(None) if rows is None else rows
        if self.kind == JAMMING:
            return kernels.tile(phi, self.offsets[rows], self.n_i)
        x = self.slices[rows]
        return kernels.fir_filter(x, np.broadcast_to(phi, (x.shape[0], phi.size)))

    def received(self, phi, rows=None) -> np.ndarray:
        rows = slice(None) if rows is None else rows
        taps, noise = self.realization()
        xa = self.adversary_signal(phi, rows)
        za = kernels.fir_filter(xa, taps[rows]) + noise[rows]
        if self.kind == JAMMING:
            return self.slices[rows] + za
        return za

    def ber_waveform(self, phi, z=None):
        """Waveform on which decodability is judged: the jammed reception, or the synthesized x_A."""
        if self.kind == JAMMING:
            return self.received(phi) if z is None else z
        return self.adversary_signal(phi)

    def pullback_received(self, gz, rows=None):
        """d/dphi from d/dz, one row per slice (packed complex)."""
        rows = slice(None) if rows is None else rows
        taps, _ = self.realization()
        gx = kernels.fir_adjoint_input(gz, taps[rows])
        return self._pullback_adversary(gx, rows)

    def pullback_ber(self, g):
        if self.kind == JAMMING:
            return self.pullback_received(g)
        return self._pullback_adversary(g, slice(None))

    def _pullback_adversary(self, gx, rows):
        if self.kind == JAMMING:
            return kernels.tile_accumulate(gx, self.offsets[rows], self.n_params)
        return kernels.fir_adjoint_taps(self.slices[rows], gx, self.n_params)

    def evm(self, phi, z=None, need_grad=False):
        """Per-slice mean |MF estimate - transmitted symbol|^2 and, optionally, d/dwaveform."""
        w = self.ber_waveform(phi, z)
        vals = np.empty(self.n_slices)
        grads = np.zeros_like(w) if need_grad else None
        for s in range(self.n_slices):
            est = dsp.symbol_estimates(w[s], self.schemes[s])
            err = est - self._symbols[s]
            vals[s] = np.mean(np.abs(err) ** 2)
            if need_grad:
                grads[s] = dsp.symbol_estimates_adjoint(2.0 * err / err.size, self.schemes[s], self.n_i)
        return vals, grads

    def digest(self) -> str:
        h = hashlib.sha256()
        head = {
            "kind": self.kind,
            "weights": self.class_weights.tolist(),
            "n": self.n_params,
            "eps": self.box_epsilon,
            "ber_max": self.ber_max,
            "e_max": _json_float(self.e_max),
            "rho": self.rho_rogue,
            "channel": self.channel.to_dict(),
            "seeds": None if self.channel_seeds is None else [int(v) for v in self.channel_seeds],
            "offsets": self.offsets.tolist(),
        }
        h.update(json.dumps(head, sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.slices).tobytes())
        return h.hexdigest()[:16]


def strategy_gradient(problem: GwapProblem, model, strategy: AttackStrategy, c, s: int) -> np.ndarray:
    """Gradient of f_c(z_s) w.r.t. [Re(phi), Im(phi)] through the frozen channel of slice ``s``."""
    if strategy.kind != problem.kind or strategy.n != problem.n_params:
        raise ValueError("strategy does not match problem")
    idx = model.class_index(c)
    w = np.zeros(model.n_classes)
    w[idx] = 1.0
    rows = slice(s, s + 1)
    z = problem.received(strategy.values, rows)
    _, gz = model.weighted_input_gradient(z, w)
    g = problem.pullback_received(gz, rows)[0]
    return np.concatenate([g.real, g.imag])


def evaluate_constraints(problem: GwapProblem, strategy: AttackStrategy, s: int) -> np.ndarray:
    """Raw constraint values for slice ``s`` (<= 0 when satisfied).

    ``[BER - BER_max, energy(x_A) - E_max, |Re d_i| - eps ..., |Im d_i| - eps ...]``
    with ``d = phi - center``; BER is hard-decision against the stored bits.
    """
    if problem.tx_bits[s] is None:
        raise SchemaError(f"slice {s} has no tx_bits")
    phi = strategy.values
    rows = slice(s, s + 1)
    if problem.kind == JAMMING:
        w = problem.received(phi, rows)[0]
        e = dsp.energy(phi)
    else:
        w = problem.adversary_signal(phi, rows)[0]
        e = dsp.energy(w)
    ber = dsp.measure_ber(problem.tx_bits[s], w, problem.schemes[s])
    d = phi - strategy.center
    box = np.concatenate([np.abs(d.real), np.abs(d.imag)]) - problem.box_epsilon
    return np.concatenate([[ber - problem.ber_max, e - problem.e_max], box])


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


@dataclass
class SolverOptions:
    max_outer: int = 8
    max_ncg: int = 10
    rho_pen: float = 1.0
    gamma0: float = 0.1
    tol: float = 1e-6
    feas_tol: float = 1e-3
    armijo_c: float = 1e-4
    max_backtrack: int = 20
    step_scale: float = 1.0


@dataclass
class SolverTrace:
    objective: list = field(default_factory=list)
    lagrangian: list = field(default_factory=list)
    max_violation: list = field(default_factory=list)
    lambda_min: list = field(default_factory=list)
    lambda_max: list = field(default_factory=list)
    ncg_steps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: [float(v) for v in vals] for k, vals in asdict(self).items()}


@dataclass
class SolverState:
    x: np.ndarray
    lam: np.ndarray
    rho_pen: float
    gamma: float
    t: int
    trace: SolverTrace


def _psi(g, lam, rho):
    """Inequality augmented-Lagrangian penalty and its derivative in g."""
    act = lam + rho * g
    val = np.where(act >= 0, lam * g + 0.5 * rho * g * g, -(lam**2) / (2 * rho))
    return val, np.maximum(act, 0.0)


def _reduce(v, x, lower, upper):
    """Zero components that push against an active bound."""
    out = v.copy()
    out[(x >= upper) & (v > 0)] = 0.0
    out[(x <= lower) & (v < 0)] = 0.0
    return out


def ncg_maximize(fun, x, lower, upper, max_iter, options: SolverOptions):
    """Projected Polak-Ribiere+ ascent.  ``fun(x) -> (value, grad)``.

    Returns ``(x, value, grad, steps)``.  Every accepted step satisfies the
    Armijo condition, so the value never decreases.
    """
    val, grad = fun(x)
    if not np.isfinite(val):
        raise SolverDivergence(f"objective is {val} at the starting point")
    r_prev = d_prev = None
    alpha_prev = None
    steps = 0
    for _ in range(max_iter):
        r = _reduce(grad, x, lower, upper)
        if np.max(np.abs(r), initial=0.0) <= options.tol:
            break
        if r_prev is None:
            d = r
        else:
            beta = max(0.0, float(r @ (r - r_prev)) / max(float(r_prev @ r_prev), 1e-300))
            d = _reduce(r + beta * d_prev, x, lower, upper)
            if float(d @ r) <= 0:
                d = r
        dmax = np.max(np.abs(d))
        alpha = options.step_scale / dmax
        if alpha_prev is not None:
            alpha = min(alpha, 4.0 * alpha_prev)
        accepted = False
        for _ in range(options.max_backtrack):
            xn = np.clip(x + alpha * d, lower, upper)
            slope = float(grad @ (xn - x))
            if slope > 0:
                vn, gn = fun(xn)
                if np.isfinite(vn) and vn >= val + options.armijo_c * slope:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        x, val, grad = xn, vn, gn
        r_prev, d_prev, alpha_prev = r, d, alpha
        steps += 1
    return x, val, grad, steps


def augmented_lagrangian(evaluate, x0, lower, upper, n_cons, options: SolverOptions, weights=None):
    """Maximize F(x) s.t. g(x) <= 0 and lower <= x <= upper.

    ``evaluate(x, need_grad)`` returns ``(F, dF, g, vjp)`` where ``vjp(w)``
    gives ``sum_k w_k dg_k/dx``.  ``weights`` scale each constraint's
    penalty (default 1).
    """
    wts = np.ones(n_cons) if weights is None else np.asarray(weights, dtype=np.float64)
    lam = np.zeros(n_cons)
    rho = options.rho_pen
    x = np.clip(np.asarray(x0, dtype=np.float64), lower, upper)
    trace = SolverTrace()
    best = None
    gamma = options.gamma0

    def lagrangian(xv, lam_now):
        f, df, g, vjp = evaluate(xv, True)
        pen, dpen = _psi(g, lam_now, rho)
        val = f - float(wts @ pen)
        grad = df - vjp(wts * dpen)
        return val, grad

    t = 0
    for t in range(options.max_outer):
        lam_t = lam.copy()
        x_prev = x
        x, lval, _, steps = ncg_maximize(lambda v: lagrangian(v, lam_t), x, lower, upper, options.max_ncg, options)
        f, _, g, _ = evaluate(x, False)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise SolverDivergence(f"non-finite objective at outer iteration {t}", trace.to_dict())
        gamma = options.gamma0 / (1.0 + t)
        lam = np.maximum(0.0, lam + gamma * g)
        viol = float(np.max(g, initial=-math.inf))
        trace.objective.append(f)
        trace.lagrangian.append(lval)
        trace.max_violation.append(max(viol, 0.0))
        trace.lambda_min.append(float(lam.min(initial=0.0)))
        trace.lambda_max.append(float(lam.max(initial=0.0)))
        trace.ncg_steps.append(steps)
        log.debug("outer %d F=%.6f L=%.6f viol=%.3g steps=%d", t, f, lval, viol, steps)
        key = (viol <= options.feas_tol, f if viol <= options.feas_tol else -viol)
        if best is None or key > best[0]:
            best = (key, x.copy())
        if np.max(np.abs(x - x_prev)) <= options.tol and np.max(np.abs(lam - lam_t), initial=0) <= options.tol:
            break
    x_best = x if best is None else best[1]
    return SolverState(x_best, lam, rho, gamma, t, trace)


def _pack(c):
    return np.concatenate([c.real, c.imag])


def _unpack(x):
    n = x.size // 2
    return x[:n] + 1j * x[n:]


def gwap_evaluator(problem: GwapProblem, model):
    """Closure computing the attack objective, scaled constraints and their VJP.

    Constraints per slice: ``EVM_s / v*_s - 1`` and (jamming with finite
    E_max) ``energy / E_max - 1``; layout is (S, m) flattened row-major.
    """
    s_count = problem.n_slices
    omega = problem.class_weights
    m = 2 if problem.has_energy_constraint else 1

    def evaluate(x, need_grad):
        phi = _unpack(x)
        z = problem.received(phi)
        if need_grad:
            p, gz = model.weighted_input_gradient(z, omega)
        else:
            p, gz = model.probabilities(z), None
        f = float(np.mean(p @ omega))
        evm, gevm = problem.evm(phi, z, need_grad)
        cons = np.empty((s_count, m))
        cons[:, 0] = evm / problem._vstar - 1.0
        if m == 2:
            e = (
                dsp.energy(phi)
                if problem.kind == JAMMING
                else np.array([dsp.energy(r) for r in problem.adversary_signal(phi)])
            )
            cons[:, 1] = e / problem.e_max - 1.0
        if not need_grad:
            return f, None, cons.ravel(), None
        df = _pack(problem.pullback_received(gz).sum(axis=0) / s_count)

        def vjp(w):
            w = w.reshape(s_count, m)
            gw = gevm * (w[:, 0] / problem._vstar)[:, None]
            acc = problem.pullback_ber(gw).sum(axis=0)
            if m == 2:
                if problem.kind == JAMMING:
                    acc = acc + 2.0 * phi * w[:, 1].sum() / problem.e_max
                else:
                    xa = problem.adversary_signal(phi)
                    acc = acc + problem.pullback_ber(2.0 * xa * (w[:, 1] / problem.e_max)[:, None]).sum(0)
            return _pack(acc)

        return f, df, cons.ravel(), vjp

    return evaluate, s_count * m


def objective(problem: GwapProblem, model, strategy: AttackStrategy) -> float:
    p = model.probabilities(problem.received(strategy.values))
    return float(np.mean(p @ problem.class_weights))


def _enforce_energy(problem: GwapProblem, phi):
    if problem.kind == JAMMING and problem.has_energy_constraint:
        e = dsp.energy(phi)
        if e > problem.e_max:
            phi = phi * math.sqrt(problem.e_max / e)
    return phi


def solve_gwap(problem: GwapProblem, model, init: AttackStrategy | None = None, options: SolverOptions | None = None):
    """Augmented-Lagrangian / NCG solve.  Returns (AttackStrategy, SolverState)."""
    options = options or SolverOptions()
    if init is None:
        init = initial_strategy(problem, seed=0)
    if init.kind != problem.kind or init.n != problem.n_params:
        raise ValueError("init strategy does not match problem")
    eps = problem.box_epsilon
    center = init.center
    lower = _pack(center) - eps
    upper = _pack(center) + eps
    if eps == 0:
        x = _pack(center)
        state = SolverState(x, np.zeros(0), options.rho_pen, options.gamma0, 0, SolverTrace())
    else:
        evaluate, n_cons = gwap_evaluator(problem, model)
        opts = SolverOptions(**{**asdict(options), "step_scale": eps})
        weights = np.full(n_cons, 1.0 / problem.n_slices)
        state = augmented_lagrangian(evaluate, _pack(init.values), lower, upper, n_cons, opts, weights)
    phi = _unpack(np.clip(state.x, lower, upper))
    phi = _enforce_energy(problem, phi)
    meta = {"problem_digest": problem.digest(), "trace": state.trace.to_dict()}
    return AttackStrategy(problem.kind, phi, eps, center, meta), state


def initial_strategy(problem: GwapProblem, seed=0) -> AttackStrategy:
    """Identity FIR for synthesis; small complex Gaussian (sigma = eps/10) for jamming."""
    n, eps = problem.n_params, problem.box_epsilon
    if problem.kind == SYNTHESIS:
        return AttackStrategy.identity(n, eps)
    rng = np.random.default_rng(seed)
    if eps == 0:
        return AttackStrategy.zero(n, eps)
    v = (eps / 10.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
    v = np.clip(v.real, -eps, eps) + 1j * np.clip(v.imag, -eps, eps)
    return AttackStrategy(JAMMING, v, eps)


# ---------------------------------------------------------------------------
# attack drivers
# ---------------------------------------------------------------------------

AWJ_U, AWJ_T, AWS = "awj-u", "awj-t", "aws"


@dataclass
class AttackConfig:
    epsilons: tuple = (0.05, 0.1, 0.2)
    n_params: tuple = (64,)
    fading: str = "none"
    noise_variance: float = 0.01
    ber_max: float = 1e-2
    e_max: float | None = None
    slices_per_class: int = 32
    adversary_class: int | str | None = None
    sources: tuple | None = None
    targets: tuple | None = None
    naive: bool = False
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        solver = SolverOptions(**d.pop("solver", {}))
        for key in ("epsilons", "n_params", "sources", "targets"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d, solver=solver)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttackArtifact:
    """Strategies from one attack run plus what eval needs to replay them."""

    attack: str
    classes: list
    n_i: int
    fading: str
    noise_variance: float
    ber_max: float
    strategies: list
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": ARTIFACT_VERSION,
            "attack": self.attack,
            "classes": list(self.classes),
            "n_i": self.n_i,
            "fading": self.fading,
            "noise_variance": self.noise_variance,
            "ber_max": self.ber_max,
            "config": self.config,
            "strategies": [s.to_dict() for s in self.strategies],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackArtifact":
        if d.get("format_version") != ARTIFACT_VERSION:
            raise SchemaError(f"unsupported strategy artifact version {d.get('format_version')}")
        try:
            return cls(
                d["attack"],
                d["classes"],
                d["n_i"],
                d["fading"],
                d["noise_variance"],
                d["ber_max"],
                [AttackStrategy.from_dict(s) for s in d["strategies"]],
                d.get("config", {}),
            )
        except KeyError as exc:
            raise SchemaError(f"strategy artifact missing field {exc}") from None

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))
        return path

    @classmethod
    def load(cls, path) -> "AttackArtifact":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)


_ATTACK_CODES = {AWJ_U: 1, AWJ_T: 2, AWS: 3}


def _opt_indices(dataset: Dataset, c, count, seed):
    idx = np.flatnonzero(dataset.labels == c)
    if idx.size == 0:
        raise ValueError(f"no optimization slices for class {dataset.classes[c]!r}")
    if idx.size > count:
        rng = np.random.default_rng(derive_seed(seed, 7, c))
        idx = np.sort(rng.choice(idx, count, replace=False))
    return idx


def build_problem(kind, model, dataset: Dataset, rows, weights, n, eps, config: AttackConfig, key):
    """Problem over ``dataset`` rows with channel seeds and offsets derived from ``key``."""
    channel = dsp.channel_regime(config.fading, noise_variance=config.noise_variance)
    seeds = [derive_seed(config.seed, *key, int(r)) for r in rows]
    orng = np.random.default_rng(derive_seed(config.seed, *key, n))
    offsets = orng.integers(0, n, rows.size) if kind == JAMMING else None
    if dataset.n_i != model.input_len:
        raise SchemaError(f"dataset slices have {dataset.n_i} samples, model expects {model.input_len}")
    return GwapProblem(
        kind,
        weights,
        dataset.iq[rows],
        [dataset.tx_bits(int(r)) for r in rows],
        [dataset.scheme_of(int(r)) for r in rows],
        n,
        eps,
        channel,
        seeds,
        offsets,
        config.ber_max,
        config.e_max,
        1 if config.adversary_class is not None or kind == SYNTHESIS else 0,
    )


def _check_compatible(model, dataset: Dataset):
    if list(model.classes) != list(dataset.classes):
        raise SchemaError("model and dataset class lists differ")


def _weights(model, plus=None, minus=(), rho_minus=None):
    w = np.zeros(model.n_classes)
    if plus is not None:
        w[plus] += 1.0
    for c in minus:
        w[c] -= 1.0
    if rho_minus is not None:
        w[rho_minus] -= 1.0
    return np.clip(w, -1.0, 1.0)


def _run(attack, kind, model, dataset, config: AttackConfig, jobs):
    strategies = []
    for source, target, adv, weights, rows in jobs:
        for n in config.n_params:
            for ei, eps in enumerate(config.epsilons):
                key = (_ATTACK_CODES[attack], source, 0 if target is None else target + 1)
                problem = build_problem(kind, model, dataset, rows, weights, int(n), float(eps), config, key)
                init = initial_strategy(problem, seed=derive_seed(config.seed, *key, int(n), ei))
                strat, _ = solve_gwap(problem, model, init, config.solver)
                strat.meta.update(
                    {
                        "attack": attack,
                        "source": int(source),
                        "target": None if target is None else int(target),
                        "adversary_class": None if adv is None else int(adv),
                        "n": int(n),
                        "channel_seeds": [int(v) for v in problem.channel_seeds],
                        "offsets": None if problem.offsets is None else problem.offsets.tolist(),
                        "opt_rows": [int(r) for r in rows],
                        "naive": bool(config.naive),
                    }
                )
                log.info(
                    "%s src=%s tgt=%s n=%d eps=%g objective=%.4f",
                    attack, source, target, n, eps, objective(problem, model, strat),
                )  # fmt: skip
                strategies.append(strat)
    return AttackArtifact(
        attack,
        list(model.classes),
        model.input_len,
        config.fading,
        config.noise_variance,
        config.ber_max,
        strategies,
        _config_dict(config),
    )


def _config_dict(config: AttackConfig):
    d = config.to_dict()
    return json.loads(json.dumps(d, default=_json_float))


def _classes(dataset, items):
    return [dataset.class_index(c) for c in items]


def attack_awj_untargeted(model, dataset: Dataset, config: AttackConfig | None = None) -> AttackArtifact:
    """One slice-averaged jammer per (source class, eps, N_J): w_{c_L} = -1, w_{c_A} = -rho."""
    config = config or AttackConfig()
    _check_compatible(model, dataset)
    adv = None if config.adversary_class is None else dataset.class_index(config.adversary_class)
    sources = _classes(dataset, config.sources) if config.sources else range(len(dataset.classes))
    jobs = []
    for c in sources:
        rows = _opt_indices(dataset, c, config.slices_per_class, config.seed)
        jobs.append((c, None, adv, _weights(model, None, (c,), adv if adv != c else None), rows))
    return _run(AWJ_U, JAMMING, model, dataset, config, jobs)


def _pairs_for(dataset, config):
    sources = _classes(dataset, config.sources) if config.sources else list(range(len(dataset.classes)))
    targets = _classes(dataset, config.targets) if config.targets else list(range(len(dataset.classes)))
    explicit = bool(config.sources) and bool(config.targets)
    pairs = []
    for s in sources:
        for t in targets:
            if s == t:
                if explicit and len(sources) == 1 and len(targets) == 1:
                    raise ValueError("target class equals source class")
                continue
            pairs.append((s, t))
    if not pairs:
        raise ValueError("no (source, target) pairs with distinct classes")
    return pairs


def attack_awj_targeted(model, dataset: Dataset, config: AttackConfig | None = None) -> AttackArtifact:
    """Per (source, target) jammer: w_{c_T} = +1, w_{c_L} = -1, w_{c_A} = -rho.

    ``config.naive`` keeps only the +1 on the target (ablation).
    """
    config = config or AttackConfig()
    _check_compatible(model, dataset)
    adv = None if config.adversary_class is None else dataset.class_index(config.adversary_class)
    jobs = []
    for s, t in _pairs_for(dataset, config):
        rows = _opt_indices(dataset, s, config.slices_per_class, config.seed)
        if config.naive:
            w = _weights(model, t)
        else:
            w = _weights(model, t, (s,), adv if adv not in (s, t) else None)
        jobs.append((s, t, adv, w, rows))
    return _run(AWJ_T, JAMMING, model, dataset, config, jobs)


def attack_aws(model, dataset: Dataset, config: AttackConfig | None = None) -> AttackArtifact:
    """Per (rogue, target) FIR: w_{c_T} = +1, w_{c_A} = -1 (the rogue is a known class).

    Payloads are the rogue class's own optimization slices; ``sources``
    lists rogue classes.
    """
    config = config or AttackConfig(epsilons=(0.5,), n_params=(8,))
    _check_compatible(model, dataset)
    jobs = []
    for rogue, t in _pairs_for(dataset, config):
        rows = _opt_indices(dataset, rogue, config.slices_per_class, config.seed)
        jobs.append((rogue, t, rogue, _weights(model, t, (), rogue), rows))
    return _run(AWS, SYNTHESIS, model, dataset, config, jobs)


ATTACKS = {AWJ_U: attack_awj_untargeted, AWJ_T: attack_awj_targeted, AWS: attack_aws}
