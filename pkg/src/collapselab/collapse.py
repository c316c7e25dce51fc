"""Self-consuming training loops on finite supports.

One iteration trains the next model on ``alpha_t * P + (1 - alpha_t) * Q_t``.
With infinite capacity the fit is the mixture itself; with finite samples
the fit is the empirical distribution of ``N`` draws from the mixture,
which is the KL minimiser over the full simplex.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import (
    Categorical,
    FeatureMap,
    JointTable,
    SupportMismatchError,
    counts_to_categorical,
    entropy,
    kl_divergence,
    mean_embed,
    mix,
    mutual_information,
    sample_indices,
    smoothed_kl,
    tv_distance,
)
from .rng import derive_seed, make_rng

__all__ = [
    "AlphaSchedule",
    "LoopConfig",
    "Trajectory",
    "NoiseModel",
    "DriftResult",
    "EnsembleConfig",
    "EnsembleTrajectory",
    "step_ideal",
    "closed_form_ideal",
    "step_finite",
    "run_trajectory",
    "mean_drift_sim",
    "ensemble_mixture",
    "ensemble_step",
    "run_ensemble",
    "tv_mixture_bound_check",
    "push_through_channel",
    "dpi_chain",
    "default_feature_map",
]

INFINITE = "infinite"
FINITE = "finite-sample"


@dataclass(frozen=True)
class AlphaSchedule:
    """Fraction of fresh data per iteration.

    ``constant``: alpha0.  ``geometric``: alpha0 * ratio**t.
    ``harmonic``: alpha0 / (1 + t).  ``custom-table``: ``table[t]``, holding
    the last entry once the table runs out.
    """

    kind: str = "constant"
    alpha0: float = 0.0
    ratio: float = None
    table: tuple = None

    def __post_init__(self):
        if self.kind not in ("constant", "geometric", "harmonic", "custom-table"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "custom-table":
            if not self.table:
                raise ValueError("custom-table schedule needs a non-empty table")
            object.__setattr__(self, "table", tuple(float(a) for a in self.table))
            if any(not 0.0 <= a <= 1.0 for a in self.table):
                raise ValueError("schedule table entries must lie in [0, 1]")
        elif not 0.0 <= self.alpha0 <= 1.0:
            raise ValueError(f"alpha0={self.alpha0!r} outside [0, 1]")
        if self.kind == "geometric" and not (self.ratio is not None and 0 < self.ratio < 1):
            raise ValueError("geometric schedule needs ratio in (0, 1)")

    def __call__(self, t):
        if self.kind == "constant":
            return float(self.alpha0)
        if self.kind == "geometric":
            return float(self.alpha0 * self.ratio**t)
        if self.kind == "harmonic":
            return float(self.alpha0 / (1 + t))
        return self.table[min(t, len(self.table) - 1)]

    def to_dict(self):
        d = {"kind": self.kind, "alpha0": self.alpha0}
        if self.ratio is not None:
            d["ratio"] = self.ratio
        if self.table is not None:
            d["table"] = list(self.table)
        return d

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"kind", "alpha0", "ratio", "table"}
        if extra:
            raise ValueError(f"unknown schedule keys {sorted(extra)}")
        return cls(d.get("kind", "constant"), d.get("alpha0", 0.0),
                   d.get("ratio"), d.get("table"))


def default_feature_map(support):
    """Identity embedding for numeric labels, position index otherwise."""
    if all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in support):
        return FeatureMap.identity(support)
    return FeatureMap({s: [float(i)] for i, s in enumerate(support)})


@dataclass(frozen=True)
class LoopConfig:
    true_dist: Categorical
    initial_model: Categorical
    schedule: AlphaSchedule
    sample_size: int = 100
    steps: int = 100
    master_seed: int = 0
    capacity: str = FINITE
    feature_map: FeatureMap = None

    def __post_init__(self):
        if self.capacity not in (INFINITE, FINITE):
            raise ValueError(f"unknown capacity {self.capacity!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.capacity == FINITE and (self.sample_size is None or self.sample_size < 1):
            raise ValueError("finite-sample capacity needs sample_size >= 1")
        if self.true_dist.support != self.initial_model.support:
            raise SupportMismatchError("true_dist and initial_model supports differ")


@dataclass
class Trajectory:
    """Per-iteration metrics, one entry per t = 0..steps.

    ``entropy_drop[t] = H(Q_t) - H(Q_{t+1})`` (NaN at the last record).
    ``kl`` may hold ``inf``; ``kl_smoothed`` uses pseudocount 1 / (10 N).
    """

    t: np.ndarray
    alpha: np.ndarray
    entropy: np.ndarray
    kl: np.ndarray
    kl_smoothed: np.ndarray
    tv: np.ndarray
    mean: np.ndarray
    support_size: np.ndarray
    entropy_drop: np.ndarray
    states: np.ndarray = None
    support: tuple = ()
    seed: int = None

    def __len__(self):
        return len(self.t)

    def final(self):
        if self.states is None:
            raise ValueError("trajectory was run without keep_states")
        return Categorical(self.support, self.states[-1])

    COLUMNS = ("t", "alpha", "entropy", "entropy_drop", "kl", "kl_smoothed", "tv",
               "support_size")

    def rows(self):
        """Row dicts for CSV export; the mean embedding is split per dimension."""
        for i in range(len(self.t)):
            row = {c: getattr(self, c)[i] for c in self.COLUMNS}
            for j, v in enumerate(np.atleast_1d(self.mean[i])):
                row[f"mean_{j}"] = v
            yield row


def step_ideal(P, Q, alpha):
    """Infinite-capacity update: the mixture itself."""
    return mix(alpha, P, Q)


def closed_form_ideal(P, Q0, alpha, t):
    """(1 - (1 - alpha)**t) P + (1 - alpha)**t Q0."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"closed form needs alpha in (0, 1], got {alpha!r}")
    if t < 0:
        raise ValueError("t must be >= 0")
    if P.support != Q0.support:
        raise SupportMismatchError("P and Q0 supports differ")
    w = (1.0 - alpha) ** t
    if w == 1.0:
        return Q0
    if w == 0.0:
        return P
    return P.with_probs((1.0 - w) * P.probs + w * Q0.probs)


def step_finite(P, Q, alpha, n, seed):
    """Empirical fit of ``n`` draws from the mixture alpha P + (1 - alpha) Q.

    Equal to ``fit_empirical(sample(mix(alpha, P, Q), n, seed), support)``.
    """
    target = mix(alpha, P, Q)
    idx = sample_indices(target, n, seed)
    counts = np.bincount(idx, minlength=len(target))
    return counts_to_categorical(target.support, counts)


def _metrics(P, Q, phi, pseudocount):
    return (entropy(Q), kl_divergence(P, Q), smoothed_kl(P, Q, pseudocount),
            tv_distance(P, Q), mean_embed(Q, phi), Q.support_size)


def _assemble(records, alphas, states, support, seed, keep_states):
    H, KL, KLs, TV, MU, SS = (np.array(col) for col in zip(*records))
    drop = np.full(len(H), np.nan)
    drop[:-1] = H[:-1] - H[1:]
    return Trajectory(
        t=np.arange(len(H)), alpha=np.array(alphas), entropy=H, kl=KL,
        kl_smoothed=KLs, tv=TV, mean=MU, support_size=SS.astype(int),
        entropy_drop=drop, states=np.array(states) if keep_states else None,
        support=support, seed=seed)


def run_trajectory(config, keep_states=False, step_fn=None):
    """Iterate the loop for ``config.steps`` steps and record metrics.

    Step ``t`` uses seed ``derive_seed(master_seed, t, 0)``.  ``step_fn``
    overrides the update (signature ``(Q, alpha, seed, t) -> Q``); it is how
    composed operators reuse this driver.
    """
    P, Q = config.true_dist, config.initial_model
    phi = config.feature_map or default_feature_map(P.support)
    n = config.sample_size
    pseudocount = 1.0 / (10 * n) if n else 1e-3
    if step_fn is None:
        if config.capacity == INFINITE:
            def step_fn(Q, a, seed, t):
                return step_ideal(P, Q, a)
        else:
            def step_fn(Q, a, seed, t):
                return step_finite(P, Q, a, n, seed)
    records, alphas, states = [], [], []
    for t in range(config.steps + 1):
        a = config.schedule(t)
        alphas.append(a)
        records.append(_metrics(P, Q, phi, pseudocount))
        if keep_states:
            states.append(Q.probs)
        if t < config.steps:
            Q = step_fn(Q, a, derive_seed(config.master_seed, t, 0), t)
    return _assemble(records, alphas, states, P.support, config.master_seed, keep_states)


# -- mean drift (AR(1)) -----------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    kind: str = "gaussian-embedding"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian-embedding"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")

    @property
    def scale(self):
        return 0.0 if self.kind == "none" else float(self.sigma)


@dataclass
class DriftResult:
    t: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    alpha: np.ndarray
    paths: np.ndarray = None  # (n_seeds, steps + 1) when kept


def mean_drift_sim(mu_P, alpha_schedule, noise, steps, n_seeds, master_seed,
                   mu0=None, keep_paths=False, block=128):
    """Cross-seed mean and variance of mu_{t+1} = (1 - a_t) mu_t + a_t mu_P + xi_t.

    Seed ``s`` draws its whole noise path from ``derive_seed(master_seed, s)``;
    replicas are processed in blocks and combined with the pairwise
    (Chan et al.) mean/M2 update, so results do not depend on ``block``
    beyond float rounding.  Variances are population variances (ddof = 0).
    """
    if n_seeds < 2:
        raise ValueError("n_seeds must be >= 2")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    mu0 = mu_P if mu0 is None else mu0
    alphas = np.array([alpha_schedule(t) for t in range(steps + 1)])
    count = 0
    mean = np.zeros(steps + 1)
    m2 = np.zeros(steps + 1)
    paths = np.empty((n_seeds, steps + 1)) if keep_paths else None
    sd = noise.scale
    for start in range(0, n_seeds, block):
        seeds = range(start, min(n_seeds, start + block))
        xi = np.stack([make_rng(derive_seed(master_seed, s)).standard_normal(steps)
                       for s in seeds]) * sd
        mu = np.empty((len(seeds), steps + 1))
        mu[:, 0] = mu0
        for t in range(steps):
            a = alphas[t]
            mu[:, t + 1] = (1.0 - a) * mu[:, t] + a * mu_P + xi[:, t]
        if keep_paths:
            paths[start:start + len(seeds)] = mu
        nb = len(seeds)
        bmean = mu.mean(axis=0)
        bm2 = ((mu - bmean) ** 2).sum(axis=0)
        delta = bmean - mean
        tot = count + nb
        mean = mean + delta * nb / tot
        m2 = m2 + bm2 + delta**2 * count * nb / tot
        count = tot
    return DriftResult(np.arange(steps + 1), mean, m2 / count, alphas, paths)


# -- ensembles --------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleConfig:
    models: tuple
    weights: tuple
    schedule: AlphaSchedule = field(default_factory=AlphaSchedule)
    sample_size: int = 200
    steps: int = 100
    master_seed: int = 0

    def __post_init__(self):
        models, w = tuple(self.models), np.array(self.weights, dtype=float)
        if not models:
            raise ValueError("ensemble needs at least one model")
        if w.shape != (len(models),):
            raise ValueError("one weight per model required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1 within 1e-12")
        if any(m.support != models[0].support for m in models):
            raise SupportMismatchError("ensemble members have different supports")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))


def ensemble_mixture(models, weights):
    """R = sum_i w_i Q^i."""
    acc = np.zeros(len(models[0]))
    for w, m in zip(weights, models):
        acc = acc + w * m.probs
    return models[0].with_probs(acc)


def ensemble_step(cfg, P, alpha, step_index, models=None):
    """Every model refits to alpha P + (1 - alpha) R with its own sample noise.

    Model ``j`` at step ``t`` uses seed ``derive_seed(master_seed, t, j)``.
    """
    models = cfg.models if models is None else tuple(models)
    if any(m.support != P.support for m in models):
        raise SupportMismatchError("models and P have different supports")
    R = ensemble_mixture(models, cfg.weights)
    return tuple(step_finite(P, R, alpha, cfg.sample_size,
                             derive_seed(cfg.master_seed, step_index, j))
                 for j in range(len(models)))


@dataclass
class EnsembleTrajectory:
    """Mixture states R_0..R_T and diagnostics.

    ``tv_step[t] = TV(R_{t-1}, R_t)`` (NaN at t = 0); ``kl_smoothed`` uses
    pseudocount 1 / (10 N).
    """

    t: np.ndarray
    mixtures: np.ndarray
    tv_step: np.ndarray
    kl_smoothed: np.ndarray
    entropy: np.ndarray
    support_size: np.ndarray
    final_models: tuple
    support: tuple


def run_ensemble(cfg, P):
    models = cfg.models
    pc = 1.0 / (10 * cfg.sample_size)
    Rs = [ensemble_mixture(models, cfg.weights)]
    for t in range(cfg.steps):
        models = ensemble_step(cfg, P, cfg.schedule(t), t, models)
        Rs.append(ensemble_mixture(models, cfg.weights))
    tv = np.full(len(Rs), np.nan)
    tv[1:] = [tv_distance(a, b) for a, b in zip(Rs[:-1], Rs[1:])]
    return EnsembleTrajectory(
        t=np.arange(len(Rs)),
        mixtures=np.array([R.probs for R in Rs]),
        tv_step=tv,
        kl_smoothed=np.array([smoothed_kl(P, R, pc) for R in Rs]),
        entropy=np.array([entropy(R) for R in Rs]),
        support_size=np.array([R.support_size for R in Rs]),
        final_models=models,
        support=P.support,
    )


# -- bounds -----------------------------------------------------------------

def tv_mixture_bound_check(P, Q, alpha, tol=1e-12):
    """``(TV(mix, Q), alpha * TV(P, Q), holds)`` for mix = alpha P + (1 - alpha) Q."""
    lhs = tv_distance(mix(alpha, P, Q), Q)
    rhs = alpha * tv_distance(P, Q)
    holds = abs(lhs - rhs) <= tol and lhs <= alpha + tol
    return lhs, rhs, holds


def push_through_channel(joint, channel, out_labels=None):
    """Joint of (M, Y) when Y is drawn from ``channel[x]`` given X = x."""
    K = np.array(channel, dtype=float)
    if K.ndim != 2 or K.shape[0] != len(joint.col_labels):
        raise ValueError(
            f"channel shape {K.shape} incompatible with {len(joint.col_labels)} inputs")
    if np.any(K < 0) or np.any(np.abs(K.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("channel is not row-stochastic")
    if out_labels is None:
        out_labels = tuple(range(K.shape[1]))
    return JointTable(joint.row_labels, tuple(out_labels), joint.joint_probs @ K)


def dpi_chain(joint_MX, channel_XY, out_labels=None):
    """``(I(M; X), I(M; Y))`` for the chain M -> X -> Y."""
    joint_MY = push_through_channel(joint_MX, channel_XY, out_labels)
    return mutual_information(joint_MX), mutual_information(joint_MY)
