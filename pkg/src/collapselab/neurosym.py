"""Composed update Q -> T_alpha(C_t(Pi_S(Q))) and the tools to measure it.

* ``project_symbolic``: nearest member of a finite constraint set.
* ``causal_correct``: move a covered fraction of coordinates toward P.
* ``pipeline_step`` / ``run_pipeline``: the composition, reusing the
  finite-sample fit from :mod:`collapselab.collapse`.
* ``estimate_contraction`` / ``iterated_bound``: fit and check
  ``D_{t+1} <= c D_t + delta``.
* ``select_program`` / ``algorithmic_support``: penalised program choice
  and the support implied by near-optimal programs.
"""

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .collapse import FINITE, LoopConfig, run_trajectory, step_finite, step_ideal
from .complexity import ctm
from .dist import (
    Categorical,
    SupportMismatchError,
    fit_empirical,
    kl_divergence,
    sample,
    tv_distance,
)
from .rng import derive_seed, make_rng

__all__ = [
    "NoFeasibleProjectionError",
    "NoExplanationError",
    "Program",
    "ProgramPool",
    "SymbolicConstraintSet",
    "CausalCorrector",
    "ContractionReport",
    "project_symbolic",
    "causal_correct",
    "pipeline_step",
    "run_pipeline",
    "stat_factor_check",
    "fit_contraction",
    "estimate_contraction",
    "iterated_bound",
    "symbolic_factor_check",
    "causal_factor_check",
    "nll_bits",
    "program_score",
    "select_program",
    "algorithmic_support",
    "support_recovery_experiment",
    "elias_gamma_bits",
    "template_programs",
    "periodic_programs",
    "census_point_programs",
]


class NoFeasibleProjectionError(ValueError):
    """Every constraint-set member is at infinite divergence."""


class NoExplanationError(ValueError):
    """No program in the pool assigns the data finite likelihood."""


# -- programs ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Program:
    """A generator with a known output distribution and a complexity proxy.

    ``complexity_bits`` is either a census weight (-log2 of the machine's
    output frequency) or the length of an explicit encoding.
    """

    name: str
    distribution: Categorical
    complexity_bits: float
    machine_index: int = None
    space_id: tuple = None

    def __post_init__(self):
        if not self.complexity_bits > 0:
            raise ValueError(f"program {self.name!r}: complexity must be > 0")

    def to_dict(self):
        d = {"name": self.name, **self.distribution.to_dict(),
             "complexity_bits": self.complexity_bits,
             "machine_index": self.machine_index,
             "space_id": list(self.space_id) if self.space_id else None}
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"name", "labels", "probs", "complexity_bits", "machine_index", "space_id"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown program keys {sorted(extra)}")
        sid = d.get("space_id")
        return cls(d["name"], Categorical(tuple(d["labels"]), d["probs"]),
                   float(d["complexity_bits"]), d.get("machine_index"),
                   tuple(sid) if sid else None)


@dataclass(frozen=True)
class ProgramPool:
    programs: tuple

    def __post_init__(self):
        progs = tuple(self.programs)
        if not progs:
            raise ValueError("program pool is empty")
        object.__setattr__(self, "programs", progs)

    def __iter__(self):
        return iter(self.programs)

    def __len__(self):
        return len(self.programs)

    def __getitem__(self, i):
        return self.programs[i]

    def by_name(self, name):
        for p in self.programs:
            if p.name == name:
                return p
        raise KeyError(name)

    def below(self, max_bits):
        return ProgramPool(tuple(p for p in self.programs if p.complexity_bits <= max_bits))

    def to_json(self):
        return json.dumps({"programs": [p.to_dict() for p in self.programs]}, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if set(d) != {"programs"}:
            raise ValueError("pool file must hold exactly one key, 'programs'")
        return cls(tuple(Program.from_dict(p) for p in d["programs"]))


def elias_gamma_bits(k):
    """Length of the Elias gamma code of the positive integer k."""
    if k < 1:
        raise ValueError("Elias gamma needs k >= 1")
    return 2 * int(math.floor(math.log2(k))) + 1


def binary_strings(length):
    return tuple("".join(bits) for bits in itertools.product("01", repeat=length))


def template_programs(length):
    """One program per template in {0, 1, *}^length.

    The program emits a uniform draw among the binary strings that match the
    template.  It is encoded as gamma(length), gamma(f + 1) for f fixed
    positions, then (position, bit) per fixed position using
    ceil(log2 length) + 1 bits each.
    """
    support = binary_strings(length)
    pos_bits = max(1, math.ceil(math.log2(length))) if length > 1 else 1
    out = []
    for tmpl in itertools.product("01*", repeat=length):
        tmpl = "".join(tmpl)
        match = np.array([all(t in ("*", c) for t, c in zip(tmpl, s)) for s in support],
                         dtype=float)
        fixed = sum(ch != "*" for ch in tmpl)
        bits = (elias_gamma_bits(length) + elias_gamma_bits(fixed + 1)
                + fixed * (pos_bits + 1))
        out.append(Program(f"template:{tmpl}", Categorical(support, match / match.sum()),
                           float(bits)))
    return ProgramPool(tuple(out))


def _primitive(u):
    n = len(u)
    return not any(n % d == 0 and u == u[:d] * (n // d) for d in range(1, n))


def periodic_programs(table, length, max_period=4):
    """Programs emitting a length-``length`` window of u u u ... at a uniform
    phase, for every primitive unit u in the census with |u| <= max_period.

    Complexity is CTM(u) on ``table`` plus gamma(length) bits for the window.
    """
    support = binary_strings(length)
    index = {s: i for i, s in enumerate(support)}
    out = []
    for u, _ in table.ranked():
        if len(u) > max_period or not _primitive(u) or set(u) - {"0", "1"}:
            continue
        p = np.zeros(len(support))
        for phase in range(len(u)):
            w = (u * (length // len(u) + 2))[phase:phase + length]
            p[index[w]] += 1.0 / len(u)
        bits = ctm(u, table).value + elias_gamma_bits(length)
        out.append(Program(f"periodic:{u}", Categorical(support, p), bits,
                           space_id=table.space_id))
    return ProgramPool(tuple(out))


def census_point_programs(table, length, support=None):
    """Point-mass programs for every census output of the given length,
    weighted by CTM."""
    support = tuple(support) if support is not None else binary_strings(length)
    out = []
    for o, _ in table.ranked():
        if len(o) != length or o not in support:
            continue
        p = np.zeros(len(support))
        p[support.index(o)] = 1.0
        out.append(Program(f"census:{o}", Categorical(support, p),
                           ctm(o, table).value, space_id=table.space_id))
    return ProgramPool(tuple(out))


# -- symbolic projection ----------------------------------------------------

@dataclass(frozen=True)
class SymbolicConstraintSet:
    """Finite feasible set, optionally filtered by predicates.

    ``support_mask``: labels allowed positive mass.  ``monotone``: labels
    whose probabilities must be non-increasing in the given order.
    ``complexities`` (same length as ``members``) break projection ties.
    """

    members: tuple
    complexities: tuple = None
    support_mask: frozenset = None
    monotone: tuple = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("constraint set is empty")
        object.__setattr__(self, "members", members)
        if self.complexities is not None:
            cx = tuple(float(c) for c in self.complexities)
            if len(cx) != len(members):
                raise ValueError("one complexity per member required")
            object.__setattr__(self, "complexities", cx)
        if not self.feasible():
            raise ValueError("no member satisfies the predicate constraints")

    @classmethod
    def from_pool(cls, pool, max_bits=math.inf, **predicates):
        progs = [p for p in pool if p.complexity_bits <= max_bits]
        return cls(tuple(p.distribution for p in progs),
                   tuple(p.complexity_bits for p in progs), **predicates)

    def admits(self, R):
        if self.support_mask is not None:
            if any(p > 0 and s not in self.support_mask for s, p in zip(R.support, R.probs)):
                return False
        if self.monotone is not None:
            vals = [R[s] for s in self.monotone]
            if any(b > a for a, b in zip(vals, vals[1:])):
                return False
        return True

    def feasible(self):
        """``[(position, member), ...]`` passing the predicates."""
        return [(i, R) for i, R in enumerate(self.members) if self.admits(R)]


def project_symbolic(Q, S, order="forward"):
    """Member R of S minimising KL(R || Q) (``order="forward"``) or KL(Q || R)
    (``order="reverse"``).  Ties go to lower complexity, then list order."""
    if order not in ("forward", "reverse"):
        raise ValueError(f"unknown divergence order {order!r}")
    best, best_key = None, None
    for i, R in S.feasible():
        if R.support != Q.support:
            raise SupportMismatchError("constraint member support differs from Q")
        d = kl_divergence(R, Q) if order == "forward" else kl_divergence(Q, R)
        cx = S.complexities[i] if S.complexities is not None else 0.0
        key = (d, cx, i)
        if best_key is None or key < best_key:
            best, best_key = R, key
    if best_key[0] == math.inf:
        raise NoFeasibleProjectionError("all members are at infinite divergence from Q")
    return best


# -- causal correction ------------------------------------------------------

@dataclass(frozen=True)
class CausalCorrector:
    """Coverage ``phi_t`` of corrected coordinates, moved toward P with
    strength ``eta_c``, so that kappa_t = 1 - eta_c * phi_t.

    ``mode="subset"`` corrects round(phi_t * |X|) coordinates chosen with
    ``derive_seed(correction_seed, t)`` and renormalises; ``mode="exact"``
    applies the full-coordinate mixture with weight eta_c * phi_t.
    """

    eta_c: float
    phi: object = 1.0  # float, sequence indexed by t, or callable t -> phi_t
    correction_seed: int = 0
    mode: str = "subset"

    def __post_init__(self):
        if not 0.0 <= self.eta_c <= 1.0:
            raise ValueError(f"eta_c={self.eta_c!r} outside [0, 1]")
        if self.mode not in ("subset", "exact"):
            raise ValueError(f"unknown correction mode {self.mode!r}")
        if isinstance(self.phi, (list, tuple)):
            object.__setattr__(self, "phi", tuple(float(x) for x in self.phi))

    def phi_t(self, t):
        if callable(self.phi):
            v = float(self.phi(t))
        elif isinstance(self.phi, tuple):
            v = self.phi[min(t, len(self.phi) - 1)]
        else:
            v = float(self.phi)
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"phi_t={v!r} outside [0, 1]")
        return v

    def kappa(self, t):
        return 1.0 - self.eta_c * self.phi_t(t)


def causal_correct(R, P, corrector, t):
    if R.support != P.support:
        raise SupportMismatchError("R and P supports differ")
    phi = corrector.phi_t(t)
    eta = corrector.eta_c
    if phi == 0.0 or eta == 0.0:
        return R
    if corrector.mode == "exact":
        w = eta * phi
        return R.with_probs((1.0 - w) * R.probs + w * P.probs)
    m = len(R)
    k = int(round(phi * m))
    if k == 0:
        return R
    if k == m:
        # every coordinate covered: the move is already normalised
        return R.with_probs((1.0 - eta) * R.probs + eta * P.probs)
    chosen = make_rng(derive_seed(corrector.correction_seed, t)).permutation(m)[:k]
    r = R.probs.copy()
    r[chosen] = (1.0 - eta) * r[chosen] + eta * P.probs[chosen]
    return R.with_probs(r / r.sum())


# -- composed step ----------------------------------------------------------

def pipeline_step(Q, P, alpha, S, corrector, n, seed, t, order="forward",
                  capacity=FINITE):
    """T_alpha(C_t(Pi_S(Q))); ``S=None`` or ``corrector=None`` skips that stage."""
    X = Q if S is None else project_symbolic(Q, S, order)
    if corrector is not None:
        X = causal_correct(X, P, corrector, t)
    if capacity == FINITE:
        return step_finite(P, X, alpha, n, seed)
    return step_ideal(P, X, alpha)


def run_pipeline(P, Q0, schedule, S=None, corrector=None, n=100, steps=50,
                 master_seed=0, order="forward", capacity=FINITE, keep_states=False):
    """Trajectory of the composed update with the same seeding as
    :func:`collapselab.collapse.run_trajectory`."""
    cfg = LoopConfig(P, Q0, schedule, n, steps, master_seed, capacity)

    def step(Q, a, seed, t):
        return pipeline_step(Q, P, a, S, corrector, n, seed, t, order, capacity)

    return run_trajectory(cfg, keep_states=keep_states, step_fn=step)


# -- contraction fitting ----------------------------------------------------

@dataclass
class ContractionReport:
    """Fitted one-step bound ``D_{t+1} <= c D_t + delta``.

    ``delta`` is the smallest offset for which the bound holds on every
    observed pair at the fitted ``c``; ``delta_lsq`` is the least-squares
    intercept and ``residual_rms`` the RMS of least-squares residuals.
    """

    component: str
    c: float
    delta: float
    delta_lsq: float
    residual_rms: float
    series: np.ndarray = None
    bound: np.ndarray = None
    bound_satisfied: bool = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"component": self.component, "c": self.c, "delta": self.delta,
             "delta_lsq": self.delta_lsq, "residual_rms": self.residual_rms,
             "bound_satisfied": self.bound_satisfied}
        if self.series is not None:
            d["series"] = [float(x) for x in self.series]
        if self.bound is not None:
            d["bound"] = [float(x) for x in self.bound]
        d.update(self.extra)
        return d


def fit_contraction(x, y, component="generic"):
    """Least squares for y ~ c x + delta with c in (0, 1], delta >= 0.

    When x carries no spread the slope is unidentifiable; the fit then takes
    c = 1 and delta = max(0, mean(y - x)).
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two (x, y) pairs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("divergence values must be finite")
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("divergence values must be >= 0")
    scale = max(1.0, float(np.max(np.abs(x))))
    if np.ptp(x) <= 1e-14 * scale:
        c, d = 1.0, max(0.0, float(np.mean(y - x)))
    else:
        A = np.column_stack([x, np.ones_like(x)])
        (c, d), *_ = np.linalg.lstsq(A, y, rcond=None)
        if not (0.0 < c <= 1.0 and d >= 0.0):
            res = lsq_linear(A, y, bounds=([1e-12, 0.0], [1.0, np.inf]),
                             method="bvls", tol=1e-15)
            c, d = res.x
        c, d = float(c), float(max(d, 0.0))
    resid = y - (c * x + d)
    envelope = max(d, float(np.max(y - c * x)))
    return ContractionReport(component, c, envelope, d, float(np.sqrt(np.mean(resid**2))))


def iterated_bound(c, delta, D0, n):
    """c**n D0 + delta * sum_{i<n} c**i."""
    if not 0.0 < c <= 1.0:
        raise ValueError(f"c={c!r} outside (0, 1]")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if n < 0:
        raise ValueError("n must be >= 0")
    if c == 1.0:
        return D0 + n * delta
    cn = c**n
    return cn * D0 + delta * (1.0 - cn) / (1.0 - c)


def estimate_contraction(series, component="generic", slack=1e-6):
    """Fit D^{t+1} <= c D^t + delta on a divergence series D^0..D^n and
    check the iterated bound at every n."""
    D = np.asarray(series, dtype=float)
    if D.size < 3:
        raise ValueError("series needs D^0..D^n with n >= 2")
    if not np.all(np.isfinite(D)):
        raise ValueError("series contains infinite values")
    rep = fit_contraction(D[:-1], D[1:], component)
    rep.series = D
    rep.bound = np.array([iterated_bound(rep.c, rep.delta, D[0], n) for n in range(D.size)])
    rep.bound_satisfied = bool(np.all(D <= rep.bound + slack))
    return rep


def stat_factor_check(P, Q, alpha, n, seeds, divergence="kl"):
    """Measured contraction of the finite-sample statistical step.

    ``c`` is 1 - alpha (alpha = 0 gives the no-restoring-force case c = 1).  ``extra`` records the idealised divergence
    D(P || alpha P + (1 - alpha) Q), the across-seed mean after the finite
    fit, ``measured_factor`` = mean / D(P || Q), and ``delta_stat``, the
    excess of the mean over (1 - alpha) D(P || Q).  ``bound_satisfied``
    checks the idealised step against (1 - alpha) D(P || Q).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    div = {"kl": kl_divergence, "tv": tv_distance}[divergence]
    D0 = div(P, Q)
    ideal = div(P, step_ideal(P, Q, alpha))
    vals = np.array([div(P, step_finite(P, Q, alpha, n, s)) for s in seeds])
    mean = float(np.mean(vals))
    c = 1.0 - alpha
    delta_stat = max(0.0, mean - c * D0)
    rep = ContractionReport("statistical", c, delta_stat, delta_stat, float(np.std(vals)))
    rep.bound_satisfied = bool(ideal <= c * D0 + 1e-12)
    rep.extra = {"divergence": divergence, "D0": D0, "ideal": ideal, "mean": mean,
                 "measured_factor": mean / D0 if D0 > 0 else math.nan,
                 "delta_stat": delta_stat, "n_seeds": int(vals.size)}
    return rep


def symbolic_factor_check(P, Qs, S, order="forward"):
    """Fit sigma, delta_s in KL(P || Pi_S(Q)) <= sigma KL(P || Q) + delta_s."""
    x = np.array([kl_divergence(P, Q) for Q in Qs])
    y = np.array([kl_divergence(P, project_symbolic(Q, S, order)) for Q in Qs])
    keep = np.isfinite(x) & np.isfinite(y)
    rep = fit_contraction(x[keep], y[keep], "symbolic")
    rep.extra = {"pairs": int(keep.sum())}
    return rep


def causal_factor_check(P, Rs, corrector, t=0):
    """Measured delta_c in KL(P || C_t(R)) <= kappa_t KL(P || R) + delta_c."""
    kappa = corrector.kappa(t)
    x = np.array([kl_divergence(P, R) for R in Rs])
    y = np.array([kl_divergence(P, causal_correct(R, P, corrector, t)) for R in Rs])
    keep = np.isfinite(x) & np.isfinite(y)
    excess = y[keep] - kappa * x[keep]
    delta_c = max(0.0, float(np.max(excess))) if excess.size else 0.0
    rep = ContractionReport("causal", kappa, delta_c, delta_c, 0.0)
    rep.bound_satisfied = True
    rep.extra = {"kappa": kappa, "pairs": int(keep.sum()),
                 "eta_c": corrector.eta_c, "phi_t": corrector.phi_t(t)}
    return rep


# -- penalised program selection --------------------------------------------

def nll_bits(data, dist):
    """-log2 likelihood of the draws; inf when a draw has zero mass."""
    total = 0.0
    for x in data.draws:
        try:
            p = dist[x]
        except KeyError:
            return math.inf
        if p <= 0:
            return math.inf
        total -= math.log2(p)
    return total


def program_score(data, program, lam):
    return nll_bits(data, program.distribution) + lam * program.complexity_bits


def select_program(data, pool, lam):
    """argmin over the pool of NLL(data | p) + lam K(p); ties to lower K, then
    pool order."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    best, best_key = None, None
    for i, p in enumerate(pool):
        key = (program_score(data, p, lam), p.complexity_bits, i)
        if best_key is None or key < best_key:
            best, best_key = p, key
    if best_key[0] == math.inf:
        raise NoExplanationError("no program assigns the data positive likelihood")
    return best


def algorithmic_support(p_star, pool, k_tolerance):
    """Union of supports of pool programs with |K(p) - K(p*)| <= k_tolerance."""
    if not any(p is p_star for p in pool):
        raise ValueError(f"{p_star.name!r} is not a member of the pool")
    ks = p_star.complexity_bits
    keep = set()
    for p in pool:
        if abs(p.complexity_bits - ks) <= k_tolerance:
            keep.update(p.distribution.active)
    return tuple(s for s in p_star.distribution.support if s in keep) + tuple(
        sorted(keep - set(p_star.distribution.support)))


def support_recovery_experiment(mechanism, n_small, pool, lam, seed, k_tolerance=0.0):
    """Statistical vs algorithmic support after ``n_small`` draws of a mechanism."""
    if not any(p is mechanism for p in pool):
        raise ValueError("mechanism must be a member of the pool")
    P = mechanism.distribution
    data = sample(P, n_small, seed)
    stat = fit_empirical(data, P.support)
    chosen = select_program(data, pool, lam)
    alg = algorithmic_support(chosen, pool, k_tolerance)
    return {
        "seed": int(seed),
        "n": int(n_small),
        "statistical_support": stat.support_size,
        "algorithmic_support": len(alg),
        "true_support": P.support_size,
        "selected": chosen.name,
        "selected_is_mechanism": chosen is mechanism,
        "statistical_tv": tv_distance(P, stat),
    }
