"""Finite discrete distributions and the information quantities on them.

All logarithms are base 2; every information quantity is in bits.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

__all__ = [
    "SIMPLEX_TOL",
    "RENORM_TOL",
    "DistributionError",
    "SupportMismatchError",
    "Categorical",
    "SampleSet",
    "FeatureMap",
    "JointTable",
    "entropy",
    "kl_divergence",
    "smoothed_kl",
    "tv_distance",
    "mix",
    "sample",
    "fit_empirical",
    "mean_embed",
    "mutual_information",
    "uniform",
    "point_mass",
]

SIMPLEX_TOL = 1e-12
RENORM_TOL = 1e-9


class DistributionError(ValueError):
    """A probability vector or table violates the simplex invariants."""


class SupportMismatchError(ValueError):
    """Two distributions were combined over different supports."""


def _as_simplex(values, what="probs"):
    p = np.array(values, dtype=float)
    if not np.all(np.isfinite(p)):
        raise DistributionError(f"{what} contain non-finite values")
    if np.any(p < 0):
        raise DistributionError(f"{what} contain negative entries")
    total = p.sum()
    drift = abs(total - 1.0)
    if drift > RENORM_TOL:
        raise DistributionError(f"{what} sum to {total!r}, not 1")
    # valid vectors pass through untouched so re-wrapping is bit-exact
    if drift > SIMPLEX_TOL:
        p = p / total
    if abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise DistributionError(f"{what} do not sum to 1 within {SIMPLEX_TOL}")
    p.setflags(write=False)
    return p


@dataclass(frozen=True, eq=False)
class Categorical:
    """A probability vector over an ordered tuple of unique labels.

    ``probs`` is renormalised when its sum drifts from 1 by at most 1e-9;
    larger drift is treated as a logic error and raises.
    """

    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        support = tuple(self.support)
        if len(support) == 0:
            raise DistributionError("support is empty")
        if len(set(support)) != len(support):
            raise DistributionError("support labels are not unique")
        p = _as_simplex(self.probs)
        if p.shape != (len(support),):
            raise DistributionError(
                f"probs has shape {p.shape}, expected ({len(support)},)")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return len(self.support)

    def __eq__(self, other):
        if not isinstance(other, Categorical):
            return NotImplemented
        return self.support == other.support and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.support, self.probs.tobytes()))

    def __repr__(self):
        body = ", ".join(f"{s!r}: {p:.6g}" for s, p in zip(self.support, self.probs))
        return f"Categorical({{{body}}})"

    def __getitem__(self, label):
        return float(self.probs[self.index(label)])

    def index(self, label):
        try:
            return self._index_map[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in support") from None

    @property
    def _index_map(self):
        cached = self.__dict__.get("_imap")
        if cached is None:
            cached = {s: i for i, s in enumerate(self.support)}
            object.__setattr__(self, "_imap", cached)
        return cached

    def with_probs(self, probs):
        """Same support, new probability vector."""
        return Categorical(self.support, probs)

    @property
    def support_size(self):
        """Number of labels carrying strictly positive mass."""
        return int(np.count_nonzero(self.probs))

    @property
    def active(self):
        return tuple(s for s, p in zip(self.support, self.probs) if p > 0)

    def is_point_mass(self):
        return self.support_size == 1

    def to_dict(self):
        return {"labels": list(self.support), "probs": [float(p) for p in self.probs]}

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"labels", "probs"}
        if extra:
            raise DistributionError(f"unknown keys in categorical: {sorted(extra)}")
        return cls(tuple(d["labels"]), d["probs"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def uniform(support):
    support = tuple(support)
    return Categorical(support, np.full(len(support), 1.0 / len(support)))


def point_mass(support, label):
    support = tuple(support)
    p = np.zeros(len(support))
    p[support.index(label)] = 1.0
    return Categorical(support, p)


@dataclass(frozen=True)
class SampleSet:
    """``n`` i.i.d. draws (labels) and the seed that produced them."""

    draws: tuple
    source_seed: int
    n: int = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "draws", tuple(self.draws))
        if self.n is None:
            object.__setattr__(self, "n", len(self.draws))
        if self.n != len(self.draws):
            raise ValueError(f"n={self.n} but {len(self.draws)} draws")

    def to_dict(self):
        return {"draws": list(self.draws), "source_seed": self.source_seed, "n": self.n}

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"draws", "source_seed", "n"}
        if extra:
            raise ValueError(f"unknown keys in sample set: {sorted(extra)}")
        return cls(tuple(d["draws"]), d.get("source_seed"), d.get("n"))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Label -> vector in R^d, every vector of the same dimension."""

    embedding: dict

    def __post_init__(self):
        emb = {}
        dims = set()
        for k, v in dict(self.embedding).items():
            vec = np.atleast_1d(np.array(v, dtype=float))
            if vec.ndim != 1:
                raise ValueError(f"embedding of {k!r} is not a vector")
            vec.setflags(write=False)
            dims.add(vec.shape[0])
            emb[k] = vec
        if len(dims) != 1 or min(dims) < 1:
            raise ValueError(f"embedding dimensions disagree: {sorted(dims)}")
        object.__setattr__(self, "embedding", emb)

    @property
    def dim(self):
        return next(iter(self.embedding.values())).shape[0]

    @classmethod
    def identity(cls, labels):
        """Embed numeric labels as themselves (d = 1)."""
        return cls({x: [float(x)] for x in labels})


@dataclass(frozen=True, eq=False)
class JointTable:
    """Joint distribution p(u, v) over ``row_labels x col_labels``."""

    row_labels: tuple
    col_labels: tuple
    joint_probs: np.ndarray

    def __post_init__(self):
        rows, cols = tuple(self.row_labels), tuple(self.col_labels)
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise DistributionError("joint table labels are not unique")
        J = np.array(self.joint_probs, dtype=float)
        if J.shape != (len(rows), len(cols)):
            raise DistributionError(
                f"joint_probs has shape {J.shape}, expected ({len(rows)}, {len(cols)})")
        J = _as_simplex(J, "joint_probs")
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "col_labels", cols)
        object.__setattr__(self, "joint_probs", J)

    def row_marginal(self):
        return Categorical(self.row_labels, self.joint_probs.sum(axis=1))

    def col_marginal(self):
        return Categorical(self.col_labels, self.joint_probs.sum(axis=0))

    def to_dict(self):
        return {
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "joint_probs": self.joint_probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"row_labels", "col_labels", "joint_probs"}
        if extra:
            raise DistributionError(f"unknown keys in joint table: {sorted(extra)}")
        return cls(tuple(d["row_labels"]), tuple(d["col_labels"]), d["joint_probs"])


def _check_shared(P, Q):
    if P.support != Q.support:
        raise SupportMismatchError("distributions have different supports")


def _plogp(p):
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def entropy(P):
    """Shannon entropy in bits, with 0 log 0 = 0."""
    h = -float(np.sum(_plogp(P.probs)))
    return h if h > 0 else 0.0


def kl_divergence(P, Q):
    """KL(P || Q) in bits; ``math.inf`` when P is not absolutely continuous wrt Q."""
    _check_shared(P, Q)
    p, q = P.probs, Q.probs
    nz = p > 0
    if np.any(q[nz] == 0):
        return math.inf
    d = float(np.sum(p[nz] * np.log2(p[nz] / q[nz])))
    return d if d > 0 else 0.0


def smoothed_kl(P, Q, pseudocount):
    """KL(P || Q') with Q' = (Q + c) / (1 + |X| c), always finite for c > 0."""
    _check_shared(P, Q)
    q = (Q.probs + pseudocount) / (1.0 + len(Q) * pseudocount)
    return kl_divergence(P, Q.with_probs(q))


def tv_distance(P, Q):
    _check_shared(P, Q)
    return 0.5 * float(np.sum(np.abs(P.probs - Q.probs)))


def mix(alpha, P, Q):
    """alpha * P + (1 - alpha) * Q."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha!r} outside [0, 1]")
    _check_shared(P, Q)
    if alpha == 1.0:
        return P
    if alpha == 0.0:
        return Q
    return P.with_probs(alpha * P.probs + (1.0 - alpha) * Q.probs)


def _cdf(probs):
    cdf = np.cumsum(probs)
    last = int(np.flatnonzero(probs)[-1])
    cdf[last:] = 1.0
    return cdf


def sample_indices(P, n, seed):
    """Inverse-CDF draws of support indices; the engine behind :func:`sample`."""
    if int(n) != n or n < 1:
        raise ValueError(f"sample size must be a positive integer, got {n!r}")
    u = make_rng(seed).random(int(n))
    return np.searchsorted(_cdf(P.probs), u, side="right")


def sample(P, n, seed):
    """``n`` i.i.d. draws from P.

    Each draw inverts the CDF at a PCG64 uniform, so labels with zero mass are
    never produced and identical ``(P, n, seed)`` give identical draws.
    """
    idx = sample_indices(P, n, seed)
    return SampleSet(tuple(P.support[i] for i in idx), int(seed), int(n))


def counts_to_categorical(support, counts):
    counts = np.asarray(counts, dtype=float)
    return Categorical(support, counts / counts.sum())


def fit_empirical(samples, support):
    """Maximum-likelihood categorical: count(x) / n, zero for unseen labels."""
    support = tuple(support)
    pos = {s: i for i, s in enumerate(support)}
    counts = np.zeros(len(support))
    for d in samples.draws:
        try:
            counts[pos[d]] += 1
        except KeyError:
            raise DistributionError(f"draw {d!r} is outside the support") from None
    if samples.n == 0:
        raise ValueError("cannot fit an empty sample")
    return counts_to_categorical(support, counts)


def mean_embed(P, phi):
    """First moment sum_x P(x) phi(x)."""
    missing = [s for s in P.support if s not in phi.embedding]
    if missing:
        raise KeyError(f"feature map has no embedding for {missing!r}")
    vecs = np.stack([phi.embedding[s] for s in P.support])
    return P.probs @ vecs


def mutual_information(J):
    """I(U; V) in bits for a joint table."""
    pj = J.joint_probs
    pu = pj.sum(axis=1, keepdims=True)
    pv = pj.sum(axis=0, keepdims=True)
    nz = pj > 0
    outer = (pu * pv)[nz]
    mi = float(np.sum(pj[nz] * np.log2(pj[nz] / outer)))
    return mi if mi > 0 else 0.0
