"""Coding-theorem (CTM), block-decomposition (BDM) and perturbation (AID)
complexity estimates over an :class:`~collapselab.tm.OutputFrequencyTable`.

Values are in bits.  By default the algorithmic probability of an output is
its machine count over *all* machines in the space, so the estimates sum to
the halting fraction rather than to one; ``normalization="halting"``
conditions on halting instead.
"""

import math
from collections import Counter
from dataclasses import dataclass

__all__ = [
    "TableMissError",
    "ComplexityEstimate",
    "BdmConfig",
    "Perturbation",
    "ctm",
    "bdm",
    "blocks",
    "aid_delta",
    "rank_perturbations",
]

MISS_ERROR = "error"
MISS_MAX_PLUS_ONE = "max-plus-one"
DROP_REMAINDER = "drop-remainder"
SHORT_FINAL = "short-final-block"


class TableMissError(KeyError):
    """An object or block never appears in the census."""


@dataclass(frozen=True)
class ComplexityEstimate:
    value: float
    method: str  # "CTM" | "BDM"
    space_id: tuple
    block_size: int = None
    miss_policy_applied: bool = False

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class BdmConfig:
    block_size: int = 4
    boundary: str = SHORT_FINAL
    miss_policy: str = MISS_ERROR
    normalization: str = "machines"

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.boundary not in (DROP_REMAINDER, SHORT_FINAL):
            raise ValueError(f"unknown boundary policy {self.boundary!r}")
        if self.miss_policy not in (MISS_ERROR, MISS_MAX_PLUS_ONE):
            raise ValueError(f"unknown miss policy {self.miss_policy!r}")
        if self.normalization not in ("machines", "halting"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def _denominator(table, normalization):
    if normalization == "machines":
        return table.total_machines
    if normalization == "halting":
        return table.halted_machines
    raise ValueError(f"unknown normalization {normalization!r}")


def _ctm_bits(table, o, miss_policy, normalization):
    denom = _denominator(table, normalization)
    c = table.count(o)
    if c > 0:
        return -math.log2(c / denom), False
    if miss_policy == MISS_ERROR:
        raise TableMissError(f"{o!r} does not occur in table {table.space_id}")
    if miss_policy != MISS_MAX_PLUS_ONE:
        raise ValueError(f"unknown miss policy {miss_policy!r}")
    if not table.counts:
        raise TableMissError("table has no halting outputs")
    return -math.log2(min(table.counts.values()) / denom) + 1.0, True


def ctm(o, table, miss_policy=MISS_ERROR, normalization="machines"):
    """-log2 of the fraction of machines that halt with output ``o``.

    A miss raises :class:`TableMissError` or, under ``"max-plus-one"``,
    scores one bit above the largest CTM value in the table and is flagged.
    """
    value, missed = _ctm_bits(table, o, miss_policy, normalization)
    return ComplexityEstimate(value, "CTM", table.space_id, None, missed)


def blocks(o, k, boundary=SHORT_FINAL):
    """Consecutive non-overlapping length-k blocks of ``o``."""
    full = len(o) - len(o) % k
    out = [o[i:i + k] for i in range(0, full, k)]
    if full < len(o) and boundary == SHORT_FINAL:
        out.append(o[full:])
    return out


def bdm(o, cfg, table):
    """sum over distinct blocks b of CTM(b) + log2(multiplicity of b)."""
    k = cfg.block_size
    if k > table.max_length:
        raise ValueError(
            f"block size {k} exceeds the longest output ({table.max_length}) in the table")
    parts = blocks(o, k, cfg.boundary)
    if not parts:
        raise ValueError(f"object {o!r} has no complete block of size {k}")
    total, missed = 0.0, False
    # Sorted so the float sum does not depend on block order.
    for b, n in sorted(Counter(parts).items()):
        v, miss = _ctm_bits(table, b, cfg.miss_policy, cfg.normalization)
        total += v + math.log2(n)
        missed = missed or miss
    return ComplexityEstimate(total, "BDM", table.space_id, k, missed)


@dataclass(frozen=True)
class Perturbation:
    """Edit of a symbol string.

    kinds: ``flip`` (binary toggle at ``position``), ``substitute`` (write
    ``symbol`` at ``position``), ``delete`` (remove ``length`` symbols from
    ``position``) and ``insert`` (put ``symbol`` before ``position``).
    ``insert`` is the inverse of ``delete``.
    """

    kind: str
    position: int
    length: int = 1
    symbol: str = None

    def check(self, o):
        p = self.position
        if self.kind == "flip":
            if not 0 <= p < len(o):
                raise IndexError(f"flip position {p} outside object of length {len(o)}")
            if o[p] not in "01":
                raise ValueError(f"cannot flip non-binary symbol {o[p]!r}")
        elif self.kind == "substitute":
            if not 0 <= p < len(o):
                raise IndexError(f"substitute position {p} outside object")
            if self.symbol is None or len(self.symbol) != 1:
                raise ValueError("substitute needs a single symbol")
        elif self.kind == "delete":
            if self.length < 1 or not (0 <= p and p + self.length <= len(o)):
                raise IndexError(f"delete [{p}, {p + self.length}) outside object")
            if self.length == len(o):
                raise ValueError("delete would empty the object")
        elif self.kind == "insert":
            if not 0 <= p <= len(o):
                raise IndexError(f"insert position {p} outside object")
            if not self.symbol:
                raise ValueError("insert needs a symbol string")
        else:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")

    def apply(self, o):
        self.check(o)
        p = self.position
        if self.kind == "flip":
            return o[:p] + ("1" if o[p] == "0" else "0") + o[p + 1:]
        if self.kind == "substitute":
            return o[:p] + self.symbol + o[p + 1:]
        if self.kind == "delete":
            return o[:p] + o[p + self.length:]
        return o[:p] + self.symbol + o[p:]

    def inverse(self, o):
        """Perturbation undoing ``self`` on ``self.apply(o)``."""
        self.check(o)
        p = self.position
        if self.kind == "flip":
            return self
        if self.kind == "substitute":
            return Perturbation("substitute", p, symbol=o[p])
        if self.kind == "delete":
            return Perturbation("insert", p, symbol=o[p:p + self.length])
        return Perturbation("delete", p, length=len(self.symbol))

    @classmethod
    def parse(cls, spec):
        """``flip:3``, ``sub:2:1``, ``del:0:2`` or ``ins:4:01``."""
        kind, *args = spec.split(":")
        kind = {"sub": "substitute", "del": "delete", "ins": "insert"}.get(kind, kind)
        if kind == "flip":
            return cls("flip", int(args[0]))
        if kind == "substitute":
            return cls("substitute", int(args[0]), symbol=args[1])
        if kind == "delete":
            return cls("delete", int(args[0]), length=int(args[1]))
        if kind == "insert":
            return cls("insert", int(args[0]), symbol=args[1])
        raise ValueError(f"unknown perturbation spec {spec!r}")

    def __str__(self):
        if self.kind == "flip":
            return f"flip:{self.position}"
        if self.kind == "substitute":
            return f"sub:{self.position}:{self.symbol}"
        if self.kind == "delete":
            return f"del:{self.position}:{self.length}"
        return f"ins:{self.position}:{self.symbol}"


def aid_delta(o, tau, cfg, table):
    """BDM(tau(o)) - BDM(o); positive when the edit adds complexity."""
    return bdm(tau.apply(o), cfg, table).value - bdm(o, cfg, table).value


def rank_perturbations(o, taus, cfg, table):
    """``[(tau, delta), ...]`` by decreasing |delta|; ties keep input order."""
    scored = [(tau, aid_delta(o, tau, cfg, table)) for tau in taus]
    return sorted(scored, key=lambda td: -abs(td[1]))
