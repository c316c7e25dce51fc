"""Small Turing machine spaces and their halting-output census.

Formalism (``FORMALISM``):

* ``n`` working states numbered 1..n plus a HALT pseudo-state coded 0;
  execution starts in state 1.
* ``m`` tape symbols 0..m-1, blank is 0, the tape is unbounded both ways
  and the head starts at the origin.
* Every (state, read symbol) pair has an entry (write, move, next).  A
  halting entry still writes and moves before the machine stops.
* The output of a halted machine is the contiguous tape segment between
  the leftmost and rightmost cells the head has read, blanks included,
  written left to right as one character per symbol.

Machines are indexed by a mixed-radix number.  Entry ``e = (s - 1) * m + r``
is a digit in base ``B = 2 m (n + 1)`` with value
``(write * 2 + move) * (n + 1) + next`` (move 0 = L, 1 = R), and entry 0 is
the most significant digit, so index 0 is the lexicographically first
table and increasing indices enumerate tables in lexicographic order.
"""

import collections
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .rng import make_rng

__all__ = [
    "FORMALISM",
    "HALT",
    "LEFT",
    "RIGHT",
    "DEFAULT_EXHAUSTIVE_LIMIT",
    "SpaceTooLargeError",
    "TableIntegrityError",
    "TuringMachineSpec",
    "RunOutcome",
    "OutputFrequencyTable",
    "machine_count",
    "decode_machine",
    "encode_machine",
    "run_machine",
    "census_range",
    "build_frequency_table",
    "persist_table",
    "load_table",
    "table_checksum",
]

FORMALISM = "bbhalt-v1"
TABLE_VERSION = "ctm-table v1"
HALT = 0
LEFT, RIGHT = 0, 1
DEFAULT_EXHAUSTIVE_LIMIT = 10**8
_SYMBOL_CHARS = "0123456789abcdefghijklmnopqrstuvwxyz"


class SpaceTooLargeError(ValueError):
    pass


class TableIntegrityError(ValueError):
    """A persisted table is malformed, of another version, or fails its checksum."""


@dataclass(frozen=True)
class TuringMachineSpec:
    """Complete transition table.

    ``transitions[(state, symbol)] = (write, move, next)`` with states
    1..n_states, ``move`` in {LEFT, RIGHT} and ``next`` in 0..n_states where
    0 is HALT.
    """

    n_states: int
    n_symbols: int
    transitions: tuple  # ((write, move, next), ...) ordered by entry index

    def __post_init__(self):
        n, m = self.n_states, self.n_symbols
        if n < 1 or m < 2:
            raise ValueError(f"need n_states >= 1 and n_symbols >= 2, got ({n}, {m})")
        tr = tuple(tuple(int(v) for v in e) for e in self.transitions)
        if len(tr) != n * m:
            raise ValueError(f"expected {n * m} transition entries, got {len(tr)}")
        for w, mv, nxt in tr:
            if not (0 <= w < m and mv in (LEFT, RIGHT) and 0 <= nxt <= n):
                raise ValueError(f"transition ({w}, {mv}, {nxt}) out of range")
        object.__setattr__(self, "transitions", tr)

    @classmethod
    def from_dict(cls, n_states, n_symbols, table):
        """Build from ``{(state, symbol): (write, 'L'|'R', next|'H')}``."""
        entries = []
        for s in range(1, n_states + 1):
            for r in range(n_symbols):
                w, mv, nxt = table[(s, r)]
                mv = {"L": LEFT, "R": RIGHT}.get(mv, mv)
                nxt = HALT if nxt in ("H", "HALT") else nxt
                entries.append((w, mv, nxt))
        return cls(n_states, n_symbols, tuple(entries))

    def entry(self, state, symbol):
        return self.transitions[(state - 1) * self.n_symbols + symbol]


@dataclass(frozen=True)
class RunOutcome:
    status: str  # "halted" | "budget_exceeded"
    output: str  # "" unless halted
    steps_used: int

    @property
    def halted(self):
        return self.status == "halted"


def machine_count(n_states, n_symbols):
    """(2 m (n + 1)) ** (n m) machines in the (n, m) space."""
    if n_states < 1 or n_symbols < 2:
        raise ValueError("need n_states >= 1 and n_symbols >= 2")
    return (2 * n_symbols * (n_states + 1)) ** (n_states * n_symbols)


def _base(n_states, n_symbols):
    return 2 * n_symbols * (n_states + 1)


def decode_machine(index, n_states, n_symbols):
    total = machine_count(n_states, n_symbols)
    index = int(index)
    if not 0 <= index < total:
        raise IndexError(f"machine index {index} outside [0, {total})")
    B = _base(n_states, n_symbols)
    digits = []
    for _ in range(n_states * n_symbols):
        index, d = divmod(index, B)
        digits.append(d)
    digits.reverse()
    entries = []
    for d in digits:
        wm, nxt = divmod(d, n_states + 1)
        w, mv = divmod(wm, 2)
        entries.append((w, mv, nxt))
    return TuringMachineSpec(n_states, n_symbols, tuple(entries))


def encode_machine(M):
    B = _base(M.n_states, M.n_symbols)
    index = 0
    for w, mv, nxt in M.transitions:
        index = index * B + (w * 2 + mv) * (M.n_states + 1) + nxt
    return index


def run_machine(M, budget):
    """Run M on a blank tape for at most ``budget`` transitions."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    tape = collections.deque([0])
    origin = 0  # deque position of tape cell 0
    head = 0  # position in deque
    lo = hi = 0  # visited range, deque positions
    state = 1
    m = M.n_symbols
    for step in range(1, budget + 1):
        w, mv, nxt = M.transitions[(state - 1) * m + tape[head]]
        tape[head] = w
        if mv == RIGHT:
            head += 1
            if head == len(tape):
                tape.append(0)
        else:
            if head == 0:
                tape.appendleft(0)
                origin += 1
                lo += 1
                hi += 1
            else:
                head -= 1
        if nxt == HALT:
            out = "".join(_SYMBOL_CHARS[tape[i]] for i in range(lo, hi + 1))
            return RunOutcome("halted", out, step)
        state = nxt
        lo = min(lo, head)
        hi = max(hi, head)
    return RunOutcome("budget_exceeded", "", budget)


# -- census kernel ----------------------------------------------------------

# Outputs are packed as  code * 64 + length  where code is the base-m value
# of the output with the leftmost cell most significant.  Outputs too long to
# pack get status 2 and are re-run in Python.
_ST_LOOP, _ST_HALT, _ST_WIDE = 0, 1, 2


@numba.njit(nogil=True, cache=True)
def _census_kernel(lo, hi, n, m, budget, max_pack_len, status, keys):
    nm = n * m
    B = 2 * m * (n + 1)
    write = np.empty(nm, np.int64)
    move = np.empty(nm, np.int64)
    nxt = np.empty(nm, np.int64)
    width = 2 * budget + 3
    tape = np.zeros(width, np.int64)
    for j in range(hi - lo):
        idx = lo + j
        has_halt = False
        for e in range(nm - 1, -1, -1):
            d = idx % B
            idx //= B
            nxt[e] = d % (n + 1)
            wm = d // (n + 1)
            move[e] = wm % 2
            write[e] = wm // 2
            if nxt[e] == 0:
                has_halt = True
        if not has_halt:
            status[j] = _ST_LOOP
            keys[j] = 0
            continue
        head = budget + 1
        vlo = head
        vhi = head
        state = 1
        halted = False
        for _ in range(budget):
            e = (state - 1) * m + tape[head]
            tape[head] = write[e]
            if move[e] == 1:
                head += 1
            else:
                head -= 1
            if nxt[e] == 0:
                halted = True
                break
            state = nxt[e]
            if head < vlo:
                vlo = head
            if head > vhi:
                vhi = head
        if halted:
            length = vhi - vlo + 1
            if length > max_pack_len:
                status[j] = _ST_WIDE
                keys[j] = 0
            else:
                code = 0
                for c in range(vlo, vhi + 1):
                    code = code * m + tape[c]
                status[j] = _ST_HALT
                keys[j] = code * 64 + length
        else:
            status[j] = _ST_LOOP
            keys[j] = 0
        # reset the touched part of the tape
        a = min(vlo, head)
        b = max(vhi, head)
        for c in range(a, b + 1):
            tape[c] = 0


def _max_pack_len(m):
    bits = max(1, math.ceil(math.log2(m)))
    return min(63, 56 // bits)


def _unpack(key, m):
    length = key % 64
    code = key // 64
    chars = []
    for _ in range(length):
        code, d = divmod(code, m)
        chars.append(_SYMBOL_CHARS[d])
    return "".join(reversed(chars))


def _census_indices(indices, n, m, budget):
    """Census of an explicit index list (sampled mode) in pure Python."""
    counts = collections.Counter()
    halted = 0
    for i in indices:
        out = run_machine(decode_machine(int(i), n, m), budget)
        if out.halted:
            counts[out.output] += 1
            halted += 1
    return counts, halted


@numba.njit(nogil=True, cache=True)
def _census_list_kernel(indices, n, m, budget, max_pack_len, status, keys):
    for j in range(indices.shape[0]):
        _census_kernel(indices[j], indices[j] + 1, n, m, budget, max_pack_len,
                       status[j:j + 1], keys[j:j + 1])


def _tally(idx_source, status, keys, n, m, budget):
    counts = collections.Counter()
    hit = status == _ST_HALT
    uk, uc = np.unique(keys[hit], return_counts=True)
    for k, c in zip(uk.tolist(), uc.tolist()):
        counts[_unpack(k, m)] += c
    halted = int(hit.sum())
    for j in np.flatnonzero(status == _ST_WIDE):
        out = run_machine(decode_machine(int(idx_source(j)), n, m), budget)
        counts[out.output] += 1
        halted += 1
    return counts, halted


def _census_chunk(lo, hi, n, m, budget):
    size = hi - lo
    status = np.empty(size, np.int8)
    keys = np.empty(size, np.int64)
    _census_kernel(lo, hi, n, m, budget, _max_pack_len(m), status, keys)
    return _tally(lambda j: lo + j, status, keys, n, m, budget)


_CHUNK = 1 << 20


def census_range(n_states, n_symbols, budget, lo, hi, workers=1):
    """Output counts and halted total for machine indices in ``[lo, hi)``.

    The range is cut into ``workers`` contiguous partitions, each processed
    in its own thread; partial counts are merged by addition, so the result
    does not depend on ``workers``.
    """
    total = machine_count(n_states, n_symbols)
    if not 0 <= lo <= hi <= total:
        raise IndexError(f"range [{lo}, {hi}) outside [0, {total})")
    if total >= 2**62:
        raise SpaceTooLargeError("index space exceeds the 64-bit kernel")
    workers = max(1, int(workers))
    bounds = np.linspace(lo, hi, workers + 1).round().astype(np.int64).tolist()
    bounds[0], bounds[-1] = lo, hi

    def part(a, b):
        counts, halted = collections.Counter(), 0
        for s in range(a, b, _CHUNK):
            c, h = _census_chunk(s, min(b, s + _CHUNK), n_states, n_symbols, budget)
            counts.update(c)
            halted += h
        return counts, halted

    pieces = list(zip(bounds[:-1], bounds[1:]))
    if workers == 1:
        results = [part(a, b) for a, b in pieces]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda ab: part(*ab), pieces))
    counts, halted = collections.Counter(), 0
    for c, h in results:
        counts.update(c)
        halted += h
    return counts, halted


# -- frequency tables -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OutputFrequencyTable:
    """Halting-output census of a machine space.

    ``space_id`` is ``(n_states, n_symbols, budget, formalism)``; for
    sampled censuses the formalism string carries the sample size and seed.
    """

    space_id: tuple
    total_machines: int
    halted_machines: int
    counts: dict

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in dict(self.counts).items() if v}
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "space_id", tuple(self.space_id))
        if sum(counts.values()) != self.halted_machines:
            raise ValueError("counts do not sum to halted_machines")
        if self.halted_machines > self.total_machines:
            raise ValueError("more halted machines than machines")

    def __eq__(self, other):
        if not isinstance(other, OutputFrequencyTable):
            return NotImplemented
        return (self.space_id == other.space_id
                and self.total_machines == other.total_machines
                and self.halted_machines == other.halted_machines
                and self.counts == other.counts)

    @property
    def n_states(self):
        return self.space_id[0]

    @property
    def n_symbols(self):
        return self.space_id[1]

    @property
    def budget(self):
        return self.space_id[2]

    def count(self, output):
        return self.counts.get(output, 0)

    def ranked(self):
        """(output, count) pairs, descending count then lexicographic output."""
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))

    def outputs_of_length(self, length):
        return {o: c for o, c in self.counts.items() if len(o) == length}

    @property
    def max_length(self):
        return max((len(o) for o in self.counts), default=0)


def build_frequency_table(n_states, n_symbols, budget=1000, mode="exhaustive",
                          k=None, seed=None, workers=1,
                          limit=DEFAULT_EXHAUSTIVE_LIMIT):
    """Census of the (n_states, n_symbols) space at a step budget.

    ``mode="exhaustive"`` runs every machine and refuses spaces above
    ``limit``.  ``mode="sampled"`` runs ``k`` distinct indices drawn
    uniformly without replacement with ``seed``; the table then counts
    ``k`` machines in total.
    """
    total = machine_count(n_states, n_symbols)
    if mode == "exhaustive":
        if total > limit:
            raise SpaceTooLargeError(
                f"({n_states}, {n_symbols}) has {total} machines, above the "
                f"exhaustive limit {limit}; use mode='sampled'")
        counts, halted = census_range(n_states, n_symbols, budget, 0, total, workers)
        space_id = (n_states, n_symbols, budget, FORMALISM)
        return OutputFrequencyTable(space_id, total, halted, counts)
    if mode != "sampled":
        raise ValueError(f"unknown census mode {mode!r}")
    if k is None or seed is None:
        raise ValueError("sampled mode needs k and seed")
    k = int(k)
    if not 1 <= k <= total:
        raise ValueError(f"sample size {k} outside [1, {total}]")
    rng = make_rng(seed)
    idx = np.sort(rng.choice(total, size=k, replace=False)).astype(np.int64)
    status = np.empty(k, np.int8)
    keys = np.empty(k, np.int64)
    _census_list_kernel(idx, n_states, n_symbols, budget, _max_pack_len(n_symbols),
                        status, keys)
    counts, halted = _tally(lambda j: idx[j], status, keys, n_states, n_symbols, budget)
    if k == total:
        formalism = FORMALISM
    else:
        formalism = f"{FORMALISM}/sampled-{k}-{int(seed)}"
    return OutputFrequencyTable((n_states, n_symbols, budget, formalism), k, halted, counts)


def _table_body(table):
    n, m, budget, formalism = table.space_id
    lines = [TABLE_VERSION,
             f"{n},{m},{budget},{formalism},{table.total_machines},{table.halted_machines}"]
    lines += [f"{o},{c}" for o, c in table.ranked()]
    return "\n".join(lines) + "\n"


def table_checksum(table):
    return hashlib.sha256(_table_body(table).encode()).hexdigest()


def persist_table(table, path):
    """Write the table; the last line is ``sha256:<hex>`` of everything above it."""
    body = _table_body(table)
    digest = hashlib.sha256(body.encode()).hexdigest()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(body)
        fh.write(f"sha256:{digest}\n")
    return path


def load_table(path):
    with open(path, "r", encoding="ascii", newline="") as fh:
        text = fh.read()
    if not text.endswith("\n"):
        raise TableIntegrityError(f"{path}: truncated file")
    lines = text[:-1].split("\n")
    if len(lines) < 3:
        raise TableIntegrityError(f"{path}: too few lines")
    if lines[0] != TABLE_VERSION:
        raise TableIntegrityError(f"{path}: unsupported version {lines[0]!r}")
    check = lines[-1]
    if not check.startswith("sha256:"):
        raise TableIntegrityError(f"{path}: missing checksum line")
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != check[len("sha256:"):]:
        raise TableIntegrityError(f"{path}: checksum mismatch")
    try:
        n, m, budget, formalism, total, halted = lines[1].split(",")
        space_id = (int(n), int(m), int(budget), formalism)
        counts = {}
        for row in lines[2:-1]:
            out, c = row.split(",")
            if out in counts:
                raise TableIntegrityError(f"{path}: duplicate row {out!r}")
            counts[out] = int(c)
        table = OutputFrequencyTable(space_id, int(total), int(halted), counts)
    except TableIntegrityError:
        raise
    except ValueError as exc:
        raise TableIntegrityError(f"{path}: malformed table ({exc})") from exc
    return table
