import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from collapselab.complexity import (
    BdmConfig,
    Perturbation,
    TableMissError,
    aid_delta,
    bdm,
    blocks,
    ctm,
    rank_perturbations,
)
from collapselab.tm import OutputFrequencyTable

LENIENT = BdmConfig(4, miss_policy="max-plus-one")


def reference_bdm(o, k, counts, total):
    """Oracle: explicit block list, dict multiplicities, no miss handling."""
    mult = {}
    for i in range(0, len(o), k):
        mult[o[i:i + k]] = mult.get(o[i:i + k], 0) + 1
    return sum(-math.log2(counts[b] / total) + math.log2(n) for b, n in mult.items())


def test_ctm_values(table22):
    assert ctm("0", table22).value == pytest.approx(-math.log2(3456 / 20736), abs=1e-15)
    assert ctm("0", table22).value < ctm("010", table22).value
    ranked = table22.ranked()
    assert ctm(ranked[0][0], table22).value == min(ctm(o, table22).value for o, _ in ranked)


def test_ctm_monotone(table22):
    items = table22.ranked()
    for (o1, c1), (o2, c2) in itertools.combinations(items, 2):
        v1, v2 = ctm(o1, table22).value, ctm(o2, table22).value
        assert (c1 > c2) == (v1 < v2)


def test_ctm_boundary_zero_bits():
    t = OutputFrequencyTable((1, 2, 1, "x"), 5, 5, {"1": 5})
    assert ctm("1", t).value == 0.0


def test_ctm_miss(table22):
    with pytest.raises(TableMissError):
        ctm("0000", table22)
    est = ctm("0000", table22, miss_policy="max-plus-one")
    worst = max(ctm(o, table22).value for o in table22.counts)
    assert est.miss_policy_applied and est.value == worst + 1.0
    assert not ctm("0", table22, miss_policy="max-plus-one").miss_policy_applied


def test_blocks():
    assert blocks("0101101", 2) == ["01", "01", "10", "1"]
    assert blocks("0101101", 2, "drop-remainder") == ["01", "01", "10"]


def test_bdm_examples(table22):
    cfg2 = BdmConfig(2)
    c01, c10 = ctm("01", table22).value, ctm("10", table22).value
    assert bdm("01", cfg2, table22).value == c01
    assert bdm("0101", cfg2, table22).value == c01 + 1.0
    assert bdm("0110", cfg2, table22).value == pytest.approx(c01 + c10, abs=1e-15)
    assert bdm("1001", BdmConfig(4), table22).value == ctm("1001", table22).value


def test_bdm_repetition_law(table32):
    cfg = BdmConfig(4)
    for b in ("0101", "0000", "1101"):
        for r in (1, 2, 4, 8):
            assert bdm(b * r, cfg, table32).value == ctm(b, table32).value + math.log2(r)


def test_bdm_block_too_long(table22):
    with pytest.raises(ValueError):
        bdm("00000000", BdmConfig(5), table22)


def test_bdm_miss_error(table22):
    with pytest.raises(TableMissError):
        bdm("00000000", BdmConfig(4), table22)


@given(st.text("01", min_size=4, max_size=32).filter(lambda s: len(s) % 4 == 0))
def test_bdm_matches_reference(table32, o):
    want = reference_bdm(o, 4, table32.counts, table32.total_machines)
    assert bdm(o, BdmConfig(4), table32).value == pytest.approx(want, abs=1e-9)


def test_short_final_block(table32):
    o = "0101010111"
    got = bdm(o, BdmConfig(4), table32).value
    want = ctm("0101", table32).value + 1.0 + ctm("11", table32).value
    assert got == pytest.approx(want, abs=1e-12)
    dropped = bdm(o, BdmConfig(4, "drop-remainder"), table32).value
    assert dropped == ctm("0101", table32).value + 1.0


# -- perturbations ----------------------------------------------------------

def test_perturbation_apply_and_parse():
    o = "00110"
    assert Perturbation.parse("flip:0").apply(o) == "10110"
    assert Perturbation.parse("sub:4:1").apply(o) == "00111"
    assert Perturbation.parse("del:1:2").apply(o) == "010"
    assert Perturbation.parse("ins:5:01").apply(o) == "0011001"
    for spec in ("flip:3", "sub:2:1", "del:0:2", "ins:4:01"):
        assert str(Perturbation.parse(spec)) == spec
    with pytest.raises(IndexError):
        Perturbation("flip", 5).apply(o)
    with pytest.raises(IndexError):
        Perturbation("delete", 4, length=2).apply(o)
    with pytest.raises(ValueError):
        Perturbation.parse("swap:1")


@given(st.text("01", min_size=2, max_size=12), st.data())
def test_inverse_round_trip(o, data):
    kind = data.draw(st.sampled_from(["flip", "substitute", "delete", "insert"]))
    if kind == "delete":
        p = data.draw(st.integers(0, len(o) - 2))
        tau = Perturbation("delete", p, length=data.draw(st.integers(1, len(o) - 1 - p)))
    elif kind == "insert":
        tau = Perturbation("insert", data.draw(st.integers(0, len(o))),
                           symbol=data.draw(st.text("01", min_size=1, max_size=3)))
    else:
        tau = Perturbation(kind, data.draw(st.integers(0, len(o) - 1)),
                           symbol=data.draw(st.sampled_from("01")))
    assert tau.inverse(o).apply(tau.apply(o)) == o


def test_identity_substitution_zero(table32):
    o = "0110100110010110"
    for i in range(len(o)):
        assert aid_delta(o, Perturbation("substitute", i, symbol=o[i]), BdmConfig(4), table32) == 0.0


def test_flip_of_constant_string_positive(table22, table32):
    o = "00000000"
    assert aid_delta(o, Perturbation("flip", 3), BdmConfig(4), table32) > 0
    assert aid_delta(o, Perturbation("flip", 3), LENIENT, table22) > 0


def test_rank_examples(table32):
    cfg = BdmConfig(4)
    tau = Perturbation("flip", 0)
    assert rank_perturbations("01010101", [tau], cfg, table32) == [
        (tau, aid_delta("01010101", tau, cfg, table32))]
    # two flips with the same block change tie; input order is kept
    a, b = Perturbation("flip", 1), Perturbation("flip", 5)
    ranked = rank_perturbations("00000000", [b, a], cfg, table32)
    assert ranked[0][1] == ranked[1][1] and [t for t, _ in ranked] == [b, a]


def test_period_breaking_flip_ranks_first(table32):
    o = "0101010101010101"
    keep = Perturbation("delete", 0, length=2)  # drops one period
    brk = Perturbation("flip", 0)
    ranked = rank_perturbations(o, [keep, brk], BdmConfig(4), table32)
    assert ranked[0][0] == brk and abs(ranked[0][1]) > abs(ranked[1][1])
