import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rldarts.searchspace import (
    BUILTIN_OPSETS,
    CellTopology,
    DiscreteCell,
    OpKind,
    OpSet,
    SearchSpaceError,
    builtin_opset,
    enumerate_cells,
    sample_random_cell,
    search_space_size,
)


def _opset(n_nonzero: int) -> OpSet:
    pool = [OpKind.Conv3x3, OpKind.ReLU, OpKind.Tanh, OpKind.MaxPool3x3, OpKind.AvgPool3x3]
    return OpSet(f"toy{n_nonzero}", (OpKind.Zero, OpKind.Skip) + tuple(pool[: n_nonzero - 1]))


def brute_force_count(o_nz: int, I: int, K: int) -> int:
    """Count cells by listing every (predecessor subset, op tuple) per node."""
    per_node = []
    for j in range(1, I + 1):
        k = min(K, j)
        per_node.append(sum(1 for _ in itertools.combinations(range(j), k)) * o_nz ** k)
    return math.prod(per_node)


# ------------------------------------------------------------- op sets

def test_builtin_opsets():
    micro = builtin_opset("micro")
    assert len(micro) == 5 and len(micro.nonzero) == 4
    assert [o.name for o in micro.nonzero] == ["Skip", "Conv3x3", "ReLU", "Tanh"]
    normal = builtin_opset("classic_normal")
    assert len(normal) == 6 and len(normal.nonzero) == 5
    assert {o.name for o in normal.ops} >= {"Conv3x3ReLU", "Conv5x5ReLU", "DilConv3x3ReLU", "DilConv5x5ReLU"}
    red = builtin_opset("classic_reduction")
    assert len(red) == 5 and len(red.nonzero) == 4 and red.stride == 2
    assert {o.name for o in red.ops} >= {"Conv3x3", "MaxPool3x3", "AvgPool3x3"}


def test_norelu_variant_swaps_relu_convs():
    relu, norelu = builtin_opset("classic_normal"), builtin_opset("classic_normal_norelu")
    assert len(relu) == len(norelu)
    for a, b in zip(relu.ops, norelu.ops):
        if a.activation == "relu":
            assert b.family == "conv" and b.activation is None
            assert (a.kernel, a.dilation) == (b.kernel, b.dilation)
        else:
            assert a is b
    assert all(o.is_linear for o in norelu.ops)


@pytest.mark.parametrize("name", BUILTIN_OPSETS)
def test_every_opset_has_zero_and_skip_once(name):
    ops = builtin_opset(name).ops
    assert ops.count(OpKind.Zero) == 1 and ops.count(OpKind.Skip) == 1
    assert len(set(ops)) == len(ops)


def test_unknown_opset_rejected():
    with pytest.raises(SearchSpaceError):
        builtin_opset("transformer")


def test_opset_containment_checks():
    with pytest.raises(SearchSpaceError):
        OpSet("noskip", (OpKind.Zero, OpKind.Conv3x3))
    with pytest.raises(SearchSpaceError):
        OpSet("nozero", (OpKind.Skip, OpKind.Conv3x3))
    with pytest.raises(SearchSpaceError):
        OpSet("dup", (OpKind.Zero, OpKind.Skip, OpKind.ReLU, OpKind.ReLU))


def test_op_weights_flag():
    assert OpKind.Conv3x3.has_weights and OpKind.DilConv5x5ReLU.has_weights
    assert not any(o.has_weights for o in (OpKind.Zero, OpKind.Skip, OpKind.ReLU, OpKind.MaxPool3x3))


# ----------------------------------------------------------- topology

def test_topology_edges():
    for I in range(1, 6):
        topo = CellTopology(I, 2)
        assert len(topo.edges) == I * (I + 1) // 2
        for i, j in topo.edges:
            assert 0 <= i < j <= I


# -------------------------------------------------------- size formula

def test_size_micro_space():
    assert search_space_size(4, 4, 2) == 294_912
    assert 2.5e5 < 294_912 < 3.5e5


def test_size_classic_pair():
    normal = search_space_size(5, 4, 2)
    reduction = search_space_size(4, 4, 2)
    assert normal == 1_406_250
    assert reduction == 294_912
    assert normal * reduction == 414_720_000_000
    assert 3.5e11 < normal * reduction < 4.5e11


def test_size_trivial():
    for K in (1, 2):
        assert search_space_size(1, 1, K) == 1


def test_size_k1_is_factorial_like():
    # with K = 1, node i picks one of i predecessors and one op
    for o in (1, 2, 3):
        for I in (1, 2, 3, 4):
            assert search_space_size(o, I, 1) == o ** I * math.factorial(I)


@pytest.mark.parametrize("args", [(0, 2, 1), (2, 0, 1), (2, 2, 0), (2, 2, 3)])
def test_size_preconditions(args):
    with pytest.raises(SearchSpaceError):
        search_space_size(*args)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 2))
def test_size_formula_matches_brute_count(o, I, K):
    assert search_space_size(o, I, K) == brute_force_count(o, I, K)


# ---------------------------------------------------------- enumeration

def test_enumerate_examples():
    assert len(enumerate_cells(_opset(2), CellTopology(2, 1))) == 8
    assert len(enumerate_cells(_opset(2), CellTopology(3, 2))) == 96
    assert len(enumerate_cells(_opset(1), CellTopology(1, 1))) == 1


@pytest.mark.parametrize("o,I,K", [(o, I, K) for o in (1, 2, 3) for I in (1, 2, 3, 4) for K in (1, 2)])
def test_enumeration_matches_formula(o, I, K):
    size = search_space_size(o, I, K)
    if size > 10**6:
        pytest.skip("space above enumeration limit")
    cells = enumerate_cells(_opset(o), CellTopology(I, K))
    assert len(cells) == size
    assert len(set(cells)) == size


def test_enumeration_refuses_large_space():
    with pytest.raises(SearchSpaceError, match="1406250"):
        enumerate_cells(builtin_opset("classic_normal"), CellTopology(4, 2))


def test_enumerated_cells_satisfy_invariants():
    topo = CellTopology(3, 2)
    for cell in enumerate_cells(_opset(3), topo):
        cell.check_topology(topo, _opset(3))
        assert all(op is not OpKind.Zero for _, _, op in cell.edges())


# ------------------------------------------------------------- sampling

def test_sampling_is_reproducible():
    opset, topo = builtin_opset("micro"), CellTopology(4, 2)
    a = sample_random_cell(np.random.default_rng(5), opset, topo)
    b = sample_random_cell(np.random.default_rng(5), opset, topo)
    assert a == b


def test_sampling_is_uniform():
    opset, topo = _opset(2), CellTopology(2, 1)
    rng = np.random.default_rng(99)
    counts = Counter(sample_random_cell(rng, opset, topo) for _ in range(10_000))
    assert len(counts) == 8
    # binomial(10000, 1/8): sd 33, the band is 4.5 sd wide
    for c in counts.values():
        assert abs(c - 1250) <= 150


@pytest.mark.parametrize("o,I,K", [(2, 3, 2), (3, 3, 1), (2, 4, 2), (1, 4, 2)])
def test_samples_are_members_of_enumeration(o, I, K):
    opset, topo = _opset(o), CellTopology(I, K)
    space = set(enumerate_cells(opset, topo))
    rng = np.random.default_rng(o * 100 + I * 10 + K)
    for _ in range(300):
        cell = sample_random_cell(rng, opset, topo)
        cell.check_topology(topo, opset)
        assert cell in space


# ---------------------------------------------------------- DiscreteCell

def test_discrete_cell_rejects_zero_and_bad_edges():
    with pytest.raises(SearchSpaceError):
        DiscreteCell.build([[(0, "Zero")]])
    with pytest.raises(SearchSpaceError):
        DiscreteCell.build([[(0, "Skip")], [(2, "Skip")]])
    with pytest.raises(SearchSpaceError):
        DiscreteCell.build([[(0, "Skip")], [(0, "Skip"), (0, "ReLU")]])
    with pytest.raises(SearchSpaceError):
        DiscreteCell.build([[(0, "Skip")]], merge="average")


def test_check_topology_counts_in_degree():
    cell = DiscreteCell.build([[(0, "Skip")], [(1, "ReLU")]])
    cell.check_topology(CellTopology(2, 1))
    with pytest.raises(SearchSpaceError):
        cell.check_topology(CellTopology(2, 2))
    with pytest.raises(SearchSpaceError):
        cell.check_topology(CellTopology(3, 1))
    with pytest.raises(SearchSpaceError):
        DiscreteCell.build([[(0, "Conv5x5ReLU")]]).check_topology(CellTopology(1, 1), builtin_opset("micro"))
