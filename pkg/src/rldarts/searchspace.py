"""Operation vocabularies, cell topologies and cell counting.

A cell has node 0 (the cell input) and intermediate nodes ``1..I``; node
``j`` may draw from any of ``0..j-1``. After discretization node ``j``
keeps ``min(K, j)`` incoming edges, each labelled with a non-Zero op.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

MERGE_MODES = ("concat_conv1x1", "last_node")


class SearchSpaceError(ValueError):
    pass


class OpKind(enum.Enum):
    # value: (family, kernel, dilation, activation)
    Zero = ("zero", 0, 1, None)
    Skip = ("skip", 0, 1, None)
    Conv3x3ReLU = ("conv", 3, 1, "relu")
    Conv5x5ReLU = ("conv", 5, 1, "relu")
    DilConv3x3ReLU = ("conv", 3, 2, "relu")
    DilConv5x5ReLU = ("conv", 5, 2, "relu")
    Conv3x3 = ("conv", 3, 1, None)
    Conv5x5 = ("conv", 5, 1, None)
    DilConv3x3 = ("conv", 3, 2, None)
    DilConv5x5 = ("conv", 5, 2, None)
    MaxPool3x3 = ("maxpool", 3, 1, None)
    AvgPool3x3 = ("avgpool", 3, 1, None)
    ReLU = ("act", 0, 1, "relu")
    Tanh = ("act", 0, 1, "tanh")

    @property
    def family(self) -> str:
        return self.value[0]

    @property
    def kernel(self) -> int:
        return self.value[1]

    @property
    def dilation(self) -> int:
        return self.value[2]

    @property
    def activation(self) -> str | None:
        return self.value[3]

    @property
    def has_weights(self) -> bool:
        return self.family == "conv"

    @property
    def is_linear(self) -> bool:
        return self.family in ("zero", "skip", "avgpool") or (self.family == "conv" and self.activation is None)

    @classmethod
    def parse(cls, name: str) -> "OpKind":
        try:
            return cls[name]
        except KeyError:
            raise SearchSpaceError(f"unknown op {name!r}") from None


@dataclass(frozen=True)
class OpSet:
    name: str
    ops: tuple[OpKind, ...]
    stride: int = 1

    def __post_init__(self):
        if len(set(self.ops)) != len(self.ops):
            raise SearchSpaceError(f"opset {self.name!r} has duplicate ops")
        if self.ops.count(OpKind.Zero) != 1 or self.ops.count(OpKind.Skip) != 1:
            raise SearchSpaceError(f"opset {self.name!r} must contain Zero and Skip exactly once")
        if self.stride not in (1, 2):
            raise SearchSpaceError(f"opset stride must be 1 or 2, got {self.stride}")

    def __len__(self) -> int:
        return len(self.ops)

    def index(self, op: OpKind) -> int:
        return self.ops.index(op)

    @property
    def nonzero(self) -> tuple[OpKind, ...]:
        return tuple(o for o in self.ops if o is not OpKind.Zero)

    @property
    def zero_index(self) -> int:
        return self.ops.index(OpKind.Zero)


_BUILTIN = {
    "classic_normal": (("Zero", "Skip", "Conv3x3ReLU", "Conv5x5ReLU", "DilConv3x3ReLU", "DilConv5x5ReLU"), 1),
    "classic_normal_norelu": (("Zero", "Skip", "Conv3x3", "Conv5x5", "DilConv3x3", "DilConv5x5"), 1),
    "classic_reduction": (("Zero", "Skip", "Conv3x3", "MaxPool3x3", "AvgPool3x3"), 2),
    "micro": (("Zero", "Skip", "Conv3x3", "ReLU", "Tanh"), 1),
}

BUILTIN_OPSETS = tuple(_BUILTIN)


def builtin_opset(name: str) -> OpSet:
    try:
        ops, stride = _BUILTIN[name]
    except KeyError:
        raise SearchSpaceError(f"unknown opset {name!r}; choose from {sorted(_BUILTIN)}") from None
    return OpSet(name, tuple(OpKind[o] for o in ops), stride)


@dataclass(frozen=True)
class CellTopology:
    I: int
    K: int = 2

    def __post_init__(self):
        if self.I < 1 or self.K < 1:
            raise SearchSpaceError(f"need I >= 1 and K >= 1, got I={self.I} K={self.K}")

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for j in range(1, self.I + 1) for i in range(j))

    def in_degree(self, j: int) -> int:
        return min(self.K, j)


@dataclass(frozen=True)
class DiscreteCell:
    """Sparse cell: per intermediate node, the retained (predecessor, op) pairs."""

    nodes: tuple[tuple[tuple[int, OpKind], ...], ...]
    merge: str = "concat_conv1x1"

    def __post_init__(self):
        if self.merge not in MERGE_MODES:
            raise SearchSpaceError(f"unknown merge mode {self.merge!r}")
        if not self.nodes:
            raise SearchSpaceError("cell has no intermediate nodes")
        for j, edges in enumerate(self.nodes, start=1):
            if not edges:
                raise SearchSpaceError(f"node {j} has no incoming edges")
            preds = [i for i, _ in edges]
            if len(set(preds)) != len(preds):
                raise SearchSpaceError(f"node {j} has duplicate edges from one predecessor")
            if list(preds) != sorted(preds):
                raise SearchSpaceError(f"node {j} edges must be sorted by predecessor")
            for i, op in edges:
                if not 0 <= i < j:
                    raise SearchSpaceError(f"edge ({i},{j}) does not point backwards")
                if op is OpKind.Zero:
                    raise SearchSpaceError(f"edge ({i},{j}) carries a Zero op")

    @classmethod
    def _trusted(cls, nodes, merge: str) -> "DiscreteCell":
        # enumeration builds valid cells by construction; skip per-cell checks
        cell = object.__new__(cls)
        object.__setattr__(cell, "nodes", nodes)
        object.__setattr__(cell, "merge", merge)
        return cell

    @classmethod
    def build(cls, nodes: Sequence[Sequence[tuple[int, OpKind | str]]], merge: str = "concat_conv1x1"):
        norm = []
        for edges in nodes:
            pairs = [(int(i), op if isinstance(op, OpKind) else OpKind.parse(op)) for i, op in edges]
            norm.append(tuple(sorted(pairs, key=lambda e: e[0])))
        return cls(tuple(norm), merge)

    @property
    def I(self) -> int:
        return len(self.nodes)

    def edges(self) -> Iterator[tuple[int, int, OpKind]]:
        for j, es in enumerate(self.nodes, start=1):
            for i, op in es:
                yield i, j, op

    def check_topology(self, topo: CellTopology, opset: OpSet | None = None) -> None:
        if self.I != topo.I:
            raise SearchSpaceError(f"cell has {self.I} nodes, topology expects {topo.I}")
        for j, es in enumerate(self.nodes, start=1):
            if len(es) != topo.in_degree(j):
                raise SearchSpaceError(f"node {j} has {len(es)} edges, expected {topo.in_degree(j)}")
        if opset is not None:
            for _, _, op in self.edges():
                if op not in opset.ops:
                    raise SearchSpaceError(f"op {op.name} not in opset {opset.name}")

    def __str__(self) -> str:
        parts = [f"{j}<-" + "+".join(f"{op.name}({i})" for i, op in es) for j, es in enumerate(self.nodes, 1)]
        return f"[{'; '.join(parts)} | {self.merge}]"


def search_space_size(o_nz: int, I: int, K: int) -> int:
    """Number of distinct discrete cells: ``O_nz * prod_{i=2..I} O_nz^K * C(i, K)``."""
    if o_nz < 1 or I < 1 or not 1 <= K <= 2:
        raise SearchSpaceError(f"need O_nz >= 1, I >= 1, 1 <= K <= 2; got {o_nz}, {I}, {K}")
    total = o_nz
    for i in range(2, I + 1):
        k = min(K, i)
        total *= o_nz ** k * math.comb(i, k)
    return total


def opset_space_size(opset: OpSet, topo: CellTopology) -> int:
    return search_space_size(len(opset.nonzero), topo.I, topo.K)


def sample_random_cell(rng: np.random.Generator, opset: OpSet, topo: CellTopology,
                       merge: str = "concat_conv1x1") -> DiscreteCell:
    """Uniform draw over all valid cells of ``(opset, topo)``."""
    choices = opset.nonzero
    nodes = []
    for j in range(1, topo.I + 1):
        k = topo.in_degree(j)
        preds = sorted(int(p) for p in rng.choice(j, size=k, replace=False))
        nodes.append(tuple((p, choices[int(rng.integers(len(choices)))]) for p in preds))
    return DiscreteCell(tuple(nodes), merge)


ENUMERATION_LIMIT = 10**6


def enumerate_cells(opset: OpSet, topo: CellTopology, merge: str = "concat_conv1x1",
                    limit: int = ENUMERATION_LIMIT) -> list[DiscreteCell]:
    """Every valid cell, in a fixed lexicographic order. Refuses large spaces."""
    size = opset_space_size(opset, topo)
    if size > limit:
        raise SearchSpaceError(f"search space has {size} cells, above the enumeration limit {limit}")
    per_node = []
    for j in range(1, topo.I + 1):
        options = []
        for preds in itertools.combinations(range(j), topo.in_degree(j)):
            for ops in itertools.product(opset.nonzero, repeat=len(preds)):
                options.append(tuple(zip(preds, ops)))
        per_node.append(options)
    if merge not in MERGE_MODES:
        raise SearchSpaceError(f"unknown merge mode {merge!r}")
    return [DiscreteCell._trusted(combo, merge) for combo in itertools.product(*per_node)]
