"""From architecture weights to a sparse cell, and cell (de)serialisation."""

from __future__ import annotations

import json
from typing import Iterable, Mapping, Sequence

import numpy as np

from .searchspace import DiscreteCell, OpKind, SearchSpaceError
from .supernet import AlphaSnapshot, ArchParams, Edge


class CellFormatError(ValueError):
    """A cell file failed to parse or violates cell invariants."""


def _probs_and_ops(source, temperature: float | None) -> tuple[Mapping[Edge, np.ndarray], tuple[str, ...]]:
    if isinstance(source, ArchParams):
        return source.probs_numpy(temperature), tuple(o.name for o in source.opset.ops)
    if isinstance(source, AlphaSnapshot):
        return source.probs, source.ops
    raise TypeError(f"cannot discretize {type(source).__name__}")


def edge_choice(probs: np.ndarray, ops: Sequence[str]) -> tuple[int, float]:
    """Best non-Zero op index and its probability (the edge strength).

    Ties go to the lowest op index.
    """
    best, strength = -1, -np.inf
    for k, name in enumerate(ops):
        if name == "Zero":
            continue
        if probs[k] > strength:
            best, strength = k, float(probs[k])
    return best, strength


def discretize(source: ArchParams | AlphaSnapshot, K: int, merge: str = "concat_conv1x1",
               temperature: float | None = None) -> DiscreteCell:
    """Argmax each edge over non-Zero ops, then keep the ``min(K, j)``
    strongest incoming edges of every node ``j``.

    Edge-strength ties keep the lower predecessor index.
    """
    probs, ops = _probs_and_ops(source, temperature)
    I = max(j for _, j in probs)
    choice = {e: edge_choice(np.asarray(p), ops) for e, p in probs.items()}
    nodes = []
    for j in range(1, I + 1):
        incoming = [(i, choice[(i, j)]) for i in range(j) if (i, j) in choice]
        incoming.sort(key=lambda item: (-item[1][1], item[0]))
        kept = sorted(incoming[: min(K, j)], key=lambda item: item[0])
        nodes.append(tuple((i, OpKind[ops[k]]) for i, (k, _) in kept))
    return DiscreteCell(tuple(nodes), merge)


def distinct_cell_sequence(snapshots: Iterable[AlphaSnapshot], K: int,
                           merge: str = "concat_conv1x1") -> list[tuple[int, DiscreteCell]]:
    """Cells of consecutive snapshots with adjacent duplicates dropped."""
    seq: list[tuple[int, DiscreteCell]] = []
    for snap in snapshots:
        cell = discretize(snap, K, merge)
        if not seq or seq[-1][1] != cell:
            seq.append((snap.step, cell))
    return seq


# ------------------------------------------------------------------- JSON

def cell_to_json(cell: DiscreteCell) -> dict:
    return {
        "merge": cell.merge,
        "nodes": [
            {"node": j, "edges": [{"from": i, "op": op.name} for i, op in edges]}
            for j, edges in enumerate(cell.nodes, start=1)
        ],
    }


def cell_from_json(obj: Mapping, where: str = "$") -> DiscreteCell:
    if not isinstance(obj, Mapping):
        raise CellFormatError(f"{where}: expected an object")
    merge = obj.get("merge", "concat_conv1x1")
    nodes_raw = obj.get("nodes")
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise CellFormatError(f"{where}.nodes: expected a non-empty list")
    nodes: dict[int, list[tuple[int, OpKind]]] = {}
    for n, node in enumerate(nodes_raw):
        loc = f"{where}.nodes[{n}]"
        try:
            j = int(node["node"])
            edges = node["edges"]
        except (KeyError, TypeError, ValueError):
            raise CellFormatError(f"{loc}: needs integer 'node' and list 'edges'") from None
        if j in nodes:
            raise CellFormatError(f"{loc}: node {j} listed twice")
        pairs = []
        for e, edge in enumerate(edges):
            eloc = f"{loc}.edges[{e}]"
            try:
                i, name = int(edge["from"]), edge["op"]
            except (KeyError, TypeError, ValueError):
                raise CellFormatError(f"{eloc}: needs integer 'from' and string 'op'") from None
            try:
                op = OpKind.parse(name)
            except SearchSpaceError as exc:
                raise CellFormatError(f"{eloc}: {exc}") from None
            pairs.append((i, op))
        nodes[j] = pairs
    if sorted(nodes) != list(range(1, len(nodes) + 1)):
        raise CellFormatError(f"{where}.nodes: node ids must be 1..{len(nodes)}, got {sorted(nodes)}")
    try:
        return DiscreteCell.build([nodes[j] for j in range(1, len(nodes) + 1)], merge)
    except SearchSpaceError as exc:
        raise CellFormatError(f"{where}: {exc}") from None


def dumps_cells(normal: DiscreteCell, reduction: DiscreteCell | None = None) -> str:
    if reduction is None:
        obj = cell_to_json(normal)
    else:
        obj = {"normal": cell_to_json(normal), "reduction": cell_to_json(reduction)}
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def loads_cells(text: str) -> tuple[DiscreteCell, DiscreteCell | None]:
    """Parse a single cell or a ``{"normal": ..., "reduction": ...}`` pair."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CellFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(obj, Mapping) and "normal" in obj:
        red = obj.get("reduction")
        return (cell_from_json(obj["normal"], "$.normal"),
                cell_from_json(red, "$.reduction") if red is not None else None)
    return cell_from_json(obj), None


def cell_roundtrip(cell: DiscreteCell) -> DiscreteCell:
    return loads_cells(dumps_cells(cell))[0]


# -------------------------------------------------------------------- DOT

def cell_to_dot(cell: DiscreteCell, name: str = "cell") -> str:
    lines = [f'digraph "{name}" {{', "  rankdir=LR;", '  node [shape=box, style=rounded];',
             '  "in" [label="input", shape=ellipse];']
    for j in range(1, cell.I + 1):
        lines.append(f'  "n{j}" [label="{j}"];')
    lines.append('  "out" [label="%s", shape=ellipse];' % ("Conv1x1(concat)" if cell.merge == "concat_conv1x1" else "output"))
    for i, j, op in cell.edges():
        src = "in" if i == 0 else f"n{i}"
        lines.append(f'  "{src}" -> "n{j}" [label="{op.name}"];')
    if cell.merge == "concat_conv1x1":
        for j in range(1, cell.I + 1):
            lines.append(f'  "n{j}" -> "out" [style=dashed];')
    else:
        lines.append(f'  "n{cell.I}" -> "out" [style=dashed];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_alpha_log(path, role: str = "normal") -> list[AlphaSnapshot]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            snap = AlphaSnapshot.from_json(json.loads(line))
            if snap.role == role:
                out.append(snap)
    out.sort(key=lambda s: s.step)
    return out
