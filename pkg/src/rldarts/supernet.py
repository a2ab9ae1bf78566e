"""Supernet, discrete-cell and baseline image encoders.

All three share the same skeleton: an optional preprocessing conv, ``D``
blocks of stacked cells, then flatten -> ReLU -> dense feature head.
Parameters are named by their position in that skeleton
(``b1/normal0/e0_2/Conv3x3/kernel``), so a discrete network can be loaded
with the matching weights of a supernet.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .diffcore import ops
from .diffcore.tensor import ConfigurationError, Parameter, Tensor, default_dtype
from .searchspace import (
    MERGE_MODES,
    CellTopology,
    DiscreteCell,
    OpKind,
    OpSet,
    SearchSpaceError,
    builtin_opset,
)

Edge = tuple[int, int]


def trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(default_dtype())


class ParamStore:
    """Ordered name -> Parameter map with seeded initialisation."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: OrderedDict[str, Parameter] = OrderedDict()

    def weight(self, name: str, shape, fan_in: int) -> Parameter:
        p = Parameter(trunc_normal(self.rng, shape, 1.0 / np.sqrt(fan_in)), name=name)
        self._add(name, p)
        return p

    def zeros(self, name: str, shape) -> Parameter:
        p = Parameter(np.zeros(shape, dtype=default_dtype()), name=name)
        self._add(name, p)
        return p

    def _add(self, name: str, p: Parameter) -> None:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self.params[name] = p


class Conv:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int,
                 stride: int = 1, dilation: int = 1, act: str | None = None):
        self.kernel = store.weight(f"{name}/kernel", (k, k, cin, cout), k * k * cin)
        self.bias = store.zeros(f"{name}/bias", (cout,))
        self.stride, self.dilation, self.act = stride, dilation, act

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.kernel, self.stride, self.dilation, bias=self.bias)
        return ops.activation(y, self.act) if self.act else y


class Dense:
    def __init__(self, store: ParamStore, name: str, fin: int, fout: int):
        self.w = store.weight(f"{name}/w", (fin, fout), fin)
        self.b = store.zeros(f"{name}/b", (fout,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(x, self.w, self.b)


# ------------------------------------------------------------ arch params

class ArchParams:
    """Per-edge op logits shared by every cell of one role."""

    def __init__(self, opset: OpSet, topo: CellTopology, temperature: float = 1.0,
                 role: str = "normal", trainable: bool = True):
        if not temperature > 0:
            raise ConfigurationError(f"temperature must be > 0, got {temperature}")
        self.opset, self.topo, self.temperature, self.role = opset, topo, temperature, role
        self.trainable = trainable
        self.logits: OrderedDict[Edge, Tensor] = OrderedDict()
        for (i, j) in topo.edges:
            name = f"alpha/{role}/e{i}_{j}"
            data = np.zeros(len(opset), dtype=default_dtype())
            t = Parameter(data, name=name) if trainable else Tensor(data, name=name)
            self.logits[(i, j)] = t

    @property
    def edges(self) -> tuple[Edge, ...]:
        return tuple(self.logits)

    def parameters(self) -> list[Parameter]:
        return [t for t in self.logits.values() if isinstance(t, Parameter)] if self.trainable else []

    def edge_probs(self, edge: Edge) -> Tensor:
        try:
            logits = self.logits[tuple(edge)]
        except KeyError:
            raise SearchSpaceError(f"unknown edge {edge!r}") from None
        return ops.softmax_vec(logits, self.temperature)

    def all_probs(self) -> dict[Edge, Tensor]:
        return {e: self.edge_probs(e) for e in self.logits}

    def probs_numpy(self, temperature: float | None = None) -> dict[Edge, np.ndarray]:
        tau = self.temperature if temperature is None else temperature
        out = {}
        for e, t in self.logits.items():
            z = t.data.astype(np.float64) / tau
            z = np.exp(z - z.max())
            out[e] = z / z.sum()
        return out

    def logits_matrix(self) -> np.ndarray:
        return np.stack([t.data for t in self.logits.values()])

    def set_logits(self, values: Mapping[Edge, Sequence[float]] | np.ndarray) -> None:
        if isinstance(values, np.ndarray):
            values = dict(zip(self.logits, values))
        for e, v in values.items():
            self.logits[tuple(e)].data[...] = np.asarray(v, dtype=self.logits[tuple(e)].data.dtype)

    def encode_cell(self, cell: DiscreteCell, margin: float = 20.0) -> None:
        """One-hot logits reproducing ``cell``: retained edges favour their op,
        every other edge favours Zero, each by ``margin``."""
        cell.check_topology(self.topo, self.opset)
        kept = {(i, j): op for i, j, op in cell.edges()}
        for e, t in self.logits.items():
            v = np.zeros(len(self.opset))
            v[self.opset.index(kept.get(e, OpKind.Zero))] = margin
            t.data[...] = v


@dataclass
class AlphaSnapshot:
    step: int
    role: str
    ops: tuple[str, ...]
    probs: dict[Edge, np.ndarray]

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "role": self.role,
            "ops": list(self.ops),
            "probs": {f"{i}-{j}": [float(x) for x in p] for (i, j), p in self.probs.items()},
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "AlphaSnapshot":
        probs = {}
        for k, v in d["probs"].items():
            i, j = (int(s) for s in k.split("-"))
            probs[(i, j)] = np.asarray(v, dtype=np.float64)
        return cls(int(d["step"]), d.get("role", "normal"), tuple(d["ops"]), probs)

    def max_uniform_deviation(self) -> float:
        return max(float(np.max(np.abs(p - 1.0 / len(p)))) for p in self.probs.values())


def snapshot_alpha(arch: ArchParams, step: int) -> AlphaSnapshot:
    return AlphaSnapshot(step, arch.role, tuple(o.name for o in arch.opset.ops), arch.probs_numpy())


# ------------------------------------------------------------------ edges

def apply_op(op: OpKind, x: Tensor, stride: int, conv: Conv | None) -> Tensor | None:
    fam = op.family
    if fam == "zero":
        return None
    if fam == "skip":
        return ops.subsample(x, stride)
    if fam == "conv":
        return conv(x)
    if fam == "maxpool":
        return ops.pool2d(x, "max", 3, stride)
    if fam == "avgpool":
        return ops.pool2d(x, "avg", 3, stride)
    if fam == "act":
        return ops.activation(ops.subsample(x, stride), op.activation)
    raise ConfigurationError(f"unhandled op {op}")


def _make_conv(store, prefix, op: OpKind, channels: int, stride: int) -> Conv | None:
    if not op.has_weights:
        return None
    return Conv(store, f"{prefix}/{op.name}", channels, channels, op.kernel, stride, op.dilation, op.activation)


class MixedEdge:
    def __init__(self, store, prefix: str, opset: OpSet, channels: int, stride: int):
        self.opset, self.stride = opset, stride
        self.convs = [_make_conv(store, prefix, op, channels, stride) for op in opset.ops]

    def conv_items(self):
        return [(k, c) for k, c in enumerate(self.convs) if c is not None]

    def __call__(self, x: Tensor, probs: Tensor, pre: Mapping[int, Tensor] | None = None) -> Tensor:
        pre = pre or {}
        outs = [pre[k] if k in pre else apply_op(op, x, self.stride, conv)
                for k, (op, conv) in enumerate(zip(self.opset.ops, self.convs))]
        return ops.mix(outs, probs)


class FixedEdge:
    def __init__(self, store, prefix: str, op: OpKind, channels: int, stride: int):
        self.op, self.stride = op, stride
        self.conv = _make_conv(store, prefix, op, channels, stride)

    def conv_items(self):
        return [(0, self.conv)] if self.conv is not None else []

    def __call__(self, x: Tensor, probs=None, pre: Mapping[int, Tensor] | None = None) -> Tensor:
        if pre and 0 in pre:
            return pre[0]
        return apply_op(self.op, x, self.stride, self.conv)


def mixed_edge_forward(x: Tensor, arch: ArchParams, edge: Edge, edge_module: MixedEdge) -> Tensor:
    return edge_module(x, arch.edge_probs(edge))


class Cell:
    """Cell DAG. ``edges`` maps (i, j) to an edge module; node j sums its inputs.

    Convolutions leaving the same node with the same kernel geometry are
    evaluated together as one wide convolution.
    """

    def __init__(self, store, prefix: str, I: int, channels: int, stride: int, merge: str,
                 edges: Mapping[Edge, MixedEdge | FixedEdge]):
        if merge not in MERGE_MODES:
            raise ConfigurationError(f"unknown merge mode {merge!r}")
        self.I, self.channels, self.stride, self.merge = I, channels, stride, merge
        self.edges = dict(edges)
        self.incoming = {j: sorted(i for (i, jj) in self.edges if jj == j) for j in range(1, I + 1)}
        self.groups: dict[int, list[list[tuple[int, int, Conv]]]] = {}
        for i in range(I):
            by_sig: dict[tuple, list] = {}
            for j in range(i + 1, I + 1):
                if (i, j) not in self.edges:
                    continue
                for k, conv in self.edges[(i, j)].conv_items():
                    sig = (conv.kernel.shape, conv.stride, conv.dilation)
                    by_sig.setdefault(sig, []).append((j, k, conv))
            self.groups[i] = [g for g in by_sig.values() if len(g) > 1]
        self.merge_conv = Conv(store, f"{prefix}/merge", I * channels, channels, 1) if merge == "concat_conv1x1" else None

    def _shared_convs(self, i: int, x: Tensor, pre: dict) -> None:
        for group in self.groups.get(i, ()):
            c0 = group[0][2]
            outs = ops.conv2d_shared(x, [c.kernel for _, _, c in group], [c.bias for _, _, c in group],
                                     c0.stride, c0.dilation)
            for (j, k, conv), y in zip(group, outs):
                pre.setdefault((i, j), {})[k] = ops.activation(y, conv.act) if conv.act else y

    def __call__(self, x: Tensor, probs: Mapping[Edge, Tensor] | None = None) -> Tensor:
        if x.shape[-1] != self.channels:
            raise ConfigurationError(f"cell expects {self.channels} channels, got {x.shape[-1]}")
        states = [x]
        pre: dict[Edge, dict[int, Tensor]] = {}
        self._shared_convs(0, x, pre)
        for j in range(1, self.I + 1):
            terms = []
            for i in self.incoming[j]:
                y = self.edges[(i, j)](states[i], None if probs is None else probs[(i, j)], pre.get((i, j)))
                if y is not None:
                    terms.append(y)
            if not terms:
                raise ConfigurationError(f"node {j} has no live inputs")
            states.append(ops.add_n(terms))
            self._shared_convs(j, states[j], pre)
        if self.merge == "last_node":
            return states[-1]
        return self.merge_conv(ops.concat(states[1:], axis=-1))


def cell_forward(x: Tensor, arch: ArchParams, cell: Cell) -> Tensor:
    return cell(x, arch.all_probs())


# ----------------------------------------------------------------- config

@dataclass
class SupernetConfig:
    N: int = 2
    R: int = 0
    I: int = 4
    D: int = 2
    K: int = 2
    depths: tuple[int, ...] = (8, 8)
    merge: str = "concat_conv1x1"
    normal_opset: str = "micro"
    reduction_opset: str = "classic_reduction"
    temperature: float = 0.2
    feature_dim: int = 256
    input_shape: tuple[int, int, int] = (24, 24, 3)
    trainable_alpha: bool = True
    # R > 0 only: follow the stem conv with a stride-2 max-pool
    stem_pool: bool = False

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.depths) != self.D:
            raise ConfigurationError(f"depths has {len(self.depths)} entries, D={self.D}")
        if self.N < 0 or self.R < 0 or self.N + self.R < 1 or self.D < 1:
            raise ConfigurationError(f"need D >= 1 and N + R >= 1, got N={self.N} R={self.R} D={self.D}")
        if self.merge not in MERGE_MODES:
            raise ConfigurationError(f"unknown merge mode {self.merge!r}")
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be > 0")
        builtin_opset(self.normal_opset)
        if self.R > 0:
            builtin_opset(self.reduction_opset)

    @property
    def topology(self) -> CellTopology:
        return CellTopology(self.I, self.K)

    def with_depths(self, depths: Sequence[int]) -> "SupernetConfig":
        return replace(self, depths=tuple(depths), D=len(depths))

    def output_spatial(self) -> tuple[int, int]:
        h, w = self.input_shape[:2]
        halvings = self.D * (self.R if self.R > 0 else 1) + (1 if self.R > 0 and self.stem_pool else 0)
        for _ in range(halvings):
            if h <= 1 and w <= 1:
                raise ConfigurationError("spatial dims exhausted by reductions")
            h, w = -(-h // 2), -(-w // 2)
        return h, w


# ---------------------------------------------------------------- network

@dataclass
class Network:
    """Encoder mapping NHWC observations to ``feature_dim`` features."""

    kind: str
    cfg: SupernetConfig | None
    store: ParamStore
    layers: list = field(default_factory=list)
    arch: dict[str, ArchParams] = field(default_factory=dict)
    feature_dim: int = 256
    cells: dict[str, DiscreteCell | None] = field(default_factory=dict)

    def __call__(self, x: Tensor) -> Tensor:
        probs = {role: a.all_probs() for role, a in self.arch.items()} if self.arch else {}
        for kind, role, layer in self.layers:
            if kind == "cell":
                x = layer(x, probs.get(role))
            else:
                x = layer(x)
        return x

    forward = __call__

    @property
    def params(self) -> OrderedDict[str, Parameter]:
        return self.store.params

    def parameters(self) -> list[Parameter]:
        return list(self.store.params.values())

    def arch_parameters(self) -> list[Parameter]:
        return [p for a in self.arch.values() for p in a.parameters()]

    def num_weights(self) -> int:
        return int(sum(p.data.size for p in self.store.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.data.copy() for k, p in self.store.params.items()}
        for a in self.arch.values():
            for t in a.logits.values():
                state[t.name] = t.data.copy()
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        targets = dict(self.store.params)
        for a in self.arch.values():
            targets.update({t.name: t for t in a.logits.values()})
        missing = [k for k in targets if k not in state]
        if strict and missing:
            raise ConfigurationError(f"state is missing {missing[:5]}")
        for k, t in targets.items():
            if k in state:
                if state[k].shape != t.data.shape:
                    raise ConfigurationError(f"shape mismatch for {k}: {state[k].shape} vs {t.data.shape}")
                t.data[...] = state[k]


class _Flatten:
    def __call__(self, x):
        return ops.relu(ops.flatten(x))


class _Residual:
    def __init__(self, store, prefix, channels, k):
        self.c0 = Conv(store, f"{prefix}/conv0", channels, channels, k)
        self.c1 = Conv(store, f"{prefix}/conv1", channels, channels, k)

    def __call__(self, x):
        y = self.c0(ops.relu(x))
        y = self.c1(ops.relu(y))
        return ops.add(x, y)


def _pool_layer(window=3, stride=2):
    return lambda x: ops.pool2d(x, "max", window, stride)


def _build(cfg: SupernetConfig, rng, kind: str, normal: DiscreteCell | None,
           reduction: DiscreteCell | None) -> Network:
    cfg.output_spatial()
    store = ParamStore(rng)
    topo = cfg.topology
    nopset = builtin_opset(cfg.normal_opset)
    ropset = builtin_opset(cfg.reduction_opset) if cfg.R > 0 else None
    net = Network(kind, cfg, store, feature_dim=cfg.feature_dim)
    if kind == "supernet":
        net.arch["normal"] = ArchParams(nopset, topo, cfg.temperature, "normal", cfg.trainable_alpha)
        if ropset is not None:
            net.arch["reduction"] = ArchParams(ropset, topo, cfg.temperature, "reduction", cfg.trainable_alpha)
    else:
        if normal is None or (cfg.R > 0 and reduction is None):
            raise ConfigurationError("discrete network needs a normal cell (and a reduction cell when R > 0)")
        normal.check_topology(topo, nopset)
        if reduction is not None and ropset is not None:
            reduction.check_topology(topo, ropset)
        net.cells = {"normal": normal, "reduction": reduction if cfg.R > 0 else None}

    def make_cell(prefix, role, ch, stride):
        if kind == "supernet":
            opset = nopset if role == "normal" else ropset
            edges = {(i, j): MixedEdge(store, f"{prefix}/e{i}_{j}", opset, ch, stride if i == 0 else 1)
                     for (i, j) in topo.edges}
            merge = cfg.merge
        else:
            cell = normal if role == "normal" else reduction
            edges = {(i, j): FixedEdge(store, f"{prefix}/e{i}_{j}", op, ch, stride if i == 0 else 1)
                     for i, j, op in cell.edges()}
            merge = cell.merge
        return Cell(store, prefix, topo.I, ch, stride, merge, edges)

    h, w, ch = cfg.input_shape
    if cfg.R > 0:
        net.layers.append(("layer", None, Conv(store, "pre", ch, cfg.depths[0], 3)))
        if cfg.stem_pool:
            net.layers.append(("layer", None, _pool_layer()))
            h, w = -(-h // 2), -(-w // 2)
        ch = cfg.depths[0]
    for d, depth in enumerate(cfg.depths):
        b = f"b{d}"
        if cfg.R == 0:
            net.layers.append(("layer", None, Conv(store, f"{b}/reduce_conv", ch, depth, 3)))
            net.layers.append(("layer", None, _pool_layer()))
            h, w = -(-h // 2), -(-w // 2)
        elif ch != depth:
            net.layers.append(("layer", None, Conv(store, f"{b}/adjust", ch, depth, 1)))
        ch = depth
        for n in range(cfg.N):
            net.layers.append(("cell", "normal", make_cell(f"{b}/normal{n}", "normal", ch, 1)))
        for r in range(cfg.R):
            net.layers.append(("cell", "reduction", make_cell(f"{b}/reduction{r}", "reduction", ch, 2)))
            h, w = -(-h // 2), -(-w // 2)
    net.layers.append(("layer", None, _Flatten()))
    net.layers.append(("layer", None, Dense(store, "head/dense", h * w * ch, cfg.feature_dim)))
    return net


def build_supernet(cfg: SupernetConfig, seed: int | np.random.Generator = 0) -> Network:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _build(cfg, rng, "supernet", None, None)


def build_discrete_network(cfg: SupernetConfig, normal_cell: DiscreteCell,
                           reduction_cell: DiscreteCell | None = None,
                           seed: int | np.random.Generator = 0) -> Network:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _build(cfg, rng, "discrete", normal_cell, reduction_cell)


def build_baseline_encoder(depths: Sequence[int], variant: str = "conv3x3",
                           input_shape=(24, 24, 3), feature_dim: int = 256,
                           seed: int | np.random.Generator = 0) -> Network:
    """IMPALA-style encoder: per block Conv -> MaxPool(s2) -> 2 residual units."""
    k = {"conv3x3": 3, "conv5x5": 5}.get(variant)
    if k is None:
        raise ConfigurationError(f"unknown baseline variant {variant!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    store = ParamStore(rng)
    net = Network("baseline", None, store, feature_dim=feature_dim)
    h, w, ch = input_shape
    for d, depth in enumerate(depths):
        net.layers.append(("layer", None, Conv(store, f"b{d}/conv", ch, depth, k)))
        net.layers.append(("layer", None, _pool_layer()))
        h, w = -(-h // 2), -(-w // 2)
        ch = depth
        for r in range(2):
            net.layers.append(("layer", None, _Residual(store, f"b{d}/res{r}", ch, k)))
    net.layers.append(("layer", None, _Flatten()))
    net.layers.append(("layer", None, Dense(store, "head/dense", h * w * ch, feature_dim)))
    return net


def build_encoder(spec: Mapping, seed=0) -> Network:
    """Build from a plain description: ``{"kind": "supernet"|"discrete"|"baseline", ...}``."""
    kind = spec["kind"]
    if kind == "supernet":
        return build_supernet(spec["cfg"], seed)
    if kind == "discrete":
        return build_discrete_network(spec["cfg"], spec["normal"], spec.get("reduction"), seed)
    if kind == "baseline":
        return build_baseline_encoder(spec["depths"], spec.get("variant", "conv3x3"),
                                      spec.get("input_shape", (24, 24, 3)), spec.get("feature_dim", 256), seed)
    raise ConfigurationError(f"unknown encoder kind {kind!r}")


def uses_only_linear_ops(net: Network, role: str = "normal") -> bool:
    """True when every op in every ``role`` cell is linear (the no-ReLU ablation)."""
    for kind, cell_role, layer in net.layers:
        if kind != "cell" or cell_role != role:
            continue
        for e in layer.edges.values():
            ops_ = e.opset.ops if isinstance(e, MixedEdge) else (e.op,)
            if not all(o.is_linear for o in ops_):
                return False
    return True
