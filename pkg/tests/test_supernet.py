import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rldarts.diffcore import ConfigurationError, Parameter, Tensor, backward, ops, precision
from rldarts.searchspace import CellTopology, DiscreteCell, OpKind, OpSet, SearchSpaceError, builtin_opset, \
    sample_random_cell
from rldarts.supernet import (
    ArchParams,
    Cell,
    MixedEdge,
    ParamStore,
    SupernetConfig,
    build_baseline_encoder,
    build_discrete_network,
    build_supernet,
    cell_forward,
    mixed_edge_forward,
    snapshot_alpha,
    uses_only_linear_ops,
)

ZS = OpSet("zero_skip", (OpKind.Zero, OpKind.Skip))


def small_cfg(**kw):
    base = dict(N=1, R=0, I=3, K=2, D=1, depths=(4,), input_shape=(8, 8, 3), feature_dim=8, temperature=1.0)
    base.update(kw)
    return SupernetConfig(**base)


def copy_into(discrete, supernet):
    """Load the supernet's weights for every op the discrete net retains."""
    discrete.load_state_dict(supernet.state_dict(), strict=True)


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / (np.max(np.abs(b)) + 1e-30))


# ------------------------------------------------------------ edge_probs

def test_zero_logits_give_uniform_probs():
    arch = ArchParams(builtin_opset("micro"), CellTopology(3, 2), 0.2)
    for e in arch.edges:
        np.testing.assert_allclose(arch.edge_probs(e).data, 0.2, atol=1e-7)


def test_peaked_logits():
    with precision(np.float64):
        arch = ArchParams(builtin_opset("micro"), CellTopology(1, 1), 1.0)
        arch.set_logits({(0, 1): [0, 0, 10, 0, 0]})
        # closed form e^10 / (e^10 + 4) = 0.99982
        p = arch.edge_probs((0, 1)).data[2]
        assert abs(p - np.exp(10) / (np.exp(10) + 4)) < 1e-15
        assert p > 0.9998


def test_edge_probs_shift_invariant():
    with precision(np.float64):
        arch = ArchParams(builtin_opset("micro"), CellTopology(2, 2), 0.5)
        v = np.array([0.3, -1.0, 2.0, 0.1, 0.0])
        arch.set_logits({(0, 1): v})
        p = arch.edge_probs((0, 1)).data.copy()
        arch.set_logits({(0, 1): v + 7.5})
        np.testing.assert_allclose(arch.edge_probs((0, 1)).data, p, atol=1e-14)


def test_unknown_edge_rejected():
    arch = ArchParams(builtin_opset("micro"), CellTopology(2, 2))
    with pytest.raises(SearchSpaceError):
        arch.edge_probs((1, 1))


# ----------------------------------------------------------- mixed edges

def test_zero_skip_half_mix(f64, rng):
    edge = MixedEdge(ParamStore(rng), "e", ZS, 2, 1)
    x = Tensor(rng.normal(size=(1, 3, 3, 2)))
    np.testing.assert_allclose(edge(x, Tensor(np.array([0.5, 0.5]))).data, 0.5 * x.data, rtol=1e-15)


def test_one_hot_skip_is_identity(f64, rng):
    edge = MixedEdge(ParamStore(rng), "e", builtin_opset("micro"), 2, 1)
    x = Tensor(rng.normal(size=(1, 3, 3, 2)))
    np.testing.assert_array_equal(edge(x, Tensor(np.array([0.0, 1.0, 0.0, 0.0, 0.0]))).data, x.data)


@pytest.mark.parametrize("opset_name", ["micro", "classic_normal", "classic_normal_norelu", "classic_reduction"])
def test_one_hot_logits_reproduce_each_op(f64, rng, opset_name):
    opset = builtin_opset(opset_name)
    stride = opset.stride
    arch = ArchParams(opset, CellTopology(1, 1), 1.0)
    edge = MixedEdge(ParamStore(rng), "e", opset, 3, stride)
    x = Tensor(rng.normal(size=(2, 6, 6, 3)))
    for k, op in enumerate(opset.ops):
        if op is OpKind.Zero:
            continue
        v = np.zeros(len(opset))
        v[k] = 20.0
        arch.set_logits({(0, 1): v})
        mixed = mixed_edge_forward(x, arch, (0, 1), edge).data
        from rldarts.supernet import apply_op
        plain = apply_op(op, x, stride, edge.convs[k]).data
        assert rel_err(mixed, plain) < 1e-5, op


def test_each_edge_owns_its_weights():
    net = build_supernet(small_cfg(), seed=0)
    kernels = [k for k in net.params if k.endswith("Conv3x3/kernel") and "/normal" in k]
    assert len(kernels) == len(CellTopology(3, 2).edges)
    assert len({id(net.params[k]) for k in kernels}) == len(kernels)


# ----------------------------------------------------------------- cells

def _cell(rng, I, merge, opset=ZS, channels=2):
    store = ParamStore(rng)
    edges = {(i, j): MixedEdge(store, f"e{i}_{j}", opset, channels, 1) for (i, j) in CellTopology(I, 2).edges}
    return Cell(store, "c", I, channels, 1, merge, edges)


def test_single_edge_cell(f64, rng):
    cell = _cell(rng, 1, "last_node")
    x = Tensor(rng.normal(size=(1, 3, 3, 2)))
    arch = ArchParams(ZS, CellTopology(1, 1), 1.0)
    edge_out = mixed_edge_forward(x, arch, (0, 1), cell.edges[(0, 1)]).data
    np.testing.assert_allclose(cell_forward(x, arch, cell).data, edge_out)


def test_all_skip_sums_to_double(f64, rng):
    cell = _cell(rng, 2, "last_node")
    x = Tensor(rng.normal(size=(1, 3, 3, 2)))
    skip = Tensor(np.array([0.0, 1.0]))
    out = cell(x, {e: skip for e in CellTopology(2, 2).edges})
    np.testing.assert_allclose(out.data, 2 * x.data)


def test_all_zero_cell(f64, rng):
    x = Tensor(rng.normal(size=(1, 3, 3, 2)))
    zero = Tensor(np.array([1.0, 0.0]))
    last = _cell(rng, 2, "last_node")
    np.testing.assert_array_equal(last(x, {e: zero for e in last.edges}).data, 0.0)
    concat = _cell(rng, 2, "concat_conv1x1")
    concat.merge_conv.bias.data[...] = [0.25, -1.0]
    out = concat(x, {e: zero for e in concat.edges}).data
    np.testing.assert_allclose(out, np.broadcast_to([0.25, -1.0], out.shape))


def test_cell_checks_channels(f64, rng):
    cell = _cell(rng, 1, "last_node", channels=3)
    with pytest.raises(ConfigurationError):
        cell(Tensor(rng.normal(size=(1, 3, 3, 2))), {(0, 1): Tensor(np.array([0.0, 1.0]))})


# --------------------------------------------------------------- networks

def test_classic_spatial_chain():
    cfg = SupernetConfig(N=1, R=1, I=4, D=3, K=2, depths=(16, 16, 16), normal_opset="classic_normal")
    assert cfg.output_spatial() == (3, 3)
    net = build_supernet(cfg, seed=0)
    assert net.params["head/dense/w"].shape == (3 * 3 * 16, 256)
    assert "pre/kernel" in net.params


def test_classic_forward_shape():
    cfg = SupernetConfig(N=1, R=1, I=2, D=2, K=2, depths=(4, 4), normal_opset="classic_normal",
                         input_shape=(12, 12, 3), feature_dim=8)
    y = build_supernet(cfg, seed=0)(Tensor(np.zeros((2, 12, 12, 3), dtype=np.float32)))
    assert y.shape == (2, 8)


def test_micro_uses_impala_reduction_without_preprocessor():
    net = build_supernet(SupernetConfig(N=2, R=0, I=4, D=2, K=2, depths=(8, 8)), seed=0)
    assert "pre/kernel" not in net.params
    assert "b0/reduce_conv/kernel" in net.params and "b1/reduce_conv/kernel" in net.params
    assert net.params["head/dense/w"].shape[0] == 6 * 6 * 8
    assert not any("reduction" in k for k in net.params)


def test_build_is_deterministic():
    cfg = small_cfg()
    a, b = build_supernet(cfg, seed=3), build_supernet(cfg, seed=3)
    assert a.num_weights() == b.num_weights()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    c = build_supernet(cfg, seed=4)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_spatial_exhaustion_rejected():
    with pytest.raises(ConfigurationError):
        build_supernet(SupernetConfig(N=1, R=0, D=4, depths=(2, 2, 2, 2), input_shape=(2, 2, 3)))


def test_depths_must_match_block_count():
    with pytest.raises(ConfigurationError):
        SupernetConfig(D=2, depths=(8,))


@given(N=st.integers(0, 2), R=st.integers(0, 2), D=st.integers(1, 2), h=st.integers(5, 17), pool=st.booleans())
def test_spatial_shape_law(N, R, D, h, pool):
    if N + R == 0:
        return
    cfg = SupernetConfig(N=N, R=R, I=1, K=1, D=D, depths=(2,) * D, input_shape=(h, h, 1), feature_dim=2,
                         normal_opset="micro", stem_pool=pool)
    reductions = D * (R if R > 0 else 1) + (1 if R > 0 and pool else 0)
    expect, exhausted = h, False
    for _ in range(reductions):
        exhausted |= expect == 1
        expect = -(-expect // 2)
    if exhausted:
        with pytest.raises(ConfigurationError):
            cfg.output_spatial()
        return
    assert cfg.output_spatial() == (expect, expect)
    net = build_supernet(cfg, seed=0)
    x = Tensor(np.ones((1, h, h, 1), dtype=np.float32))
    for kind, role, layer in net.layers[:-2]:
        x = layer(x, net.arch[role].all_probs()) if kind == "cell" else layer(x)
    assert x.shape[1:3] == (expect, expect)


# ------------------------------------------------------- alpha sharing

def test_alpha_shared_across_cells(monkeypatch):
    net = build_supernet(small_cfg(N=3), seed=0)
    assert list(net.arch) == ["normal"]
    assert len(net.arch_parameters()) == len(CellTopology(3, 2).edges)
    handed = []
    orig = Cell.__call__

    def spy(self, x, probs=None):
        handed.append({e: p.data.copy() for e, p in probs.items()})
        return orig(self, x, probs)

    monkeypatch.setattr(Cell, "__call__", spy)
    x = Tensor(np.random.default_rng(0).uniform(size=(1, 8, 8, 3)).astype(np.float32))
    net.arch["normal"].set_logits({(0, 1): [0, 5, 0, 0, 0], (1, 3): [2, 0, 0, 0, -1]})
    net(x)
    assert len(handed) == 3
    expect = net.arch["normal"].probs_numpy()
    for probs in handed:
        for e in expect:
            np.testing.assert_allclose(probs[e], expect[e], rtol=1e-6)


def test_alpha_gradient_accumulates_from_every_cell(f64, rng):
    cfg = small_cfg(N=2)
    net = build_supernet(cfg, seed=1)
    x = Tensor(rng.uniform(size=(2, 8, 8, 3)))
    alphas = net.arch_parameters()
    g_all = backward(ops.sum(ops.square(net(x))), alphas)
    assert any(np.abs(g).max() > 0 for g in g_all)


def test_gradient_reaches_alpha_through_rl_loss(rng):
    from rldarts.rl import ActorCritic
    from rldarts.rl.losses import ppo_loss
    net = build_supernet(small_cfg(), seed=0)
    agent = ActorCritic(net, 5, seed=0)
    obs = Tensor(rng.uniform(size=(8, 8, 8, 3)).astype(np.float32))
    logits, v = agent(obs)
    loss = ppo_loss(logits, v, rng.integers(0, 5, 8), np.full(8, -np.log(5)), rng.normal(size=8),
                    rng.normal(size=8)).total
    grads = backward(loss, net.arch_parameters())
    assert max(float(np.abs(g).max()) for g in grads) > 0


def test_frozen_alpha_is_uniform_and_untrainable():
    net = build_supernet(small_cfg(trainable_alpha=False), seed=0)
    assert net.arch_parameters() == []
    snap = snapshot_alpha(net.arch["normal"], 0)
    assert snap.max_uniform_deviation() == 0.0


# ------------------------------------------------------ discrete networks

def test_one_hot_supernet_matches_discrete_network():
    rng = np.random.default_rng(7)
    with precision(np.float64):
        for merge in ("concat_conv1x1", "last_node"):
            cfg = small_cfg(N=2, merge=merge)
            sup = build_supernet(cfg, seed=2)
            x = Tensor(rng.uniform(size=(2, 8, 8, 3)))
            for _ in range(5):
                cell = sample_random_cell(rng, builtin_opset("micro"), cfg.topology, merge)
                sup.arch["normal"].encode_cell(cell, margin=20.0)
                disc = build_discrete_network(cfg, cell, seed=9)
                copy_into(disc, sup)
                assert rel_err(sup(x).data, disc(x).data) < 1e-5


def test_discrete_build_deterministic_and_fresh():
    cfg = small_cfg()
    cell = sample_random_cell(np.random.default_rng(0), builtin_opset("micro"), cfg.topology)
    a = build_discrete_network(cfg, cell, seed=5)
    b = build_discrete_network(cfg, cell, seed=5)
    assert list(a.params) == list(b.params)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    assert a.arch_parameters() == []


def test_skip_chain_has_no_edge_weights():
    cfg = small_cfg(I=3, K=1)
    cell = DiscreteCell.build([[(0, "Skip")], [(1, "Skip")], [(2, "Skip")]], merge="last_node")
    net = build_discrete_network(cfg, cell, seed=0)
    assert not any("/e" in k for k in net.params)
    assert all(k.startswith(("b0/reduce_conv", "head/")) for k in net.params)


def test_discrete_rejects_mismatched_cell():
    cfg = small_cfg(I=3)
    with pytest.raises(SearchSpaceError):
        build_discrete_network(cfg, DiscreteCell.build([[(0, "Skip")]]), seed=0)
    with pytest.raises(ConfigurationError):
        build_discrete_network(SupernetConfig(N=1, R=1, I=1, K=1, D=1, depths=(4,), normal_opset="classic_normal"),
                               DiscreteCell.build([[(0, "Skip")]]), None)


def test_state_dict_roundtrip():
    cfg = small_cfg()
    a, b = build_supernet(cfg, seed=0), build_supernet(cfg, seed=1)
    a.arch["normal"].set_logits({(0, 1): [1, 2, 3, 4, 5]})
    b.load_state_dict(a.state_dict())
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(b.state_dict()[k], v)
    bad = a.state_dict()
    bad["head/dense/b"] = np.zeros(3)
    with pytest.raises(ConfigurationError):
        b.load_state_dict(bad)


def test_norelu_supernet_is_linear_inside_cells():
    cfg = SupernetConfig(N=1, R=1, I=2, K=2, D=1, depths=(4,), normal_opset="classic_normal_norelu",
                         input_shape=(8, 8, 3))
    assert uses_only_linear_ops(build_supernet(cfg))
    assert not uses_only_linear_ops(build_supernet(SupernetConfig(N=1, R=1, I=2, K=2, D=1, depths=(4,),
                                                                  normal_opset="classic_normal",
                                                                  input_shape=(8, 8, 3))))


# -------------------------------------------------------------- baseline

def test_baseline_spatial_chain():
    net = build_baseline_encoder((16, 16, 16))
    assert net.params["head/dense/w"].shape == (3 * 3 * 16, 256)
    y = net(Tensor(np.zeros((1, 24, 24, 3), dtype=np.float32)))
    assert y.shape == (1, 256)


def test_baseline_zero_residuals_reduce_to_conv_pool(rng):
    with precision(np.float64):
        net = build_baseline_encoder((4,), input_shape=(8, 8, 3), feature_dim=5, seed=0)
        for k, p in net.params.items():
            if "/res" in k:
                p.data[...] = 0.0
        x = Tensor(rng.normal(size=(2, 8, 8, 3)))
        conv = ops.conv2d(x, net.params["b0/conv/kernel"], bias=net.params["b0/conv/bias"])
        pooled = ops.pool2d(conv, "max", 3, 2)
        feat = ops.affine(ops.relu(ops.flatten(pooled)), net.params["head/dense/w"], net.params["head/dense/b"])
        np.testing.assert_allclose(net(x).data, feat.data, rtol=1e-12)


def test_baseline_conv5x5_has_more_weights():
    a = build_baseline_encoder((8, 8), "conv3x3").num_weights()
    b = build_baseline_encoder((8, 8), "conv5x5").num_weights()
    assert b > a
    with pytest.raises(ConfigurationError):
        build_baseline_encoder((8,), "conv7x7")


# -------------------------------------------------------------- snapshots

def test_snapshots():
    arch = ArchParams(builtin_opset("micro"), CellTopology(3, 2), 0.2)
    s0 = snapshot_alpha(arch, 0)
    for p in s0.probs.values():
        np.testing.assert_allclose(p, 0.2, atol=1e-12)
    before = arch.logits_matrix().copy()
    s1, s2 = snapshot_alpha(arch, 10), snapshot_alpha(arch, 10)
    np.testing.assert_array_equal(arch.logits_matrix(), before)
    assert s1.step == s2.step and all(np.array_equal(s1.probs[e], s2.probs[e]) for e in s1.probs)
    assert s1.to_json() == s2.to_json()
    from rldarts.supernet import AlphaSnapshot
    back = AlphaSnapshot.from_json(s1.to_json())
    assert back.ops == s1.ops and all(np.array_equal(back.probs[e], s1.probs[e]) for e in s1.probs)


def test_parameter_names_follow_block_cell_edge_layout():
    net = build_supernet(small_cfg(N=2), seed=0)
    assert "b0/normal1/e0_2/Conv3x3/kernel" in net.params
    assert isinstance(net.params["b0/normal0/merge/kernel"], Parameter)
