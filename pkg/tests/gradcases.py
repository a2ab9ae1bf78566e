"""Gradient-check cases shared by the unit and acceptance suites.

Each builder takes a Generator and returns ``(loss_fn, params)`` in float64.
Inputs are drawn away from kinks (relu at 0, clip bounds, max-pool ties,
the Huber knee) so central differences are meaningful.
"""

import numpy as np

from rldarts.diffcore import Parameter, Tensor, ops
from rldarts.rl.losses import dqn_loss, dueling_q, ppo_loss


def _away(rng, shape, kinks=(0.0,), gap=1e-2, scale=1.0):
    x = rng.normal(0.0, scale, size=shape)
    for k in kinks:
        near = np.abs(x - k) < gap
        x[near] = k + np.sign(x[near] - k + 1e-12) * gap * (1 + rng.random(int(near.sum())))
    return x


def _distinct(rng, shape):
    # spaced values so no window holds two maxima within finite-difference reach
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 + rng.uniform(0, 0.01, n)).reshape(shape)


def _weighted(y, w):
    return ops.sum(ops.mul(y, Tensor(w)))


def _unary(op, kinks=(), positive=False):
    def build(rng):
        shape = tuple(rng.integers(1, 4, size=2))
        x0 = rng.uniform(0.2, 2.0, shape) if positive else _away(rng, shape, kinks)
        x = Parameter(x0)
        w = rng.normal(size=shape)
        return (lambda: _weighted(op(x), w)), [x]
    return build


def _binary(op, gap=False):
    def build(rng):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        a0 = rng.normal(size=shape)
        b0 = rng.normal(size=shape)
        if gap:
            close = np.abs(a0 - b0) < 1e-2
            b0[close] += 0.1
        a, b = Parameter(a0), Parameter(b0)
        w = rng.normal(size=shape)
        return (lambda: _weighted(op(a, b), w)), [a, b]
    return build


def _broadcast_add(rng):
    a = Parameter(rng.normal(size=(3, 4)))
    b = Parameter(rng.normal(size=(4,)))
    w = rng.normal(size=(3, 4))
    return (lambda: _weighted(ops.add(a, b), w)), [a, b]


def _add_n(rng):
    xs = [Parameter(rng.normal(size=(2, 3))) for _ in range(int(rng.integers(2, 5)))]
    w = rng.normal(size=(2, 3))
    return (lambda: _weighted(ops.add_n(xs), w)), xs


def _clip(rng):
    x = Parameter(_away(rng, (3, 3), kinks=(-0.5, 0.5)))
    w = rng.normal(size=(3, 3))
    return (lambda: _weighted(ops.clip(x, -0.5, 0.5), w)), [x]


def _huber(rng):
    x = Parameter(_away(rng, (3, 3), kinks=(-1.0, 1.0), scale=1.5))
    w = rng.normal(size=(3, 3))
    return (lambda: _weighted(ops.huber(x, 1.0), w)), [x]


def _reductions(rng):
    x = Parameter(rng.normal(size=(2, 3, 4)))
    axis = int(rng.integers(0, 3))
    w = rng.normal(size=tuple(s for i, s in enumerate(x.shape) if i != axis))
    return (lambda: ops.add(_weighted(ops.sum(x, axis), w), ops.mean(ops.square(x)))), [x]


def _reshape_concat_split(rng):
    a = Parameter(rng.normal(size=(2, 3)))
    b = Parameter(rng.normal(size=(2, 2)))
    w = rng.normal(size=(5, 2))

    def fn():
        c = ops.concat([a, b], axis=1)
        p, q = ops.split(c, [1, 4], axis=1)
        return ops.add(_weighted(ops.reshape(c, (5, 2)), w), ops.sum(ops.mul(q, q)))
    return fn, [a, b]


def _take_along(rng):
    x = Parameter(rng.normal(size=(4, 5)))
    idx = rng.integers(0, 5, size=4)
    w = rng.normal(size=4)
    return (lambda: _weighted(ops.take_along(x, idx), w)), [x]


def _affine(rng):
    n, f, g = (int(v) for v in rng.integers(1, 5, size=3))
    x, W, b = Parameter(rng.normal(size=(n, f))), Parameter(rng.normal(size=(f, g))), Parameter(rng.normal(size=g))
    w = rng.normal(size=(n, g))
    return (lambda: _weighted(ops.affine(x, W, b), w)), [x, W, b]


def _softmax(rng):
    tau = float(rng.choice([0.2, 1.0, 3.0]))
    # logits on the temperature's scale; saturated rows have ~1e-9 gradients
    # that finite differences cannot resolve
    x = Parameter(rng.normal(size=(3, 4)) * 2 * tau)
    w = rng.normal(size=(3, 4))
    return (lambda: _weighted(ops.softmax(x, tau), w)), [x]


def _softmax_vec(rng):
    tau = float(rng.uniform(0.1, 2.0))
    x = Parameter(rng.normal(size=5) * 2 * tau)
    w = rng.normal(size=5)
    return (lambda: _weighted(ops.softmax_vec(x, tau), w)), [x]


def _log_softmax(rng):
    x = Parameter(rng.normal(size=(3, 5)))
    w = rng.normal(size=(3, 5))
    return (lambda: _weighted(ops.log_softmax(x), w)), [x]


def _entropy(rng):
    x = Parameter(rng.normal(size=(3, 5)))
    return (lambda: ops.sum(ops.entropy_from_logits(x))), [x]


def _mix(rng):
    xs = [Parameter(rng.normal(size=(1, 3, 3, 2))) for _ in range(3)]
    logits = Parameter(rng.normal(size=4))
    w = rng.normal(size=(1, 3, 3, 2))
    return (lambda: _weighted(ops.mix([None] + xs, ops.softmax_vec(logits, 0.5)), w)), xs + [logits]


def _conv(rng):
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.choice([1, 2]))
    dilation = int(rng.choice([1, 2])) if k > 1 else 1
    h = int(rng.integers(3, 7))
    cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    x = Parameter(rng.normal(size=(1, h, h, cin)))
    kern = Parameter(rng.normal(size=(k, k, cin, cout)) / k)
    bias = Parameter(rng.normal(size=cout))
    oh = -(-h // stride)
    w = rng.normal(size=(1, oh, oh, cout))
    return (lambda: _weighted(ops.conv2d(x, kern, stride, dilation, bias=bias), w)), [x, kern, bias]


def _conv_tanh(rng):
    x = Parameter(rng.normal(size=(2, 4, 4, 2)))
    kern = Parameter(rng.normal(size=(3, 3, 2, 2)) / 3)
    return (lambda: ops.sum(ops.tanh(ops.conv2d(x, kern)))), [x, kern]


def _conv_shared(rng):
    x = Parameter(rng.normal(size=(1, 4, 4, 2)))
    ks = [Parameter(rng.normal(size=(3, 3, 2, 2)) / 3) for _ in range(2)]
    bs = [Parameter(rng.normal(size=2)) for _ in range(2)]
    w = [rng.normal(size=(1, 4, 4, 2)) for _ in range(2)]

    def fn():
        ys = ops.conv2d_shared(x, ks, bs)
        return ops.add(_weighted(ys[0], w[0]), _weighted(ys[1], w[1]))
    return fn, [x] + ks + bs


def _pool(kind):
    def build(rng):
        h = int(rng.integers(2, 6))
        c = int(rng.integers(1, 3))
        stride = int(rng.choice([1, 2]))
        x0 = _distinct(rng, (1, h, h, c)) if kind == "max" else rng.normal(size=(1, h, h, c))
        x = Parameter(x0)
        oh = -(-h // stride)
        w = rng.normal(size=(1, oh, oh, c))
        return (lambda: _weighted(ops.pool2d(x, kind, 3, stride), w)), [x]
    return build


def _subsample(rng):
    x = Parameter(rng.normal(size=(1, 5, 5, 2)))
    w = rng.normal(size=(1, 3, 3, 2))
    return (lambda: _weighted(ops.subsample(x, 2), w)), [x]


PRIMITIVES = {
    "add": _binary(ops.add),
    "add_broadcast": _broadcast_add,
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "add_n": _add_n,
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, positive=True),
    "square": _unary(ops.square),
    "relu": _unary(ops.relu, kinks=(0.0,)),
    "tanh": _unary(ops.tanh),
    "minimum": _binary(ops.minimum, gap=True),
    "clip": _clip,
    "huber": _huber,
    "sum_mean": _reductions,
    "reshape_concat_split": _reshape_concat_split,
    "take_along": _take_along,
    "affine": _affine,
    "softmax": _softmax,
    "softmax_vec": _softmax_vec,
    "log_softmax": _log_softmax,
    "entropy": _entropy,
    "mix": _mix,
    "conv2d": _conv,
    "conv2d_tanh": _conv_tanh,
    "conv2d_shared": _conv_shared,
    "maxpool": _pool("max"),
    "avgpool": _pool("avg"),
    "subsample": _subsample,
}


# ------------------------------------------------------------ RL losses

def ppo_case(rng):
    """PPO loss through a tiny linear policy/value network."""
    n, f, a = 6, 3, 4
    clip_eps = 0.2
    x = rng.normal(size=(n, f))
    W = Parameter(rng.normal(size=(f, a)) * 0.5)
    Wv = Parameter(rng.normal(size=(f, 1)))
    actions = rng.integers(0, a, size=n)
    logits0 = x @ W.data
    logp0 = logits0 - np.log(np.exp(logits0).sum(1, keepdims=True))
    logp_cur = logp0[np.arange(n), actions]
    # old log-probs put ratios both inside and outside the clip band,
    # never within reach of its edges
    log_ratio = rng.choice([-0.5, -0.1, 0.05, 0.1, 0.5], size=n) + rng.uniform(-0.02, 0.02, n)
    logp_old = logp_cur - log_ratio
    adv = rng.normal(size=n)
    ret = rng.normal(size=n)
    xt = Tensor(x)

    def fn():
        return ppo_loss(ops.affine(xt, W), ops.affine(xt, Wv), actions, logp_old, adv, ret,
                        clip_eps=clip_eps).total
    return fn, [W, Wv]


def dqn_case(rng):
    """Huber double-DQN loss through a tiny dueling network."""
    n, f, h, a = 5, 4, 3, 3
    W1 = Parameter(rng.normal(size=(f, h)))
    wv, bv = Parameter(rng.normal(size=(h, 1))), Parameter(rng.normal(size=1))
    wa, ba = Parameter(rng.normal(size=(h, a))), Parameter(rng.normal(size=a))
    T = [rng.normal(size=s) for s in [(f, h), (h, 1), (h, a)]]

    def online(obs):
        return dueling_q(ops.tanh(ops.affine(obs, W1)), wv, wa, bv, ba)

    def target(obs):
        return dueling_q(ops.tanh(ops.affine(obs, Tensor(T[0]))), Tensor(T[1]), Tensor(T[2]))

    batch = {
        "obs": rng.normal(size=(n, f)),
        "actions": rng.integers(0, a, size=n),
        "returns": rng.normal(size=n),
        "next_obs": rng.normal(size=(n, f)),
        "dones": (rng.random(n) < 0.3).astype(np.float64),
        "discounts": np.full(n, 0.9 ** 3),
    }
    # a wide knee keeps most TD errors quadratic; all-linear draws can cancel
    # a bias gradient to exactly zero, which the relative metric cannot score
    return (lambda: dqn_loss(batch, online, target, huber_delta=2.0).total), [W1, wv, bv, wa, ba]

