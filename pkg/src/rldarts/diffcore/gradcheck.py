"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Parameter, Tensor, UsageError, backward


def grad_check(fn: Callable[[], Tensor], params: Parameter | Iterable[Parameter],
               h: float = 1e-5, rel_floor: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar loss from the current parameter values each
    time it is called. The error per entry is
    ``|analytic - numeric| / (|analytic| + rel_floor)``.

    Run under ``precision(np.float64)``. The check is meaningless at kinks
    (relu at 0, max-pool ties, clip bounds); callers nudge inputs away from
    them rather than having this function skip entries.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise UsageError("grad_check requires float64 parameters")
        p.grad = None
    loss = fn()
    analytic = [g.copy() for g in backward(loss, params)]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - num) / (abs(gflat[i]) + rel_floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
