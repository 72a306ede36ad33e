"""Numerical verification helpers: finite-difference and adjoint checks.

These run in float64; callers are expected to build their inputs inside
``precision("float64")``.  All checkers return the worst relative error
so tests can assert a tolerance and reports can show margins.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, backward, precision
from .errors import AutodiffError


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def coordinate_gradcheck(fn, inputs, eps: float = 1e-5) -> float:
    """Compare analytic grads with central differences, coordinate-wise.

    `fn` maps the input tensors to a scalar Tensor.  Returns the maximum
    relative error over every coordinate of every requires_grad input.
    Only usable on small tensors; cost is two forwards per coordinate.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise AutodiffError("gradcheck requires float64 inputs")
        t.zero_grad()
    loss = fn(*inputs)
    backward(loss)
    worst = 0.0
    with precision(np.float64):
        for t in inputs:
            if not t.requires_grad:
                continue
            if t.grad is None:
                raise AutodiffError("input received no gradient")
            flat = t.data.reshape(-1)
            gflat = t.grad.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                hi = fn(*inputs).item()
                flat[i] = keep - eps
                lo = fn(*inputs).item()
                flat[i] = keep
                numeric = (hi - lo) / (2.0 * eps)
                worst = max(worst, _rel_err(numeric, float(gflat[i])))
    return worst


def directional_gradcheck(fn, inputs, rng, eps: float = 1e-5) -> float:
    """Single-direction finite-difference check, cheap enough for big graphs.

    Draws one random direction over all requires_grad inputs, compares
    the directional derivative from backward() with central differences.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise AutodiffError("gradcheck requires float64 inputs")
        t.zero_grad()
    loss = fn(*inputs)
    backward(loss)
    grad_inputs = [t for t in inputs if t.requires_grad]
    if not grad_inputs:
        raise AutodiffError("no requires_grad inputs to check")
    directions = []
    analytic = 0.0
    for t in grad_inputs:
        if t.grad is None:
            raise AutodiffError("input received no gradient")
        d = rng.standard_normal(t.data.shape)
        d /= max(1e-12, float(np.sqrt((d * d).sum())))
        directions.append(d)
        analytic += float((t.grad * d).sum())
    with precision(np.float64):
        for t, d in zip(grad_inputs, directions):
            t.data += eps * d
        hi = fn(*inputs).item()
        for t, d in zip(grad_inputs, directions):
            t.data -= 2.0 * eps * d
        lo = fn(*inputs).item()
        for t, d in zip(grad_inputs, directions):
            t.data += eps * d
    numeric = (hi - lo) / (2.0 * eps)
    return _rel_err(numeric, analytic)


def adjoint_error(forward_op, adjoint_op, x_shape, y_shape, rng) -> float:
    """|<A x, y> - <x, A* y>| / scale for random float64 tensors."""
    x = rng.standard_normal(x_shape)
    y = rng.standard_normal(y_shape)
    ax = forward_op(x)
    aty = adjoint_op(y)
    lhs = float((ax * y).sum())
    rhs = float((x * aty).sum())
    return abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
