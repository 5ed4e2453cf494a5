"""Central finite-difference checks against recorded gradients.

Checks run in float64: with float32 storage the rounding noise of a loss of
order one is ~1e-7, which a step of h=1e-3 amplifies to ~1e-4 in the
difference quotient, the same order as the tolerance being tested.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, current_graph, default_dtype, no_grad

H_STEP = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise deviation, scaled by the largest gradient magnitude."""
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


SMOOTH_TOL = 1e-5
MIN_STEP = 1e-7


def _central(fn, inputs, flat, i, h) -> float:
    orig = flat[i]
    flat[i] = orig + h
    fp = float(fn(*inputs).data)
    flat[i] = orig - h
    fm = float(fn(*inputs).data)
    flat[i] = orig
    return (fp - fm) / (2 * h)


def numeric_derivative(fn, inputs, flat, i, h: float = H_STEP, scale: float = 1.0) -> float:
    """Central difference at step ``h``, refined when the window holds a kink."""
    d = _central(fn, inputs, flat, i, h)
    while h > MIN_STEP:
        d_half = _central(fn, inputs, flat, i, h / 2)
        if abs(d - d_half) <= SMOOTH_TOL * scale:
            return d
        h /= 10
        d = _central(fn, inputs, flat, i, h)
    return d


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = H_STEP,
                    max_elements: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare analytic and numerical gradients of the scalar ``fn(*inputs)``.

    Every tensor in ``inputs`` with ``requires_grad`` is checked. ``max_elements``
    limits the number of probed coordinates per tensor (chosen with ``rng``).
    Returns the worst relative error over all checked tensors.
    """
    current_graph().clear()
    for t in inputs:
        t.grad = None
    loss = fn(*inputs)
    backward(loss)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            rng = rng or np.random.default_rng(0)
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.zeros(idx.size)
        scale = max(float(np.max(np.abs(analytic))), 1e-12)
        with no_grad():
            for n, i in enumerate(idx):
                numeric[n] = numeric_derivative(fn, inputs, flat, i, h, scale)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    return worst


def grad_check(op: Callable[..., Tensor], input_shapes: Sequence[tuple], seed: int = 0,
               h: float = H_STEP, max_elements: int | None = None) -> float:
    """Build random float64 inputs of ``input_shapes`` and check ``op`` on them."""
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        inputs = [Tensor(rng.standard_normal(s), requires_grad=True) for s in input_shapes]
        return check_gradients(op, inputs, h=h, max_elements=max_elements, rng=rng)
