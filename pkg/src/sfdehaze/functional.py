"""Differentiable operations on :class:`~sfdehaze.tensor.Tensor`.

Each primitive computes its forward value with numpy and records a closure
mapping the output gradient to one gradient per input. Composite operations
(instance norm, L1, polar recombination) are built from primitives and inherit
their derivative rules.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image_ops import ConfigError
from .tensor import AutodiffError, ShapeError, Tensor, as_tensor, make_result


class NumericalConsistencyError(AutodiffError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)

    def back(g):
        return (g * p * a.data ** (p - 1),)

    return make_result(a.data ** p, (a,), back, "pow")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def back(g):
        return (g * 0.5 / out,)

    return make_result(out, (a,), back, "sqrt")


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def clamp(a, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return make_result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


# ---------------------------------------------------------------------------
# reductions and structure

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape).copy()
    return make_result(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(a.data[index]), (a,), back, "getitem")


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def min_axis(a, axis: int, keepdims: bool = True) -> Tensor:
    """Minimum along ``axis``; the subgradient goes to the first minimal element."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmin(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g if keepdims else np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_result(out if keepdims else np.squeeze(out, axis), (a,), back, "min")


def max_axis(a, axis: int, keepdims: bool = True) -> Tensor:
    """Maximum along ``axis``; the subgradient goes to the first maximal element."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g if keepdims else np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_result(out if keepdims else np.squeeze(out, axis), (a,), back, "max")


def min_pool2d(a, patch: int) -> Tensor:
    """Stride-1 min filter over a ``patch``x``patch`` window with replicate padding."""
    a = as_tensor(a)
    if patch < 1 or patch % 2 == 0:
        raise ConfigError(f"patch must be odd and >= 1, got {patch}")
    *lead, H, W = a.shape
    r = patch // 2
    rows = np.clip(np.arange(H)[:, None] + np.arange(patch)[None, :] - r, 0, H - 1)
    cols = np.clip(np.arange(W)[:, None] + np.arange(patch)[None, :] - r, 0, W - 1)
    windows = a.data[..., rows[:, None, :, None], cols[None, :, None, :]]
    windows = windows.reshape(*lead, H, W, patch * patch)
    arg = np.argmin(windows, axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def back(g):
        di, dj = np.divmod(arg, patch)
        src_r = rows[np.arange(H)[:, None], di]
        src_c = cols[np.arange(W)[None, :], dj]
        plane = H * W
        n_planes = int(np.prod(lead)) if lead else 1
        flat = (src_r * W + src_c).reshape(n_planes, plane)
        flat = flat + (np.arange(n_planes) * plane)[:, None]
        full = np.bincount(flat.ravel(), weights=g.reshape(-1).astype(np.float64),
                           minlength=n_planes * plane)
        return (full.reshape(a.shape).astype(a.dtype),)

    return make_result(out, (a,), back, "min_pool2d")


# ---------------------------------------------------------------------------
# convolution and resampling

def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation with zero padding. ``x`` is NCHW, ``weight`` is (Cout, Cin, k, k)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D (N,C,H,W), got {x.ndim}-D")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-D (Cout,Cin,k,k), got {weight.ndim}-D")
    N, C, H, W = x.shape
    O, Ci, k, k2 = weight.shape
    if Ci != C:
        raise ShapeError(f"conv2d channel axis mismatch: input C={C}, weight Cin={Ci}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d kernel axes must be equal and odd, got {k}x{k2}")
    if pad < 0 or stride < 1:
        raise ValueError("conv2d needs pad >= 0 and stride >= 1")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise ShapeError(f"conv2d bias axis mismatch: expected ({O},), got {bias.shape}")
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d spatial axes too small: {H}x{W} with k={k}, pad={pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(N * Ho * Wo, C * k * k)
    wmat = weight.data.reshape(O, C * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2))

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, O)
        dw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        db = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(N, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[..., i, j]
            dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        return (dx, dw) if bias is None else (dx, dw, db)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, back, "conv2d")


@lru_cache(maxsize=64)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres, edge-clamped (align_corners=False convention)
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    H, W = x.shape[-2:]
    mh = _bilinear_matrix(H, out_h).astype(x.dtype)
    mw = _bilinear_matrix(W, out_w).astype(x.dtype)
    out = mh @ x.data @ mw.T

    def back(g):
        return (mh.T @ g @ mw,)

    return make_result(out, (x,), back, "resize_bilinear")


def upsample2x(x) -> Tensor:
    H, W = x.shape[-2:]
    return resize_bilinear(x, 2 * H, 2 * W)


# ---------------------------------------------------------------------------
# Fourier transforms

def _conj_index(n: int) -> np.ndarray:
    return (-np.arange(n)) % n


def fft2(x):
    """Unnormalized forward 2D DFT over the last two axes of a real tensor.

    Returns ``(real, imag)``. The spectrum is projected onto exact conjugate
    symmetry so self-conjugate bins carry an imaginary part of exactly +0.
    """
    x = as_tensor(x)
    H, W = x.shape[-2:]
    spec = np.fft.fft2(x.data.astype(np.float64), axes=(-2, -1))
    ci, cj = _conj_index(H), _conj_index(W)
    mirror = spec[..., ci, :][..., :, cj]
    re = 0.5 * (spec.real + mirror.real)
    im = 0.5 * (spec.imag - mirror.imag) + 0.0
    dt = x.dtype

    def back_re(g):
        return (np.fft.fft2(g, axes=(-2, -1)).real.astype(dt),)

    def back_im(g):
        return (np.fft.fft2(g, axes=(-2, -1)).imag.astype(dt),)

    return (make_result(re.astype(dt), (x,), back_re, "fft2.real"),
            make_result(im.astype(dt), (x,), back_im, "fft2.imag"))


def ifft2(re, im, check_real: bool = True, tol: float = 1e-3) -> Tensor:
    """Inverse 2D DFT with 1/(H*W) normalization, returning the real part.

    With ``check_real`` the imaginary residue must stay below ``tol``; a larger
    residue means the spectrum was not conjugate-symmetric.
    """
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError(f"ifft2 real/imag shapes differ: {re.shape} vs {im.shape}")
    H, W = re.shape[-2:]
    z = np.fft.ifft2(re.data.astype(np.float64) + 1j * im.data.astype(np.float64), axes=(-2, -1))
    if check_real and z.size:
        resid = float(np.max(np.abs(z.imag)))
        if resid > tol:
            raise NumericalConsistencyError(
                f"ifft2 imaginary residue {resid:.3g} exceeds {tol:g}; spectrum is not conjugate-symmetric")
    dt = re.dtype
    scale = 1.0 / (H * W)

    def back(g):
        f = np.fft.fft2(g, axes=(-2, -1)) * scale
        return f.real.astype(dt), f.imag.astype(dt)

    return make_result(z.real.astype(dt), (re, im), back, "ifft2")


def amp_phase(re, im):
    """Amplitude sqrt(R^2+I^2) and principal phase atan2(I, R) in (-pi, pi].

    Both derivatives are defined as zero at R = I = 0.
    """
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError(f"amp_phase real/imag shapes differ: {re.shape} vs {im.shape}")
    r, i = re.data, im.data
    amp = np.hypot(r, i)
    phase = np.arctan2(i, r)
    phase = np.where(phase <= -np.pi, np.pi, phase).astype(r.dtype)
    zero = amp == 0
    safe = np.where(zero, 1, amp)

    def back_amp(g):
        return np.where(zero, 0, g * r / safe), np.where(zero, 0, g * i / safe)

    def back_phase(g):
        a2 = safe * safe
        return np.where(zero, 0, -g * i / a2), np.where(zero, 0, g * r / a2)

    return (make_result(amp, (re, im), back_amp, "amplitude"),
            make_result(phase, (re, im), back_phase, "phase"))


def polar(amp, phase):
    """Recombine amplitude and phase into (real, imag) planes."""
    return mul(amp, cos(phase)), mul(amp, sin(phase))


# ---------------------------------------------------------------------------
# normalization and losses

def instance_norm(x, eps: float = 1e-5):
    """Per-instance, per-channel standardization over the spatial axes.

    Returns ``(normalized, mean, std)`` with ``mean`` and ``std`` of shape (N, C)
    and ``std = sqrt(var + eps)``.
    """
    if eps <= 0:
        raise ConfigError(f"instance_norm eps must be > 0, got {eps}")
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects N,C,H,W input, got shape {x.shape}")
    mu = mean(x, axis=(2, 3), keepdims=True)
    centred = x - mu
    var = mean(centred * centred, axis=(2, 3), keepdims=True)
    std = sqrt(var + eps)
    normalized = centred / std
    N, C = x.shape[:2]
    return normalized, reshape(mu, (N, C)), reshape(std, (N, C))


def l1(a, b) -> Tensor:
    return mean(abs(sub(a, b)))


def rgb_to_vs(img):
    """HSV value and saturation planes of an N,3,H,W tensor (S = 0 where V = 0)."""
    img = as_tensor(img)
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"rgb_to_vs expects N,3,H,W input, got shape {img.shape}")
    v = max_axis(img, axis=1)
    m = min_axis(img, axis=1)
    # where V == 0 the numerator is 0 too, so adding 1 to the denominator only avoids 0/0
    denom = v + Tensor((v.data == 0).astype(img.dtype))
    s = (v - m) / denom
    return v, s


def dark_channel(img, patch: int = 15) -> Tensor:
    """Per-pixel min over channels, then min over a replicate-padded patch."""
    img = as_tensor(img)
    return min_pool2d(min_axis(img, axis=1), patch)

