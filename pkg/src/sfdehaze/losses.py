"""Unsupervised adaptation losses: phase structure, amplitude style, dark channel and colour attenuation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .image_ops import ConfigError
from .tensor import ShapeError, Tensor, as_tensor

LOSS_NAMES = ("phase", "amplitude", "dcp", "cap")


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 1.0
    lambda_a: float = 1.0
    lambda_d: float = 1e-3
    lambda_c: float = 1e-3

    def __post_init__(self):
        for name in ("lambda_p", "lambda_a", "lambda_d", "lambda_c"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")

    def as_dict(self) -> dict:
        return {"phase": self.lambda_p, "amplitude": self.lambda_a,
                "dcp": self.lambda_d, "cap": self.lambda_c}


def half_spectrum(t: Tensor) -> Tensor:
    """Rows u = 0 .. U/2 - 1 of a spectrum in native DFT order (all columns)."""
    return t[..., : t.shape[-2] // 2, :]


def spectrum(x):
    return F.amp_phase(*F.fft2(x))


def _check_pair(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def phase_distance(a, b, angular: bool = False) -> Tensor:
    """Mean |P(a) - P(b)| over the half spectrum, i.e. 2/(U*V) * sum, averaged over N and C."""
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "phase loss")
    diff = half_spectrum(spectrum(a)[1]) - half_spectrum(spectrum(b)[1])
    if angular:
        wrap = np.round(diff.data / (2 * np.pi)) * (2 * np.pi)
        diff = diff - Tensor(wrap.astype(diff.dtype))
    return F.mean(F.abs(diff))


def phase_loss(student_out, teacher_out, student_taps=None, teacher_taps=None,
               angular: bool = False) -> Tensor:
    """Phase structure loss on the outputs and every shared tap, averaged with equal weight.

    Teacher tensors are detached, so no gradient reaches the teacher.
    """
    student_taps = student_taps or {}
    teacher_taps = teacher_taps or {}
    if set(student_taps) != set(teacher_taps):
        raise ShapeError(f"tap names differ: {sorted(student_taps)} vs {sorted(teacher_taps)}")
    terms = [phase_distance(student_out, as_tensor(teacher_out).detach(), angular)]
    for name in sorted(student_taps):
        terms.append(phase_distance(student_taps[name], as_tensor(teacher_taps[name]).detach(), angular))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def amplitude_loss(student_out, clahe_ref) -> Tensor:
    """Mean |A(student) - A(CLAHE reference)| over the half spectrum."""
    student_out, clahe_ref = as_tensor(student_out), as_tensor(clahe_ref).detach()
    _check_pair(student_out, clahe_ref, "amplitude loss")
    amp_s = half_spectrum(spectrum(student_out)[0])
    amp_r = half_spectrum(spectrum(clahe_ref)[0])
    return F.mean(F.abs(amp_s - amp_r))


def dcp_loss(out, patch: int = 15) -> Tensor:
    """Mean dark channel (L1 norm, per pixel) of an N x 3 x H x W output."""
    return F.mean(F.dark_channel(out, patch))


def cap_loss(out) -> Tensor:
    """Mean |V - S| of an N x 3 x H x W output."""
    v, s = F.rgb_to_vs(out)
    return F.mean(F.abs(v - s))


def total_loss(parts: dict, weights: LossWeights):
    """Weighted sum of the loss parts; returns ``(total, breakdown)``.

    Parts with zero weight are left out of the graph entirely.
    """
    w = weights.as_dict()
    total = None
    breakdown = {}
    for name in LOSS_NAMES:
        if name not in parts:
            continue
        part = parts[name]
        value = float(part.data) if isinstance(part, Tensor) else float(part)
        breakdown[name] = value
        if w[name] == 0:
            continue
        term = part * w[name] if isinstance(part, Tensor) else Tensor(value * w[name])
        total = term if total is None else total + term
    if total is None:
        total = Tensor(0.0)
    breakdown["total"] = float(total.data)
    return total, breakdown
