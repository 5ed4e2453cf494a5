"""Amplitude/phase decomposition of images and the amplitude-phase exchange."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .image_ops import from_chw, to_chw
from .tensor import Tensor, no_grad


@dataclass
class SpectrumPair:
    """Per-channel amplitude and phase planes, both shaped (C, U, V), native DFT order."""

    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def dims(self) -> tuple:
        return self.amplitude.shape[-2:]


def decompose(img: np.ndarray) -> SpectrumPair:
    """Unnormalized 2D DFT of each channel of an H x W x 3 image, in polar form."""
    with no_grad():
        x = Tensor(to_chw(np.asarray(img, dtype=np.float64)))
        amp, phase = F.amp_phase(*F.fft2(x))
    return SpectrumPair(amp.data, phase.data)


def recompose(spec: SpectrumPair, clamp: bool = True) -> np.ndarray:
    """Inverse of :func:`decompose`.

    Raises :class:`~sfdehaze.functional.NumericalConsistencyError` when the
    spectrum is not conjugate-symmetric enough to come from a real image.
    ``clamp=False`` skips the final clamp to [0, 1] so exactness can be checked.
    """
    with no_grad():
        re, im = F.polar(Tensor(spec.amplitude), Tensor(spec.phase))
        out = F.ifft2(re, im, check_real=True).data
    img = from_chw(out)
    return np.clip(img, 0, 1) if clamp else img


def exchange(img_a: np.ndarray, img_b: np.ndarray, clamp: bool = True):
    """Swap spectra: returns (amplitude of A with phase of B, amplitude of B with phase of A)."""
    img_a, img_b = np.asarray(img_a), np.asarray(img_b)
    if img_a.shape != img_b.shape:
        raise ValueError(f"exchange needs equal shapes, got {img_a.shape} and {img_b.shape}")
    sa, sb = decompose(img_a), decompose(img_b)
    ab = recompose(SpectrumPair(sa.amplitude, sb.phase), clamp=clamp)
    ba = recompose(SpectrumPair(sb.amplitude, sa.phase), clamp=clamp)
    return ab, ba


def symmetry_error(spec: SpectrumPair) -> tuple[float, float]:
    """Largest violation of A(u,v) = A(-u,-v) and P(u,v) = -P(-u,-v) (phase taken mod 2*pi)."""
    U, V = spec.dims
    ci, cj = (-np.arange(U)) % U, (-np.arange(V)) % V
    amp_m = spec.amplitude[..., ci, :][..., :, cj]
    ph_m = spec.phase[..., ci, :][..., :, cj]
    amp_err = float(np.max(np.abs(spec.amplitude - amp_m)))
    d = spec.phase + ph_m
    d = np.abs((d + np.pi) % (2 * np.pi) - np.pi)
    # phase is meaningless where the amplitude vanishes
    d = np.where(spec.amplitude > 1e-9, d, 0.0)
    return amp_err, float(np.max(d))


def log_amplitude_image(spec: SpectrumPair) -> np.ndarray:
    """log(1 + A) per channel, scaled to [0, 1], as an H x W x 3 image."""
    la = np.log1p(spec.amplitude)
    peak = la.max(axis=(1, 2), keepdims=True)
    la = la / np.where(peak > 0, peak, 1)
    return from_chw(la)


def phase_image(spec: SpectrumPair) -> np.ndarray:
    """Phase mapped from (-pi, pi] to [0, 1] as an H x W x 3 image."""
    return from_chw((spec.phase + np.pi) / (2 * np.pi))
