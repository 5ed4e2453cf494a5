"""Built-in invariant suites: finite-difference gradient checks and spectral identities.

Each suite returns a list of :class:`CheckResult`; ``run_all`` is what the
``selftest`` subcommand executes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functional as F
from .gradcheck import check_gradients
from .losses import amplitude_loss, cap_loss, dcp_loss, phase_loss, total_loss, LossWeights
from .models import DrnModule, SourceNet, StudentNet
from .spectral import decompose, exchange, recompose
from .tensor import Tensor, default_dtype

GRAD_TOL = 1e-3
SEEDS = tuple(range(10))


@dataclass
class CheckResult:
    name: str
    value: float
    limit: float
    passed: bool

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.value:.3e} (limit {self.limit:.0e})"


def _result(name, value, limit) -> CheckResult:
    return CheckResult(name, float(value), limit, bool(value < limit))


# ---------------------------------------------------------------------------
# gradient cases; each builds float64 inputs from ``rng`` and returns (fn, inputs)

def _weights(rng, shape):
    return Tensor(rng.standard_normal(shape))


def case_conv2d(rng):
    x = Tensor(rng.standard_normal((2, 3, 7, 7)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    r = _weights(rng, (2, 4, 4, 4))
    return (lambda x, w, b: F.sum(F.conv2d(x, w, b, stride=2, pad=1) * r)), [x, w, b]


def case_instance_norm(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 6)), requires_grad=True)
    r, rm, rs = _weights(rng, (2, 3, 6, 6)), _weights(rng, (2, 3)), _weights(rng, (2, 3))

    def fn(x):
        y, mu, sd = F.instance_norm(x, 1e-5)
        return F.sum(y * r) + F.sum(mu * rm) + F.sum(sd * rs)
    return fn, [x]


def case_fft_amp_phase(rng):
    x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
    ra, rp = _weights(rng, (1, 2, 8, 8)), _weights(rng, (1, 2, 8, 8))

    def fn(x):
        amp, ph = F.amp_phase(*F.fft2(x))
        # cos/sin keep the phase term smooth across the +-pi branch cut
        return F.sum(amp * ra) + F.sum(F.cos(ph) * rp) + F.sum(F.sin(ph) * rp)
    return fn, [x]


def case_drn(rng):
    drn = DrnModule(4).astype(np.float64)
    drn.fusion.weight.data = rng.standard_normal(drn.fusion.weight.shape) * 0.3
    drn.fusion.bias.data = rng.standard_normal(drn.fusion.bias.shape)
    x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
    r = _weights(rng, (2, 4, 6, 6))
    params = [x, drn.fusion.weight, drn.fusion.bias]
    return (lambda *_: F.sum(drn(x) * r)), params


def _image_pair(rng, shape=(2, 3, 8, 8)):
    a = Tensor(rng.uniform(0.05, 0.95, shape), requires_grad=True)
    b = Tensor(rng.uniform(0.05, 0.95, shape))
    return a, b


def case_phase_loss(rng):
    a, b = _image_pair(rng)
    ta = Tensor(rng.standard_normal((2, 4, 4, 4)), requires_grad=True)
    tb = Tensor(rng.standard_normal((2, 4, 4, 4)))
    return (lambda a, ta: phase_loss(a, b, {"t": ta}, {"t": tb})), [a, ta]


def case_amplitude_loss(rng):
    a, b = _image_pair(rng)
    return (lambda a: amplitude_loss(a, b)), [a]


def case_dcp_loss(rng):
    a, _ = _image_pair(rng)
    return (lambda a: dcp_loss(a, 3)), [a]


def case_cap_loss(rng):
    a, _ = _image_pair(rng)
    return (lambda a: cap_loss(a)), [a]


def _student(rng):
    source = SourceNet(seed=int(rng.integers(1 << 31)))
    # a trained-looking decoder so the output actually depends on the taps
    source.dec2.weight.data = rng.standard_normal(source.dec2.weight.shape).astype(np.float32) * 0.05
    student = StudentNet(source).astype(np.float64)
    for p in student.drn_parameters():
        p.data = p.data + rng.standard_normal(p.shape) * 0.05
    return student


def case_student_total_loss(rng):
    student = _student(rng)
    teacher = _student(np.random.default_rng(int(rng.integers(1 << 31)))).source
    x = Tensor(rng.uniform(0.1, 0.9, (1, 3, 16, 16)))
    ref = Tensor(rng.uniform(0.0, 1.0, (1, 3, 16, 16)))
    t_out, t_taps = teacher(x)
    t_out, t_taps = t_out.detach(), {k: v.detach() for k, v in t_taps.items()}
    params = student.drn_parameters()

    def fn(*_):
        out, taps = student(x)
        clamped = F.clamp(out, 0.0, 1.0)
        parts = {"phase": phase_loss(out, t_out, taps, t_taps), "amplitude": amplitude_loss(out, ref),
                 "dcp": dcp_loss(clamped, 3), "cap": cap_loss(clamped)}
        return total_loss(parts, LossWeights())[0]
    return fn, params


GRAD_CASES: dict[str, Callable] = {
    "conv2d": case_conv2d,
    "instance_norm": case_instance_norm,
    "fft2+amp_phase": case_fft_amp_phase,
    "drn_forward": case_drn,
    "phase_loss": case_phase_loss,
    "amplitude_loss": case_amplitude_loss,
    "dcp_loss": case_dcp_loss,
    "cap_loss": case_cap_loss,
    "student_total_loss": case_student_total_loss,
}


def grad_error(case: str, seed: int, max_elements: int = 24) -> float:
    rng = np.random.default_rng([seed, len(case)])
    with default_dtype(np.float64):
        fn, inputs = GRAD_CASES[case](rng)
        return check_gradients(fn, inputs, max_elements=max_elements, rng=rng)


def gradient_suite(seeds=SEEDS) -> list[CheckResult]:
    out = []
    for case in GRAD_CASES:
        worst = max(grad_error(case, s) for s in seeds)
        out.append(_result(f"grad {case} ({len(seeds)} seeds)", worst, GRAD_TOL))
    return out


# ---------------------------------------------------------------------------
# spectral identities

def spectral_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    round_trip = 0.0
    parseval = 0.0
    shift = 0.0
    for size in (8, 15, 16, 33, 64):
        x = rng.uniform(0, 1, (size, size, 3))
        spec = decompose(x)
        round_trip = max(round_trip, float(np.max(np.abs(recompose(spec, clamp=False) - x))))
        energy = float(np.sum(x ** 2))
        parseval = max(parseval, abs(energy - float(np.sum(spec.amplitude ** 2)) / size ** 2) / energy)
        rolled = decompose(np.roll(x, (3, -5), axis=(0, 1)))
        shift = max(shift, float(np.max(np.abs(rolled.amplitude - spec.amplitude))) / size)
    out.append(_result("fft round trip max abs error", round_trip, 1e-5))
    out.append(_result("Parseval relative error", parseval, 1e-4))
    # amplitudes scale with H*W; compare per pixel so the limit means the same at every size
    out.append(_result("amplitude shift invariance (per pixel)", shift, 1e-5))

    a = rng.uniform(0, 1, (32, 32, 3))
    b = rng.uniform(0, 1, (32, 32, 3))
    aa, _ = exchange(a, a, clamp=False)
    out.append(_result("exchange self-identity", float(np.max(np.abs(aa - a))), 1e-5))
    ab, ba = exchange(a, b, clamp=False)
    sa, sb, sab, sba = decompose(a), decompose(b), decompose(ab), decompose(ba)
    amp_err = max(np.max(np.abs(sab.amplitude - sa.amplitude)), np.max(np.abs(sba.amplitude - sb.amplitude)))
    out.append(_result("exchange keeps amplitude source (per pixel)", float(amp_err) / 32 ** 2, 1e-5))
    back, _ = exchange(ab, ba, clamp=False)
    out.append(_result("exchange involution", float(np.max(np.abs(back - a))), 1e-5))
    return out


def run_all(seeds=SEEDS) -> tuple[bool, list[str]]:
    lines = []
    ok = True
    for title, suite in (("gradient", lambda: gradient_suite(seeds)), ("spectral", spectral_suite)):
        t0 = time.perf_counter()
        results = suite()
        lines.extend(r.line() for r in results)
        lines.append(f"{title} suite: {time.perf_counter() - t0:.1f}s")
        ok &= all(r.passed for r in results)
    return ok, lines
