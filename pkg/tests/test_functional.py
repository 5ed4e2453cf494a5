import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import sfdehaze.functional as F
from sfdehaze.functional import NumericalConsistencyError
from sfdehaze.gradcheck import grad_check
from sfdehaze.image_ops import ConfigError
from sfdehaze.tensor import ShapeError, Tensor, default_dtype


# ---------------------------------------------------------------------------
# conv2d

def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_constant_input_ones_kernel():
    x = np.full((1, 1, 6, 6), 5.0, dtype=np.float32)
    out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), pad=0)
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_allclose(out.data, 45.0)


def test_conv_matches_direct_loops(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros(out.shape)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(ShapeError, match="channel"):
        F.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv_even_kernel_rejected():
    with pytest.raises(ShapeError, match="kernel"):
        F.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 2, 2))))


def test_conv_bias_mismatch_names_axis():
    with pytest.raises(ShapeError, match="bias"):
        F.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((2, 1, 3, 3))), Tensor(np.zeros(3)))


def test_conv_grad_check():
    err = grad_check(lambda x, w, b: F.sum(F.conv2d(x, w, b, pad=1) ** 2), [(1, 2, 5, 5), (3, 2, 3, 3), (3,)])
    assert err < 1e-4


# ---------------------------------------------------------------------------
# instance norm

def test_instance_norm_constant_channel():
    x = Tensor(np.full((1, 1, 4, 4), 0.7))
    y, mu, sd = F.instance_norm(x, 1e-5)
    np.testing.assert_allclose(y.data, 0.0, atol=1e-6)
    assert mu.data[0, 0] == pytest.approx(0.7)
    assert sd.data[0, 0] == pytest.approx(np.sqrt(1e-5), rel=1e-5)


def test_instance_norm_two_point():
    with default_dtype(np.float64):
        y, mu, sd = F.instance_norm(Tensor(np.array([0.0, 2.0]).reshape(1, 1, 1, 2)), 1e-12)
    np.testing.assert_allclose(y.data.ravel(), [-1.0, 1.0], atol=1e-9)
    assert mu.data[0, 0] == pytest.approx(1.0)
    assert sd.data[0, 0] == pytest.approx(1.0)


def test_instance_norm_statistics(rng):
    x = Tensor(rng.standard_normal((2, 3, 8, 8)) * 3 + 1)
    y, _, _ = F.instance_norm(x, 1e-5)
    assert np.max(np.abs(y.data.mean(axis=(2, 3)))) < 1e-5
    assert np.max(np.abs(y.data.std(axis=(2, 3)) - 1)) < 1e-4


def test_instance_norm_rejects_bad_eps():
    with pytest.raises(ConfigError):
        F.instance_norm(Tensor(np.zeros((1, 1, 2, 2))), 0.0)


def test_instance_norm_grad_check():
    def fn(x):
        y, _, _ = F.instance_norm(x, 1e-5)
        return F.sum(y * y * x)
    assert grad_check(fn, [(1, 3, 6, 6)]) < 1e-4


# ---------------------------------------------------------------------------
# Fourier transforms

def test_fft_constant_image_is_dc_only():
    re, im = F.fft2(Tensor(np.full((1, 4, 6), 0.5)))
    expected = np.zeros((1, 4, 6))
    expected[0, 0, 0] = 0.5 * 24
    np.testing.assert_allclose(re.data, expected, atol=1e-5)
    np.testing.assert_allclose(im.data, 0.0, atol=1e-5)


def test_fft_impulse_is_flat():
    x = np.zeros((5, 7))
    x[0, 0] = 1
    re, im = F.fft2(Tensor(x))
    np.testing.assert_allclose(re.data, 1.0, atol=1e-6)
    np.testing.assert_allclose(im.data, 0.0, atol=1e-6)


def test_fft_matches_dft_matrix(rng):
    x = rng.standard_normal((6, 5))
    wh = np.exp(-2j * np.pi * np.outer(np.arange(6), np.arange(6)) / 6)
    ww = np.exp(-2j * np.pi * np.outer(np.arange(5), np.arange(5)) / 5)
    ref = wh @ x @ ww.T
    re, im = F.fft2(Tensor(x))
    np.testing.assert_allclose(re.data, ref.real, atol=1e-10)
    np.testing.assert_allclose(im.data, ref.imag, atol=1e-10)


def test_self_conjugate_bins_have_positive_zero_imag():
    x = np.random.default_rng(0).standard_normal((8, 8))
    _, im = F.fft2(Tensor(x))
    for u, v in [(0, 0), (0, 4), (4, 0), (4, 4)]:
        assert im.data[u, v] == 0 and not np.signbit(im.data[u, v])


def test_ifft_zero_and_dc():
    z = np.zeros((3, 4))
    np.testing.assert_array_equal(F.ifft2(Tensor(z), Tensor(z)).data, 0.0)
    dc = z.copy()
    dc[0, 0] = 12
    np.testing.assert_allclose(F.ifft2(Tensor(dc), Tensor(z)).data, 1.0)


def test_ifft_rejects_non_hermitian_spectrum():
    re = np.zeros((4, 4))
    im = np.zeros((4, 4))
    im[0, 1] = 100.0
    with pytest.raises(NumericalConsistencyError):
        F.ifft2(Tensor(re), Tensor(im))


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 64), w=st.integers(1, 64), seed=st.integers(0, 2**31 - 1))
def test_fft_round_trip(h, w, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (2, h, w)).astype(np.float32)
    back = F.ifft2(*F.fft2(Tensor(x))).data
    assert np.max(np.abs(back - x)) < 1e-5


@settings(max_examples=25, deadline=None)
@given(h=st.integers(2, 48), w=st.integers(2, 48), seed=st.integers(0, 2**31 - 1))
def test_parseval(h, w, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (h, w))
    amp, _ = F.amp_phase(*F.fft2(Tensor(x)))
    energy = np.sum(x ** 2)
    assert abs(energy - np.sum(amp.data.astype(np.float64) ** 2) / (h * w)) / energy < 1e-4


@settings(max_examples=20, deadline=None)
@given(dy=st.integers(-20, 20), dx=st.integers(-20, 20), seed=st.integers(0, 2**31 - 1))
def test_amplitude_shift_invariance(dy, dx, seed):
    x = np.random.default_rng(seed).uniform(0, 1, (16, 16))
    a0, _ = F.amp_phase(*F.fft2(Tensor(x)))
    a1, _ = F.amp_phase(*F.fft2(Tensor(np.roll(x, (dy, dx), axis=(0, 1)))))
    assert np.max(np.abs(a0.data - a1.data)) < 1e-5 * x.size


def test_amp_phase_345():
    amp, ph = F.amp_phase(Tensor([3.0]), Tensor([4.0]))
    assert amp.data[0] == pytest.approx(5.0)
    assert ph.data[0] == pytest.approx(np.arctan2(4, 3), abs=1e-6)


def test_amp_phase_zero_convention():
    re = Tensor([0.0], requires_grad=True)
    im = Tensor([0.0], requires_grad=True)
    amp, ph = F.amp_phase(re, im)
    assert amp.data[0] == 0 and ph.data[0] == 0
    from sfdehaze.tensor import backward
    backward(F.sum(amp) + F.sum(ph))
    assert re.grad[0] == 0 and im.grad[0] == 0


def test_phase_principal_range():
    amp, ph = F.amp_phase(Tensor([-1.0, -1.0, 1.0]), Tensor([0.0, -0.0, 0.0]))
    np.testing.assert_allclose(ph.data, [np.pi, np.pi, 0.0], atol=1e-7)


def test_polar_round_trip(rng):
    re, im = rng.standard_normal((2, 5, 5))
    amp, ph = F.amp_phase(Tensor(re), Tensor(im))
    r2, i2 = F.polar(amp, ph)
    np.testing.assert_allclose(r2.data, re, atol=1e-5)
    np.testing.assert_allclose(i2.data, im, atol=1e-5)


def test_amp_phase_fft_grad_check():
    def fn(x):
        amp, ph = F.amp_phase(*F.fft2(x))
        return F.sum(amp) + F.sum(F.sin(ph) * amp)
    assert grad_check(fn, [(1, 1, 8, 8)]) < 1e-3


# ---------------------------------------------------------------------------
# elementwise and structural operations

GRAD_OPS = {
    "relu": (lambda x: F.sum(F.relu(x) * x), [(3, 4)]),
    "add_broadcast": (lambda a, b: F.sum((a + b) ** 2), [(2, 3, 4), (3, 1)]),
    "mul_div": (lambda a, b: F.sum(a * b / (b * b + 1.0)), [(3, 3), (3, 3)]),
    "sqrt_power": (lambda a: F.sum(F.sqrt(a * a + 1.0) ** 3), [(5,)]),
    "concat": (lambda a, b: F.sum(F.concat([a, b], axis=1) ** 2), [(1, 2, 3, 3), (1, 1, 3, 3)]),
    "broadcast_to": (lambda a: F.sum(F.broadcast_to(F.reshape(a, (1, 2, 1, 1)), (1, 2, 3, 3)) ** 3), [(2,)]),
    "mean_axis": (lambda a: F.sum(F.mean(a, axis=(2, 3)) ** 2), [(2, 3, 4, 4)]),
    "getitem": (lambda a: F.sum(a[..., 1:3, :] ** 2), [(2, 5, 4)]),
    "l1": (lambda a, b: F.l1(a, b), [(4, 4), (4, 4)]),
    "resize_down": (lambda a: F.sum(F.resize_bilinear(a, 3, 2) ** 2), [(1, 1, 7, 5)]),
    "upsample2x": (lambda a: F.sum(F.upsample2x(a) ** 2), [(1, 2, 3, 4)]),
    "cos_sin": (lambda a: F.sum(F.cos(a) * F.sin(a * 2.0)), [(6,)]),
    "clamp": (lambda a: F.sum(F.clamp(a, -0.5, 0.5) * a), [(10,)]),
    "ifft2": (lambda a, b: F.sum(F.ifft2(a, b, check_real=False) ** 2), [(4, 4), (4, 4)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_ops(name, seed):
    fn, shapes = GRAD_OPS[name]
    assert grad_check(fn, shapes, seed=seed) < 1e-3


def test_min_max_axis_first_tie():
    x = Tensor(np.array([[[[1.0]], [[1.0]], [[0.5]]]]), requires_grad=True)
    from sfdehaze.tensor import backward
    backward(F.sum(F.max_axis(x, axis=1)))
    np.testing.assert_array_equal(x.grad.ravel(), [1, 0, 0])


def test_min_pool_matches_scipy(rng):
    from scipy import ndimage
    x = rng.uniform(0, 1, (2, 9, 11))
    out = F.min_pool2d(Tensor(x), 5).data
    ref = np.stack([ndimage.minimum_filter(p, size=5, mode="nearest") for p in x])
    np.testing.assert_array_equal(out, ref)


def test_min_pool_grad_check():
    assert grad_check(lambda a: F.sum(F.min_pool2d(a, 3) * a), [(1, 6, 6)]) < 1e-3


def test_min_pool_even_patch_rejected():
    with pytest.raises(ConfigError):
        F.min_pool2d(Tensor(np.zeros((4, 4))), 4)
