import numpy as np
import pytest

from sfdehaze.functional import NumericalConsistencyError
from sfdehaze.selftest import spectral_suite
from sfdehaze.spectral import (SpectrumPair, decompose, exchange, log_amplitude_image, phase_image,
                               recompose, symmetry_error)


def test_constant_image_single_bin():
    spec = decompose(np.full((6, 8, 3), 0.25))
    expected = np.zeros((3, 6, 8))
    expected[:, 0, 0] = 0.25 * 48
    np.testing.assert_allclose(spec.amplitude, expected, atol=1e-9)
    assert spec.dims == (6, 8)


def test_shifted_image_same_amplitude_new_phase(rng):
    x = rng.uniform(0, 1, (16, 16, 3))
    a, b = decompose(x), decompose(np.roll(x, (2, 5), axis=(0, 1)))
    np.testing.assert_allclose(a.amplitude, b.amplitude, atol=1e-9)
    assert np.max(np.abs(a.phase - b.phase)) > 0.1


def test_recompose_examples():
    amp = np.zeros((3, 5, 4))
    amp[:, 0, 0] = 20
    np.testing.assert_allclose(recompose(SpectrumPair(amp, np.zeros_like(amp))), 1.0, atol=1e-9)
    z = np.zeros((3, 5, 4))
    np.testing.assert_array_equal(recompose(SpectrumPair(z, z)), 0.0)


def test_recompose_rejects_asymmetric_spectrum(rng):
    spec = decompose(rng.uniform(0, 1, (8, 8, 3)))
    spec.phase[0, 1, 2] += 1.0
    with pytest.raises(NumericalConsistencyError):
        recompose(spec)


def test_symmetry_error_small_for_real_images(rng):
    amp_err, ph_err = symmetry_error(decompose(rng.uniform(0, 1, (9, 12, 3))))
    assert amp_err < 1e-9 and ph_err < 1e-9


def test_exchange_self(rng):
    x = rng.uniform(0, 1, (20, 20, 3))
    a, b = exchange(x, x)
    np.testing.assert_allclose(a, x, atol=1e-5)
    np.testing.assert_allclose(b, x, atol=1e-5)


def test_exchange_swaps_amplitude_and_phase(rng):
    x, y = rng.uniform(0, 1, (2, 16, 16, 3))
    ab, _ = exchange(x, y, clamp=False)
    s = decompose(ab)
    np.testing.assert_allclose(s.amplitude, decompose(x).amplitude, atol=1e-8)


def test_exchange_dim_mismatch():
    with pytest.raises(ValueError):
        exchange(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


def test_visualizations_in_unit_range(rng):
    spec = decompose(rng.uniform(0, 1, (16, 16, 3)))
    for img in (log_amplitude_image(spec), phase_image(spec)):
        assert img.shape == (16, 16, 3)
        assert img.min() >= 0 and img.max() <= 1


def test_spectral_suite_passes():
    results = spectral_suite()
    assert all(r.passed for r in results), [r.line() for r in results]
