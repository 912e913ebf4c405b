import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asobo.array import (ArrayGeometry, SingularCoherenceError, SpatialFilterBank, array_response,
                         design_filterbank, diffuse_noise_coherence, steering_vector)
from asobo.dsp import rfft_freqs

GEOM = ArrayGeometry.uniform(8, 0.1, 343.0)
FREQS = rfft_freqs()


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(8, -0.1)
    with pytest.raises(ValueError):
        ArrayGeometry(3, 0.1, np.array([0.0, 2.0, 1.0]))
    assert np.allclose(GEOM.mic_angles, 2 * np.pi * np.arange(8) / 8)


def test_steering_dc_is_all_ones():
    assert np.array_equal(steering_vector(GEOM, 0.7, 0.0), np.ones(8, dtype=complex))


@given(st.floats(0, 2 * np.pi), st.floats(0, 8000))
def test_steering_unit_magnitude(theta, f):
    assert np.allclose(np.abs(steering_vector(GEOM, theta, f)), 1.0, atol=1e-12, rtol=0)


def test_steering_scalar_oracle():
    v = steering_vector(GEOM, GEOM.mic_angles[0], 1000.0)
    expected0 = cmath.exp(1j * 2 * math.pi * 1000 * 0.1 / 343)
    assert abs(v[0] - expected0) < 1e-14
    for m in range(8):
        ref = cmath.exp(1j * 2 * math.pi * 1000 * 0.1 / 343 * math.cos(0.0 - 2 * math.pi * m / 8))
        assert abs(v[m] - ref) < 1e-13


def test_coherence_dc_and_diagonal():
    c0 = diffuse_noise_coherence(GEOM, 0.0, 0.01)
    assert np.allclose(c0, np.ones((8, 8)) + 0.01 * np.eye(8))
    c = diffuse_noise_coherence(GEOM, 2345.0, 0.01)
    assert np.allclose(np.diag(c), 1.01)


def test_coherence_two_mic_scalar_oracle():
    # two mics 0.1 m apart: a "UCA" of radius 0.05 with M = 2
    g = ArrayGeometry.uniform(2, 0.05, 343.0)
    x = 2 * math.pi * 1000 * 0.1 / 343
    assert abs(diffuse_noise_coherence(g, 1000.0)[0, 1] - math.sin(x) / x) < 1e-12


@settings(max_examples=30)
@given(st.integers(2, 12), st.floats(0.02, 0.2), st.floats(0, 8000), st.floats(1e-6, 1e-1))
def test_coherence_hermitian_pd(M, r, f, eps):
    c = diffuse_noise_coherence(ArrayGeometry.uniform(M, r), f, eps)
    assert np.allclose(c, c.conj().T)
    np.linalg.cholesky(c)


def test_bank_angles_and_distortionless():
    bank = design_filterbank(GEOM, 4, FREQS)
    assert np.allclose(bank.steer_angles, [0, np.pi / 2, np.pi, 3 * np.pi / 2])
    for p in range(4):
        for k, f in enumerate(FREQS):
            v = steering_vector(GEOM, bank.steer_angles[p], f)
            assert abs(np.vdot(bank.weights[p, k], v) - 1) < 1e-9


def test_identity_covariance_gives_delay_and_sum():
    bank = design_filterbank(GEOM, 8, FREQS, noise_model="white")
    for p in range(8):
        for k in (0, 17, 128, 256):
            v = steering_vector(GEOM, bank.steer_angles[p], FREQS[k])
            assert np.allclose(bank.weights[p, k], v / 8, atol=1e-12, rtol=0)


def test_weights_match_explicit_inverse_oracle():
    bank = design_filterbank(GEOM, 8, FREQS)
    rng = np.random.default_rng(3)
    for p, k in zip(rng.integers(0, 8, 10), rng.integers(0, 257, 10)):
        f = FREQS[k]
        inv = np.linalg.inv(diffuse_noise_coherence(GEOM, f, 1e-3))
        v = steering_vector(GEOM, bank.steer_angles[p], f)
        w_h = v.conj() @ inv / (v.conj() @ inv @ v)
        assert np.allclose(bank.weights[p, k].conj(), w_h, rtol=1e-8, atol=1e-10)


def test_singular_coherence_reports_bin():
    with pytest.raises(SingularCoherenceError) as err:
        design_filterbank(GEOM, 4, [0.0, 1000.0], loading=0.0)
    assert err.value.bin_index == 0


def test_design_is_deterministic():
    a = design_filterbank(GEOM, 8, FREQS)
    b = design_filterbank(GEOM, 8, FREQS)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_response_on_axis_is_unity():
    bank = design_filterbank(GEOM, 8, FREQS)
    for p in range(8):
        assert abs(array_response(bank, p, bank.steer_angles[p], FREQS[40]) - 1) < 1e-9


def test_front_back_ratio():
    bank = design_filterbank(GEOM, 8, FREQS)
    band = FREQS[(FREQS >= 500) & (FREQS <= 4000)]
    for p in range(8):
        th = bank.steer_angles[p]
        for f in band:
            front = abs(array_response(bank, p, th, f))
            back = abs(array_response(bank, p, th + np.pi, f))
            assert front >= back
            # brute force: recompute weights for this bin from scratch
            inv = np.linalg.inv(diffuse_noise_coherence(GEOM, f, 1e-3))
            v = steering_vector(GEOM, th, f)
            w = inv @ v / (v.conj() @ inv @ v)
            assert abs(abs(np.vdot(w, steering_vector(GEOM, th + np.pi, f))) - back) < 1e-8


def test_single_mic_has_no_directivity():
    g = ArrayGeometry.uniform(1, 0.1)
    bank = design_filterbank(g, 1, [0.0, 1000.0, 4000.0])
    for th in np.linspace(0, 2 * np.pi, 13):
        assert abs(abs(array_response(bank, 0, th, 1000.0)) - 1) < 1e-12


def test_response_range_errors():
    bank = design_filterbank(GEOM, 4, FREQS)
    with pytest.raises(IndexError):
        array_response(bank, 4, 0.0, FREQS[3])
    with pytest.raises(ValueError):
        array_response(bank, 0, 0.0, 1234.5)


def test_bank_roundtrip(tmp_path):
    bank = design_filterbank(GEOM, 8, FREQS)
    bank.save(tmp_path / "fb.zip")
    back = SpatialFilterBank.load(tmp_path / "fb.zip")
    assert back.weights.tobytes() == bank.weights.tobytes()
    assert back.bin_freqs.tobytes() == bank.bin_freqs.tobytes()
    assert np.array_equal(back.geometry.mic_angles, GEOM.mic_angles)
    assert back.loading == bank.loading
    bank.save(tmp_path / "fb2.zip")
    assert (tmp_path / "fb.zip").read_bytes() == (tmp_path / "fb2.zip").read_bytes()
