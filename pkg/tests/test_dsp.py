import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asobo import dsp
from asobo.array import ArrayGeometry, SpatialFilterBank, design_filterbank, steering_vector


def naive_dft(frame, n_fft):
    n = np.arange(len(frame))
    k = np.arange(n_fft // 2 + 1)[:, None]
    return (frame * np.exp(-2j * np.pi * k * n / n_fft)).sum(axis=1)


def test_frame_count_and_shape():
    x = np.zeros((3, 16000))
    S = dsp.stft(x)
    assert S.bins.shape == (3, 257, (16000 - 400) // 160 + 1)
    assert np.all(S.bins == 0)


@given(st.integers(400, 20000))
def test_frame_count_formula(L):
    assert dsp.stft(np.zeros(L)).num_frames == (L - 400) // 160 + 1 == dsp.num_frames(L)


def test_short_signal_rejected():
    with pytest.raises(ValueError):
        dsp.stft(np.zeros(399))


def test_tone_peaks_at_its_bin():
    k = 64
    f = k * 16000 / 512
    x = np.sin(2 * np.pi * f * np.arange(8000) / 16000)
    S = dsp.stft(x)
    assert np.all(np.argmax(np.abs(S.bins[0]), axis=0) == round(f * 512 / 16000))


def test_frames_match_naive_dft():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 4000))
    S = dsp.stft(x)
    win = dsp.hann_window(400)
    for t in (0, 5, S.num_frames - 1):
        for m in range(2):
            ref = naive_dft(x[m, t * 160:t * 160 + 400] * win, 512)
            assert np.linalg.norm(S.bins[m, :, t] - ref) <= 1e-6 * np.linalg.norm(ref)


@settings(max_examples=25)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_stft_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 1, 1200))
    lhs = dsp.stft(a * x + b * y).bins
    rhs = a * dsp.stft(x).bins + b * dsp.stft(y).bins
    assert np.allclose(lhs, rhs, atol=1e-9, rtol=0)


def test_power_values():
    assert np.array_equal(dsp.power(np.array([1 + 0j, 0j, 3 + 4j])), [1.0, 0.0, 25.0])


def test_identity_filter_passes_through():
    x = np.random.default_rng(1).standard_normal((1, 2000))
    S = dsp.stft(x)
    bank = SpatialFilterBank(ArrayGeometry.uniform(1, 0.1), np.zeros(1), S.bin_freqs,
                             np.ones((1, 257, 1), dtype=complex), 0.0)
    Y = dsp.apply_filterbank(S, bank)
    assert np.array_equal(Y[:, 0, :], S.bins[0].T)


def test_delay_and_sum_on_identical_channels():
    geom = ArrayGeometry.uniform(8, 0.1)
    x = np.random.default_rng(2).standard_normal(3000)
    S = dsp.stft(np.tile(x, (8, 1)))
    bank = design_filterbank(geom, 4, S.bin_freqs, noise_model="white")
    Y = dsp.apply_filterbank(S, bank)
    for p in range(4):
        for k in (3, 100, 250):
            v = steering_vector(geom, bank.steer_angles[p], S.bin_freqs[k])
            gain = np.vdot(v, np.ones(8)) / 8
            assert np.allclose(Y[:, p, k], S.bins[0, k, :] * gain, atol=1e-12)


def plane_wave(geom, theta, n, rng):
    """Broadband noise arriving from azimuth ``theta`` (circular fractional advances)."""
    s = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / 16000)
    tau = geom.radius * np.cos(theta - geom.mic_angles) / geom.sound_speed
    return np.fft.irfft(s[None, :] * np.exp(2j * np.pi * f[None, :] * tau[:, None]), n)


def test_plane_wave_favours_facing_filter():
    geom = ArrayGeometry.uniform(8, 0.1)
    bank = design_filterbank(geom, 8, dsp.rfft_freqs())
    band = (bank.bin_freqs >= 500) & (bank.bin_freqs <= 4000)
    rng = np.random.default_rng(4)
    for p in range(8):
        x = plane_wave(geom, bank.steer_angles[p], 16000, rng)
        Y = np.abs(dsp.apply_filterbank(dsp.stft(x), bank))[:, :, band].mean(axis=(0, 2))
        assert Y[p] >= Y[(p + 4) % 8]
        assert np.argmax(Y) == p


def test_apply_filterbank_mismatch():
    bank = design_filterbank(ArrayGeometry.uniform(4, 0.05), 2, dsp.rfft_freqs())
    with pytest.raises(ValueError):
        dsp.apply_filterbank(dsp.stft(np.zeros((3, 1000))), bank)


def test_mel_rows_are_triangles():
    mel = dsp.mel_filterbank()
    M = mel.mel_matrix
    assert M.shape == (64, 257)
    assert np.all(M >= 0) and np.all(M.sum(axis=1) > 0)
    for row in M:
        nz = np.flatnonzero(row)
        seg = row[nz[0]:nz[-1] + 1]
        peak = np.argmax(seg)
        assert np.all(np.diff(seg[:peak + 1]) >= 0) and np.all(np.diff(seg[peak:]) <= 0)
    freqs = dsp.rfft_freqs()
    interior = (freqs > mel.f_low) & (freqs < mel.f_high)
    assert np.all(M[:, interior].max(axis=0) > 0)
    assert np.all(np.diff(dsp.hz_to_mel(mel.centers)) > 0)
    # adjacent triangles overlap: each filter's support reaches the next filter's center
    edges = dsp.mel_to_hz(np.linspace(0, dsp.hz_to_mel(8000), 66))
    assert np.allclose(mel.centers, edges[1:-1])
    assert np.all(edges[2:-1] > mel.centers[:-1])


def test_mel_project_floor_and_impulse():
    mel = dsp.mel_filterbank()
    out = dsp.mel_project(np.zeros((3, 257)), mel)
    assert np.allclose(out, np.log(1e-10))
    spec = np.zeros((1, 257))
    spec[0, 40] = 5.0
    out = dsp.mel_project(spec, mel)[0]
    above = out > np.log(1e-10) + 1e-6
    assert np.array_equal(above, mel.mel_matrix[:, 40] > 0)


def test_mel_project_matches_dot_oracle():
    mel = dsp.mel_filterbank()
    rng = np.random.default_rng(5)
    frame = rng.random(257)
    got = dsp.mel_project(frame[None], mel)[0]
    for i in range(64):
        acc = 0.0
        for k in range(257):
            acc += mel.mel_matrix[i, k] * frame[k]
        assert abs(got[i] - np.log(acc + 1e-10)) < 1e-9


def test_wav_roundtrip(tmp_path):
    x = np.random.default_rng(6).uniform(-0.5, 0.5, (4, 1600))
    dsp.write_wav(tmp_path / "a.wav", x)
    w = dsp.read_wav(tmp_path / "a.wav")
    assert w.samples.shape == (4, 1600)
    assert np.allclose(w.samples, x, atol=1e-7)


def test_wav_rate_rejected(tmp_path):
    import scipy.io.wavfile
    scipy.io.wavfile.write(tmp_path / "b.wav", 8000, np.zeros(800, dtype=np.int16))
    with pytest.raises(ValueError, match="sample rate"):
        dsp.read_wav(tmp_path / "b.wav")


def test_pcm16_scaling(tmp_path):
    import scipy.io.wavfile
    scipy.io.wavfile.write(tmp_path / "c.wav", 16000, np.full((800, 2), 16384, dtype=np.int16))
    w = dsp.read_wav(tmp_path / "c.wav")
    assert w.samples.shape == (2, 800) and np.allclose(w.samples, 0.5)


def test_feature_container(tmp_path):
    feats = np.random.default_rng(7).standard_normal((10, 64))
    dsp.save_features(tmp_path / "f.zip", feats, {"source": "x"})
    back, meta = dsp.load_features(tmp_path / "f.zip")
    assert back.tobytes() == feats.tobytes() and meta["source"] == "x"
