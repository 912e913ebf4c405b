"""STFT analysis, beamformer application and log-Mel features."""

from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile

from .store import load_tensors, save_tensors

SAMPLE_RATE = 16000
FRAME_LEN = 400  # 25 ms
HOP_LEN = 160  # 10 ms
FFT_SIZE = 512
N_MELS = 64
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MultichannelWave:
    samples: np.ndarray  # M x L
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if s.ndim != 2 or s.shape[1] == 0:
            raise ValueError("samples must be a nonempty M x L array")
        object.__setattr__(self, "samples", s)

    @property
    def num_channels(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return self.samples.shape[1] / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    bins: np.ndarray  # M x F x T complex
    bin_freqs: np.ndarray
    frame_ms: float = 25.0
    hop_ms: float = 10.0

    @property
    def num_frames(self):
        return self.bins.shape[2]


def num_frames(n_samples, frame_len=FRAME_LEN, hop=HOP_LEN):
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_centers(n_frames, sample_rate=SAMPLE_RATE, frame_len=FRAME_LEN, hop=HOP_LEN):
    """Center time (s) of each analysis frame."""
    return (np.arange(n_frames) * hop + frame_len / 2) / sample_rate


def rfft_freqs(sample_rate=SAMPLE_RATE, n_fft=FFT_SIZE):
    return np.fft.rfftfreq(n_fft, 1.0 / sample_rate)


def stft(wave, frame_len=FRAME_LEN, hop=HOP_LEN, n_fft=FFT_SIZE):
    """Hann-windowed one-sided STFT of every channel, shape M x F x T."""
    if not isinstance(wave, MultichannelWave):
        wave = MultichannelWave(wave)
    x = wave.samples
    if x.shape[1] < frame_len:
        raise ValueError(f"signal has {x.shape[1]} samples, shorter than one {frame_len}-sample frame")
    T = num_frames(x.shape[1], frame_len, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=1)[:, ::hop][:, :T]
    window = hann_window(frame_len)
    spec = np.fft.rfft(frames * window, n=n_fft, axis=-1)  # M x T x F
    return Spectrogram(np.ascontiguousarray(spec.transpose(0, 2, 1)),
                       rfft_freqs(wave.sample_rate, n_fft),
                       1000.0 * frame_len / wave.sample_rate, 1000.0 * hop / wave.sample_rate)


def hann_window(n):
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def apply_filterbank(S, bank):
    """Beamformer outputs Y[t, p, f] = w_p(f)^H S(t, f)."""
    M, F, _ = S.bins.shape
    if M != bank.geometry.mic_count:
        raise ValueError(f"spectrogram has {M} channels but the bank expects {bank.geometry.mic_count}")
    if F != len(bank.bin_freqs) or not np.allclose(S.bin_freqs, bank.bin_freqs):
        raise ValueError("spectrogram bin frequencies do not match the filter bank")
    return np.ascontiguousarray(np.einsum("pfm,mft->tpf", bank.weights.conj(), S.bins, optimize=True))


def power(Y):
    return Y.real ** 2 + Y.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    mel_matrix: np.ndarray  # n_mels x F
    f_low: float
    f_high: float
    centers: np.ndarray


def mel_filterbank(n_mels=N_MELS, sample_rate=SAMPLE_RATE, n_fft=FFT_SIZE, f_low=0.0, f_high=None):
    """HTK-scale triangular filters with unit peak (no area normalization)."""
    f_high = sample_rate / 2 if f_high is None else f_high
    edges = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), n_mels + 2))
    freqs = rfft_freqs(sample_rate, n_fft)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    mat = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(mat, f_low, f_high, edges[1:-1])


def mel_project(power_spec, mel, floor=LOG_FLOOR):
    """Log-Mel energies log(M @ p + floor) for each frame of a T x F power spectrum."""
    mat = mel.mel_matrix if isinstance(mel, MelFilterbank) else mel
    if power_spec.shape[-1] != mat.shape[1]:
        raise ValueError(f"power spectrum has {power_spec.shape[-1]} bins, Mel matrix expects {mat.shape[1]}")
    return np.log(power_spec @ mat.T + floor)


def beam_power(samples, bank):
    """Multichannel wave -> beamformer power tensor T x P x F."""
    return power(apply_filterbank(stft(samples), bank))


def read_wav(path, expected_rate=SAMPLE_RATE):
    """Read a PCM16 / float WAV as an M x L float array in [-1, 1]."""
    rate, data = scipy.io.wavfile.read(path)
    if rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (resampling is not supported)")
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(float) / 2147483648.0
    elif data.dtype.kind == "f":
        data = data.astype(float)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return MultichannelWave(np.atleast_2d(data.T) if data.ndim == 2 else data[None, :], rate)


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    x = np.atleast_2d(samples).astype(np.float32)
    scipy.io.wavfile.write(path, sample_rate, x.T if x.shape[0] > 1 else x[0])


def save_features(path, features, meta=None):
    save_tensors(path, {"features": np.asarray(features, dtype=float)}, meta, kind="features")


def load_features(path):
    arrays, meta = load_tensors(path, kind="features")
    return arrays["features"], meta
