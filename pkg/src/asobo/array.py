"""Uniform circular array geometry and the fixed super-directive filter bank."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .store import load_tensors, save_tensors

DEFAULT_LOADING = 1e-3


class SingularCoherenceError(np.linalg.LinAlgError):
    """Raised when a noise coherence matrix cannot be Cholesky-factored."""

    def __init__(self, bin_index, freq, loading):
        self.bin_index = bin_index
        self.freq = freq
        super().__init__(
            f"noise coherence at bin {bin_index} ({freq:.2f} Hz) is not positive definite "
            f"with diagonal loading {loading:g}; increase the loading")


@dataclass(frozen=True)
class ArrayGeometry:
    mic_count: int
    radius: float
    mic_angles: np.ndarray = None
    sound_speed: float = 343.0

    def __post_init__(self):
        if self.mic_count < 1:
            raise ValueError("mic_count must be positive")
        if self.radius <= 0 or self.sound_speed <= 0:
            raise ValueError("radius and sound_speed must be positive")
        if self.mic_angles is None:
            angles = 2 * np.pi * np.arange(self.mic_count) / self.mic_count
        else:
            angles = np.asarray(self.mic_angles, dtype=float)
            if angles.shape != (self.mic_count,):
                raise ValueError("mic_angles must have length mic_count")
            if np.any(angles < 0) or np.any(angles >= 2 * np.pi) or np.any(np.diff(angles) <= 0):
                raise ValueError("mic_angles must be strictly increasing in [0, 2*pi)")
        angles.setflags(write=False)
        object.__setattr__(self, "mic_angles", angles)

    @classmethod
    def uniform(cls, mic_count=8, radius=0.1, sound_speed=343.0):
        return cls(mic_count, radius, None, sound_speed)

    def positions(self, center=(0.0, 0.0, 0.0)):
        """Microphone coordinates (M x 3) in the horizontal plane around ``center``."""
        c = np.asarray(center, dtype=float)
        xy = self.radius * np.stack([np.cos(self.mic_angles), np.sin(self.mic_angles)], axis=1)
        return c + np.column_stack([xy, np.zeros(self.mic_count)])

    def distances(self):
        pos = self.positions()
        return np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)

    def to_dict(self):
        return {"mic_count": self.mic_count, "radius": self.radius,
                "mic_angles": self.mic_angles.tolist(), "sound_speed": self.sound_speed}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["mic_count"]), float(d["radius"]), np.asarray(d["mic_angles"]),
                   float(d["sound_speed"]))


def steering_vector(geom, theta, f):
    """Far-field UCA steering vector towards azimuth ``theta`` at frequency ``f`` (Hz)."""
    if f < 0:
        raise ValueError("frequency must be nonnegative")
    phase = 2 * np.pi * f * geom.radius / geom.sound_speed * np.cos(theta - geom.mic_angles)
    return np.exp(1j * phase)


def diffuse_noise_coherence(geom, f, loading=0.0):
    """Spherically isotropic noise coherence ``sinc(2 pi f d_ij / c)`` plus ``loading * I``."""
    if loading < 0:
        raise ValueError("loading must be nonnegative")
    x = 2 * f * geom.distances() / geom.sound_speed
    # np.sinc is the normalized sinc: sin(pi x) / (pi x)
    gamma = np.sinc(x).astype(complex)
    gamma[np.diag_indices(geom.mic_count)] += loading
    return gamma


def _white_coherence(geom, f, loading=0.0):
    return (1.0 + loading) * np.eye(geom.mic_count, dtype=complex)


NOISE_MODELS = {"diffuse": diffuse_noise_coherence, "white": _white_coherence}


@dataclass(frozen=True)
class SpatialFilterBank:
    """P broadband beamformers; ``weights[p, k]`` is w_p at ``bin_freqs[k]``."""

    geometry: ArrayGeometry
    steer_angles: np.ndarray
    bin_freqs: np.ndarray
    weights: np.ndarray
    loading: float
    noise_model: str = "diffuse"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def filter_count(self):
        return len(self.steer_angles)

    def bin_index(self, f):
        idx = np.flatnonzero(np.isclose(self.bin_freqs, f, rtol=0, atol=1e-9))
        if idx.size == 0:
            raise ValueError(f"frequency {f} Hz is not one of the bank's bins")
        return int(idx[0])

    def save(self, path, meta=None):
        m = {"geometry": self.geometry.to_dict(), "loading": self.loading,
             "noise_model": self.noise_model, **(meta or {})}
        save_tensors(path, {"steer_angles": self.steer_angles, "bin_freqs": self.bin_freqs,
                            "weights": self.weights}, m, kind="filterbank")

    @classmethod
    def load(cls, path):
        arrays, meta = load_tensors(path, kind="filterbank")
        return cls(ArrayGeometry.from_dict(meta["geometry"]), arrays["steer_angles"],
                   arrays["bin_freqs"], arrays["weights"], float(meta["loading"]),
                   meta.get("noise_model", "diffuse"), meta)


def steer_angles(P):
    return 2 * np.pi * np.arange(P) / P


def design_filterbank(geom, P, bin_freqs, loading=DEFAULT_LOADING, noise_model="diffuse"):
    """Super-directive weights w_p(f) = S^-1 v_p / (v_p^H S^-1 v_p) for P uniform look angles.

    ``noise_model="white"`` replaces the diffuse coherence with the identity, which
    reduces the design to delay-and-sum.
    """
    if P < 1:
        raise ValueError("P must be at least 1")
    bin_freqs = np.asarray(bin_freqs, dtype=float)
    if bin_freqs.ndim != 1 or bin_freqs.size == 0 or np.any(bin_freqs < 0):
        raise ValueError("bin_freqs must be a nonempty list of nonnegative frequencies")
    coherence = NOISE_MODELS[noise_model]
    thetas = steer_angles(P)
    W = np.empty((P, bin_freqs.size, geom.mic_count), dtype=complex)
    for k, f in enumerate(bin_freqs):
        sigma = coherence(geom, f, loading)
        try:
            chol = scipy.linalg.cho_factor(sigma, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise SingularCoherenceError(k, f, loading) from None
        if np.any(np.abs(np.diag(chol[0])) < 1e-12 * geom.mic_count):
            raise SingularCoherenceError(k, f, loading)
        V = np.stack([steering_vector(geom, th, f) for th in thetas], axis=1)  # M x P
        X = scipy.linalg.cho_solve(chol, V, check_finite=False)
        denom = np.einsum("mp,mp->p", V.conj(), X).real
        W[:, k, :] = (X / denom).T
    thetas.setflags(write=False)
    bin_freqs.setflags(write=False)
    W.setflags(write=False)
    return SpatialFilterBank(geom, thetas, bin_freqs, W, float(loading), noise_model)


def array_response(bank, p, theta, f):
    """Beam pattern value w_p(f)^H v(theta, f)."""
    if not 0 <= p < bank.filter_count:
        raise IndexError(f"filter index {p} out of range for P={bank.filter_count}")
    k = bank.bin_index(f)
    return complex(np.vdot(bank.weights[p, k], steering_vector(bank.geometry, theta, f)))
