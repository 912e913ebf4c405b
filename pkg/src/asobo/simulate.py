"""Shoebox room simulation (image-source RIRs) and localization scenarios."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.signal

from .array import ArrayGeometry, steer_angles
from .dsp import FRAME_LEN, HOP_LEN, SAMPLE_RATE, frame_centers, num_frames

FRAC_TAPS = 81
_FRAC_RES = 128  # fractional-delay phases per sample


@dataclass(frozen=True)
class RoomConfig:
    dims: tuple = (6.0, 5.0, 3.0)
    t60: float = 0.6
    array_center: tuple = (3.0, 2.5, 1.2)
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry.uniform)
    max_order: int = 60
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.t60 < 0:
            raise ValueError("t60 must be nonnegative")
        if not inside_room(self.dims, self.geometry.positions(self.array_center)):
            raise ValueError("array does not fit strictly inside the room")

    @property
    def sound_speed(self):
        return self.geometry.sound_speed

    def mic_positions(self):
        return self.geometry.positions(self.array_center)

    def to_dict(self):
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        return d


def inside_room(dims, points, margin=0.0):
    pts = np.atleast_2d(points)
    return bool(np.all(pts > margin) and np.all(pts < np.asarray(dims) - margin))


def sabine_absorption(dims, t60, c=343.0):
    """Uniform energy absorption coefficient giving ``t60`` by Sabine's formula."""
    if t60 == 0:
        return 1.0
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = 24 * math.log(10) * volume / (c * surface * t60)
    if alpha > 1:
        raise ValueError(f"T60={t60}s is too short for a {dims} room (absorption {alpha:.2f} > 1)")
    return alpha


def _frac_table(taps=FRAC_TAPS, res=_FRAC_RES):
    # rows: fractional delay u in [0, 1); columns: taps at integer offsets -(taps//2)..taps//2
    half = taps // 2
    u = np.arange(res) / res
    n = np.arange(-half, half + 1)
    x = n[None, :] - u[:, None]
    win = 0.5 + 0.5 * np.cos(np.pi * x / (half + 1))
    return np.sinc(x) * win


_TABLE = _frac_table()


def _image_sources(room, source_pos, max_dist):
    """Image positions (N x 3) and reflection counts (N,) within ``max_dist`` of the array."""
    axes_pos, axes_refl = [], []
    for L, s in zip(room.dims, source_pos):
        n_max = int(math.ceil(max_dist / (2 * L))) + 1
        n = np.arange(-n_max, n_max + 1)
        pos = np.concatenate([2 * n * L + s, 2 * n * L - s])
        refl = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
        axes_pos.append(pos)
        axes_refl.append(refl)
    gx, gy, gz = np.meshgrid(*axes_pos, indexing="ij")
    rx, ry, rz = np.meshgrid(*axes_refl, indexing="ij")
    pos = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    order = (rx + ry + rz).ravel()
    keep = (np.linalg.norm(pos - np.asarray(room.array_center), axis=1) <= max_dist + 1.0) & (order <= room.max_order)
    return pos[keep], order[keep]


def rir_length(room, mic_pos, source_pos):
    d = np.linalg.norm(np.atleast_2d(mic_pos) - np.asarray(source_pos), axis=1).max()
    direct = d / room.sound_speed * room.sample_rate
    return int(max(math.ceil(room.t60 * room.sample_rate), math.ceil(direct)) + FRAC_TAPS // 2 + 1)


def simulate_rir(room, source_pos, mic_pos, fractional=True, length=None):
    """Image-source impulse responses from ``source_pos`` to each row of ``mic_pos``.

    Returns an array (n_mics, length). Each image contributes ``beta**order / (4 pi d)``
    at delay ``d / c``, placed with an 81-tap windowed-sinc fractional delay (or rounded
    to the nearest sample when ``fractional`` is False).
    """
    mic_pos = np.atleast_2d(np.asarray(mic_pos, dtype=float))
    source_pos = np.asarray(source_pos, dtype=float)
    if not inside_room(room.dims, np.vstack([mic_pos, source_pos])):
        raise ValueError("source and microphones must lie strictly inside the room")
    d_direct = np.linalg.norm(mic_pos - source_pos, axis=1)
    if np.any(d_direct < 1e-9):
        raise ValueError("source coincides with a microphone")
    fs, c = room.sample_rate, room.sound_speed
    n_out = rir_length(room, mic_pos, source_pos) if length is None else int(length)
    beta = math.sqrt(1.0 - sabine_absorption(room.dims, room.t60, c))
    if beta == 0.0:
        images, order = source_pos[None, :], np.zeros(1, dtype=int)
    else:
        images, order = _image_sources(room, source_pos, c * n_out / fs)
    gain_refl = beta ** order

    out = np.zeros((len(mic_pos), n_out))
    half = FRAC_TAPS // 2
    for m, mp in enumerate(mic_pos):
        dist = np.linalg.norm(images - mp, axis=1)
        delay = dist / c * fs
        ok = delay < n_out
        delay, amp = delay[ok], gain_refl[ok] / (4 * np.pi * dist[ok])
        if not fractional:
            np.add.at(out[m], np.rint(delay).astype(int), amp)
            continue
        # accumulate on a grid of _FRAC_RES phases per sample, then interpolate each
        # phase with its windowed-sinc row (polyphase form of the fractional delay)
        fine_idx = np.rint(delay * _FRAC_RES).astype(int)
        fine = np.bincount(fine_idx, weights=amp, minlength=n_out * _FRAC_RES)
        fine = np.pad(fine[:n_out * _FRAC_RES].reshape(n_out, _FRAC_RES), ((half, half), (0, 0)))
        for k in range(FRAC_TAPS):
            # tap k holds offset (k - half) from the base sample
            out[m] += fine[2 * half - k:2 * half - k + n_out] @ _TABLE[:, k]
    return out


def schroeder_decay_db(rir):
    """Backward-integrated energy decay curve in dB (0 dB at t=0)."""
    e = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    return 10 * np.log10(np.maximum(e / e[0], 1e-300))


def spatialize(sources, rirs, length=None, peak=0.9):
    """Sum of ``conv(source, rir[source][m])`` for every mic ``m``.

    ``sources`` is a list of ``(mono, onset_samples)``; ``rirs[s]`` is (M, K_s).
    The mixture is rescaled to ``peak`` only if it would clip.
    """
    if len(sources) != len(rirs):
        raise ValueError("need one RIR set per source")
    n_mics = np.atleast_2d(rirs[0]).shape[0]
    needed = max(onset + len(x) + np.atleast_2d(r).shape[1] - 1 for (x, onset), r in zip(sources, rirs))
    if length is None:
        length = needed
    elif needed > length:
        raise ValueError(f"spatialized content needs {needed} samples, exceeding length {length}")
    out = np.zeros((n_mics, length))
    for (x, onset), r in zip(sources, rirs):
        r = np.atleast_2d(r)
        if r.shape[0] != n_mics:
            raise ValueError("all RIR sets must have the same number of microphones")
        y = scipy.signal.fftconvolve(np.asarray(x, dtype=float)[None, :], r, axes=1)
        out[:, onset:onset + y.shape[1]] += y
    top = np.abs(out).max()
    if top > 1.0:
        out *= peak / top
    return out


# --- synthetic speech proxy -------------------------------------------------

def _speaker_filter(rng, sr):
    formants = [rng.uniform(300, 850), rng.uniform(900, 2300), rng.uniform(2400, 3600)]
    sos = [scipy.signal.butter(2, [f * 0.8, f * 1.2], btype="bandpass", fs=sr, output="sos") for f in formants]
    gains = np.array([1.0, 0.6, 0.3]) * rng.uniform(0.7, 1.3, 3)
    return sos, gains


def speech_proxy(n_samples, activity, rng, sr=SAMPLE_RATE):
    """Amplitude-modulated, formant-filtered pulse/noise bursts active only in ``activity``.

    ``activity`` is a list of (onset, offset) seconds. Output RMS over the active
    region is 0.1.
    """
    t = np.arange(n_samples) / sr
    f0 = rng.uniform(100, 220) * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t))
    phase = np.cumsum(f0 / sr)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    excitation = 0.7 * pulses * np.sqrt(sr / f0) + 0.3 * rng.standard_normal(n_samples)
    sos, gains = _speaker_filter(rng, sr)
    voiced = sum(g * scipy.signal.sosfilt(s, excitation) for s, g in zip(sos, gains))
    rate = rng.uniform(3.0, 6.0)
    envelope = np.sin(np.pi * rate * t + rng.uniform(0, np.pi)) ** 2 * 0.85 + 0.15
    gate = np.zeros(n_samples)
    ramp = int(0.01 * sr)
    for on, off in activity:
        a, b = int(round(on * sr)), min(int(round(off * sr)), n_samples)
        if b <= a:
            continue
        seg = np.ones(b - a)
        r = min(ramp, (b - a) // 2)
        if r > 0:
            w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            seg[:r] *= w
            seg[-r:] *= w[::-1]
        gate[a:b] = seg
    x = voiced * envelope * gate
    active = gate > 0.5
    rms = np.sqrt(np.mean(x[active] ** 2)) if active.any() else 0.0
    return x * (0.1 / rms) if rms > 0 else x


def random_activity(num_sources, duration, rng, min_len=1.0, max_len=2.6, margin=0.15):
    """One speech burst per source at a random position within ``duration`` seconds."""
    span = duration - 2 * margin
    if span <= 0:
        raise ValueError("duration too short for the activity margins")
    out = []
    for _ in range(num_sources):
        length = rng.uniform(min(min_len, span), min(max_len, span))
        onset = rng.uniform(margin, duration - margin - length)
        out.append([(round(onset, 4), round(onset + length, 4))])
    return out


def activity_from_energy(mono, sr=SAMPLE_RATE, threshold_db=-40.0):
    """Active intervals where 25 ms frame energy exceeds ``threshold_db`` dBFS."""
    x = np.asarray(mono, dtype=float)
    T = num_frames(len(x))
    if T == 0:
        return []
    frames = np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)[::HOP_LEN][:T]
    level = 10 * np.log10(np.mean(frames ** 2, axis=1) + 1e-20)
    active = level > threshold_db
    intervals, start = [], None
    for i, a in enumerate(active):
        if a and start is None:
            start = i * HOP_LEN / sr
        elif not a and start is not None:
            intervals.append((start, ((i - 1) * HOP_LEN + FRAME_LEN) / sr))
            start = None
    if start is not None:
        intervals.append((start, len(x) / sr))
    return intervals


def speaker_counts(activity, times):
    """Number of active sources at each time (onset inclusive, offset exclusive)."""
    times = np.asarray(times, dtype=float)
    count = np.zeros(times.shape, dtype=int)
    for intervals in activity:
        on = np.zeros(times.shape, dtype=bool)
        for a, b in intervals:
            on |= (times >= a) & (times < b)
        count += on
    return count


def frame_labels(activity, n_frames, sr=SAMPLE_RATE):
    """Class per frame from the speaker count at the frame center: 0, 1 or 2 (>= 2)."""
    return np.minimum(speaker_counts(activity, frame_centers(n_frames, sr)), 2)


# --- scenarios ----------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    num_sources: int = 2
    mode: str = "easy"
    filter_count: int = 8
    distance_range: tuple = (1.0, 2.0)
    duration: float = 4.0
    snr_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("easy", "hard"):
            raise ValueError("mode must be 'easy' or 'hard'")
        if not 1 <= self.num_sources <= self.filter_count:
            raise ValueError("need 1 <= num_sources <= filter_count")


@dataclass
class Scenario:
    samples: np.ndarray  # M x L
    true_angles: np.ndarray  # radians
    true_filter_indices: list
    activity: list  # per source list of (onset, offset)
    labels: np.ndarray
    positions: np.ndarray
    mode: str = "easy"

    def record(self, scenario_id, wave_path=None, label_path=None):
        return {"id": scenario_id, "wave": wave_path, "labels": label_path, "mode": self.mode,
                "true_angles_deg": [round(float(np.degrees(a)), 6) for a in self.true_angles],
                "filter_indices": [int(i) for i in self.true_filter_indices],
                "activity": [[list(map(float, iv)) for iv in src] for src in self.activity]}


def place_source(room, angle, distance_range, rng, attempts=100):
    center = np.asarray(room.array_center, dtype=float)
    for _ in range(attempts):
        d = rng.uniform(*distance_range)
        pos = center + d * np.array([np.cos(angle), np.sin(angle), 0.0])
        if inside_room(room.dims, pos, margin=0.1):
            return pos
    raise ValueError(f"could not place a source at {np.degrees(angle):.1f} deg inside the room "
                     f"after {attempts} attempts")


def generate_scenario(spec, room, rng, sources=None):
    """Spatialized L-source mixture with sources on (easy) or near (hard) filter directions.

    ``sources`` optionally supplies mono 16 kHz signals; activity is then taken from
    an energy gate. Otherwise the synthetic speech proxy is used.
    """
    rng = np.random.default_rng(rng)
    sr = room.sample_rate
    n_samples = int(round(spec.duration * sr))
    grid = steer_angles(spec.filter_count)
    idx = rng.choice(spec.filter_count, size=spec.num_sources, replace=False)
    angles = grid[idx].copy()
    if spec.mode == "hard":
        angles += np.radians(rng.uniform(-5.0, 5.0, spec.num_sources))
    positions = np.stack([place_source(room, a, spec.distance_range, rng) for a in angles])

    if sources is None:
        activity = random_activity(spec.num_sources, spec.duration, rng)
        monos = [speech_proxy(n_samples, act, rng, sr) for act in activity]
    else:
        if len(sources) != spec.num_sources:
            raise ValueError("number of supplied sources does not match num_sources")
        monos = [np.asarray(s, dtype=float)[:n_samples] for s in sources]
        monos = [np.pad(m, (0, n_samples - len(m))) for m in monos]
        activity = [activity_from_energy(m, sr) for m in monos]

    mics = room.mic_positions()
    rirs = [simulate_rir(room, pos, mics) for pos in positions]
    mix = spatialize([(m, 0) for m in monos], rirs)[:, :n_samples]
    if np.isfinite(spec.snr_db):
        sig_power = np.mean(mix ** 2)
        noise = rng.standard_normal(mix.shape) * np.sqrt(sig_power / 10 ** (spec.snr_db / 10))
        mix = mix + noise
    top = np.abs(mix).max()
    if top > 1.0:
        mix *= 0.9 / top
    labels = frame_labels(activity, num_frames(n_samples), sr)
    return Scenario(mix, angles, [int(i) for i in idx], activity, labels, positions, spec.mode)


def scenario_rng(seed, index):
    """Independent RNG stream per scenario so serial and parallel generation agree."""
    return np.random.default_rng([int(seed), int(index)])


# --- label files --------------------------------------------------------------

def write_rttm(path, file_id, segments, header=None):
    """Write ``(onset, offset, speaker)`` segments in RTTM-like form."""
    with open(path, "w") as fh:
        if header:
            for k, v in header.items():
                fh.write(f";; {k}={v}\n")
        for on, off, spk in sorted(segments, key=lambda s: (s[0], s[1], str(s[2]))):
            fh.write(f"SPEAKER {file_id} 1 {on:.3f} {off - on:.3f} <NA> <NA> {spk} <NA> <NA>\n")


def read_rttm(path):
    """Returns ``(segments, header)``; segments are ``(onset, offset, speaker)``."""
    segments, header = [], {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith(";;"):
                key, _, value = line[2:].strip().partition("=")
                header[key.strip()] = value.strip()
                continue
            parts = line.split()
            if parts[0] != "SPEAKER":
                continue
            on, dur = float(parts[3]), float(parts[4])
            segments.append((on, on + dur, parts[7]))
    return segments, header


def activity_segments(activity):
    return [(on, off, f"spk{s}") for s, intervals in enumerate(activity) for on, off in intervals]


def write_manifest(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
