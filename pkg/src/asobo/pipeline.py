"""Beamformer bank + attention combinator + log-Mel + TCN as one trainable model."""

import logging
from dataclasses import dataclass

import numpy as np

from . import dsp
from .sacc import PARAM_NAMES, SaccParams, extract_weights, sacc_backward, sacc_forward
from .store import load_tensors, save_tensors
from .tcn import (Adam, TcnConfig, TcnModel, cross_entropy, posteriors, sliding_window_infer,
                  tcn_backward, tcn_forward)

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"


class AsoboModel:
    def __init__(self, sacc, tcn, mel_matrix, floor=dsp.LOG_FLOOR):
        self.sacc = sacc
        self.tcn = tcn
        self.mel_matrix = np.asarray(mel_matrix, dtype=float)
        self.floor = floor

    @classmethod
    def init(cls, n_bins=dsp.FFT_SIZE // 2 + 1, hidden=256, tcn_config=TcnConfig(), mel_matrix=None, rng=None):
        rng = np.random.default_rng(rng)
        if mel_matrix is None:
            mel_matrix = dsp.mel_filterbank(tcn_config.in_features).mel_matrix
        return cls(SaccParams.init(n_bins, hidden, rng), TcnModel.init(tcn_config, rng), mel_matrix)

    def params(self):
        """Trainable tensors keyed ``sacc.*`` / ``tcn.*`` (live references)."""
        out = {"sacc." + k: v for k, v in self.sacc.tensors().items()}
        out.update({"tcn." + k: v for k, v in self.tcn.params.items()})
        return out

    def forward(self, y_pow):
        """Logits and pre-softmax channel scores for beam power ``y_pow`` (..., T, P, F)."""
        y_bar, w_sa, sacc_cache = sacc_forward(y_pow, self.sacc)
        mel_energy = y_bar @ self.mel_matrix.T + self.floor
        feats = np.log(mel_energy)
        logits, tcn_cache = tcn_forward(feats, self.tcn)
        cache = {"sacc": sacc_cache, "tcn": tcn_cache, "mel_energy": mel_energy}
        return logits, w_sa, cache

    def backward(self, cache, d_logits):
        tg = tcn_backward(cache["tcn"], d_logits, self.tcn)
        d_feats = tg.pop("x")
        d_ybar = (d_feats / cache["mel_energy"]) @ self.mel_matrix
        sg = sacc_backward(cache["sacc"], d_ybar)
        grads = {"sacc." + k: sg[k] for k in PARAM_NAMES}
        grads.update({"tcn." + k: v for k, v in tg.items()})
        return grads

    def loss_and_grads(self, y_pow, labels):
        logits, _, cache = self.forward(y_pow)
        loss, d_logits = cross_entropy(logits, labels, self.tcn.config.num_classes)
        return loss, self.backward(cache, d_logits)

    def predict(self, y_pow):
        """Frame posteriors (T x C) and channel weights (T x P) for one sequence."""
        logits, w_sa, _ = self.forward(y_pow)
        return posteriors(logits), extract_weights(w_sa)

    def infer(self, y_pow, window=None, hop=None):
        """Sliding-window posteriors over a whole file plus the per-frame channel weights."""
        window = window or frames_in(2.0)
        hop = hop or int(round(0.5 * dsp.SAMPLE_RATE / dsp.HOP_LEN))
        probs = sliding_window_infer(y_pow, lambda chunk: self.predict(chunk)[0], window, hop)
        _, w_sa, _ = sacc_forward(y_pow, self.sacc)
        return probs, extract_weights(w_sa)

    def save(self, path, meta=None):
        arrays = {k: v for k, v in self.params().items()}
        arrays["mel_matrix"] = self.mel_matrix
        m = {"tcn_config": self.tcn.config.to_dict(), "hidden": self.sacc.hidden,
             "n_bins": self.sacc.n_bins, "floor": self.floor, **(meta or {})}
        save_tensors(path, arrays, m, kind=CHECKPOINT_KIND)

    @classmethod
    def load(cls, path):
        arrays, meta = load_tensors(path, kind=CHECKPOINT_KIND)
        sacc = SaccParams.from_tensors({k[5:]: v for k, v in arrays.items() if k.startswith("sacc.")})
        tcn = TcnModel(TcnConfig(**meta["tcn_config"]),
                       {k[4:]: np.array(v) for k, v in arrays.items() if k.startswith("tcn.")})
        model = cls(sacc, tcn, arrays["mel_matrix"], meta.get("floor", dsp.LOG_FLOOR))
        return model, meta


def frames_in(seconds, sr=dsp.SAMPLE_RATE):
    return dsp.num_frames(int(round(seconds * sr)))


@dataclass
class TrainingItem:
    """One training recording: multichannel samples and aligned frame labels."""
    samples: np.ndarray
    labels: np.ndarray


def sample_batch(items, bank, batch_size, segment_seconds, rng):
    """Random fixed-length crops (frame aligned) -> (beam power B x T x P x F, labels B x T)."""
    seg_samples = int(round(segment_seconds * dsp.SAMPLE_RATE))
    n_seg_frames = dsp.num_frames(seg_samples)
    powers, labels = [], []
    for _ in range(batch_size):
        item = items[rng.integers(len(items))]
        n_frames = len(item.labels)
        if n_frames <= n_seg_frames:
            start = 0
        else:
            start = int(rng.integers(n_frames - n_seg_frames + 1))
        a = start * dsp.HOP_LEN
        chunk = item.samples[:, a:a + seg_samples]
        if chunk.shape[1] < seg_samples:
            chunk = np.pad(chunk, ((0, 0), (0, seg_samples - chunk.shape[1])))
        lab = item.labels[start:start + n_seg_frames]
        lab = np.pad(lab, (0, n_seg_frames - len(lab)))
        powers.append(dsp.beam_power(chunk, bank))
        labels.append(lab)
    return np.stack(powers), np.stack(labels)


def train(model, items, bank, steps, batch_size=64, segment_seconds=2.0, lr=1e-3, rng=None,
          on_step=None):
    """Adam on frame cross-entropy over random crops. Returns the per-step losses."""
    rng = np.random.default_rng(rng)
    opt = Adam(lr=lr)
    params = model.params()
    losses = []
    for step in range(steps):
        y_pow, labels = sample_batch(items, bank, batch_size, segment_seconds, rng)
        loss, grads = model.loss_and_grads(y_pow, labels)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        opt.step(params, grads)
        losses.append(float(loss))
        if on_step is not None:
            on_step(step, float(loss))
        log.debug("step %d loss %.5f", step, loss)
    return losses
