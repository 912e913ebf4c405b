"""Dilated TCN frame classifier (no speech / one speaker / overlap) with manual gradients."""

from dataclasses import asdict, dataclass

import numpy as np
import scipy.signal

from .sacc import softmax

LN_EPS = 1e-5


@dataclass(frozen=True)
class TcnConfig:
    in_features: int = 64
    hidden_channels: int = 64
    kernel_size: int = 3
    blocks: int = 3
    layers_per_block: int = 5
    num_classes: int = 3

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for symmetric same-padding")

    @property
    def receptive_field(self):
        return 1 + self.blocks * (self.kernel_size - 1) * (2 ** self.layers_per_block - 1)

    def layer_names(self):
        return [f"b{b}.l{l}" for b in range(self.blocks) for l in range(self.layers_per_block)]

    def to_dict(self):
        return asdict(self)


class TcnModel:
    """Input 1x1 projection, residual blocks of dilated conv + layer norm + ReLU, 1x1 output."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config=TcnConfig(), rng=None):
        rng = np.random.default_rng(rng)
        H, K = config.hidden_channels, config.kernel_size

        def uniform(fan_in, shape):
            a = np.sqrt(1.0 / fan_in)
            return rng.uniform(-a, a, shape)

        p = {"in.w": uniform(config.in_features, (config.in_features, H)), "in.b": np.zeros(H)}
        for name in config.layer_names():
            p[name + ".w"] = uniform(K * H, (K, H, H))
            p[name + ".b"] = np.zeros(H)
            p[name + ".g"] = np.ones(H)
            p[name + ".beta"] = np.zeros(H)
        p["out.w"] = uniform(H, (H, config.num_classes))
        p["out.b"] = np.zeros(config.num_classes)
        return cls(config, p)

    def dilation(self, layer_index):
        return 2 ** layer_index


def _conv_forward(x, w, b, dilation):
    # x: (B, T, C); w: (K, C, H); symmetric zero padding keeps length T
    K = w.shape[0]
    half = (K - 1) // 2
    pad = half * dilation
    T = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    out = np.broadcast_to(b, x.shape[:2] + (w.shape[2],)).copy()
    for k in range(K):
        out += xp[:, k * dilation:k * dilation + T] @ w[k]
    return out, xp


def _conv_backward(xp, w, d_out, dilation):
    K = w.shape[0]
    T = d_out.shape[1]
    pad = (K - 1) // 2 * dilation
    C = w.shape[1]
    d2 = d_out.reshape(-1, d_out.shape[-1])
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for k in range(K):
        dw[k] = xp[:, k * dilation:k * dilation + T].reshape(-1, C).T @ d2
        dxp[:, k * dilation:k * dilation + T] += d_out @ w[k].T
    dx = dxp[:, pad:pad + T]
    return dx, dw, d2.sum(0)


def _ln_forward(x, g, beta):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + beta, xhat, inv


def _ln_backward(d_y, xhat, inv, g):
    dg = np.einsum("btc,btc->c", d_y, xhat)
    dbeta = d_y.sum((0, 1))
    dxhat = d_y * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, dbeta


def tcn_forward(features, model):
    """Logits for ``features`` of shape (T, F_in) or (B, T, F_in)."""
    x = np.asarray(features, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    cfg, p = model.config, model.params
    if x.shape[-1] != cfg.in_features:
        raise ValueError(f"expected {cfg.in_features} features per frame, got {x.shape[-1]}")
    if x.shape[1] < 1:
        raise ValueError("need at least one frame")
    cache = {"x": x, "squeeze": squeeze, "layers": []}
    h = x @ p["in.w"] + p["in.b"]
    for b in range(cfg.blocks):
        block_in = h
        for l in range(cfg.layers_per_block):
            name = f"b{b}.l{l}"
            z, xp = _conv_forward(h, p[name + ".w"], p[name + ".b"], model.dilation(l))
            n, xhat, inv = _ln_forward(z, p[name + ".g"], p[name + ".beta"])
            h = np.maximum(n, 0.0)
            cache["layers"].append((name, l, xp, xhat, inv, n > 0))
        h = h + block_in
    cache["h_out"] = h
    logits = h @ p["out.w"] + p["out.b"]
    return (logits[0] if squeeze else logits), cache


def tcn_backward(cache, d_logits, model):
    """Gradients for every TCN parameter plus dL/d(features) under key ``"x"``."""
    cfg, p = model.config, model.params
    d_logits = np.asarray(d_logits, dtype=float)
    if cache["squeeze"]:
        d_logits = d_logits[None]
    h_out = cache["h_out"]
    H = h_out.shape[-1]
    grads = {"out.w": h_out.reshape(-1, H).T @ d_logits.reshape(-1, d_logits.shape[-1]),
             "out.b": d_logits.sum((0, 1))}
    dh = d_logits @ p["out.w"].T
    layers = cache["layers"]
    for b in reversed(range(cfg.blocks)):
        d_block_in = dh  # residual path
        for l in reversed(range(cfg.layers_per_block)):
            name, dil_idx, xp, xhat, inv, mask = layers[b * cfg.layers_per_block + l]
            dn = dh * mask
            dz, grads[name + ".g"], grads[name + ".beta"] = _ln_backward(dn, xhat, inv, p[name + ".g"])
            dh, grads[name + ".w"], grads[name + ".b"] = _conv_backward(
                xp, p[name + ".w"], dz, model.dilation(dil_idx))
        dh = dh + d_block_in
    x = cache["x"]
    grads["in.w"] = x.reshape(-1, x.shape[-1]).T @ dh.reshape(-1, H)
    grads["in.b"] = dh.sum((0, 1))
    dx = dh @ p["in.w"].T
    grads["x"] = dx[0] if cache["squeeze"] else dx
    return grads


def cross_entropy(logits, labels, num_classes=3):
    """Mean frame cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels {labels.shape} not aligned with logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in 0..{num_classes - 1}")
    z = logits - logits.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    flat_logp = logp.reshape(-1, logp.shape[-1])
    rows = np.arange(labels.size)
    idx = labels.reshape(-1).astype(int)
    loss = -flat_logp[rows, idx].sum() / labels.size
    grad = np.exp(flat_logp)
    grad[rows, idx] -= 1.0
    grad = grad.reshape(logp.shape)
    return loss, grad / labels.size


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Update ``params`` (name -> ndarray) in place."""
        bad = [n for n in params if not np.all(np.isfinite(grads[n]))]
        if bad:
            raise FloatingPointError(f"non-finite gradients in {', '.join(sorted(bad))}; step skipped")
        self.step_count += 1
        t = self.step_count
        for name, value in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(value)
                self.v[name] = np.zeros_like(value)
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_tensors(self):
        out = {}
        for name in self.m:
            out["m/" + name] = self.m[name]
            out["v/" + name] = self.v[name]
        return out


def posteriors(logits):
    return softmax(np.asarray(logits, dtype=float), axis=-1)


def derive_vad_osd(probs, vad_threshold=0.5, osd_threshold=0.5, smoothing=None):
    """Frame VAD (p1 + p2) and OSD (p2) decisions, optionally median-smoothed."""
    for thr in (vad_threshold, osd_threshold):
        if not 0.0 <= thr <= 1.0:
            raise ValueError("thresholds must lie in [0, 1]")
    probs = np.asarray(probs, dtype=float)
    vad = probs[:, 1] + probs[:, 2] >= vad_threshold
    osd = probs[:, 2] >= osd_threshold
    if smoothing:
        vad = scipy.signal.medfilt(vad.astype(float), smoothing) > 0.5
        osd = scipy.signal.medfilt(osd.astype(float), smoothing) > 0.5
    return vad, osd


def window_starts(n_frames, window, hop):
    """Start frames of the sliding windows; the last window is aligned to the end."""
    if not 1 <= hop <= window:
        raise ValueError("hop must lie in 1..window so every frame is covered")
    if n_frames <= window:
        return [0]
    starts = list(range(0, n_frames - window + 1, hop))
    if starts[-1] + window < n_frames:
        starts.append(n_frames - window)
    return starts


def sliding_window_infer(inputs, posterior_fn, window, hop):
    """Average per-frame posteriors of ``posterior_fn`` over overlapping windows.

    ``inputs`` is indexed by frame on axis 0; ``posterior_fn(chunk)`` returns
    (len(chunk), C) posteriors. Inputs shorter than a window are processed whole.
    """
    n = len(inputs)
    if n == 0:
        raise ValueError("empty input")
    acc = None
    counts = np.zeros(n)
    for s in window_starts(n, window, hop):
        e = min(s + window, n)
        post = np.asarray(posterior_fn(inputs[s:e]), dtype=float)
        if acc is None:
            acc = np.zeros((n, post.shape[-1]))
        acc[s:e] += post
        counts[s:e] += 1
    avg = acc / counts[:, None]
    return avg / avg.sum(-1, keepdims=True)


def window_coverage(n_frames, window, hop):
    """Number of sliding windows covering each frame."""
    counts = np.zeros(n_frames, dtype=int)
    for s in window_starts(n_frames, window, hop):
        counts[s:s + window] += 1
    return counts
