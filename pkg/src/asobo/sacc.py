"""Self-attention channel combinator over beamformer power spectra.

Per frame, the P channel spectra are projected to queries/keys (D dims) and a
scalar value; scaled dot-product attention across channels yields one score per
channel, and a softmax over those scores weights the channels into a single
spectrum. Forward and backward passes are written out by hand.
"""

from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("wq", "bq", "wk", "bk", "wv", "bv")


@dataclass
class SaccParams:
    wq: np.ndarray  # F x D
    bq: np.ndarray  # D
    wk: np.ndarray  # F x D
    bk: np.ndarray  # D
    wv: np.ndarray  # F x 1
    bv: np.ndarray  # 1

    @classmethod
    def init(cls, n_bins, hidden=256, rng=None):
        rng = np.random.default_rng(rng)
        a = np.sqrt(1.0 / n_bins)
        return cls(rng.uniform(-a, a, (n_bins, hidden)), np.zeros(hidden),
                   rng.uniform(-a, a, (n_bins, hidden)), np.zeros(hidden),
                   rng.uniform(-a, a, (n_bins, 1)), np.zeros(1))

    @property
    def n_bins(self):
        return self.wq.shape[0]

    @property
    def hidden(self):
        return self.wq.shape[1]

    def tensors(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_tensors(cls, t):
        return cls(*(np.array(t[name], dtype=float) for name in PARAM_NAMES))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sacc_forward(y_pow, params):
    """Combine channels of ``y_pow`` (..., P, F).

    Returns ``(y_bar, w_sa, cache)`` where ``y_bar`` is (..., F) and ``w_sa`` are the
    pre-softmax channel scores (..., P).
    """
    y_pow = np.ascontiguousarray(y_pow, dtype=float)
    if y_pow.ndim < 2 or y_pow.shape[-1] != params.n_bins:
        raise ValueError(f"expected (..., P, {params.n_bins}) input, got {y_pow.shape}")
    scale = 1.0 / np.sqrt(params.hidden)
    q = y_pow @ params.wq + params.bq
    k = y_pow @ params.wk + params.bk
    v = (y_pow @ params.wv)[..., 0] + params.bv[0]
    att = softmax(np.matmul(q, np.swapaxes(k, -1, -2)) * scale)  # (..., P, P), rows over keys
    w_sa = np.einsum("...ij,...j->...i", att, v)
    comb = softmax(w_sa)
    y_bar = np.einsum("...p,...pf->...f", comb, y_pow)
    cache = {"y": y_pow, "q": q, "k": k, "v": v, "att": att, "comb": comb,
             "scale": scale, "params_id": id(params), "shape": y_pow.shape}
    return y_bar, w_sa, cache


def sacc_backward(cache, d_ybar, params=None):
    """Parameter gradients given dL/d(y_bar).

    When ``params`` is passed, the cache is checked against it and dL/d(y_pow) is
    returned as well under key ``"y"``.
    """
    d_ybar = np.asarray(d_ybar, dtype=float)
    y = cache["y"]
    if d_ybar.shape != y.shape[:-2] + y.shape[-1:]:
        raise ValueError("upstream gradient does not match the cached forward pass")
    if params is not None and id(params) != cache["params_id"]:
        raise ValueError("cache was produced with a different parameter set")
    q, k, v, att, comb, scale = (cache[n] for n in ("q", "k", "v", "att", "comb", "scale"))

    d_comb = np.einsum("...f,...pf->...p", d_ybar, y)
    d_w = comb * (d_comb - np.sum(comb * d_comb, axis=-1, keepdims=True))
    d_att = d_w[..., :, None] * v[..., None, :]
    d_v = np.einsum("...ij,...i->...j", att, d_w)
    d_s = att * (d_att - np.sum(att * d_att, axis=-1, keepdims=True)) * scale
    d_q = np.matmul(d_s, k)
    d_k = np.matmul(np.swapaxes(d_s, -1, -2), q)

    F = y.shape[-1]
    y2 = y.reshape(-1, F)
    dq2 = d_q.reshape(-1, d_q.shape[-1])
    dk2 = d_k.reshape(-1, d_k.shape[-1])
    dv2 = d_v.reshape(-1, 1)
    grads = {
        "wq": y2.T @ dq2, "bq": dq2.sum(0),
        "wk": y2.T @ dk2, "bk": dk2.sum(0),
        "wv": y2.T @ dv2, "bv": dv2.sum(0),
    }
    if params is not None:
        grads["y"] = (comb[..., None] * d_ybar[..., None, :]
                      + d_q @ params.wq.T + d_k @ params.wk.T + d_v[..., None] * params.wv[:, 0])
    return grads


def extract_weights(w_sa):
    """Per-frame channel combination weights (softmax over the channel axis)."""
    return softmax(np.asarray(w_sa, dtype=float), axis=-1)
