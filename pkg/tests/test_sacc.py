import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asobo.sacc import PARAM_NAMES, SaccParams, extract_weights, sacc_backward, sacc_forward


def random_params(F, D, rng, scale=1.0):
    p = SaccParams.init(F, D, rng)
    p.bq[:] = rng.normal(0, 0.1, D)
    p.bk[:] = rng.normal(0, 0.1, D)
    p.bv[:] = rng.normal(0, 0.1, 1)
    for name in ("wq", "wk", "wv"):
        getattr(p, name)[:] *= scale
    return p


def loop_forward(y, p):
    """Scalar re-implementation, one frame / channel / key at a time."""
    T, P, F = y.shape
    D = p.wq.shape[1]
    ybar = np.zeros((T, F))
    w_sa = np.zeros((T, P))
    for t in range(T):
        q = [[sum(y[t, i, f] * p.wq[f, d] for f in range(F)) + p.bq[d] for d in range(D)] for i in range(P)]
        k = [[sum(y[t, i, f] * p.wk[f, d] for f in range(F)) + p.bk[d] for d in range(D)] for i in range(P)]
        v = [sum(y[t, i, f] * p.wv[f, 0] for f in range(F)) + p.bv[0] for i in range(P)]
        for i in range(P):
            s = [sum(q[i][d] * k[j][d] for d in range(D)) / math.sqrt(D) for j in range(P)]
            mx = max(s)
            e = [math.exp(x - mx) for x in s]
            w_sa[t, i] = sum(e[j] / sum(e) * v[j] for j in range(P))
        mx = max(w_sa[t])
        e = [math.exp(x - mx) for x in w_sa[t]]
        c = [x / sum(e) for x in e]
        for f in range(F):
            ybar[t, f] = sum(c[i] * y[t, i, f] for i in range(P))
    return ybar, w_sa


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(0)
    y = rng.random((3, 4, 8))
    p = random_params(8, 5, rng, scale=3.0)
    ybar, w_sa, _ = sacc_forward(y, p)
    rb, rw = loop_forward(y, p)
    assert np.allclose(ybar, rb, atol=1e-12, rtol=0)
    assert np.allclose(w_sa, rw, atol=1e-12, rtol=0)


def test_single_channel_is_identity():
    rng = np.random.default_rng(1)
    y = rng.random((5, 1, 6))
    ybar, w_sa, _ = sacc_forward(y, random_params(6, 3, rng))
    assert np.array_equal(extract_weights(w_sa), np.ones((5, 1)))
    assert np.allclose(ybar, y[:, 0], rtol=1e-15, atol=0)


def test_identical_channels_give_uniform_weights():
    rng = np.random.default_rng(2)
    frame = rng.random((4, 1, 7))
    y = np.repeat(frame, 5, axis=1)
    ybar, w_sa, _ = sacc_forward(y, random_params(7, 4, rng))
    assert np.allclose(w_sa, w_sa[:, :1])
    assert np.allclose(extract_weights(w_sa), 0.2)
    assert np.allclose(ybar, frame[:, 0])


@settings(max_examples=40)
@given(st.integers(0, 2 ** 31))
def test_convex_combination_and_permutation(seed):
    rng = np.random.default_rng(seed)
    T, P, F = 3, int(rng.integers(2, 6)), 5
    y = rng.random((T, P, F)) * 10
    p = random_params(F, 3, rng, scale=2.0)
    ybar, w_sa, _ = sacc_forward(y, p)
    assert np.all(ybar >= y.min(axis=1) - 1e-12) and np.all(ybar <= y.max(axis=1) + 1e-12)
    w = extract_weights(w_sa)
    assert np.allclose(w.sum(axis=1), 1, atol=1e-12) and np.all((w >= 0) & (w <= 1))
    perm = rng.permutation(P)
    ybar2, w_sa2, _ = sacc_forward(y[:, perm], p)
    assert np.allclose(w_sa2, w_sa[:, perm], atol=1e-10)
    assert np.allclose(ybar2, ybar, atol=1e-10)


def test_extract_weights_cases():
    assert np.allclose(extract_weights(np.full((2, 4), 3.3)), 0.25)
    w = extract_weights(np.array([[0.0, 60.0, 0.0]]))
    assert w[0, 1] >= 1 - 1e-20
    assert np.allclose(extract_weights(np.array([[0.0, math.log(3)]])), [[0.25, 0.75]], atol=1e-15)


def loss_fn(y, p, g):
    ybar, _, _ = sacc_forward(y, p)
    return float(np.sum(ybar * g))


def fd_check(y, p, g, h=1e-5):
    _, _, cache = sacc_forward(y, p)
    grads = sacc_backward(cache, g, p)
    worst = 0.0
    for name in PARAM_NAMES:
        arr = getattr(p, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss_fn(y, p, g)
            arr[idx] = old - h
            lm = loss_fn(y, p, g)
            arr[idx] = old
            fd = (lp - lm) / (2 * h)
            an = grads[name][idx]
            # floor keeps round-off on exactly-zero gradients (the key bias) from dominating
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-5))
    return worst, grads


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(3)
    p = random_params(4, 3, rng)
    _, _, cache = sacc_forward(rng.random((2, 3, 4)), p)
    grads = sacc_backward(cache, np.zeros((2, 4)), p)
    assert all(np.all(grads[n] == 0) for n in PARAM_NAMES)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(5):
        y = rng.random((2, 3, 4)) * 2
        p = random_params(4, 3, rng, scale=2.0)
        worst, _ = fd_check(y, p, rng.standard_normal((2, 4)))
        assert worst < 1e-4


def test_key_bias_gradient_vanishes():
    # adding a constant to every key shifts each score row uniformly, so softmax ignores it
    rng = np.random.default_rng(8)
    p = random_params(4, 3, rng, scale=2.0)
    _, _, cache = sacc_forward(rng.random((3, 5, 4)), p)
    grads = sacc_backward(cache, rng.standard_normal((3, 4)), p)
    assert np.allclose(grads["bk"], 0, atol=1e-14)


def test_gradient_with_frozen_query_key():
    rng = np.random.default_rng(5)
    y = rng.random((2, 3, 4))
    p = random_params(4, 3, rng)
    p.wq[:] = 0
    p.wk[:] = 0
    _, _, cache = sacc_forward(y, p)
    att = cache["att"]
    p.bv[:] += 0.7  # a channel-symmetric shift of the values
    _, _, cache2 = sacc_forward(y, p)
    assert np.allclose(att, cache2["att"]) and np.allclose(att, 1 / 3)
    worst, _ = fd_check(y, p, rng.standard_normal((2, 4)))
    assert worst < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    y = rng.random((2, 3, 4))
    p = random_params(4, 3, rng, scale=2.0)
    g = rng.standard_normal((2, 4))
    _, _, cache = sacc_forward(y, p)
    dy = sacc_backward(cache, g, p)["y"]
    h = 1e-6
    for idx in np.ndindex(y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        fd = (loss_fn(yp, p, g) - loss_fn(ym, p, g)) / (2 * h)
        assert abs(fd - dy[idx]) <= 1e-6 * max(1.0, abs(fd))


def test_backward_rejects_mismatched_cache():
    rng = np.random.default_rng(7)
    p = random_params(4, 3, rng)
    _, _, cache = sacc_forward(rng.random((2, 3, 4)), p)
    with pytest.raises(ValueError):
        sacc_backward(cache, np.zeros((3, 4)), p)
    with pytest.raises(ValueError):
        sacc_backward(cache, np.zeros((2, 4)), random_params(4, 3, rng))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        sacc_forward(np.zeros((2, 3, 5)), SaccParams.init(4, 3, 0))
