"""Shared feed-forward building blocks with analytic forward/backward passes.

Everything operates on float64 arrays shaped (T, dim). Layers used by both
the speech activity detector and the diarization network live here: frame
splicing with clamped edges, spliced affine+ReLU layers, windowed
mean/stddev statistics pooling, local feature normalization, and the fused
logistic cross-entropy head.

Backward passes return exact gradients of the corresponding forward
expressions; finite-difference tests pin them down to 1e-4 relative error.
"""

from __future__ import annotations

import numpy as np

STD_EPS = 1e-6  # inside sqrt of pooled stddev, keeps it differentiable
LOGIT_CLIP = 30.0
PROB_EPS = 1e-7  # probability clamp of the cross-entropy loss


def splice(x: np.ndarray, offsets) -> np.ndarray:
    """Concatenate temporally offset copies of x with repeated-edge clamping.

    Input (T, D) and offsets (o_1..o_k) give output (T, k*D) whose row t is
    [x[clamp(t+o_1)], ..., x[clamp(t+o_k)]].
    """
    T = x.shape[0]
    idx = np.arange(T)
    parts = [x[np.clip(idx + o, 0, T - 1)] for o in offsets]
    return np.concatenate(parts, axis=1)


def splice_backward(grad: np.ndarray, offsets, T: int, D: int) -> np.ndarray:
    """Scatter-add gradients of splice() back to the (T, D) input."""
    dx = np.zeros((T, D))
    for k, o in enumerate(offsets):
        g = grad[:, k * D : (k + 1) * D]
        if o == 0:
            dx += g
        elif o > 0:
            lim = max(T - o, 0)
            dx[o : o + lim] += g[:lim]
            dx[T - 1] += g[lim:].sum(axis=0)
        else:
            lim = max(T + o, 0)
            dx[:lim] += g[-o:]
            dx[0] += g[:-o].sum(axis=0)
    return dx


def spliced_affine_relu(x: np.ndarray, w: np.ndarray, b: np.ndarray, offsets):
    """y = relu(splice(x) @ w + b); returns (y, cache)."""
    xs = splice(x, offsets)
    pre = xs @ w + b
    y = np.maximum(pre, 0.0)
    cache = (xs, w, pre > 0, offsets, x.shape)
    return y, cache


def spliced_affine_relu_backward(dy: np.ndarray, cache):
    xs, w, active, offsets, (T, D) = cache
    dpre = dy * active
    dw = xs.T @ dpre
    db = dpre.sum(axis=0)
    dxs = dpre @ w.T
    dx = splice_backward(dxs, offsets, T, D)
    return dx, dw, db


def _window_bounds(T: int, lo: int, hi: int):
    t = np.arange(T)
    a = np.clip(t + lo, 0, T - 1)
    b = np.clip(t + hi, 0, T - 1)
    return a, b


def windowed_stats(x: np.ndarray, lo: int, hi: int):
    """Per-frame mean and stddev over the clipped window [t+lo, t+hi].

    Returns (stats, cache) with stats = concat(mean, std) of shape (T, 2D).
    """
    if hi < lo:
        raise ValueError("window upper offset must be >= lower offset")
    T, D = x.shape
    a, b = _window_bounds(T, lo, hi)
    n = (b - a + 1).astype(np.float64)[:, None]
    cs = np.vstack([np.zeros((1, D)), np.cumsum(x, axis=0)])
    cs2 = np.vstack([np.zeros((1, D)), np.cumsum(x * x, axis=0)])
    mean = (cs[b + 1] - cs[a]) / n
    ex2 = (cs2[b + 1] - cs2[a]) / n
    var = ex2 - mean * mean
    std = np.sqrt(var + STD_EPS)
    cache = (x, mean, std, n, lo, hi)
    return np.concatenate([mean, std], axis=1), cache


def _windowed_sum(y: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """out[u] = sum of y[t] for t in [u+lo, u+hi] intersected with [0, T-1]."""
    T = y.shape[0]
    cs = np.vstack([np.zeros((1, y.shape[1])), np.cumsum(y, axis=0)])
    t = np.arange(T)
    a = np.clip(t + lo, 0, T)
    b = np.clip(t + hi + 1, 0, T)
    b = np.maximum(b, a)
    return cs[b] - cs[a]


def windowed_stats_backward(dstats: np.ndarray, cache) -> np.ndarray:
    x, mean, std, n, lo, hi = cache
    D = x.shape[1]
    dmean = dstats[:, :D].copy()
    dstd = dstats[:, D:]
    dvar = dstd / (2.0 * std)
    dmean -= 2.0 * mean * dvar
    dex2 = dvar
    # frame u receives contributions from every window containing it, i.e.
    # window centers t in [u-hi, u-lo]
    dx = _windowed_sum(dmean / n, -hi, -lo)
    dx += 2.0 * x * _windowed_sum(dex2 / n, -hi, -lo)
    return dx


def local_normalize(x: np.ndarray, window: int) -> np.ndarray:
    """Mean/variance-normalize each frame with centered-window statistics.

    The window is clipped at sequence edges. Dimensions whose windowed
    variance vanishes map to 0.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    x = np.asarray(x, dtype=np.float64)
    T, D = x.shape
    half = window // 2
    a, b = _window_bounds(T, -half, half)
    n = (b - a + 1).astype(np.float64)[:, None]
    cs = np.vstack([np.zeros((1, D)), np.cumsum(x, axis=0)])
    cs2 = np.vstack([np.zeros((1, D)), np.cumsum(x * x, axis=0)])
    mean = (cs[b + 1] - cs[a]) / n
    ex2 = (cs2[b + 1] - cs2[a]) / n
    var = ex2 - mean * mean
    floor = 1e-10 * np.maximum(1.0, ex2)
    out = np.zeros_like(x)
    ok = var > floor
    np.divide(x - mean, np.sqrt(np.where(ok, var, 1.0)), out=out, where=ok)
    return out


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_head(logits: np.ndarray):
    """Clip logits, apply the logistic squash; returns (probs, cache)."""
    clipped = np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
    probs = sigmoid(clipped)
    cache = (probs, np.abs(logits) < LOGIT_CLIP)
    return probs, cache


def bce_with_logits_grad(probs: np.ndarray, labels: np.ndarray, head_cache, scale: float):
    """Gradient of scale * sum(bce(clamp(probs), labels)) w.r.t. the logits.

    Must stay consistent with logistic_head and the PROB_EPS clamping of the
    loss so finite-difference checks agree exactly.
    """
    _, live = head_cache
    inside = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)
    return scale * (probs - labels) * live * inside
