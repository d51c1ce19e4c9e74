"""Spliced-context speech activity detection with Viterbi smoothing.

The detector is a stack of spliced affine+ReLU layers over locally
normalized features, followed by two windowed statistics-pooling stages
(mean and stddev concatenated, then affine+ReLU) and a logistic output per
frame. Splice offsets and pooling windows are asymmetric so the receptive
field covers roughly 0.8 s of left and 0.2 s of right context at 100 fps.

Per-frame posteriors are smoothed by exact two-state Viterbi decoding, and
per-speaker decisions on near-field channels assemble into initial
diarization pseudo-labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from ._kernels import viterbi_two_state
from .fileio import read_tensors, write_tensors
from .nnet import (
    PROB_EPS,
    bce_with_logits_grad,
    local_normalize,
    logistic_head,
    spliced_affine_relu,
    spliced_affine_relu_backward,
    windowed_stats,
    windowed_stats_backward,
)
from .timeline import ActivityMatrix, SessionLabels, segmentize

SAD_MAGIC = b"DKSM"

DEFAULT_SPLICES = ((-2, -1, 0, 1, 2), (-2, 0, 2), (-3, 0, 3), (-4, 0, 4), (0,))
DEFAULT_POOL_WINDOWS = ((-40, 10), (-29, 1))


@dataclass(frozen=True)
class SadConfig:
    input_dim: int
    hidden: int = 32
    splices: tuple = DEFAULT_SPLICES
    pool_windows: tuple = DEFAULT_POOL_WINDOWS
    norm_window: int = 501

    def receptive_field(self) -> tuple[int, int]:
        """(left, right) context in frames."""
        left = sum(-min(offs) for offs in self.splices)
        right = sum(max(offs) for offs in self.splices)
        left += sum(-lo for lo, _ in self.pool_windows)
        right += sum(hi for _, hi in self.pool_windows)
        return left, right


@dataclass
class SadModel:
    config: SadConfig
    params: dict

    def __post_init__(self):
        left, right = self.config.receptive_field()
        total = left + right + 1
        # the architecture is meant to see ~1 s of context, mostly to the left
        if not (60 <= left <= 100 and 10 <= right <= 40 and 80 <= total <= 130):
            raise ValueError(
                f"receptive field left={left} right={right} frames is outside "
                "the intended ~0.8 s left / ~0.2 s right design envelope"
            )


@dataclass(frozen=True)
class SadHyper:
    lr: float = 0.3
    epochs: int = 15
    batch: int = 4
    train_window: int = 3000
    hidden: int = 32
    norm_window: int = 501


def init_sad(config: SadConfig, seed: int) -> SadModel:
    params = {}
    in_dim = config.input_dim
    for i, offs in enumerate(config.splices):
        fan_in = len(offs) * in_dim
        gen = rngmod.stream(seed, "sad-init", f"tdnn{i}")
        params[f"tdnn{i}.w"] = gen.standard_normal((fan_in, config.hidden)) * np.sqrt(2.0 / fan_in)
        params[f"tdnn{i}.b"] = np.zeros(config.hidden)
        in_dim = config.hidden
    for i in range(len(config.pool_windows)):
        fan_in = 2 * config.hidden
        gen = rngmod.stream(seed, "sad-init", f"pool{i}")
        params[f"pool{i}.w"] = gen.standard_normal((fan_in, config.hidden)) * np.sqrt(2.0 / fan_in)
        params[f"pool{i}.b"] = np.zeros(config.hidden)
    gen = rngmod.stream(seed, "sad-init", "out")
    params["out.w"] = gen.standard_normal(config.hidden) * np.sqrt(1.0 / config.hidden)
    params["out.b"] = np.zeros(1)
    return SadModel(config, params)


def _forward_cached(params: dict, config: SadConfig, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"expected features with {config.input_dim} columns, got shape {x.shape}")
    h = np.asarray(x, dtype=np.float64)
    caches = []
    for i, offs in enumerate(config.splices):
        h, cache = spliced_affine_relu(h, params[f"tdnn{i}.w"], params[f"tdnn{i}.b"], offs)
        caches.append(("tdnn", i, cache))
    for i, (lo, hi) in enumerate(config.pool_windows):
        stats, stat_cache = windowed_stats(h, lo, hi)
        h, aff_cache = spliced_affine_relu(stats, params[f"pool{i}.w"], params[f"pool{i}.b"], (0,))
        caches.append(("pool", i, (stat_cache, aff_cache)))
    logits = h @ params["out.w"] + params["out.b"][0]
    probs, head_cache = logistic_head(logits)
    caches.append(("head", None, (h, head_cache)))
    return probs, caches


def _backward(params: dict, config: SadConfig, caches, dlogits: np.ndarray) -> dict:
    grads = {}
    kind, _, (h_last, _) = caches[-1]
    assert kind == "head"
    grads["out.w"] = h_last.T @ dlogits
    grads["out.b"] = np.array([dlogits.sum()])
    dh = np.outer(dlogits, params["out.w"])
    for kind, i, cache in reversed(caches[:-1]):
        if kind == "pool":
            stat_cache, aff_cache = cache
            dstats, dw, db = spliced_affine_relu_backward(dh, aff_cache)
            grads[f"pool{i}.w"] = dw
            grads[f"pool{i}.b"] = db
            dh = windowed_stats_backward(dstats, stat_cache)
        else:
            dh, dw, db = spliced_affine_relu_backward(dh, cache)
            grads[f"tdnn{i}.w"] = dw
            grads[f"tdnn{i}.b"] = db
    return grads


def sad_forward(model: SadModel, x: np.ndarray) -> np.ndarray:
    """Per-frame speech posteriors, strictly inside (0, 1)."""
    probs, _ = _forward_cached(model.params, model.config, x)
    return probs


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: probs {probs.shape} vs labels {labels.shape}")
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def loss_and_grads(params: dict, config: SadConfig, x: np.ndarray, labels: np.ndarray):
    """BCE loss of one sequence plus analytic gradients for every parameter."""
    probs, caches = _forward_cached(params, config, x)
    labels = np.asarray(labels, dtype=np.float64)
    loss = bce_loss(probs, labels)
    _, _, (_, head_cache) = caches[-1]
    dlogits = bce_with_logits_grad(probs, labels, head_cache, 1.0 / len(labels))
    return loss, _backward(params, config, caches, dlogits)


def train_sad(items, hyper: SadHyper = SadHyper(), seed: int = 0):
    """Train the detector on (features, frame_labels) pairs with minibatch GD.

    Features are raw (un-normalized); local normalization with
    hyper.norm_window is applied here and recorded in the model config.
    Returns (model, per-epoch mean loss).
    """
    items = list(items)
    if not items:
        raise ValueError("training corpus is empty")
    normed = []
    for feats, labels in items:
        feats = np.asarray(feats, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64).ravel()
        if feats.shape[0] != labels.shape[0]:
            raise ValueError("features and labels disagree on frame count")
        normed.append((local_normalize(feats, hyper.norm_window), labels))
    config = SadConfig(input_dim=normed[0][0].shape[1], hidden=hyper.hidden, norm_window=hyper.norm_window)
    model = init_sad(config, seed)
    params = model.params
    losses = []
    for epoch in range(hyper.epochs):
        order = rngmod.stream(seed, "sad-shuffle", epoch).permutation(len(normed))
        epoch_loss = 0.0
        batch_grads = None
        batch_count = 0
        for pos, item_idx in enumerate(order):
            feats, labels = normed[item_idx]
            T = feats.shape[0]
            if T > hyper.train_window:
                start = int(rngmod.stream(seed, "sad-window", epoch, int(item_idx)).integers(0, T - hyper.train_window + 1))
                feats = feats[start : start + hyper.train_window]
                labels = labels[start : start + hyper.train_window]
            loss, grads = loss_and_grads(params, config, feats, labels)
            epoch_loss += loss
            if batch_grads is None:
                batch_grads = grads
            else:
                for k in batch_grads:
                    batch_grads[k] += grads[k]
            batch_count += 1
            if batch_count == hyper.batch or pos == len(order) - 1:
                for k in params:
                    params[k] -= hyper.lr * batch_grads[k] / batch_count
                batch_grads = None
                batch_count = 0
        losses.append(epoch_loss / len(normed))
    return model, losses


def viterbi_smooth(probs: np.ndarray, p_stay: float = 0.95, prior_speech: float = 0.5) -> np.ndarray:
    """Exact MAP state path of the two-state smoothing HMM.

    Emission likelihoods are (prob, 1-prob); self-transition p_stay is
    symmetric; ties break toward non-speech. Returns a uint8 vector.
    """
    if not 0.0 < p_stay < 1.0:
        raise ValueError("p_stay must lie in (0, 1)")
    if not 0.0 < prior_speech < 1.0:
        raise ValueError("prior_speech must lie in (0, 1)")
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    log_emit = np.stack([np.log(1.0 - p), np.log(p)], axis=1)
    path = viterbi_two_state(
        log_emit,
        float(np.log(p_stay)),
        float(np.log(1.0 - p_stay)),
        float(np.log(1.0 - prior_speech)),
        float(np.log(prior_speech)),
    )
    return path.astype(np.uint8)


def initial_pseudo_labels(
    near_field,
    model: SadModel,
    session_id: str,
    frame_rate: float,
    p_stay: float = 0.95,
    prior_speech: float = 0.5,
    merge_gap: float = 0.3,
    min_duration: float = 0.2,
    speakers=None,
) -> SessionLabels:
    """Assemble per-speaker SAD decisions on near-field channels into labels.

    Channel n is attributed to speaker n of the speaker list (near-field
    premise: each close-talk channel belongs to one speaker).
    """
    near_field = list(near_field)
    if not near_field:
        raise ValueError("no near-field channels supplied")
    if speakers is None:
        speakers = [f"spk{n}" for n in range(len(near_field))]
    if len(speakers) != len(near_field):
        raise ValueError("speaker list does not match the near-field channel count")
    rows = []
    for feats in near_field:
        normed = local_normalize(np.asarray(feats, dtype=np.float64), model.config.norm_window)
        probs = sad_forward(model, normed)
        rows.append(viterbi_smooth(probs, p_stay, prior_speech))
    activity = ActivityMatrix(tuple(speakers), np.stack(rows), frame_rate)
    return segmentize(activity, merge_gap=merge_gap, min_duration=min_duration, session_id=session_id)


def save_sad(model: SadModel, path) -> None:
    tensors = {
        "cfg.dims": np.array([model.config.input_dim, model.config.hidden], dtype=np.float32),
        "cfg.norm_window": np.array([model.config.norm_window], dtype=np.float32),
        "cfg.n_splices": np.array([len(model.config.splices)], dtype=np.float32),
    }
    for i, offs in enumerate(model.config.splices):
        tensors[f"cfg.splice{i}"] = np.asarray(offs, dtype=np.float32)
    tensors["cfg.pool_windows"] = np.asarray(model.config.pool_windows, dtype=np.float32)
    tensors.update(model.params)
    write_tensors(path, SAD_MAGIC, tensors)


def load_sad(path) -> SadModel:
    tensors = read_tensors(path, SAD_MAGIC)
    dims = tensors.pop("cfg.dims").astype(int)
    norm_window = int(tensors.pop("cfg.norm_window")[0])
    n_splices = int(tensors.pop("cfg.n_splices")[0])
    splices = tuple(tuple(tensors.pop(f"cfg.splice{i}").astype(int)) for i in range(n_splices))
    pool = tuple(tuple(row) for row in tensors.pop("cfg.pool_windows").astype(int))
    config = SadConfig(
        input_dim=int(dims[0]), hidden=int(dims[1]), splices=splices, pool_windows=pool, norm_window=norm_window
    )
    params = {k: v.astype(np.float64) for k, v in tensors.items()}
    return SadModel(config, params)
