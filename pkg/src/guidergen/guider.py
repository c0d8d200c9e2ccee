"""The guider: an LSTM over prefix features that predicts features c steps ahead.

It models the generation environment.  Training maximizes a two-term cosine
objective: the prediction should match both the feature c steps ahead and
the direction the features moved in.  Prefix features reach the guider
gradient-severed, so guider training never touches the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import corpus as cp
from . import numerics as nm
from .encoder import CnnEncoder, _uniform


@dataclass
class GuiderState:
    h: nm.Tensor
    c: nm.Tensor


class GuiderNet:
    """LSTM over d_f features (optionally concatenated with a label one-hot)
    projected back to a d_f prediction."""

    def __init__(self, feature_dim: int, hidden_dim: int,
                 rng: np.random.Generator, label_dim: int = 0):
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.label_dim = label_dim
        in_dim = feature_dim + label_dim
        self.lstm_W = nm.Parameter(_uniform(rng, (in_dim + hidden_dim, 4 * hidden_dim)))
        self.lstm_b = nm.Parameter(np.zeros(4 * hidden_dim))
        self.proj_W = nm.Parameter(_uniform(rng, (hidden_dim, feature_dim)))
        self.proj_b = nm.Parameter(np.zeros(feature_dim))
        self.init_h_W = nm.Parameter(_uniform(rng, (feature_dim, hidden_dim)))
        self.init_h_b = nm.Parameter(np.zeros(hidden_dim))
        self.init_c_W = nm.Parameter(_uniform(rng, (feature_dim, hidden_dim)))
        self.init_c_b = nm.Parameter(np.zeros(hidden_dim))

    def parameters(self):
        names = ["lstm_W", "lstm_b", "proj_W", "proj_b",
                 "init_h_W", "init_h_b", "init_c_W", "init_c_b"]
        return [(f"guider.{n}", getattr(self, n)) for n in names]

    def initial_state(self, latent: nm.Tensor) -> GuiderState:
        """Project the shared initial latent into the LSTM state."""
        h = nm.tanh(nm.affine(latent, self.init_h_W, self.init_h_b))
        c = nm.tanh(nm.affine(latent, self.init_c_W, self.init_c_b))
        return GuiderState(h, c)

    def step(self, state: GuiderState, f: nm.Tensor):
        """Advance one step on feature f; returns (prediction, new state)."""
        if self.label_dim:
            zeros_shape = f.data.shape[:-1] + (self.label_dim,)
            return self.step_labeled(state, f, nm.Tensor(np.zeros(zeros_shape)))
        return self._step_input(state, f)

    def step_labeled(self, state: GuiderState, f: nm.Tensor, label):
        label = label if isinstance(label, nm.Tensor) else nm.Tensor(label)
        if label.data.shape[-1] != self.label_dim:
            raise nm.DimensionError(
                f"label dimension {label.data.shape[-1]} != {self.label_dim}")
        return self._step_input(state, nm.concat([f, label], axis=-1))

    def _step_input(self, state: GuiderState, x: nm.Tensor):
        h, c = nm.lstm_cell(x, state.h, state.c, self.lstm_W, self.lstm_b)
        pred = nm.affine(h, self.proj_W, self.proj_b)
        return pred, GuiderState(h, c)


def guider_objective(f_next: nm.Tensor, f_now: nm.Tensor,
                     prediction: nm.Tensor) -> nm.Tensor:
    """cos(f_next, pred) + cos(f_next - f_now, pred - f_now), in [-2, 2]."""
    first = nm.cosine_similarity(f_next, prediction)
    second = nm.cosine_similarity(nm.sub(f_next, f_now),
                                  nm.sub(prediction, f_now))
    return nm.add(first, second)


def _batch_objective(guider: GuiderNet, features: list[np.ndarray],
                     lengths: np.ndarray, init_latent: nm.Tensor,
                     c: int) -> nm.Tensor:
    """Mean over sentences of the per-sentence mean objective on t in [1, T-c].

    ``features[t]`` is the (B, d_f) constant feature matrix of prefixes of
    length t; rows beyond a sentence's length are ignored via masks.
    """
    batch = lengths.shape[0]
    counts = np.maximum(lengths - c, 0)
    live = counts > 0
    if not live.any():
        raise nm.DimensionError("no sentence is longer than the look-ahead c")
    weights = np.where(live, 1.0 / np.maximum(counts, 1), 0.0) / live.sum()

    state = guider.initial_state(init_latent)
    total = nm.Tensor(0.0)
    max_t = int(lengths.max()) - c
    for t in range(1, max_t + 1):
        f_now = nm.Tensor(features[t])
        pred, state = guider.step(state, f_now)
        f_next = nm.Tensor(features[t + c])
        j = nm.add(nm.row_cosine(f_next, pred),
                   nm.row_cosine(nm.sub(f_next, f_now), nm.sub(pred, f_now)))
        mask = (t <= counts).astype(np.float64) * weights
        total = nm.add(total, nm.reduce_sum(nm.mul(j, nm.Tensor(mask))))
    return total


def prefix_features(encoder: CnnEncoder, ids: np.ndarray,
                    lengths: np.ndarray) -> list[np.ndarray]:
    """Constant (gradient-severed) prefix features f_1..f_maxlen per batch row."""
    max_t = int(lengths.max())
    feats: list[np.ndarray] = [None]  # 1-based
    with nm.no_grad():
        for t in range(1, max_t + 1):
            feats.append(encoder.encode_ids(ids[:, :t]).data)
    return feats


def sentence_latents(feats: list[np.ndarray], lengths: np.ndarray) -> np.ndarray:
    """Per-row full-sentence feature Enc(X), read off the prefix features."""
    return np.stack([feats[int(L)][r] for r, L in enumerate(lengths)])


def train_guider(guider: GuiderNet, corpus: cp.Corpus, encoder: CnnEncoder,
                 c: int, optimizer: nm.Adam, rng: np.random.Generator,
                 batch_size: int = 32, max_len: int = 32, epochs: int = 1,
                 grad_clip: float = 5.0):
    """Gradient ascent on the look-ahead objective over real sentences.

    Returns per-step records [(step, mean objective)].  Encoder parameters
    are untouched: features arrive as constants.
    """
    if c < 1:
        raise ValueError("look-ahead c must be >= 1")
    if all(len(s) <= c for s in corpus.sentences):
        raise ValueError("no corpus sentence is longer than the look-ahead c")
    log = []
    step = 0
    for _ in range(epochs):
        for ids, lengths in cp.batches(corpus, batch_size, max_len, rng):
            if not (lengths > c).any():
                continue
            feats = prefix_features(encoder, ids, lengths)
            latent = nm.Tensor(sentence_latents(feats, lengths))
            objective = _batch_objective(guider, feats, lengths, latent, c)
            loss = nm.neg(objective)
            loss.backward()
            params = [p for _, p in guider.parameters()]
            nm.clip_grad_norm(params, grad_clip)
            optimizer.step()
            step += 1
            log.append((step, objective.item()))
    return log


def mean_objective(guider: GuiderNet, corpus: cp.Corpus, encoder: CnnEncoder,
                   c: int, max_len: int, batch_size: int = 64) -> float:
    """Held-out mean of the look-ahead objective (no parameter updates)."""
    total, batches_seen = 0.0, 0
    sentences = corpus.sentences
    for lo in range(0, len(sentences), batch_size):
        ids, lengths = cp.pad_batch(sentences[lo:lo + batch_size], max_len)
        if not (lengths > c).any():
            continue
        feats = prefix_features(encoder, ids, lengths)
        latent = nm.Tensor(sentence_latents(feats, lengths))
        with nm.no_grad():
            obj = _batch_objective(guider, feats, lengths, latent, c)
        total += obj.item()
        batches_seen += 1
    if batches_seen == 0:
        raise ValueError("no sentence is longer than the look-ahead c")
    return total / batches_seen
