"""LSTM generator with plan-ahead fusion.

At every step the guider's predicted future feature is mapped through a
linear transform into a per-token weight vector, which modulates the
decoder's pre-softmax output elementwise:

    probs_t = softmax(g(s_{t-1}) * w_t),   w_t = varphi(guider prediction).

Generated tokens are fed back through the generator's own embedding table
(separate from the encoder's, which keeps the stop-gradient boundary
simple).  During sampling, prefix features are recomputed by the CNN
encoder on the growing prefix; quadratic in length but cheap at this scale.

The guider prediction is treated as a constant inside generator objectives:
generator optimizers never touch guider or encoder parameters through the
fusion path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import corpus as cp
from . import numerics as nm
from .encoder import CnnEncoder, _uniform
from .guider import GuiderNet, GuiderState


@dataclass
class DecodeState:
    h: nm.Tensor
    c: nm.Tensor
    guider: GuiderState
    prefix: list[int]
    t: int


@dataclass
class SampleOutput:
    """One sampled sequence with everything reward computation needs.

    ``features[k]`` is the prefix feature after k emitted tokens (f_0 is the
    empty-prefix feature); ``predictions[k]`` is the guider prediction made
    while consuming f_k, i.e. the forecast of f_{k+lookahead}; ``latent`` is
    the initial latent that seeded both networks.
    """

    ids: list[int]
    logprobs: np.ndarray
    features: np.ndarray
    predictions: np.ndarray
    terminated: bool
    latent: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.ids)


class GeneratorNet:
    def __init__(self, vocab_size: int, emb_dim: int, hidden_dim: int,
                 feature_dim: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.embed = nm.Parameter(_uniform(rng, (vocab_size, emb_dim)))
        self.lstm_W = nm.Parameter(_uniform(rng, (emb_dim + hidden_dim, 4 * hidden_dim)))
        self.lstm_b = nm.Parameter(np.zeros(4 * hidden_dim))
        self.out_W = nm.Parameter(_uniform(rng, (hidden_dim, vocab_size)))
        self.out_b = nm.Parameter(np.zeros(vocab_size))
        self.fuse_W = nm.Parameter(_uniform(rng, (feature_dim, vocab_size)))
        # bias starts at ones so the modulation weight is neutral at init;
        # a zero start would zero the fused logits and stall their gradients
        self.fuse_b = nm.Parameter(np.ones(vocab_size))
        self.init_h_W = nm.Parameter(_uniform(rng, (feature_dim, hidden_dim)))
        self.init_h_b = nm.Parameter(np.zeros(hidden_dim))
        self.init_c_W = nm.Parameter(_uniform(rng, (feature_dim, hidden_dim)))
        self.init_c_b = nm.Parameter(np.zeros(hidden_dim))

    def parameters(self):
        names = ["embed", "lstm_W", "lstm_b", "out_W", "out_b",
                 "fuse_W", "fuse_b", "init_h_W", "init_h_b",
                 "init_c_W", "init_c_b"]
        return [(f"generator.{n}", getattr(self, n)) for n in names]

    def initial_state(self, latent: nm.Tensor):
        h = nm.tanh(nm.affine(latent, self.init_h_W, self.init_h_b))
        c = nm.tanh(nm.affine(latent, self.init_c_W, self.init_c_b))
        return h, c

    def advance(self, h, c, token_ids):
        """Feed embedded token(s) through the decoder LSTM."""
        emb = nm.take(self.embed, token_ids)
        return nm.lstm_cell(emb, h, c, self.lstm_W, self.lstm_b)

    def output_logits(self, h) -> nm.Tensor:
        return nm.affine(h, self.out_W, self.out_b)


def plan_weights(net: GeneratorNet, prediction: nm.Tensor) -> nm.Tensor:
    """Map a predicted future feature to a per-token weight vector."""
    if prediction.data.shape[-1] != net.feature_dim:
        raise nm.DimensionError("prediction dimension mismatch")
    return nm.affine(prediction, net.fuse_W, net.fuse_b)


def fused_distribution(net: GeneratorNet, h, prediction):
    """(probs, fused logits) for decoder state h and a guider prediction."""
    weights = plan_weights(net, prediction.detach())
    fused = nm.mul(net.output_logits(h), weights)
    return nm.softmax(fused, axis=-1), fused


def step_distribution(net: GeneratorNet, guider: GuiderNet,
                      state: DecodeState, f_t: nm.Tensor):
    """Next-token distribution from the current state and prefix feature.

    Returns (probs over the vocabulary, advanced guider state).
    """
    pred, gstate = guider.step(state.guider, f_t)
    probs, _ = fused_distribution(net, state.h, pred)
    return probs, gstate


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    cdf = np.cumsum(probs)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def sample_sequence(net: GeneratorNet, guider: GuiderNet, enc: CnnEncoder,
                    latent: nm.Tensor, rng: np.random.Generator | None,
                    max_len: int, temperature: float = 1.0,
                    greedy: bool = False) -> SampleOutput:
    """Autoregressive sampling, feeding each emitted token back as input.

    Stops at EOS or ``max_len``.  ``temperature`` rescales logits before the
    draw (0 means argmax, identical to greedy decoding with ties broken
    toward the lowest token id); recorded log-probabilities are always the
    untempered policy's.  Runs gradient-free; use
    ``forced_sequence_logprobs`` to rebuild the differentiable path.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    greedy = greedy or temperature == 0.0
    if not greedy and rng is None:
        raise ValueError("sampling needs an rng")
    ids: list[int] = []
    logprobs: list[float] = []
    features: list[np.ndarray] = []
    predictions: list[np.ndarray] = []
    with nm.no_grad():
        h, c = net.initial_state(latent)
        gstate = guider.initial_state(latent)
        f_prev = enc.encode_prefix([])
        features.append(f_prev.data.copy())
        terminated = False
        for _ in range(max_len):
            pred, gstate = guider.step(gstate, f_prev)
            predictions.append(pred.data.copy())
            probs, fused = fused_distribution(net, h, pred)
            logp = nm.log_softmax(fused, axis=-1).data
            if greedy:
                token = int(np.argmax(probs.data))
            elif temperature == 1.0:
                token = _draw(rng, probs.data)
            else:
                token = _draw(rng, nm.softmax(
                    nm.Tensor(fused.data / temperature), axis=-1).data)
            ids.append(token)
            logprobs.append(float(logp[token]))
            h, c = net.advance(h, c, np.int64(token))
            f_prev = enc.encode_prefix(ids)
            features.append(f_prev.data.copy())
            if token == cp.EOS:
                terminated = True
                break
    return SampleOutput(ids, np.asarray(logprobs), np.asarray(features),
                        np.asarray(predictions), terminated,
                        latent=latent.data.copy())


def greedy_decode(net: GeneratorNet, guider: GuiderNet, enc: CnnEncoder,
                  latent: nm.Tensor, max_len: int) -> list[int]:
    """Deterministic argmax decoding; ties break toward the lowest token id."""
    return sample_sequence(net, guider, enc, latent, None, max_len,
                           greedy=True).ids


def forced_sequence_logprobs(net: GeneratorNet, guider: GuiderNet,
                             enc: CnnEncoder, latent: nm.Tensor,
                             ids: list[int]) -> nm.Tensor:
    """Differentiable log-probabilities of a fixed token sequence.

    Replays exactly the sampling wiring (same prefixes, same guider stream)
    with the actions frozen, so the returned values match the ones recorded
    by ``sample_sequence`` and the gradient is the REINFORCE estimator's.
    Encoder and guider run as constants; only generator parameters receive
    gradients.
    """
    if not ids:
        raise ValueError("empty action sequence")
    h, c = net.initial_state(latent.detach())
    with nm.no_grad():
        gstate = guider.initial_state(latent)
        f_prev = enc.encode_prefix([])
    out = []
    for t, token in enumerate(ids):
        with nm.no_grad():
            pred, gstate = guider.step(gstate, f_prev)
        _, fused = fused_distribution(net, h, pred)
        logp = nm.log_softmax(fused, axis=-1)
        out.append(nm.reshape(nm.pick(logp, token), (1,)))
        h, c = net.advance(h, c, np.int64(token))
        with nm.no_grad():
            f_prev = enc.encode_prefix(ids[:t + 1])
    return nm.concat(out, axis=0)


def _encode_rows(enc: CnnEncoder, ids: np.ndarray,
                 lengths: np.ndarray) -> nm.Tensor:
    """Per-row exact-length sentence features, gradients on (grouped by length)."""
    batch = ids.shape[0]
    by_len: dict[int, list[int]] = {}
    for r, L in enumerate(lengths):
        by_len.setdefault(int(L), []).append(r)
    latent_rows: list[nm.Tensor] = [None] * batch  # type: ignore[list-item]
    for L, rows in sorted(by_len.items()):
        feat = enc.encode_ids(ids[rows, :max(L, 1)])
        for j, r in enumerate(rows):
            latent_rows[r] = nm.narrow(feat, 0, j, 1)
    return nm.concat(latent_rows, axis=0)


def mle_loss(net: GeneratorNet, guider: GuiderNet, enc: CnnEncoder,
             ids: np.ndarray, lengths: np.ndarray,
             encoder_trainable: bool = False,
             cond_ids: np.ndarray | None = None,
             cond_lengths: np.ndarray | None = None):
    """Teacher-forced mean NLL per token over a padded batch, PAD masked.

    The fusion path stays active so pretraining matches the sampling
    architecture.  The decoder's initial state encodes the full sentence
    itself (or the conditioning source when ``cond_ids`` is given); that
    initial state is the one route through which MLE trains the encoder
    (when ``encoder_trainable``).  Per-step features and guider predictions
    are constants.
    """
    from .guider import prefix_features, sentence_latents

    ids = np.asarray(ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    batch, width = ids.shape
    max_t = int(lengths.max())
    if max_t < 1:
        raise nm.DimensionError("batch of empty sentences")

    feats = prefix_features(enc, ids, lengths)
    src_ids = ids if cond_ids is None else np.asarray(cond_ids, dtype=np.int64)
    src_lengths = lengths if cond_lengths is None else np.asarray(cond_lengths,
                                                                  dtype=np.int64)
    if encoder_trainable:
        latent = _encode_rows(enc, src_ids, src_lengths)
    elif cond_ids is None:
        latent = nm.Tensor(sentence_latents(feats, lengths))
    else:
        with nm.no_grad():
            latent = nm.Tensor(_encode_rows(enc, src_ids, src_lengths).data)

    h, c = net.initial_state(latent)
    with nm.no_grad():
        gstate = guider.initial_state(nm.Tensor(latent.data))

    total = nm.Tensor(0.0)
    token_count = 0
    for t in range(1, max_t + 1):
        f_prev = nm.Tensor(feats[t - 1]) if t > 1 else nm.Tensor(
            np.repeat(_bos_feature(enc)[None, :], batch, axis=0))
        with nm.no_grad():
            pred, gstate = guider.step(gstate, f_prev)
        _, fused = fused_distribution(net, h, pred)
        logp = nm.log_softmax(fused, axis=-1)
        targets = ids[:, t - 1]
        mask = (t <= lengths).astype(np.float64)
        picked = nm.pick(logp, targets)
        total = nm.sub(total, nm.reduce_sum(nm.mul(picked, nm.Tensor(mask))))
        token_count += int(mask.sum())
        if t < max_t:
            h, c = net.advance(h, c, targets)
    return nm.mul(total, 1.0 / token_count), token_count


def _bos_feature(enc: CnnEncoder) -> np.ndarray:
    with nm.no_grad():
        return enc.encode_prefix([]).data
