"""Binary CNN discriminator over complete padded sentences.

Provides the unconditional final reward: sigmoid(logit) in (0, 1), trained
with binary cross-entropy (real = 1, fake = 0).  It only ever sees full
sentences padded to the run's maximum length; partial-sentence
discrimination is deliberately out of scope.
"""

from __future__ import annotations

import numpy as np

from . import corpus as cp
from . import numerics as nm
from .encoder import WINDOWS, _uniform


class Discriminator:
    def __init__(self, vocab_size: int, emb_dim: int, filters_per_window: int,
                 max_len: int, rng: np.random.Generator, windows=WINDOWS):
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.max_len = max(max_len, max(windows))
        self.windows = tuple(windows)
        self.embed = nm.Parameter(_uniform(rng, (vocab_size, emb_dim)))
        self.convs = [nm.Parameter(_uniform(rng, (w * emb_dim, filters_per_window)))
                      for w in self.windows]
        self.conv_b = [nm.Parameter(np.zeros(filters_per_window))
                       for _ in self.windows]
        feat = len(self.windows) * filters_per_window
        self.head_W = nm.Parameter(_uniform(rng, (feat, 1)))
        self.head_b = nm.Parameter(np.zeros(1))

    def parameters(self):
        out = [("discriminator.embed", self.embed)]
        for w, conv, b in zip(self.windows, self.convs, self.conv_b):
            out.append((f"discriminator.conv{w}", conv))
            out.append((f"discriminator.conv{w}_b", b))
        out += [("discriminator.head_W", self.head_W),
                ("discriminator.head_b", self.head_b)]
        return out

    def _pad(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise nm.DimensionError("discriminator expects a (B, T) id batch")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise nm.DimensionError("token id out of vocab range")
        if ids.shape[1] < self.max_len:
            pad = np.full((ids.shape[0], self.max_len - ids.shape[1]), cp.PAD,
                          dtype=np.int64)
            ids = np.concatenate([ids, pad], axis=1)
        return ids

    def logits(self, ids: np.ndarray) -> nm.Tensor:
        """Real-vs-fake logits for a batch of sentences, (B, T) -> (B,)."""
        ids = self._pad(ids)
        emb = nm.take(self.embed, ids)
        feats = [nm.tanh(nm.conv1d_maxpool(emb, conv, w, bias=b))
                 for w, conv, b in zip(self.windows, self.convs, self.conv_b)]
        out = nm.affine(nm.concat(feats, axis=-1), self.head_W, self.head_b)
        return nm.reshape(out, (ids.shape[0],))

    def score(self, sentence) -> float:
        """sigmoid(logit) of one sentence; deterministic, in (0, 1)."""
        sentence = list(sentence)
        if not sentence:
            raise nm.DimensionError("cannot score an empty sentence")
        with nm.no_grad():
            z = self.logits(np.asarray([sentence], dtype=np.int64))
            return float(nm.sigmoid(z).data[0])


def bce_loss(disc: Discriminator, real_ids: np.ndarray,
             fake_ids: np.ndarray) -> nm.Tensor:
    """Mean binary cross-entropy over the joined batch (real=1, fake=0)."""
    z_real = disc.logits(real_ids)
    z_fake = disc.logits(fake_ids)
    loss_real = nm.reduce_sum(nm.softplus(nm.neg(z_real)))
    loss_fake = nm.reduce_sum(nm.softplus(z_fake))
    n = real_ids.shape[0] + fake_ids.shape[0]
    return nm.mul(nm.add(loss_real, loss_fake), 1.0 / n)


def train_discriminator(disc: Discriminator, real_ids: np.ndarray,
                        fake_ids: np.ndarray, optimizer: nm.Adam,
                        grad_clip: float = 5.0) -> float:
    """One BCE gradient step on a real batch versus a fake batch."""
    if real_ids.shape[0] == 0 or fake_ids.shape[0] == 0:
        raise nm.DimensionError("both batches must be non-empty")
    loss = bce_loss(disc, real_ids, fake_ids)
    loss.backward()
    nm.clip_grad_norm([p for _, p in disc.parameters()], grad_clip)
    optimizer.step()
    return loss.item()
