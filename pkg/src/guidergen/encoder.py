"""CNN prefix encoder shared between training data and generated prefixes.

The encoder maps a (partial) sentence to a fixed-size feature vector:
token embeddings, bias-free convolutions over windows {3, 4, 5}, and
max-over-time pooling, concatenated per window.  Leaving out conv biases and
nonlinearities keeps the map positively homogeneous in the embedding
output, which is what makes every downstream cosine-based reward invariant
to feature scale.
"""

from __future__ import annotations

import numpy as np

from . import corpus as cp
from . import numerics as nm

WINDOWS = (3, 4, 5)


def _uniform(rng: np.random.Generator, shape, scale=0.08):
    return rng.uniform(-scale, scale, size=shape)


class CnnEncoder:
    def __init__(self, vocab_size: int, emb_dim: int, filters_per_window: int,
                 rng: np.random.Generator, windows=WINDOWS):
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.windows = tuple(windows)
        self.filters_per_window = filters_per_window
        self.embed = nm.Parameter(_uniform(rng, (vocab_size, emb_dim)))
        self.convs = [nm.Parameter(_uniform(rng, (w * emb_dim, filters_per_window)))
                      for w in self.windows]

    @property
    def feature_dim(self) -> int:
        return len(self.windows) * self.filters_per_window

    def parameters(self):
        out = [("encoder.embed", self.embed)]
        out += [(f"encoder.conv{w}", p) for w, p in zip(self.windows, self.convs)]
        return out

    def encode_ids(self, ids: np.ndarray) -> nm.Tensor:
        """Features for a batch of prefixes, (B, P) int ids -> (B, d_f).

        Prefixes shorter than the widest window are right-padded with PAD.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise nm.DimensionError("encode_ids expects a non-empty (B, P) array")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise nm.DimensionError("token id out of vocab range")
        widest = max(self.windows)
        if ids.shape[1] < widest:
            pad = np.full((ids.shape[0], widest - ids.shape[1]), cp.PAD,
                          dtype=np.int64)
            ids = np.concatenate([ids, pad], axis=1)
        emb = nm.take(self.embed, ids)  # (B, P, emb_dim)
        feats = [nm.conv1d_maxpool(emb, conv, w)
                 for w, conv in zip(self.windows, self.convs)]
        return nm.concat(feats, axis=-1)

    def encode_prefix(self, ids) -> nm.Tensor:
        """Feature of one prefix; an empty prefix is treated as [BOS]."""
        ids = list(ids)
        if not ids:
            ids = [cp.BOS]
        out = self.encode_ids(np.asarray([ids], dtype=np.int64))
        return nm.reshape(out, (self.feature_dim,))


def detach_for_guider(f: nm.Tensor) -> nm.Tensor:
    """Value-identical copy; backward from the guider stops here."""
    return f.detach()


def encode_initial(encoder: CnnEncoder, ids=None, noise=None) -> nm.Tensor:
    """Shared initial latent for generator and guider.

    Training mode passes a real token sequence (``ids``); unconditional test
    mode passes a noise vector of dimension ``feature_dim`` directly.
    """
    if (ids is None) == (noise is None):
        raise ValueError("encode_initial takes exactly one of ids or noise")
    if ids is not None:
        return encoder.encode_prefix(ids)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (encoder.feature_dim,):
        raise nm.DimensionError(
            f"noise must have dimension {encoder.feature_dim}")
    return nm.Tensor(noise)


def noise_latent(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Standard-normal latent used as the unconditional test-time start."""
    return rng.normal(0.0, 1.0, size=dim)
