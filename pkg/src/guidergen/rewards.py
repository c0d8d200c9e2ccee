"""Reward algebra for guider-matched sequence training.

All functions here are pure and operate on plain float64 arrays: feature
vectors are gradient-severed before they reach a reward, and Q values enter
the policy-gradient surrogate as constants.

Indexing convention: a sampled sequence of length T has prefix features
f_0..f_T (f_0 is the empty-prefix feature) and guider predictions
fhat_c..fhat_T, where fhat_t was emitted c steps earlier from f_{t-c}.  The
per-step reward r_g[t] is defined for 1-based steps t=1..T and is 0 for
t <= c, where no c-step-old prediction exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm

REWARD_MODES = ("final", "feature", "both")


class RewardError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    """Look-ahead, discounting, and Q-composition switches.

    ``relative_discount`` replaces the verbatim absolute exponent gamma^i
    with gamma^(i-t); ``clamp`` clips r_g into [0,1] before the conditional
    composition, whose (1 - r_g) penalty term presumes nonnegative rewards.
    """

    c: int = 4
    gamma: float = 0.95
    mode: str = "both"
    clamp: bool = True
    relative_discount: bool = False

    def __post_init__(self):
        if self.c < 1:
            raise RewardError("look-ahead c must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise RewardError("gamma must lie in [0, 1]")
        if self.mode not in REWARD_MODES:
            raise RewardError(f"mode must be one of {REWARD_MODES}")


@dataclass
class RewardTrace:
    """Per-step rewards and composed Q values for one sampled sequence."""

    rg: np.ndarray
    q: np.ndarray
    final: float

    def __post_init__(self):
        self.rg = np.asarray(self.rg, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.rg.shape != self.q.shape:
            raise RewardError("reward and Q vectors differ in length")

    @property
    def length(self) -> int:
        return int(self.rg.size)

    def csv_rows(self):
        for t in range(self.length):
            yield t + 1, self.rg[t], self.q[t]


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < nm.ZERO_NORM_EPS or nb < nm.ZERO_NORM_EPS:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def feature_matching_rewards(features, predictions,
                             config: RewardConfig) -> np.ndarray:
    """Per-step cosine agreement between realized and predicted features.

    ``features`` holds f_0..f_T; ``predictions`` holds fhat_c..fhat_T (so
    ``len(predictions) == max(T - c + 1, 0)``).  For t > c,

        r_g[t] = 1/(2c) * sum_{i=1..c} [ cos(f_t, fhat_t)
                                         + cos(f_t - f_{t-i}, fhat_t - f_{t-i}) ]

    and r_g[t] = 0 for t <= c.  The first cosine does not depend on i; it is
    summed c times and divided by 2c exactly as the definition reads.  Every
    value lies in [-1, 1].
    """
    features = np.asarray(features, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if features.ndim != 2:
        raise RewardError("features must be a (T+1, d) array")
    horizon = features.shape[0] - 1
    c = config.c
    expected = max(horizon - c + 1, 0)
    if len(predictions) != expected:
        raise RewardError(
            f"need {expected} predictions for {horizon} steps at c={c}, "
            f"got {len(predictions)}")
    rg = np.zeros(horizon, dtype=np.float64)
    for t in range(c + 1, horizon + 1):
        fhat = predictions[t - c]
        f_t = features[t]
        acc = 0.0
        for i in range(1, c + 1):
            f_prev = features[t - i]
            acc += _cos(f_t, fhat) + _cos(f_t - f_prev, fhat - f_prev)
        rg[t - 1] = acc / (2.0 * c)
    return rg


def cumulative_reward(rg, gamma: float, t: int,
                      relative: bool = False) -> float:
    """sum_{i=t..T} gamma^i * rg[i] with 1-based t; gamma^(i-t) if relative."""
    rg = np.asarray(rg, dtype=np.float64)
    horizon = rg.size
    if not 1 <= t <= horizon:
        raise RewardError(f"t={t} out of range 1..{horizon}")
    idx = np.arange(t, horizon + 1, dtype=np.float64)
    expo = idx - t if relative else idx
    return float(np.sum(gamma ** expo * rg[t - 1:]))


def _cumulative_vector(rg: np.ndarray, gamma: float,
                       relative: bool) -> np.ndarray:
    return np.array([cumulative_reward(rg, gamma, t, relative)
                     for t in range(1, rg.size + 1)])


def q_unconditional(rg, r_final: float, config: RewardConfig) -> np.ndarray:
    """Q_t = (sum_{i=t..T} gamma^i rg_i) * r_final, gated by the reward mode."""
    rg = np.asarray(rg, dtype=np.float64)
    if not 0.0 <= r_final <= 1.0:
        raise RewardError("the discriminator reward must lie in [0, 1]")
    if config.mode == "final":
        return np.full(rg.size, r_final, dtype=np.float64)
    cum = _cumulative_vector(rg, config.gamma, config.relative_discount)
    if config.mode == "feature":
        return cum
    return cum * r_final


def self_critical_reward(r_sample: float, r_greedy: float) -> float:
    """Sampled-sequence reward minus the greedy-decode baseline."""
    return float(r_sample) - float(r_greedy)


def q_conditional(rg, r_s: float, config: RewardConfig) -> np.ndarray:
    """Self-critical Q: the penalty branch credits feature mismatch.

    If r_s > 0: Q_t = r_s * sum gamma^i rg_i; otherwise
    Q_t = r_s * sum gamma^i (1 - rg_i), so a perfect feature match
    neutralizes a negative final reward.  ``config.clamp`` clips rg into
    [0, 1] first.
    """
    rg = np.asarray(rg, dtype=np.float64)
    if config.clamp:
        rg = np.clip(rg, 0.0, 1.0)
    if config.mode == "final":
        return np.full(rg.size, r_s, dtype=np.float64)
    if config.mode == "feature":
        return _cumulative_vector(rg, config.gamma, config.relative_discount)
    base = rg if r_s > 0 else 1.0 - rg
    cum = _cumulative_vector(base, config.gamma, config.relative_discount)
    return r_s * cum


def policy_gradient_loss(logprobs, q) -> nm.Tensor:
    """REINFORCE surrogate: -(1/T) sum_t Q_t logprob_t with constant Q."""
    q = np.asarray(q, dtype=np.float64)
    if isinstance(logprobs, (list, tuple)):
        logprobs = nm.concat([nm.reshape(lp, (1,)) for lp in logprobs], axis=0)
    if logprobs.data.shape != q.shape:
        raise RewardError("logprobs and Q values differ in length")
    return nm.neg(nm.reduce_mean(nm.mul(logprobs, nm.Tensor(q))))
