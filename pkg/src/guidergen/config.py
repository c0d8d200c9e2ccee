"""Run configuration: flat ``key = value`` lines with ``#`` comments.

Keys use a dotted namespace (e.g. ``reward.gamma``).  Unknown keys are
rejected so typos fail fast.  ``config_to_text`` emits every key in a
canonical order; that text is what checkpoints snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .rewards import RewardConfig, RewardError, REWARD_MODES


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 32
    max_len: int = 12
    vocab_min_count: int = 1

    emb_dim: int = 32            # encoder embedding width
    filters: int = 21            # filters per conv window -> feature dim 3*filters
    dec_emb_dim: int = 32
    decoder_hidden: int = 64
    guider_hidden: int = 64
    disc_emb_dim: int = 24
    disc_filters: int = 16

    lr_generator: float = 2e-3
    lr_guider: float = 1e-3
    lr_discriminator: float = 1e-3
    lr_rl: float = 2e-4
    grad_clip: float = 5.0

    pretrain_epochs: int = 3
    pretrain_guider_epochs: int = 3
    pretrain_disc_steps: int = 30

    gmgan_rounds: int = 30
    gmgan_g_steps: int = 1
    gmgan_d_steps: int = 1
    gmgan_sample_size: int = 16
    gmgan_guider_refresh: int = 1

    gmst_steps: int = 100
    gmst_sample_size: int = 8

    mix_start: float = 0.7
    mix_end: float = 0.3

    reward_c: int = 4
    reward_gamma: float = 0.95
    reward_mode: str = "both"
    reward_clamp: bool = True
    reward_relative_discount: bool = False

    sample_temperature: float = 1.0
    eval_every: int = 0
    eval_samples: int = 64

    def reward_config(self) -> RewardConfig:
        return RewardConfig(c=self.reward_c, gamma=self.reward_gamma,
                            mode=self.reward_mode, clamp=self.reward_clamp,
                            relative_discount=self.reward_relative_discount)

    def validate(self) -> "TrainConfig":
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ConfigError(f"reward.mode must be one of {REWARD_MODES}")
        for name in ("pretrain_epochs", "pretrain_guider_epochs",
                     "pretrain_disc_steps", "gmgan_rounds", "gmgan_g_steps",
                     "gmgan_d_steps", "gmst_steps", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{_KEY_OF[name]} must be >= 0")
        if self.sample_temperature < 0:
            raise ConfigError("sample.temperature must be >= 0")
        try:
            self.reward_config()  # range checks on c and gamma
        except RewardError as e:
            raise ConfigError(str(e)) from None
        return self


# dotted config key -> dataclass field
_FIELD_OF = {
    "seed": "seed",
    "batch_size": "batch_size",
    "max_len": "max_len",
    "vocab.min_count": "vocab_min_count",
    "emb_dim": "emb_dim",
    "filters": "filters",
    "dec_emb_dim": "dec_emb_dim",
    "decoder_hidden": "decoder_hidden",
    "guider_hidden": "guider_hidden",
    "disc_emb_dim": "disc_emb_dim",
    "disc_filters": "disc_filters",
    "lr.generator": "lr_generator",
    "lr.guider": "lr_guider",
    "lr.discriminator": "lr_discriminator",
    "lr.rl": "lr_rl",
    "grad_clip": "grad_clip",
    "pretrain.epochs": "pretrain_epochs",
    "pretrain.guider_epochs": "pretrain_guider_epochs",
    "pretrain.disc_steps": "pretrain_disc_steps",
    "gmgan.rounds": "gmgan_rounds",
    "gmgan.g_steps": "gmgan_g_steps",
    "gmgan.d_steps": "gmgan_d_steps",
    "gmgan.sample_size": "gmgan_sample_size",
    "gmgan.guider_refresh": "gmgan_guider_refresh",
    "gmst.steps": "gmst_steps",
    "gmst.sample_size": "gmst_sample_size",
    "mix.start": "mix_start",
    "mix.end": "mix_end",
    "reward.c": "reward_c",
    "reward.gamma": "reward_gamma",
    "reward.mode": "reward_mode",
    "reward.clamp": "reward_clamp",
    "reward.relative_discount": "reward_relative_discount",
    "sample.temperature": "sample_temperature",
    "eval.every": "eval_every",
    "eval.samples": "eval_samples",
}
_KEY_OF = {f: k for k, f in _FIELD_OF.items()}
_TYPE_OF = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(key: str, field_name: str, raw: str):
    kind = _TYPE_OF[field_name]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> TrainConfig:
    cfg = TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_OF:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, _FIELD_OF[key], _parse_value(key, _FIELD_OF[key], value))
    return cfg.validate()


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for key, field_name in _FIELD_OF.items():
        value = getattr(cfg, field_name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
