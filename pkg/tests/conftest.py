"""Shared fixtures: the desk-scale grammar and tiny model configurations."""

import numpy as np
import pytest

from guidergen import corpus as cp
from guidergen import trainer as tr
from guidergen.config import TrainConfig

# Noun-phrase / verb-phrase grammar with skewed lexical choices.  Longest
# derivation is 11 tokens, so max_len 12 leaves room for EOS.
GRAMMAR_TEXT = """
# toy sentence grammar
S -> NP VP @ 1.0
NP -> Det N @ 0.65
NP -> Det Adj N @ 0.35
VP -> V NP @ 0.55
VP -> V NP PP @ 0.25
VP -> V PP @ 0.20
PP -> P NP @ 1.0
Det -> the @ 0.5
Det -> a @ 0.3
Det -> every @ 0.12
Det -> some @ 0.08
Adj -> big @ 0.3
Adj -> small @ 0.22
Adj -> red @ 0.16
Adj -> old @ 0.12
Adj -> loud @ 0.08
Adj -> shiny @ 0.06
Adj -> quick @ 0.04
Adj -> lazy @ 0.02
V -> sees @ 0.24
V -> likes @ 0.18
V -> chases @ 0.14
V -> finds @ 0.12
V -> follows @ 0.1
V -> watches @ 0.08
V -> carries @ 0.06
V -> paints @ 0.04
V -> draws @ 0.03
V -> hides @ 0.01
P -> near @ 0.4
P -> under @ 0.25
P -> behind @ 0.2
P -> beside @ 0.1
P -> above @ 0.05
N -> cat @ 0.2
N -> dog @ 0.16
N -> bird @ 0.12
N -> fish @ 0.1
N -> horse @ 0.08
N -> mouse @ 0.07
N -> table @ 0.06
N -> chair @ 0.05
N -> lamp @ 0.04
N -> house @ 0.035
N -> tree @ 0.03
N -> river @ 0.025
N -> stone @ 0.02
N -> cloud @ 0.007
N -> boat @ 0.003
"""


@pytest.fixture(scope="session")
def grammar():
    return cp.parse_grammar(GRAMMAR_TEXT)


def tiny_config(**overrides) -> TrainConfig:
    """Small dimensions so finite-difference sweeps stay fast."""
    base = dict(seed=0, batch_size=8, max_len=12, vocab_min_count=1,
                emb_dim=10, filters=6, dec_emb_dim=10, decoder_hidden=16,
                guider_hidden=16, disc_emb_dim=8, disc_filters=5,
                pretrain_epochs=1, pretrain_guider_epochs=1,
                pretrain_disc_steps=2, gmgan_rounds=2, gmgan_g_steps=1,
                gmgan_d_steps=1, gmgan_sample_size=4, gmgan_guider_refresh=1,
                gmst_steps=2, gmst_sample_size=3)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def small_corpus(grammar):
    rng = np.random.default_rng(123)
    corpus, vocab = cp.grammar_corpus(grammar, 300, 12, rng)
    return corpus, vocab


@pytest.fixture()
def tiny_models(small_corpus):
    _, vocab = small_corpus
    cfg = tiny_config()
    models = tr.build_models(cfg, vocab.size, np.random.default_rng(cfg.seed))
    return models, cfg, vocab
