"""Vocabulary, encode/decode, grammar sampling, and batching."""

import numpy as np
import pytest

from guidergen import corpus as cp


# ---------------------------------------------------------------------------
# vocab
# ---------------------------------------------------------------------------

def test_build_vocab_frequency_order():
    vocab = cp.build_vocab(["a b", "a"], min_count=1)
    assert vocab.size == 6
    assert vocab.id("a") == 4
    assert vocab.id("b") == 5


def test_build_vocab_min_count_drops_rare():
    vocab = cp.build_vocab(["a b", "a"], min_count=2)
    assert vocab.id("b") == cp.UNK
    assert vocab.id("a") == 4


def test_build_vocab_hand_counted_ids():
    lines = ["red red blue", "green red blue", "green zebra"]
    # counts: red 3, blue 2, green 2, zebra 1; ties lexicographic
    vocab = cp.build_vocab(lines)
    assert [vocab.token(i) for i in range(4, 8)] == ["red", "blue", "green",
                                                     "zebra"]


def test_build_vocab_empty_input():
    with pytest.raises(cp.CorpusError):
        cp.build_vocab([])


def test_vocab_file_round_trip(tmp_path):
    vocab = cp.build_vocab(["x y z z"])
    path = tmp_path / "vocab.txt"
    cp.save_vocab(vocab, path)
    lines = path.read_text().splitlines()
    assert lines[:4] == list(cp.SPECIALS)
    again = cp.load_vocab(path)
    assert again.id_to_token == vocab.id_to_token


def test_vocab_file_requires_specials(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("a\nb\nc\nd\ne\n")
    with pytest.raises(cp.CorpusError):
        cp.load_vocab(path)


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------

def test_encode_empty_is_eos_and_back():
    vocab = cp.build_vocab(["a b"])
    ids = cp.encode("", vocab, max_len=8)
    assert ids == [cp.EOS]
    assert cp.decode(ids, vocab) == ""


def test_round_trip_in_vocab():
    vocab = cp.build_vocab(["the cat sat on the mat"])
    for text in ["the cat", "mat on cat", "sat"]:
        assert cp.decode(cp.encode(text, vocab, 16), vocab) == text


def test_unknown_token_becomes_unk():
    vocab = cp.build_vocab(["a b"])
    ids = cp.encode("a zebra", vocab, 8)
    assert ids[1] == cp.UNK
    assert cp.decode(ids, vocab) == "a <unk>"


def test_encode_respects_max_len():
    vocab = cp.build_vocab(["a b c d e"])
    ids = cp.encode("a b c d e", vocab, max_len=3)
    assert len(ids) == 3
    assert cp.EOS not in ids  # full-length sentences carry no terminator


# ---------------------------------------------------------------------------
# grammar
# ---------------------------------------------------------------------------

def test_single_rule_grammar_is_constant():
    g = cp.parse_grammar("S -> a b @ 1.0")
    rng = np.random.default_rng(0)
    for tokens in cp.sample_grammar(g, 20, 8, rng):
        assert tokens == ["a", "b"]


def test_grammar_sampling_deterministic_under_seed():
    g = cp.parse_grammar("S -> a S @ 0.4\nS -> b @ 0.6")
    one = cp.sample_grammar(g, 50, 10, np.random.default_rng(9))
    two = cp.sample_grammar(g, 50, 10, np.random.default_rng(9))
    assert one == two


def test_grammar_rule_frequency_law_of_large_numbers():
    g = cp.parse_grammar("S -> a @ 0.7\nS -> b @ 0.3")
    samples = cp.sample_grammar(g, 10000, 4, np.random.default_rng(11))
    freq_a = sum(s == ["a"] for s in samples) / len(samples)
    assert abs(freq_a - 0.7) <= 0.02


def test_grammar_probabilities_must_sum_to_one():
    with pytest.raises(cp.GrammarError):
        cp.parse_grammar("S -> a @ 0.5\nS -> b @ 0.3")


def test_grammar_rejects_overlong_derivations():
    # every derivation has length >= 3; max_len 2 can never be met
    g = cp.parse_grammar("S -> a a a @ 1.0")
    with pytest.raises(cp.GrammarError):
        cp.sample_grammar(g, 1, 2, np.random.default_rng(0))


def test_sampled_sentences_are_recognized(grammar):
    rng = np.random.default_rng(21)
    samples = cp.sample_grammar(grammar, 1000, 11, rng)
    for tokens in samples:
        assert grammar.recognizes(tokens)


def test_recognizer_rejects_off_grammar(grammar):
    assert not grammar.recognizes(["cat", "the", "sees"])
    assert not grammar.recognizes(["the", "cat"])
    assert grammar.recognizes(["the", "cat", "sees", "a", "dog"])


def test_grammar_file_round_trip(tmp_path, grammar):
    path = tmp_path / "g.txt"
    from tests.conftest import GRAMMAR_TEXT
    path.write_text(GRAMMAR_TEXT)
    loaded = cp.load_grammar(path)
    assert loaded.rules == grammar.rules


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _corpus(vocab, texts, max_len=8):
    return cp.Corpus([cp.encode(t, vocab, max_len) for t in texts])


def test_single_sentence_single_batch():
    vocab = cp.build_vocab(["a b"])
    corpus = _corpus(vocab, ["a b"])
    out = list(cp.batches(corpus, 1, 8, np.random.default_rng(0)))
    assert len(out) == 1
    ids, lengths = out[0]
    assert ids.shape == (1, 8)
    assert lengths[0] == 3  # a b <eos>


def test_batch_sizes_two_two_one():
    vocab = cp.build_vocab(["a b c d e"])
    corpus = _corpus(vocab, ["a", "b", "c", "d", "e"])
    sizes = [ids.shape[0] for ids, _ in
             cp.batches(corpus, 2, 8, np.random.default_rng(0))]
    assert sizes == [2, 2, 1]


def test_batch_order_deterministic_under_seed():
    vocab = cp.build_vocab(["a b c d e f g"])
    corpus = _corpus(vocab, list("abcdefg"))
    one = [ids.tolist() for ids, _ in
           cp.batches(corpus, 3, 8, np.random.default_rng(4))]
    two = [ids.tolist() for ids, _ in
           cp.batches(corpus, 3, 8, np.random.default_rng(4))]
    assert one == two


def test_no_pad_inside_active_length(small_corpus):
    corpus, _ = small_corpus
    rng = np.random.default_rng(5)
    for ids, lengths in cp.batches(corpus, 16, 12, rng):
        for row, L in zip(ids, lengths):
            assert (row[:L] != cp.PAD).all()
            assert (row[L:] == cp.PAD).all()


def test_pad_batch_rejects_overflow():
    with pytest.raises(cp.CorpusError):
        cp.pad_batch([[4, 5, 6]], 2)


# ---------------------------------------------------------------------------
# paired corpora
# ---------------------------------------------------------------------------

def test_pair_corpus_round_trip(tmp_path):
    path = tmp_path / "pairs.tsv"
    path.write_text("a b\tb a\nc\tc\n")
    vocab = cp.build_vocab(["a b c"])
    pairs = cp.load_pair_corpus(path, vocab, 8)
    assert len(pairs) == 2
    assert cp.decode(pairs.sources[0], vocab) == "a b"
    assert cp.decode(pairs.targets[0], vocab) == "b a"
    assert cp.is_paired_file(path)


def test_pair_corpus_requires_tab(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("just one side\n")
    vocab = cp.build_vocab(["just one side"])
    with pytest.raises(cp.CorpusError):
        cp.load_pair_corpus(path, vocab, 8)
