"""BLEU / self-BLEU against an independent oracle, plus perplexity."""

import math
from collections import Counter

import numpy as np
import pytest

from guidergen import corpus as cp
from guidergen import generator as gen
from guidergen import metrics
from guidergen import numerics as nm


def _ngrams(toks, n):
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def oracle_bleu(hyps, refs, max_n, smoothing):
    """Literal transliteration of the corpus-BLEU definition."""
    matched = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    c = r = 0
    for hyp, rlist in zip(hyps, refs):
        c += len(hyp)
        r += min((abs(len(x) - len(hyp)), len(x)) for x in rlist)[1]
        for n in range(1, max_n + 1):
            hc = _ngrams(hyp, n)
            cap = Counter()
            for x in rlist:
                for g, k in _ngrams(x, n).items():
                    cap[g] = max(cap[g], k)
            matched[n] += sum(min(k, cap[g]) for g, k in hc.items())
            total[n] += sum(hc.values())
    if c == 0:
        return {n: 0.0 for n in range(1, max_n + 1)}
    bp = 1.0 if c > r else math.exp(1 - r / c)
    out = {}
    for top in range(1, max_n + 1):
        logs = []
        dead = False
        for n in range(1, top + 1):
            if total[n] == 0:
                logs.append(0.0) if smoothing else (dead := True)
            elif matched[n] == 0:
                (logs.append(math.log(1.0 / (total[n] + 1)))
                 if smoothing else (dead := True))
            else:
                logs.append(math.log(matched[n] / total[n]))
        out[top] = 0.0 if dead else bp * math.exp(sum(logs) / top)
    return out


HYPS3 = [["the", "cat", "sat"], ["a", "dog"], ["birds", "fly", "high"]]
REFS3 = [[["the", "cat", "sat", "on", "the", "mat"]],
         [["a", "big", "dog"]],
         [["birds", "fly", "high"]]]


def test_perfect_match_is_one():
    hyps = [["a", "b", "c"], ["d", "e"]]
    report = metrics.bleu(hyps, [[h] for h in hyps], max_n=4, smoothing=False)
    # orders beyond the shortest sentence are vacuous without smoothing
    assert report.scores[1] == 1.0
    assert report.scores[2] == 1.0


def test_disjoint_tokens_zero_without_smoothing():
    report = metrics.bleu([["a", "b"]], [[["c", "d"]]], max_n=2)
    assert report.scores[1] == 0.0
    assert report.scores[2] == 0.0


def test_brevity_penalty_single_pair():
    # hyp 3 tokens, ref 6: every n-gram matches, so BLEU-n = e^(1 - 6/3)
    report = metrics.bleu([["the", "cat", "sat"]],
                          [[["the", "cat", "sat", "on", "the", "mat"]]],
                          max_n=3)
    for n in (1, 2, 3):
        assert abs(report.scores[n] - 0.36787944117144233) < 1e-9


def test_three_sentence_corpus_hand_values():
    # hand count: p1 = 8/8, p2 = 4/5, p3 = 2/2, p4 vacuous;
    # c = 8, r = 12 -> BP = e^-0.5
    report = metrics.bleu(HYPS3, REFS3, max_n=4, smoothing=False)
    assert abs(report.scores[1] - 0.6065306597126334) < 1e-9
    assert abs(report.scores[2] - 0.5424975142220966) < 1e-9
    assert abs(report.scores[3] - 0.5630531874731903) < 1e-9
    assert report.scores[4] == 0.0
    smoothed = metrics.bleu(HYPS3, REFS3, max_n=4, smoothing=True)
    assert abs(smoothed.scores[4] - 0.5736212820263836) < 1e-9


def test_add_one_smoothing_on_zero_counts():
    # p2 numerator 0 over denominator 1 -> smoothed to 1/2
    plain = metrics.bleu([["x", "y"]], [[["x", "z", "y"]]], max_n=2)
    smoothed = metrics.bleu([["x", "y"]], [[["x", "z", "y"]]], max_n=2,
                            smoothing=True)
    assert plain.scores[2] == 0.0
    assert abs(smoothed.scores[2] - 0.42888194248035344) < 1e-9


def test_bleu_matches_oracle_on_random_corpora():
    rng = np.random.default_rng(14)
    alphabet = list("abcdefg")
    for _ in range(50):
        hyps = [[alphabet[i] for i in rng.integers(0, 7, rng.integers(1, 9))]
                for _ in range(rng.integers(1, 5))]
        refs = [[[alphabet[i] for i in rng.integers(0, 7, rng.integers(1, 9))]
                 for _ in range(rng.integers(1, 3))] for _ in hyps]
        for smoothing in (False, True):
            got = metrics.bleu(hyps, refs, max_n=4, smoothing=smoothing)
            want = oracle_bleu(hyps, refs, 4, smoothing)
            for n in range(1, 5):
                assert abs(got.scores[n] - want[n]) < 1e-12


def test_bleu_permutation_invariant():
    perm = [2, 0, 1]
    report = metrics.bleu(HYPS3, REFS3, max_n=3)
    shuffled = metrics.bleu([HYPS3[i] for i in perm],
                            [REFS3[i] for i in perm], max_n=3)
    for n in (1, 2, 3):
        assert abs(report.scores[n] - shuffled.scores[n]) < 1e-15


def test_bleu_validates_inputs():
    with pytest.raises(metrics.MetricError):
        metrics.bleu([["a"]], [[["b"]]], max_n=0)
    with pytest.raises(metrics.MetricError):
        metrics.bleu([], [])
    with pytest.raises(metrics.MetricError):
        metrics.bleu([["a"]], [[]])


# ---------------------------------------------------------------------------
# self-BLEU
# ---------------------------------------------------------------------------

def test_self_bleu_identical_hypotheses():
    report = metrics.self_bleu([["a", "b"]] * 4, max_n=2)
    assert report.scores[1] == 1.0
    assert report.scores[2] == 1.0


def test_self_bleu_disjoint_hypotheses():
    report = metrics.self_bleu([["a"], ["b"], ["c"]], max_n=1)
    assert report.scores[1] == 0.0


def test_self_bleu_leave_one_out_composition():
    hyps = [["a", "b", "c"], ["a", "b", "d"], ["e", "f"]]
    report = metrics.self_bleu(hyps, max_n=2)
    per = [oracle_bleu([hyps[i]], [hyps[:i] + hyps[i + 1:]], 2, False)
           for i in range(3)]
    assert abs(report.scores[2] - np.mean([p[2] for p in per])) < 1e-12
    assert abs(report.scores[2] - 0.38490017945975047) < 1e-9


def test_self_bleu_needs_two(monkeypatch):
    with pytest.raises(metrics.MetricError):
        metrics.self_bleu([["a"]])


def test_self_bleu_thread_fanout_matches_serial(monkeypatch):
    hyps = [["a", "b", "c"], ["a", "d"], ["e", "f", "a"], ["b", "c"]]
    serial = metrics.self_bleu(hyps, max_n=3)
    monkeypatch.setenv("GSG_THREADS", "4")
    fanned = metrics.self_bleu(hyps, max_n=3)
    assert serial.scores == fanned.scores


# ---------------------------------------------------------------------------
# perplexity
# ---------------------------------------------------------------------------

def _zeroed(models):
    for _, p in models.all_parameters():
        p.data = np.zeros_like(p.data)
    return models


def test_perplexity_uniform_model_is_vocab_size(tiny_models, small_corpus):
    models, cfg, vocab = tiny_models
    corpus, _ = small_corpus
    _zeroed(models)
    ppl = metrics.perplexity(models.generator, models.guider, models.encoder,
                             corpus, cfg.max_len)
    assert abs(ppl - vocab.size) < 1e-9 * vocab.size


def test_perplexity_matches_independent_nll_sum(tiny_models, small_corpus):
    models, cfg, _ = tiny_models
    corpus, _ = small_corpus
    small = cp.Corpus(corpus.sentences[:40])
    ppl = metrics.perplexity(models.generator, models.guider, models.encoder,
                             small, cfg.max_len)
    total = count = 0
    with nm.no_grad():
        for sent in small.sentences:  # one sentence at a time
            ids, lengths = cp.pad_batch([sent], cfg.max_len)
            loss, n = gen.mle_loss(models.generator, models.guider,
                                   models.encoder, ids, lengths)
            total += loss.item() * n
            count += n
    assert abs(ppl - math.exp(total / count)) < 1e-9
