"""Corpus-level BLEU, self-BLEU diversity, and teacher-forced perplexity.

BLEU here is the corpus-level definition: clipped (modified) n-gram
precision totals pooled over the corpus, geometric mean over orders
1..max_n, multiplied by the brevity penalty.  The effective reference
length is, per hypothesis, the reference length closest to the hypothesis
length (ties favor the shorter).  With ``smoothing`` on, an order whose
clipped-match total is zero contributes 1/(total+1), and an order with no
n-grams at all contributes 1; with smoothing off, either case zeroes the
score.  Numbers are therefore comparable within this artifact, not across
other BLEU variants.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import corpus as cp
from . import generator as gen
from . import numerics as nm


class MetricError(ValueError):
    pass


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GSG_THREADS", "1")))
    except ValueError:
        return 1


def _ordered_map(fn, items):
    """Map preserving order; fans out only when GSG_THREADS > 1."""
    n = _worker_count()
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuReport:
    scores: dict[int, float]  # n -> BLEU-n, geometric mean over orders 1..n
    max_n: int
    hyp_count: int
    ref_count: int
    smoothing: bool

    def table(self) -> str:
        rows = [f"{'metric':<10}{'score':>10}"]
        for n in sorted(self.scores):
            rows.append(f"{'BLEU-' + str(n):<10}{self.scores[n]:>10.5f}")
        rows.append(f"{'hyps':<10}{self.hyp_count:>10d}")
        rows.append(f"{'refs':<10}{self.ref_count:>10d}")
        rows.append(f"{'smoothing':<10}{str(self.smoothing):>10}")
        return "\n".join(rows)

    def csv(self) -> str:
        lines = ["metric,score"]
        lines += [f"bleu{n},{self.scores[n]:.10f}" for n in sorted(self.scores)]
        return "\n".join(lines) + "\n"


def bleu(hypotheses, references, max_n: int = 5,
         smoothing: bool = False) -> BleuReport:
    """Corpus BLEU of token lists against per-hypothesis reference lists.

    ``references[i]`` is the list of reference token lists for hypothesis
    ``i``; pass the same list for every element to score against a shared
    reference corpus.
    """
    if max_n < 1:
        raise MetricError("max_n must be >= 1")
    hypotheses = [list(h) for h in hypotheses]
    if not hypotheses:
        raise MetricError("no hypotheses to score")
    if len(references) != len(hypotheses) or any(not r for r in references):
        raise MetricError("each hypothesis needs a non-empty reference list")

    matched = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        refs = [list(r) for r in refs]
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            cap = Counter()
            for r in refs:
                for gram, c in _ngrams(r, n).items():
                    if c > cap[gram]:
                        cap[gram] = c
            matched[n] += sum(min(c, cap[gram]) for gram, c in counts.items())
            total[n] += sum(counts.values())

    if hyp_len == 0:
        scores = {n: 0.0 for n in range(1, max_n + 1)}
        return BleuReport(scores, max_n, len(hypotheses),
                          sum(len(r) for r in references), smoothing)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)

    log_p = []
    for n in range(1, max_n + 1):
        if total[n] == 0:
            log_p.append(0.0 if smoothing else None)  # vacuous order
        elif matched[n] == 0:
            log_p.append(math.log(1.0 / (total[n] + 1)) if smoothing else None)
        else:
            log_p.append(math.log(matched[n] / total[n]))

    scores = {}
    for n in range(1, max_n + 1):
        if any(lp is None for lp in log_p[:n]):
            scores[n] = 0.0
        else:
            scores[n] = bp * math.exp(sum(log_p[:n]) / n)
    return BleuReport(scores, max_n, len(hypotheses),
                      sum(len(r) for r in references), smoothing)


def sentence_bleu(hypothesis, references, n: int = 4,
                  smoothing: bool = True) -> float:
    """Single-sentence BLEU-n, smoothed by default (used as a reward)."""
    return bleu([hypothesis], [references], max_n=n,
                smoothing=smoothing).scores[n]


def self_bleu(hypotheses, max_n: int = 5, smoothing: bool = False) -> BleuReport:
    """Mean leave-one-out BLEU of each hypothesis against all the others."""
    hypotheses = [list(h) for h in hypotheses]
    if len(hypotheses) < 2:
        raise MetricError("self-BLEU needs at least 2 hypotheses")

    def one(i):
        refs = hypotheses[:i] + hypotheses[i + 1:]
        return bleu([hypotheses[i]], [refs], max_n=max_n,
                    smoothing=smoothing).scores

    per_hyp = _ordered_map(one, range(len(hypotheses)))
    scores = {n: float(np.mean([s[n] for s in per_hyp]))
              for n in range(1, max_n + 1)}
    return BleuReport(scores, max_n, len(hypotheses),
                      len(hypotheses) - 1, smoothing)


def perplexity(generator, guider, encoder, corpus: cp.Corpus,
               max_len: int, batch_size: int = 64) -> float:
    """exp(mean per-token NLL) under teacher forcing, PAD-masked."""
    if not corpus.sentences:
        raise MetricError("empty corpus")
    total_nll = 0.0
    total_tokens = 0
    with nm.no_grad():
        for lo in range(0, len(corpus.sentences), batch_size):
            chunk = corpus.sentences[lo:lo + batch_size]
            ids, lengths = cp.pad_batch(chunk, max_len)
            loss, count = gen.mle_loss(generator, guider, encoder, ids, lengths)
            total_nll += loss.item() * count
            total_tokens += count
    return math.exp(total_nll / total_tokens)
