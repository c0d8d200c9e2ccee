"""Vocabulary, tokenized corpora, batching, and a probabilistic grammar sampler.

Desk-scale synthetic grammars stand in for large corpora; real corpora load
through the same line-based format (one sentence per line, space-separated
tokens).  Conditional data uses one tab-separated ``source\ttarget`` pair
per line.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


class CorpusError(ValueError):
    pass


class Vocab:
    """token <-> id map with fixed specials PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens):
        self.id_to_token = list(SPECIALS) + list(tokens)
        if len(self.id_to_token) < 5:
            raise CorpusError("vocab needs at least one non-special token")
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocab")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def words(self):
        """Ids of the non-special tokens."""
        return list(range(4, self.size))


def build_vocab(lines, min_count: int = 1) -> Vocab:
    """Frequency-descending vocabulary; ties break lexicographically.

    Tokens seen fewer than ``min_count`` times are dropped (they encode to
    UNK).
    """
    lines = list(lines)
    if not lines:
        raise CorpusError("cannot build a vocabulary from empty input")
    counts = Counter()
    for line in lines:
        counts.update(line.split())
    kept = [t for t, c in counts.items() if c >= min_count and t not in SPECIALS]
    kept.sort(key=lambda t: (-counts[t], t))
    if not kept:
        raise CorpusError("no token meets the minimum count")
    return Vocab(kept)


def save_vocab(vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(vocab.id_to_token) + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.rstrip("\n")]
    if tuple(lines[:4]) != SPECIALS:
        raise CorpusError(
            f"vocab file must start with the literal specials {SPECIALS}")
    return Vocab(lines[4:])


def encode(text: str, vocab: Vocab, max_len: int) -> list[int]:
    """Whitespace tokens -> ids, EOS-terminated when shorter than max_len."""
    ids = [vocab.id(t) for t in text.split()][:max_len]
    if len(ids) < max_len:
        ids.append(EOS)
    return ids


def decode(ids, vocab: Vocab) -> str:
    out = []
    for i in ids:
        if i == EOS or i == PAD:
            break
        out.append(vocab.token(int(i)))
    return " ".join(out)


@dataclass
class Corpus:
    sentences: list[list[int]]
    split: str = "train"

    def __post_init__(self):
        if not self.sentences:
            raise CorpusError("empty corpus")

    def __len__(self):
        return len(self.sentences)


@dataclass
class PairCorpus:
    """Aligned (source, target) id sequences for conditional generation."""

    sources: list[list[int]]
    targets: list[list[int]]

    def __post_init__(self):
        if not self.sources or len(self.sources) != len(self.targets):
            raise CorpusError("paired corpus needs equal, non-empty sides")

    def __len__(self):
        return len(self.sources)


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [ln.rstrip("\n") for ln in f if ln.strip()]


def load_corpus(path, vocab: Vocab, max_len: int, split="train") -> Corpus:
    return Corpus([encode(ln, vocab, max_len) for ln in read_lines(path)], split)


def load_pair_corpus(path, vocab: Vocab, max_len: int) -> PairCorpus:
    sources, targets = [], []
    for ln in read_lines(path):
        if "\t" not in ln:
            raise CorpusError(f"paired corpus line lacks a tab separator: {ln!r}")
        src, tgt = ln.split("\t", 1)
        sources.append(encode(src, vocab, max_len))
        targets.append(encode(tgt, vocab, max_len))
    return PairCorpus(sources, targets)


def is_paired_file(path) -> bool:
    lines = read_lines(path)
    return bool(lines) and "\t" in lines[0]


# ---------------------------------------------------------------------------
# synthetic grammar
# ---------------------------------------------------------------------------

class GrammarError(ValueError):
    pass


@dataclass
class Grammar:
    """Probabilistic context-free grammar over space-separated symbols.

    ``rules`` maps a nonterminal to [(rhs tokens, probability), ...]; the
    probabilities per nonterminal must sum to 1.  Symbols that never appear
    on a left-hand side are terminals.
    """

    rules: dict[str, list[tuple[tuple[str, ...], float]]]
    start: str = "S"

    def __post_init__(self):
        if self.start not in self.rules:
            raise GrammarError(f"start symbol {self.start!r} has no rule")
        for lhs, prods in self.rules.items():
            total = sum(p for _, p in prods)
            if abs(total - 1.0) > 1e-6:
                raise GrammarError(
                    f"probabilities for {lhs!r} sum to {total}, not 1")
            if any(p < 0 for _, p in prods):
                raise GrammarError(f"negative probability under {lhs!r}")

    def terminals(self) -> set[str]:
        out = set()
        for prods in self.rules.values():
            for rhs, _ in prods:
                out.update(s for s in rhs if s not in self.rules)
        return out

    def derive(self, rng: np.random.Generator, max_len: int):
        """One leftmost derivation, or None if it exceeds ``max_len`` tokens."""
        stack = [self.start]
        out: list[str] = []
        expansions = 0
        limit = 64 * (max_len + 1)
        while stack:
            sym = stack.pop()
            prods = self.rules.get(sym)
            if prods is None:
                out.append(sym)
                if len(out) > max_len:
                    return None
            else:
                expansions += 1
                if expansions > limit:
                    return None
                probs = np.array([p for _, p in prods])
                j = int(rng.choice(len(prods), p=probs / probs.sum()))
                stack.extend(reversed(prods[j][0]))
        return out

    def recognizes(self, tokens) -> bool:
        """Earley membership test; independent of the sampling path."""
        tokens = list(tokens)
        n = len(tokens)
        # item: (lhs, rhs, dot, origin)
        charts: list[set] = [set() for _ in range(n + 1)]
        for rhs, _ in self.rules[self.start]:
            charts[0].add((self.start, rhs, 0, 0))
        for i in range(n + 1):
            queue = list(charts[i])
            while queue:
                lhs, rhs, dot, origin = item = queue.pop()
                if dot < len(rhs):
                    sym = rhs[dot]
                    if sym in self.rules:  # predict
                        for prod, _ in self.rules[sym]:
                            new = (sym, prod, 0, i)
                            if new not in charts[i]:
                                charts[i].add(new)
                                queue.append(new)
                    elif i < n and tokens[i] == sym:  # scan
                        charts[i + 1].add((lhs, rhs, dot + 1, origin))
                else:  # complete
                    for plhs, prhs, pdot, porigin in list(charts[origin]):
                        if pdot < len(prhs) and prhs[pdot] == lhs:
                            new = (plhs, prhs, pdot + 1, porigin)
                            if new not in charts[i]:
                                charts[i].add(new)
                                queue.append(new)
        return any(item[0] == self.start and item[2] == len(item[1])
                   and item[3] == 0 for item in charts[n])


def parse_grammar(text: str, start: str = "S") -> Grammar:
    """Parse ``LHS -> sym sym ... @ prob`` lines; ``#`` starts a comment."""
    rules: dict[str, list[tuple[tuple[str, ...], float]]] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line or "@" not in line:
            raise GrammarError(f"bad production: {raw!r}")
        head, rest = line.split("->", 1)
        body, prob = rest.rsplit("@", 1)
        lhs = head.strip()
        rhs = tuple(body.split())
        if not lhs or not rhs:
            raise GrammarError(f"bad production: {raw!r}")
        rules.setdefault(lhs, []).append((rhs, float(prob)))
    if not rules:
        raise GrammarError("grammar has no productions")
    return Grammar(rules, start=start)


def load_grammar(path, start: str = "S") -> Grammar:
    with open(path, encoding="utf-8") as f:
        return parse_grammar(f.read(), start=start)


def sample_grammar(grammar: Grammar, n: int, max_len: int,
                   rng: np.random.Generator, max_retries: int = 200):
    """Sample ``n`` token lists of length <= max_len; deterministic under rng."""
    if n < 1:
        raise GrammarError("need n >= 1 samples")
    out = []
    for _ in range(n):
        for attempt in range(max_retries):
            tokens = grammar.derive(rng, max_len)
            if tokens is not None:
                out.append(tokens)
                break
        else:
            raise GrammarError(
                f"no derivation within {max_len} tokens after {max_retries} tries")
    return out


def grammar_corpus(grammar: Grammar, n: int, max_len: int,
                   rng: np.random.Generator, vocab: Vocab | None = None,
                   split="train"):
    """Sample a corpus and (optionally) build its vocabulary in one pass."""
    token_lists = sample_grammar(grammar, n, max_len - 1, rng)
    lines = [" ".join(t) for t in token_lists]
    if vocab is None:
        vocab = build_vocab(lines)
    corpus = Corpus([encode(ln, vocab, max_len) for ln in lines], split)
    return corpus, vocab


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def pad_batch(sentences, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists with PAD to (B, max_len) plus a length vector."""
    ids = np.full((len(sentences), max_len), PAD, dtype=np.int64)
    lengths = np.zeros(len(sentences), dtype=np.int64)
    for r, sent in enumerate(sentences):
        if len(sent) > max_len:
            raise CorpusError(f"sentence longer than max_len={max_len}")
        ids[r, :len(sent)] = sent
        lengths[r] = len(sent)
    return ids, lengths


def batches(corpus: Corpus, batch_size: int, max_len: int,
            rng: np.random.Generator):
    """Shuffled padded batches; order is driven only by the supplied rng."""
    if batch_size < 1:
        raise CorpusError("batch_size must be >= 1")
    order = rng.permutation(len(corpus.sentences))
    for lo in range(0, len(order), batch_size):
        chunk = [corpus.sentences[i] for i in order[lo:lo + batch_size]]
        yield pad_batch(chunk, max_len)


def pair_batches(pairs: PairCorpus, batch_size: int, max_len: int,
                 rng: np.random.Generator):
    """Shuffled batches of (source ids, source lengths, target ids, target lengths)."""
    if batch_size < 1:
        raise CorpusError("batch_size must be >= 1")
    order = rng.permutation(len(pairs))
    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        src = [pairs.sources[i] for i in idx]
        tgt = [pairs.targets[i] for i in idx]
        yield pad_batch(src, max_len) + pad_batch(tgt, max_len)
