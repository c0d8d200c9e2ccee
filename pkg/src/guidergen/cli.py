"""Command-line entry point.

Commands: make-corpus, pretrain, train-gmgan, train-gmst, generate,
evaluate, reward-trace.  Exit codes: 0 ok, 1 runtime error, 2 usage error
(bad flags, missing or malformed input files).  Every command that takes
--seed is fully reproducible; CSV outputs get a PNG figure rendered next to
them.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ck
from . import config as cfg_mod
from . import corpus as cp
from . import metrics
from . import plots
from . import rewards as rw
from . import trainer as tr

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _require_file(path, kind: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"{kind} file not found: {path}")
    return path


def _load_config(args) -> cfg_mod.TrainConfig:
    if args.config:
        _require_file(args.config, "config")
        try:
            cfg = cfg_mod.load_config(args.config)
        except cfg_mod.ConfigError as e:
            raise UsageError(f"bad config {args.config}: {e}") from None
    else:
        cfg = cfg_mod.TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _restore(ckpt_path):
    _require_file(ckpt_path, "checkpoint")
    snap = ck.load_checkpoint(ckpt_path)
    cfg = snap.config
    vocab = snap.vocab
    rng = snap.restored_rng()
    models = tr.build_models(cfg, vocab.size, np.random.default_rng(cfg.seed))
    ck.load_tensors_into(models.all_parameters(), snap.tensors)
    return models, cfg, vocab, rng


_ARCH_FIELDS = ("max_len", "emb_dim", "filters", "dec_emb_dim",
                "decoder_hidden", "guider_hidden", "disc_emb_dim",
                "disc_filters")


def _merge_config(ckpt_cfg, args):
    """Apply an override config to a restored run, keeping the architecture."""
    if not args.config:
        cfg = ckpt_cfg
    else:
        cfg = _load_config(args)
        mismatched = [f for f in _ARCH_FIELDS
                      if getattr(cfg, f) != getattr(ckpt_cfg, f)]
        if mismatched:
            raise UsageError(
                "config overrides checkpoint architecture fields: "
                + ", ".join(mismatched))
    return cfg


def _write_log(log: tr.TrainLog, path) -> None:
    log.write_csv(path)
    plots.save_train_log_figure(log, plots.figure_path(path))
    print(f"wrote {path} and {plots.figure_path(path)}")


def _log_path(args, out_path) -> str:
    return args.log if args.log else str(out_path) + ".log.csv"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_make_corpus(args) -> int:
    _require_file(args.grammar, "grammar")
    try:
        grammar = cp.load_grammar(args.grammar)
    except cp.GrammarError as e:
        raise UsageError(f"bad grammar {args.grammar}: {e}") from None
    rng = np.random.default_rng(args.seed)
    token_lists = cp.sample_grammar(grammar, args.num, args.max_len, rng)
    with open(args.out, "w", encoding="utf-8") as f:
        for tokens in token_lists:
            f.write(" ".join(tokens) + "\n")
    print(f"wrote {args.num} sentences to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    _require_file(args.corpus, "corpus")
    cfg = _load_config(args)
    if args.epochs is not None:
        cfg.pretrain_epochs = args.epochs
    lines = cp.read_lines(args.corpus)
    if not lines:
        raise UsageError(f"corpus file is empty: {args.corpus}")
    paired = cp.is_paired_file(args.corpus)
    flat = []
    for ln in lines:
        flat.extend(ln.split("\t") if paired else [ln])
    vocab = cp.build_vocab(flat, cfg.vocab_min_count)
    rng = np.random.default_rng(cfg.seed)
    models = tr.build_models(cfg, vocab.size, rng)
    if paired:
        pairs = cp.load_pair_corpus(args.corpus, vocab, cfg.max_len)
        corpus = cp.Corpus(pairs.targets, split="train")
        # conditional pretraining: decode the target from the source encoding
        log = tr.pretrain_conditional(models, pairs, cfg, rng)
    else:
        corpus = cp.Corpus([cp.encode(ln, vocab, cfg.max_len) for ln in lines],
                           split="train")
        log = tr.pretrain(models, corpus, cfg, rng)
    ck.save_checkpoint(args.out, models.all_parameters(), cfg, vocab, rng)
    _write_log(log, _log_path(args, args.out))
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_train_gmgan(args) -> int:
    models, cfg, vocab, rng = _restore(args.ckpt)
    cfg = _merge_config(cfg, args)
    if args.seed is not None:
        rng = np.random.default_rng(args.seed)
    if args.steps is not None:
        cfg.gmgan_rounds = args.steps
    if args.reward_mode:
        cfg.reward_mode = args.reward_mode
    _require_file(args.corpus, "corpus")
    corpus = cp.load_corpus(args.corpus, vocab, cfg.max_len)
    try:
        log = tr.train_gmgan(models, corpus, cfg, rng)
    except tr.TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    ck.save_checkpoint(args.out, models.all_parameters(), cfg, vocab, rng)
    _write_log(log, _log_path(args, args.out))
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_train_gmst(args) -> int:
    models, cfg, vocab, rng = _restore(args.ckpt)
    cfg = _merge_config(cfg, args)
    if args.seed is not None:
        rng = np.random.default_rng(args.seed)
    if args.steps is not None:
        cfg.gmst_steps = args.steps
    if args.reward_mode:
        cfg.reward_mode = args.reward_mode
    _require_file(args.corpus, "corpus")
    if not cp.is_paired_file(args.corpus):
        raise UsageError(
            f"train-gmst needs a tab-separated source/target corpus: {args.corpus}")
    pairs = cp.load_pair_corpus(args.corpus, vocab, cfg.max_len)
    try:
        log = tr.train_gmst(models, pairs, cfg, rng)
    except tr.TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    ck.save_checkpoint(args.out, models.all_parameters(), cfg, vocab, rng)
    _write_log(log, _log_path(args, args.out))
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_generate(args) -> int:
    models, cfg, vocab, _ = _restore(args.ckpt)
    rng = np.random.default_rng(args.seed)
    conditions = None
    if args.condition:
        _require_file(args.condition, "condition")
        conditions = [cp.encode(ln, vocab, cfg.max_len)
                      for ln in cp.read_lines(args.condition)]
    else:
        if args.num < 0:
            raise UsageError("--num must be >= 0")
        if args.num == 0:
            return 0
    sentences = tr.generate_sentences(models, args.num, cfg, rng,
                                      greedy=args.greedy,
                                      conditions=conditions)
    for ids in sentences:
        print(cp.decode(ids + [cp.EOS], vocab))
    return 0


def cmd_evaluate(args) -> int:
    _require_file(args.hyps, "hypotheses")
    hyp_lines = cp.read_lines(args.hyps)
    if not hyp_lines:
        raise UsageError(f"hypotheses file is empty: {args.hyps}")
    hyps = [ln.split() for ln in hyp_lines]
    try:
        if args.self:
            report = metrics.self_bleu(hyps, max_n=args.max_n,
                                       smoothing=args.smoothing)
            title = "self-BLEU"
        else:
            _require_file(args.refs, "references")
            ref_lines = cp.read_lines(args.refs)
            if not ref_lines:
                raise UsageError(f"references file is empty: {args.refs}")
            refs = [ln.split() for ln in ref_lines]
            report = metrics.bleu(hyps, [refs] * len(hyps), max_n=args.max_n,
                                  smoothing=args.smoothing)
            title = "test-BLEU"
    except metrics.MetricError as e:
        raise UsageError(str(e)) from None
    print(report.table())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(report.csv())
        plots.save_bleu_figure(report, plots.figure_path(args.csv), title)
        print(f"wrote {args.csv} and {plots.figure_path(args.csv)}")
    return 0


def cmd_reward_trace(args) -> int:
    models, cfg, vocab, _ = _restore(args.ckpt)
    if not args.sentence.strip():
        raise UsageError("empty sentence")
    ids = [vocab.id(t) for t in args.sentence.split()]
    tokens = args.sentence.split()
    rg = tr.reward_trace_for_ids(models, ids, cfg.reward_config())
    lines = ["position,token,r_g"]
    lines += [f"{t + 1},{tokens[t]},{rg[t]:.10f}" for t in range(len(tokens))]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        plots.save_reward_trace_figure(list(range(1, len(tokens) + 1)),
                                       tokens, rg,
                                       plots.figure_path(args.out))
        print(f"wrote {args.out} and {plots.figure_path(args.out)}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guidergen",
        description="Guider-network sequence generation trainer and tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="sample sentences from a grammar file")
    p.add_argument("--grammar", required=True)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--max-len", type=int, default=11)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_corpus)

    p = sub.add_parser("pretrain", help="MLE pretraining from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train-gmgan",
                       help="adversarial fine-tuning from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--reward-mode", choices=["final", "feature", "both"])
    p.add_argument("--steps", type=int, help="override gmgan.rounds")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train_gmgan)

    p = sub.add_parser("train-gmst",
                       help="conditional self-critical fine-tuning")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True,
                   help="tab-separated source/target pairs")
    p.add_argument("--config")
    p.add_argument("--reward-mode", choices=["final", "feature", "both"])
    p.add_argument("--steps", type=int, help="override gmst.steps")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train_gmst)

    p = sub.add_parser("generate", help="decode sentences from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--num", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--condition", help="file of source sentences")
    p.add_argument("--greedy", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU / self-BLEU reports")
    p.add_argument("--hyps", required=True)
    p.add_argument("--refs")
    p.add_argument("--max-n", type=int, default=5)
    p.add_argument("--self", action="store_true")
    p.add_argument("--smoothing", action="store_true")
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("reward-trace",
                       help="per-position feature-matching rewards")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_reward_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and not args.self and not args.refs:
        parser.error("evaluate needs --refs unless --self is given")
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (cp.CorpusError, cp.GrammarError, ck.CheckpointError,
            cfg_mod.ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as e:  # runtime failures
        print(f"runtime error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
