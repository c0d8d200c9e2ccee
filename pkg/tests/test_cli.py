"""CLI end-to-end: every command, exit codes, determinism, figures."""

import os

import numpy as np
import pytest

from guidergen import checkpoint as ck
from guidergen import cli
from guidergen import config as cfg_mod
from guidergen import corpus as cp
from guidergen import trainer as tr

from tests.conftest import GRAMMAR_TEXT, tiny_config


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Grammar, corpus, config, and a pretrained checkpoint, built once."""
    root = tmp_path_factory.mktemp("cli")
    grammar = root / "grammar.txt"
    grammar.write_text(GRAMMAR_TEXT)
    corpus = root / "corpus.txt"
    assert cli.main(["make-corpus", "--grammar", str(grammar), "--num", "60",
                     "--max-len", "11", "--seed", "3",
                     "--out", str(corpus)]) == 0
    cfg = tiny_config(pretrain_epochs=1, gmgan_rounds=1, gmst_steps=1)
    config = root / "run.cfg"
    config.write_text(cfg_mod.config_to_text(cfg))
    ckpt = root / "pre.ckpt"
    assert cli.main(["pretrain", "--corpus", str(corpus), "--config",
                     str(config), "--out", str(ckpt)]) == 0
    return root, grammar, corpus, config, ckpt


def test_make_corpus_output_is_grammatical(workdir):
    root, grammar_path, corpus_path, _, _ = workdir
    grammar = cp.load_grammar(grammar_path)
    lines = cp.read_lines(corpus_path)
    assert len(lines) == 60
    for ln in lines:
        assert grammar.recognizes(ln.split())


def test_missing_corpus_exits_2_and_names_path(capsys):
    code = cli.main(["pretrain", "--corpus", "/no/such/corpus.txt",
                     "--out", "/tmp/x.ckpt"])
    assert code == 2
    assert "/no/such/corpus.txt" in capsys.readouterr().err


def test_unknown_config_key_exits_2(workdir, tmp_path, capsys):
    _, _, corpus, _, _ = workdir
    bad = tmp_path / "bad.cfg"
    bad.write_text("not_a_key = 3\n")
    code = cli.main(["pretrain", "--corpus", str(corpus), "--config",
                     str(bad), "--out", str(tmp_path / "x.ckpt")])
    assert code == 2
    assert "not_a_key" in capsys.readouterr().err


def test_pretrain_zero_epochs_equals_initialization(workdir, tmp_path):
    _, _, corpus, config, _ = workdir
    out = tmp_path / "init.ckpt"
    assert cli.main(["pretrain", "--corpus", str(corpus), "--config",
                     str(config), "--epochs", "0", "--out", str(out)]) == 0
    snap = ck.load_checkpoint(out)
    fresh = tr.build_models(snap.config, snap.vocab.size,
                            np.random.default_rng(snap.config.seed))
    for name, param in fresh.all_parameters():
        assert np.array_equal(snap.tensors[name], param.data), name


def test_pretrain_rerun_same_seed_bitwise_identical(workdir, tmp_path):
    _, _, corpus, config, _ = workdir
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    for out in (a, b):
        assert cli.main(["pretrain", "--corpus", str(corpus), "--config",
                         str(config), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gmgan_zero_steps_keeps_model_state(workdir, tmp_path):
    _, _, corpus, _, ckpt = workdir
    out = tmp_path / "same.ckpt"
    assert cli.main(["train-gmgan", "--ckpt", str(ckpt), "--corpus",
                     str(corpus), "--steps", "0", "--out", str(out)]) == 0
    before = ck.load_checkpoint(ckpt)
    after = ck.load_checkpoint(out)
    assert set(before.tensors) == set(after.tensors)
    for name in before.tensors:
        assert np.array_equal(before.tensors[name], after.tensors[name])
    assert before.rng_state == after.rng_state
    assert before.vocab_text == after.vocab_text


def test_three_reward_modes_three_distinct_logs(workdir, tmp_path):
    _, _, corpus, _, ckpt = workdir
    logs = {}
    for mode in ("final", "feature", "both"):
        out = tmp_path / f"{mode}.ckpt"
        log = tmp_path / f"{mode}.csv"
        assert cli.main(["train-gmgan", "--ckpt", str(ckpt), "--corpus",
                         str(corpus), "--reward-mode", mode, "--steps", "2",
                         "--out", str(out), "--log", str(log)]) == 0
        logs[mode] = log.read_text()
        assert (tmp_path / f"{mode}.png").exists()
    assert len(set(logs.values())) == 3


def test_version_mismatch_refused(workdir, tmp_path, capsys):
    _, _, corpus, _, ckpt = workdir
    raw = bytearray(ckpt.read_bytes())
    raw[4:8] = (9).to_bytes(4, "little")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    code = cli.main(["train-gmgan", "--ckpt", str(bad), "--corpus",
                     str(corpus), "--steps", "1",
                     "--out", str(tmp_path / "x.ckpt")])
    assert code == 2
    assert "version" in capsys.readouterr().err


def test_generate_same_seed_identical(workdir, capsys):
    _, _, _, _, ckpt = workdir
    assert cli.main(["generate", "--ckpt", str(ckpt), "--num", "5",
                     "--seed", "11"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["generate", "--ckpt", str(ckpt), "--num", "5",
                     "--seed", "11"]) == 0
    assert capsys.readouterr().out == first
    assert len(first.splitlines()) == 5


def test_generate_num_zero_empty_output(workdir, capsys):
    _, _, _, _, ckpt = workdir
    assert cli.main(["generate", "--ckpt", str(ckpt), "--num", "0"]) == 0
    assert capsys.readouterr().out == ""


def test_generate_greedy_condition_ignores_seed(workdir, tmp_path, capsys):
    _, _, _, _, ckpt = workdir
    cond = tmp_path / "cond.txt"
    cond.write_text("the cat sees a dog\nthe dog likes the cat\n")
    outs = []
    for seed in ("1", "999"):
        assert cli.main(["generate", "--ckpt", str(ckpt), "--condition",
                         str(cond), "--greedy", "--seed", seed]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert len(outs[0].splitlines()) == 2


def test_gmst_requires_paired_corpus(workdir, tmp_path, capsys):
    _, _, corpus, _, ckpt = workdir
    code = cli.main(["train-gmst", "--ckpt", str(ckpt), "--corpus",
                     str(corpus), "--steps", "1",
                     "--out", str(tmp_path / "x.ckpt")])
    assert code == 2
    assert "tab" in capsys.readouterr().err.lower()


def test_gmst_runs_on_copy_pairs(workdir, tmp_path):
    _, _, corpus, _, ckpt = workdir
    lines = cp.read_lines(corpus)[:20]
    pairs = tmp_path / "pairs.tsv"
    pairs.write_text("".join(f"{ln}\t{ln}\n" for ln in lines))
    out = tmp_path / "gmst.ckpt"
    log = tmp_path / "gmst.csv"
    assert cli.main(["train-gmst", "--ckpt", str(ckpt), "--corpus",
                     str(pairs), "--steps", "2", "--out", str(out),
                     "--log", str(log)]) == 0
    assert log.exists() and (tmp_path / "gmst.png").exists()


def test_evaluate_perfect_match(workdir, tmp_path, capsys):
    hyps = tmp_path / "h.txt"
    refs = tmp_path / "r.txt"
    hyps.write_text("the cat sees a dog\nthe dog likes the cat\n")
    refs.write_text("the cat sees a dog\nthe dog likes the cat\n")
    assert cli.main(["evaluate", "--hyps", str(hyps), "--refs", str(refs),
                     "--max-n", "3"]) == 0
    out = capsys.readouterr().out
    for line in out.splitlines():
        if line.startswith("BLEU-"):
            assert float(line.split()[-1]) == 1.0


def test_evaluate_matches_library_oracle(workdir, tmp_path, capsys):
    from guidergen import metrics
    hyps = tmp_path / "h2.txt"
    refs = tmp_path / "r2.txt"
    hyps.write_text("the cat sat\na dog\nbirds fly high\n")
    refs.write_text("the cat sat on the mat\na big dog\nbirds fly high\n")
    csv = tmp_path / "rep.csv"
    assert cli.main(["evaluate", "--hyps", str(hyps), "--refs", str(refs),
                     "--max-n", "2", "--csv", str(csv)]) == 0
    capsys.readouterr()
    hl = [ln.split() for ln in cp.read_lines(hyps)]
    rl = [ln.split() for ln in cp.read_lines(refs)]
    want = metrics.bleu(hl, [rl] * len(hl), max_n=2).scores[2]
    got = float(csv.read_text().splitlines()[2].split(",")[1])
    assert abs(got - want) < 1e-9
    assert (tmp_path / "rep.png").exists()


def test_evaluate_self_needs_two(workdir, tmp_path, capsys):
    hyps = tmp_path / "one.txt"
    hyps.write_text("only one sentence\n")
    code = cli.main(["evaluate", "--hyps", str(hyps), "--self"])
    assert code == 2
    assert "2" in capsys.readouterr().err


def test_reward_trace_short_sentence_all_zero(workdir, capsys):
    _, _, _, _, ckpt = workdir
    assert cli.main(["reward-trace", "--ckpt", str(ckpt), "--sentence",
                     "the cat"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "position,token,r_g"
    assert len(lines) == 3
    for ln in lines[1:]:
        assert float(ln.split(",")[2]) == 0.0


def test_reward_trace_deterministic_and_cross_checked(workdir, tmp_path,
                                                      capsys):
    _, _, _, _, ckpt = workdir
    sentence = "the cat sees a dog near the tree"
    argv = ["reward-trace", "--ckpt", str(ckpt), "--sentence", sentence]
    assert cli.main(argv) == 0
    first = capsys.readouterr().out
    assert cli.main(argv) == 0
    assert capsys.readouterr().out == first
    # cross-module recomputation
    models, cfg, vocab, _ = cli._restore(str(ckpt))
    ids = [vocab.id(t) for t in sentence.split()]
    want = tr.reward_trace_for_ids(models, ids, cfg.reward_config())
    got = [float(ln.split(",")[2]) for ln in first.strip().splitlines()[1:]]
    assert np.allclose(got, want, atol=1e-10)
    out = tmp_path / "trace.csv"
    assert cli.main(argv + ["--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "trace.png").exists()


def test_reward_trace_empty_sentence_rejected(workdir, capsys):
    _, _, _, _, ckpt = workdir
    assert cli.main(["reward-trace", "--ckpt", str(ckpt),
                     "--sentence", "   "]) == 2


def test_pretrain_log_written_next_to_checkpoint(workdir):
    root, _, _, _, ckpt = workdir
    log = str(ckpt) + ".log.csv"
    assert os.path.exists(log)
    assert os.path.exists(str(ckpt) + ".log.png")
    header = open(log).readline().strip()
    assert header == "step,mle_loss,mean_rg,mean_q,d_loss,bleu2,self_bleu2"
