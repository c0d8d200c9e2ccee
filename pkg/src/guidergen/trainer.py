"""Training orchestration.

``pretrain`` runs teacher-forced MLE on generator+encoder, fits the guider
on real data, then warms the discriminator on real-vs-generated batches.
``train_gmgan`` is the adversarial loop (g-steps of policy gradient with
discriminator-gated Q values, d-steps of BCE, a guider refresh each round).
``train_gmst`` is the conditional loop: sample, greedy-decode the baseline,
reward with the smoothed sentence BLEU-4 difference, update with policy
gradient.

Determinism contract: (config, seed, corpus) -> identical TrainLog and
final parameters across runs.  All randomness flows through the single
Generator passed in; encoder parameters change only during pretraining.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import corpus as cp
from . import discriminator as dsc
from . import encoder as enc_mod
from . import generator as gen_mod
from . import guider as gd_mod
from . import metrics
from . import numerics as nm
from . import rewards as rw
from .config import TrainConfig

LOG_COLUMNS = ("step", "mle_loss", "mean_rg", "mean_q", "d_loss",
               "bleu2", "self_bleu2")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Models:
    encoder: enc_mod.CnnEncoder
    guider: gd_mod.GuiderNet
    generator: gen_mod.GeneratorNet
    discriminator: dsc.Discriminator

    def all_parameters(self):
        return (self.encoder.parameters() + self.guider.parameters()
                + self.generator.parameters() + self.discriminator.parameters())


def build_models(cfg: TrainConfig, vocab_size: int,
                 rng: np.random.Generator) -> Models:
    """Construct all networks; initialization order is fixed for determinism."""
    encoder = enc_mod.CnnEncoder(vocab_size, cfg.emb_dim, cfg.filters, rng)
    guider = gd_mod.GuiderNet(encoder.feature_dim, cfg.guider_hidden, rng)
    generator = gen_mod.GeneratorNet(vocab_size, cfg.dec_emb_dim,
                                     cfg.decoder_hidden, encoder.feature_dim,
                                     rng)
    discriminator = dsc.Discriminator(vocab_size, cfg.disc_emb_dim,
                                      cfg.disc_filters, cfg.max_len, rng)
    return Models(encoder, guider, generator, discriminator)


class TrainLog:
    """Append-only per-step records with a monotone step index."""

    def __init__(self):
        self.rows: list[dict] = []
        self.gmst_records: list[dict] = []

    def add(self, step: int, **values) -> None:
        if self.rows and step < self.rows[-1]["step"]:
            raise ValueError("step index must be monotone")
        row = {"step": step}
        row.update(values)
        self.rows.append(row)

    def csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(LOG_COLUMNS) + "\n")
        for row in self.rows:
            cells = []
            for col in LOG_COLUMNS:
                v = row.get(col)
                if v is None:
                    cells.append("")
                elif col == "step":
                    cells.append(str(v))
                else:
                    cells.append(f"{v:.6f}")
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.csv())

    def last(self, column):
        for row in reversed(self.rows):
            if row.get(column) is not None:
                return row[column]
        return None


def mixed_loss_schedule(step: int, total: int, lam_start: float,
                        lam_end: float) -> float:
    """Linear interpolation from lam_start (step 0) to lam_end (step total)."""
    if not 0 <= step <= total:
        raise ValueError("step must lie in [0, total]")
    if step == 0 or total == 0:
        return lam_start
    if step == total:
        return lam_end
    frac = step / total
    return lam_start + (lam_end - lam_start) * frac


def _epoch_batches(corpus: cp.Corpus, cfg: TrainConfig,
                   rng: np.random.Generator):
    """Endless reshuffled batch stream driven by the run rng."""
    while True:
        yield from cp.batches(corpus, cfg.batch_size, cfg.max_len, rng)


def strip_sentence(ids) -> list[int]:
    """Drop the trailing EOS and anything after it (BLEU/reference form)."""
    out = []
    for i in ids:
        if i in (cp.EOS, cp.PAD):
            break
        out.append(int(i))
    return out


# ---------------------------------------------------------------------------
# reward plumbing
# ---------------------------------------------------------------------------

def trace_from_sample(out: gen_mod.SampleOutput, r_final: float,
                      rc: rw.RewardConfig, conditional: bool = False,
                      ) -> rw.RewardTrace:
    """Feature-matching rewards and Q values for one sampled sequence."""
    preds = out.predictions[:max(out.length - rc.c + 1, 0)]
    rg = rw.feature_matching_rewards(out.features, preds, rc)
    if conditional:
        q = rw.q_conditional(rg, r_final, rc)
    else:
        q = rw.q_unconditional(rg, r_final, rc)
    return rw.RewardTrace(rg, q, r_final)


def reward_trace_for_ids(models: Models, ids, rc: rw.RewardConfig) -> np.ndarray:
    """Per-step feature-matching rewards of a fixed token sequence.

    Replays the generation-side stream: the guider starts from the encoded
    full sequence and consumes the empty-prefix feature first, exactly as it
    would while generating, so traced values match sampling-time rewards.
    """
    ids = [int(i) for i in ids]
    if not ids:
        raise ValueError("empty sequence")
    with nm.no_grad():
        latent = enc_mod.encode_initial(models.encoder, ids=ids)
        gstate = models.guider.initial_state(latent)
        features = [models.encoder.encode_prefix([]).data]
        preds = []
        for t in range(1, len(ids) + 1):
            pred, gstate = models.guider.step(gstate, nm.Tensor(features[-1]))
            preds.append(pred.data)
            features.append(models.encoder.encode_prefix(ids[:t]).data)
    preds = preds[:max(len(ids) - rc.c + 1, 0)]
    return rw.feature_matching_rewards(np.asarray(features), preds, rc)


def mean_feature_reward(models: Models, sentences, rc: rw.RewardConfig) -> float:
    """Mean r_g over the defined positions (t > c) across sentences."""
    values = []
    for sent in sentences:
        rg = reward_trace_for_ids(models, sent, rc)
        values.extend(rg[rc.c:])
    if not values:
        raise ValueError("no sentence extends past the look-ahead")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

def pretrain(models: Models, corpus: cp.Corpus, cfg: TrainConfig,
             rng: np.random.Generator) -> TrainLog:
    """MLE for generator+encoder, guider fitting, discriminator warmup.

    Guider and MLE passes interleave, guider first, so every epoch's MLE
    pass adapts the generator to the current fusion weights and the run
    ends with a generator matched to the final guider.  (Fitting the guider
    after the last MLE pass would shift the fusion inputs under a generator
    that can no longer adapt.)  At most ``pretrain.guider_epochs`` epochs
    include a guider pass.  With pretrain.epochs == 0 the call is a no-op
    and every parameter stays at initialization.
    """
    log = TrainLog()
    if cfg.pretrain_epochs == 0:
        return log
    gen_params = [p for _, p in models.generator.parameters()]
    enc_params = [p for _, p in models.encoder.parameters()]
    opt_mle = nm.Adam(gen_params + enc_params, lr=cfg.lr_generator)
    opt_guider = nm.Adam([p for _, p in models.guider.parameters()],
                         lr=cfg.lr_guider)
    step = 0
    for epoch in range(cfg.pretrain_epochs):
        if epoch < cfg.pretrain_guider_epochs:
            gd_mod.train_guider(models.guider, corpus, models.encoder,
                                cfg.reward_c, opt_guider, rng,
                                batch_size=cfg.batch_size,
                                max_len=cfg.max_len, epochs=1,
                                grad_clip=cfg.grad_clip)
        for ids, lengths in cp.batches(corpus, cfg.batch_size, cfg.max_len, rng):
            loss, _ = gen_mod.mle_loss(models.generator, models.guider,
                                       models.encoder, ids, lengths,
                                       encoder_trainable=True)
            loss.backward()
            nm.clip_grad_norm(gen_params + enc_params, cfg.grad_clip)
            opt_mle.step()
            step += 1
            log.add(step, mle_loss=loss.item())

    if cfg.pretrain_disc_steps > 0:
        opt_disc = nm.Adam([p for _, p in models.discriminator.parameters()],
                           lr=cfg.lr_discriminator)
        stream = _epoch_batches(corpus, cfg, rng)
        for _ in range(cfg.pretrain_disc_steps):
            ids, lengths = next(stream)
            fake = _sample_batch(models, ids, lengths, cfg, rng,
                                 n=ids.shape[0])
            fake_ids, _ = cp.pad_batch([s.ids for s in fake], cfg.max_len)
            d_loss = dsc.train_discriminator(models.discriminator, ids,
                                             fake_ids, opt_disc,
                                             grad_clip=cfg.grad_clip)
            step += 1
            log.add(step, d_loss=d_loss)
    return log


def pretrain_conditional(models: Models, pairs: cp.PairCorpus,
                         cfg: TrainConfig, rng: np.random.Generator) -> TrainLog:
    """MLE pretraining for conditional tasks: decode target from Enc(source).

    The guider is fitted on the target sentences.  No discriminator warmup:
    conditional fine-tuning rewards come from the evaluation metric, not
    from a discriminator.
    """
    log = TrainLog()
    if cfg.pretrain_epochs == 0:
        return log
    gen_params = [p for _, p in models.generator.parameters()]
    enc_params = [p for _, p in models.encoder.parameters()]
    opt_mle = nm.Adam(gen_params + enc_params, lr=cfg.lr_generator)
    opt_guider = nm.Adam([p for _, p in models.guider.parameters()],
                         lr=cfg.lr_guider)
    targets = cp.Corpus(pairs.targets, split="train")
    step = 0
    for epoch in range(cfg.pretrain_epochs):
        if epoch < cfg.pretrain_guider_epochs:
            gd_mod.train_guider(models.guider, targets, models.encoder,
                                cfg.reward_c, opt_guider, rng,
                                batch_size=cfg.batch_size,
                                max_len=cfg.max_len, epochs=1,
                                grad_clip=cfg.grad_clip)
        for src, src_len, tgt, tgt_len in cp.pair_batches(
                pairs, cfg.batch_size, cfg.max_len, rng):
            loss, _ = gen_mod.mle_loss(models.generator, models.guider,
                                       models.encoder, tgt, tgt_len,
                                       encoder_trainable=True,
                                       cond_ids=src, cond_lengths=src_len)
            loss.backward()
            nm.clip_grad_norm(gen_params + enc_params, cfg.grad_clip)
            opt_mle.step()
            step += 1
            log.add(step, mle_loss=loss.item())
    return log


def _sample_batch(models: Models, real_ids: np.ndarray,
                  real_lengths: np.ndarray, cfg: TrainConfig,
                  rng: np.random.Generator, n: int):
    """Sample n sequences, each seeded from a real sentence's encoding."""
    out = []
    for i in range(n):
        row = i % real_ids.shape[0]
        sent = list(real_ids[row, :real_lengths[row]])
        with nm.no_grad():
            latent = enc_mod.encode_initial(models.encoder, ids=sent)
        out.append(gen_mod.sample_sequence(
            models.generator, models.guider, models.encoder, latent, rng,
            cfg.max_len, temperature=cfg.sample_temperature))
    return out


# ---------------------------------------------------------------------------
# GMGAN: adversarial fine-tuning
# ---------------------------------------------------------------------------

def train_gmgan(models: Models, corpus: cp.Corpus, cfg: TrainConfig,
                rng: np.random.Generator,
                eval_corpus: cp.Corpus | None = None) -> TrainLog:
    """Alternating policy-gradient and discriminator rounds (reward-gated).

    Each round: g-steps sample sequences, compose Q values per the reward
    mode, and update the generator with a mixed MLE/policy-gradient loss
    following the linear transfer schedule; d-steps retrain the
    discriminator on real vs generated; the guider is refreshed on real
    data.  Aborts when mean |Q| exceeds 1e3.
    """
    log = TrainLog()
    if cfg.gmgan_rounds == 0:
        return log
    rc = cfg.reward_config()
    gen_params = [p for _, p in models.generator.parameters()]
    opt_gen = nm.Adam(gen_params, lr=cfg.lr_rl)
    opt_disc = nm.Adam([p for _, p in models.discriminator.parameters()],
                       lr=cfg.lr_discriminator)
    opt_guider = nm.Adam([p for _, p in models.guider.parameters()],
                         lr=cfg.lr_guider)
    stream = _epoch_batches(corpus, cfg, rng)
    total_g = cfg.gmgan_rounds * cfg.gmgan_g_steps
    step = 0
    g_index = 0
    for round_idx in range(cfg.gmgan_rounds):
        # refresh the environment model first; g-steps then adapt to it
        if cfg.gmgan_guider_refresh > 0:
            for _ in range(cfg.gmgan_guider_refresh):
                ids, lengths = next(stream)
                refresh = cp.Corpus(
                    [list(ids[r, :lengths[r]]) for r in range(ids.shape[0])],
                    split="refresh")
                gd_mod.train_guider(models.guider, refresh, models.encoder,
                                    rc.c, opt_guider, rng,
                                    batch_size=cfg.batch_size,
                                    max_len=cfg.max_len, epochs=1,
                                    grad_clip=cfg.grad_clip)
        for _ in range(cfg.gmgan_g_steps):
            lam = mixed_loss_schedule(g_index, max(total_g - 1, 1),
                                      cfg.mix_start, cfg.mix_end)
            g_index += 1
            ids, lengths = next(stream)
            samples = _sample_batch(models, ids, lengths, cfg, rng,
                                    n=cfg.gmgan_sample_size)
            traces = []
            for out in samples:
                r_f = models.discriminator.score(out.ids)
                traces.append(trace_from_sample(out, r_f, rc))
            mean_abs_q = float(np.mean([np.abs(t.q).mean() if t.length else 0.0
                                        for t in traces]))
            if mean_abs_q > 1e3:
                raise TrainingDiverged(
                    f"mean |Q| = {mean_abs_q:.3g} exceeded 1e3 at step {step}")
            pg_terms = [_pg_term(models, out, trace)
                        for out, trace in zip(samples, traces)]
            pg = nm.mul(_sum_tensors(pg_terms), 1.0 / len(pg_terms))
            if lam > 0.0:
                mle, _ = gen_mod.mle_loss(models.generator, models.guider,
                                          models.encoder, ids, lengths)
                loss = nm.add(nm.mul(mle, lam), nm.mul(pg, 1.0 - lam))
                mle_value = mle.item()
            else:
                loss = pg
                mle_value = None
            loss.backward()
            nm.clip_grad_norm(gen_params, cfg.grad_clip)
            opt_gen.step()
            step += 1
            log.add(step, mle_loss=mle_value,
                    mean_rg=float(np.mean([t.rg.mean() if t.length else 0.0
                                           for t in traces])),
                    mean_q=float(np.mean([t.q.mean() if t.length else 0.0
                                          for t in traces])))
        for _ in range(cfg.gmgan_d_steps):
            ids, lengths = next(stream)
            fakes = _sample_batch(models, ids, lengths, cfg, rng,
                                  n=ids.shape[0])
            fake_ids, _ = cp.pad_batch([s.ids for s in fakes], cfg.max_len)
            d_loss = dsc.train_discriminator(models.discriminator, ids,
                                             fake_ids, opt_disc,
                                             grad_clip=cfg.grad_clip)
            step += 1
            log.add(step, d_loss=d_loss)
        if cfg.eval_every and (round_idx + 1) % cfg.eval_every == 0:
            refs = eval_corpus if eval_corpus is not None else corpus
            b2, sb2 = _quick_eval(models, refs, cfg, rng)
            step += 1
            log.add(step, bleu2=b2, self_bleu2=sb2)
    return log


def _pg_term(models: Models, out: gen_mod.SampleOutput,
             trace: rw.RewardTrace) -> nm.Tensor:
    """Policy-gradient surrogate for one sample: actions and Q are frozen."""
    logp = gen_mod.forced_sequence_logprobs(models.generator, models.guider,
                                            models.encoder,
                                            nm.Tensor(out.latent), out.ids)
    return rw.policy_gradient_loss(logp, trace.q)


def _sum_tensors(ts):
    total = ts[0]
    for t in ts[1:]:
        total = nm.add(total, t)
    return total


def _quick_eval(models: Models, refs: cp.Corpus, cfg: TrainConfig,
                rng: np.random.Generator):
    hyps = []
    for _ in range(cfg.eval_samples):
        latent = enc_mod.encode_initial(
            models.encoder,
            noise=enc_mod.noise_latent(rng, models.encoder.feature_dim))
        out = gen_mod.sample_sequence(models.generator, models.guider,
                                      models.encoder, latent, rng,
                                      cfg.max_len,
                                      temperature=cfg.sample_temperature)
        hyps.append(strip_sentence(out.ids))
    ref_tokens = [strip_sentence(s) for s in refs.sentences]
    b2 = metrics.bleu(hyps, [ref_tokens] * len(hyps), max_n=2,
                      smoothing=True).scores[2]
    sb2 = metrics.self_bleu(hyps, max_n=2, smoothing=True).scores[2]
    return b2, sb2


# ---------------------------------------------------------------------------
# GMST: conditional self-critical fine-tuning
# ---------------------------------------------------------------------------

def train_gmst(models: Models, pairs: cp.PairCorpus, cfg: TrainConfig,
               rng: np.random.Generator) -> TrainLog:
    """Self-critical policy gradient on (source, target) pairs.

    Per sampled sentence the final reward is the smoothed sentence BLEU-4
    difference between the sample and the greedy decode against the pair's
    reference; Q values follow the conditional composition.  The loop is
    pure policy gradient (no MLE mixing), so a batch whose samples all equal
    their greedy decodes is exactly a zero update.  The encoder stays
    frozen.
    """
    log = TrainLog()
    if cfg.gmst_steps == 0:
        return log
    rc = cfg.reward_config()
    gen_params = [p for _, p in models.generator.parameters()]
    opt = nm.Adam(gen_params, lr=cfg.lr_rl)
    stream = _pair_stream(pairs, cfg, rng)
    for step in range(1, cfg.gmst_steps + 1):
        batch = [next(stream) for _ in range(cfg.gmst_sample_size)]
        pg_terms = []
        rs_values = []
        rg_means = []
        q_means = []
        for src, tgt in batch:
            with nm.no_grad():
                latent = enc_mod.encode_initial(models.encoder, ids=src)
            out = gen_mod.sample_sequence(models.generator, models.guider,
                                          models.encoder, latent, rng,
                                          cfg.max_len,
                                          temperature=cfg.sample_temperature)
            greedy_ids = gen_mod.greedy_decode(models.generator, models.guider,
                                               models.encoder, latent,
                                               cfg.max_len)
            ref = strip_sentence(tgt)
            r_sample = metrics.sentence_bleu(strip_sentence(out.ids), [ref])
            r_greedy = metrics.sentence_bleu(strip_sentence(greedy_ids), [ref])
            r_s = rw.self_critical_reward(r_sample, r_greedy)
            trace = trace_from_sample(out, r_s, rc, conditional=True)
            pg_terms.append(_pg_term(models, out, trace))
            rs_values.append(r_s)
            rg_means.append(trace.rg.mean() if trace.length else 0.0)
            q_means.append(trace.q.mean() if trace.length else 0.0)
            log.gmst_records.append({
                "step": step, "sample": list(out.ids), "greedy": list(greedy_ids),
                "reference": ref, "r_s": r_s,
            })
        loss = nm.mul(_sum_tensors(pg_terms), 1.0 / len(pg_terms))
        loss.backward()
        nm.clip_grad_norm(gen_params, cfg.grad_clip)
        opt.step()
        log.add(step, mean_rg=float(np.mean(rg_means)),
                mean_q=float(np.mean(q_means)),
                mean_rs=float(np.mean(rs_values)))
    return log


def _pair_stream(pairs: cp.PairCorpus, cfg: TrainConfig,
                 rng: np.random.Generator):
    while True:
        order = rng.permutation(len(pairs))
        for i in order:
            yield pairs.sources[i], pairs.targets[i]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_sentences(models: Models, n: int, cfg: TrainConfig,
                       rng: np.random.Generator, greedy: bool = False,
                       conditions=None) -> list[list[int]]:
    """Decode n id sequences (EOS stripped).

    Unconditional mode seeds each sequence from Gaussian noise; with
    ``conditions`` (a list of source id sequences) each output is decoded
    from that source's encoding instead, and n is ignored.
    """
    latents = []
    if conditions is not None:
        with nm.no_grad():
            for src in conditions:
                latents.append(enc_mod.encode_initial(models.encoder, ids=src))
    else:
        for _ in range(n):
            latents.append(enc_mod.encode_initial(
                models.encoder,
                noise=enc_mod.noise_latent(rng, models.encoder.feature_dim)))
    out = []
    for latent in latents:
        if greedy:
            ids = gen_mod.greedy_decode(models.generator, models.guider,
                                        models.encoder, latent, cfg.max_len)
        else:
            ids = gen_mod.sample_sequence(models.generator, models.guider,
                                          models.encoder, latent, rng,
                                          cfg.max_len,
                                          temperature=cfg.sample_temperature).ids
        out.append(strip_sentence(ids))
    return out


def greedy_bleu4(models: Models, pairs: cp.PairCorpus, cfg: TrainConfig) -> float:
    """Corpus BLEU-4 of greedy decodes against the paired targets."""
    hyps, refs = [], []
    with nm.no_grad():
        for src, tgt in zip(pairs.sources, pairs.targets):
            latent = enc_mod.encode_initial(models.encoder, ids=src)
            hyps.append(strip_sentence(gen_mod.greedy_decode(
                models.generator, models.guider, models.encoder, latent,
                cfg.max_len)))
            refs.append([strip_sentence(tgt)])
    return metrics.bleu(hyps, refs, max_n=4, smoothing=True).scores[4]
