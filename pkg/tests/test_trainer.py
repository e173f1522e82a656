import math
from dataclasses import replace

import numpy as np
import pytest

from multiling.autograd import NumericFault
from multiling.checkpoint import load_checkpoint
from multiling.config import TrainConfig
from multiling.corpus import Document, LanguageRegistry
from multiling.model import LanguageDiscriminator, ModelConfig
from multiling.objectives import LossWeights
from multiling.optim import OptimConfig
from multiling.synthetic import pretraining_documents
from multiling.tokenizer import CLS, MASK, PAD, SEP, TokenizerHandle, build_vocab
from multiling.trainer import (
    METRICS_HEADER,
    Trainer,
    TrainingError,
    encode_corpus,
    load_teacher,
    make_batch,
    mask_batch,
    pretrain,
    pretrain_teacher,
    read_metrics,
)


def small_cfg(steps=20, weights=(0.5, 0.1, 0.0), **kw) -> TrainConfig:
    kw.setdefault("log_every", 5)
    return TrainConfig(
        model=ModelConfig(n_layers=1, hidden=16, n_heads=2, max_positions=32),
        weights=LossWeights(*weights),
        optim=OptimConfig(peak_lr=2e-3, warmup_steps=5, total_steps=steps),
        batch_size=8,
        max_seq_len=24,
        **kw,
    )


# masking ---------------------------------------------------------------------------------------

def test_forced_minimum_mask():
    ids = np.array([[CLS, *range(10, 20), SEP]])
    b = mask_batch(ids, 1e-12, np.random.default_rng(0))
    assert b.n_masked == 1
    pos = np.flatnonzero(b.mask_positions[0])[0]
    assert 1 <= pos <= 10 and b.input_ids[0, pos] == MASK


def test_masking_statistics_and_exclusions():
    rng = np.random.default_rng(1)
    total = masked = 0
    for _ in range(1000):
        lengths = rng.integers(5, 30, size=4)
        ids = np.full((4, 31), PAD)
        for i, n in enumerate(lengths):
            ids[i, : n + 1] = [CLS, *rng.integers(5, 96, size=n - 1), SEP]
        b = mask_batch(ids, 0.15, rng)
        special = ids < 5
        assert not (b.mask_positions & special).any()
        np.testing.assert_array_equal(b.input_ids[b.mask_positions], MASK)
        np.testing.assert_array_equal(b.input_ids[~b.mask_positions], ids[~b.mask_positions])
        total += int((~special).sum())
        masked += b.n_masked
    assert total >= 10_000
    assert 0.14 <= masked / total <= 0.16


def test_sequence_without_content_rejected():
    with pytest.raises(ValueError, match="no maskable"):
        mask_batch(np.array([[CLS, SEP, PAD]]), 0.15, np.random.default_rng(0))


def test_bert_corruption_flag():
    ids = np.tile(np.array([[CLS, *range(5, 95), SEP]]), (20, 1))
    b = mask_batch(ids, 0.5, np.random.default_rng(2), corruption="bert_80_10_10", vocab_size=96)
    kept = (b.input_ids == ids) & b.mask_positions
    as_mask = (b.input_ids == MASK) & b.mask_positions
    assert 0.7 < as_mask.sum() / b.n_masked < 0.9
    assert 0.05 < kept.sum() / b.n_masked < 0.16


# training loop -----------------------------------------------------------------------------------

def test_mlm_learns_on_toy_corpus(small_docs, small_tok):
    cfg = TrainConfig(
        weights=LossWeights(1.0, 0.0, 0.0),
        optim=OptimConfig(peak_lr=3e-3, warmup_steps=20, total_steps=200),
        label_smoothing=0.0,
    )
    _, recs = pretrain(small_docs, small_tok, cfg, with_discriminator=False)
    lnv = math.log(small_tok.vocab_size)
    assert abs(recs[0].losses.l_mlm - lnv) < 0.05 * lnv
    assert np.mean([r.losses.l_mlm for r in recs[-20:]]) < 0.9 * lnv


def test_repeated_runs_are_bit_identical(small_docs, small_tok, tmp_path):
    cfg = small_cfg(10, log_every=1)
    pretrain(small_docs, small_tok, cfg, out_dir=tmp_path / "a")
    pretrain(small_docs, small_tok, cfg, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a.decode().splitlines()[0] == ",".join(METRICS_HEADER)


def test_metrics_row_count(small_docs, small_tok, tmp_path):
    pretrain(small_docs, small_tok, small_cfg(20), out_dir=tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    assert [int(r["step"]) for r in rows] == [5, 10, 15, 20]
    assert all(r["wall_ms"] == 0 for r in rows)


def test_resume_matches_uninterrupted(small_docs, small_tok, tmp_path):
    cfg = small_cfg(20, checkpoint_every=10)
    full, _ = pretrain(small_docs, small_tok, cfg, out_dir=tmp_path / "full")
    pretrain(small_docs, small_tok, cfg, out_dir=tmp_path / "part", stop_at=10)
    resumed, _ = pretrain(
        small_docs, small_tok, cfg, out_dir=tmp_path / "part", resume=tmp_path / "part" / "step-0000010.ckpt"
    )
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "part" / "metrics.csv").read_bytes()
    for (n, a), (_, b) in zip(full.student.params.items(), resumed.student.params.items()):
        assert np.array_equal(a.data, b.data), n
    for a, b in zip(full.disc.parameters(), resumed.disc.parameters()):
        assert np.array_equal(a.data, b.data)


def test_single_language_with_adversary_rejected(small_tok):
    docs = [Document(str(i), "en", "the cat sat on the mat") for i in range(10)]
    with pytest.raises(TrainingError, match="≥ 2 languages"):
        pretrain(docs, small_tok, small_cfg())


def test_kd_without_teacher_rejected(small_docs, small_tok):
    with pytest.raises(TrainingError, match="teacher"):
        pretrain(small_docs, small_tok, small_cfg(weights=(0.5, 0.1, 0.4)))


def test_non_finite_values_are_named(small_docs, small_tok):
    cfg = replace(small_cfg(), model=replace(small_cfg().model, vocab_size=small_tok.vocab_size))
    reg = LanguageRegistry.from_documents(small_docs)
    trainer = Trainer(cfg, small_tok.vocab.digest(), reg)
    trainer.student.params["emb.pos"].data[0, 0] = np.nan
    before = trainer.student.params["mlm.weight"].data.copy()
    data = encode_corpus(small_docs, small_tok, cfg.max_seq_len, reg)
    with pytest.raises(NumericFault, match="student hidden states"):
        trainer.train_step(make_batch(data, cfg, 0))
    assert np.array_equal(trainer.student.params["mlm.weight"].data, before)
    assert trainer.step == 0


def test_teacher_stays_frozen(small_docs, small_tok, tmp_path):
    tcfg = small_cfg(10, weights=(1.0, 0.0, 0.0))
    tcfg = replace(tcfg, model=replace(tcfg.model, hidden=24, n_layers=2))
    teacher, _ = pretrain_teacher(small_docs, small_tok, tcfg, out_dir=tmp_path / "t")
    assert (tmp_path / "t" / "teacher.ckpt").is_file()
    assert load_checkpoint(tmp_path / "t" / "teacher.ckpt").meta["kind"] == "teacher"
    loaded = load_teacher(tmp_path / "t", small_tok.vocab.digest())
    before = [p.data.copy() for p in loaded.encoder.parameters()]
    cfg = small_cfg(100, weights=(0.5, 0.1, 0.4))
    pretrain(small_docs, small_tok, cfg, teacher=loaded)
    for b, p in zip(before, loaded.encoder.parameters()):
        assert np.array_equal(b, p.data)
        assert p.grad is None


def test_teacher_must_match_vocab(small_docs, small_tok, tmp_path):
    tcfg = small_cfg(5, weights=(1.0, 0.0, 0.0))
    pretrain_teacher(small_docs, small_tok, tcfg, out_dir=tmp_path)
    other = TokenizerHandle(build_vocab(["entirely different words here"], 30))
    with pytest.raises(Exception, match="vocab"):
        load_teacher(tmp_path / "teacher.ckpt", other.vocab.digest())


def test_missing_teacher_file_is_specific(tmp_path):
    with pytest.raises(FileNotFoundError, match="teacher checkpoint"):
        load_teacher(tmp_path / "nope.ckpt")


def test_smaller_teacher_warns(small_docs, small_tok, caplog):
    tcfg = small_cfg(5, weights=(1.0, 0.0, 0.0))
    pretrain_teacher(small_docs, small_tok, tcfg, student_model=ModelConfig(hidden=64, n_layers=4))
    assert "not larger" in caplog.text


def test_discriminator_update_leaves_student_untouched(small_docs, small_tok):
    # only the adversarial term can move the discriminator; with lambda_adv = 0 the student
    # update is the same whether or not a discriminator is trained alongside it
    cfg = small_cfg(5, weights=(1.0, 0.0, 0.0))
    a, _ = pretrain(small_docs, small_tok, cfg, with_discriminator=True)
    b, _ = pretrain(small_docs, small_tok, cfg, with_discriminator=False)
    for p, q in zip(a.student.parameters(), b.student.parameters()):
        assert np.array_equal(p.data, q.data)
    start = LanguageDiscriminator(cfg.model.hidden, 2, seed=[cfg.seed, 3])
    assert any(not np.array_equal(p.data, q.data) for p, q in zip(a.disc.parameters(), start.parameters()))


# directional experiment -------------------------------------------------------------------------

@pytest.mark.slow
def test_adversarial_weight_raises_final_discriminator_loss():
    # the discriminator always trains on +L_adv; under lambda_adv = 0 it is a passive observer
    docs = pretraining_documents(150, seed=0)
    tok = TokenizerHandle(build_vocab([d.text for d in docs], 256))
    wins = 0
    for seed in range(3):
        final = []
        for lam in (0.0, 0.1):
            cfg = TrainConfig(
                model=ModelConfig(hidden=32, n_layers=2, n_heads=4),
                weights=LossWeights(0.5, lam, 0.0),
                optim=OptimConfig(peak_lr=3e-3, warmup_steps=50, total_steps=500),
                seed=seed,
            )
            _, recs = pretrain(docs, tok, cfg)
            final.append(np.mean([r.losses.l_adv for r in recs[-50:]]))
        wins += final[1] > final[0]
    assert wins >= 2
