"""Pre-training loop: masking, teacher/student forward, combined loss, dual-group AdamW.

Every source of randomness is derived from ``(seed, purpose, counter)`` so a
run resumed from a checkpoint continues exactly like an uninterrupted one.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import NumericFault, Tensor
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import TrainConfig, from_flat, to_flat
from .corpus import Document, LanguageRegistry
from .model import EncoderModel, LanguageDiscriminator, ModelConfig, TeacherModel, mean_pool
from .objectives import (
    LossBreakdown,
    LossWeights,
    MaskedBatch,
    adversarial_loss,
    kd_loss,
    mlm_loss,
    routed_objective,
)
from .optim import AdamW, OptimState, lr_at
from .tokenizer import CLS, MASK, PAD, SEP, SPECIAL_TOKENS, TokenizerHandle, Vocab

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "l_mlm", "l_adv", "l_kd", "l_total", "lr", "grad_norm", "wall_ms")
N_SPECIAL = len(SPECIAL_TOKENS)

# purposes for derived RNG streams
_SHUFFLE, _MASK, _STUDENT_INIT, _DISC_INIT = 0, 1, 2, 3


class TrainingError(RuntimeError):
    pass


def derived_rng(seed: int, purpose: int, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, counter])


@dataclass(frozen=True)
class StepRecord:
    step: int
    losses: LossBreakdown
    lr: float
    grad_norm_preclip: float
    wall_ms: int

    def csv_row(self) -> list[str]:
        b = self.losses
        return [
            str(self.step),
            repr(b.l_mlm),
            repr(b.l_adv),
            repr(b.l_kd),
            repr(b.l_total),
            repr(self.lr),
            repr(self.grad_norm_preclip),
            str(self.wall_ms),
        ]


@dataclass
class EncodedCorpus:
    sequences: list[np.ndarray]
    lang_ids: np.ndarray
    registry: LanguageRegistry

    def __len__(self) -> int:
        return len(self.sequences)


def encode_corpus(
    docs: Sequence[Document],
    tok: TokenizerHandle,
    max_seq_len: int,
    registry: LanguageRegistry | None = None,
) -> EncodedCorpus:
    """``[CLS] tokens [SEP]`` per document, truncated to ``max_seq_len``."""
    registry = registry or LanguageRegistry.from_documents(docs)
    seqs, langs = [], []
    for d in docs:
        ids = tok.encode(d.text)[: max_seq_len - 2]
        if not ids:
            continue
        seqs.append(np.array([CLS, *ids, SEP], dtype=np.int64))
        langs.append(registry.index(d.lang))
    if not seqs:
        raise TrainingError("corpus is empty after tokenisation")
    return EncodedCorpus(seqs, np.array(langs, dtype=np.int64), registry)


def pad_batch(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    attn = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        attn[i, : len(s)] = True
    return ids, attn


def mask_batch(
    ids: np.ndarray,
    mask_prob: float,
    rng: np.random.Generator,
    attn_mask: np.ndarray | None = None,
    lang_ids: np.ndarray | None = None,
    corruption: str = "mask_only",
    vocab_size: int | None = None,
) -> MaskedBatch:
    """Select each non-special token with probability ``mask_prob`` and replace it by [MASK].

    A sequence that ends up with no selection gets one uniformly chosen
    maskable position.  ``corruption="bert_80_10_10"`` keeps 10% of selected
    tokens and swaps 10% for random content tokens instead.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ValueError("mask_batch needs a non-empty [batch, seq] array")
    if attn_mask is None:
        attn_mask = ids != PAD
    maskable = ids >= N_SPECIAL
    if not maskable.any(axis=1).all():
        bad = int(np.flatnonzero(~maskable.any(axis=1))[0])
        raise ValueError(f"sequence {bad} has no maskable tokens")
    selected = (rng.random(ids.shape) < mask_prob) & maskable
    for row in np.flatnonzero(~selected.any(axis=1)):
        candidates = np.flatnonzero(maskable[row])
        selected[row, candidates[rng.integers(len(candidates))]] = True
    inputs = ids.copy()
    if corruption == "mask_only":
        inputs[selected] = MASK
    elif corruption == "bert_80_10_10":
        if vocab_size is None:
            raise ValueError("bert_80_10_10 corruption needs vocab_size")
        u = rng.random(ids.shape)
        random_ids = rng.integers(N_SPECIAL, vocab_size, size=ids.shape)
        inputs[selected & (u < 0.8)] = MASK
        swap = selected & (u >= 0.8) & (u < 0.9)
        inputs[swap] = random_ids[swap]
    else:
        raise ValueError(f"unknown corruption {corruption!r}")
    if lang_ids is None:
        lang_ids = np.zeros(ids.shape[0], dtype=np.int64)
    return MaskedBatch(
        input_ids=inputs,
        original_ids=ids,
        mask_positions=selected,
        attn_mask=np.asarray(attn_mask, dtype=bool),
        lang_ids=np.asarray(lang_ids, dtype=np.int64),
    )


@dataclass
class ForwardResult:
    hidden: Tensor
    logits: Tensor
    lang_logits: Tensor | None
    objective: object


def _zero() -> Tensor:
    return Tensor(0.0)


def forward_losses(
    student: EncoderModel,
    disc: LanguageDiscriminator | None,
    teacher: TeacherModel | None,
    batch: MaskedBatch,
    cfg: TrainConfig,
):
    """Build the graph for one batch; returns ``(ForwardResult, named tensors for diagnostics)``."""
    w = cfg.weights
    hidden = student.encode(batch.input_ids, batch.attn_mask)
    logits = student.mlm_logits(hidden)
    l_mlm = mlm_loss(logits, batch, cfg.label_smoothing)

    if teacher is not None:
        t_ids = batch.input_ids if cfg.teacher_input == "masked" else batch.original_ids
        t_logits = teacher.logits(t_ids, batch.attn_mask)
        positions = batch.position_index(cfg.kd_positions)
        if w.lambda_kd > 0:
            l_kd = kd_loss(logits, t_logits, cfg.temperature, positions, cfg.kd_scale_t2)
        else:
            with ag.no_grad():
                l_kd = kd_loss(logits, t_logits, cfg.temperature, positions, cfg.kd_scale_t2)
    elif w.lambda_kd > 0:
        raise TrainingError("lambda_kd > 0 requires a teacher model")
    else:
        l_kd = _zero()

    lang_logits = None
    disc_loss = None
    if disc is not None:
        pooled = mean_pool(hidden, batch.attn_mask)
        if w.lambda_adv > 0:
            lang_logits = disc(pooled, detach_params=True)
            l_adv = adversarial_loss(lang_logits, batch.lang_ids)
        else:
            with ag.no_grad():
                lang_logits = disc(pooled, detach_params=True)
                l_adv = adversarial_loss(lang_logits, batch.lang_ids)
        disc_loss = adversarial_loss(disc(pooled.detach()), batch.lang_ids)
    elif w.lambda_adv > 0:
        raise TrainingError("lambda_adv > 0 requires a language discriminator")
    else:
        l_adv = _zero()

    obj = routed_objective(l_mlm, l_adv, l_kd, disc_loss, w, batch.n_masked)
    named = [
        ("student hidden states", hidden),
        ("student MLM logits", logits),
        ("discriminator logits", lang_logits),
        ("L_MLM", l_mlm),
        ("L_adv", l_adv),
        ("L_KD", l_kd),
        ("L_total", obj.total),
    ]
    return ForwardResult(hidden, logits, lang_logits, obj), named


def _first_non_finite(named) -> str | None:
    for name, t in named:
        if t is not None and not np.all(np.isfinite(t.data)):
            return name
    return None


class Trainer:
    """Owns the student, discriminator, frozen teacher and both optimizer groups."""

    def __init__(
        self,
        cfg: TrainConfig,
        vocab_digest: str,
        registry: LanguageRegistry,
        teacher: TeacherModel | None = None,
        with_discriminator: bool = True,
    ):
        self.cfg = cfg
        self.vocab_digest = vocab_digest
        self.registry = registry
        if cfg.model.n_languages != len(registry):
            cfg = replace(cfg, model=replace(cfg.model, n_languages=len(registry)))
            self.cfg = cfg
        self.student = EncoderModel(cfg.model, seed=[cfg.seed, _STUDENT_INIT])
        self.disc = (
            LanguageDiscriminator(cfg.model.hidden, len(registry), seed=[cfg.seed, _DISC_INIT])
            if with_discriminator
            else None
        )
        if teacher is not None and teacher.config.vocab_size != cfg.model.vocab_size:
            raise TrainingError("teacher and student vocab sizes differ")
        self.teacher = teacher
        self.opt_student = AdamW(self.student.parameters(), cfg.optim)
        self.opt_disc = AdamW(self.disc.parameters(), cfg.optim) if self.disc else None
        self.step = 0

    def train_step(self, batch: MaskedBatch) -> StepRecord:
        t0 = time.perf_counter()
        self.opt_student.zero_grad()
        if self.opt_disc:
            self.opt_disc.zero_grad()
        result, named = forward_losses(self.student, self.disc, self.teacher, batch, self.cfg)
        bad = _first_non_finite(named)
        if bad is not None:
            raise NumericFault(f"step {self.step + 1}: non-finite values in {bad}; update skipped")
        ag.backward(result.objective.routed)
        self.opt_student.fill_missing_grads()
        lr = lr_at(self.cfg.optim, min(self.step + 1, self.cfg.optim.total_steps))
        norm = self.opt_student.clip()
        if not math.isfinite(norm):
            raise NumericFault(f"step {self.step + 1}: non-finite student gradient; update skipped")
        self.opt_student.step(lr)
        if self.opt_disc:
            self.opt_disc.fill_missing_grads()
            self.opt_disc.clip()
            self.opt_disc.step(lr)
        self.step += 1
        wall = int(round((time.perf_counter() - t0) * 1000)) if self.cfg.record_wall_time else 0
        return StepRecord(self.step, result.objective.breakdown, lr, norm, wall)

    # checkpointing

    def to_checkpoint(self, kind: str = "student") -> Checkpoint:
        tensors: dict[str, np.ndarray] = {}
        for name, p in self.student.params.items():
            tensors[f"student/{name}"] = p.data
        groups = [("student", self.opt_student)]
        if self.disc:
            for name, p in self.disc.params.items():
                tensors[f"disc/{name}"] = p.data
            groups.append(("disc", self.opt_disc))
        opt_steps = {}
        for gname, opt in groups:
            opt_steps[gname] = opt.state.step
            for k, m in opt.state.m.items():
                tensors[f"opt.{gname}.m/{k}"] = m
                tensors[f"opt.{gname}.v/{k}"] = opt.state.v[k]
        meta = {
            "format": 1,
            "kind": kind,
            "model_config": _model_config_dict(self.cfg.model),
            "vocab_digest": self.vocab_digest,
            "languages": list(self.registry.languages),
            "step": self.step,
            "optimizer_steps": opt_steps,
            "train_config": {k: _jsonable(v) for k, v in to_flat(self.cfg).items()},
        }
        return Checkpoint(meta=meta, tensors=tensors)

    def save(self, path: str | Path, kind: str = "student") -> None:
        save_checkpoint(path, self.to_checkpoint(kind))

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.meta.get("vocab_digest") != self.vocab_digest:
            raise CheckpointError("checkpoint vocab hash does not match the current vocab")
        if tuple(ckpt.meta.get("languages", ())) != self.registry.languages:
            raise CheckpointError("checkpoint language registry differs from the corpus")
        self.student.params.load_state(ckpt.group("student"))
        if self.disc:
            self.disc.params.load_state(ckpt.group("disc"))
        for gname, opt in (("student", self.opt_student), ("disc", self.opt_disc)):
            if opt is None:
                continue
            m = ckpt.group(f"opt.{gname}.m")
            v = ckpt.group(f"opt.{gname}.v")
            opt.state = OptimState(
                m={k: a.copy() for k, a in m.items()},
                v={k: a.copy() for k, a in v.items()},
                step=int(ckpt.meta["optimizer_steps"].get(gname, 0)),
            )
        self.step = int(ckpt.meta["step"])


def _jsonable(v):
    return ",".join(v) if isinstance(v, tuple) else v


def _model_config_dict(cfg: ModelConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def model_from_checkpoint(ckpt: Checkpoint, prefix: str = "student") -> EncoderModel:
    cfg = ModelConfig(**ckpt.meta["model_config"])
    model = EncoderModel(cfg, seed=0)
    model.params.load_state(ckpt.group(prefix))
    return model


def load_teacher(path: str | Path, vocab_digest: str | None = None) -> TeacherModel:
    p = Path(path)
    if p.is_dir():
        p = p / "teacher.ckpt"
    if not p.is_file():
        raise FileNotFoundError(f"teacher checkpoint not found: {p}")
    ckpt = load_checkpoint(p, expected_vocab_digest=vocab_digest)
    return TeacherModel(model_from_checkpoint(ckpt))


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices for 0-based ``step``: seeded per-epoch permutation, last partial batch dropped."""
    bs = min(batch_size, n)
    per_epoch = n // bs
    epoch, b = divmod(step, per_epoch)
    perm = derived_rng(seed, _SHUFFLE, epoch).permutation(n)
    return perm[b * bs : (b + 1) * bs]


def make_batch(data: EncodedCorpus, cfg: TrainConfig, step: int) -> MaskedBatch:
    idx = batch_indices(len(data), cfg.batch_size, cfg.seed, step)
    ids, attn = pad_batch([data.sequences[i] for i in idx])
    return mask_batch(
        ids,
        cfg.mask_prob,
        derived_rng(cfg.seed, _MASK, step),
        attn_mask=attn,
        lang_ids=data.lang_ids[idx],
        corruption=cfg.mask_corruption,
        vocab_size=cfg.model.vocab_size,
    )


class MetricsLog:
    def __init__(self, path: str | Path, resume_from_step: int | None = None):
        self.path = Path(path)
        rows: list[list[str]] = []
        if resume_from_step is not None and self.path.is_file():
            with open(self.path, newline="") as fh:
                reader = csv.reader(fh)
                next(reader, None)
                rows = [r for r in reader if r and int(r[0]) <= resume_from_step]
        with open(self.path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            w.writerows(rows)

    def append(self, record: StepRecord) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(record.csv_row())


def read_metrics(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def pretrain(
    docs: Sequence[Document],
    tok: TokenizerHandle,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    teacher: TeacherModel | None = None,
    resume: str | Path | None = None,
    with_discriminator: bool = True,
    stop_at: int | None = None,
    checkpoint_kind: str = "student",
    final_name: str = "final.ckpt",
) -> tuple[Trainer, list[StepRecord]]:
    """Run ``cfg.total_steps`` updates (or up to ``stop_at``), logging and checkpointing to ``out_dir``."""
    registry = LanguageRegistry.from_documents(docs)
    if with_discriminator and cfg.weights.lambda_adv > 0 and len(registry) < 2:
        raise TrainingError("adversarial objective requires ≥ 2 languages")
    if cfg.model.vocab_size != tok.vocab_size:
        cfg = replace(cfg, model=replace(cfg.model, vocab_size=tok.vocab_size))
    data = encode_corpus(docs, tok, cfg.max_seq_len, registry)
    trainer = Trainer(cfg, tok.vocab.digest(), registry, teacher, with_discriminator)
    cfg = trainer.cfg
    if resume is not None:
        trainer.restore(load_checkpoint(resume, expected_vocab_digest=tok.vocab.digest()))
    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = MetricsLog(out / "metrics.csv", trainer.step if resume is not None else None)
    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    records: list[StepRecord] = []
    while trainer.step < end:
        batch = make_batch(data, cfg, trainer.step)
        rec = trainer.train_step(batch)
        records.append(rec)
        if rec.step % cfg.log_every == 0:
            log.info(
                "step %d mlm=%.4f adv=%.4f kd=%.4f total=%.4f lr=%.2e",
                rec.step, rec.losses.l_mlm, rec.losses.l_adv, rec.losses.l_kd, rec.losses.l_total, rec.lr,
            )
            if metrics:
                metrics.append(rec)
        if out is not None and cfg.checkpoint_every and rec.step % cfg.checkpoint_every == 0:
            trainer.save(out / f"step-{rec.step:07d}.ckpt", checkpoint_kind)
    if out is not None:
        trainer.save(out / final_name, checkpoint_kind)
    return trainer, records


def pretrain_teacher(
    docs: Sequence[Document],
    tok: TokenizerHandle,
    teacher_cfg: TrainConfig,
    student_model: ModelConfig | None = None,
    out_dir: str | Path | None = None,
) -> tuple[TeacherModel, list[StepRecord]]:
    """MLM-only pre-training of the teacher, which is then frozen."""
    if student_model is not None and not teacher_cfg.model.is_larger_than(student_model):
        log.warning("teacher config is not larger than the student in both hidden size and depth")
    cfg = replace(teacher_cfg, weights=LossWeights(teacher_cfg.weights.lambda_mlm, 0.0, 0.0))
    trainer, records = pretrain(
        docs,
        tok,
        cfg,
        out_dir=out_dir,
        with_discriminator=False,
        checkpoint_kind="teacher",
        final_name="teacher.ckpt",
    )
    return TeacherModel(trainer.student), records


def train_config_from_checkpoint(ckpt: Checkpoint) -> TrainConfig:
    return from_flat(ckpt.meta["train_config"])


def vocab_from_path(path: str | Path) -> Vocab:
    return Vocab.load(path)
