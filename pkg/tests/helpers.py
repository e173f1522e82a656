"""Shared builders for the tiny models used by objective, trainer and acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from multiling import autograd as ag
from multiling.config import TrainConfig
from multiling.model import EncoderModel, LanguageDiscriminator, ModelConfig, TeacherModel, mean_pool
from multiling.objectives import LossWeights, adversarial_loss, kd_loss, mlm_loss
from multiling.optim import OptimConfig
from multiling.trainer import forward_losses, mask_batch


@dataclass
class Tiny:
    student: EncoderModel
    disc: LanguageDiscriminator
    teacher: TeacherModel
    batch: object
    cfg: TrainConfig


def tiny(seed: int = 0, weights=(0.5, 0.1, 0.4), smoothing: float = 0.7, seq: int = 12, batch: int = 2) -> Tiny:
    mcfg = ModelConfig(n_layers=1, hidden=8, n_heads=2, ff_multiplier=4, vocab_size=32, max_positions=16, n_languages=2)
    cfg = TrainConfig(
        model=mcfg,
        weights=LossWeights(*weights),
        optim=OptimConfig(peak_lr=1e-3, warmup_steps=1, total_steps=10),
        batch_size=batch,
        max_seq_len=seq,
        label_smoothing=smoothing,
        temperature=2.0,
        seed=seed,
    )
    rng = np.random.default_rng([seed, 11])
    ids = rng.integers(5, 32, size=(batch, seq))
    ids[:, 0], ids[:, -1] = 2, 3
    attn = np.ones_like(ids, dtype=bool)
    if batch > 1 and seq > 4:
        ids[1, -2:] = [3, 0]
        attn[1, -1] = False
    mb = mask_batch(ids, 0.3, rng, attn, lang_ids=np.arange(batch) % 2)
    student = EncoderModel(mcfg, seed=[seed, 2])
    disc = LanguageDiscriminator(8, 2, seed=[seed, 3])
    teacher = TeacherModel(EncoderModel(ModelConfig(n_layers=1, hidden=16, n_heads=2, vocab_size=32, max_positions=16), seed=[seed, 4]))
    return Tiny(student, disc, teacher, mb, cfg)


def zero_all(t: Tiny) -> None:
    for p in t.student.parameters() + t.disc.parameters():
        p.grad = None


def grads(params) -> list[np.ndarray]:
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def routed_grads(t: Tiny) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Student and discriminator grads from the trainer's single routed backward pass."""
    zero_all(t)
    result, _ = forward_losses(t.student, t.disc, t.teacher, t.batch, t.cfg)
    ag.backward(result.objective.routed)
    return grads(t.student.parameters()), grads(t.disc.parameters())


def component_grads(t: Tiny, which: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Grads of one unweighted loss, built on a fresh graph with nothing detached."""
    zero_all(t)
    b, cfg = t.batch, t.cfg
    hidden = t.student.encode(b.input_ids, b.attn_mask)
    logits = t.student.mlm_logits(hidden)
    if which == "mlm":
        loss = mlm_loss(logits, b, cfg.label_smoothing)
    elif which == "kd":
        t_logits = t.teacher.logits(b.input_ids, b.attn_mask)
        loss = kd_loss(logits, t_logits, cfg.temperature, b.position_index(cfg.kd_positions))
    elif which == "adv":
        loss = adversarial_loss(t.disc(mean_pool(hidden, b.attn_mask)), b.lang_ids)
    else:
        raise ValueError(which)
    ag.backward(loss)
    return grads(t.student.parameters()), grads(t.disc.parameters())


def total_value(t: Tiny) -> float:
    with ag.no_grad():
        result, _ = forward_losses(t.student, t.disc, t.teacher, t.batch, t.cfg)
    return result.objective.total.item()


def adv_value(t: Tiny) -> float:
    with ag.no_grad():
        result, _ = forward_losses(t.student, t.disc, t.teacher, t.batch, t.cfg)
    return result.objective.disc_loss.item()
