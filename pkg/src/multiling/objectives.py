"""Masked-LM, adversarial language and distillation losses, and their combination.

The combined objective is ``lambda_mlm*mlm - lambda_adv*adv + lambda_kd*kd``.
The discriminator itself always descends on ``+adv``; see
:func:`routed_objective`.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_mlm: float = 0.5
    lambda_adv: float = 0.1
    lambda_kd: float = 0.4

    def __post_init__(self):
        for name in ("lambda_mlm", "lambda_adv", "lambda_kd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    l_mlm: float
    l_adv: float
    l_kd: float
    l_total: float
    n_masked: int
    weights: LossWeights = LossWeights()


@dataclass
class MaskedBatch:
    """A padded batch after masking.

    ``mask_positions`` is a boolean ``[batch, seq]`` array marking the tokens
    the MLM loss is computed on.
    """

    input_ids: np.ndarray
    original_ids: np.ndarray
    mask_positions: np.ndarray
    attn_mask: np.ndarray
    lang_ids: np.ndarray

    @property
    def n_masked(self) -> int:
        return int(self.mask_positions.sum())

    def masked_index(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.mask_positions)

    def position_index(self, which: str = "all") -> tuple[np.ndarray, np.ndarray]:
        if which == "masked_only":
            return self.masked_index()
        if which == "all":
            return np.nonzero(self.attn_mask)
        raise ValueError(f"unknown position selection {which!r}")


def smoothed_targets(ids: np.ndarray, vocab_size: int, smoothing: float) -> np.ndarray:
    """``(1 - eps) * onehot + eps / V`` rows for each id.

    The two distinct entries are evaluated exactly from the decimal form of
    ``eps`` and rounded once, so eps=0.7, V=4 gives exactly 0.175 and 0.475.
    """
    ids = np.asarray(ids)
    eps = Fraction(repr(float(smoothing)))
    off = eps / vocab_size
    t = np.full((ids.size, vocab_size), float(off))
    t[np.arange(ids.size), ids.reshape(-1)] = float(1 - eps + off)
    return t


def mlm_loss(logits: Tensor, batch: MaskedBatch, smoothing: float = 0.0) -> Tensor:
    """Mean smoothed cross-entropy over the masked positions."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {smoothing}")
    if batch.n_masked == 0:
        raise ValueError("no masked tokens in batch")
    idx = batch.masked_index()
    picked = logits[idx]
    V = logits.shape[-1]
    targets = smoothed_targets(batch.original_ids[idx], V, smoothing)
    logp = ag.log_softmax(picked, axis=-1)
    return -(logp * targets).sum() * (1.0 / len(idx[0]))


def adversarial_loss(lang_logits: Tensor, lang_ids: np.ndarray) -> Tensor:
    """Mean cross-entropy of the discriminator against the gold languages."""
    lang_ids = np.asarray(lang_ids, dtype=np.int64)
    if lang_ids.ndim != 1 or lang_ids.shape[0] != lang_logits.shape[0]:
        raise ShapeError(f"lang ids {lang_ids.shape} do not match logits {lang_logits.shape}")
    if lang_ids.min() < 0 or lang_ids.max() >= lang_logits.shape[1]:
        raise ValueError("language id out of range")
    logp = ag.log_softmax(lang_logits, axis=-1)
    return -logp[np.arange(len(lang_ids)), lang_ids].mean()


def kd_loss(
    student_logits: Tensor,
    teacher_logits,
    temperature: float = 2.0,
    positions: tuple[np.ndarray, ...] | None = None,
    scale_by_t2: bool = False,
) -> Tensor:
    """Mean KL(teacher || student) of the temperature-softened distributions.

    ``positions`` indexes the leading axes of both logit arrays; all leading
    positions are used when it is None.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    t_logits = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    if t_logits.shape != student_logits.shape:
        raise ShapeError(f"kd: student {student_logits.shape} vs teacher {t_logits.shape}")
    V = t_logits.shape[-1]
    if positions is None:
        s = student_logits.reshape(-1, V)
        t = t_logits.reshape(-1, V)
    else:
        s = student_logits[positions]
        t = t_logits[positions]
    n = s.shape[0]
    if n == 0:
        raise ValueError("no positions selected for distillation")
    log_pt = ag.log_softmax(Tensor(t), axis=-1, temperature=temperature).data
    p_t = np.exp(log_pt)
    log_ps = ag.log_softmax(s, axis=-1, temperature=temperature)
    const = float((p_t * log_pt).sum())
    kl = (const - (log_ps * p_t).sum()) * (1.0 / n)
    if scale_by_t2:
        kl = kl * (temperature * temperature)
    return kl


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))


def total_loss(
    l_mlm: Tensor, l_adv: Tensor, l_kd: Tensor, weights: LossWeights, n_masked: int = 0
) -> tuple[Tensor, LossBreakdown]:
    total = l_mlm * weights.lambda_mlm - l_adv * weights.lambda_adv + l_kd * weights.lambda_kd
    breakdown = LossBreakdown(
        l_mlm=l_mlm.item(),
        l_adv=l_adv.item(),
        l_kd=l_kd.item(),
        l_total=total.item(),
        n_masked=n_masked,
        weights=weights,
    )
    return total, breakdown


@dataclass
class ObjectiveGraph:
    total: Tensor
    disc_loss: Tensor | None
    breakdown: LossBreakdown
    routed: Tensor


def routed_objective(
    l_mlm: Tensor,
    l_adv_for_student: Tensor,
    l_kd: Tensor,
    disc_loss: Tensor | None,
    weights: LossWeights,
    n_masked: int = 0,
) -> ObjectiveGraph:
    """One scalar whose gradient routes the two parameter groups correctly.

    ``l_adv_for_student`` must be computed through detached discriminator
    weights and ``disc_loss`` through a detached pooled embedding, so the sum
    gives the student ``d(total)`` and the discriminator ``d(+adv)``.
    """
    total, breakdown = total_loss(l_mlm, l_adv_for_student, l_kd, weights, n_masked)
    routed = total if disc_loss is None else total + disc_loss
    return ObjectiveGraph(total=total, disc_loss=disc_loss, breakdown=breakdown, routed=routed)
