"""Fine-tuning a pretrained encoder with a task head, plus prediction and scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from ..model import EncoderModel, ModelConfig, ParamStore, linear, truncated_normal
from ..optim import AdamW, OptimConfig, lr_at, warmup_for
from ..tokenizer import CLS, SEP, TokenizerHandle
from ..trainer import pad_batch
from .data import PairExample, SpanExample, TaskError, TaskSpec, TokenExample
from .metrics import bio_to_spans, classification_f1, pearson, span_partial_f1, token_f1

MAX_ANSWER_WORDS = 30
_NEG = -1e9


# input encoding -------------------------------------------------------------------------------------

def _encode_text(tok: TokenizerHandle, text_or_words) -> list[list[int]]:
    words = text_or_words.split() if isinstance(text_or_words, str) else list(text_or_words)
    return [tok.encode_word(w) for w in words]


def _layout(segments: Sequence[list[list[int]]], max_len: int) -> tuple[np.ndarray, list[list[int | None]]]:
    """``[CLS] seg1 [SEP] seg2 [SEP] ...``; returns ids and each word's first-subword position.

    Words that do not fit are dropped from the end of the longest segment first,
    and their position is ``None``.
    """
    segments = [list(s) for s in segments]
    budget = max_len - 1 - len(segments)
    if budget < len(segments):
        raise TaskError(f"max length {max_len} leaves no room for text")
    kept = [len(s) for s in segments]
    while sum(sum(len(w) for w in s[:k]) for s, k in zip(segments, kept)) > budget:
        longest = max(range(len(segments)), key=lambda i: sum(len(w) for w in segments[i][: kept[i]]))
        kept[longest] -= 1
    ids = [CLS]
    positions: list[list[int | None]] = []
    for seg, k in zip(segments, kept):
        pos: list[int | None] = []
        for j, w in enumerate(seg):
            if j < k:
                pos.append(len(ids))
                ids.extend(w)
            else:
                pos.append(None)
        ids.append(SEP)
        positions.append(pos)
    return np.asarray(ids, dtype=np.int64), positions


@dataclass
class _Encoded:
    ids: np.ndarray
    word_pos: list[int | None]
    target: object


def _encode_example(task: TaskSpec, tok: TokenizerHandle, ex, max_len: int, label_index: dict) -> _Encoded:
    if task.kind == "token_classification":
        ids, (pos,) = _layout([_encode_text(tok, ex.words)], max_len)
        return _Encoded(ids, pos, [label_index.get(t, -1) for t in ex.tags])
    if task.kind == "span_extraction":
        ids, (_, pos) = _layout([_encode_text(tok, ex.question), _encode_text(tok, ex.context)], max_len)
        return _Encoded(ids, pos, ex.answer_word_span())
    ids, _ = _layout([_encode_text(tok, ex.text_a), _encode_text(tok, ex.text_b)], max_len)
    if task.kind == "pair_classification":
        if ex.label not in label_index:
            raise TaskError(f"label {ex.label!r} is not in the label set of task {task.name}")
        return _Encoded(ids, [], label_index[ex.label])
    return _Encoded(ids, [], float(ex.label))


def _word_gather(encs: Sequence[_Encoded]) -> tuple[np.ndarray, np.ndarray]:
    """``[B, W]`` positions of each word's first subword (0 where absent) and a validity mask."""
    width = max(1, max(len(e.word_pos) for e in encs))
    pos = np.zeros((len(encs), width), dtype=np.int64)
    valid = np.zeros((len(encs), width), dtype=bool)
    for i, e in enumerate(encs):
        for j, p in enumerate(e.word_pos):
            if p is not None:
                pos[i, j] = p
                valid[i, j] = True
    return pos, valid


def _cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    logp = ag.log_softmax(logits, axis=-1)
    return -logp[np.arange(len(targets)), targets].mean()


# fine-tuned model -----------------------------------------------------------------------------------

class FinetunedModel:
    """An encoder copy plus the kind-specific head for one task."""

    def __init__(self, task: TaskSpec, encoder: EncoderModel, tok: TokenizerHandle, seed: int = 0,
                 languages: Sequence[str] = ()):
        self.task = task
        self.encoder = encoder
        self.tok = tok
        self.seed = seed
        self.languages = tuple(languages)
        self.labels = tuple(task.labels)
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        h = encoder.config.hidden
        rng = np.random.default_rng([seed, 1])
        out = {"token_classification": len(self.labels), "pair_classification": len(self.labels),
               "span_extraction": 2, "pair_regression": 1}[task.kind]
        self.head = ParamStore()
        self.head.add("head.weight", truncated_normal(rng, (h, out)))
        self.head.add("head.bias", np.zeros(out))

    @property
    def max_len(self) -> int:
        return self.encoder.config.max_positions

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + list(self.head)

    def encode(self, examples: Sequence) -> list[_Encoded]:
        return [_encode_example(self.task, self.tok, ex, self.max_len, self.label_index) for ex in examples]

    def _outputs(self, encs: Sequence[_Encoded]) -> tuple[Tensor, np.ndarray | None]:
        ids, attn = pad_batch([e.ids for e in encs])
        hidden = self.encoder.encode(ids, attn)
        w, b = self.head["head.weight"], self.head["head.bias"]
        if self.task.kind in ("token_classification", "span_extraction"):
            pos, valid = _word_gather(encs)
            rows = np.broadcast_to(np.arange(len(encs))[:, None], pos.shape)
            return linear(hidden[rows, pos], w, b), valid
        return linear(hidden[:, 0], w, b), None

    def loss(self, encs: Sequence[_Encoded]) -> Tensor:
        out, valid = self._outputs(encs)
        kind = self.task.kind
        if kind == "token_classification":
            rows, cols, tgt = [], [], []
            for i, e in enumerate(encs):
                for j, (p, t) in enumerate(zip(e.word_pos, e.target)):
                    if p is not None and t >= 0:
                        rows.append(i)
                        cols.append(j)
                        tgt.append(t)
            if not tgt:
                return (out * 0.0).sum()
            return _cross_entropy(out[np.array(rows), np.array(cols)], np.array(tgt))
        if kind == "pair_classification":
            return _cross_entropy(out, np.array([e.target for e in encs]))
        if kind == "pair_regression":
            lo, hi = self.task.score_range
            y = (np.array([e.target for e in encs]) - lo) / (hi - lo)
            diff = out.reshape(len(encs)) - y
            return (diff * diff).mean()
        penalty = np.where(valid, 0.0, _NEG)
        starts = np.array([e.target[0] for e in encs])
        ends = np.array([e.target[1] - 1 for e in encs])
        start_logits = out[:, :, 0] + penalty
        end_logits = out[:, :, 1] + penalty
        return (_cross_entropy(start_logits, starts) + _cross_entropy(end_logits, ends)) * 0.5

    def predict(self, examples: Sequence, batch_size: int = 32) -> list:
        preds: list = []
        for i in range(0, len(examples), batch_size):
            chunk = examples[i : i + batch_size]
            encs = self.encode(chunk)
            with ag.no_grad():
                out, valid = self._outputs(encs)
            preds.extend(self._decode(chunk, encs, out.data, valid))
        return preds

    def _decode(self, chunk, encs, out: np.ndarray, valid) -> list:
        kind = self.task.kind
        if kind == "pair_classification":
            return [self.labels[k] for k in out.argmax(axis=-1)]
        if kind == "pair_regression":
            lo, hi = self.task.score_range
            return [float(np.clip(lo + v * (hi - lo), lo, hi)) for v in out[:, 0]]
        if kind == "token_classification":
            res = []
            for i, e in enumerate(encs):
                res.append(tuple(
                    self.labels[int(out[i, j].argmax())] if p is not None else "O"
                    for j, p in enumerate(e.word_pos)
                ))
            return res
        res = []
        for i, ex in enumerate(chunk):
            s, t = best_span(out[i, :, 0], out[i, :, 1], valid[i])
            res.append(" ".join(ex.context.split()[s:t]))
        return res

    def score(self, examples: Sequence) -> float:
        """Task metric on ``examples``: entity F1, macro F1, partial answer F1 or Pearson r."""
        if not examples:
            raise TaskError("no evaluation examples")
        preds = self.predict(examples)
        kind = self.task.kind
        if kind == "token_classification":
            return token_f1([bio_to_spans(ex.tags) for ex in examples], [bio_to_spans(p) for p in preds])
        if kind == "pair_classification":
            return classification_f1([ex.label for ex in examples], preds, labels=self.labels)
        if kind == "span_extraction":
            return span_partial_f1([ex.answer_text for ex in examples], preds)
        gold = [float(ex.label) for ex in examples]
        if np.ptp(preds) == 0.0:
            # a constant predictor carries no correlation
            return 0.0
        return pearson(gold, preds)

    # persistence

    def to_checkpoint(self) -> Checkpoint:
        from dataclasses import asdict

        tensors = {f"student/{k}": v.data for k, v in self.encoder.params.items()}
        tensors.update({k: v.data for k, v in self.head.items()})
        meta = {
            "format": 1,
            "kind": "finetuned",
            "task": self.task.name,
            "task_kind": self.task.kind,
            "labels": list(self.labels),
            "languages": list(self.languages),
            "seed": self.seed,
            "model_config": asdict(self.encoder.config),
            "vocab_digest": self.tok.vocab.digest(),
        }
        return Checkpoint(meta, tensors)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.to_checkpoint())

    @classmethod
    def load(cls, path: str | Path, task: TaskSpec, tok: TokenizerHandle) -> FinetunedModel:
        ckpt = load_checkpoint(path, expected_vocab_digest=tok.vocab.digest())
        if ckpt.meta.get("kind") != "finetuned":
            raise CheckpointError(f"{path} is not a fine-tuned checkpoint")
        if ckpt.meta.get("task_kind") != task.kind:
            raise CheckpointError(f"{path} was fine-tuned for a {ckpt.meta.get('task_kind')} task, not {task.kind}")
        encoder = EncoderModel(ModelConfig(**ckpt.meta["model_config"]), seed=0)
        encoder.params.load_state(ckpt.group("student"))
        model = cls(task, encoder, tok, int(ckpt.meta.get("seed", 0)), ckpt.meta.get("languages", ()))
        model.head.load_state({k: v for k, v in ckpt.tensors.items() if k.startswith("head.")})
        return model


def best_span(start: np.ndarray, end: np.ndarray, valid: np.ndarray,
              max_words: int = MAX_ANSWER_WORDS) -> tuple[int, int]:
    """Highest ``start[i] + end[j]`` with ``i <= j < i + max_words`` over valid words; returns ``[i, j + 1)``."""
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return 0, 0
    best, arg = -math.inf, (0, 0)
    for i in idx:
        for j in idx[(idx >= i) & (idx < i + max_words)]:
            s = start[i] + end[j]
            if s > best:
                best, arg = s, (int(i), int(j) + 1)
    return arg


# training -------------------------------------------------------------------------------------------

def _load_encoder(checkpoint, tok: TokenizerHandle) -> EncoderModel:
    if isinstance(checkpoint, EncoderModel):
        enc = EncoderModel(checkpoint.config, seed=0)
        enc.params.load_state(checkpoint.params.state())
        return enc
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    digest = ckpt.meta.get("vocab_digest")
    if digest is not None and digest != tok.vocab.digest():
        raise CheckpointError("checkpoint vocab hash does not match the task tokenizer")
    enc = EncoderModel(ModelConfig(**ckpt.meta["model_config"]), seed=0)
    enc.params.load_state(ckpt.group("student"))
    return enc


def training_examples(task: TaskSpec, languages: Sequence[str], include_cross_lingual: bool = False) -> list:
    examples: list = []
    for lang in languages:
        examples.extend(task.load_split(lang, "train"))
    if include_cross_lingual:
        examples.extend(task.load_cross_lingual())
    return examples


def finetune(
    checkpoint,
    task: TaskSpec,
    languages: Sequence[str],
    seed: int = 0,
    tok: TokenizerHandle | None = None,
    include_cross_lingual: bool = False,
    examples: Sequence | None = None,
) -> FinetunedModel:
    """Train encoder and head on the union of the chosen languages' training splits.

    ``checkpoint`` may be a path, a loaded ``Checkpoint`` or an ``EncoderModel``
    (which is copied, never modified).
    """
    if tok is None:
        raise TaskError("finetune needs the tokenizer the checkpoint was trained with")
    unknown = [lang for lang in languages if lang not in task.languages]
    if unknown:
        raise TaskError(f"task {task.name} has no data for languages {unknown}")
    if examples is None:
        examples = training_examples(task, languages, include_cross_lingual)
    if not examples:
        raise TaskError(f"empty training split for task {task.name} ({', '.join(languages)})")
    model = FinetunedModel(task, _load_encoder(checkpoint, tok), tok, seed, languages)
    encs = model.encode(examples)
    if task.kind == "span_extraction":
        encs = [e for e in encs if all(e.word_pos[k] is not None for k in range(*e.target))]
        if not encs:
            raise TaskError(f"every answer in task {task.name} was truncated away")
    bs = min(task.batch_size, len(encs))
    per_epoch = math.ceil(len(encs) / bs)
    total = task.epochs * per_epoch
    optim = OptimConfig(peak_lr=task.lr, warmup_steps=warmup_for(total), total_steps=total)
    opt = AdamW(model.parameters(), optim)
    step = 0
    for epoch in range(task.epochs):
        order = np.random.default_rng([seed, 2, epoch]).permutation(len(encs))
        for b in range(per_epoch):
            chunk = [encs[k] for k in order[b * bs : (b + 1) * bs]]
            opt.zero_grad()
            loss = model.loss(chunk)
            ag.backward(loss)
            opt.fill_missing_grads()
            opt.clip()
            step += 1
            opt.step(lr_at(optim, step))
    return model
