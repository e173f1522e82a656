"""Task metrics: entity-span F1, macro F1, partial-match answer F1, Pearson correlation."""
from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

Span = tuple[str, int, int]


class AnnotationError(ValueError):
    pass


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _check_no_overlap(spans: Iterable[Span]) -> None:
    ordered = sorted(spans, key=lambda s: (s[1], s[2]))
    for (ta, sa, ea), (tb, sb, eb) in zip(ordered, ordered[1:]):
        if sb < ea:
            raise AnnotationError(f"overlapping gold spans {ta}({sa},{ea}) and {tb}({sb},{eb})")


def _is_span(x) -> bool:
    return isinstance(x, tuple) and len(x) == 3 and isinstance(x[0], str)


def _per_sentence(spans) -> list:
    if isinstance(spans, (set, frozenset)) or any(_is_span(x) for x in spans):
        return [set(spans)]
    return list(spans)


def token_f1(gold, pred) -> float:
    """Exact-match micro F1 over ``(type, start, end)`` spans, ``end`` exclusive.

    Arguments are either one span set per sentence or a single sentence's
    span set.  No gold and no predicted spans at all scores 1.0.
    """
    gold, pred = _per_sentence(gold), _per_sentence(pred)
    if len(gold) == 1 and not pred:
        pred = [set()]
    if len(pred) == 1 and not gold:
        gold = [set()]
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    tp = n_gold = n_pred = 0
    for g, p in zip(gold, pred):
        g, p = set(g), set(p)
        _check_no_overlap(g)
        tp += len(g & p)
        n_gold += len(g)
        n_pred += len(p)
    if n_gold == 0 and n_pred == 0:
        return 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    return _f1(precision, recall)


def bio_to_spans(tags: Sequence[str]) -> set[Span]:
    """Chunks from BIO tags; a stray ``I-X`` opens a new chunk."""
    spans: set[Span] = set()
    start, kind = None, None
    for i, tag in enumerate(list(tags) + ["O"]):
        prefix, _, label = tag.partition("-")
        continues = prefix == "I" and kind == label and start is not None
        if start is not None and not continues:
            spans.add((kind, start, i))
            start, kind = None, None
        if prefix == "B" or (prefix == "I" and not continues):
            start, kind = i, label
    return spans


def classification_f1(gold: Sequence, pred: Sequence, labels: Sequence | None = None) -> float:
    """Macro-averaged F1 over ``labels`` (default: every label seen in either list)."""
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    if not gold:
        raise ValueError("no examples")
    classes = list(labels) if labels is not None else sorted(set(gold) | set(pred), key=str)
    scores = []
    for c in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        n_pred = sum(1 for p in pred if p == c)
        n_gold = sum(1 for g in gold if g == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gold if n_gold else 0.0
        scores.append(_f1(precision, recall))
    return sum(scores) / len(scores)


def answer_f1(gold: str, pred: str) -> float:
    g, p = gold.split(), pred.split()
    if not g and not p:
        return 1.0
    common = sum((Counter(g) & Counter(p)).values())
    if common == 0:
        return 0.0
    return _f1(common / len(p), common / len(g))


def span_partial_f1(gold_answers: Sequence[str], pred_answers: Sequence[str]) -> float:
    """Bag-of-tokens overlap F1 per question, averaged over questions."""
    if len(gold_answers) != len(pred_answers):
        raise ValueError("gold and predicted answer lists differ in length")
    if not gold_answers:
        raise ValueError("no questions")
    return sum(answer_f1(g, p) for g, p in zip(gold_answers, pred_answers)) / len(gold_answers)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise ValueError("pearson needs equal-length sequences")
    n = len(x)
    if n < 2:
        raise ValueError("pearson needs at least two points")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0 or syy == 0:
        raise ValueError("pearson is undefined for a zero-variance input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def relative_improvement(each_avg: float, all_avg: float) -> float:
    """``(all - each) / each``."""
    if each_avg <= 0:
        raise ValueError(f"the 'each' score must be positive, got {each_avg}")
    return (all_avg - each_avg) / each_avg
