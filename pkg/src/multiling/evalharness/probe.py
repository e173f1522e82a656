"""Linear language-identification probe on frozen mean-pooled encoder states."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import autograd as ag
from ..corpus import Document, LanguageRegistry
from ..model import EncoderModel, mean_pool
from ..tokenizer import TokenizerHandle
from ..trainer import encode_corpus, pad_batch


def pooled_embeddings(
    model: EncoderModel,
    docs: Sequence[Document],
    tok: TokenizerHandle,
    registry: LanguageRegistry,
    max_len: int = 32,
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean-pooled final hidden states ``[n, hidden]`` and language ids ``[n]``."""
    data = encode_corpus(docs, tok, max_len, registry)
    chunks = []
    for i in range(0, len(data), batch_size):
        ids, attn = pad_batch(data.sequences[i : i + batch_size])
        with ag.no_grad():
            chunks.append(mean_pool(model.encode(ids, attn), attn).data)
    return np.concatenate(chunks), data.lang_ids


def linear_probe_accuracy(
    features: np.ndarray,
    labels: np.ndarray,
    seed: int = 0,
    test_fraction: float = 0.5,
    steps: int = 500,
    lr: float = 0.5,
    l2: float = 1e-3,
) -> float:
    """Held-out accuracy of a freshly trained softmax-regression probe.

    Features are standardised on the training split; training is full-batch
    gradient descent from zero weights.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = int(y.max()) + 1
    order = np.random.default_rng(seed).permutation(len(y))
    n_test = max(1, int(round(len(y) * test_fraction)))
    test, train = order[:n_test], order[n_test:]
    if len(train) == 0:
        raise ValueError("probe needs at least one training example")
    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0) + 1e-8
    z = (x - mu) / sd
    w = np.zeros((z.shape[1], n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y[train]]
    for _ in range(steps):
        logits = z[train] @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(train)
        w -= lr * (z[train].T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    pred = (z[test] @ w + b).argmax(axis=1)
    return float((pred == y[test]).mean())
