"""Merge-based subword vocabulary with greedy longest-match encoding.

Token strings carry no word-boundary marker, so ids alone do not record where
words begin.  ``decode`` joins tokens directly; ``encode_words`` /
``decode_words`` keep the word structure for callers that need it.
"""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
MIN_VOCAB = len(SPECIAL_TOKENS) + 1


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise VocabError("vocab must start with the five special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabError("duplicate token strings in vocab")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_text().encode("utf-8"))

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        text = Path(path).read_bytes().decode("utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def _pair_counts(words: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for symbols, freq in words.items():
        for a, b in zip(symbols, symbols[1:]):
            counts[(a, b)] += freq
    return counts


def _apply_merge(symbols: tuple[str, ...], a: str, b: str) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def build_vocab(corpus: Iterable[str], target_size: int) -> Vocab:
    """Grow a vocabulary by repeatedly merging the most frequent adjacent pair.

    Ties between equally frequent pairs go to the lexicographically smallest
    merged string.  Stops at ``target_size`` tokens or when no pair remains.
    """
    if target_size < MIN_VOCAB:
        raise VocabError(f"target_size must be at least {MIN_VOCAB}, got {target_size}")
    word_freq: Counter = Counter()
    n_docs = 0
    for text in corpus:
        n_docs += 1
        word_freq.update(text.split())
    if n_docs == 0 or not word_freq:
        raise VocabError("cannot build a vocabulary from an empty corpus")

    char_freq: Counter = Counter()
    for w, f in word_freq.items():
        for ch in w:
            char_freq[ch] += f
    room = target_size - len(SPECIAL_TOKENS)
    alphabet = sorted(char_freq, key=lambda c: (-char_freq[c], c))[:room]
    tokens = list(SPECIAL_TOKENS) + sorted(alphabet)
    known = set(tokens)

    words = {tuple(w): f for w, f in word_freq.items()}
    while len(tokens) < target_size:
        counts = _pair_counts(words)
        if not counts:
            break
        (a, b), _ = min(counts.items(), key=lambda kv: (-kv[1], kv[0][0] + kv[0][1], kv[0]))
        merged = a + b
        if merged not in known:
            tokens.append(merged)
            known.add(merged)
        new_words: dict[tuple[str, ...], int] = {}
        for symbols, f in words.items():
            key = _apply_merge(symbols, a, b)
            new_words[key] = new_words.get(key, 0) + f
        words = new_words
    return Vocab(tuple(tokens))


class TokenizerHandle:
    def __init__(self, vocab: Vocab, lowercase: bool = False, max_subword_length: int | None = None):
        self.vocab = vocab
        self.lowercase = lowercase
        longest = max(len(t) for t in vocab.tokens[len(SPECIAL_TOKENS):]) if len(vocab) > len(SPECIAL_TOKENS) else 1
        self.max_subword_length = max_subword_length or longest
        self._cache: dict[str, list[int]] = {}

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> TokenizerHandle:
        return cls(Vocab.load(path), **kwargs)

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    def encode_word(self, word: str) -> list[int]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        ids = []
        i = 0
        content = self.vocab
        while i < len(word):
            for j in range(min(len(word), i + self.max_subword_length), i, -1):
                piece = word[i:j]
                if piece in content and piece not in SPECIAL_TOKENS:
                    ids.append(content.id(piece))
                    i = j
                    break
            else:
                ids.append(UNK)
                i += 1
        if len(self._cache) < 100_000:
            self._cache[word] = ids
        return ids

    def encode_words(self, text: str) -> list[list[int]]:
        if self.lowercase:
            text = text.lower()
        return [self.encode_word(w) for w in text.split()]

    def encode(self, text: str) -> list[int]:
        return [i for word in self.encode_words(text) for i in word]

    def _check(self, ids: Sequence[int]) -> None:
        V = self.vocab.size
        for i in ids:
            if not 0 <= int(i) < V:
                raise VocabError(f"token id {i} outside [0, {V})")

    def decode(self, ids: Sequence[int]) -> str:
        self._check(ids)
        return "".join(self.vocab.token(int(i)) for i in ids)

    def decode_words(self, words: Sequence[Sequence[int]]) -> str:
        return " ".join(self.decode(w) for w in words)


def encode(tok: TokenizerHandle, text: str) -> list[int]:
    return tok.encode(text)


def decode(tok: TokenizerHandle, ids: Sequence[int]) -> str:
    return tok.decode(ids)
