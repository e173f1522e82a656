"""Task descriptions and readers for CoNLL, TSV pair and span JSONL files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("token_classification", "pair_classification", "span_extraction", "pair_regression")
DEFAULT_SCORE_RANGE = (0.0, 5.0)


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class TokenExample:
    words: tuple[str, ...]
    tags: tuple[str, ...]


@dataclass(frozen=True)
class PairExample:
    text_a: str
    text_b: str
    label: str | float


@dataclass(frozen=True)
class SpanExample:
    context: str
    question: str
    answer_text: str
    answer_start: int

    def answer_word_span(self) -> tuple[int, int]:
        """Word indices ``[start, end)`` of the answer within ``context.split()``."""
        first = len(self.context[: self.answer_start].split())
        n = len(self.answer_text.split())
        words = self.context.split()
        if n == 0 or words[first : first + n] != self.answer_text.split():
            raise TaskError(f"answer {self.answer_text!r} does not align with the context at {self.answer_start}")
        return first, first + n


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str
    languages: dict[str, dict[str, Path]]
    labels: tuple[str, ...] = ()
    score_range: tuple[float, float] = DEFAULT_SCORE_RANGE
    cross_lingual_train: Path | None = None
    epochs: int = 30
    batch_size: int = 8
    lr: float = 3e-3
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TaskError(f"unknown task kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind in ("token_classification", "pair_classification") and len(self.labels) < 2:
            raise TaskError(f"task {self.name}: classification needs at least two labels")
        if self.kind == "token_classification" and "O" not in self.labels:
            raise TaskError(f"task {self.name}: token labels must include 'O'")
        lo, hi = self.score_range
        if not lo < hi:
            raise TaskError(f"task {self.name}: empty score range {self.score_range}")
        if not self.languages:
            raise TaskError(f"task {self.name}: no languages")
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr <= 0:
            raise TaskError(f"task {self.name}: epochs, batch_size and lr must be positive")

    @property
    def language_codes(self) -> tuple[str, ...]:
        return tuple(self.languages)

    def split_path(self, lang: str, split: str) -> Path:
        try:
            return self.languages[lang][split]
        except KeyError:
            raise TaskError(f"task {self.name} has no {split} split for language {lang!r}") from None

    def load_split(self, lang: str, split: str) -> list:
        return read_examples(self.kind, self.split_path(lang, split))

    def load_cross_lingual(self) -> list:
        if self.cross_lingual_train is None:
            raise TaskError(f"task {self.name} has no cross-lingual training samples")
        return read_examples(self.kind, self.cross_lingual_train)

    @classmethod
    def from_json(cls, path: str | Path) -> TaskSpec:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"task file not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent
        try:
            langs = {
                lang: {split: base / rel for split, rel in splits.items()}
                for lang, splits in raw.pop("languages").items()
            }
            cross = raw.pop("cross_lingual_train", None)
            known = {f for f in cls.__dataclass_fields__ if f not in ("languages", "cross_lingual_train", "extra")}
            kwargs = {k: raw.pop(k) for k in list(raw) if k in known}
            kwargs.setdefault("name", path.name.split(".")[0])
        except (KeyError, AttributeError) as exc:
            raise TaskError(f"{path}: malformed task file ({exc})") from None
        if "labels" in kwargs:
            kwargs["labels"] = tuple(kwargs["labels"])
        if "score_range" in kwargs:
            kwargs["score_range"] = tuple(float(x) for x in kwargs["score_range"])
        return cls(
            languages=langs,
            cross_lingual_train=base / cross if cross else None,
            extra=raw,
            **kwargs,
        )


def read_conll(path: str | Path) -> list[TokenExample]:
    """Token/tag columns; the tag is the last column, blank lines separate sentences."""
    out: list[TokenExample] = []
    words: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if words:
                    out.append(TokenExample(tuple(words), tuple(tags)))
                    words, tags = [], []
                continue
            if line.startswith("-DOCSTART-"):
                continue
            cols = line.split()
            if len(cols) < 2:
                raise TaskError(f"{path}:{lineno}: expected token and tag columns")
            words.append(cols[0])
            tags.append(cols[-1])
    if words:
        out.append(TokenExample(tuple(words), tuple(tags)))
    return out


def read_pairs(path: str | Path, regression: bool = False) -> list[PairExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise TaskError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            label: str | float = cols[2]
            if regression:
                try:
                    label = float(cols[2])
                except ValueError:
                    raise TaskError(f"{path}:{lineno}: score {cols[2]!r} is not a number") from None
            out.append(PairExample(cols[0], cols[1], label))
    return out


def read_spans(path: str | Path) -> list[SpanExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(SpanExample(d["context"], d["question"], d["answer_text"], int(d["answer_start"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise TaskError(f"{path}:{lineno}: bad span record ({exc})") from None
    return out


def read_examples(kind: str, path: str | Path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"task data not found: {path}")
    if kind == "token_classification":
        return read_conll(path)
    if kind == "span_extraction":
        return read_spans(path)
    return read_pairs(path, regression=kind == "pair_regression")
