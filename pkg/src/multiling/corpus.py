"""Corpus cleaning and filtering for multilingual pre-training text.

Documents are JSON lines ``{"id": ..., "lang": ..., "text": ...}``.  Each
document is cleaned (markup and hidden characters removed) and then checked
against three drop rules, in order: URL/ISBN-only, digit-heavy, too short.
"""
from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

TAG_RE = re.compile(r"<[^>]{1,100}>")
ENTITY_RE = re.compile(r"&\w{1,10};")
URL_RE = re.compile(r"https?://\S+")
ISBN_RE = re.compile(r"ISBN[\s:]*[\dX-]*")

RULES = ("url_isbn_only", "digit_ratio", "too_short")
MAX_DIGIT_RATIO = (7, 10)
MIN_TOKENS = 5


class CorpusConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    lang: str
    text: str

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "lang": self.lang, "text": self.text}, ensure_ascii=False)


class LanguageRegistry:
    """Stable code -> integer id mapping."""

    def __init__(self, languages: Iterable[str]):
        langs = list(languages)
        if not langs:
            raise CorpusConfigError("a language registry needs at least one language")
        if len(set(langs)) != len(langs):
            raise CorpusConfigError(f"duplicate language codes in {langs}")
        self.languages: tuple[str, ...] = tuple(langs)
        self._index = {code: i for i, code in enumerate(self.languages)}

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> LanguageRegistry:
        return cls(sorted({d.lang for d in docs}))

    def __len__(self) -> int:
        return len(self.languages)

    def __contains__(self, code: str) -> bool:
        return code in self._index

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise CorpusConfigError(f"language {code!r} is not registered") from None

    def __eq__(self, other) -> bool:
        return isinstance(other, LanguageRegistry) and self.languages == other.languages

    def __repr__(self) -> str:
        return f"LanguageRegistry({list(self.languages)})"


@dataclass
class FilterReport:
    kept: int = 0
    dropped_per_rule: dict[str, int] = field(default_factory=lambda: {r: 0 for r in RULES})
    total_bytes_kept: int = 0
    total_tokens_kept: int = 0

    @property
    def tokens_per_sample_mean(self) -> float:
        return self.total_tokens_kept / self.kept if self.kept else 0.0

    @property
    def total(self) -> int:
        return self.kept + sum(self.dropped_per_rule.values())

    def merge(self, other: FilterReport) -> FilterReport:
        dropped = Counter(self.dropped_per_rule)
        dropped.update(other.dropped_per_rule)
        return FilterReport(
            kept=self.kept + other.kept,
            dropped_per_rule={r: dropped.get(r, 0) for r in RULES},
            total_bytes_kept=self.total_bytes_kept + other.total_bytes_kept,
            total_tokens_kept=self.total_tokens_kept + other.total_tokens_kept,
        )

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "dropped_per_rule": dict(self.dropped_per_rule),
            "total_bytes_kept": self.total_bytes_kept,
            "tokens_per_sample_mean": self.tokens_per_sample_mean,
        }


class TokenCounter(Protocol):
    def encode(self, text: str) -> Sequence: ...


class WhitespaceTokenizer:
    def encode(self, text: str) -> list[str]:
        return text.split()


def strip_html_artifacts(text: str) -> str:
    """Remove ``<tag>``-like spans and ``&entity;`` residues until none remain."""
    while True:
        cleaned = ENTITY_RE.sub("", TAG_RE.sub("", text))
        if cleaned == text:
            return cleaned
        text = cleaned


def strip_hidden_characters(text: str) -> str:
    out = []
    for ch in text:
        if ch in "\n\t":
            out.append(" ")
        elif unicodedata.category(ch) not in ("Cc", "Cf"):
            out.append(ch)
    return "".join(out)


def clean_text(text: str) -> str:
    return strip_hidden_characters(strip_html_artifacts(text))


def _only_urls_or_isbns(text: str) -> bool:
    if not (URL_RE.search(text) or ISBN_RE.search(text)):
        return False
    rest = ISBN_RE.sub(" ", URL_RE.sub(" ", text))
    return all(ch.isspace() or unicodedata.category(ch).startswith("P") for ch in rest)


def digit_ratio_exceeded(text: str) -> bool:
    if not text:
        return False
    digits = sum(ch.isdecimal() for ch in text)
    num, den = MAX_DIGIT_RATIO
    return digits * den > num * len(text)


def passes_filters(doc: Document, tok: TokenCounter) -> str | None:
    """Return None to keep ``doc``, else the name of the first failing rule."""
    text = doc.text
    if _only_urls_or_isbns(text):
        return "url_isbn_only"
    if digit_ratio_exceeded(text):
        return "digit_ratio"
    if len(tok.encode(text)) < MIN_TOKENS:
        return "too_short"
    return None


def filter_corpus(
    docs: Iterable[Document],
    tok: TokenCounter,
    registry: LanguageRegistry | None = None,
) -> tuple[list[Document], FilterReport]:
    """Clean and filter ``docs`` in order.

    When a registry is given, every document's language must be registered,
    otherwise the whole stream is rejected before anything is emitted.
    """
    docs = list(docs)
    if registry is not None:
        for d in docs:
            if d.lang not in registry:
                raise CorpusConfigError(f"document {d.id!r} has unregistered language {d.lang!r}")
    report = FilterReport()
    kept: list[Document] = []
    for d in docs:
        cleaned = Document(d.id, d.lang, clean_text(d.text))
        rule = passes_filters(cleaned, tok)
        if rule is None:
            kept.append(cleaned)
            report.kept += 1
            report.total_bytes_kept += len(cleaned.text.encode("utf-8"))
            report.total_tokens_kept += len(tok.encode(cleaned.text))
        else:
            report.dropped_per_rule[rule] += 1
    return kept, report


def read_jsonl(path: str | Path) -> Iterator[Document]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield Document(str(obj["id"]), str(obj["lang"]), str(obj["text"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusConfigError(f"{path}:{lineno}: malformed document ({exc})") from exc


def write_jsonl(path: str | Path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            fh.write(d.to_json() + "\n")
