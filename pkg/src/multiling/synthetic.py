"""Offline synthetic bilingual data.

One set of sentence templates is rendered into two languages whose words are
built from disjoint consonant inventories, so the surface vocabularies never
overlap while entity labels, answers and similarity scores stay aligned.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document

LANGUAGES = {
    "xa": ("bdgkpt", "aeiou"),
    "yb": ("lmnrsvz", "aeiou"),
}

N_CONCEPTS = {
    "first": 12,
    "last": 8,
    "loc": 10,
    "org": 6,
    "noun": 16,
    "verb": 10,
    "adj": 8,
}
FUNCTION_WORDS = ("the", "to", "in", "and", "not", "who", "where", "did", "go", "of")
NLI_LABELS = ("entailment", "neutral", "contradiction")

# slot kinds: ("per",), ("loc",), ("org",), ("noun",), ("verb",), ("adj",), or literal function word / "."
TEMPLATES = (
    ("per", "verb", "to", "loc", "."),
    ("the", "adj", "noun", "verb", "in", "loc", "."),
    ("per", "and", "per", "verb", "the", "noun", "."),
    ("org", "verb", "the", "adj", "noun", "."),
    ("in", "loc", "per", "verb", "the", "noun", "of", "org", "."),
    ("the", "noun", "of", "per", "verb", "to", "loc", "."),
)


@dataclass
class Sentence:
    words: list[str]
    tags: list[str]
    concepts: list[tuple[str, int]]
    template: int


class SyntheticWorld:
    """Deterministic lexicons for every language, derived from ``seed``."""

    def __init__(self, seed: int = 0, languages: tuple[str, ...] = ("xa", "yb")):
        self.languages = languages
        self.lexicon: dict[str, dict[str, list[str]]] = {}
        for li, lang in enumerate(languages):
            cons, vows = LANGUAGES[lang]
            rng = np.random.default_rng([seed, li])
            used: set[str] = set()
            lex: dict[str, list[str]] = {}
            for kind in list(N_CONCEPTS) + ["func"]:
                n = len(FUNCTION_WORDS) if kind == "func" else N_CONCEPTS[kind]
                syllables = 1 if kind == "func" else 2
                words = []
                while len(words) < n:
                    w = "".join(
                        cons[rng.integers(len(cons))] + vows[rng.integers(len(vows))]
                        for _ in range(syllables + int(rng.random() < 0.4))
                    )
                    if kind in ("first", "last", "loc", "org"):
                        w = w.capitalize()
                    if w.lower() not in used:
                        used.add(w.lower())
                        words.append(w)
                lex[kind] = words
            lex["org_suffix"] = [lex["func"][-1].capitalize() + lex["noun"][0]]
            self.lexicon[lang] = lex

    def word(self, lang: str, kind: str, idx: int) -> str:
        if kind == "func":
            return self.lexicon[lang]["func"][idx]
        return self.lexicon[lang][kind][idx]

    def sample_concepts(self, rng: np.random.Generator, template: int | None = None) -> tuple[int, list[tuple[str, int]]]:
        t = int(rng.integers(len(TEMPLATES))) if template is None else template
        concepts: list[tuple[str, int]] = []
        for slot in TEMPLATES[t]:
            if slot == "per":
                # first * 100 + (surname + 1); surname 0 means a single-word name
                concepts.append(("per", int(rng.integers(N_CONCEPTS["first"])) * 100 + int(rng.integers(N_CONCEPTS["last"] + 1))))
            elif slot in ("loc", "org", "noun", "verb", "adj"):
                concepts.append((slot, int(rng.integers(N_CONCEPTS[slot]))))
        return t, concepts

    def render(self, lang: str, template: int, concepts: list[tuple[str, int]], negate: bool = False) -> Sentence:
        words: list[str] = []
        tags: list[str] = []
        it = iter(concepts)

        def emit(ws: list[str], label: str | None):
            for i, w in enumerate(ws):
                words.append(w)
                tags.append("O" if label is None else ("B-" if i == 0 else "I-") + label)

        for slot in TEMPLATES[template]:
            if slot == ".":
                emit(["."], None)
            elif slot in FUNCTION_WORDS:
                emit([self.word(lang, "func", FUNCTION_WORDS.index(slot))], None)
            else:
                kind, idx = next(it)
                if kind == "per":
                    first, last = divmod(idx, 100)
                    ws = [self.word(lang, "first", first)]
                    if last:
                        ws.append(self.word(lang, "last", last - 1))
                    emit(ws, "PER")
                elif kind == "loc":
                    emit([self.word(lang, "loc", idx)], "LOC")
                elif kind == "org":
                    emit([self.word(lang, "org", idx), self.lexicon[lang]["org_suffix"][0]], "ORG")
                else:
                    emit([self.word(lang, kind, idx)], None)
                    if kind == "verb" and negate:
                        emit([self.word(lang, "func", FUNCTION_WORDS.index("not"))], None)
        return Sentence(words, tags, list(concepts), template)

    def sentence(self, lang: str, rng: np.random.Generator, template: int | None = None) -> Sentence:
        t, concepts = self.sample_concepts(rng, template)
        return self.render(lang, t, concepts)


def pretraining_documents(
    n_per_language: int = 200,
    seed: int = 0,
    world: SyntheticWorld | None = None,
    noise: bool = False,
    sentences_per_doc: tuple[int, int] = (1, 3),
) -> list[Document]:
    """Interleaved documents of 1-3 sentences per language.

    With ``noise`` a share of documents carries markup, hidden characters or
    is junk (URL-only, digit-heavy, too short) for the corpus filter to catch.
    """
    world = world or SyntheticWorld(seed)
    rng = np.random.default_rng([seed, 99])
    docs: list[Document] = []
    lo, hi = sentences_per_doc
    for i in range(n_per_language):
        for lang in world.languages:
            n = int(rng.integers(lo, hi + 1))
            text = " ".join(" ".join(world.sentence(lang, rng).words) for _ in range(n))
            doc_id = f"{lang}-{i:05d}"
            if noise:
                r = rng.random()
                if r < 0.05:
                    text = f"https://example.org/{lang}/{i}"
                elif r < 0.10:
                    text = " ".join(str(int(x)) for x in rng.integers(1000, 99999, size=6))
                elif r < 0.15:
                    text = text.split()[0]
                elif r < 0.25:
                    words = text.split()
                    words.insert(1, "<b>")
                    words.append("</b>&amp;")
                    text = " ".join(words) + "\u200b"
            docs.append(Document(doc_id, lang, text))
    return docs


# downstream task files ----------------------------------------------------------------------------

def _bio_sentences(world: SyntheticWorld, lang: str, n: int, rng) -> list[Sentence]:
    return [world.sentence(lang, rng) for _ in range(n)]


def _write_conll(path: Path, sentences: list[Sentence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sentences:
            for w, t in zip(s.words, s.tags):
                fh.write(f"{w}\t{t}\n")
            fh.write("\n")


def _nli_pairs(world: SyntheticWorld, lang: str, n: int, rng) -> list[tuple[str, str, str]]:
    rows = []
    for i in range(n):
        t, concepts = world.sample_concepts(rng)
        premise = world.render(lang, t, concepts)
        label = NLI_LABELS[i % 3]
        if label == "entailment":
            hyp = world.render(lang, t, concepts)
        elif label == "contradiction":
            hyp = world.render(lang, t, concepts, negate=True)
        else:
            t2, c2 = world.sample_concepts(rng)
            hyp = world.render(lang, t2, c2)
        rows.append((" ".join(premise.words), " ".join(hyp.words), label))
    return rows


def _qa_items(world: SyntheticWorld, lang: str, n: int, rng) -> list[dict]:
    items = []
    f = lambda w: world.word(lang, "func", FUNCTION_WORDS.index(w))  # noqa: E731
    for _ in range(n):
        s = world.sentence(lang, rng, template=0)
        context = " ".join(s.words)
        per_words = [w for w, tg in zip(s.words, s.tags) if tg.endswith("PER")]
        loc_words = [w for w, tg in zip(s.words, s.tags) if tg.endswith("LOC")]
        if rng.random() < 0.5:
            answer = " ".join(per_words)
            question = " ".join([f("who"), s.words[len(per_words)], f("to"), *loc_words, "?"])
        else:
            answer = " ".join(loc_words)
            question = " ".join([f("where"), f("did"), *per_words, f("go"), "?"])
        items.append(
            {"context": context, "question": question, "answer_text": answer, "answer_start": context.index(answer)}
        )
    return items


def _sts_pair(world: SyntheticWorld, lang_a: str, lang_b: str, rng) -> tuple[str, str, float]:
    t, concepts = world.sample_concepts(rng)
    keep = rng.random(len(concepts)) < rng.random()
    _, fresh = world.sample_concepts(rng, t)
    other = [c if k else f for c, k, f in zip(concepts, keep, fresh)]
    same = sum(a == b for a, b in zip(concepts, other))
    score = 5.0 * same / len(concepts)
    a = world.render(lang_a, t, concepts)
    b = world.render(lang_b, t, other)
    return " ".join(a.words), " ".join(b.words), round(score, 4)


def write_task_suite(
    out_dir: str | Path,
    seed: int = 0,
    n_train: int = 40,
    n_test: int = 20,
    world: SyntheticWorld | None = None,
    epochs: int = 30,
) -> dict[str, Path]:
    """Write NER, NLI, QA and STS task data plus one task JSON per task; returns task file paths."""
    world = world or SyntheticWorld(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks: dict[str, Path] = {}
    base = {"epochs": epochs, "batch_size": 8, "lr": 3e-3, "seed": seed}

    def rng_for(task: str, lang: str, split: str):
        return np.random.default_rng([seed, sum(map(ord, task)), sum(map(ord, lang)), split == "test"])

    # NER
    langs = {}
    for lang in world.languages:
        entry = {}
        for split, n in (("train", n_train), ("test", n_test)):
            p = out / f"ner.{lang}.{split}.conll"
            _write_conll(p, _bio_sentences(world, lang, n, rng_for("ner", lang, split)))
            entry[split] = p.name
        langs[lang] = entry
    tasks["ner"] = _write_task(out, "ner", {"kind": "token_classification", "labels": ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"], "languages": langs, **base})

    # NLI
    langs = {}
    for lang in world.languages:
        entry = {}
        for split, n in (("train", n_train), ("test", n_test)):
            p = out / f"nli.{lang}.{split}.tsv"
            with open(p, "w", encoding="utf-8", newline="\n") as fh:
                for a, b, lab in _nli_pairs(world, lang, n, rng_for("nli", lang, split)):
                    fh.write(f"{a}\t{b}\t{lab}\n")
            entry[split] = p.name
        langs[lang] = entry
    tasks["nli"] = _write_task(out, "nli", {"kind": "pair_classification", "labels": list(NLI_LABELS), "languages": langs, **base})

    # QA
    langs = {}
    for lang in world.languages:
        entry = {}
        for split, n in (("train", n_train), ("test", n_test)):
            p = out / f"qa.{lang}.{split}.jsonl"
            with open(p, "w", encoding="utf-8", newline="\n") as fh:
                for item in _qa_items(world, lang, n, rng_for("qa", lang, split)):
                    fh.write(json.dumps(item, ensure_ascii=False) + "\n")
            entry[split] = p.name
        langs[lang] = entry
    tasks["qa"] = _write_task(out, "qa", {"kind": "span_extraction", "languages": langs, **base})

    # STS with a cross-lingual training split
    langs = {}
    for lang in world.languages:
        entry = {}
        for split, n in (("train", n_train), ("test", n_test)):
            p = out / f"sts.{lang}.{split}.tsv"
            rng = rng_for("sts", lang, split)
            with open(p, "w", encoding="utf-8", newline="\n") as fh:
                for _ in range(n):
                    a, b, s = _sts_pair(world, lang, lang, rng)
                    fh.write(f"{a}\t{b}\t{s}\n")
            entry[split] = p.name
        langs[lang] = entry
    cross = out / "sts.cross.train.tsv"
    rng = rng_for("sts", "cross", "train")
    with open(cross, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(n_train):
            la, lb = world.languages[i % 2], world.languages[(i + 1) % 2]
            a, b, s = _sts_pair(world, la, lb, rng)
            fh.write(f"{a}\t{b}\t{s}\n")
    tasks["sts"] = _write_task(
        out,
        "sts",
        {"kind": "pair_regression", "score_range": [0.0, 5.0], "languages": langs, "cross_lingual_train": cross.name, **base},
    )
    return tasks


def _write_task(out: Path, name: str, body: dict) -> Path:
    p = out / f"{name}.task.json"
    p.write_text(json.dumps({"name": name, **body}, indent=2) + "\n", encoding="utf-8")
    return p
