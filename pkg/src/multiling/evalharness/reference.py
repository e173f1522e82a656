"""Published each/all averages for eight multilingual encoders on NER, NLI, QA and STS.

F1 scores are stored as fractions; STS values are Pearson correlations.  The
three compact adversarially trained models form one group, the five larger
public encoders the other.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .metrics import relative_improvement
from .stats import TTestResult, students_t_test

TASKS = ("ner", "nli", "qa", "sts")

# model -> task -> (each, all)
PUBLISHED_AVERAGES: dict[str, dict[str, tuple[float, float]]] = {
    "distil-mbert-base": {"ner": (0.8759, 0.8738), "nli": (0.6768, 0.6774), "qa": (0.5195, 0.5521), "sts": (0.589, 0.649)},
    "mbert-base": {"ner": (0.8996, 0.8924), "nli": (0.7264, 0.7337), "qa": (0.5786, 0.5921), "sts": (0.674, 0.710)},
    "xlm-roberta-base": {"ner": (0.9039, 0.9021), "nli": (0.7518, 0.7904), "qa": (0.5893, 0.5997), "sts": (0.626, 0.709)},
    "xlm-roberta-large": {"ner": (0.9203, 0.9067), "nli": (0.8229, 0.8330), "qa": (0.6351, 0.6485), "sts": (0.628, 0.743)},
    "xlm-v-base": {"ner": (0.9183, 0.9136), "nli": (0.8192, 0.8392), "qa": (0.6334, 0.6557), "sts": (0.621, 0.730)},
    "compact-small": {"ner": (0.8325, 0.8440), "nli": (0.6152, 0.6569), "qa": (0.4287, 0.4459), "sts": (0.547, 0.624)},
    "compact-xsmall": {"ner": (0.7725, 0.7880), "nli": (0.5436, 0.6128), "qa": (0.2843, 0.3653), "sts": (0.520, 0.600)},
    "compact-xxsmall": {"ner": (0.7164, 0.7400), "nli": (0.4807, 0.5445), "qa": (0.1757, 0.2133), "sts": (0.500, 0.574)},
}

# STS "mono" averages (fine-tuned on monolingual pairs only)
PUBLISHED_STS_MONO = {
    "distil-mbert-base": 0.698, "mbert-base": 0.723, "xlm-roberta-base": 0.709, "xlm-roberta-large": 0.737,
    "xlm-v-base": 0.729, "compact-small": 0.614, "compact-xsmall": 0.590, "compact-xxsmall": 0.565,
}

COMPACT_MODELS = ("compact-small", "compact-xsmall", "compact-xxsmall")
BASELINE_MODELS = ("distil-mbert-base", "mbert-base", "xlm-roberta-base", "xlm-roberta-large", "xlm-v-base")

# reported per-model mean relative improvements (fractions) and the group test
REPORTED_MODEL_MEANS = {
    "distil-mbert-base": 0.0151, "mbert-base": 0.0062, "xlm-roberta-base": 0.0211, "xlm-roberta-large": 0.0044,
    "xlm-v-base": 0.0095, "compact-small": 0.0376, "compact-xsmall": 0.1033, "compact-xxsmall": 0.0908,
}
REPORTED_T = 2.714
REPORTED_P = 0.0184


def improvements(models, tasks=TASKS) -> list[tuple[str, str, float]]:
    return [
        (m, t, relative_improvement(*PUBLISHED_AVERAGES[m][t]))
        for m in models
        for t in tasks
    ]


@dataclass(frozen=True)
class Candidate:
    description: str
    result: TTestResult
    excluded: tuple[tuple[str, str], ...] = ()

    @property
    def distance(self) -> float:
        return abs(self.result.t - REPORTED_T) / REPORTED_T + abs(self.result.p - REPORTED_P) / REPORTED_P


def candidate_tests(n_baseline: int = 16) -> list[Candidate]:
    """t-tests of compact vs baseline relative improvements over several entry selections.

    Returns the full 12-vs-20 comparison, the per-model-mean comparison and the
    ``n_baseline``-of-20 baseline subset whose (t, p) lies closest to the
    reported pair.
    """
    compact = [r for _, _, r in improvements(COMPACT_MODELS)]
    base = improvements(BASELINE_MODELS)
    out = [
        Candidate("12 compact vs all 20 baseline entries", students_t_test(compact, [r for *_, r in base])),
    ]
    means = lambda models: [  # noqa: E731
        sum(r for _, _, r in improvements([m])) / len(TASKS) for m in models
    ]
    out.append(Candidate("per-model means (3 vs 5)", students_t_test(means(COMPACT_MODELS), means(BASELINE_MODELS))))
    best: Candidate | None = None
    for drop in itertools.combinations(range(len(base)), len(base) - n_baseline):
        kept = [r for i, (_, _, r) in enumerate(base) if i not in drop]
        cand = Candidate(
            f"12 compact vs best {n_baseline}-of-{len(base)} baseline entries",
            students_t_test(compact, kept),
            tuple((base[i][0], base[i][1]) for i in drop),
        )
        if best is None or cand.distance < best.distance:
            best = cand
    out.append(best)
    return out
