"""The each / all / mono fine-tuning protocol and the relative-improvement report."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .data import TaskError, TaskSpec
from .finetune import finetune
from .metrics import relative_improvement
from .stats import TTestResult, students_t_test

MODES = ("each", "all", "mono")
REPORT_COLUMNS = ("model", "task", "each", "all", "rel_improvement")


@dataclass(frozen=True)
class EvalResult:
    model_id: str
    task: str
    train_mode: str
    scores: dict[str, float]
    average: float = field(default=math.nan)

    def __post_init__(self):
        if self.train_mode not in MODES:
            raise ValueError(f"unknown train mode {self.train_mode!r}")
        if not self.scores:
            raise ValueError("an evaluation result needs at least one language score")
        for lang, s in self.scores.items():
            if not -1.0 <= s <= 1.0:
                raise ValueError(f"{lang}: score {s} is outside [-1, 1]")
        mean = sum(self.scores.values()) / len(self.scores)
        if math.isnan(self.average):
            object.__setattr__(self, "average", mean)
        elif abs(self.average - mean) > 1e-12:
            raise ValueError(f"average {self.average} is not the mean of the per-language scores ({mean})")


FinetuneFn = Callable[..., object]


def run_protocol(
    checkpoints: Mapping[str, object],
    tasks: Sequence[TaskSpec],
    modes: Sequence[str],
    tok=None,
    seed: int = 0,
    finetune_fn: FinetuneFn = finetune,
    log: Callable[[str], None] | None = None,
) -> list[EvalResult]:
    """Fine-tune and evaluate every (checkpoint, task, mode).

    "each" fine-tunes once per language and scores it on that language; "all"
    fine-tunes once on every training split (plus cross-lingual pairs when the
    task has them); "mono" does the same without the cross-lingual pairs.
    ``finetune_fn`` must return an object with ``score(examples)``.
    """
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ValueError(f"unknown modes {bad}; expected a subset of {MODES}")
    for task in tasks:
        if "mono" in modes and task.cross_lingual_train is None:
            raise TaskError(f"mode 'mono' needs cross-lingual samples, which task {task.name} does not have")
    results = []
    for model_id, ckpt in checkpoints.items():
        for task in tasks:
            langs = task.language_codes
            tests = {lang: task.load_split(lang, "test") for lang in langs}
            for mode in modes:
                scores: dict[str, float] = {}
                if mode == "each":
                    for lang in langs:
                        ft = finetune_fn(ckpt, task, [lang], seed=seed, tok=tok)
                        scores[lang] = float(ft.score(tests[lang]))
                else:
                    cross = mode == "all" and task.cross_lingual_train is not None
                    ft = finetune_fn(ckpt, task, list(langs), seed=seed, tok=tok, include_cross_lingual=cross)
                    for lang in langs:
                        scores[lang] = float(ft.score(tests[lang]))
                res = EvalResult(model_id, task.name, mode, scores)
                if log:
                    log(f"{model_id} {task.name} {mode}: " + " ".join(f"{k}={v:.4f}" for k, v in scores.items()))
                results.append(res)
    return results


@dataclass(frozen=True)
class ComparisonEntry:
    model: str
    task: str
    each: float
    all: float
    rel_improvement: float


@dataclass
class ComparisonReport:
    entries: list[ComparisonEntry]
    groups: dict[str, str] = field(default_factory=dict)
    test: TTestResult | None = None

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(e.model for e in self.entries))

    def model_means(self) -> dict[str, float]:
        out = {}
        for m in self.models:
            vals = [e.rel_improvement for e in self.entries if e.model == m]
            out[m] = sum(vals) / len(vals)
        return out

    def to_csv_rows(self) -> list[list[str]]:
        return [[e.model, e.task, repr(e.each), repr(e.all), repr(e.rel_improvement)] for e in self.entries]

    def summary(self) -> dict:
        out: dict = {"model_mean_rel_improvement": self.model_means(), "groups": dict(self.groups)}
        if self.test is not None:
            t = self.test
            out["t_test"] = {"t": t.t, "p": t.p, "df": t.df, "mean_a": t.mean_a, "mean_b": t.mean_b}
        return out


def build_report(pairs: Sequence[tuple[str, str, float, float]], groups: Mapping[str, str] | None = None) -> ComparisonReport:
    """Report from ``(model, task, each_avg, all_avg)`` rows.

    With ``groups`` mapping models to exactly two group names, the per-entry
    relative improvements of the first-named group are t-tested against the second.
    """
    entries = [ComparisonEntry(m, t, e, a, relative_improvement(e, a)) for m, t, e, a in pairs]
    report = ComparisonReport(entries, dict(groups or {}))
    if groups:
        names = list(dict.fromkeys(groups.values()))
        if len(names) != 2:
            raise ValueError(f"group test needs exactly two groups, got {names}")
        a = [e.rel_improvement for e in entries if groups.get(e.model) == names[0]]
        b = [e.rel_improvement for e in entries if groups.get(e.model) == names[1]]
        if len(a) >= 2 and len(b) >= 2:
            report.test = students_t_test(a, b)
    return report


def compare(results: Sequence[EvalResult], groups: Mapping[str, str] | None = None) -> ComparisonReport:
    """Pair each "each" result with the matching "all" result."""
    by_key = {(r.model_id, r.task, r.train_mode): r for r in results}
    pairs = []
    for (model, task, mode), r in by_key.items():
        if mode != "each":
            continue
        other = by_key.get((model, task, "all"))
        if other is None:
            raise ValueError(f"no 'all' result for {model}/{task}")
        pairs.append((model, task, r.average, other.average))
    if not pairs:
        raise ValueError("comparison needs both 'each' and 'all' results")
    return build_report(pairs, groups)


def results_to_json(results: Sequence[EvalResult]) -> list[dict]:
    return [
        {"model": r.model_id, "task": r.task, "mode": r.train_mode, "scores": r.scores, "average": r.average}
        for r in results
    ]


def results_from_json(rows: Sequence[dict]) -> list[EvalResult]:
    return [EvalResult(d["model"], d["task"], d["mode"], dict(d["scores"]), d["average"]) for d in rows]


# report files ---------------------------------------------------------------------------------------

def write_report_csv(report: ComparisonReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(report.to_csv_rows())


def read_report_csv(path: str | Path) -> ComparisonReport:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != REPORT_COLUMNS:
        raise ValueError(f"{path}: not a comparison report (bad header)")
    return ComparisonReport(
        [ComparisonEntry(r[0], r[1], float(r[2]), float(r[3]), float(r[4])) for r in rows[1:]]
    )


def render_svg(report: ComparisonReport, width: int = 640, height: int = 360) -> str:
    """Bar chart of mean relative improvement per model, in percent, with a zero baseline."""
    means = report.model_means()
    names = list(means)
    vals = [100.0 * means[n] for n in names]
    top = max([0.0, *vals])
    bottom = min([0.0, *vals])
    span = (top - bottom) or 1.0
    left, right, pad_top, pad_bottom = 60, 20, 30, 90
    plot_h = height - pad_top - pad_bottom
    plot_w = width - left - right
    y0 = pad_top + plot_h * top / span
    slot = plot_w / max(1, len(names))
    bar_w = slot * 0.6
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">'
        "Mean relative improvement, all vs each (%)</text>",
    ]
    for i, (name, v) in enumerate(zip(names, vals)):
        x = left + i * slot + (slot - bar_w) / 2
        h = plot_h * abs(v) / span
        y = y0 - h if v >= 0 else y0
        colour = "#4a7ab5" if v >= 0 else "#c0504d"
        parts.append(f'<rect class="bar" x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{h:.2f}" fill="{colour}"/>')
        label_y = (y - 4) if v >= 0 else (y + h + 12)
        parts.append(
            f'<text x="{x + bar_w / 2:.2f}" y="{label_y:.2f}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="10">{v:.2f}</text>'
        )
        cx, cy = x + bar_w / 2, height - pad_bottom + 14
        parts.append(
            f'<text x="{cx:.2f}" y="{cy:.2f}" text-anchor="end" font-family="sans-serif" font-size="11" '
            f'transform="rotate(-35 {cx:.2f} {cy:.2f})">{_escape(name)}</text>'
        )
    parts.append(f'<line x1="{left}" y1="{y0:.2f}" x2="{width - right}" y2="{y0:.2f}" stroke="black" stroke-width="1"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_report(report: ComparisonReport, out_dir: str | Path) -> dict[str, Path]:
    """Write ``report.csv``, ``report.svg`` and ``report.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "report.csv", "svg": out / "report.svg", "json": out / "report.json"}
    write_report_csv(report, paths["csv"])
    paths["svg"].write_text(render_svg(report), encoding="utf-8")
    paths["json"].write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
