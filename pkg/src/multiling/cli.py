"""Command-line entry point: ``multiling <subcommand> ... --out DIR``.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Every subcommand writes
its outputs and exactly one ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import TrainConfig, apply_overrides, from_flat, read_kv_file, to_flat
from .corpus import WhitespaceTokenizer, filter_corpus, read_jsonl, write_jsonl

log = logging.getLogger("multiling")

TEACHER_DEFAULTS = {"hidden": "48", "n_layers": "3", "lambda_mlm": "1.0", "lambda_adv": "0", "lambda_kd": "0"}


class UsageError(Exception):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# manifest ------------------------------------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Run:
    """Collects what a subcommand read and resolved, then writes ``manifest.json``."""

    def __init__(self, subcommand: str, out: Path, argv: Sequence[str], seed: int | None):
        self.subcommand = subcommand
        self.out = out
        self.argv = list(argv)
        self.seed = seed
        self.config: dict[str, object] = {}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.started = _now()

    def input(self, path: str | Path) -> Path:
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = sha256_file(p)
        return p

    def output(self, path: Path) -> Path:
        self.outputs.append(path.name if path.parent == self.out else str(path.relative_to(self.out)))
        return path

    def write_manifest(self, status: str) -> None:
        manifest = {
            "subcommand": self.subcommand,
            "argv": self.argv,
            "config": {k: (",".join(v) if isinstance(v, tuple) else v) for k, v in self.config.items()},
            "inputs": self.inputs,
            "seed": self.seed,
            "version": __version__,
            "started": self.started,
            "finished": _now(),
            "status": status,
            "outputs": sorted(set(self.outputs)),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# helpers -------------------------------------------------------------------------------------------

def _train_config(run: Run, args, defaults: dict[str, str] | None = None) -> TrainConfig:
    values: dict[str, object] = dict(defaults or {})
    if args.config:
        values.update(read_kv_file(run.input(args.config)))
    values = apply_overrides(values, args.set)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    cfg = from_flat(values)
    run.config = to_flat(cfg)
    run.seed = cfg.seed
    return cfg


def _load_docs(run: Run, path: str):
    p = run.input(path)
    if not p.is_file():
        raise FileNotFoundError(f"corpus not found: {p}")
    return list(read_jsonl(p))


def _load_tok(run: Run, path: str):
    from .tokenizer import TokenizerHandle

    p = run.input(path)
    if not p.is_file():
        raise FileNotFoundError(f"vocab file not found: {p}")
    return TokenizerHandle.load(p)


def _load_task(run: Run, path: str):
    from .evalharness import TaskSpec

    task = TaskSpec.from_json(run.input(path))
    for splits in task.languages.values():
        for p in splits.values():
            run.input(p)
    if task.cross_lingual_train is not None:
        run.input(task.cross_lingual_train)
    return task


def _split_list(text: str | None) -> list[str]:
    return [s.strip() for s in (text or "").split(",") if s.strip()]


# subcommands ---------------------------------------------------------------------------------------

def cmd_synth_data(args, run: Run) -> None:
    from .synthetic import SyntheticWorld, pretraining_documents, write_task_suite

    world = SyntheticWorld(args.seed or 0)
    docs = pretraining_documents(args.docs_per_language, seed=args.seed or 0, world=world, noise=True)
    write_jsonl(run.output(run.out / "raw.jsonl"), docs)
    paths = write_task_suite(run.out / "tasks", seed=args.seed or 0, world=world)
    for p in sorted((run.out / "tasks").iterdir()):
        run.output(p)
    run.config = {"docs_per_language": args.docs_per_language, "tasks": ",".join(sorted(paths))}
    print(f"wrote {len(docs)} documents and {len(paths)} tasks to {run.out}")


def _inside_out(run: Run, name: str) -> Path:
    p = Path(name)
    p = p if p.is_absolute() else run.out / p
    if run.out.resolve() not in p.resolve().parents:
        raise ValueError(f"{name} lies outside the output directory {run.out}")
    return p


def cmd_filter_corpus(args, run: Run) -> None:
    docs = _load_docs(run, args.input)
    tok = WhitespaceTokenizer() if args.tokenizer == "whitespace" else _load_tok(run, args.tokenizer)
    kept, report = filter_corpus(docs, tok)
    report_path = _inside_out(run, args.report)
    write_jsonl(run.output(run.out / "corpus.jsonl"), kept)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    run.output(report_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.config = {"input": args.input, "tokenizer": args.tokenizer, "report": str(report_path)}
    print(f"kept {report.kept} of {report.total} documents; dropped {report.dropped_per_rule}")


def cmd_build_vocab(args, run: Run) -> None:
    from .tokenizer import build_vocab

    docs = _load_docs(run, args.corpus)
    vocab = build_vocab((d.text for d in docs), args.size)
    vocab.save(run.output(run.out / "vocab.txt"))
    run.config = {"size": args.size, "actual_size": vocab.size, "digest": vocab.digest()}
    print(f"vocab of {vocab.size} tokens -> {run.out / 'vocab.txt'}")


def cmd_pretrain_teacher(args, run: Run) -> None:
    from .trainer import pretrain_teacher

    cfg = _train_config(run, args, TEACHER_DEFAULTS)
    docs = _load_docs(run, args.corpus)
    tok = _load_tok(run, args.vocab)
    cfg = replace(cfg, model=replace(cfg.model, vocab_size=tok.vocab_size))
    run.config = to_flat(cfg)
    _, records = pretrain_teacher(docs, tok, cfg, out_dir=run.out)
    run.output(run.out / "teacher.ckpt")
    run.output(run.out / "metrics.csv")
    if records:
        print(f"teacher trained for {records[-1].step} steps; final L_MLM {records[-1].losses.l_mlm:.4f}")


def cmd_pretrain(args, run: Run) -> None:
    from .trainer import load_teacher, pretrain

    cfg = _train_config(run, args)
    docs = _load_docs(run, args.corpus)
    tok = _load_tok(run, args.vocab)
    cfg = replace(cfg, model=replace(cfg.model, vocab_size=tok.vocab_size))
    run.config = to_flat(cfg)
    teacher = None
    if cfg.weights.lambda_kd > 0 or args.teacher:
        if not args.teacher:
            raise StageError("pretrain", "lambda_kd > 0 needs --teacher (a teacher.ckpt file or its directory)")
        tpath = Path(args.teacher)
        tfile = tpath / "teacher.ckpt" if tpath.is_dir() else tpath
        run.input(tfile)
        teacher = load_teacher(tfile, tok.vocab.digest())
    resume = run.input(args.resume) if args.resume else None
    trainer, records = pretrain(docs, tok, cfg, out_dir=run.out, teacher=teacher, resume=resume)
    run.output(run.out / "final.ckpt")
    run.output(run.out / "metrics.csv")
    for p in run.out.glob("step-*.ckpt"):
        run.output(p)
    if records:
        last = records[-1].losses
        print(f"step {trainer.step}: mlm={last.l_mlm:.4f} adv={last.l_adv:.4f} kd={last.l_kd:.4f} total={last.l_total:.4f}")


def cmd_finetune(args, run: Run) -> None:
    from .evalharness import finetune

    tok = _load_tok(run, args.vocab)
    task = _load_task(run, args.task)
    ckpt = run.input(args.checkpoint)
    langs = _split_list(args.languages) or list(task.language_codes)
    seed = args.seed if args.seed is not None else task.seed
    run.seed = seed
    run.config = {"task": task.name, "languages": ",".join(langs), "cross_lingual": args.cross_lingual}
    model = finetune(ckpt, task, langs, seed=seed, tok=tok, include_cross_lingual=args.cross_lingual)
    model.save(run.output(run.out / "finetuned.ckpt"))
    scores = {lang: model.score(task.load_split(lang, "test")) for lang in task.language_codes}
    run.output(run.out / "scores.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={v:.4f}" for k, v in scores.items()))


def cmd_evaluate(args, run: Run) -> None:
    from .evalharness import FinetunedModel

    tok = _load_tok(run, args.vocab)
    task = _load_task(run, args.task)
    model = FinetunedModel.load(run.input(args.checkpoint), task, tok)
    langs = _split_list(args.languages) or list(task.language_codes)
    scores = {lang: model.score(task.load_split(lang, args.split)) for lang in langs}
    result = {"task": task.name, "split": args.split, "scores": scores, "average": sum(scores.values()) / len(scores)}
    run.config = {"task": task.name, "split": args.split, "languages": ",".join(langs)}
    run.output(run.out / "evaluation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={v:.4f}" for k, v in scores.items()), f"avg={result['average']:.4f}")


def _named_checkpoints(run: Run, items: Sequence[str]) -> dict[str, Path]:
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        p = run.input(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        out[name] = p
    return out


def cmd_compare(args, run: Run) -> None:
    from .evalharness import compare, run_protocol
    from .evalharness.protocol import results_to_json, write_report_csv

    tok = _load_tok(run, args.vocab)
    tasks = [_load_task(run, t) for t in args.task]
    ckpts = _named_checkpoints(run, args.checkpoint)
    modes = _split_list(args.modes)
    seed = args.seed if args.seed is not None else 0
    run.seed = seed
    run.config = {"modes": ",".join(modes), "tasks": ",".join(t.name for t in tasks), "models": ",".join(ckpts)}
    results = run_protocol(ckpts, tasks, modes, tok=tok, seed=seed, log=print)
    run.output(run.out / "results.json").write_text(
        json.dumps(results_to_json(results), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if "each" in modes and "all" in modes:
        write_report_csv(compare(results), run.output(run.out / "comparison.csv"))


def cmd_report(args, run: Run) -> None:
    from .evalharness import build_report, compare, emit_report
    from .evalharness.protocol import results_from_json

    if args.published:
        from .evalharness import reference as ref

        pairs = [(m, t, *ref.PUBLISHED_AVERAGES[m][t]) for m in ref.PUBLISHED_AVERAGES for t in ref.TASKS]
        groups = {m: "compact" for m in ref.COMPACT_MODELS} | {m: "baseline" for m in ref.BASELINE_MODELS}
        report = build_report(pairs, groups)
        candidates = [
            {"selection": c.description, "t": c.result.t, "p": c.result.p, "df": c.result.df,
             "excluded": [list(e) for e in c.excluded]}
            for c in ref.candidate_tests()
        ]
        run.output(run.out / "candidates.json").write_text(
            json.dumps({"reported_t": ref.REPORTED_T, "reported_p": ref.REPORTED_P, "candidates": candidates},
                       indent=2) + "\n",
            encoding="utf-8",
        )
        run.config = {"published": True}
    else:
        if not args.results:
            raise UsageError("report needs --results FILE or --published")
        p = run.input(args.results)
        if not p.is_file():
            raise FileNotFoundError(f"results file not found: {p}")
        groups = {}
        for item in args.group or []:
            model, _, group = item.partition("=")
            groups[model] = group
        report = compare(results_from_json(json.loads(p.read_text(encoding="utf-8"))), groups or None)
        run.config = {"results": str(p), "groups": ",".join(f"{k}={v}" for k, v in groups.items())}
    for path in emit_report(report, run.out).values():
        run.output(path)
    for model, mean in report.model_means().items():
        print(f"{model}: mean relative improvement {100 * mean:+.2f}%")
    if report.test is not None:
        print(f"t = {report.test.t:.3f}, p = {report.test.p:.4f}, df = {report.test.df}")


SMOKE_STAGES = ("synth-data", "filter-corpus", "build-vocab", "pretrain-teacher", "pretrain", "finetune", "compare", "report")


def cmd_smoke(args, run: Run) -> None:
    """The whole chain on the bundled synthetic data, one subdirectory per stage."""
    o = run.out
    seed = str(args.seed if args.seed is not None else 0)
    d = {s: o / s for s in SMOKE_STAGES}
    chain = [
        ["synth-data", "--out", d["synth-data"], "--seed", seed, "--docs-per-language", str(args.docs_per_language)],
        ["filter-corpus", "--input", d["synth-data"] / "raw.jsonl", "--out", d["filter-corpus"]],
        ["build-vocab", "--corpus", d["filter-corpus"] / "corpus.jsonl", "--size", "256", "--out", d["build-vocab"]],
        ["pretrain-teacher", "--corpus", d["filter-corpus"] / "corpus.jsonl", "--vocab", d["build-vocab"] / "vocab.txt",
         "--out", d["pretrain-teacher"], "--seed", seed,
         "--set", f"total_steps={args.teacher_steps}", "--set", "warmup_steps=20", "--set", "peak_lr=2e-3"],
        ["pretrain", "--corpus", d["filter-corpus"] / "corpus.jsonl", "--vocab", d["build-vocab"] / "vocab.txt",
         "--teacher", d["pretrain-teacher"], "--out", d["pretrain"], "--seed", seed,
         "--set", f"total_steps={args.student_steps}", "--set", "warmup_steps=50", "--set", "peak_lr=2e-3",
         "--set", "lambda_mlm=0.5", "--set", "lambda_adv=0.1", "--set", "lambda_kd=0.4"],
        ["finetune", "--checkpoint", d["pretrain"] / "final.ckpt", "--vocab", d["build-vocab"] / "vocab.txt",
         "--task", d["synth-data"] / "tasks" / "ner.task.json", "--out", d["finetune"], "--seed", seed],
        ["compare", "--checkpoint", f"student={d['pretrain'] / 'final.ckpt'}",
         "--vocab", d["build-vocab"] / "vocab.txt", "--task", d["synth-data"] / "tasks" / "ner.task.json",
         "--modes", "each,all", "--report", d["compare"], "--seed", seed],
        ["report", "--results", d["compare"] / "results.json", "--out", d["report"]],
    ]
    run.config = {"teacher_steps": args.teacher_steps, "student_steps": args.student_steps,
                  "docs_per_language": args.docs_per_language}
    for argv in chain:
        argv = [str(a) for a in argv]
        t0 = time.perf_counter()
        code = main(argv)
        if code != 0:
            raise StageError(argv[0], f"stage failed with exit code {code}")
        print(f"[smoke] {argv[0]} done in {time.perf_counter() - t0:.1f}s")
        run.output(o / argv[0])


# parser --------------------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config: bool = False, seed: bool = True, out: bool = True) -> None:
    if out:
        p.add_argument("--out", required=True, help="output directory (nothing is written elsewhere)")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="random seed")
    if config:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multiling", description="Compact multilingual encoder pre-training and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write the synthetic bilingual corpus and task suite")
    _common(p)
    p.add_argument("--docs-per-language", type=int, default=300)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("filter-corpus", help="clean and filter a JSONL corpus")
    _common(p, seed=False)
    p.add_argument("--in", "--input", dest="input", required=True, help="JSONL documents with id, lang and text")
    p.add_argument("--report", default="filter_report.json", help="report file name, relative to --out")
    p.add_argument("--tokenizer", default="whitespace", help="vocab file for the length rule, or 'whitespace'")
    p.set_defaults(func=cmd_filter_corpus)

    p = sub.add_parser("build-vocab", help="learn a subword vocabulary")
    _common(p, seed=False)
    p.add_argument("--in", "--corpus", dest="corpus", required=True, help="filtered JSONL corpus")
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain-teacher", help="MLM pre-training of the teacher encoder")
    _common(p, config=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.set_defaults(func=cmd_pretrain_teacher)

    p = sub.add_parser("pretrain", help="student pre-training with MLM, adversarial and distillation losses")
    _common(p, config=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--teacher", help="teacher.ckpt or the directory holding it")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on one task")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", required=True, help="task JSON file")
    p.add_argument("--languages", help="comma-separated languages (default: all)")
    p.add_argument("--cross-lingual", action="store_true", help="also train on the cross-lingual split")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a fine-tuned checkpoint")
    _common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--languages")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="run the each/all/mono protocol")
    p.add_argument("--report", "--out", dest="out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", action="append", required=True, metavar="[NAME=]PATH")
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", action="append", required=True)
    p.add_argument("--modes", default="each,all")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="relative-improvement CSV, SVG chart and group t-test")
    _common(p, seed=False)
    p.add_argument("--results", help="results.json written by compare")
    p.add_argument("--group", action="append", metavar="MODEL=GROUP", help="assign a model to a test group")
    p.add_argument("--published", action="store_true", help="report on the published each/all averages")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("smoke", help="run the full pipeline end to end on synthetic data")
    _common(p)
    p.add_argument("--teacher-steps", type=int, default=200)
    p.add_argument("--student-steps", type=int, default=500)
    p.add_argument("--docs-per-language", type=int, default=300)
    p.set_defaults(func=cmd_smoke)
    return parser


def _missing_config(argv: Sequence[str]) -> str | None:
    """A ``--config`` path that does not exist, checked before argument validation."""
    if "-h" in argv or "--help" in argv:
        return None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
        else:
            continue
        if not Path(path).is_file():
            return path
    return None


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    missing = _missing_config(argv)
    if missing is not None:
        stage = argv[0] if argv and not argv[0].startswith("-") else "config"
        print(f"error: {stage}: config file not found: {missing}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("multiling: error: a subcommand is required", file=sys.stderr)
        return 1
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    run = Run(args.command, out, [args.command, *argv[argv.index(args.command) + 1:]], getattr(args, "seed", None))
    try:
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, run)
    except UsageError as exc:
        print(f"multiling {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        stage = exc.stage if isinstance(exc, StageError) else args.command
        msg = str(exc) if isinstance(exc, StageError) else f"{stage}: {exc}"
        print(f"error: {msg}", file=sys.stderr)
        log.debug("failure", exc_info=True)
        try:
            run.write_manifest("failed")
        except OSError:
            pass
        return 2
    run.write_manifest("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
