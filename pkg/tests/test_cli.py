import json
import os
import shutil
from pathlib import Path

import pytest

from multiling.cli import build_parser, main

FIXTURE = Path(__file__).parent / "data" / "filter_fixture.jsonl"
TINY = ["--set", "hidden=16", "--set", "n_layers=1", "--set", "n_heads=2", "--set", "total_steps=6",
        "--set", "warmup_steps=2", "--set", "log_every=2", "--set", "batch_size=8"]


def files_under(root: Path) -> set[Path]:
    return {p for p in root.rglob("*") if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth-data -> filter-corpus -> build-vocab -> pretrain-teacher, on a small corpus."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--out", str(root / "data"), "--docs-per-language", "40"]) == 0
    assert main(["filter-corpus", "--in", str(root / "data" / "raw.jsonl"), "--out", str(root / "filtered")]) == 0
    assert main(["build-vocab", "--in", str(root / "filtered" / "corpus.jsonl"), "--size", "128",
                 "--out", str(root / "vocab")]) == 0
    teacher = [*TINY, "--set", "hidden=24", "--set", "n_layers=2"]
    assert main(["pretrain-teacher", "--corpus", str(root / "filtered" / "corpus.jsonl"),
                 "--vocab", str(root / "vocab" / "vocab.txt"), "--out", str(root / "teacher"), *teacher]) == 0
    return root


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for sub in ("filter-corpus", "build-vocab", "pretrain-teacher", "pretrain", "finetune", "evaluate", "compare", "report"):
        assert sub in out


def test_every_subcommand_has_help(capsys):
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    for name in sub.choices:
        assert main([name, "--help"]) == 0
        assert "usage" in capsys.readouterr().out


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_missing_config_is_runtime_error(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["pretrain", "--config", "missing.cfg"]) == 2
    assert "missing.cfg" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_filter_corpus_outputs(tmp_path):
    out = tmp_path / "f"
    assert main(["filter-corpus", "--in", str(FIXTURE), "--out", str(out), "--report", "rep.json"]) == 0
    report = json.loads((out / "rep.json").read_text())
    assert report["kept"] == 3
    assert report["dropped_per_rule"] == {"url_isbn_only": 3, "digit_ratio": 3, "too_short": 3}
    assert len((out / "corpus.jsonl").read_text().splitlines()) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "filter-corpus" and manifest["status"] == "ok"
    assert str(FIXTURE) in manifest["inputs"]
    assert files_under(tmp_path) == {out / "rep.json", out / "corpus.jsonl", out / "manifest.json"}


def test_report_path_outside_out_is_rejected(tmp_path):
    outside = tmp_path / "elsewhere.json"
    assert main(["filter-corpus", "--in", str(FIXTURE), "--out", str(tmp_path / "f"), "--report", str(outside)]) == 2
    assert not outside.exists()


def test_pipeline_writes_manifests(pipeline):
    for stage in ("data", "filtered", "vocab", "teacher"):
        manifest = json.loads((pipeline / stage / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        for key in ("subcommand", "argv", "config", "inputs", "seed", "version", "started", "finished"):
            assert key in manifest
    assert (pipeline / "teacher" / "teacher.ckpt").is_file()
    assert (pipeline / "teacher" / "metrics.csv").is_file()


def test_pretrain_deterministic_and_contained(pipeline, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    before = files_under(pipeline)
    args = ["pretrain", "--corpus", str(pipeline / "filtered" / "corpus.jsonl"),
            "--vocab", str(pipeline / "vocab" / "vocab.txt"), "--teacher", str(pipeline / "teacher"), *TINY]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert files_under(pipeline) == before
    assert {p.name for p in tmp_path.iterdir()} == {"a", "b"}


def test_deleted_teacher_is_reported(pipeline, tmp_path, capsys):
    gone = tmp_path / "teacher"
    shutil.copytree(pipeline / "teacher", gone)
    os.remove(gone / "teacher.ckpt")
    code = main(["pretrain", "--corpus", str(pipeline / "filtered" / "corpus.jsonl"),
                 "--vocab", str(pipeline / "vocab" / "vocab.txt"), "--teacher", str(gone),
                 "--out", str(tmp_path / "s"), *TINY])
    assert code == 2
    err = capsys.readouterr().err
    assert "teacher checkpoint not found" in err and "pretrain" in err
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["status"] == "failed"


def test_kd_without_teacher_flag(pipeline, tmp_path, capsys):
    code = main(["pretrain", "--corpus", str(pipeline / "filtered" / "corpus.jsonl"),
                 "--vocab", str(pipeline / "vocab" / "vocab.txt"), "--out", str(tmp_path / "s"), *TINY])
    assert code == 2
    assert "--teacher" in capsys.readouterr().err


def test_set_rejects_unknown_key(pipeline, tmp_path, capsys):
    code = main(["pretrain-teacher", "--corpus", str(pipeline / "filtered" / "corpus.jsonl"),
                 "--vocab", str(pipeline / "vocab" / "vocab.txt"), "--out", str(tmp_path / "t"),
                 "--set", "no_such_key=1"])
    assert code == 2
    assert "no_such_key" in capsys.readouterr().err


def test_report_on_published_numbers(tmp_path):
    assert main(["report", "--published", "--out", str(tmp_path)]) == 0
    for name in ("report.csv", "report.svg", "report.json", "candidates.json", "manifest.json"):
        assert (tmp_path / name).is_file()
