"""Downstream fine-tuning, task metrics, the each/all/mono protocol and significance testing."""
from .data import PairExample, SpanExample, TaskError, TaskSpec, TokenExample, read_examples
from .finetune import FinetunedModel, best_span, finetune
from .metrics import (
    AnnotationError,
    bio_to_spans,
    classification_f1,
    pearson,
    relative_improvement,
    span_partial_f1,
    token_f1,
)
from .protocol import (
    ComparisonEntry,
    ComparisonReport,
    EvalResult,
    build_report,
    compare,
    emit_report,
    read_report_csv,
    run_protocol,
)
from .stats import TTestResult, regularized_incomplete_beta, students_t_test

__all__ = [
    "AnnotationError",
    "ComparisonEntry",
    "ComparisonReport",
    "EvalResult",
    "FinetunedModel",
    "PairExample",
    "SpanExample",
    "TTestResult",
    "TaskError",
    "TaskSpec",
    "TokenExample",
    "best_span",
    "bio_to_spans",
    "build_report",
    "classification_f1",
    "compare",
    "emit_report",
    "finetune",
    "pearson",
    "read_examples",
    "read_report_csv",
    "regularized_incomplete_beta",
    "relative_improvement",
    "run_protocol",
    "span_partial_f1",
    "students_t_test",
    "token_f1",
]
