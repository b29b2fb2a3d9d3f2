"""Python access to the proagym core: metrics, trace lines, splits and
scripted evaluation runs."""

import json

from . import _core
from ._core import (
    ContractError,
    Error,
    ParseError,
    StageError,
    classify,
    f1_from_pr,
    format_event_line,
    pred_at_k_outcome,
    select_label_targets,
    split_indices,
)

__all__ = [
    "ContractError",
    "Error",
    "ParseError",
    "StageError",
    "classify",
    "cli",
    "compute_metrics",
    "evaluate",
    "f1_from_pr",
    "format_event_line",
    "parse_event_line",
    "pred_at_k_outcome",
    "select_label_targets",
    "split_indices",
]


def compute_metrics(tp, fp, tn, fn):
    return json.loads(_core.compute_metrics_json(tp, fp, tn, fn))


def parse_event_line(line):
    return json.loads(_core.parse_event_line(line))


def evaluate(test_set, fixture, k=1, with_feedback=False):
    """Run an evaluation against a scripted fixture; returns the manifest."""
    return json.loads(_core.evaluate_json(str(test_set), str(fixture), k, with_feedback))


def cli(*args):
    """Run the command line in-process; returns (exit_code, stdout, stderr)."""
    return _core.cli([str(a) for a in args])
