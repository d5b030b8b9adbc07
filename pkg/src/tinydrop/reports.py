"""On-disk report formats.

``samples.jsonl``
    One JSON object per line, in dataset order, keys in this order:
    ``index, label, prediction, correct, exited_early, confidence, drop_ratio,
    kept_tokens, keep_indices, flops``. ``label``/``correct`` are omitted for
    unlabelled data; ``keep_indices`` is null for early exits. ``flops`` holds
    ``guidance_forward, gradcam_backward, target_forward, total,
    token_count_used`` (integers, 1 multiply-add = 2 FLOPs).

``summary.csv`` / sweep CSV
    Header ``tau,gamma,r_max,accuracy,mean_gflops,exit_rate,mean_keep_ratio``,
    one row per policy setting; ``accuracy`` is empty for unlabelled data.

Floats are written with ``repr`` so files are byte-stable across runs.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

from .pipeline import EvalSummary, SampleResult
from .weights_io import atomic_write_bytes

SUMMARY_COLUMNS = ["tau", "gamma", "r_max", "accuracy", "mean_gflops", "exit_rate", "mean_keep_ratio"]

_FLOPS_SCHEMA = {
    "type": "object",
    "properties": {
        k: {"type": "integer", "minimum": 0}
        for k in ("guidance_forward", "gradcam_backward", "target_forward", "total", "token_count_used")
    },
    "required": ["guidance_forward", "gradcam_backward", "target_forward", "total", "token_count_used"],
    "additionalProperties": False,
}

SAMPLE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "index": {"type": "integer", "minimum": 0},
        "label": {"type": "integer", "minimum": 0},
        "prediction": {"type": "integer", "minimum": 0},
        "correct": {"type": "boolean"},
        "exited_early": {"type": "boolean"},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "drop_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "kept_tokens": {"type": "integer", "minimum": 1},
        "keep_indices": {
            "oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}]
        },
        "flops": _FLOPS_SCHEMA,
    },
    "required": ["index", "prediction", "exited_early", "confidence", "drop_ratio", "kept_tokens",
                 "keep_indices", "flops"],
    "dependentRequired": {"label": ["correct"], "correct": ["label"]},
    "additionalProperties": False,
}


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def samples_jsonl(records: Iterable[SampleResult]) -> str:
    return "".join(json.dumps(r.to_json_dict(), separators=(",", ":")) + "\n" for r in records)


def summary_csv(summaries: Sequence[EvalSummary]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for s in summaries:
        lines.append(",".join([
            _fmt(s.tau), _fmt(s.gamma), _fmt(s.r_max), _fmt(s.accuracy),
            _fmt(s.mean_gflops), _fmt(s.exit_rate), _fmt(s.mean_keep_ratio),
        ]))
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
