"""Build trainer-ready samples in both regimes and emit them to JSONL.

Two sample builders share the TrainingSample shape:

  * conventional: sample i's input is the question followed by steps 1..i
    (cumulative prefixes), loss anchored at step i.
  * contextual: sample i's input is the question followed by a rendered
    (context, step) pair, where the context is the previous step's text
    (the question itself for i = 1). Note the i = 1 case therefore carries
    the question twice, once as prefix and once in the context slot; that
    duplication is deliberate, not a bug.

Rendered pairs frame the two segments with "<|ctx|>" / "<|step|>" markers.
Literal marker strings inside payload text are escaped by doubling, so
stripping a rendered pair recovers both segments byte-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .corpus import CoT, Question
from .errors import EmptyStep, LabelShapeMismatch, SchemaError

CTX_MARKER = "<|ctx|>"
STEP_MARKER = "<|step|>"

# Separator realizing the concatenation in both input layouts: a single
# newline between question, context block, and steps.
SEPARATOR = "\n"


class SampleMode(str, Enum):
    CONVENTIONAL = "conventional"
    CONTEXTUAL = "contextual"


class MarkerError(SchemaError):
    """A rendered pair does not contain exactly one of each marker."""


@dataclass(frozen=True)
class ContextualizedStep:
    context_text: str
    step_text: str
    rendered: str


@dataclass(frozen=True)
class TrainingSample:
    qid: str
    step_index: int  # 1-based
    mode: SampleMode
    input_text: str
    loss_anchor: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.input_text.endswith(self.loss_anchor):
            raise ValueError("input_text must end with loss_anchor")


def _escape(text: str) -> str:
    return text.replace(CTX_MARKER, CTX_MARKER * 2).replace(STEP_MARKER, STEP_MARKER * 2)


def _unescape(text: str) -> str:
    return text.replace(CTX_MARKER * 2, CTX_MARKER).replace(STEP_MARKER * 2, STEP_MARKER)


def _unescaped_positions(text: str, marker: str) -> list[int]:
    """Positions of markers left unpaired by the doubling escape.

    Escaped occurrences always come in adjacent pairs, so within each
    maximal run of repeated markers only an odd trailing one is real.
    """
    positions = []
    width = len(marker)
    i = text.find(marker)
    while i >= 0:
        run = 1
        while text.startswith(marker, i + run * width):
            run += 1
        if run % 2 == 1:
            positions.append(i + (run - 1) * width)
        i = text.find(marker, i + run * width)
    return positions


def format_pair(context: str, step: str) -> ContextualizedStep:
    """Render a (context, step) pair with explicit segment markers."""
    if not step:
        raise EmptyStep("cannot format an empty step")
    rendered = (
        CTX_MARKER + "\n" + _escape(context) + "\n" + STEP_MARKER + "\n" + _escape(step)
    )
    return ContextualizedStep(context_text=context, step_text=step, rendered=rendered)


def strip_pair(rendered: str) -> tuple[str, str]:
    """Invert format_pair, recovering (context, step) byte-exactly."""
    ctx_positions = _unescaped_positions(rendered, CTX_MARKER)
    step_positions = _unescaped_positions(rendered, STEP_MARKER)
    if ctx_positions != [0] or len(step_positions) != 1:
        raise MarkerError(
            "rendered pair must contain exactly one context marker at the start "
            "and one step marker"
        )
    sep = step_positions[0]
    ctx_start = len(CTX_MARKER) + 1
    step_start = sep + len(STEP_MARKER) + 1
    if (
        sep < ctx_start
        or rendered[len(CTX_MARKER)] != "\n"
        or rendered[sep - 1] != "\n"
        or rendered[sep + len(STEP_MARKER) : step_start] != "\n"
    ):
        raise MarkerError("rendered pair is missing its newline framing")
    context = _unescape(rendered[ctx_start : sep - 1])
    step = _unescape(rendered[step_start:])
    return context, step


def _check_labels(cot: CoT, labels: Sequence[int], first_error: bool) -> None:
    if len(labels) != len(cot.steps):
        raise LabelShapeMismatch(
            f"got {len(labels)} labels for a {len(cot.steps)}-step CoT"
        )
    if any(label not in (0, 1) for label in labels):
        raise ValueError("labels must be 0 or 1")
    if first_error:
        seen_zero = False
        for label in labels:
            if seen_zero and label == 1:
                raise ValueError("labels must stay 0 after the first 0")
            seen_zero = seen_zero or label == 0


def build_context_samples(
    q: Question, cot: CoT, labels: Sequence[int]
) -> list[TrainingSample]:
    """One independent sample per step, each seeing only its own context.

    Sample i's context slot holds step i-1's text byte-exactly (the
    question text for i = 1), and the loss anchors on the step segment as
    rendered.
    """
    _check_labels(cot, labels, first_error=True)
    samples = []
    for i, step in enumerate(cot.steps, start=1):
        context = q.text if i == 1 else cot.steps[i - 2].text
        pair = format_pair(context, step.text)
        samples.append(
            TrainingSample(
                qid=q.id,
                step_index=i,
                mode=SampleMode.CONTEXTUAL,
                input_text=q.text + SEPARATOR + pair.rendered,
                loss_anchor=_escape(step.text),
                label=labels[i - 1],
            )
        )
    return samples


def build_conventional_samples(
    q: Question, cot: CoT, labels: Sequence[int]
) -> list[TrainingSample]:
    """Cumulative-prefix samples: sample i sees the question and steps 1..i."""
    _check_labels(cot, labels, first_error=False)
    samples = []
    prefix = q.text
    for i, step in enumerate(cot.steps, start=1):
        prefix = prefix + SEPARATOR + step.text
        samples.append(
            TrainingSample(
                qid=q.id,
                step_index=i,
                mode=SampleMode.CONVENTIONAL,
                input_text=prefix,
                loss_anchor=step.text,
                label=labels[i - 1],
            )
        )
    return samples


def emit_training_file(samples: Sequence[TrainingSample], path) -> int:
    """Write samples as JSONL in input order; returns the count written."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(
                json.dumps(
                    {
                        "qid": sample.qid,
                        "step_index": sample.step_index,
                        "mode": sample.mode.value,
                        "input": sample.input_text,
                        "loss_anchor": sample.loss_anchor,
                        "label": sample.label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return len(samples)


def load_training_file(path) -> list[TrainingSample]:
    """Read back a training-sample JSONL file."""
    samples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                samples.append(
                    TrainingSample(
                        qid=record["qid"],
                        step_index=record["step_index"],
                        mode=SampleMode(record["mode"]),
                        input_text=record["input"],
                        loss_anchor=record["loss_anchor"],
                        label=record["label"],
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SchemaError(f"bad training sample: {exc}", record=line_no) from None
    return samples
