"""Training-sample ingestion and loss-anchor location.

Samples arrive as JSONL records {"qid", "step_index", "mode", "input",
"loss_anchor", "label"}; the anchor is a trailing substring of the input
whose final character marks the single position where the loss applies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import AnchorNotFound, DataEmpty


@dataclass(frozen=True)
class Sample:
    qid: str
    step_index: int
    mode: str
    input_text: str
    loss_anchor: str
    label: int


@dataclass(frozen=True)
class EncodedSample:
    input_ids: tuple[int, ...]
    anchor_start: int  # token index where the anchor span begins
    label: int

    @property
    def loss_position(self) -> int:
        # the anchor ends the input, so the loss sits on the final token
        return len(self.input_ids) - 1


def load_samples(path) -> list[Sample]:
    samples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            sample = Sample(
                qid=record["qid"],
                step_index=record["step_index"],
                mode=record["mode"],
                input_text=record["input"],
                loss_anchor=record["loss_anchor"],
                label=int(record["label"]),
            )
            if sample.label not in (0, 1):
                raise ValueError(f"line {line_no}: label must be 0 or 1")
            if not sample.input_text.endswith(sample.loss_anchor):
                raise ValueError(f"line {line_no}: input does not end with loss_anchor")
            samples.append(sample)
    if not samples:
        raise DataEmpty(f"no training samples in {path}")
    return samples


def locate_anchor(tokenizer, input_ids, anchor: str) -> int:
    """Longest suffix of ``input_ids`` decoding exactly to ``anchor``.

    Walking backward from the final token, the decoded suffix only grows;
    the first (and only) hit is the anchor span. A tokenizer that merges
    text across the anchor boundary leaves no aligned span, which is an
    error rather than an approximation.
    """
    for start in range(len(input_ids) - 1, -1, -1):
        suffix = tokenizer.decode(input_ids[start:])
        if suffix == anchor:
            return start
        if len(suffix) > len(anchor):
            break
    raise AnchorNotFound(
        f"anchor {anchor[:40]!r}... is not token-aligned in the encoded input"
    )


def encode_sample(tokenizer, sample: Sample) -> EncodedSample:
    input_ids = tuple(tokenizer.encode(sample.input_text))
    anchor_start = locate_anchor(tokenizer, input_ids, sample.loss_anchor)
    return EncodedSample(input_ids=input_ids, anchor_start=anchor_start, label=sample.label)
