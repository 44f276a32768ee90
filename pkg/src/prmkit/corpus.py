"""Multiple-choice corpus ingestion, answer extraction, and domain splits.

The corpus file is UTF-8 JSON Lines, one record per question:

    {"id": str, "domain": str, "question": str,
     "options": [{"letter": "A", "text": str}, ...], "gold": "E",
     "cots": [{"steps": [str, ...], "original_labels": [0|1, ...]?}]}

Steps arrive pre-segmented by whatever produced the file; this module never
re-splits step text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import SchemaError, UnknownDomain

OPTION_LETTERS = "ABCDEFGHIJ"

MATH_ADJACENT_DOMAINS = frozenset(
    {"chemistry", "computer science", "engineering", "physics"}
)
NON_MATH_ADJACENT_DOMAINS = frozenset(
    {
        "biology",
        "health",
        "psychology",
        "business",
        "economics",
        "law",
        "history",
        "philosophy",
        "other",
    }
)
KNOWN_DOMAINS = frozenset({"math"}) | MATH_ADJACENT_DOMAINS | NON_MATH_ADJACENT_DOMAINS

# Canonical ordering used wherever domains appear as report columns.
DOMAIN_ORDER = (
    "math",
    "chemistry",
    "computer science",
    "engineering",
    "physics",
    "biology",
    "health",
    "psychology",
    "business",
    "economics",
    "law",
    "history",
    "philosophy",
    "other",
)

_ANSWER_RE = re.compile(r"The answer is \(([A-J])\)\.?")


@dataclass(frozen=True)
class Question:
    id: str
    domain: str
    text: str
    options: tuple[tuple[str, str], ...]  # (letter, option text), ordered
    gold: str

    def __post_init__(self):
        if not self.id:
            raise SchemaError("question id must be non-empty", field="id")
        letters = [letter for letter, _ in self.options]
        if len(set(letters)) != len(letters):
            raise SchemaError("option letters must be unique", field="options")
        positions = [OPTION_LETTERS.find(letter) for letter in letters]
        if any(p < 0 for p in positions) or positions != sorted(positions):
            raise SchemaError(
                "option letters must be drawn from A-J in increasing order",
                field="options",
            )
        if self.gold not in letters:
            raise SchemaError("gold answer is not an option letter", field="gold")


@dataclass(frozen=True)
class Step:
    index: int  # 1-based
    text: str

    def __post_init__(self):
        if self.index < 1:
            raise SchemaError("step index must be >= 1", field="steps")
        if not self.text.strip():
            raise SchemaError("step text must be non-empty", field="steps")


@dataclass(frozen=True)
class CoT:
    steps: tuple[Step, ...]
    extracted_answer: Optional[str] = None
    original_labels: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not self.steps:
            raise SchemaError("a CoT needs at least one step", field="steps")
        if self.original_labels is not None:
            if len(self.original_labels) != len(self.steps):
                raise SchemaError(
                    "original_labels length must equal the step count",
                    field="original_labels",
                )
            if any(label not in (0, 1) for label in self.original_labels):
                raise SchemaError(
                    "original_labels must be 0 or 1", field="original_labels"
                )
            seen_zero = False
            for label in self.original_labels:
                if seen_zero and label == 1:
                    raise SchemaError(
                        "original_labels must stay 0 after the first 0",
                        field="original_labels",
                    )
                seen_zero = seen_zero or label == 0

    def __len__(self):
        return len(self.steps)


@dataclass
class Corpus:
    questions: tuple[Question, ...]
    cots: Mapping[str, tuple[CoT, ...]]
    source_meta: dict = field(default_factory=dict)

    def question(self, qid: str) -> Question:
        for q in self.questions:
            if q.id == qid:
                return q
        raise KeyError(qid)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.questions == other.questions
            and dict(self.cots) == dict(other.cots)
            and self.source_meta == other.source_meta
        )


@dataclass(frozen=True)
class DomainSplit:
    math_adjacent: frozenset[str]
    non_math_adjacent: frozenset[str]


def extract_answer(cot: CoT) -> Optional[str]:
    """Pull the chosen option letter out of a CoT's final steps.

    Scans from the last step backward for "The answer is (X)"; within a
    step the last match wins. Absence of a match is a value, not an error.
    """
    for step in reversed(cot.steps):
        matches = _ANSWER_RE.findall(step.text)
        if matches:
            return matches[-1]
    return None


def _parse_record(record: dict, record_no: int, qid_seen: set) -> tuple[Question, tuple[CoT, ...]]:
    for key in ("id", "domain", "question", "options", "gold", "cots"):
        if key not in record:
            raise SchemaError("missing field", record=record_no, field=key)
    qid = record["id"]
    if not isinstance(qid, str) or not qid:
        raise SchemaError("id must be a non-empty string", record=record_no, field="id")
    if qid in qid_seen:
        raise SchemaError(f"duplicate question id {qid!r}", record=record_no, field="id")

    raw_options = record["options"]
    if not isinstance(raw_options, list) or not raw_options:
        raise SchemaError("options must be a non-empty list", record=record_no, field="options")
    options = []
    for opt in raw_options:
        if not isinstance(opt, dict) or "letter" not in opt or "text" not in opt:
            raise SchemaError(
                "each option needs letter and text", record=record_no, field="options"
            )
        options.append((opt["letter"], opt["text"]))

    try:
        question = Question(
            id=qid,
            domain=record["domain"],
            text=record["question"],
            options=tuple(options),
            gold=record["gold"],
        )
    except SchemaError as exc:
        raise SchemaError(str(exc), record=record_no) from None

    raw_cots = record["cots"]
    if not isinstance(raw_cots, list):
        raise SchemaError("cots must be a list", record=record_no, field="cots")
    cots = []
    for raw in raw_cots:
        if not isinstance(raw, dict) or "steps" not in raw:
            raise SchemaError("each CoT needs a steps list", record=record_no, field="cots")
        raw_steps = raw["steps"]
        if not isinstance(raw_steps, list) or not all(isinstance(s, str) for s in raw_steps):
            raise SchemaError("steps must be a list of strings", record=record_no, field="steps")
        labels = raw.get("original_labels")
        try:
            steps = tuple(Step(index=i, text=s) for i, s in enumerate(raw_steps, start=1))
            cot = CoT(
                steps=steps,
                original_labels=tuple(labels) if labels is not None else None,
            )
        except SchemaError as exc:
            raise SchemaError(str(exc), record=record_no) from None
        cots.append(replace(cot, extracted_answer=extract_answer(cot)))
    return question, tuple(cots)


def load_corpus(path, fmt: str = "jsonl", uniform_cots: bool = True) -> Corpus:
    """Load a corpus file, rejecting (never skipping) malformed records.

    ``uniform_cots`` enforces the evaluation-set layout where every
    question carries the same number of candidate CoTs; pass False for
    training corpora where the count varies.
    """
    if fmt != "jsonl":
        raise ValueError(f"unsupported corpus format {fmt!r}")
    path = Path(path)
    questions: list[Question] = []
    cots: dict[str, tuple[CoT, ...]] = {}
    qid_seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for record_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", record=record_no) from None
            question, question_cots = _parse_record(record, record_no, qid_seen)
            qid_seen.add(question.id)
            questions.append(question)
            cots[question.id] = question_cots
            if uniform_cots and len(question_cots) != len(cots[questions[0].id]):
                raise SchemaError(
                    f"expected {len(cots[questions[0].id])} CoTs per question, "
                    f"got {len(question_cots)}",
                    record=record_no,
                    field="cots",
                )
    meta = {
        "format": "jsonl",
        "question_count": len(questions),
        "cots_per_question": len(cots[questions[0].id]) if uniform_cots and questions else None,
    }
    return Corpus(questions=tuple(questions), cots=cots, source_meta=meta)


def emit_corpus(corpus: Corpus, path) -> int:
    """Write a corpus back to the JSONL schema; returns records written."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for q in corpus.questions:
            record = {
                "id": q.id,
                "domain": q.domain,
                "question": q.text,
                "options": [{"letter": letter, "text": text} for letter, text in q.options],
                "gold": q.gold,
                "cots": [
                    {"steps": [s.text for s in cot.steps]}
                    if cot.original_labels is None
                    else {
                        "steps": [s.text for s in cot.steps],
                        "original_labels": list(cot.original_labels),
                    }
                    for cot in corpus.cots[q.id]
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return len(corpus.questions)


def split_domains(corpus: Corpus) -> DomainSplit:
    """Partition the corpus domains into math-adjacent and non-math-adjacent.

    "math" belongs to neither split; its presence is recorded separately in
    the corpus source_meta so downstream reports can treat it as its own
    scope. Unknown labels are errors, never silently binned.
    """
    present = {q.domain for q in corpus.questions}
    unknown = sorted(present - KNOWN_DOMAINS)
    if unknown:
        raise UnknownDomain(unknown[0])
    corpus.source_meta["math_domains"] = sorted(present & {"math"})
    return DomainSplit(
        math_adjacent=frozenset(present & MATH_ADJACENT_DOMAINS),
        non_math_adjacent=frozenset(present & NON_MATH_ADJACENT_DOMAINS),
    )


def scope_questions(corpus: Corpus, scope: str) -> tuple[Question, ...]:
    """Resolve a scope name to the questions it covers, in corpus order.

    Scopes: "all", "math", "math_adjacent", "non_math_adjacent", or a
    single domain label.
    """
    if scope == "all":
        selected = corpus.questions
    elif scope == "math_adjacent":
        selected = tuple(q for q in corpus.questions if q.domain in MATH_ADJACENT_DOMAINS)
    elif scope == "non_math_adjacent":
        selected = tuple(
            q for q in corpus.questions if q.domain in NON_MATH_ADJACENT_DOMAINS
        )
    elif scope in KNOWN_DOMAINS:
        selected = tuple(q for q in corpus.questions if q.domain == scope)
    else:
        raise UnknownDomain(scope)
    if not selected:
        raise ValueError(f"scope {scope!r} matches no questions in this corpus")
    return selected
