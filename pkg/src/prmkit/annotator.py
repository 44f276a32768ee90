"""Step-coherence annotation through an external judge.

Each (context, step) pair is graded Good / Okay / Bad against a fixed
rubric; a CoT is graded sequentially and grading stops at the first Bad
step, after which every remaining step inherits label 0. The module also
computes first-error comparison statistics against pre-existing labels.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .corpus import CoT, Corpus, Question
from .errors import (
    InconsistentStatus,
    JudgeUnavailable,
    LabelShapeMismatch,
    SchemaError,
    UnparseableVerdict,
)

log = logging.getLogger(__name__)


class Grade(str, Enum):
    GOOD = "Good"
    OKAY = "Okay"
    BAD = "Bad"


class BadSubtype(str, Enum):
    INCORRECT = "Incorrect"
    MISINTERPRETATION = "Misinterpretation"
    LOGICAL_FALLACY = "LogicalFallacy"
    MISDIRECTION = "Misdirection"


class Category(str, Enum):
    SAME = "Same"
    EARLIER_WRONG = "EarlierWrong"
    LATER_WRONG = "LaterWrong"


GRADING_RUBRIC = """\
GOOD: The step is correct, verifiable, contextually appropriate, and contributes insightfully to the solution path.
OKAY: The step is correct and verifiable but is either redundant or makes only minimal progress toward the solution.
BAD: The step exhibits one or more of the following flaws:
  - INCORRECT: The step contains a factual or calculation error.
  - MISINTERPRETATION: The step is based on a misunderstanding of the problem's premise or the goal.
  - LOGICAL_FALLACY: The step contains a structural flaw in its reasoning, such as a non-sequitur or contradiction.
  - MISDIRECTION: The step introduces information or a line of reasoning that is irrelevant to the solution path."""

_VERDICT_RE = re.compile(
    r"GRADE:\s*(GOOD|OKAY|BAD)(?:\s*:\s*(INCORRECT|MISINTERPRETATION|LOGICAL[_ ]?FALLACY|MISDIRECTION))?",
    re.IGNORECASE,
)

_SUBTYPES = {
    "INCORRECT": BadSubtype.INCORRECT,
    "MISINTERPRETATION": BadSubtype.MISINTERPRETATION,
    "LOGICALFALLACY": BadSubtype.LOGICAL_FALLACY,
    "LOGICAL_FALLACY": BadSubtype.LOGICAL_FALLACY,
    "LOGICAL FALLACY": BadSubtype.LOGICAL_FALLACY,
    "MISDIRECTION": BadSubtype.MISDIRECTION,
}


@dataclass(frozen=True)
class StepGrade:
    grade: Grade
    bad_subtype: Optional[BadSubtype] = None
    judge_rationale: str = ""

    def __post_init__(self):
        if (self.grade is Grade.BAD) != (self.bad_subtype is not None):
            raise ValueError("bad_subtype must be present iff the grade is Bad")


@dataclass(frozen=True)
class CoherenceAnnotation:
    grades: tuple[StepGrade, ...]
    labels: tuple[int, ...]
    first_bad: Optional[int]  # 1-based

    def __post_init__(self):
        k = len(self.labels)
        if self.first_bad is None:
            expected = (1,) * k
        else:
            if not 1 <= self.first_bad <= k:
                raise ValueError("first_bad out of range")
            expected = (1,) * (self.first_bad - 1) + (0,) * (k - self.first_bad + 1)
        if self.labels != expected:
            raise ValueError("labels must be all-1 before first_bad and all-0 from it")
        if len(self.grades) > k:
            raise ValueError("more grades than steps")


@dataclass(frozen=True)
class ComparisonOutcome:
    cot_id: str
    origin_first: Optional[int]  # None = no error found (END)
    new_first: Optional[int]
    category: Category

    def __post_init__(self):
        if self.category is not _categorize(self.origin_first, self.new_first):
            raise ValueError("category contradicts the first-error positions")

    @classmethod
    def from_positions(cls, cot_id, origin_first, new_first):
        return cls(cot_id, origin_first, new_first, _categorize(origin_first, new_first))


@dataclass(frozen=True)
class GroupCounts:
    total: int
    same: int
    earlier_wrong: int
    later_wrong: int

    def __post_init__(self):
        if self.same + self.earlier_wrong + self.later_wrong != self.total:
            raise ValueError("group counts must sum to total")

    @property
    def modification_rate(self) -> float:
        return self.earlier_wrong / self.total if self.total else 0.0


@dataclass(frozen=True)
class ComparisonTable:
    origin_correct: GroupCounts
    origin_incorrect: GroupCounts
    total: GroupCounts

    def render(self) -> str:
        """Plain-text table with modification rates to two decimals."""
        lines = ["group,total,same,earlier_wrong,later_wrong,modification_rate"]
        for name, group in (
            ("Correct", self.origin_correct),
            ("Incorrect", self.origin_incorrect),
            ("Total", self.total),
        ):
            lines.append(
                f"{name},{group.total},{group.same},{group.earlier_wrong},"
                f"{group.later_wrong},{group.modification_rate * 100:.2f}%"
            )
        return "\n".join(lines)


def _extended(position: Optional[int]) -> float:
    # END (no error found) compares greater than any step index.
    return math.inf if position is None else position


def _categorize(origin_first: Optional[int], new_first: Optional[int]) -> Category:
    origin, new = _extended(origin_first), _extended(new_first)
    if new == origin:
        return Category.SAME
    return Category.EARLIER_WRONG if new < origin else Category.LATER_WRONG


class JudgeClient:
    """Minimal chat-completions client with retries and an audit trail.

    Transient transport failures and 429/5xx replies are retried up to
    ``max_retries`` times with jittered exponential backoff starting at
    ``backoff_start`` seconds. Every request/reply (or error) is appended
    to the audit JSONL when ``audit_path`` is set.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 5,
        backoff_start: float = 1.0,
        audit_path=None,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_start = backoff_start
        self.audit_path = Path(audit_path) if audit_path else None
        self.session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._audit_lock = threading.Lock()

    def _audit(self, entry: dict) -> None:
        if self.audit_path is None:
            return
        with self._audit_lock:
            with self.audit_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def chat(self, messages: list[dict]) -> str:
        body = {"model": self.model, "messages": messages, "temperature": 0}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff_start * (2 ** (attempt - 1))
                self._sleep(delay * self._rng.uniform(0.5, 1.5))
            try:
                response = self.session.post(
                    url, json=body, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                self._audit({"request": body, "error": str(exc)})
                log.warning("judge request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = RuntimeError(f"judge returned HTTP {response.status_code}")
                self._audit({"request": body, "error": f"HTTP {response.status_code}"})
                log.warning(
                    "judge returned %d (attempt %d)", response.status_code, attempt + 1
                )
                continue
            try:
                payload = response.json()
                content = payload["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError) as exc:
                raise JudgeUnavailable(f"malformed judge reply: {exc}") from exc
            self._audit({"request": body, "response": payload})
            return content
        raise JudgeUnavailable(
            f"judge unreachable after {self.max_retries + 1} attempts: {last_error}"
        )


def _parse_verdict(reply: str) -> Optional[StepGrade]:
    matches = list(_VERDICT_RE.finditer(reply))
    if not matches:
        return None
    grade_word, subtype_word = matches[-1].groups()
    grade = Grade[grade_word.upper()]
    if grade is Grade.BAD:
        subtype = _SUBTYPES.get((subtype_word or "").upper().replace(" ", "_"))
        if subtype is None:
            return None
        return StepGrade(grade=grade, bad_subtype=subtype, judge_rationale=reply.strip())
    return StepGrade(grade=grade, judge_rationale=reply.strip())


def _grading_messages(q: Question, context: str, step: str) -> list[dict]:
    options = "\n".join(f"{letter}. {text}" for letter, text in q.options)
    user = (
        "Grade the CURRENT STEP of a step-by-step solution. Judge whether it is a "
        "correct and coherent continuation of the CONTEXT, using these criteria:\n\n"
        f"{GRADING_RUBRIC}\n\n"
        f"QUESTION:\n{q.text}\n\nOPTIONS:\n{options}\n\n"
        f"CONTEXT:\n{context}\n\nCURRENT STEP:\n{step}\n\n"
        "Explain briefly, then end your reply with exactly one final line of the form\n"
        "GRADE: GOOD\nor\nGRADE: OKAY\nor\nGRADE: BAD:<INCORRECT|MISINTERPRETATION|"
        "LOGICAL_FALLACY|MISDIRECTION>"
    )
    return [
        {"role": "system", "content": "You are a rigorous grader of reasoning steps."},
        {"role": "user", "content": user},
    ]


def grade_context_pair(judge, q: Question, context: str, step: str) -> StepGrade:
    """Grade one (context, step) pair, reprompting once on a bad verdict."""
    if not step.strip():
        raise ValueError("step must be non-empty")
    messages = _grading_messages(q, context, step)
    reply = judge.chat(messages)
    grade = _parse_verdict(reply)
    if grade is not None:
        return grade
    log.info("unparseable verdict, reprompting once")
    messages = messages + [
        {"role": "assistant", "content": reply},
        {
            "role": "user",
            "content": (
                "Your reply did not contain a recognizable verdict. Answer again, "
                "ending with one line: GRADE: GOOD, GRADE: OKAY, or GRADE: "
                "BAD:<INCORRECT|MISINTERPRETATION|LOGICAL_FALLACY|MISDIRECTION>."
            ),
        },
    ]
    reply = judge.chat(messages)
    grade = _parse_verdict(reply)
    if grade is None:
        raise UnparseableVerdict(f"no recognizable grade in judge reply: {reply[:200]!r}")
    return grade


def annotate_cot(judge, q: Question, cot: CoT) -> CoherenceAnnotation:
    """Grade a CoT's steps in order, stopping the judge at the first Bad.

    The context of step 1 is the question text; for later steps it is the
    previous step's text. Good and Okay both label the transition 1; the
    first Bad step and everything after it get 0 without further judge
    calls.
    """
    k = len(cot.steps)
    grades: list[StepGrade] = []
    first_bad: Optional[int] = None
    for i, step in enumerate(cot.steps, start=1):
        context = q.text if i == 1 else cot.steps[i - 2].text
        try:
            grade = grade_context_pair(judge, q, context, step.text)
        except (JudgeUnavailable, UnparseableVerdict) as exc:
            raise type(exc)(f"step {i}: {exc}") from exc
        grades.append(grade)
        if grade.grade is Grade.BAD:
            first_bad = i
            break
    if first_bad is None:
        labels = (1,) * k
    else:
        labels = (1,) * (first_bad - 1) + (0,) * (k - first_bad + 1)
    return CoherenceAnnotation(grades=tuple(grades), labels=labels, first_bad=first_bad)


def annotate_corpus(
    judge, corpus: Corpus, in_flight: int = 1
) -> list[tuple[str, int, CoherenceAnnotation]]:
    """Annotate every CoT, at most ``in_flight`` CoTs concurrently.

    Steps within one CoT stay strictly sequential (stop-at-first-Bad is
    order-dependent); results are merged back in (question, cot_index)
    order regardless of completion order.
    """
    tasks = [
        (q, idx, cot)
        for q in corpus.questions
        for idx, cot in enumerate(corpus.cots[q.id])
    ]
    if in_flight <= 1:
        return [(q.id, idx, annotate_cot(judge, q, cot)) for q, idx, cot in tasks]
    with ThreadPoolExecutor(max_workers=in_flight) as pool:
        futures = [pool.submit(annotate_cot, judge, q, cot) for q, idx, cot in tasks]
        return [
            (q.id, idx, future.result())
            for (q, idx, _), future in zip(tasks, futures)
        ]


def write_annotations(results, path) -> int:
    """Persist annotation results as JSONL; returns the record count."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for qid, cot_index, ann in results:
            record = {
                "qid": qid,
                "cot_index": cot_index,
                "grades": [
                    {
                        "grade": g.grade.value,
                        "bad_subtype": g.bad_subtype.value if g.bad_subtype else None,
                        "rationale": g.judge_rationale,
                    }
                    for g in ann.grades
                ],
                "labels": list(ann.labels),
                "first_bad": ann.first_bad,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return len(results)


def read_annotations(path) -> dict[tuple[str, int], CoherenceAnnotation]:
    """Load annotation JSONL back into CoherenceAnnotation objects."""
    out: dict[tuple[str, int], CoherenceAnnotation] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                grades = tuple(
                    StepGrade(
                        grade=Grade(g["grade"]),
                        bad_subtype=BadSubtype(g["bad_subtype"]) if g["bad_subtype"] else None,
                        judge_rationale=g.get("rationale", ""),
                    )
                    for g in record["grades"]
                )
                ann = CoherenceAnnotation(
                    grades=grades,
                    labels=tuple(record["labels"]),
                    first_bad=record["first_bad"],
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SchemaError(f"bad annotation record: {exc}", record=line_no) from None
            out[(record["qid"], record["cot_index"])] = ann
    return out


def compare_first_error(
    original: Optional[Sequence[int]], annotation: CoherenceAnnotation, k: int, cot_id: str = ""
) -> ComparisonOutcome:
    """Compare the first-error position of old labels against a new annotation."""
    if original is None:
        origin_first = None
    else:
        if len(original) != k:
            raise LabelShapeMismatch(f"got {len(original)} original labels for k={k}")
        origin_first = next((i for i, l in enumerate(original, start=1) if l == 0), None)
    return ComparisonOutcome.from_positions(cot_id, origin_first, annotation.first_bad)


def comparison_table(
    outcomes: Sequence[ComparisonOutcome], origin_status: Sequence[str]
) -> ComparisonTable:
    """Tally outcomes per origin-status group.

    ``origin_status`` runs parallel to ``outcomes`` with values "Correct"
    or "Incorrect" and must agree with each outcome's origin position
    (Correct iff no original error).
    """
    if len(outcomes) != len(origin_status):
        raise LabelShapeMismatch("origin_status must align with outcomes")
    counts = {
        "Correct": {c: 0 for c in Category},
        "Incorrect": {c: 0 for c in Category},
    }
    for outcome, status in zip(outcomes, origin_status):
        if status not in counts:
            raise InconsistentStatus(f"unknown origin status {status!r}")
        if (status == "Correct") != (outcome.origin_first is None):
            raise InconsistentStatus(
                f"cot {outcome.cot_id!r}: status {status} contradicts origin_first="
                f"{outcome.origin_first}"
            )
        counts[status][outcome.category] += 1

    def group(statuses):
        merged = {c: sum(counts[s][c] for s in statuses) for c in Category}
        return GroupCounts(
            total=sum(merged.values()),
            same=merged[Category.SAME],
            earlier_wrong=merged[Category.EARLIER_WRONG],
            later_wrong=merged[Category.LATER_WRONG],
        )

    return ComparisonTable(
        origin_correct=group(["Correct"]),
        origin_incorrect=group(["Incorrect"]),
        total=group(["Correct", "Incorrect"]),
    )
