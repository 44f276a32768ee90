"""Per-step reward production with pluggable backends and a resumable cache.

Backends expose ``tag``/``model`` identifiers plus ``score(question,
steps, cot_index) -> rewards``. The cache is append-only JSONL keyed by
(qid, cot_index, backend tag, model), so score sets from several PRMs can
coexist in one file and an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import requests

from .corpus import CoT, Corpus, Question
from .errors import (
    BackendUnavailable,
    CacheCorrupt,
    RewardRangeError,
    RewardShapeMismatch,
)

log = logging.getLogger(__name__)

_ANSWER_RE = re.compile(r"The answer is \(([A-J])\)\.?")


class ScorerBackend(Protocol):
    tag: str
    model: str

    def score(
        self, question: Question, steps: Sequence[str], cot_index: int
    ) -> Sequence[float]: ...


@dataclass(frozen=True)
class StepRewards:
    qid: str
    cot_index: int
    rewards: tuple[float, ...]
    backend: str

    def __post_init__(self):
        if any(not 0.0 <= r <= 1.0 for r in self.rewards):
            raise RewardRangeError(
                f"rewards for ({self.qid}, {self.cot_index}) fall outside [0, 1]"
            )


@dataclass
class ScoreSet:
    rewards: dict[tuple[str, int], StepRewards] = field(default_factory=dict)

    def get(self, qid: str, cot_index: int) -> Optional[StepRewards]:
        return self.rewards.get((qid, cot_index))

    def complete_for(self, corpus: Corpus, qid: str) -> bool:
        return all((qid, idx) in self.rewards for idx in range(len(corpus.cots[qid])))

    def first_missing(
        self, corpus: Corpus, qids: Sequence[str]
    ) -> Optional[tuple[str, int]]:
        for qid in qids:
            for idx in range(len(corpus.cots[qid])):
                if (qid, idx) not in self.rewards:
                    return (qid, idx)
        return None


class RemoteBackend:
    """HTTP scorer: one request per CoT, one reward per step in the reply.

    Request body is {"question": str, "steps": [str, ...]}; the reply must
    carry {"rewards": [float, ...]}. Transport failures and 5xx/429 are
    retried ``max_retries`` times before BackendUnavailable.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        auth_token: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 5,
        session: Optional[requests.Session] = None,
    ):
        self.tag = "remote"
        self.endpoint = endpoint
        self.model = model
        self.auth_token = auth_token
        self.timeout = timeout
        self.max_retries = max_retries
        self.session = session or requests.Session()

    def score(self, question: Question, steps: Sequence[str], cot_index: int) -> list[float]:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        body = {"question": question.text, "steps": list(steps)}
        last_error = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self.session.post(
                    self.endpoint, json=body, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                log.warning("scorer request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = RuntimeError(f"scorer returned HTTP {response.status_code}")
                continue
            try:
                rewards = response.json()["rewards"]
            except (ValueError, KeyError) as exc:
                raise BackendUnavailable(f"malformed scorer reply: {exc}") from exc
            return [float(r) for r in rewards]
        raise BackendUnavailable(
            f"scorer unreachable after {self.max_retries + 1} attempts: {last_error}"
        )


class GoldOracleBackend:
    """Deterministic oracle: 1.0 per step when the CoT's extracted answer
    equals the question's gold letter, else 0.1 per step."""

    tag = "gold"
    model = "oracle"

    def score(self, question: Question, steps: Sequence[str], cot_index: int) -> list[float]:
        answer = None
        for text in reversed(list(steps)):
            matches = _ANSWER_RE.findall(text)
            if matches:
                answer = matches[-1]
                break
        value = 1.0 if answer == question.gold else 0.1
        return [value] * len(steps)


class StaticBackend:
    """Serves rewards preloaded from a cache-format JSONL file."""

    def __init__(self, path, tag: str = "static", model: str = "static"):
        self.tag = tag
        self.model = model
        self._table: dict[tuple[str, int], list[float]] = {}
        for record, _ in _iter_cache(path):
            self._table[(record["qid"], record["cot_index"])] = list(record["rewards"])

    def score(self, question: Question, steps: Sequence[str], cot_index: int) -> list[float]:
        try:
            return self._table[(question.id, cot_index)]
        except KeyError:
            raise BackendUnavailable(
                f"no static rewards for ({question.id}, {cot_index})"
            ) from None


def score_cot(backend, q: Question, cot: CoT, cot_index: int = 0) -> StepRewards:
    """Score one CoT, enforcing the one-reward-per-step contract."""
    rewards = list(backend.score(q, [s.text for s in cot.steps], cot_index))
    if len(rewards) != len(cot.steps):
        raise RewardShapeMismatch(
            f"backend {backend.tag} returned {len(rewards)} rewards for a "
            f"{len(cot.steps)}-step CoT ({q.id}, {cot_index})"
        )
    if any(not 0.0 <= r <= 1.0 for r in rewards):
        raise RewardRangeError(
            f"backend {backend.tag} returned out-of-range rewards for "
            f"({q.id}, {cot_index}); refusing to clamp"
        )
    return StepRewards(
        qid=q.id, cot_index=cot_index, rewards=tuple(rewards), backend=backend.tag
    )


def _iter_cache(path):
    path = Path(path)
    if not path.exists():
        return
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CacheCorrupt(f"unparseable cache line: {exc}", line_number=line_no)
            for key in ("qid", "cot_index", "backend", "model", "rewards"):
                if key not in record:
                    raise CacheCorrupt(f"cache line missing {key!r}", line_number=line_no)
            if any(
                not isinstance(r, (int, float)) or not 0.0 <= r <= 1.0
                for r in record["rewards"]
            ):
                raise CacheCorrupt("cache rewards outside [0, 1]", line_number=line_no)
            yield record, line_no


def cache_identities(path) -> set[tuple[str, str]]:
    """Distinct (backend tag, model) pairs present in a cache file."""
    return {(record["backend"], record["model"]) for record, _ in _iter_cache(path)}


def read_cache(path, backend_tag: str, model: str) -> ScoreSet:
    """Load the cache entries matching one (backend, model) pair."""
    scores = ScoreSet()
    for record, _ in _iter_cache(path):
        if record["backend"] != backend_tag or record["model"] != model:
            continue
        scores.rewards[(record["qid"], record["cot_index"])] = StepRewards(
            qid=record["qid"],
            cot_index=record["cot_index"],
            rewards=tuple(float(r) for r in record["rewards"]),
            backend=record["backend"],
        )
    return scores


def _cache_line(backend, result: StepRewards) -> str:
    return json.dumps(
        {
            "qid": result.qid,
            "cot_index": result.cot_index,
            "backend": backend.tag,
            "model": backend.model,
            "rewards": list(result.rewards),
        },
        ensure_ascii=False,
    )


def score_corpus(backend, corpus: Corpus, cache_path, in_flight: int = 1) -> ScoreSet:
    """Score every (question, CoT) pair not already in the cache.

    New rewards are appended to the cache in corpus order as soon as they
    are validated, so an interrupted run leaves a clean prefix behind and
    a rerun issues calls only for the remainder. Backend failures
    propagate after flushing whatever completed before them.
    """
    scores = read_cache(cache_path, backend.tag, backend.model)
    pending = [
        (q, idx, cot)
        for q in corpus.questions
        for idx, cot in enumerate(corpus.cots[q.id])
        if (q.id, idx) not in scores.rewards
    ]
    if not pending:
        return scores
    log.info(
        "scoring %d of %d CoTs (%d cached)",
        len(pending),
        sum(len(c) for c in corpus.cots.values()),
        len(scores.rewards),
    )
    cache_path = Path(cache_path)
    with cache_path.open("a", encoding="utf-8") as fh:
        if in_flight <= 1:
            for q, idx, cot in pending:
                result = score_cot(backend, q, cot, idx)
                fh.write(_cache_line(backend, result) + "\n")
                fh.flush()
                scores.rewards[(q.id, idx)] = result
        else:
            with ThreadPoolExecutor(max_workers=in_flight) as pool:
                futures = [
                    pool.submit(score_cot, backend, q, cot, idx)
                    for q, idx, cot in pending
                ]
                # Consume in submission order so cache bytes are
                # deterministic and an interruption leaves a prefix.
                for (q, idx, _), future in zip(pending, futures):
                    result = future.result()
                    fh.write(_cache_line(backend, result) + "\n")
                    fh.flush()
                    scores.rewards[(q.id, idx)] = result
    return scores
