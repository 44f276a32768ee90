"""Reward aggregation, answer selection (MV / WMV / BoN), and accuracy
curves over subsampled CoT sets.

Subsampling is seeded and counter-based: each (question, trial, N) cell
gets its own substream derived by hashing, so results are independent of
scheduling and identical across reruns. An exhaustive mode replaces the
random trials with full enumeration of all C(K, N) subsets, which small
oracle tests can match exactly.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import random
import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .corpus import Corpus, scope_questions
from .errors import (
    EmptyCandidates,
    EmptyRewards,
    IncompleteScores,
    NegativeScore,
    NTooLarge,
)
from .scoring import ScoreSet, StepRewards


class Aggregation(str, Enum):
    MIN = "min"
    MEAN = "mean"
    MAX = "max"


class Method(str, Enum):
    MV = "mv"
    WMV = "wmv"
    BON = "bon"


@dataclass(frozen=True)
class ScoredCandidate:
    answer: Optional[str]
    score: float
    cot_index: int


@dataclass(frozen=True)
class VoteResult:
    chosen: Optional[str]
    tallies: dict[str, float]
    method: Method
    tie_broken: bool


@dataclass(frozen=True)
class CurvePoint:
    n: int
    acc: float
    stderr: float


@dataclass(frozen=True)
class EvalCurve:
    method: Method
    aggregation: Aggregation
    scope: str
    seed: int
    trials: int  # 0 means exhaustive enumeration
    points: tuple[CurvePoint, ...]

    def point_at(self, n: int) -> Optional[CurvePoint]:
        for point in self.points:
            if point.n == n:
                return point
        return None

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method.value,
                "aggregation": self.aggregation.value,
                "scope": self.scope,
                "seed": self.seed,
                "trials": self.trials,
                "points": [
                    {"n": p.n, "acc": p.acc, "stderr": p.stderr} for p in self.points
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalCurve":
        data = json.loads(text)
        return cls(
            method=Method(data["method"]),
            aggregation=Aggregation(data["aggregation"]),
            scope=data["scope"],
            seed=data["seed"],
            trials=data["trials"],
            points=tuple(
                CurvePoint(p["n"], p["acc"], p["stderr"]) for p in data["points"]
            ),
        )


def aggregate(rewards: StepRewards, method: Aggregation) -> float:
    """Collapse stepwise rewards into one CoT score."""
    values = rewards.rewards
    if not values:
        raise EmptyRewards("cannot aggregate an empty reward sequence")
    if method is Aggregation.MIN:
        return min(values)
    if method is Aggregation.MAX:
        return max(values)
    return math.fsum(values) / len(values)


def _argmax_answers(tallies: dict[str, float]) -> tuple[Optional[str], bool]:
    if not tallies:
        return None, False
    best = max(tallies.values())
    winners = sorted(a for a, w in tallies.items() if w == best)
    return winners[0], len(winners) > 1


def majority_vote(candidates: Sequence[ScoredCandidate]) -> VoteResult:
    """Most frequent answer; ties go to the lexicographically first letter."""
    if not candidates:
        raise EmptyCandidates("majority_vote over no candidates")
    tallies: dict[str, float] = {}
    for c in candidates:
        if c.answer is None:
            continue
        tallies[c.answer] = tallies.get(c.answer, 0.0) + 1.0
    chosen, tie = _argmax_answers(tallies)
    return VoteResult(chosen=chosen, tallies=tallies, method=Method.MV, tie_broken=tie)


def weighted_majority_vote(candidates: Sequence[ScoredCandidate]) -> VoteResult:
    """Answers weighted by CoT score; ties go to the first letter."""
    if not candidates:
        raise EmptyCandidates("weighted_majority_vote over no candidates")
    if any(c.score < 0 for c in candidates):
        raise NegativeScore("weighted voting needs non-negative scores")
    tallies: dict[str, float] = {}
    for c in candidates:
        if c.answer is None:
            continue
        tallies[c.answer] = tallies.get(c.answer, 0.0) + c.score
    chosen, tie = _argmax_answers(tallies)
    return VoteResult(chosen=chosen, tallies=tallies, method=Method.WMV, tie_broken=tie)


def best_of_n(candidates: Sequence[ScoredCandidate]) -> VoteResult:
    """Answer of the highest-scoring CoT; score ties go to the lowest index."""
    if not candidates:
        raise EmptyCandidates("best_of_n over no candidates")
    eligible = [c for c in candidates if c.answer is not None]
    tallies: dict[str, float] = {}
    for c in eligible:
        tallies[c.answer] = max(tallies.get(c.answer, -math.inf), c.score)
    if not eligible:
        return VoteResult(chosen=None, tallies={}, method=Method.BON, tie_broken=False)
    best_score = max(c.score for c in eligible)
    winners = [c for c in eligible if c.score == best_score]
    chosen = min(winners, key=lambda c: c.cot_index)
    return VoteResult(
        chosen=chosen.answer,
        tallies=tallies,
        method=Method.BON,
        tie_broken=len(winners) > 1,
    )


_VOTERS = {
    Method.MV: majority_vote,
    Method.WMV: weighted_majority_vote,
    Method.BON: best_of_n,
}


def select_answer(candidates: Sequence[ScoredCandidate], method: Method) -> VoteResult:
    return _VOTERS[method](candidates)


def _substream(seed: int, qid: str, trial: int, n: int) -> random.Random:
    material = f"{seed}|{qid}|{trial}|{n}".encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _candidates_for(
    corpus: Corpus,
    scores: ScoreSet,
    qid: str,
    indices: Sequence[int],
    method: Method,
    aggregation: Aggregation,
) -> list[ScoredCandidate]:
    cots = corpus.cots[qid]
    out = []
    for idx in indices:
        cot = cots[idx]
        if method is Method.MV:
            score = 1.0  # MV ignores scores entirely
        else:
            score = aggregate(scores.rewards[(qid, idx)], aggregation)
        out.append(ScoredCandidate(answer=cot.extracted_answer, score=score, cot_index=idx))
    return out


def evaluate_curve(
    corpus: Corpus,
    scores: ScoreSet,
    method: Method,
    aggregation: Aggregation,
    ns: Sequence[int],
    trials: int = 50,
    seed: int = 0,
    scope: str = "all",
    exhaustive: bool = False,
) -> EvalCurve:
    """Accuracy versus number of sampled CoTs, one point per N.

    Each trial draws N CoTs per question uniformly without replacement
    and measures the fraction of questions whose selected answer matches
    gold; points carry the mean and standard error over trials. With
    ``exhaustive`` the sampling is replaced by full subset enumeration
    (per-question mean over all C(K, N) subsets) and stderr is 0.
    """
    questions = scope_questions(corpus, scope)
    if list(ns) != sorted(set(ns)):
        raise ValueError("ns must be strictly increasing")
    if not exhaustive and trials < 1:
        raise ValueError("trials must be >= 1")
    missing = scores.first_missing(corpus, [q.id for q in questions])
    if missing is not None:
        raise IncompleteScores(*missing)
    available = min(len(corpus.cots[q.id]) for q in questions)
    too_large = [n for n in ns if n > available]
    if too_large:
        raise NTooLarge(
            f"N={too_large[0]} exceeds the {available} CoTs available per question"
        )

    points = []
    for n in ns:
        if exhaustive:
            acc_sum = 0.0
            for q in questions:
                k = len(corpus.cots[q.id])
                subset_hits = 0
                subset_count = 0
                for combo in itertools.combinations(range(k), n):
                    candidates = _candidates_for(corpus, scores, q.id, combo, method, aggregation)
                    result = select_answer(candidates, method)
                    subset_hits += int(result.chosen == q.gold)
                    subset_count += 1
                acc_sum += subset_hits / subset_count
            points.append(CurvePoint(n=n, acc=acc_sum / len(questions), stderr=0.0))
            continue
        trial_accs = []
        for trial in range(trials):
            hits = 0
            for q in questions:
                k = len(corpus.cots[q.id])
                rng = _substream(seed, q.id, trial, n)
                indices = rng.sample(range(k), n)
                candidates = _candidates_for(corpus, scores, q.id, indices, method, aggregation)
                result = select_answer(candidates, method)
                hits += int(result.chosen == q.gold)
            trial_accs.append(hits / len(questions))
        mean = math.fsum(trial_accs) / len(trial_accs)
        stderr = (
            statistics.stdev(trial_accs) / math.sqrt(len(trial_accs))
            if len(trial_accs) > 1
            else 0.0
        )
        points.append(CurvePoint(n=n, acc=mean, stderr=stderr))

    return EvalCurve(
        method=method,
        aggregation=aggregation,
        scope=scope,
        seed=seed,
        trials=0 if exhaustive else trials,
        points=tuple(points),
    )
