import json

import pytest

from prmkit.errors import (
    BackendUnavailable,
    CacheCorrupt,
    RewardRangeError,
    RewardShapeMismatch,
)
from prmkit.scoring import (
    GoldOracleBackend,
    RemoteBackend,
    StaticBackend,
    StepRewards,
    cache_identities,
    read_cache,
    score_corpus,
    score_cot,
)

from conftest import make_corpus, make_cot, make_question

APPENDIX_REWARDS = [1.0000, 0.0173, 0.9961, 1.0000, 0.0090, 0.6758, 1.0000]


class ConstantBackend:
    tag = "const"
    model = "m0"

    def __init__(self, value=0.5):
        self.value = value
        self.calls = 0

    def score(self, question, steps, cot_index):
        self.calls += 1
        return [self.value] * len(steps)


class FlakyBackend(ConstantBackend):
    """Raises after ``fail_after`` successful calls; used for fault injection."""

    def __init__(self, fail_after):
        super().__init__()
        self.fail_after = fail_after

    def score(self, question, steps, cot_index):
        if self.calls >= self.fail_after:
            raise BackendUnavailable("injected fault")
        return super().score(question, steps, cot_index)


class ShapeLiarBackend(ConstantBackend):
    def score(self, question, steps, cot_index):
        return [0.5] * (len(steps) - 1)


class RangeLiarBackend(ConstantBackend):
    def score(self, question, steps, cot_index):
        return [1.5] * len(steps)


def small_corpus(n_questions=3, n_cots=2, gold="A"):
    questions = [make_question(qid=f"q{i}", gold=gold) for i in range(n_questions)]
    cots = {
        q.id: [make_cot([f"s{j}", "more"], answer="A" if j % 2 == 0 else "B")
               for j in range(n_cots)]
        for q in questions
    }
    return make_corpus(questions, cots)


class TestScoreCot:
    def test_one_reward_per_step(self):
        backend = ConstantBackend(0.25)
        q = make_question()
        result = score_cot(backend, q, make_cot(["a", "b", "c"]), cot_index=4)
        assert result.rewards == (0.25, 0.25, 0.25)
        assert result.cot_index == 4
        assert result.backend == "const"

    def test_shape_mismatch_rejected(self):
        with pytest.raises(RewardShapeMismatch):
            score_cot(ShapeLiarBackend(), make_question(), make_cot(["a", "b"]))

    def test_out_of_range_rejected_not_clamped(self):
        with pytest.raises(RewardRangeError):
            score_cot(RangeLiarBackend(), make_question(), make_cot(["a"]))

    def test_gold_oracle_values(self):
        backend = GoldOracleBackend()
        q = make_question(gold="B")
        hit = score_cot(backend, q, make_cot(["x", "y"], answer="B"))
        miss = score_cot(backend, q, make_cot(["x", "y"], answer="C"))
        unparsed = score_cot(backend, q, make_cot(["x", "y"]))
        assert hit.rewards == (1.0, 1.0, 1.0)
        assert miss.rewards == (0.1, 0.1, 0.1)
        assert unparsed.rewards == (0.1, 0.1)

    def test_static_backend_serves_fixture(self, tmp_path):
        cache = tmp_path / "fixture.jsonl"
        cache.write_text(
            json.dumps(
                {
                    "qid": "7251_mmlu_economics",
                    "cot_index": 0,
                    "backend": "static",
                    "model": "static",
                    "rewards": APPENDIX_REWARDS,
                }
            )
            + "\n"
        )
        backend = StaticBackend(cache)
        q = make_question(qid="7251_mmlu_economics", n_options=10, gold="E")
        cot = make_cot([f"s{i}" for i in range(6)], answer="G")
        result = score_cot(backend, q, cot, cot_index=0)
        assert result.rewards == tuple(APPENDIX_REWARDS)
        with pytest.raises(BackendUnavailable):
            score_cot(backend, q, cot, cot_index=3)


class TestRemoteBackend:
    class _Response:
        def __init__(self, status_code, payload=None):
            self.status_code = status_code
            self._payload = payload

        def json(self):
            if self._payload is None:
                raise ValueError("no body")
            return self._payload

    class _Session:
        def __init__(self, outcomes):
            self.outcomes = list(outcomes)
            self.bodies = []

        def post(self, url, json=None, headers=None, timeout=None):
            self.bodies.append(json)
            outcome = self.outcomes.pop(0)
            if isinstance(outcome, Exception):
                raise outcome
            return outcome

    def test_request_shape_and_parse(self):
        session = self._Session([self._Response(200, {"rewards": [0.5, 0.25]})])
        backend = RemoteBackend("http://prm/score", "model-x", session=session)
        q = make_question(text="why?")
        result = score_cot(backend, q, make_cot(["a", "b"]))
        assert result.rewards == (0.5, 0.25)
        assert session.bodies[0] == {"question": "why?", "steps": ["a", "b"]}

    def test_retries_then_gives_up(self):
        import requests

        session = self._Session([requests.ConnectionError("x")] * 3)
        backend = RemoteBackend("http://prm", "m", max_retries=2, session=session)
        with pytest.raises(BackendUnavailable):
            backend.score(make_question(), ["a"], 0)


class TestScoreCorpus:
    def test_cold_cache_scores_everything(self, tmp_path):
        corpus = small_corpus(1, 2)
        backend = ConstantBackend()
        cache = tmp_path / "cache.jsonl"
        scores = score_corpus(backend, corpus, cache)
        assert backend.calls == 2
        assert len(cache.read_text().splitlines()) == 2
        assert set(scores.rewards) == {("q0", 0), ("q0", 1)}

    def test_warm_cache_makes_no_calls(self, tmp_path):
        corpus = small_corpus(2, 2)
        cache = tmp_path / "cache.jsonl"
        score_corpus(ConstantBackend(), corpus, cache)
        backend = ConstantBackend()
        scores = score_corpus(backend, corpus, cache)
        assert backend.calls == 0
        assert len(scores.rewards) == 4

    def test_interrupt_and_resume_single_step(self, tmp_path):
        corpus = small_corpus(1, 2)
        cache = tmp_path / "cache.jsonl"
        flaky = FlakyBackend(fail_after=1)
        with pytest.raises(BackendUnavailable):
            score_corpus(flaky, corpus, cache)
        assert len(cache.read_text().splitlines()) == 1
        backend = ConstantBackend()
        score_corpus(backend, corpus, cache)
        assert backend.calls == 1  # exactly one additional call

    def test_resume_identical_at_every_prefix(self, tmp_path):
        # 6-item workload interrupted after every prefix length; the final
        # cache must match an uninterrupted run byte for byte, with no
        # duplicate backend calls.
        corpus = small_corpus(3, 2)
        reference = tmp_path / "reference.jsonl"
        score_corpus(ConstantBackend(), corpus, reference)
        reference_bytes = reference.read_bytes()
        for prefix in range(6):
            cache = tmp_path / f"cache_{prefix}.jsonl"
            flaky = FlakyBackend(fail_after=prefix)
            with pytest.raises(BackendUnavailable):
                score_corpus(flaky, corpus, cache)
            assert len(cache.read_text().splitlines()) == prefix
            resumer = ConstantBackend()
            scores = score_corpus(resumer, corpus, cache)
            assert flaky.calls + resumer.calls == 6
            assert cache.read_bytes() == reference_bytes
            assert len(scores.rewards) == 6

    def test_oracle_cache_bytes_deterministic(self, tmp_path):
        corpus = small_corpus(2, 3)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        score_corpus(GoldOracleBackend(), corpus, a)
        score_corpus(GoldOracleBackend(), corpus, b)
        assert a.read_bytes() == b.read_bytes()

    def test_concurrent_run_matches_sequential_bytes(self, tmp_path):
        corpus = small_corpus(3, 4)
        seq, par = tmp_path / "seq.jsonl", tmp_path / "par.jsonl"
        score_corpus(ConstantBackend(), corpus, seq, in_flight=1)
        score_corpus(ConstantBackend(), corpus, par, in_flight=4)
        assert seq.read_bytes() == par.read_bytes()

    def test_cache_keyed_by_backend_and_model(self, tmp_path):
        corpus = small_corpus(1, 1)
        cache = tmp_path / "cache.jsonl"
        score_corpus(ConstantBackend(0.5), corpus, cache)
        other = ConstantBackend(0.9)
        other.model = "m1"
        score_corpus(other, corpus, cache)
        assert other.calls == 1  # same tag, different model: not a cache hit
        assert cache_identities(cache) == {("const", "m0"), ("const", "m1")}
        m0 = read_cache(cache, "const", "m0")
        m1 = read_cache(cache, "const", "m1")
        assert m0.rewards[("q0", 0)].rewards == (0.5, 0.5, 0.5)
        assert m1.rewards[("q0", 0)].rewards == (0.9, 0.9, 0.9)


class TestCacheValidation:
    def test_corrupt_line_named(self, tmp_path):
        cache = tmp_path / "cache.jsonl"
        good = json.dumps(
            {"qid": "q", "cot_index": 0, "backend": "b", "model": "m", "rewards": [0.5]}
        )
        cache.write_text(good + "\nnot json\n")
        with pytest.raises(CacheCorrupt) as err:
            read_cache(cache, "b", "m")
        assert err.value.line_number == 2

    def test_missing_field_rejected(self, tmp_path):
        cache = tmp_path / "cache.jsonl"
        cache.write_text(json.dumps({"qid": "q", "cot_index": 0, "rewards": [0.5]}) + "\n")
        with pytest.raises(CacheCorrupt):
            read_cache(cache, "b", "m")

    def test_out_of_range_cache_rejected(self, tmp_path):
        cache = tmp_path / "cache.jsonl"
        cache.write_text(
            json.dumps(
                {"qid": "q", "cot_index": 0, "backend": "b", "model": "m", "rewards": [1.2]}
            )
            + "\n"
        )
        with pytest.raises(CacheCorrupt):
            read_cache(cache, "b", "m")

    def test_missing_cache_file_is_empty(self, tmp_path):
        scores = read_cache(tmp_path / "nope.jsonl", "b", "m")
        assert scores.rewards == {}


def test_step_rewards_range_invariant():
    with pytest.raises(RewardRangeError):
        StepRewards(qid="q", cot_index=0, rewards=(0.5, -0.1), backend="t")
