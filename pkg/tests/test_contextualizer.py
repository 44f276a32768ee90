import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prmkit.contextualizer import (
    CTX_MARKER,
    STEP_MARKER,
    MarkerError,
    SampleMode,
    TrainingSample,
    build_context_samples,
    build_conventional_samples,
    emit_training_file,
    format_pair,
    load_training_file,
    strip_pair,
)
from prmkit.errors import EmptyStep, LabelShapeMismatch

from conftest import make_cot, make_question

# Texts salted with marker fragments to attack the escaping.
adversarial_text = st.lists(
    st.sampled_from(
        ["a", "b", "\n", "<|", "|>", "ctx", "step", CTX_MARKER, STEP_MARKER]
    ),
    max_size=8,
).map("".join)


class TestFormatPair:
    def test_direct_template(self):
        pair = format_pair("ctx", "s")
        assert pair.rendered == "<|ctx|>\nctx\n<|step|>\ns"

    def test_empty_context_still_one_of_each_marker(self):
        pair = format_pair("", "s")
        assert pair.rendered == "<|ctx|>\n\n<|step|>\ns"
        assert strip_pair(pair.rendered) == ("", "s")

    def test_empty_step_rejected(self):
        with pytest.raises(EmptyStep):
            format_pair("ctx", "")

    def test_markers_in_payload_are_doubled(self):
        pair = format_pair(f"a{STEP_MARKER}b", f"c{CTX_MARKER}d")
        assert pair.rendered.count(STEP_MARKER) == 3  # 2 escaped + 1 real
        assert pair.rendered.count(CTX_MARKER) == 3
        assert strip_pair(pair.rendered) == (f"a{STEP_MARKER}b", f"c{CTX_MARKER}d")

    @given(adversarial_text, adversarial_text.filter(lambda s: len(s) > 0))
    @settings(max_examples=300, deadline=None)
    def test_strip_round_trip(self, context, step):
        pair = format_pair(context, step)
        assert strip_pair(pair.rendered) == (context, step)

    def test_strip_rejects_garbage(self):
        with pytest.raises(MarkerError):
            strip_pair("no markers at all")
        with pytest.raises(MarkerError):
            strip_pair(f"{CTX_MARKER}\nctx only, no step segment")
        with pytest.raises(MarkerError):
            strip_pair(f"{CTX_MARKER}\nctx\n{STEP_MARKER}\ns\n{STEP_MARKER}\nagain")


class TestContextSamples:
    def test_count_and_context_identity(self):
        q = make_question(text="the question?")
        cot = make_cot(["first step", "second step", "third step"])
        samples = build_context_samples(q, cot, [1, 1, 1])
        assert len(samples) == 3
        # sample 2's context slot is step 1's text, byte-exact
        ctx, step = strip_pair(samples[1].input_text[len(q.text) + 1 :])
        assert ctx == "first step"
        assert step == "second step"

    def test_first_sample_context_is_question(self):
        q = make_question(text="the question?")
        cot = make_cot(["only step"])
        (sample,) = build_context_samples(q, cot, [1])
        ctx, step = strip_pair(sample.input_text[len(q.text) + 1 :])
        assert ctx == q.text
        # the question appears both as prefix and in the context slot
        assert sample.input_text.startswith(q.text + "\n")

    def test_labels_travel_in_order(self):
        q = make_question()
        cot = make_cot(["a", "b", "c"])
        samples = build_context_samples(q, cot, [1, 0, 0])
        assert [s.label for s in samples] == [1, 0, 0]
        assert all(s.mode is SampleMode.CONTEXTUAL for s in samples)

    def test_anchor_is_rendered_step_suffix(self):
        q = make_question()
        cot = make_cot([f"uses {STEP_MARKER} inside"])
        (sample,) = build_context_samples(q, cot, [1])
        assert sample.input_text.endswith(sample.loss_anchor)
        assert sample.loss_anchor == f"uses {STEP_MARKER * 2} inside"

    def test_label_shape_mismatch(self):
        q = make_question()
        cot = make_cot(["a", "b"])
        with pytest.raises(LabelShapeMismatch):
            build_context_samples(q, cot, [1])

    def test_non_monotone_labels_rejected(self):
        q = make_question()
        with pytest.raises(ValueError):
            build_context_samples(q, make_cot(["a", "b"]), [0, 1])


class TestConventionalSamples:
    def test_cumulative_prefixes(self):
        q = make_question(text="Q?")
        cot = make_cot(["s1", "s2"])
        samples = build_conventional_samples(q, cot, [1, 0])
        assert len(samples) == 2
        assert samples[0].input_text == "Q?\ns1"
        assert samples[1].input_text == "Q?\ns1\ns2"
        assert samples[0].input_text + "\n" + "s2" == samples[1].input_text

    def test_anchor_is_raw_step_text(self):
        q = make_question()
        samples = build_conventional_samples(q, make_cot(["s1", "s2"]), [1, 1])
        assert samples[1].loss_anchor == "s2"
        assert samples[1].input_text.endswith("s2")

    def test_single_step_label_zero(self):
        q = make_question()
        (sample,) = build_conventional_samples(q, make_cot(["s1"]), [0])
        assert sample.label == 0

    def test_conventional_accepts_any_binary_labels(self):
        # the cumulative builder takes labels as given, no convention check
        q = make_question()
        samples = build_conventional_samples(q, make_cot(["a", "b"]), [0, 1])
        assert [s.label for s in samples] == [0, 1]


class TestSampleCountLaw:
    @given(st.integers(min_value=1, max_value=20), st.data())
    @settings(max_examples=60, deadline=None)
    def test_both_builders_emit_k_samples(self, k, data):
        q = make_question()
        texts = [f"step number {i}" for i in range(1, k + 1)]
        cot = make_cot(texts)
        first_bad = data.draw(st.integers(min_value=1, max_value=k + 1))
        labels = [1 if i < first_bad else 0 for i in range(1, k + 1)]
        ctx_samples = build_context_samples(q, cot, labels)
        conv_samples = build_conventional_samples(q, cot, labels)
        assert len(ctx_samples) == len(conv_samples) == k
        for i, sample in enumerate(ctx_samples, start=1):
            ctx, step = strip_pair(sample.input_text[len(q.text) + 1 :])
            assert step == texts[i - 1]
            assert ctx == (q.text if i == 1 else texts[i - 2])


class TestEmission:
    def test_emit_and_count(self, tmp_path):
        q = make_question()
        samples = build_conventional_samples(q, make_cot(["a", "b", "c"]), [1, 1, 0])
        path = tmp_path / "samples.jsonl"
        assert emit_training_file(samples, path) == 3
        assert len(path.read_text().splitlines()) == 3

    def test_empty_sequence(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        assert emit_training_file([], path) == 0
        assert path.read_text() == ""

    def test_round_trip(self, tmp_path):
        q = make_question(text=f"tricky {CTX_MARKER} question")
        cot = make_cot([f"s1 {STEP_MARKER}", "s2\nnewline"])
        samples = build_context_samples(q, cot, [1, 0]) + build_conventional_samples(
            q, cot, [1, 0]
        )
        path = tmp_path / "samples.jsonl"
        emit_training_file(samples, path)
        assert load_training_file(path) == samples


def test_training_sample_invariants():
    with pytest.raises(ValueError):
        TrainingSample(
            qid="q", step_index=1, mode=SampleMode.CONVENTIONAL,
            input_text="abc", loss_anchor="zzz", label=1,
        )
    with pytest.raises(ValueError):
        TrainingSample(
            qid="q", step_index=1, mode=SampleMode.CONVENTIONAL,
            input_text="abc", loss_anchor="bc", label=2,
        )
