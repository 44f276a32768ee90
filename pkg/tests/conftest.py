import json

import pytest

from prmkit.corpus import CoT, Corpus, Question, Step


def make_question(qid="q1", domain="law", text="What is the rule?", n_options=4, gold="A"):
    letters = "ABCDEFGHIJ"[:n_options]
    return Question(
        id=qid,
        domain=domain,
        text=text,
        options=tuple((letter, f"option {letter}") for letter in letters),
        gold=gold,
    )


def make_cot(step_texts, answer=None, original_labels=None):
    """Build a CoT; ``answer`` appends a final answer-pattern step."""
    texts = list(step_texts)
    if answer is not None:
        texts.append(f"The answer is ({answer}).")
    steps = tuple(Step(index=i, text=t) for i, t in enumerate(texts, start=1))
    from prmkit.corpus import extract_answer

    cot = CoT(
        steps=steps,
        original_labels=tuple(original_labels) if original_labels else None,
    )
    return CoT(
        steps=cot.steps,
        extracted_answer=extract_answer(cot),
        original_labels=cot.original_labels,
    )


def make_corpus(questions, cots_by_qid):
    return Corpus(
        questions=tuple(questions),
        cots={qid: tuple(cots) for qid, cots in cots_by_qid.items()},
        source_meta={},
    )


def corpus_record(qid="q1", domain="law", question="What is the rule?", n_options=4,
                  gold="A", cots=None):
    letters = "ABCDEFGHIJ"[:n_options]
    return {
        "id": qid,
        "domain": domain,
        "question": question,
        "options": [{"letter": letter, "text": f"option {letter}"} for letter in letters],
        "gold": gold,
        "cots": cots if cots is not None else [{"steps": ["think.", "The answer is (A)."]}],
    }


def write_corpus_file(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def tiny_corpus_path(tmp_path):
    records = [
        corpus_record(
            qid="q1",
            domain="physics",
            gold="B",
            cots=[
                {"steps": ["force equals mass times acceleration.", "The answer is (B)."]},
                {"steps": ["momentum is conserved.", "so...", "The answer is (C)."],
                 "original_labels": [1, 0, 0]},
            ],
        ),
        corpus_record(
            qid="q2",
            domain="law",
            gold="A",
            cots=[
                {"steps": ["consider precedent.", "The answer is (A)."]},
                {"steps": ["no idea, sorry."]},
            ],
        ),
    ]
    return write_corpus_file(tmp_path / "corpus.jsonl", records)
