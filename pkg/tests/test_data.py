import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enttune.data import (
    Corpus,
    DatasetError,
    NLILabel,
    PassageRecord,
    SchemaError,
    chunk_document,
    load_corpus,
    load_nli_dataset,
    load_qa_dataset,
    normalize_whitespace,
    write_jsonl,
)

QA = {
    "question": "when did the Berlin Wall fall?",
    "answers": ["1989"],
    "positive_passages": [{"id": "p1", "title": "Berlin Wall", "body": "The wall fell in  1989."}],
    "negative_passages": [{"id": "n1", "body": "Berlin is a city."}],
}


def _write(tmp_path, name, lines):
    path = tmp_path / name
    path.write_text("".join(line + "\n" for line in lines))
    return path


def test_load_single_record(tmp_path):
    path = _write(tmp_path, "qa.jsonl", [json.dumps(QA)])
    (ex,) = load_qa_dataset(path)
    assert ex.question == QA["question"]
    assert ex.positive_passages[0].body == "The wall fell in 1989."
    assert ex.negative_passages[0].title is None


def test_empty_file(tmp_path):
    assert load_qa_dataset(_write(tmp_path, "qa.jsonl", [])) == []


def test_missing_question_names_field_and_line(tmp_path):
    record = dict(QA)
    del record["question"]
    path = _write(tmp_path, "qa.jsonl", [json.dumps(record)])
    with pytest.raises(SchemaError) as info:
        load_qa_dataset(path)
    assert info.value.field == "question"
    assert info.value.line == 1
    assert "question" in str(info.value) and "line 1" in str(info.value)


def test_malformed_line_reports_line_number(tmp_path):
    path = _write(tmp_path, "qa.jsonl", [json.dumps(QA), "{not json"])
    with pytest.raises(DatasetError) as info:
        load_qa_dataset(path)
    assert info.value.line == 2


def test_training_example_needs_positive(tmp_path):
    record = dict(QA, positive_passages=[])
    path = _write(tmp_path, "qa.jsonl", [json.dumps(record)])
    with pytest.raises(SchemaError):
        load_qa_dataset(path)
    assert len(load_qa_dataset(path, require_positive=False)) == 1


def test_blank_question_rejected(tmp_path):
    path = _write(tmp_path, "qa.jsonl", [json.dumps(dict(QA, question="   "))])
    with pytest.raises(SchemaError, match="question"):
        load_qa_dataset(path)


@pytest.mark.parametrize(
    "label, expected",
    [
        ("entailment", NLILabel.ENTAIL),
        ("entail", NLILabel.ENTAIL),
        ("neutral", NLILabel.NEUTRAL),
        ("contradiction", NLILabel.CONTRADICT),
        ("contradict", NLILabel.CONTRADICT),
    ],
)
def test_nli_label_aliases(tmp_path, label, expected):
    path = _write(tmp_path, "nli.jsonl", [json.dumps({"premise": "A dog runs.", "hypothesis": "An animal moves.", "label": label})])
    assert load_nli_dataset(path)[0].label is expected


def test_unknown_nli_label(tmp_path):
    path = _write(tmp_path, "nli.jsonl", [json.dumps({"premise": "a", "hypothesis": "b", "label": "maybe"})])
    with pytest.raises(SchemaError, match="maybe"):
        load_nli_dataset(path)


def test_duplicate_corpus_ids_rejected():
    with pytest.raises(SchemaError):
        Corpus([PassageRecord("a", "x"), PassageRecord("a", "y")])


def test_negative_provenance_kept_as_metadata(tmp_path):
    record = dict(QA, metadata={"negatives": "bm25"})
    (ex,) = load_qa_dataset(_write(tmp_path, "qa.jsonl", [json.dumps(record)]))
    assert ex.metadata == {"negatives": "bm25"}


def test_round_trip(tmp_path):
    src = _write(tmp_path, "qa.jsonl", [json.dumps(QA), json.dumps(dict(QA, question="who won?"))])
    first = load_qa_dataset(src)
    out = tmp_path / "out.jsonl"
    write_jsonl(out, first)
    assert load_qa_dataset(out) == first

    corpus = Corpus([PassageRecord("b", "two"), PassageRecord("a", "one", title="T")])
    write_jsonl(tmp_path / "c.jsonl", corpus)
    again = load_corpus(tmp_path / "c.jsonl")
    assert again.passages == corpus.passages


def test_loading_is_order_deterministic(tmp_path):
    lines = [json.dumps(dict(QA, question=f"when did event {i} happen?")) for i in range(20)]
    path = _write(tmp_path, "qa.jsonl", lines)
    assert [e.question for e in load_qa_dataset(path)] == [f"when did event {i} happen?" for i in range(20)]
    assert load_qa_dataset(path) == load_qa_dataset(path)


@pytest.mark.parametrize("n_words, sizes", [(250, [100, 100, 50]), (100, [100]), (0, [])])
def test_chunk_sizes(n_words, sizes):
    text = " ".join(f"w{i}" for i in range(n_words))
    assert [len(c.body.split()) for c in chunk_document(text, 100)] == sizes


def test_chunk_rejects_zero_width():
    with pytest.raises(ValueError):
        chunk_document("a b", 0)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("ab c\n\t ")), max_size=400), st.integers(1, 30))
def test_chunk_properties(text, width):
    chunks = chunk_document(text, width)
    assert " ".join(c.body for c in chunks) == normalize_whitespace(text)
    assert all(c.body for c in chunks)
    counts = [len(c.body.split()) for c in chunks]
    assert all(n == width for n in counts[:-1])
    if counts:
        assert 1 <= counts[-1] <= width
    assert len({c.id for c in chunks}) == len(chunks)
