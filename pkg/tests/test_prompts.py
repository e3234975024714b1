import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enttune.data import NLIExample, PassageRecord, QAExample
from enttune.prompts import (
    CONNECTIVE,
    EntailmentPair,
    PairOrigin,
    PromptStrategy,
    assemble,
    assemble_concat,
    mix,
    unify,
)

text = st.text(min_size=1, max_size=80).filter(lambda s: s.strip())


def test_unify_nli_entail():
    (pair,) = unify(NLIExample("A dog runs.", "An animal moves.", "entail"))
    assert pair == EntailmentPair("A dog runs.", "An animal moves.", PairOrigin.NLI)


@pytest.mark.parametrize("label", ["neutral", "contradict"])
def test_unify_nli_non_entail_dropped(label):
    assert unify(NLIExample("A dog runs.", "A cat sleeps.", label)) == []


def test_unify_qa_two_positives():
    ex = QAExample(
        "when did the Berlin Wall fall?",
        ("1989",),
        (PassageRecord("a", "It fell in 1989."), PassageRecord("b", "November 1989 saw the fall.")),
    )
    pairs = unify(ex)
    assert len(pairs) == 2
    assert {p.hypothesis for p in pairs} == {"There exists a known time when the Berlin Wall fall."}
    assert all(p.origin is PairOrigin.RETRIEVAL for p in pairs)
    concat = unify(ex, PromptStrategy.CONCAT)
    assert concat[0].hypothesis == ex.question


def test_assemble_example():
    out = assemble(EntailmentPair("A dog runs.", "An animal moves.", "nli"))
    assert out.text == "A dog runs. entails that An animal moves."
    assert out.premise == "A dog runs." and out.hypothesis == "An animal moves."


def test_empty_premise_rejected():
    with pytest.raises(ValueError):
        EntailmentPair("", "x", "nli")


def test_concat_example():
    out = assemble_concat(EntailmentPair("A dog runs.", "Who runs?", "retrieval"))
    assert out.text == "A dog runs. [SEP] Who runs?"
    assert (out.premise, out.hypothesis) == ("A dog runs.", "Who runs?")
    tiny = assemble_concat(EntailmentPair("a", "b", "nli"))
    assert (tiny.premise, tiny.hypothesis) == ("a", "b")


@settings(max_examples=300, deadline=None)
@given(text, text)
def test_span_round_trip(premise, hypothesis):
    pair = EntailmentPair(premise, hypothesis, "nli")
    for out in (assemble(pair), assemble_concat(pair)):
        assert out.premise == premise and out.hypothesis == hypothesis
        ps, hs = out.premise_char_span, out.hypothesis_char_span
        assert 0 <= ps[0] <= ps[1] <= hs[0] <= hs[1] == len(out.text)
    prompted = assemble(pair)
    between = prompted.text[prompted.premise_char_span[1] : prompted.hypothesis_char_span[0]]
    assert between == CONNECTIVE


def test_connective_inside_premise_is_disambiguated_by_spans():
    out = assemble(EntailmentPair("x entails that y", "z", "nli"))
    assert out.premise == "x entails that y" and out.hypothesis == "z"


def test_mix_is_seeded():
    pairs = [EntailmentPair(f"p{i}", f"h{i}", "nli") for i in range(30)]
    assert mix(pairs, 1) == mix(pairs, 1)
    assert mix(pairs, 1) != mix(pairs, 2)
    assert sorted(mix(pairs, 1), key=lambda p: p.premise) == sorted(pairs, key=lambda p: p.premise)
