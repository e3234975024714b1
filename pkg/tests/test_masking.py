import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enttune.masking import (
    HypothesisTruncatedError,
    MaskConfig,
    MaskScope,
    NothingToPredictError,
    PromptedInstance,
    build_instances,
    mask_hypothesis,
    tokenize_with_span,
)
from enttune.prompts import EntailmentPair, PairOrigin, assemble, assemble_concat

words = st.lists(st.sampled_from([f"w{i}" for i in range(95)]), min_size=1, max_size=20).map(" ".join)


def prompt(premise, hypothesis):
    return assemble(EntailmentPair(premise, hypothesis, PairOrigin.NLI))


def test_span_covers_trailing_hypothesis(tokenizer):
    tok = tokenize_with_span(prompt("w1 w2 w3", "w4 w5"), tokenizer)
    assert tokenizer.decode(tok.token_ids) == "[CLS] w1 w2 w3 [UNK] [UNK] w4 w5 [SEP]"
    assert tok.hypothesis_span == (6, 8)
    assert tok.premise_span == (1, 4)


def test_beta_one_masks_every_hypothesis_token(tokenizer):
    tok = tokenize_with_span(prompt("w1 w2", "w10 w11 w12 w13 w14 w15 w16"), tokenizer)
    inst = mask_hypothesis(tok, MaskConfig(beta=1.0), np.random.default_rng(0), tokenizer.mask_id, tokenizer.special_ids)
    assert len(inst.mask_positions) == 7 and len(inst.labels) == 7
    assert all(inst.token_ids[p] == tokenizer.mask_id for p in inst.mask_positions)


def test_beta_zero_rejected(tokenizer):
    tok = tokenize_with_span(prompt("w1 w2", "w3 w4"), tokenizer)
    with pytest.raises(NothingToPredictError):
        mask_hypothesis(tok, MaskConfig(beta=0.0), np.random.default_rng(0), tokenizer.mask_id)


@pytest.mark.parametrize("beta", [-0.1, 1.5])
def test_beta_out_of_range(beta):
    with pytest.raises(ValueError, match=r"beta must lie in \[0,1\]"):
        MaskConfig(beta=beta)


def test_pooled_mask_rate(tokenizer):
    rng = np.random.default_rng(123)
    prompts = [
        prompt("w1 w2 w3", " ".join(f"w{i}" for i in rng.integers(5, 95, size=10))) for _ in range(1000)
    ]
    instances, rejected = build_instances(prompts, tokenizer, MaskConfig(beta=0.8, seed=7))
    masked = sum(len(i.mask_positions) for i in instances)
    # rejected instances had all 10 tokens left unmasked
    rate = masked / (10 * (len(instances) + rejected))
    assert 0.78 <= rate <= 0.82


def test_full_prompt_never_masks_frame(tokenizer):
    connective = tokenizer.unk_id  # "entails" / "that" are outside the test vocabulary
    tok = tokenize_with_span(prompt("w1 w2 w3 w4", "w5 w6"), tokenizer)
    frame = set(range(tok.premise_span[1], tok.hypothesis_span[0]))
    for seed in range(50):
        inst = mask_hypothesis(tok, MaskConfig(beta=1.0, scope=MaskScope.FULL_PROMPT), np.random.default_rng(seed), tokenizer.mask_id, tokenizer.special_ids)
        assert frame.isdisjoint(inst.mask_positions)
        assert 0 not in inst.mask_positions and len(inst.token_ids) - 1 not in inst.mask_positions
        assert len(inst.mask_positions) == 6
        assert all(inst.token_ids[p] == connective for p in frame)


@settings(max_examples=200, deadline=None)
@given(premise=words, hypothesis=words, beta=st.floats(0.05, 1.0), seed=st.integers(0, 2**31))
def test_scope_safety_and_label_fidelity(tokenizer, premise, hypothesis, beta, seed):
    tok = tokenize_with_span(prompt(premise, hypothesis), tokenizer)
    try:
        inst = mask_hypothesis(tok, MaskConfig(beta=beta), np.random.default_rng(seed), tokenizer.mask_id, tokenizer.special_ids)
    except NothingToPredictError:
        return
    lo, hi = inst.hypothesis_token_span
    assert all(lo <= p < hi for p in inst.mask_positions)
    assert list(inst.mask_positions) == sorted(inst.mask_positions)
    assert inst.original_ids() == list(tok.token_ids)
    assert all(inst.token_ids[p] == tokenizer.mask_id for p in inst.mask_positions)


def test_masking_deterministic(tokenizer):
    prompts = [prompt("w1 w2 w3", "w4 w5 w6 w7") for _ in range(20)]
    a, _ = build_instances(prompts, tokenizer, MaskConfig(seed=3))
    b, _ = build_instances(prompts, tokenizer, MaskConfig(seed=3))
    c, _ = build_instances(prompts, tokenizer, MaskConfig(seed=4))
    assert a == b
    assert a != c


def test_long_premise_truncated_keeps_hypothesis(tokenizer):
    premise = " ".join(f"w{i % 90}" for i in range(300))
    tok = tokenize_with_span(prompt(premise, "w91 w92 w93"), tokenizer, max_len=256)
    assert len(tok.token_ids) == 256
    assert tokenizer.decode(tok.token_ids[slice(*tok.hypothesis_span)]) == "w91 w92 w93"
    assert tokenizer.decode(tok.token_ids[1:4]) == "w0 w1 w2"  # premise head kept


def test_hypothesis_that_cannot_fit_is_rejected(tokenizer):
    premise = " ".join(["w1"] * 300)
    hypothesis = " ".join(["w2"] * 300)
    with pytest.raises(HypothesisTruncatedError):
        tokenize_with_span(prompt(premise, hypothesis), tokenizer, max_len=256)
    _, rejected = build_instances([prompt(premise, hypothesis)], tokenizer, MaskConfig())
    assert rejected == 1


def test_concat_prompt_spans(tokenizer):
    p = assemble_concat(EntailmentPair("w1 w2", "w3 w4", PairOrigin.RETRIEVAL))
    tok = tokenize_with_span(p, tokenizer)
    assert tokenizer.decode(tok.token_ids) == "[CLS] w1 w2 [SEP] w3 w4 [SEP]"
    inst = mask_hypothesis(tok, MaskConfig(beta=1.0, scope="full_prompt"), np.random.default_rng(0), tokenizer.mask_id, tokenizer.special_ids)
    assert inst.mask_positions == (1, 2, 4, 5)


def test_instance_json_round_trip(tokenizer):
    (inst,), _ = build_instances([prompt("w1 w2", "w3 w4")], tokenizer, MaskConfig(beta=1.0))
    d = json.loads(json.dumps(inst.to_dict()))
    assert set(d) == {"token_ids", "hyp_span", "mask_positions", "labels"}
    assert PromptedInstance.from_dict(d) == inst
