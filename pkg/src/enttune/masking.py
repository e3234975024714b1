"""Tokenization of prompted text and masked-hypothesis instance construction."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .prompts import PromptedText
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 256


class MaskScope(str, enum.Enum):
    HYPOTHESIS_ONLY = "hypothesis_only"
    FULL_PROMPT = "full_prompt"


class InstanceRejected(ValueError):
    """An instance cannot be trained on."""


class HypothesisTruncatedError(InstanceRejected):
    pass


class NothingToPredictError(InstanceRejected):
    pass


@dataclass(frozen=True)
class MaskConfig:
    beta: float = 0.8
    scope: MaskScope = MaskScope.HYPOTHESIS_ONLY
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0,1]")
        object.__setattr__(self, "scope", MaskScope(self.scope))


@dataclass(frozen=True)
class TokenizedPrompt:
    """``[CLS] premise <frame> hypothesis [SEP]`` as ids, with token-level spans."""

    token_ids: tuple[int, ...]
    premise_span: tuple[int, int]
    hypothesis_span: tuple[int, int]

    def maskable_positions(self, scope: MaskScope) -> list[int]:
        hyp = range(*self.hypothesis_span)
        if MaskScope(scope) is MaskScope.HYPOTHESIS_ONLY:
            return list(hyp)
        return list(range(*self.premise_span)) + list(hyp)


@dataclass(frozen=True)
class PromptedInstance:
    token_ids: tuple[int, ...]
    hypothesis_token_span: tuple[int, int]
    mask_positions: tuple[int, ...]
    labels: tuple[int, ...]

    @property
    def attention_length(self) -> int:
        return len(self.token_ids)

    def original_ids(self) -> list[int]:
        ids = list(self.token_ids)
        for pos, label in zip(self.mask_positions, self.labels):
            ids[pos] = label
        return ids

    def to_dict(self) -> dict:
        return {
            "token_ids": list(self.token_ids),
            "hyp_span": list(self.hypothesis_token_span),
            "mask_positions": list(self.mask_positions),
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptedInstance":
        return cls(tuple(d["token_ids"]), tuple(d["hyp_span"]), tuple(d["mask_positions"]), tuple(d["labels"]))


def _overlaps(span: tuple[int, int], start: int, end: int) -> bool:
    return span[0] < end and start < span[1]


def tokenize_with_span(prompted: PromptedText, tokenizer: Tokenizer, max_len: int = DEFAULT_MAX_LEN) -> TokenizedPrompt:
    """Tokenize a prompt and locate the hypothesis in token space.

    Tokens whose character extent intersects the hypothesis span belong to the
    hypothesis; those between premise and hypothesis form the connective frame.
    Over-long inputs lose premise tokens nearest the connective; the frame and the
    whole hypothesis are always kept, or the instance is rejected.
    """
    ids, offsets = tokenizer.encode(prompted.text)
    premise, frame, hypothesis = [], [], []
    for tid, (s, e) in zip(ids, offsets):
        if _overlaps(prompted.hypothesis_char_span, s, e):
            hypothesis.append(tid)
        elif _overlaps(prompted.premise_char_span, s, e):
            premise.append(tid)
        else:
            frame.append(tid)
    if not hypothesis:
        raise HypothesisTruncatedError("hypothesis produced no tokens")
    budget = max_len - 2 - len(frame) - len(hypothesis)
    if budget < 0:
        raise HypothesisTruncatedError(
            f"hypothesis ({len(hypothesis)} tokens) does not fit in max_len={max_len} with its frame"
        )
    premise = premise[:budget]
    seq = [tokenizer.cls_id] + premise + frame + hypothesis + [tokenizer.sep_id]
    p_span = (1, 1 + len(premise))
    h_start = p_span[1] + len(frame)
    return TokenizedPrompt(tuple(seq), p_span, (h_start, h_start + len(hypothesis)))


def mask_hypothesis(
    tokenized: TokenizedPrompt, config: MaskConfig, rng: np.random.Generator, mask_id: int, special_ids=frozenset()
) -> PromptedInstance:
    """Replace each in-scope token with ``mask_id`` independently with probability beta."""
    positions = [p for p in tokenized.maskable_positions(config.scope) if tokenized.token_ids[p] not in special_ids]
    draws = rng.random(len(positions))
    chosen = [p for p, u in zip(positions, draws) if u < config.beta]
    if not chosen:
        raise NothingToPredictError("no token was masked")
    ids = list(tokenized.token_ids)
    labels = tuple(ids[p] for p in chosen)
    for p in chosen:
        ids[p] = mask_id
    return PromptedInstance(tuple(ids), tokenized.hypothesis_span, tuple(chosen), labels)


def build_instances(
    prompts: Iterable[PromptedText],
    tokenizer: Tokenizer,
    config: MaskConfig,
    max_len: int = DEFAULT_MAX_LEN,
    seed: int | None = None,
) -> tuple[list[PromptedInstance], int]:
    """Tokenize and mask every prompt; returns (accepted instances, number rejected)."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    out, rejected = [], 0
    for prompted in prompts:
        try:
            tok = tokenize_with_span(prompted, tokenizer, max_len)
            out.append(mask_hypothesis(tok, config, rng, tokenizer.mask_id, tokenizer.special_ids))
        except InstanceRejected as exc:
            rejected += 1
            log.debug("rejected instance: %s", exc)
    return out, rejected
