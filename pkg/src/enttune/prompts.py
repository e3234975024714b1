"""Unified entailment prompt: pairing premises with hypotheses and rendering them as text."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .claims import question_to_claim
from .data import NLIExample, NLILabel, QAExample

CONNECTIVE = " entails that "
SEPARATOR = " [SEP] "


class PairOrigin(str, enum.Enum):
    NLI = "nli"
    RETRIEVAL = "retrieval"


class PromptStrategy(str, enum.Enum):
    PROMPT = "prompt"  # "<premise> entails that <claim>"
    CONCAT = "concat"  # "<premise> [SEP] <question>"


@dataclass(frozen=True)
class EntailmentPair:
    premise: str
    hypothesis: str
    origin: PairOrigin

    def __post_init__(self):
        if not self.premise.strip() or not self.hypothesis.strip():
            raise ValueError("premise and hypothesis must be non-empty")
        object.__setattr__(self, "origin", PairOrigin(self.origin))

    def to_dict(self) -> dict:
        return {"premise": self.premise, "hypothesis": self.hypothesis, "origin": self.origin.value}

    @classmethod
    def from_dict(cls, d: dict) -> "EntailmentPair":
        return cls(premise=d["premise"], hypothesis=d["hypothesis"], origin=d["origin"])


@dataclass(frozen=True)
class PromptedText:
    text: str
    premise_char_span: tuple[int, int]
    hypothesis_char_span: tuple[int, int]

    @property
    def premise(self) -> str:
        return self.text[slice(*self.premise_char_span)]

    @property
    def hypothesis(self) -> str:
        return self.text[slice(*self.hypothesis_char_span)]

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "premise_span": list(self.premise_char_span),
            "hypothesis_span": list(self.hypothesis_char_span),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptedText":
        return cls(d["text"], tuple(d["premise_span"]), tuple(d["hypothesis_span"]))


def unify(example: QAExample | NLIExample, strategy: PromptStrategy = PromptStrategy.PROMPT) -> list[EntailmentPair]:
    """Turn one dataset record into premise/hypothesis pairs.

    Retrieval examples give one pair per positive passage; the hypothesis is the
    existence claim (or, for the concat ablation, the raw question). NLI examples
    contribute only when labelled entail.
    """
    if isinstance(example, NLIExample):
        if example.label is not NLILabel.ENTAIL:
            return []
        return [EntailmentPair(example.premise, example.hypothesis, PairOrigin.NLI)]
    if PromptStrategy(strategy) is PromptStrategy.CONCAT:
        hypothesis = example.question
    else:
        hypothesis = question_to_claim(example.question).text
    return [EntailmentPair(p.text, hypothesis, PairOrigin.RETRIEVAL) for p in example.positive_passages]


def unify_all(
    examples: Iterable[QAExample | NLIExample], strategy: PromptStrategy = PromptStrategy.PROMPT
) -> list[EntailmentPair]:
    return [pair for ex in examples for pair in unify(ex, strategy)]


def _join(pair: EntailmentPair, glue: str) -> PromptedText:
    p_end = len(pair.premise)
    h_start = p_end + len(glue)
    return PromptedText(pair.premise + glue + pair.hypothesis, (0, p_end), (h_start, h_start + len(pair.hypothesis)))


def assemble(pair: EntailmentPair) -> PromptedText:
    return _join(pair, CONNECTIVE)


def assemble_concat(pair: EntailmentPair) -> PromptedText:
    return _join(pair, SEPARATOR)


def render(pair: EntailmentPair, strategy: PromptStrategy = PromptStrategy.PROMPT) -> PromptedText:
    if PromptStrategy(strategy) is PromptStrategy.CONCAT:
        return assemble_concat(pair)
    return assemble(pair)


def mix(pairs: Sequence[EntailmentPair], seed: int) -> list[EntailmentPair]:
    """Pool pairs from every source and shuffle them once with a seeded RNG."""
    out = list(pairs)
    random.Random(seed).shuffle(out)
    return out
