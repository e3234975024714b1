"""Rule-based rewriting of questions into existence claims."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .data import normalize_whitespace


class QuestionCategory(str, enum.Enum):
    WHEN = "When"
    WHY = "Why"
    WHO = "Who"
    WHERE = "Where"
    DOES = "Does"
    HOW = "How"
    OTHER = "Other"


AUXILIARIES = frozenset(
    {"did", "do", "does", "was", "were", "is", "are", "will", "can", "could", "has", "have", "had"}
)

# first token (lower-cased) -> category
_OPENERS = {
    "when": QuestionCategory.WHEN,
    "why": QuestionCategory.WHY,
    "who": QuestionCategory.WHO,
    "where": QuestionCategory.WHERE,
    "how": QuestionCategory.HOW,
    "does": QuestionCategory.DOES,
    "do": QuestionCategory.DOES,
    "did": QuestionCategory.DOES,
}

_TEMPLATES = {
    QuestionCategory.WHEN: "There exists a known time when {rest}.",
    QuestionCategory.WHY: "There exists a known reason why {rest}.",
    QuestionCategory.WHO: "There exists a known person who {rest}.",
    QuestionCategory.WHERE: "There exists a known place where {rest}.",
    QuestionCategory.HOW: "There exists a known way how {rest}.",
    QuestionCategory.DOES: "It is known whether {question}.",
    QuestionCategory.OTHER: "There exists a known answer to the question: {question}.",
}

STOPWORDS = frozenset(
    """a an the of in on at to for by with from and or but is are was were be been being do does did
    has have had will would can could shall should may might must it its this that these those
    what which who whom whose when where why how there""".split()
)

_WORD = re.compile(r"\w+")


@dataclass(frozen=True)
class ExistenceClaim:
    text: str
    category: QuestionCategory
    source_question: str

    def to_dict(self) -> dict:
        return {"question": self.source_question, "category": self.category.value, "claim": self.text}


def _first_token(question: str) -> str:
    tokens = question.split(maxsplit=1)
    return tokens[0].lower().strip(",.?!") if tokens else ""


def classify_question(question: str) -> QuestionCategory:
    return _OPENERS.get(_first_token(normalize_whitespace(question)), QuestionCategory.OTHER)


def _strip_terminal(text: str) -> str:
    return text.rstrip(" ?.!").rstrip()


def question_remainder(question: str) -> str:
    """Drop the leading wh-word and one directly following auxiliary, if any."""
    tokens = _strip_terminal(normalize_whitespace(question)).split(" ")
    rest = tokens[1:]
    if rest and rest[0].lower() in AUXILIARIES:
        rest = rest[1:]
    return " ".join(rest)


def question_to_claim(question: str) -> ExistenceClaim:
    question = normalize_whitespace(question)
    category = classify_question(question)
    template = _TEMPLATES[category]
    if "{rest}" in template:
        rest = question_remainder(question)
        # a bare wh-word leaves nothing to attach the connective to, so drop it too
        text = template.format(rest=rest) if rest else re.sub(r" \w+ \{rest\}", "", template)
    else:
        text = template.format(question=_strip_terminal(question))
    return ExistenceClaim(text=text, category=category, source_question=question)


def content_words(question: str) -> list[str]:
    """Lower-cased content tokens of a question, excluding its wh/aux opener and stopwords."""
    question = normalize_whitespace(question)
    if classify_question(question) in (QuestionCategory.DOES, QuestionCategory.OTHER):
        body = _strip_terminal(question)
    else:
        body = question_remainder(question)
    return [w for w in _WORD.findall(body.lower()) if w not in STOPWORDS]
