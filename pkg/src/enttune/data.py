"""Dataset records and JSON-lines loaders for QA-retrieval and NLI data."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence


class DatasetError(ValueError):
    """A record could not be parsed. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class SchemaError(DatasetError):
    pass


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


class NLILabel(str, enum.Enum):
    ENTAIL = "entail"
    NEUTRAL = "neutral"
    CONTRADICT = "contradict"


LABEL_ALIASES = {
    "entail": NLILabel.ENTAIL,
    "entailment": NLILabel.ENTAIL,
    "neutral": NLILabel.NEUTRAL,
    "contradict": NLILabel.CONTRADICT,
    "contradiction": NLILabel.CONTRADICT,
}


def parse_label(value: Any) -> NLILabel:
    if isinstance(value, NLILabel):
        return value
    if not isinstance(value, str) or value not in LABEL_ALIASES:
        raise SchemaError(f"unknown NLI label {value!r}", field="label")
    return LABEL_ALIASES[value]


@dataclass(frozen=True)
class PassageRecord:
    id: str
    body: str
    title: str | None = None
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.id:
            raise SchemaError("passage id must be non-empty", field="id")
        if not self.body or not self.body.strip():
            raise SchemaError(f"passage {self.id!r} has an empty body", field="body")

    @property
    def text(self) -> str:
        """Title and body joined, as fed to the passage encoder."""
        if self.title:
            return f"{self.title} {self.body}"
        return self.body

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"id": self.id, "title": self.title, "body": self.body}
        if self.metadata:
            d["metadata"] = self.metadata
        return d


@dataclass(frozen=True)
class QAExample:
    question: str
    answers: tuple[str, ...] = ()
    positive_passages: tuple[PassageRecord, ...] = ()
    negative_passages: tuple[PassageRecord, ...] = ()
    id: str | None = None
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not normalize_whitespace(self.question):
            raise SchemaError("question must be non-empty", field="question")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "question": self.question,
            "answers": list(self.answers),
            "positive_passages": [p.to_dict() for p in self.positive_passages],
            "negative_passages": [p.to_dict() for p in self.negative_passages],
        }
        if self.id is not None:
            d["id"] = self.id
        if self.metadata:
            d["metadata"] = self.metadata
        return d


@dataclass(frozen=True)
class NLIExample:
    premise: str
    hypothesis: str
    label: NLILabel

    def __post_init__(self):
        if not normalize_whitespace(self.premise):
            raise SchemaError("premise must be non-empty", field="premise")
        if not normalize_whitespace(self.hypothesis):
            raise SchemaError("hypothesis must be non-empty", field="hypothesis")
        object.__setattr__(self, "label", parse_label(self.label))

    def to_dict(self) -> dict:
        return {"premise": self.premise, "hypothesis": self.hypothesis, "label": self.label.value}


class Corpus:
    """Ordered, id-unique passage collection."""

    def __init__(self, passages: Iterable[PassageRecord]):
        self.passages: tuple[PassageRecord, ...] = tuple(passages)
        self._by_id: dict[str, PassageRecord] = {}
        for p in self.passages:
            if p.id in self._by_id:
                raise SchemaError(f"duplicate passage id {p.id!r}", field="id")
            self._by_id[p.id] = p

    def __len__(self) -> int:
        return len(self.passages)

    def __iter__(self) -> Iterator[PassageRecord]:
        return iter(self.passages)

    def __getitem__(self, pid: str) -> PassageRecord:
        return self._by_id[pid]

    def __contains__(self, pid: object) -> bool:
        return pid in self._by_id

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.passages]


# ---------------------------------------------------------------------------
# parsing


def _require(record: dict, name: str, kind: type | tuple[type, ...]):
    if name not in record:
        raise SchemaError(f"missing required field {name!r}", field=name)
    value = record[name]
    if not isinstance(value, kind):
        raise SchemaError(f"field {name!r} has wrong type {type(value).__name__}", field=name)
    return value


def passage_from_dict(record: dict) -> PassageRecord:
    if not isinstance(record, dict):
        raise SchemaError("passage must be an object", field="passage")
    pid = _require(record, "id", (str, int))
    body = normalize_whitespace(_require(record, "body", str))
    title = record.get("title")
    if title is not None:
        if not isinstance(title, str):
            raise SchemaError("field 'title' must be a string", field="title")
        title = normalize_whitespace(title) or None
    metadata = record.get("metadata") or {}
    return PassageRecord(id=str(pid), body=body, title=title, metadata=dict(metadata))


def qa_from_dict(record: dict, require_positive: bool = True) -> QAExample:
    if not isinstance(record, dict):
        raise SchemaError("record must be a JSON object")
    question = normalize_whitespace(_require(record, "question", str))
    answers = _require(record, "answers", list)
    positives = _require(record, "positive_passages", list)
    negatives = record.get("negative_passages", [])
    if not isinstance(negatives, list):
        raise SchemaError("field 'negative_passages' must be a list", field="negative_passages")
    if require_positive and not positives:
        raise SchemaError("training example needs at least one positive passage", field="positive_passages")
    qid = record.get("id")
    return QAExample(
        question=question,
        answers=tuple(normalize_whitespace(str(a)) for a in answers),
        positive_passages=tuple(passage_from_dict(p) for p in positives),
        negative_passages=tuple(passage_from_dict(p) for p in negatives),
        id=None if qid is None else str(qid),
        metadata=dict(record.get("metadata") or {}),
    )


def nli_from_dict(record: dict) -> NLIExample:
    if not isinstance(record, dict):
        raise SchemaError("record must be a JSON object")
    return NLIExample(
        premise=normalize_whitespace(_require(record, "premise", str)),
        hypothesis=normalize_whitespace(_require(record, "hypothesis", str)),
        label=parse_label(_require(record, "label", str)),
    )


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, object) for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON: {exc.msg}", line=lineno) from None


def _load(path, parse) -> list:
    out = []
    for lineno, record in iter_jsonl(path):
        try:
            out.append(parse(record))
        except DatasetError as exc:
            cls = type(exc)
            raise cls(str(exc), line=lineno, field=exc.field) from None
    return out


def load_qa_dataset(path: str | Path, require_positive: bool = True) -> list[QAExample]:
    return _load(path, lambda r: qa_from_dict(r, require_positive=require_positive))


def load_nli_dataset(path: str | Path) -> list[NLIExample]:
    return _load(path, nli_from_dict)


def load_corpus(path: str | Path) -> Corpus:
    return Corpus(_load(path, passage_from_dict))


def write_jsonl(path: str | Path, records: Iterable[Any]) -> None:
    """Write dicts (or objects with ``to_dict``) one per line, with stable key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            if hasattr(r, "to_dict"):
                r = r.to_dict()
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def chunk_document(
    text: str, words_per_chunk: int = 100, id_prefix: str = "chunk", title: str | None = None
) -> list[PassageRecord]:
    """Split text into passages of ``words_per_chunk`` whitespace tokens (last may be shorter)."""
    if words_per_chunk < 1:
        raise ValueError("words_per_chunk must be >= 1")
    words = text.split()
    return [
        PassageRecord(id=f"{id_prefix}-{i // words_per_chunk}", body=" ".join(words[i : i + words_per_chunk]), title=title)
        for i in range(0, len(words), words_per_chunk)
    ]


def assign_query_ids(examples: Sequence[QAExample], prefix: str = "q") -> list[QAExample]:
    """Give id-less examples a positional id so results can be keyed."""
    from dataclasses import replace

    return [ex if ex.id is not None else replace(ex, id=f"{prefix}{i}") for i, ex in enumerate(examples)]
