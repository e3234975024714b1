"""Deterministic toy world for end-to-end runs.

Made-up entities carry five facts (birth year, home city, mentor, reason for
leaving, means of travel). A fact can be written in a plain phrasing that
shares vocabulary with its question ("born", "live", ...) or in an alternative
phrasing that does not ("came into this world"). Every fact also has a
distractor passage that repeats the question's words without answering it.

For each QA entity one fact is held out for evaluation and written in the
alternative phrasing; its other facts are plain and form the training
questions. A disjoint group of NLI entities appears only in premise/hypothesis
pairs, in both phrasings, so the link between alternative phrasing and
question vocabulary reaches a model only through NLI data.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .claims import question_to_claim
from .data import Corpus, NLIExample, NLILabel, PassageRecord, QAExample, write_jsonl

_ONSETS = "b d f g k l m n p r s t v z br dr gr kr pl st tr".split()
_VOWELS = "a e i o u".split()
_CODAS = "k l m n r s x".split()

CITIES = "ardena belmar corvik dunmere elstow farrow galen harrow".split()
VEHICLES = "boat horse cart sled wagon barge".split()
REASONS = "flood war famine drought fire plague".split()
YEARS = [str(y) for y in range(1801, 1821)]


@dataclass(frozen=True)
class Relation:
    name: str
    question: str
    plain: str
    alternative: str
    distractor: str
    values: tuple[str, ...]  # empty: value is another made-up name


RELATIONS = (
    Relation(
        "birth",
        "when was {e} born?",
        "{e} was born in the year {v} .",
        "{e} came into this world during {v} .",
        "{e} often asked strangers when they were born .",
        tuple(YEARS),
    ),
    Relation(
        "home",
        "where does {e} live?",
        "{e} lives in the city of {v} .",
        "{e} keeps a house and family in {v} .",
        "{e} wonders where the old city people live .",
        tuple(CITIES),
    ),
    Relation(
        "mentor",
        "who trained {e}?",
        "{e} was trained by {v} as a child .",
        "{v} taught {e} everything while young .",
        "{e} asked who trained the other children .",
        (),
    ),
    Relation(
        "reason",
        "why did {e} leave home?",
        "{e} had to leave home because of the {v} .",
        "the {v} forced {e} to go far away .",
        "{e} asked why others leave home .",
        tuple(REASONS),
    ),
    Relation(
        "travel",
        "how does {e} travel?",
        "{e} likes to travel by {v} every week .",
        "{e} gets around on a {v} each week .",
        "{e} asked how others travel .",
        tuple(VEHICLES),
    ),
)


@dataclass
class SyntheticWorld:
    train: list[QAExample]
    dev: list[QAExample]
    corpus: Corpus
    nli: list[NLIExample]

    def write(self, directory: str | Path) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {name: directory / f"{name}.jsonl" for name in ("train", "dev", "corpus", "nli")}
        write_jsonl(paths["train"], self.train)
        write_jsonl(paths["dev"], self.dev)
        write_jsonl(paths["corpus"], self.corpus)
        write_jsonl(paths["nli"], self.nli)
        return paths


def _names(rng: random.Random, n: int) -> list[str]:
    seen: set[str] = set()
    out = []
    while len(out) < n:
        name = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(2)) + rng.choice(_CODAS)
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


def make_world(
    n_entities: int = 60,
    n_nli_entities: int = 40,
    seed: int = 0,
    relations: tuple[Relation, ...] = RELATIONS,
) -> SyntheticWorld:
    rng = random.Random(seed)
    total = n_entities + n_nli_entities
    names = _names(rng, 2 * total)
    entities, mentors = names[:total], names[total:]
    passages: list[PassageRecord] = []
    train: list[QAExample] = []
    dev: list[QAExample] = []
    nli: list[NLIExample] = []
    for ei, e in enumerate(entities[:n_entities]):
        held_out = rng.randrange(len(relations))
        for ri, rel in enumerate(relations):
            v = mentors[ei] if not rel.values else rng.choice(rel.values)
            template = rel.alternative if ri == held_out else rel.plain
            pos = PassageRecord(id=f"{e}-{rel.name}", body=template.format(e=e, v=v))
            neg = PassageRecord(id=f"{e}-{rel.name}-x", body=rel.distractor.format(e=e))
            passages += [pos, neg]
            (dev if ri == held_out else train).append(
                QAExample(
                    question=rel.question.format(e=e),
                    answers=(v,),
                    positive_passages=(pos,),
                    negative_passages=(neg,),
                    id=f"{e}-{rel.name}",
                    metadata={"entity": e, "relation": rel.name, "negatives": "distractor"},
                )
            )
    for ei, e in enumerate(entities[n_entities:], start=n_entities):
        for rel in relations:
            v = mentors[ei] if not rel.values else rng.choice(rel.values)
            claim = question_to_claim(rel.question.format(e=e)).text
            nli.append(NLIExample(rel.plain.format(e=e, v=v), claim, NLILabel.ENTAIL))
            nli.append(NLIExample(rel.alternative.format(e=e, v=v), claim, NLILabel.ENTAIL))
            nli.append(NLIExample(rel.distractor.format(e=e), claim, NLILabel.NEUTRAL))
    rng.shuffle(passages)
    rng.shuffle(nli)
    return SyntheticWorld(train, dev, Corpus(passages), nli)
