"""Score-separation studies: NLI entailment probability and retriever similarity by relation type."""

from __future__ import annotations

import csv
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
import torch

from .claims import STOPWORDS, question_to_claim
from .data import NLIExample, NLILabel, QAExample


class NLIScorer(Protocol):
    def __call__(self, premise: str, hypothesis: str) -> float: ...


class ScoringError(RuntimeError):
    def __init__(self, premise: str, hypothesis: str, cause: Exception):
        self.premise, self.hypothesis = premise, hypothesis
        super().__init__(f"scoring failed for pair (premise={premise[:60]!r}, hypothesis={hypothesis[:60]!r}): {cause}")


_WORD = re.compile(r"\w+")
_TEMPLATE_WORDS = frozenset("exists known time reason person place way answer question whether".split())


class LexicalNLIScorer:
    """Fraction of the hypothesis's content words found in the premise.

    A deterministic stand-in for a trained NLI classifier.
    """

    def __call__(self, premise: str, hypothesis: str) -> float:
        p = set(_WORD.findall(premise.lower()))
        h = [w for w in _WORD.findall(hypothesis.lower()) if w not in STOPWORDS and w not in _TEMPLATE_WORDS]
        if not h:
            return 0.0
        return sum(w in p for w in h) / len(h)


class TransformersNLIScorer:
    """Adapter for a pretrained sequence-classification NLI model (loaded lazily)."""

    def __init__(self, model_name: str, device: str = "cpu"):
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForSequenceClassification.from_pretrained(model_name).to(device).eval()
        self.device = device
        labels = {v.lower(): int(k) for k, v in self.model.config.id2label.items()}
        match = [i for name, i in labels.items() if name.startswith("entail")]
        if not match:
            raise ValueError(f"{model_name} has no entailment label: {sorted(labels)}")
        self.entail_index = match[0]

    @torch.no_grad()
    def __call__(self, premise: str, hypothesis: str) -> float:
        enc = self.tokenizer(premise, hypothesis, truncation=True, return_tensors="pt").to(self.device)
        probs = self.model(**enc).logits.softmax(-1)[0]
        return float(probs[self.entail_index])


@dataclass(frozen=True)
class RelationTriple:
    hypothesis: str
    entail_premise: str
    neutral_premise: str
    irrelevant_premise: str

    def __post_init__(self):
        if not all(s.strip() for s in (self.hypothesis, self.entail_premise, self.neutral_premise, self.irrelevant_premise)):
            raise ValueError("all triple fields must be non-empty")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SeparationReport:
    groups: dict[str, list[float]]
    bins: int = 20
    means: dict[str, float] = field(init=False)
    sizes: dict[str, int] = field(init=False)
    gaps: dict[str, float] = field(init=False)
    histogram: dict = field(init=False)

    def __post_init__(self):
        self.sizes = {g: len(v) for g, v in self.groups.items()}
        # fsum makes the means exactly independent of input order
        self.means = {g: math.fsum(v) / len(v) if v else float("nan") for g, v in self.groups.items()}
        self.gaps = {f"{a}-{b}": self.means[a] - self.means[b] for a, b in itertools.combinations(self.groups, 2)}
        values = [x for v in self.groups.values() for x in v]
        lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, self.bins + 1)
        self.histogram = {
            "edges": edges.tolist(),
            "counts": {g: np.histogram(v, bins=edges)[0].tolist() for g, v in self.groups.items()},
        }

    @property
    def mean_difference(self) -> float:
        """Gap between the first two groups."""
        return next(iter(self.gaps.values()))

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "means": self.means,
            "gaps": self.gaps,
            "histogram": self.histogram,
            "groups": self.groups,
        }

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["group", "index", "score"])
                for g, vals in self.groups.items():
                    for i, s in enumerate(vals):
                        w.writerow([g, i, repr(float(s))])


def _score(scorer: Callable[[str, str], float], premise: str, hypothesis: str) -> float:
    try:
        value = float(scorer(premise, hypothesis))
    except Exception as exc:  # noqa: BLE001 - re-raised with the pair attached
        raise ScoringError(premise, hypothesis, exc) from exc
    if not 0.0 <= value <= 1.0:
        raise ScoringError(premise, hypothesis, ValueError(f"probability {value} outside [0,1]"))
    return value


def nli_separation_study(scorer: NLIScorer, examples: Sequence[QAExample], bins: int = 20) -> SeparationReport:
    """Entailment probability of the question's claim given positive vs negative passages."""
    positive, negative = [], []
    for ex in examples:
        claim = question_to_claim(ex.question).text
        positive.extend(_score(scorer, p.text, claim) for p in ex.positive_passages)
        negative.extend(_score(scorer, p.text, claim) for p in ex.negative_passages)
    return SeparationReport({"positive": positive, "negative": negative}, bins=bins)


def _encode(encoder, texts: Sequence[str]) -> np.ndarray:
    if hasattr(encoder, "encode_texts"):
        with torch.no_grad():
            encoder.eval()
            return encoder.encode_texts(list(texts)).cpu().numpy().astype(np.float64)
    return np.asarray(encoder(list(texts)), dtype=np.float64)


def retriever_separation_study(query_encoder, passage_encoder, triples: Sequence[RelationTriple], bins: int = 20) -> SeparationReport:
    """Similarity of each hypothesis to its entail, neutral and irrelevant premises.

    Encoders are ``Encoder`` instances or callables mapping a list of texts to a 2-D array.
    """
    if not triples:
        raise ValueError("no triples to score")
    hyp = _encode(query_encoder, [t.hypothesis for t in triples])
    groups = {}
    for name, attr in (("entail", "entail_premise"), ("neutral", "neutral_premise"), ("irrelevant", "irrelevant_premise")):
        prem = _encode(passage_encoder, [getattr(t, attr) for t in triples])
        groups[name] = [float(x) for x in np.einsum("ij,ij->i", hyp, prem)]
    return SeparationReport(groups, bins=bins)


def build_relation_triples(
    nli: Sequence[NLIExample], irrelevant_pool: Sequence[str], seed: int = 0
) -> list[RelationTriple]:
    """Pair each hypothesis's entail premise with a neutral premise for the same hypothesis,
    and a premise drawn uniformly from ``irrelevant_pool``."""
    if not irrelevant_pool:
        raise ValueError("irrelevant pool is empty")
    by_hyp: dict[str, dict[NLILabel, str]] = {}
    for ex in nli:
        by_hyp.setdefault(ex.hypothesis, {}).setdefault(ex.label, ex.premise)
    rng = np.random.default_rng(seed)
    triples = []
    for hyp, prem in by_hyp.items():
        if NLILabel.ENTAIL in prem and NLILabel.NEUTRAL in prem:
            irrelevant = irrelevant_pool[int(rng.integers(len(irrelevant_pool)))]
            triples.append(RelationTriple(hyp, prem[NLILabel.ENTAIL], prem[NLILabel.NEUTRAL], irrelevant))
    return triples


def load_triples(path: str | Path) -> list[RelationTriple]:
    with open(path, encoding="utf-8") as fh:
        return [RelationTriple(**json.loads(line)) for line in fh if line.strip()]


def summarize(reports: Mapping[str, SeparationReport]) -> dict:
    return {name: {"means": r.means, "gaps": r.gaps, "sizes": r.sizes} for name, r in reports.items()}
