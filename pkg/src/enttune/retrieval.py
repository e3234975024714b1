"""Exact inner-product index, top-k search and retrieval metrics."""

from __future__ import annotations

import json
import re
import string
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .data import Corpus, QAExample
from .model import Encoder

EMBEDDING_MAGIC = b"ENTEMB\x00\x01"
EMBEDDING_VERSION = 1
DEFAULT_HITS_CUTOFFS = (1, 5, 20, 50, 100)
DEFAULT_MRR_CUTOFFS = (10, 100)


class EmbeddingMatrix:
    """Row-aligned passage ids and an (n, d) float32 matrix."""

    def __init__(self, ids: Sequence[str], vectors):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D matrix")
        if len(ids) != vectors.shape[0]:
            raise ValueError(f"{len(ids)} ids for {vectors.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ValueError("passage ids must be unique")
        self.ids = [str(i) for i in ids]
        self.vectors = vectors
        # position of each row in ascending-id order, for tie-breaking
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def save(self, path: str | Path) -> None:
        """Header {n, d, version} as JSON, row-major little-endian float32 payload, then the id table."""
        id_blob = json.dumps(self.ids, ensure_ascii=False).encode("utf-8")
        header = json.dumps(
            {"n": len(self.ids), "d": self.dim, "version": EMBEDDING_VERSION, "id_bytes": len(id_blob)}, sort_keys=True
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(EMBEDDING_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(self.vectors.astype("<f4").tobytes(order="C"))
            fh.write(id_blob)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        with open(path, "rb") as fh:
            if fh.read(len(EMBEDDING_MAGIC)) != EMBEDDING_MAGIC:
                raise ValueError(f"{path} is not an embedding file")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen))
            if header["version"] != EMBEDDING_VERSION:
                raise ValueError(f"unsupported embedding file version {header['version']}")
            n, d = header["n"], header["d"]
            vectors = np.frombuffer(fh.read(4 * n * d), dtype="<f4").reshape(n, d)
            ids = json.loads(fh.read(header["id_bytes"]))
        return cls(ids, vectors.astype(np.float32))


@dataclass(frozen=True)
class SearchResult:
    query_id: str
    passage_ids: tuple[str, ...]
    scores: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "passage_ids": list(self.passage_ids), "scores": list(self.scores)}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchResult":
        return cls(d["query_id"], tuple(d["passage_ids"]), tuple(d["scores"]))


@torch.no_grad()
def encode_corpus(encoder: Encoder, corpus: Corpus | Sequence, batch_size: int = 64) -> EmbeddingMatrix:
    passages = list(corpus)
    if not passages:
        raise ValueError("corpus is empty")
    encoder.eval()
    rows = []
    for b in range(0, len(passages), batch_size):
        chunk = passages[b : b + batch_size]
        vecs = encoder.encode_texts([p.text for p in chunk]).cpu().numpy()
        if rows and vecs.shape[1] != rows[0].shape[1]:
            raise ValueError("encoder output dimension changed while encoding the corpus")
        rows.append(vecs)
    return EmbeddingMatrix([p.id for p in passages], np.concatenate(rows))


@torch.no_grad()
def encode_queries(encoder: Encoder, questions: Sequence[str], batch_size: int = 64) -> np.ndarray:
    encoder.eval()
    out = [encoder.encode_texts(list(questions[b : b + batch_size])).cpu().numpy() for b in range(0, len(questions), batch_size)]
    return np.concatenate(out).astype(np.float32)


def search(index: EmbeddingMatrix, query_vec, k: int, query_id: str = "") -> SearchResult:
    """Top-k passages by inner product, descending; ties go to the smaller passage id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64).ravel()
    if q.shape[0] != index.dim:
        raise ValueError(f"query dimension {q.shape[0]} != index dimension {index.dim}")
    # a row-wise reduction gives bit-identical scores to identical rows; BLAS gemv does not
    # guarantee that, which would let rounding noise override the id tie-break
    scores = (index.vectors.astype(np.float64) * q).sum(axis=1)
    order = np.lexsort((index._id_rank, -scores))[:k]
    return SearchResult(query_id, tuple(index.ids[i] for i in order), tuple(float(scores[i]) for i in order))


def search_many(index: EmbeddingMatrix, query_vecs, k: int, query_ids: Sequence[str]) -> list[SearchResult]:
    return [search(index, v, k, qid) for v, qid in zip(np.asarray(query_vecs), query_ids)]


# ---------------------------------------------------------------------------
# relevance


_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def _answer_tokens(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def has_answer(passage_text: str, answers: Iterable[str]) -> bool:
    """True if any answer appears as a contiguous token run in the passage."""
    tokens = _answer_tokens(passage_text)
    for ans in answers:
        a = _answer_tokens(ans)
        if a and any(tokens[i : i + len(a)] == a for i in range(len(tokens) - len(a) + 1)):
            return True
    return False


def answer_relevance(examples: Sequence[QAExample], corpus: Corpus) -> dict[str, set[str]]:
    return {ex.id: {p.id for p in corpus if has_answer(p.text, ex.answers)} for ex in examples}


def labeled_relevance(examples: Sequence[QAExample]) -> dict[str, set[str]]:
    return {ex.id: {p.id for p in ex.positive_passages} for ex in examples}


# ---------------------------------------------------------------------------
# metrics


def _check_keys(results: Sequence[SearchResult], relevant: Mapping[str, set]) -> None:
    ids = [r.query_id for r in results]
    unknown = set(relevant) - set(ids)
    missing = set(ids) - set(relevant)
    if unknown:
        raise KeyError(f"relevance map names unknown query ids: {sorted(unknown)[:5]}")
    if missing:
        raise KeyError(f"no relevance judgements for query ids: {sorted(missing)[:5]}")


def first_relevant_ranks(results: Sequence[SearchResult], relevant: Mapping[str, set]) -> dict[str, int | None]:
    _check_keys(results, relevant)
    ranks: dict[str, int | None] = {}
    for r in results:
        rel = relevant[r.query_id]
        ranks[r.query_id] = next((i for i, pid in enumerate(r.passage_ids, start=1) if pid in rel), None)
    return ranks


def hits_at_k(results: Sequence[SearchResult], relevant: Mapping[str, set], k: int) -> float:
    ranks = first_relevant_ranks(results, relevant)
    if not ranks:
        return 0.0
    return sum(1 for r in ranks.values() if r is not None and r <= k) / len(ranks)


def mrr_at(results: Sequence[SearchResult], relevant: Mapping[str, set], n: int) -> float:
    ranks = first_relevant_ranks(results, relevant)
    if not ranks:
        return 0.0
    return sum(1.0 / r for r in ranks.values() if r is not None and r <= n) / len(ranks)


@dataclass
class EvalReport:
    hits_at_k: dict[int, float]
    mrr_at: dict[int, float]
    ranks: dict[str, int | None]
    relevance_mode: str
    num_queries: int = field(init=False)

    def __post_init__(self):
        self.num_queries = len(self.ranks)

    def to_dict(self) -> dict:
        return {
            "hits_at_k": {str(k): v for k, v in sorted(self.hits_at_k.items())},
            "mrr_at": {str(k): v for k, v in sorted(self.mrr_at.items())},
            "ranks": dict(sorted(self.ranks.items())),
            "relevance_mode": self.relevance_mode,
            "num_queries": self.num_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            {int(k): v for k, v in d["hits_at_k"].items()},
            {int(k): v for k, v in d["mrr_at"].items()},
            dict(d["ranks"]),
            d["relevance_mode"],
        )


def evaluate(
    results: Sequence[SearchResult],
    relevant: Mapping[str, set],
    relevance_mode: str,
    hits_cutoffs: Sequence[int] = DEFAULT_HITS_CUTOFFS,
    mrr_cutoffs: Sequence[int] = DEFAULT_MRR_CUTOFFS,
) -> EvalReport:
    ranks = first_relevant_ranks(results, relevant)
    n = len(ranks) or 1
    hits = {k: sum(1 for r in ranks.values() if r is not None and r <= k) / n for k in hits_cutoffs}
    mrr = {c: sum(1.0 / r for r in ranks.values() if r is not None and r <= c) / n for c in mrr_cutoffs}
    return EvalReport(hits, mrr, ranks, relevance_mode)
