import json

import numpy as np
import pytest

from enttune.data import Corpus, PassageRecord, QAExample
from enttune.retrieval import (
    EmbeddingMatrix,
    EvalReport,
    SearchResult,
    answer_relevance,
    encode_corpus,
    evaluate,
    has_answer,
    hits_at_k,
    labeled_relevance,
    mrr_at,
    search,
    search_many,
)


def brute_force(ids, vectors, q, k):
    scores = [sum(float(a) * float(b) for a, b in zip(row, q)) for row in vectors]
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order[:k]]


def random_index(rng, n, d, ties=True):
    vectors = rng.standard_normal((n, d)).astype(np.float32)
    if ties:
        # duplicate some rows and snap others onto a coarse grid so exact ties occur
        dup = rng.integers(n, size=n // 4)
        vectors[rng.integers(n, size=n // 4)] = vectors[dup]
        vectors[: n // 3] = np.round(vectors[: n // 3])
    ids = [f"p{int(i):04d}" for i in rng.permutation(10_000)[:n]]
    return ids, vectors


def test_unit_vector_ranked_first():
    index = EmbeddingMatrix(["a", "b", "c"], np.eye(3))
    res = search(index, [0, 1, 0], k=1, query_id="q")
    assert res.passage_ids == ("b",) and res.scores == (1.0,)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for trial in range(100):
        n, d = int(rng.integers(2, 201)), int(rng.integers(1, 65))
        ids, vectors = random_index(rng, n, d)
        q = np.round(rng.standard_normal(d)) if trial % 2 else rng.standard_normal(d)
        k = int(rng.integers(1, n + 5))
        res = search(EmbeddingMatrix(ids, vectors), q, k)
        assert list(res.passage_ids) == brute_force(ids, vectors, q, k)
        assert list(res.scores) == sorted(res.scores, reverse=True)


def test_tie_broken_by_ascending_id():
    index = EmbeddingMatrix(["b", "a", "c"], [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert search(index, [1, 0], 3).passage_ids == ("a", "b", "c")


def test_k_larger_than_corpus():
    index = EmbeddingMatrix(["a", "b"], np.eye(2))
    assert len(search(index, [1, 1], 10).passage_ids) == 2


def test_search_argument_errors():
    index = EmbeddingMatrix(["a", "b"], np.eye(2))
    with pytest.raises(ValueError):
        search(index, [1, 0], 0)
    with pytest.raises(ValueError, match="dimension"):
        search(index, [1, 0, 0], 1)
    with pytest.raises(ValueError, match="unique"):
        EmbeddingMatrix(["a", "a"], np.eye(2))


def test_embedding_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    index = EmbeddingMatrix(["x", "y", "é"], rng.standard_normal((3, 5)))
    index.save(tmp_path / "emb.bin")
    loaded = EmbeddingMatrix.load(tmp_path / "emb.bin")
    assert loaded.ids == index.ids
    assert np.array_equal(loaded.vectors, index.vectors)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        EmbeddingMatrix.load(tmp_path / "bad.bin")


def results_for(ranks: dict[str, int | None], depth=20):
    """SearchResults whose first relevant passage ("rel") sits at the given rank."""
    out = []
    for qid, rank in ranks.items():
        ids = [f"{qid}-x{i}" for i in range(depth)]
        if rank is not None:
            ids[rank - 1] = "rel"
        out.append(SearchResult(qid, tuple(ids), tuple(float(-i) for i in range(depth))))
    return out, {qid: {"rel"} for qid in ranks}


def test_metric_hand_cases():
    results, rel = results_for({"q": 3})
    assert hits_at_k(results, rel, 1) == 0.0 and hits_at_k(results, rel, 5) == 1.0
    results, rel = results_for({"a": 2, "b": 4})
    assert mrr_at(results, rel, 10) == 0.375
    results, rel = results_for({"q": 11})
    assert mrr_at(results, rel, 10) == 0.0
    results, rel = results_for({"q": 1})
    assert mrr_at(results, rel, 10) == 1.0
    results, rel = results_for({"a": 1, "b": 1})
    assert all(hits_at_k(results, rel, k) == 1.0 for k in (1, 5, 20))


def test_metrics_match_recount_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        nq = int(rng.integers(1, 30))
        results, relevant = [], {}
        for qi in range(nq):
            ranked = [f"d{i}" for i in rng.permutation(60)[:40]]
            relevant[f"q{qi}"] = {f"d{i}" for i in rng.choice(60, size=int(rng.integers(1, 4)), replace=False)}
            results.append(SearchResult(f"q{qi}", tuple(ranked), tuple(range(40, 0, -1))))
        for k in (1, 5, 20, 40):
            expected = sum(any(p in relevant[r.query_id] for p in r.passage_ids[:k]) for r in results) / nq
            assert hits_at_k(results, relevant, k) == expected
        for n in (10, 40):
            rr = []
            for r in results:
                hit = [i + 1 for i, p in enumerate(r.passage_ids[:n]) if p in relevant[r.query_id]]
                rr.append(1.0 / hit[0] if hit else 0.0)
            assert mrr_at(results, relevant, n) == pytest.approx(sum(rr) / nq, abs=1e-15)
        report = evaluate(results, relevant, "labeled", (1, 5, 20, 40), (10, 40))
        hits = [report.hits_at_k[k] for k in (1, 5, 20, 40)]
        assert hits == sorted(hits) and all(0 <= h <= 1 for h in hits)
        assert report.mrr_at[10] <= report.mrr_at[40]


def test_unknown_query_id_in_relevance_map():
    results, rel = results_for({"a": 1})
    with pytest.raises(KeyError):
        hits_at_k(results, {**rel, "zzz": {"rel"}}, 1)
    with pytest.raises(KeyError):
        mrr_at(results, {}, 10)


def test_corpus_permutation_invariance():
    rng = np.random.default_rng(3)
    ids, vectors = random_index(rng, 80, 8)
    queries = rng.standard_normal((15, 8))
    qids = [f"q{i}" for i in range(15)]
    relevant = {q: set(rng.choice(ids, size=2, replace=False)) for q in qids}
    perm = rng.permutation(80)
    a = evaluate(search_many(EmbeddingMatrix(ids, vectors), queries, 20, qids), relevant, "labeled")
    b = evaluate(search_many(EmbeddingMatrix([ids[i] for i in perm], vectors[perm]), queries, 20, qids), relevant, "labeled")
    assert a.to_json() == b.to_json()


def test_encode_corpus_shape_batching_and_duplicates(tiny_model):
    corpus = [PassageRecord(f"p{i}", t) for i, t in enumerate(["w1 w2", "w3 w4 w5", "w1 w2", "w6", "w7 w8 w9 w10"])]
    one = encode_corpus(tiny_model, corpus, batch_size=1)
    eight = encode_corpus(tiny_model, corpus, batch_size=8)
    assert one.vectors.shape == (5, 32)
    assert np.allclose(one.vectors, eight.vectors, atol=1e-5)
    assert np.array_equal(eight.vectors[0], eight.vectors[2])
    with pytest.raises(ValueError):
        encode_corpus(tiny_model, [])


def test_answer_relevance():
    assert has_answer("He was born in 1801, in Ardena.", ["ardena"])
    assert has_answer("the Berlin  Wall fell", ["berlin wall"])
    assert not has_answer("Berliner walls", ["berlin wall"])
    corpus = Corpus([PassageRecord("a", "Paris is big."), PassageRecord("b", "Rome is old."), PassageRecord("c", "I love paris!")])
    ex = QAExample("where?", ("Paris",), (PassageRecord("a", "Paris is big."),), (), id="q")
    assert answer_relevance([ex], corpus) == {"q": {"a", "c"}}
    assert labeled_relevance([ex]) == {"q": {"a"}}


def test_eval_report_json_round_trip():
    results, rel = results_for({"a": 2, "b": None})
    report = evaluate(results, rel, "answer")
    d = json.loads(report.to_json())
    assert d["relevance_mode"] == "answer" and d["num_queries"] == 2
    assert d["ranks"] == {"a": 2, "b": None}
    assert EvalReport.from_dict(d).to_json() == report.to_json()
    assert set(d["hits_at_k"]) == {"1", "5", "20", "50", "100"}
    assert set(d["mrr_at"]) == {"10", "100"}
