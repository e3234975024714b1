"""Stage orchestration with on-disk artifacts and a lineage manifest."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import torch
from filelock import FileLock, Timeout

from . import analysis as an
from .claims import question_to_claim
from .config import PipelineConfig, _file_digest, dump_tree
from .data import (
    assign_query_ids,
    iter_jsonl,
    load_corpus,
    load_nli_dataset,
    load_qa_dataset,
    write_jsonl,
)
from .finetune import DualEncoder, finetune
from .masking import build_instances
from .model import Encoder, EncoderConfig, load_checkpoint, save_checkpoint
from .prompts import EntailmentPair, PromptStrategy, mix, render, unify_all
from .retrieval import (
    EmbeddingMatrix,
    EvalReport,
    SearchResult,
    answer_relevance,
    encode_corpus,
    encode_queries,
    evaluate,
    labeled_relevance,
    search_many,
)
from .tokenizer import Tokenizer
from .trainer import entailment_tune

log = logging.getLogger(__name__)

STAGES = ("transform", "assemble", "tune", "finetune", "index", "search", "eval", "analyze")
MANIFEST = "manifest.json"

# artifacts each stage writes, relative to the run directory
OUTPUTS = {
    "init": ("base",),
    "transform": ("claims.jsonl",),
    "assemble": ("pairs.jsonl", "prompts.jsonl"),
    "tune": ("tuned", "trainlog.jsonl", "instances.jsonl"),
    "finetune": ("dual", "finetune_log.json"),
    "index": ("embeddings.bin",),
    "search": ("results.jsonl",),
    "eval": ("eval_report.json",),
    "analyze": ("analysis_nli.json", "analysis_nli.csv", "analysis_retriever.json", "analysis_retriever.csv"),
}


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    def __init__(self, stage: str, upstream: str, expected: Path):
        self.stage, self.upstream, self.expected = stage, upstream, expected
        super().__init__(f"stage {stage!r} needs output of stage {upstream!r}: missing {expected}")


@dataclass
class ManifestEntry:
    stage: str
    command: list[str]
    inputs: dict[str, str]
    outputs: dict[str, str]
    started: str
    finished: str
    seconds: float
    status: str = "completed"


@dataclass
class RunManifest:
    run_dir: Path
    config_hash: str
    config: dict
    entries: list[ManifestEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "run_dir": str(self.run_dir),
            "config_hash": self.config_hash,
            "config": self.config,
            "entries": [e.__dict__ for e in self.entries],
        }

    def save(self) -> None:
        (self.run_dir / MANIFEST).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, run_dir: Path) -> "RunManifest":
        d = json.loads((run_dir / MANIFEST).read_text())
        return cls(run_dir, d["config_hash"], d["config"], [ManifestEntry(**e) for e in d["entries"]])

    def latest(self, stage: str) -> ManifestEntry | None:
        return next((e for e in reversed(self.entries) if e.stage == stage), None)

    def commands(self) -> list[list[str]]:
        return [e.command for e in self.entries if e.status == "completed"]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Pipeline:
    """Runs stages of one configuration inside its config-hash-keyed run directory."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.run_dir = config.run_dir
        self._inputs: dict[str, str] = {}

    # -- helpers -----------------------------------------------------------

    def artifact(self, name: str) -> Path:
        return self.run_dir / name

    def _outputs_exist(self, stage: str) -> bool:
        return all(self.artifact(n).exists() for n in OUTPUTS[stage])

    def require(self, stage: str, upstream: str) -> None:
        for name in OUTPUTS[upstream]:
            path = self.artifact(name)
            if not path.exists():
                raise MissingArtifactError(stage, upstream, path)
            self._inputs[name] = _file_digest(path)

    def read_input(self, key: str) -> Path:
        path = self.config.path(key)
        self._inputs[f"paths.{key}"] = _file_digest(path)
        return path

    def train_examples(self, require_positive: bool = True):
        return assign_query_ids(load_qa_dataset(self.read_input("train"), require_positive), prefix="train-")

    def dev_examples(self):
        return assign_query_ids(load_qa_dataset(self.read_input("dev"), require_positive=False), prefix="dev-")

    def nli_examples(self):
        out = []
        for i, p in enumerate(self.config.nli_paths):
            self._inputs[f"paths.nli[{i}]"] = _file_digest(p)
            out.extend(load_nli_dataset(p))
        return out

    def corpus(self):
        return load_corpus(self.read_input("corpus"))

    # -- stages ------------------------------------------------------------

    def stage_init(self) -> None:
        init = self.config.path("init_checkpoint")
        if init is not None:
            self._inputs["paths.init_checkpoint"] = _file_digest(init)
            model = load_checkpoint(init)
        else:
            train, dev, corpus, nli = self.train_examples(), self.dev_examples(), self.corpus(), self.nli_examples()
            texts = [p.text for p in corpus]
            for ex in train + dev:
                texts.append(ex.question)
                texts.append(question_to_claim(ex.question).text)
                texts.extend(p.text for p in ex.positive_passages + ex.negative_passages)
            for ex in nli:
                texts += [ex.premise, ex.hypothesis]
            m = self.config.tree["model"]
            tokenizer = Tokenizer.build(texts, max_size=m["vocab_size"])
            cfg = EncoderConfig(
                vocab_size=len(tokenizer),
                hidden=m["hidden"],
                layers=m["layers"],
                heads=m["heads"],
                ffn=m["ffn"],
                max_len=m["max_len"],
                dropout=m["dropout"],
                pooling=m["pooling"],
            )
            torch.manual_seed(self.config.stage_seed("init"))
            model = Encoder(cfg, tokenizer)
        save_checkpoint(model, self.artifact("base"))

    def stage_transform(self) -> None:
        claims = [question_to_claim(ex.question) for ex in self.train_examples(require_positive=False)]
        write_jsonl(self.artifact("claims.jsonl"), claims)

    def stage_assemble(self) -> None:
        self.require("assemble", "transform")
        claims = {r["question"]: r["claim"] for _, r in iter_jsonl(self.artifact("claims.jsonl"))}
        strategy = self.config.strategy
        pairs = []
        for ex in self.train_examples():
            hyp = ex.question if strategy is PromptStrategy.CONCAT else claims[ex.question]
            pairs.extend(EntailmentPair(p.text, hyp, "retrieval") for p in ex.positive_passages)
        pairs.extend(unify_all(self.nli_examples(), strategy))
        pairs = mix(pairs, self.config.stage_seed("mask"))
        write_jsonl(self.artifact("pairs.jsonl"), pairs)
        write_jsonl(self.artifact("prompts.jsonl"), [render(p, strategy) for p in pairs])

    def _base_model(self, stage: str) -> Encoder:
        if not self._outputs_exist("init"):
            self._run_stage("init")
        self.require(stage, "init")
        return load_checkpoint(self.artifact("base"))

    def stage_tune(self) -> None:
        self.require("tune", "assemble")
        pairs = [EntailmentPair.from_dict(r) for _, r in iter_jsonl(self.artifact("pairs.jsonl"))]
        model = self._base_model("tune")
        cfg = self.config.tune
        save_every = self.config.tree["tune"]["save_every_epoch"]

        def checkpoint(epoch, m, _trace):
            if save_every:
                save_checkpoint(m, self.artifact("tuned") / f"epoch-{epoch + 1}")

        model, trace = entailment_tune(model, pairs, cfg, self.config.strategy, on_epoch_end=checkpoint)
        save_checkpoint(model, self.artifact("tuned"))
        trace.write_jsonl(self.artifact("trainlog.jsonl"))
        instances, _ = build_instances(
            [render(p, self.config.strategy) for p in pairs], model.tokenizer, cfg.mask, model.config.max_len
        )
        write_jsonl(self.artifact("instances.jsonl"), instances)

    def stage_finetune(self) -> None:
        if self.config.tree["finetune"]["init"] == "tuned":
            self.require("finetune", "tune")
            model = load_checkpoint(self.artifact("tuned"))
        else:
            model = self._base_model("finetune")
        dual = finetune(model, self.train_examples(), self.config.finetune)
        dual.save(self.artifact("dual"))
        log_data = {"epoch_losses": dual.epoch_losses, "skipped_batches": dual.skipped_batches}
        self.artifact("finetune_log.json").write_text(json.dumps(log_data, indent=2) + "\n")

    def stage_index(self) -> None:
        self.require("index", "finetune")
        dual = DualEncoder.load(self.artifact("dual"))
        matrix = encode_corpus(dual.passage_encoder, self.corpus(), self.config.tree["eval"]["batch_size"])
        matrix.save(self.artifact("embeddings.bin"))

    def stage_search(self) -> None:
        self.require("search", "finetune")
        self.require("search", "index")
        dual = DualEncoder.load(self.artifact("dual"))
        index = EmbeddingMatrix.load(self.artifact("embeddings.bin"))
        dev = self.dev_examples()
        ev = self.config.tree["eval"]
        vecs = encode_queries(dual.query_encoder, [ex.question for ex in dev], ev["batch_size"])
        results = search_many(index, vecs, ev["top_k"], [ex.id for ex in dev])
        write_jsonl(self.artifact("results.jsonl"), results)

    def stage_eval(self) -> None:
        self.require("eval", "search")
        results = [SearchResult.from_dict(r) for _, r in iter_jsonl(self.artifact("results.jsonl"))]
        dev = self.dev_examples()
        mode = self.config.tree["eval"]["relevance"]
        relevant = answer_relevance(dev, self.corpus()) if mode == "answer" else labeled_relevance(dev)
        ev = self.config.tree["eval"]
        report = evaluate(results, relevant, mode, ev["hits_cutoffs"], ev["mrr_cutoffs"])
        self.artifact("eval_report.json").write_text(report.to_json())

    def stage_analyze(self) -> None:
        self.require("analyze", "finetune")
        a = self.config.tree["analysis"]
        scorer = an.TransformersNLIScorer(a["nli_model"]) if a["nli_model"] else an.LexicalNLIScorer()
        dev = self.dev_examples()
        an.nli_separation_study(scorer, dev, bins=a["bins"]).write(
            self.artifact("analysis_nli.json"), self.artifact("analysis_nli.csv")
        )
        if self.config.path("triples") is not None:
            triples = an.load_triples(self.read_input("triples"))
        else:
            corpus = self.corpus()
            used = {p.id for ex in self.train_examples() + dev for p in ex.positive_passages}
            pool = [p.text for p in corpus if p.id not in used] or [p.text for p in corpus]
            triples = an.build_relation_triples(self.nli_examples(), pool, seed=self.config.stage_seed("analysis"))
        dual = DualEncoder.load(self.artifact("dual"))
        if triples:
            report = an.retriever_separation_study(dual.query_encoder, dual.passage_encoder, triples, bins=a["bins"])
        else:
            report = an.SeparationReport({"entail": [], "neutral": [], "irrelevant": []}, bins=a["bins"])
        report.write(self.artifact("analysis_retriever.json"), self.artifact("analysis_retriever.csv"))

    # -- driver ------------------------------------------------------------

    def _run_stage(self, stage: str) -> ManifestEntry:
        self._inputs = {}
        started, t0 = _now(), time.perf_counter()
        log.info("running stage %s in %s", stage, self.run_dir)
        getattr(self, f"stage_{stage}")()
        outputs = {n: _file_digest(self.artifact(n)) for n in OUTPUTS[stage]}
        entry = ManifestEntry(
            stage=stage,
            command=["enttune", "run", "--config", str(self.run_dir / "config.yaml"), "--stages", stage],
            inputs=dict(sorted(self._inputs.items())),
            outputs=outputs,
            started=started,
            finished=_now(),
            seconds=round(time.perf_counter() - t0, 3),
        )
        self.manifest.entries.append(entry)
        self.manifest.save()
        return entry

    def run(self, stages: Iterable[str], force: bool = False) -> RunManifest:
        stages = list(stages)
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise PipelineError(f"unknown stages {unknown}; choose from {list(STAGES)}")
        ordered = [s for s in STAGES if s in stages]
        self.run_dir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(self.run_dir / ".lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise PipelineError(f"another pipeline run holds {self.run_dir / '.lock'}") from None
        try:
            (self.run_dir / "config.yaml").write_text(dump_tree(self.config.resolved_tree()))
            if (self.run_dir / MANIFEST).exists():
                self.manifest = RunManifest.load(self.run_dir)
            else:
                self.manifest = RunManifest(self.run_dir, self.config.config_hash(), self.config.snapshot())
                self.manifest.save()
            for stage in ordered:
                done = self.manifest.latest(stage)
                if not force and done is not None and self._outputs_exist(stage) and all(
                    _file_digest(self.artifact(n)) == h for n, h in done.outputs.items()
                ):
                    log.info("stage %s already complete, reusing outputs", stage)
                    continue
                self._run_stage(stage)
        finally:
            lock.release()
        return self.manifest


def run_pipeline(config: PipelineConfig, stages: Sequence[str] = STAGES, force: bool = False) -> RunManifest:
    return Pipeline(config).run(stages, force=force)


def read_eval_report(run_dir: Path) -> EvalReport:
    return EvalReport.from_dict(json.loads((run_dir / "eval_report.json").read_text()))
