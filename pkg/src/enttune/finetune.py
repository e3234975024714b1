"""Contrastive fine-tuning of an encoder into a query/passage dual encoder."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import QAExample
from .model import Encoder, load_checkpoint, save_checkpoint
from .trainer import make_optimizer

log = logging.getLogger(__name__)


def similarity(u, v) -> float:
    """Inner product of two equal-length vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(u @ v)


def nll_contrastive_loss(sim_pos: float, sim_negs: Sequence[float]) -> float:
    """-log softmax of the positive score against the negatives, max-shifted."""
    scores = [float(sim_pos), *map(float, sim_negs)]
    if not math.isfinite(scores[0]) or any(math.isnan(s) or s == math.inf for s in scores):
        raise ValueError("similarities must be finite (negatives may be -inf)")
    top = max(scores)
    if top == scores[0]:
        # log1p keeps tiny losses (positive far above every negative) from rounding to zero
        return math.log1p(math.fsum(math.exp(s - top) for s in scores[1:]))
    return (top - scores[0]) + math.log(math.fsum(math.exp(s - top) for s in scores))


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 40
    learning_rate: float = 2e-5
    batch_size: int = 32
    negatives_per_query: int = 1
    seed: int = 0
    warmup_steps: int = 100
    weight_decay: float = 0.01
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.negatives_per_query < 0:
            raise ValueError("negatives_per_query must be >= 0")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))


@dataclass
class DualEncoder:
    query_encoder: Encoder
    passage_encoder: Encoder
    epoch_losses: list[float] = field(default_factory=list)
    skipped_batches: int = 0

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        save_checkpoint(self.query_encoder, directory / "query")
        save_checkpoint(self.passage_encoder, directory / "passage")

    @classmethod
    def load(cls, directory: str | Path) -> "DualEncoder":
        directory = Path(directory)
        return cls(load_checkpoint(directory / "query"), load_checkpoint(directory / "passage"))


@dataclass(frozen=True)
class TripletBatch:
    queries: tuple[str, ...]
    positives: tuple[str, ...]
    hard_negatives: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not len(self.queries) == len(self.positives) == len(self.hard_negatives):
            raise ValueError("queries, positives and hard_negatives must align")
        if len(set(self.queries)) != len(self.queries):
            raise ValueError("a query appears twice in one batch")


def make_batches(data: Sequence[QAExample], config: FinetuneConfig, epoch: int) -> list[TripletBatch]:
    rng = np.random.default_rng(config.seed + epoch)
    order = rng.permutation(len(data))
    batches, pending = [], [data[i] for i in order]
    while pending:
        current, seen, carry = [], set(), []
        for ex in pending:
            if len(current) < config.batch_size and ex.question not in seen:
                current.append(ex)
                seen.add(ex.question)
            else:
                carry.append(ex)
        pending = carry
        negs = []
        for ex in current:
            pool = [p.text for p in ex.negative_passages]
            k = min(config.negatives_per_query, len(pool))
            idx = sorted(rng.choice(len(pool), size=k, replace=False)) if k else []
            negs.append(tuple(pool[i] for i in idx))
        batches.append(
            TripletBatch(
                tuple(ex.question for ex in current),
                tuple(ex.positive_passages[0].text for ex in current),
                tuple(negs),
            )
        )
    return batches


def contrastive_batch_loss(dual: DualEncoder, batch: TripletBatch) -> torch.Tensor:
    """Mean NLL over queries; each query scores its positive against in-batch
    positives of the other queries and its own hard negatives."""
    n = len(batch.queries)
    passages = list(batch.positives)
    owner = list(range(n))  # which query a passage column is a positive for, or hard-negative owner
    for i, negs in enumerate(batch.hard_negatives):
        passages.extend(negs)
        owner.extend([i] * len(negs))
    q = dual.query_encoder.encode_texts(batch.queries)
    p = dual.passage_encoder.encode_texts(passages)
    scores = q @ p.T
    owner_t = torch.as_tensor(owner)
    is_hard = torch.arange(len(passages)) >= n
    foreign_hard = is_hard[None, :] & (owner_t[None, :] != torch.arange(n)[:, None])
    scores = scores.masked_fill(foreign_hard, float("-inf"))
    return F.cross_entropy(scores, torch.arange(n))


def finetune(model: Encoder, data: Sequence[QAExample], config: FinetuneConfig) -> DualEncoder:
    """Clone ``model`` into two towers and train them with in-batch plus hard negatives."""
    for ex in data:
        if not ex.positive_passages:
            raise ValueError(f"example {ex.question!r} has no positive passage")
    if not data:
        raise ValueError("no fine-tuning data")
    torch.manual_seed(config.seed)
    dual = DualEncoder(model.clone(), model.clone())
    towers = torch.nn.ModuleList([dual.query_encoder, dual.passage_encoder])
    opt, sched = make_optimizer(
        towers, config.learning_rate, config.weight_decay, config.adam_betas, config.adam_epsilon, config.warmup_steps
    )
    params = [p for p in towers.parameters() if p.requires_grad]
    towers.train()
    for epoch in range(config.epochs):
        total, steps = 0.0, 0
        for batch in make_batches(data, config, epoch):
            if len(batch.queries) == 1 and not batch.hard_negatives[0]:
                log.warning("skipping batch of one query without hard negatives")
                dual.skipped_batches += 1
                continue
            loss = contrastive_batch_loss(dual, batch)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, config.max_grad_norm)
            opt.step()
            sched.step()
            total += float(loss.detach())
            steps += 1
        dual.epoch_losses.append(total / steps if steps else float("nan"))
        log.debug("finetune epoch %d loss %.4f", epoch + 1, dual.epoch_losses[-1])
    towers.eval()
    return dual

