"""Entailment tuning: masked-hypothesis prediction over unified prompts."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .masking import DEFAULT_MAX_LEN, MaskConfig, PromptedInstance, build_instances
from .model import Encoder, pad_batch
from .prompts import EntailmentPair, PromptStrategy, render

log = logging.getLogger(__name__)

IGNORE_INDEX = -100


@dataclass(frozen=True)
class TuneConfig:
    learning_rate: float = 2e-5
    warmup_steps: int = 100
    batch_size: int = 128
    epochs: int = 10
    weight_decay: float = 0.01
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    max_grad_norm: float = 1.0
    mask: MaskConfig = field(default_factory=MaskConfig)
    seed: int = 0
    remask_each_epoch: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.warmup_steps < 0 or self.weight_decay < 0 or self.adam_epsilon <= 0 or self.max_grad_norm <= 0:
            raise ValueError("warmup_steps, weight_decay, adam_epsilon and max_grad_norm must be positive")
        if isinstance(self.mask, dict):
            object.__setattr__(self, "mask", MaskConfig(**self.mask))
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))


@dataclass
class TrainLog:
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list, compare=False)
    rejected: int = 0

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for step, loss in enumerate(self.step_losses, start=1):
                fh.write(json.dumps({"step": step, "loss": loss}) + "\n")


def mlm_loss(log_probs, instance: PromptedInstance):
    """Summed negative log-likelihood of the original tokens at the masked positions.

    ``log_probs`` is a (seq, vocab) tensor or array of log-probabilities.
    """
    if not instance.mask_positions:
        raise ValueError("instance has no masked positions")
    if max(instance.mask_positions) >= len(log_probs):
        raise ValueError("log_probs shorter than the last masked position")
    if isinstance(log_probs, torch.Tensor):
        pos = torch.as_tensor(instance.mask_positions, device=log_probs.device)
        lab = torch.as_tensor(instance.labels, device=log_probs.device)
        return -log_probs[pos, lab].sum()
    lp = np.asarray(log_probs, dtype=np.float64)
    return float(-lp[list(instance.mask_positions), list(instance.labels)].sum())


def collate(instances: Sequence[PromptedInstance], pad_id: int, device=None):
    ids, mask = pad_batch([i.token_ids for i in instances], pad_id, device)
    labels = torch.full_like(ids, IGNORE_INDEX)
    for row, inst in enumerate(instances):
        labels[row, list(inst.mask_positions)] = torch.as_tensor(inst.labels, dtype=torch.long)
    return ids, mask, labels


def batch_mlm_loss(model: Encoder, ids, mask, labels) -> tuple[torch.Tensor, int]:
    """Mean NLL over every masked position in the batch, plus the masked-token count."""
    log_probs = model.mlm_log_probs(ids, mask)
    selected = labels != IGNORE_INDEX
    nll = -log_probs[selected].gather(-1, labels[selected][:, None]).squeeze(-1)
    return nll.mean(), int(selected.sum())


def make_optimizer(model: torch.nn.Module, lr, weight_decay, betas, eps, warmup_steps):
    """AdamW (bias and LayerNorm weights exempt from decay) with linear warmup, then constant."""
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (no_decay if p.ndim < 2 else decay).append(p)
    opt = torch.optim.AdamW(
        [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=lr,
        betas=betas,
        eps=eps,
    )
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: min(1.0, (step + 1) / warmup_steps) if warmup_steps > 0 else 1.0
    )
    return opt, sched


def global_grad_norm(params) -> float:
    norms = [p.grad.detach().norm(2) for p in params if p.grad is not None]
    return float(torch.linalg.vector_norm(torch.stack(norms))) if norms else 0.0


def entailment_tune(
    model: Encoder,
    pairs: Sequence[EntailmentPair],
    config: TuneConfig,
    strategy: PromptStrategy = PromptStrategy.PROMPT,
    max_len: int = DEFAULT_MAX_LEN,
    on_epoch_end=None,
) -> tuple[Encoder, TrainLog]:
    """Train ``model`` in place to recover masked hypothesis tokens from the premise."""
    if not pairs:
        raise ValueError("empty training set")
    tokenizer = model.tokenizer
    max_len = min(max_len, model.config.max_len)
    prompts = [render(p, strategy) for p in pairs]
    instances, rejected = build_instances(prompts, tokenizer, config.mask, max_len)
    if not instances:
        raise ValueError("empty training set: every instance was rejected by masking")
    if rejected:
        log.info("masking rejected %d of %d instances", rejected, len(prompts))

    torch.manual_seed(config.seed)
    device = model.tok_emb.weight.device
    opt, sched = make_optimizer(
        model, config.learning_rate, config.weight_decay, config.adam_betas, config.adam_epsilon, config.warmup_steps
    )
    params = [p for p in model.parameters() if p.requires_grad]
    trace = TrainLog(rejected=rejected)
    model.train()
    for epoch in range(config.epochs):
        if config.remask_each_epoch and epoch > 0:
            instances, _ = build_instances(prompts, tokenizer, config.mask, max_len, seed=config.mask.seed + epoch)
        start = time.perf_counter()
        order = np.random.default_rng(config.seed + epoch).permutation(len(instances))
        total, count = 0.0, 0
        for b in range(0, len(order), config.batch_size):
            batch = [instances[i] for i in order[b : b + config.batch_size]]
            ids, mask, labels = collate(batch, tokenizer.pad_id, device)
            loss, n = batch_mlm_loss(model, ids, mask, labels)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, config.max_grad_norm)
            trace.grad_norms.append(global_grad_norm(params))
            opt.step()
            sched.step()
            value = float(loss.detach())
            trace.step_losses.append(value)
            total += value * n
            count += n
        trace.epoch_losses.append(total / count)
        trace.epoch_seconds.append(time.perf_counter() - start)
        log.debug("epoch %d mean loss %.4f", epoch + 1, trace.epoch_losses[-1])
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, trace)
    model.eval()
    return model, trace
