"""Small BERT-style encoder with a tied masked-LM head and [CLS] pooling."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokenizer import Tokenizer

CHECKPOINT_FORMAT = "enttune-encoder"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden: int = 256
    layers: int = 4
    heads: int = 4
    ffn: int | None = None
    max_len: int = 256
    dropout: float = 0.1
    norm_eps: float = 1e-12
    pooling: str = "cls"

    def __post_init__(self):
        if self.ffn is None:
            self.ffn = 4 * self.hidden
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @classmethod
    def tiny(cls, vocab_size: int, **overrides) -> "EncoderConfig":
        kw = dict(hidden=32, layers=2, heads=2, ffn=64, dropout=0.0)
        kw.update(overrides)
        return cls(vocab_size=vocab_size, **kw)


class SelfAttention(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.hidden // cfg.heads
        self.qkv = nn.Linear(cfg.hidden, 3 * cfg.hidden)
        self.out = nn.Linear(cfg.hidden, cfg.hidden)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        b, t, h = x.shape
        q, k, v = self.qkv(x).view(b, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], torch.finfo(scores.dtype).min)
        attn = self.dropout(scores.softmax(dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, h)
        return self.out(ctx)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attn = SelfAttention(cfg)
        self.norm1 = nn.LayerNorm(cfg.hidden, eps=cfg.norm_eps)
        self.ff = nn.Sequential(nn.Linear(cfg.hidden, cfg.ffn), nn.GELU(), nn.Linear(cfg.ffn, cfg.hidden))
        self.norm2 = nn.LayerNorm(cfg.hidden, eps=cfg.norm_eps)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        x = self.norm1(x + self.dropout(self.attn(x, key_mask)))
        return self.norm2(x + self.dropout(self.ff(x)))


class Encoder(nn.Module):
    """Transformer encoder exposing token log-probabilities and a pooled text vector."""

    def __init__(self, cfg: EncoderConfig, tokenizer: Tokenizer | None = None):
        super().__init__()
        if tokenizer is not None and len(tokenizer) != cfg.vocab_size:
            raise ValueError(f"tokenizer has {len(tokenizer)} tokens, config expects {cfg.vocab_size}")
        self.config = cfg
        self.tokenizer = tokenizer
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.hidden)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.hidden)
        self.emb_norm = nn.LayerNorm(cfg.hidden, eps=cfg.norm_eps)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.mlm_transform = nn.Sequential(
            nn.Linear(cfg.hidden, cfg.hidden), nn.GELU(), nn.LayerNorm(cfg.hidden, eps=cfg.norm_eps)
        )
        self.mlm_bias = nn.Parameter(torch.zeros(cfg.vocab_size))
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)

    @property
    def dim(self) -> int:
        return self.config.hidden

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Final hidden states, shape (batch, seq, hidden)."""
        if input_ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence length {input_ids.shape[1]} exceeds max_len {self.config.max_len}")
        if attention_mask is None:
            attention_mask = torch.ones_like(input_ids, dtype=torch.bool)
        key_mask = attention_mask.bool()
        pos = torch.arange(input_ids.shape[1], device=input_ids.device)
        x = self.emb_dropout(self.emb_norm(self.tok_emb(input_ids) + self.pos_emb(pos)[None]))
        for layer in self.layers:
            x = layer(x, key_mask)
        return x

    def mlm_log_probs(self, input_ids, attention_mask=None) -> torch.Tensor:
        h = self.mlm_transform(self(input_ids, attention_mask))
        logits = h @ self.tok_emb.weight.T + self.mlm_bias
        return F.log_softmax(logits, dim=-1)

    def pool(self, input_ids, attention_mask=None) -> torch.Tensor:
        hidden = self(input_ids, attention_mask)
        if self.config.pooling == "cls":
            return hidden[:, 0]
        if attention_mask is None:
            return hidden.mean(dim=1)
        m = attention_mask.to(hidden.dtype)[..., None]
        return (hidden * m).sum(dim=1) / m.sum(dim=1)

    # -- text-level helpers -------------------------------------------------

    def batch_ids(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        if self.tokenizer is None:
            raise RuntimeError("encoder has no tokenizer attached")
        seqs = [self.tokenizer.encode_for_embedding(t, self.config.max_len) for t in texts]
        return pad_batch(seqs, self.tokenizer.pad_id, self.tok_emb.weight.device)

    def encode_texts(self, texts: Sequence[str]) -> torch.Tensor:
        ids, mask = self.batch_ids(texts)
        return self.pool(ids, mask)

    def clone(self) -> "Encoder":
        return copy.deepcopy(self)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long, device=device)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool, device=device)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        mask[i, : len(s)] = True
    return ids, mask


def mlm_logits(model: Encoder, token_ids: Sequence[int]) -> torch.Tensor:
    """Per-position log-probabilities for a single sequence, shape (seq, vocab)."""
    ids = torch.as_tensor([list(token_ids)], dtype=torch.long, device=model.tok_emb.weight.device)
    if int(ids.max()) >= model.config.vocab_size:
        raise ValueError("token id out of vocabulary range")
    return model.mlm_log_probs(ids)[0]


@torch.no_grad()
def embed(model: Encoder, text: str | Sequence[str]) -> torch.Tensor:
    """[CLS] embedding of one text (1-D) or many texts (2-D), in inference mode."""
    was_training = model.training
    model.eval()
    try:
        if isinstance(text, str):
            if not text.strip():
                raise ValueError("cannot embed empty text")
            return model.encode_texts([text])[0]
        return model.encode_texts(list(text))
    finally:
        model.train(was_training)


# -- persistence -------------------------------------------------------------


def save_checkpoint(model: Encoder, directory: str | Path) -> Path:
    """Write ``model.pt`` (config + named tensors) and ``vocab.txt`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
    }
    torch.save(payload, directory / "model.pt")
    if model.tokenizer is not None:
        model.tokenizer.save(directory / "vocab.txt")
    (directory / "config.json").write_text(json.dumps(asdict(model.config), indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory: str | Path) -> Encoder:
    directory = Path(directory)
    payload = torch.load(directory / "model.pt", map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{directory} is not an encoder checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    vocab = directory / "vocab.txt"
    tokenizer = Tokenizer.load(vocab) if vocab.exists() else None
    model = Encoder(EncoderConfig(**payload["config"]), tokenizer)
    model.load_state_dict(payload["state_dict"])
    return model


def load_pretrained_weights(model: Encoder, state_dict: dict[str, torch.Tensor]) -> list[str]:
    """Copy every shape-compatible tensor from ``state_dict`` into ``model``.

    Returns the names that were loaded. Raises if a shared name has a different shape.
    """
    own = model.state_dict()
    loaded = []
    for name, tensor in state_dict.items():
        if name not in own:
            continue
        if own[name].shape != tensor.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(tensor.shape)} vs {tuple(own[name].shape)}")
        own[name].copy_(tensor)
        loaded.append(name)
    return loaded
