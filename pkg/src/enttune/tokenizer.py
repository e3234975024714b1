"""Word-level tokenizer with character offsets and a plain-text vocabulary file."""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path
from typing import Iterable

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)

_PATTERN = re.compile(r"\[(?:PAD|UNK|CLS|SEP|MASK)\]|\w+|[^\w\s]")


class Tokenizer:
    """Lower-casing word/punctuation tokenizer.

    The vocabulary file holds one token per line; line number is the id. The
    first five lines are always the special tokens, in ``SPECIAL_TOKENS`` order.
    """

    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        self.pad_id, self.unk_id, self.cls_id, self.sep_id, self.mask_id = range(len(SPECIAL_TOKENS))

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int = 30000, min_freq: int = 1) -> "Tokenizer":
        counts = Counter(tok for text in texts for tok, _ in split_with_offsets(text) if tok not in SPECIAL_TOKENS)
        ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(list(SPECIAL_TOKENS) + ranked[: max(0, max_size - len(SPECIAL_TOKENS))])

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.id_to_token) + "\n")

    def tokenize(self, text: str) -> list[tuple[str, tuple[int, int]]]:
        return split_with_offsets(text)

    def encode(self, text: str) -> tuple[list[int], list[tuple[int, int]]]:
        """Token ids plus the [start, end) character extent of each token (no specials added)."""
        pieces = split_with_offsets(text)
        ids = [self.token_to_id.get(tok, self.unk_id) for tok, _ in pieces]
        return ids, [span for _, span in pieces]

    def convert_ids(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.convert_ids(ids))

    def encode_for_embedding(self, text: str, max_len: int) -> list[int]:
        """[CLS] text [SEP], truncated from the right to ``max_len``."""
        ids, _ = self.encode(text)
        if not ids:
            raise ValueError("cannot embed empty text")
        return [self.cls_id] + ids[: max_len - 2] + [self.sep_id]


def split_with_offsets(text: str) -> list[tuple[str, tuple[int, int]]]:
    out = []
    for m in _PATTERN.finditer(text):
        tok = m.group(0)
        if tok not in SPECIAL_TOKENS:
            tok = tok.lower()
        out.append((tok, (m.start(), m.end())))
    return out
