"""Synthetic token-id corpora and vocab files."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, List, Sequence

from .errors import DataError
from .models import RESERVED_IDS
from .rng import SeededStream

logger = logging.getLogger(__name__)

MEAN_LENGTH = 20.0
MAX_LENGTH = 60
RESERVED_TOKENS = ("<pad>", "<s>", "</s>")


def generate_corpus(count: int,
                    vocab_size: int,
                    seed: int,
                    mean_length: float = MEAN_LENGTH,
                    max_length: int = MAX_LENGTH) -> List[List[int]]:
    """Sentences with geometric lengths and ids in [3, vocab_size)."""
    if count < 0:
        raise ValueError(f"sentence count must be >= 0, got {count}")
    if vocab_size <= RESERVED_IDS:
        raise ValueError(
            f"vocab size must exceed the {RESERVED_IDS} reserved ids, got {vocab_size}")
    if max_length < 1:
        raise ValueError(f"max length must be >= 1, got {max_length}")
    stream = SeededStream(seed)
    lengths = stream.geometric(count, mean_length, max_length)
    tokens = stream.integers(sum(lengths), RESERVED_IDS, vocab_size)
    sentences = []
    offset = 0
    for length in lengths:
        sentences.append(tokens[offset:offset + length])
        offset += length
    return sentences


def format_sentence(tokens: Sequence[int]) -> str:
    return " ".join(str(token) for token in tokens)


def write_corpus(path: Path, sentences: Iterable[Sequence[int]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for sentence in sentences:
            handle.write(format_sentence(sentence) + "\n")
    return path


def read_corpus(path: Path) -> List[List[int]]:
    """Read one sentence of space-separated token ids per line."""
    sentences = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            fields = line.split()
            if not fields:
                raise DataError(f"{path}:{line_number}: empty sentence")
            try:
                sentences.append([int(field) for field in fields])
            except ValueError as exc:
                raise DataError(f"{path}:{line_number}: {exc}") from exc
    return sentences


def write_vocab(path: Path, size: int) -> Path:
    """Write a synthetic vocab: reserved tokens, then ``tok<id>``."""
    if size < RESERVED_IDS:
        raise ValueError(f"vocab size must be >= {RESERVED_IDS}, got {size}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for token in RESERVED_TOKENS:
            handle.write(token + "\n")
        for token_id in range(RESERVED_IDS, size):
            handle.write(f"tok{token_id}\n")
    return path


def read_vocab(path: Path) -> List[str]:
    with Path(path).open("r", encoding="utf-8") as handle:
        tokens = [line.rstrip("\n") for line in handle]
    if tuple(tokens[:RESERVED_IDS]) != RESERVED_TOKENS:
        raise DataError(
            f"{path}: first lines must be {', '.join(RESERVED_TOKENS)}")
    return tokens
