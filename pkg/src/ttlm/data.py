"""Corpus ingestion, vocabulary handling and truncated-BPTT batching.

Plain-text word-level convention: whitespace tokenization, one ``<eos>``
appended per line, out-of-vocabulary words folded to ``<unk>``. Batching is
contiguous (no shuffling): the token stream is cut into ``batch_size``
columns and windows slide down the columns, targets shifted one step from
inputs. Everything here is deterministic.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "UNK_TOKEN",
    "EOS_TOKEN",
    "Vocabulary",
    "build_vocab",
    "encode",
    "decode",
    "batchify",
    "bptt_windows",
    "zipf_bigram_corpus",
]

UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"
RESERVED_TOKENS = (UNK_TOKEN, EOS_TOKEN)

# A split's token stream is a flat 1-d int64 array of vocabulary indices.
TokenStream = np.ndarray


def _as_lines(text) -> list[str]:
    if isinstance(text, str):
        return text.splitlines()
    return [str(line).rstrip("\n") for line in text]


class Vocabulary:
    """Bidirectional token/index map with dense indices and reserved tokens."""

    def __init__(self, tokens: list[str], counts: dict[str, int] | None = None):
        if tokens[: len(RESERVED_TOKENS)] != list(RESERVED_TOKENS):
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.counts = dict(counts or {})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def unk_index(self) -> int:
        return self.index[UNK_TOKEN]

    @property
    def eos_index(self) -> int:
        return self.index[EOS_TOKEN]

    def to_index(self, token: str) -> int:
        return self.index.get(token, self.unk_index)

    def to_token(self, index: int) -> str:
        return self.tokens[index]

    def save(self, path) -> None:
        """Two-line header (size, reserved tokens), then one token per line."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.tokens)}\n")
            fh.write(" ".join(RESERVED_TOKENS) + "\n")
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 2:
            raise ValueError(f"{path}: vocabulary file is missing its header")
        try:
            size = int(lines[0])
        except ValueError as exc:
            raise ValueError(f"{path}: first header line must be the vocabulary size") from exc
        if tuple(lines[1].split()) != RESERVED_TOKENS:
            raise ValueError(f"{path}: second header line must list {RESERVED_TOKENS}")
        tokens = lines[2 : 2 + size]
        if len(tokens) != size:
            raise ValueError(f"{path}: expected {size} tokens, found {len(tokens)}")
        return cls(tokens)


def build_vocab(text, max_size: int | None = None, min_count: int = 1) -> Vocabulary:
    """Count tokens and build a vocabulary: reserved tokens first, then by
    descending count with lexicographic tie-break.

    ``max_size`` caps the number of non-reserved entries; rarer words fall
    below the cap and will encode as ``<unk>``.
    """
    lines = _as_lines(text)
    counts: dict[str, int] = {}
    n_lines = 0
    for line in lines:
        n_lines += 1
        for tok in line.split():
            counts[tok] = counts.get(tok, 0) + 1
    if sum(counts.values()) == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts[EOS_TOKEN] = counts.get(EOS_TOKEN, 0) + n_lines
    counts.setdefault(UNK_TOKEN, 0)
    candidates = [t for t in counts if t not in RESERVED_TOKENS and counts[t] >= min_count]
    candidates.sort(key=lambda t: (-counts[t], t))
    if max_size is not None:
        candidates = candidates[:max_size]
    return Vocabulary(list(RESERVED_TOKENS) + candidates, counts)


def encode(text, vocab: Vocabulary) -> TokenStream:
    """Token stream for a split: per line, its word indices plus ``<eos>``."""
    indices: list[int] = []
    for line in _as_lines(text):
        for tok in line.split():
            indices.append(vocab.to_index(tok))
        indices.append(vocab.eos_index)
    return np.asarray(indices, dtype=np.int64)


def decode(stream, vocab: Vocabulary) -> list[str]:
    """Tokens for a stream of indices (inverse of :func:`encode` up to <unk>)."""
    return [vocab.to_token(int(i)) for i in stream]


def batchify(stream: TokenStream, batch_size: int) -> np.ndarray:
    """Cut a stream into ``batch_size`` contiguous columns.

    Returns an (n, batch_size) matrix with column j holding tokens
    ``stream[j*n : (j+1)*n]``; the remainder past ``batch_size * n`` tokens
    is dropped.
    """
    stream = np.asarray(stream, dtype=np.int64)
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if stream.ndim != 1 or len(stream) < batch_size + 1:
        raise ValueError(
            f"stream of {stream.size} tokens is too short for batch size {batch_size}"
        )
    n = len(stream) // batch_size
    return stream[: n * batch_size].reshape(batch_size, n).T


def bptt_windows(batched: np.ndarray, bptt_len: int) -> Iterator[tuple[np.ndarray, np.ndarray, bool]]:
    """Slide (input, target) windows down the batched columns.

    Yields ``(inputs, targets, is_start)`` where targets are the inputs
    shifted one row down and ``is_start`` marks the first window of the
    stream. Hidden state is meant to carry across windows within an epoch
    but gradients must not.
    """
    if bptt_len < 1:
        raise ValueError("window length must be >= 1")
    n = batched.shape[0]
    for i in range(0, n - 1, bptt_len):
        length = min(bptt_len, n - 1 - i)
        yield batched[i : i + length], batched[i + 1 : i + 1 + length], i == 0


def zipf_bigram_corpus(vocab_size: int = 50, n_tokens: int = 10_000, seed: int = 0,
                       exponent: float = 1.5, words_per_line: int = 20,
                       second_order_fraction: float = 0.0) -> str:
    """Deterministic synthetic corpus with strong local structure.

    Each successor distribution is a Zipf law over a context-dependent random
    permutation of the vocabulary, so conditional entropy is far below the
    unigram entropy: a sanity corpus on which any working sequence model
    must clearly beat the unigram baseline. A positive
    ``second_order_fraction`` routes that share of transitions through a
    permutation composed from the previous *two* words, rewarding models
    that actually carry state beyond one token.
    """
    if not 0.0 <= second_order_fraction <= 1.0:
        raise ValueError("second_order_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    width = len(str(vocab_size - 1))
    words = [f"w{i:0{width}d}" for i in range(vocab_size)]
    weights = 1.0 / np.arange(1, vocab_size + 1) ** exponent
    weights /= weights.sum()
    perms = np.stack([rng.permutation(vocab_size) for _ in range(vocab_size)])
    ranks = rng.choice(vocab_size, size=n_tokens, p=weights)
    if second_order_fraction > 0.0:
        perms2 = np.stack([rng.permutation(vocab_size) for _ in range(vocab_size)])
        deep = rng.random(n_tokens) < second_order_fraction
    else:
        deep = np.zeros(n_tokens, dtype=bool)
    tokens: list[str] = []
    previous = int(rng.integers(vocab_size))
    current = int(rng.integers(vocab_size))
    for r, two_step in zip(ranks, deep):
        tokens.append(words[current])
        rank = int(perms2[previous][r]) if two_step else int(r)
        previous, current = current, int(perms[current][rank])
    lines = [
        " ".join(tokens[i : i + words_per_line])
        for i in range(0, len(tokens), words_per_line)
    ]
    return "\n".join(lines) + "\n"
