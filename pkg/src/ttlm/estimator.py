"""Scikit-learn style estimator facade over the training stack.

`TTLanguageModel` wraps vocabulary construction, model initialization and the
truncated-BPTT training loop behind the familiar fit/predict surface, so the
model composes with sklearn tooling (`get_params`/`set_params`, `clone`,
grid search over `rank` or `kind`, pipelines that end in a scorer).

`X` is a corpus: either one string (newline-separated) or an iterable of
lines. Prediction inputs are prefixes: a single string or an iterable of
strings/token lists. Following the sklearn convention, `score` returns a
greater-is-better value (negative mean per-token NLL in nats);
`perplexity` gives the conventional exp of the mean NLL.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import cells
from .cells import CellKind
from .data import build_vocab, encode
from .model import ModelConfig, RecurrentLM, sample_sequence
from .trainer import TrainConfig, evaluate_ppl, run_training

__all__ = ["TTLanguageModel", "ensure_text_lines"]


def ensure_text_lines(X) -> list[str]:
    """Validate a corpus argument into a list of text lines."""
    if isinstance(X, str):
        lines = X.splitlines()
    else:
        try:
            lines = [line for line in X]
        except TypeError:
            raise TypeError(
                f"corpus must be a string or an iterable of strings, got {type(X).__name__}"
            ) from None
        if not all(isinstance(line, str) for line in lines):
            raise TypeError("corpus iterable must contain strings")
    if not any(line.split() for line in lines):
        raise ValueError("corpus contains no tokens")
    return lines


def _check_positive(name: str, value, minimum=1) -> None:
    if value is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")


class TTLanguageModel(BaseEstimator):
    """Word-level recurrent language model in tensor-train or baseline form.

    Parameters mirror the training stack: ``kind`` selects the cell variant
    ("ttlm", "ttlm-tiny", "ttlm-large", "rnn", "rac", "mi-rnn",
    "second-order"), ``rank`` is the bond rank / hidden size, and
    ``activation`` overrides the variant's default nonlinearity.
    """

    def __init__(self, kind: str = "ttlm-tiny", rank: int = 8,
                 embed_size: int | None = None, activation: str | None = None,
                 tie_weights: bool = True, zero_init_hidden: bool = False,
                 max_vocab: int | None = None, min_count: int = 1,
                 epochs: int = 10, lr: float = 1.0, anneal_factor: float = 0.25,
                 clip_norm: float = 0.25, batch_size: int = 20, bptt_len: int = 35,
                 state_policy: str = "restart", valid_fraction: float = 0.1,
                 seed: int = 0, verbose: int = 0):
        self.kind = kind
        self.rank = rank
        self.embed_size = embed_size
        self.activation = activation
        self.tie_weights = tie_weights
        self.zero_init_hidden = zero_init_hidden
        self.max_vocab = max_vocab
        self.min_count = min_count
        self.epochs = epochs
        self.lr = lr
        self.anneal_factor = anneal_factor
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.bptt_len = bptt_len
        self.state_policy = state_policy
        self.valid_fraction = valid_fraction
        self.seed = seed
        self.verbose = verbose

    # -- sklearn plumbing ----------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This TTLanguageModel instance is not fitted yet; call fit first."
            )

    def _train_config(self, train_tokens: int) -> TrainConfig:
        # at least one (input, target) row pair must survive batchify
        batch = min(self.batch_size, max(1, train_tokens // 2))
        if batch != self.batch_size:
            warnings.warn(
                f"batch_size reduced from {self.batch_size} to {batch} for a "
                f"{train_tokens}-token corpus"
            )
        return TrainConfig(
            epochs=self.epochs, lr=self.lr, anneal_factor=self.anneal_factor,
            clip_norm=self.clip_norm, batch_size=batch, bptt_len=self.bptt_len,
            seed=self.seed, state_policy=self.state_policy,
        )

    # -- estimator API ---------------------------------------------------------

    def fit(self, X, y=None) -> "TTLanguageModel":
        """Build the vocabulary on X, then train with validation selection."""
        lines = ensure_text_lines(X)
        _check_positive("rank", self.rank)
        _check_positive("epochs", self.epochs)
        _check_positive("min_count", self.min_count)
        if not 0 <= self.valid_fraction < 1:
            raise ValueError(f"valid_fraction must be in [0, 1), got {self.valid_fraction}")
        n_valid = int(round(self.valid_fraction * len(lines)))
        if 0 < n_valid < len(lines):
            train_lines, valid_lines = lines[:-n_valid], lines[-n_valid:]
        else:
            train_lines, valid_lines = lines, lines
        self.vocab_ = build_vocab(train_lines, max_size=self.max_vocab,
                                  min_count=self.min_count)
        train_stream = encode(train_lines, self.vocab_)
        valid_stream = encode(valid_lines, self.vocab_)
        kind = CellKind.make(self.kind, self.activation)
        self.config_ = ModelConfig(
            kind=kind, rank_or_hidden=self.rank, vocab_size=len(self.vocab_),
            embed_size=self.embed_size, tie_weights=self.tie_weights,
            zero_init_hidden=self.zero_init_hidden,
        )
        self.train_config_ = self._train_config(len(train_stream))
        self.model_ = RecurrentLM(self.config_, seed=self.seed)
        self.result_ = run_training(
            self.model_, {"train": train_stream, "valid": valid_stream},
            self.train_config_, verbose=self.verbose > 0,
        )
        return self

    def _prefix_indices(self, sample) -> list[int]:
        if isinstance(sample, str):
            tokens = sample.split()
        else:
            tokens = [str(t) for t in sample]
        return [self.vocab_.to_index(t) for t in tokens]

    def _prefix_batch(self, X) -> list[list[int]]:
        if isinstance(X, str):
            return [self._prefix_indices(X)]
        return [self._prefix_indices(sample) for sample in X]

    def predict_proba(self, X) -> np.ndarray:
        """Next-word distribution after each prefix; rows sum to 1."""
        self._check_fitted()
        rows = []
        for indices in self._prefix_batch(X):
            h = self.model_.init_hidden()
            for w in indices:
                h = cells.step(self.model_.cell_params, w, h)
            rows.append(self.model_.predict(h))
        return np.vstack(rows)

    def predict(self, X) -> np.ndarray:
        """Most likely next word after each prefix."""
        proba = self.predict_proba(X)
        return np.asarray([self.vocab_.to_token(int(i)) for i in proba.argmax(axis=1)])

    def perplexity(self, X) -> float:
        """exp of the mean per-token NLL of X under the fitted model."""
        self._check_fitted()
        stream = encode(ensure_text_lines(X), self.vocab_)
        cfg = TrainConfig(
            epochs=1, lr=self.lr, anneal_factor=self.anneal_factor,
            clip_norm=self.clip_norm, batch_size=1,
            bptt_len=self.bptt_len, seed=self.seed, state_policy=self.state_policy,
        )
        return evaluate_ppl(self.model_, stream, cfg)

    def score(self, X, y=None) -> float:
        """Negative mean per-token NLL in nats (higher is better)."""
        return -math.log(self.perplexity(X))

    def sample(self, n_tokens: int, prompt: str = "", temperature: float = 1.0,
               seed: int | None = None, greedy: bool = False) -> str:
        """Generate text; deterministic for a fixed seed."""
        self._check_fitted()
        prompt_idx = self._prefix_indices(prompt) if prompt else []
        indices = sample_sequence(
            self.model_, n_tokens, temperature=temperature,
            seed=self.seed if seed is None else seed,
            prompt=prompt_idx, greedy=greedy,
        )
        return " ".join(self.vocab_.to_token(i) for i in indices)
