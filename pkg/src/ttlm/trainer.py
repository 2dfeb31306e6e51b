"""Truncated-BPTT SGD training with annealing and validation selection.

One epoch walks the batched token stream window by window: forward NLL
(averaged per token), backward through the window only, a global-norm
gradient clip, and a plain SGD update. The learning rate is multiplied by
the anneal factor whenever validation perplexity fails to improve, and the
reported test perplexity always comes from the best-validation snapshot.

Two hidden-state policies exist, for training and evaluation alike:

* "restart" (default): every window starts from the trainable initial-state
  row. This matches the chain semantics of the tensor-train models (each
  scored chain is rooted at the first core), keeps magnitudes bounded for
  the linear multiplicative cells, and is what lets them actually learn at
  the published initialization scales.
* "carry": the classic recipe; the state carries across windows within an
  epoch and is detached (treated as a constant) at window boundaries, so
  gradients never cross a boundary.

The per-epoch metrics log contains only deterministic fields so reruns with
the same seed are bitwise identical; wall-clock timings go to stdout.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .data import batchify, bptt_windows
from .model import RecurrentLM, save_checkpoint
from .tensor import NumericalDivergenceError

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainResult",
    "global_grad_norm",
    "clip_gradients_",
    "sgd_step_",
    "train_epoch",
    "evaluate_ppl",
    "run_training",
]


STATE_POLICIES = ("restart", "carry")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; the architecture lives in ModelConfig."""

    epochs: int = 50
    lr: float = 1.0
    anneal_factor: float = 0.25
    clip_norm: float = 0.25
    batch_size: int = 20
    bptt_len: int = 35
    seed: int = 0
    eval_interval: int = 1
    state_policy: str = "restart"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("lr", "anneal_factor", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "bptt_len", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.state_policy not in STATE_POLICIES:
            raise ValueError(f"state_policy must be one of {STATE_POLICIES}")


@dataclass
class EpochStats:
    mean_nll: float
    tokens: int
    seconds: float

    @property
    def tokens_per_second(self) -> float:
        return self.tokens / self.seconds if self.seconds > 0 else float("inf")


@dataclass
class TrainResult:
    best_epoch: int
    best_valid_ppl: float
    test_ppl: float | None
    metrics_lines: list[str]
    epochs_run: int
    diverged: bool = False
    divergence_message: str | None = None
    checkpoint_path: str | None = None


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients_(grads: dict[str, np.ndarray], clip_norm: float) -> tuple[float, bool]:
    """Scale all gradients in place so their global norm is at most clip_norm.

    Returns the pre-clip norm and whether scaling happened. Gradients below
    the threshold are left untouched.
    """
    norm = global_grad_norm(grads)
    if norm > clip_norm:
        factor = clip_norm / norm
        for g in grads.values():
            g *= factor
        return norm, True
    return norm, False


def sgd_step_(model: RecurrentLM, grads: dict[str, np.ndarray], lr: float) -> None:
    """In-place SGD update of every trainable array with a gradient."""
    for name in model.trainable_names():
        g = grads.get(name)
        if g is not None:
            model.params[name] -= lr * g


def train_epoch(model: RecurrentLM, stream: np.ndarray, cfg: TrainConfig,
                lr: float | None = None) -> EpochStats:
    """One pass over the stream with truncated backpropagation through time.

    Under the "restart" policy every window starts from the trainable
    initial-state row, which therefore receives gradient from every window.
    Under "carry" the state flows across windows, detached at each boundary,
    and only the epoch-start window trains the initial-state row.
    """
    lr = cfg.lr if lr is None else lr
    restart = cfg.state_policy == "restart"
    batched = batchify(stream, cfg.batch_size)
    h = model.init_hidden(batch_size=cfg.batch_size)
    total_nll = 0.0
    total_tokens = 0
    started = time.perf_counter()
    for inputs, targets, is_start in bptt_windows(batched, cfg.bptt_len):
        if restart:
            h = model.init_hidden(batch_size=cfg.batch_size)
        nll, n_tok, grads, h = model.window_loss_and_grads(
            h, inputs, targets, h0_is_init_state=restart or is_start
        )
        clip_gradients_(grads, cfg.clip_norm)
        sgd_step_(model, grads, lr)
        total_nll += nll
        total_tokens += n_tok
    if total_tokens == 0:
        raise ValueError("stream yields no BPTT windows; it is too short")
    return EpochStats(total_nll / total_tokens, total_tokens, time.perf_counter() - started)


def evaluate_ppl(model: RecurrentLM, stream: np.ndarray, cfg: TrainConfig) -> float:
    """Perplexity: exp of mean per-token NLL over the stream, no updates.

    The hidden state follows ``cfg.state_policy``: restarted from the
    initial-state row at every window, or carried across windows.
    """
    restart = cfg.state_policy == "restart"
    batched = batchify(stream, cfg.batch_size)
    h = model.init_hidden(batch_size=cfg.batch_size)
    total_nll = 0.0
    total_tokens = 0
    for inputs, targets, _ in bptt_windows(batched, cfg.bptt_len):
        if restart:
            h = model.init_hidden(batch_size=cfg.batch_size)
        nll, n_tok, h = model.window_forward(h, inputs, targets)
        total_nll += nll
        total_tokens += n_tok
    if total_tokens == 0:
        raise ValueError("stream yields no evaluation windows; it is too short")
    try:
        return math.exp(total_nll / total_tokens)
    except OverflowError:
        return math.inf


def _metrics_line(epoch: int, train_nll: float, valid_ppl: float, lr: float) -> str:
    return f"epoch={epoch} train_nll={train_nll!r} valid_ppl={valid_ppl!r} lr={lr!r}"


def run_training(model: RecurrentLM, splits: dict[str, np.ndarray], cfg: TrainConfig,
                 checkpoint_path=None, metrics_path=None, verbose: bool = False) -> TrainResult:
    """Train with per-epoch validation, keep the best snapshot, report test PPL.

    ``splits`` maps "train" and "valid" (and optionally "test") to token
    streams. On numerical divergence the run stops and the result still
    carries the best snapshot seen so far. The model instance is left holding
    the best-validation parameters.
    """
    if "train" not in splits or "valid" not in splits:
        raise ValueError("splits must provide 'train' and 'valid' streams")
    lr = cfg.lr
    best_ppl = math.inf
    best_epoch = 0
    best_params: dict[str, np.ndarray] | None = None
    lines: list[str] = []
    diverged = False
    message = None
    epochs_run = 0
    for epoch in range(1, cfg.epochs + 1):
        try:
            stats = train_epoch(model, splits["train"], cfg, lr=lr)
        except NumericalDivergenceError as exc:
            diverged = True
            message = f"epoch {epoch}: {exc}"
            if verbose:
                print(f"stopping: {message}")
            break
        epochs_run = epoch
        if epoch % cfg.eval_interval == 0:
            valid_ppl = evaluate_ppl(model, splits["valid"], cfg)
            lines.append(_metrics_line(epoch, stats.mean_nll, valid_ppl, lr))
            if verbose:
                print(
                    f"epoch {epoch}: train_nll={stats.mean_nll:.4f} "
                    f"valid_ppl={valid_ppl:.2f} lr={lr:.4g} wall={stats.seconds:.1f}s"
                )
            if valid_ppl < best_ppl:
                best_ppl = valid_ppl
                best_epoch = epoch
                best_params = {n: model.params[n].copy() for n in model.parameter_names()}
            else:
                lr *= cfg.anneal_factor
    if best_params is not None:
        for name, arr in best_params.items():
            model.params[name][...] = arr
    test_ppl = None
    if "test" in splits and best_params is not None:
        test_ppl = evaluate_ppl(model, splits["test"], cfg)
    saved = None
    if checkpoint_path is not None and best_params is not None:
        save_checkpoint(model, checkpoint_path)
        saved = str(checkpoint_path)
    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
    return TrainResult(
        best_epoch=best_epoch,
        best_valid_ppl=best_ppl,
        test_ppl=test_ppl,
        metrics_lines=lines,
        epochs_run=epochs_run,
        diverged=diverged,
        divergence_message=message,
        checkpoint_path=saved,
    )
