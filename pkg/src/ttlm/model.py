"""Full language models: cell + output head + loss + persistence.

A model owns one flat name->array parameter dictionary. The cell arrays come
from :mod:`ttlm.cells`; the head adds a projector and an output embedding.
With weight tying (the default) the output embedding *is* the input embedding
array, so gradients from the embedding lookup and from the logits accumulate
into a single buffer. The pure tensor-train model has no separate embedding:
its first core collapses to a trainable initial-state row and its output core
plays the classifier.

Checkpoints are self-describing binary files (magic, version, JSON config
header, then raw little-endian float64 blobs in declared order) and round-trip
bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cells
from .cells import CellKind, CellParams, CellTag, TT_FAMILY
from .tensor import NumericalDivergenceError, ShapeError

__all__ = [
    "ModelConfig",
    "RecurrentLM",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "CheckpointMismatchError",
    "save_checkpoint",
    "load_checkpoint",
    "sample_sequence",
]

CHECKPOINT_MAGIC = b"TTLMCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic string or malformed header/payload."""


class CheckpointVersionError(CheckpointError):
    """The file's format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before all declared parameter bytes."""


class CheckpointMismatchError(CheckpointError):
    """The file's model kind or shapes do not match what was expected."""


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters fixing a model's architecture."""

    kind: CellKind
    rank_or_hidden: int
    vocab_size: int
    embed_size: int | None = None
    tie_weights: bool = True
    zero_init_hidden: bool = False

    def __post_init__(self):
        if self.rank_or_hidden < 1:
            raise ValueError("rank/hidden size must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocabulary size must be >= 2")
        resolved = cells.resolve_embed_size(self.kind.tag, self.rank_or_hidden, self.embed_size)
        object.__setattr__(self, "embed_size", resolved)


def head_array_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Output-head arrays in declared order (after the cell arrays)."""
    v = config.vocab_size
    h = config.rank_or_hidden
    e = config.embed_size
    if config.kind.tag is CellTag.TTLM:
        return [("g_out", (v, h))]
    if config.kind.tag in TT_FAMILY:
        specs = [("p", (e, h))]
        if not config.tie_weights:
            specs.append(("v", (v, e)))
        return specs
    specs = [("p", (h, e))]
    if not config.tie_weights:
        specs.append(("v", (e, v)))
    return specs


class RecurrentLM:
    """A recurrent language model with a trainable initial hidden state."""

    def __init__(self, config: ModelConfig, seed: int = 0, _arrays: dict | None = None):
        self.config = config
        self.seed = seed
        h = config.rank_or_hidden
        if _arrays is None:
            cell = cells.init_params(config.kind, config.vocab_size, h,
                                     config.embed_size, seed=seed)
            params = dict(cell.arrays)
            rng = np.random.default_rng([seed, 1])
            for name, shape in head_array_specs(config):
                width = 0.1 if name in ("g_out", "v") else 1.0 / np.sqrt(h)
                params[name] = rng.uniform(-width, width, size=shape)
            if config.zero_init_hidden:
                params["g_init"] = np.zeros(h, dtype=np.float64)
        else:
            params = _arrays
            cell_names = {n for n, _ in cells.cell_array_specs(config.kind.tag, config.vocab_size, h, config.embed_size)}
            cell = CellParams(config.kind, config.vocab_size, h, config.embed_size,
                              {n: params[n] for n in cell_names})
            for name, shape in head_array_specs(config):
                if params[name].shape != shape:
                    raise ShapeError(f"{name} must have shape {shape}, got {params[name].shape}")
        self.params = params
        self.cell_params = cell
        # zero-init hidden states are frozen at zero for baseline parity
        self.frozen = frozenset({"g_init"}) if config.zero_init_hidden else frozenset()

    # -- basic accessors ---------------------------------------------------

    def parameter_names(self) -> list[str]:
        """All arrays in declared (storage) order."""
        names = [n for n, _ in cells.cell_array_specs(
            self.config.kind.tag, self.config.vocab_size,
            self.config.rank_or_hidden, self.config.embed_size)]
        names.extend(n for n, _ in head_array_specs(self.config))
        return names

    def trainable_names(self) -> list[str]:
        return [n for n in self.parameter_names() if n not in self.frozen]

    def parameter_count(self) -> int:
        """Number of trainable scalar parameters."""
        return int(sum(self.params[n].size for n in self.trainable_names()))

    def clone(self) -> "RecurrentLM":
        arrays = {n: self.params[n].copy() for n in self.parameter_names()}
        return RecurrentLM(self.config, self.seed, _arrays=arrays)

    # -- forward pieces ------------------------------------------------------

    def init_hidden(self, batch_size: int | None = None) -> np.ndarray:
        """Initial hidden state: the trainable row (or frozen zeros)."""
        g = self.params["g_init"]
        if batch_size is None:
            return g.copy()
        return np.tile(g, (batch_size, 1))

    def logits(self, hs: np.ndarray) -> np.ndarray:
        """Vocabulary scores for a batch of hidden states (n, H) -> (n, V)."""
        p = self.params
        tag = self.config.kind.tag
        if tag is CellTag.TTLM:
            return hs @ p["g_out"].T
        if tag in TT_FAMILY:
            u = hs @ p["p"].T
            v = p["w_xe"] if self.config.tie_weights else p["v"]
            return u @ v.T
        u = hs @ p["p"]
        v = p["w_xe"] if self.config.tie_weights else p["v"]
        return u @ v

    def _head_backward(self, hs: np.ndarray, dlogits: np.ndarray,
                       grads: dict[str, np.ndarray]) -> np.ndarray:
        p = self.params
        tag = self.config.kind.tag
        if tag is CellTag.TTLM:
            _accumulate(grads, "g_out", dlogits.T @ hs)
            return dlogits @ p["g_out"]
        vname = "w_xe" if self.config.tie_weights else "v"
        if tag in TT_FAMILY:
            u = hs @ p["p"].T
            _accumulate(grads, vname, dlogits.T @ u)
            du = dlogits @ p[vname]
            _accumulate(grads, "p", du.T @ hs)
            return du @ p["p"]
        u = hs @ p["p"]
        _accumulate(grads, vname, u.T @ dlogits)
        du = dlogits @ p[vname].T
        _accumulate(grads, "p", hs.T @ du)
        return du @ p["p"].T

    def predict(self, h: np.ndarray) -> np.ndarray:
        """Next-word distribution from one hidden state."""
        h = np.asarray(h, dtype=np.float64)
        z = self.logits(h[None, :])[0]
        if not np.all(np.isfinite(z)):
            raise NumericalDivergenceError("non-finite logits in the output head")
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    # -- losses and gradients ------------------------------------------------

    def sequence_nll(self, seq) -> tuple[float, list[float]]:
        """Total and per-position negative log-likelihood of one sequence.

        Every position is predicted, the first one from the initial hidden
        state; natural logarithms throughout.
        """
        idx = [int(w) for w in (seq.indices if hasattr(seq, "indices") else seq)]
        if len(idx) < 1:
            raise ValueError("sequence must contain at least one token")
        h = self.init_hidden(batch_size=1)
        per_step: list[float] = []
        for t, w in enumerate(idx):
            logp = _log_softmax(self.logits(h))
            per_step.append(float(-logp[0, w]))
            if t + 1 < len(idx):
                h, _ = cells.forward(self.cell_params, np.array([idx[t]]), h)
        return float(sum(per_step)), per_step

    def sequence_grads(self, seq) -> tuple[float, dict[str, np.ndarray]]:
        """Gradients of the total sequence NLL with respect to every array."""
        idx = [int(w) for w in (seq.indices if hasattr(seq, "indices") else seq)]
        n = len(idx)
        h = self.init_hidden(batch_size=1)
        states = [h]
        caches = []
        for t in range(n - 1):
            h, cache = cells.forward(self.cell_params, np.array([idx[t]]), h)
            states.append(h)
            caches.append(cache)
        hs = np.concatenate(states, axis=0)  # (n, H); row t predicts idx[t]
        z = self.logits(hs)
        if not np.all(np.isfinite(z)):
            raise NumericalDivergenceError("non-finite logits in the output head")
        logp = _log_softmax(z)
        targets = np.asarray(idx)
        total = float(-logp[np.arange(n), targets].sum())
        dlogits = np.exp(logp)
        dlogits[np.arange(n), targets] -= 1.0
        grads: dict[str, np.ndarray] = {}
        dh_head = self._head_backward(hs, dlogits, grads)
        dh = dh_head[n - 1][None, :]
        for t in range(n - 2, -1, -1):
            cell_grads, dh = cells.backward(self.cell_params, caches[t], dh)
            for name, g in cell_grads.items():
                _accumulate(grads, name, g)
            dh = dh + dh_head[t][None, :]
        if "g_init" not in self.frozen:
            _accumulate(grads, "g_init", dh[0])
        return total, grads

    def window_forward(self, h0: np.ndarray, inputs: np.ndarray, targets: np.ndarray):
        """Forward pass over one window: returns (nll_sum, n_tokens, h_last).

        ``inputs`` and ``targets`` are (L, B) index arrays; position t is
        predicted from the state after consuming ``inputs[t]``.
        """
        nll, _, h_last, _ = self._window_core(h0, inputs, targets, need_backward=False)
        return nll, inputs.size, h_last

    def window_loss_and_grads(self, h0: np.ndarray, inputs: np.ndarray,
                              targets: np.ndarray, *, h0_is_init_state: bool = True):
        """Loss and gradients over one truncated-backpropagation window.

        Gradients are of the *mean* per-token NLL within the window. They
        never flow out through ``h0``: when ``h0`` is the trainable
        initial-state row (the default, window-restart semantics) its
        gradient lands there; a carried state is treated as a constant.
        """
        nll, grads, h_last, dh0 = self._window_core(h0, inputs, targets, need_backward=True)
        if h0_is_init_state and "g_init" not in self.frozen:
            _accumulate(grads, "g_init", dh0.sum(axis=0))
        return nll, inputs.size, grads, h_last

    def _window_core(self, h0, inputs, targets, need_backward: bool):
        inputs = np.asarray(inputs, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        if inputs.shape != targets.shape or inputs.ndim != 2:
            raise ShapeError("inputs and targets must be equal-shaped (L, B) arrays")
        length, batch = inputs.shape
        h = h0
        states = []
        caches = []
        for t in range(length):
            h, cache = cells.forward(self.cell_params, inputs[t], h)
            states.append(h)
            caches.append(cache)
        hs = np.concatenate(states, axis=0)  # (L*B, H), window-major
        z = self.logits(hs)
        if not np.all(np.isfinite(z)):
            raise NumericalDivergenceError("non-finite logits in the output head")
        logp = _log_softmax(z)
        flat_targets = targets.reshape(-1)
        rows = np.arange(length * batch)
        nll_sum = float(-logp[rows, flat_targets].sum())
        if not need_backward:
            return nll_sum, None, h, None
        scale = 1.0 / (length * batch)
        dlogits = np.exp(logp)
        dlogits[rows, flat_targets] -= 1.0
        dlogits *= scale
        grads: dict[str, np.ndarray] = {}
        dh_head = self._head_backward(hs, dlogits, grads).reshape(length, batch, -1)
        dh = dh_head[length - 1]
        for t in range(length - 2, -1, -1):
            cell_grads, dh = cells.backward(self.cell_params, caches[t + 1], dh)
            for name, g in cell_grads.items():
                _accumulate(grads, name, g)
            dh = dh + dh_head[t]
        cell_grads, dh0 = cells.backward(self.cell_params, caches[0], dh)
        for name, g in cell_grads.items():
            _accumulate(grads, name, g)
        return nll_sum, grads, h, dh0


def _accumulate(grads: dict[str, np.ndarray], name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = np.array(value, dtype=np.float64)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


# -- sampling ----------------------------------------------------------------


def sample_sequence(model: RecurrentLM, length: int, *, temperature: float = 1.0,
                    seed: int = 0, prompt: list[int] | None = None,
                    greedy: bool = False) -> list[int]:
    """Autoregressive sampling; deterministic for a given seed.

    With ``greedy`` the argmax is taken each step (the zero-temperature
    limit); otherwise logits are divided by ``temperature`` before softmax.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(seed)
    h = model.init_hidden(batch_size=1)
    out: list[int] = []
    for w in prompt or []:
        h, _ = cells.forward(model.cell_params, np.array([int(w)]), h)
    for _ in range(length):
        z = model.logits(h)[0]
        if not np.all(np.isfinite(z)):
            raise NumericalDivergenceError("non-finite logits while sampling")
        if greedy:
            w = int(np.argmax(z))
        else:
            zt = z / temperature
            zt -= zt.max()
            p = np.exp(zt)
            p /= p.sum()
            w = int(rng.choice(len(p), p=p))
        out.append(w)
        h, _ = cells.forward(model.cell_params, np.array([w]), h)
    return out


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: RecurrentLM, path) -> None:
    """Write a self-describing, bit-exact binary checkpoint."""
    cfg = model.config
    header = {
        "kind": cfg.kind.tag.value,
        "activation": cfg.kind.activation,
        "rank_or_hidden": cfg.rank_or_hidden,
        "vocab_size": cfg.vocab_size,
        "embed_size": cfg.embed_size,
        "tie_weights": cfg.tie_weights,
        "zero_init_hidden": cfg.zero_init_hidden,
        "seed": model.seed,
        "params": [
            {"name": n, "shape": list(model.params[n].shape)}
            for n in model.parameter_names()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for name in model.parameter_names():
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_checkpoint(path, expected_kind: CellTag | str | None = None) -> RecurrentLM:
    """Read a checkpoint back into a model, validating every layer of it."""
    data = Path(path).read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointTruncatedError(f"{path}: file too short for a checkpoint header")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic string, not a checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version = int.from_bytes(data[off : off + 4], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}"
        )
    off += 4
    header_len = int.from_bytes(data[off : off + 8], "little")
    off += 8
    if off + header_len > len(data):
        raise CheckpointTruncatedError(f"{path}: header extends past end of file")
    try:
        header = json.loads(data[off : off + header_len].decode("utf-8"))
        kind = CellKind.make(header["kind"], header["activation"])
        config = ModelConfig(
            kind=kind,
            rank_or_hidden=int(header["rank_or_hidden"]),
            vocab_size=int(header["vocab_size"]),
            embed_size=int(header["embed_size"]),
            tie_weights=bool(header["tie_weights"]),
            zero_init_hidden=bool(header["zero_init_hidden"]),
        )
        declared = [(p["name"], tuple(int(d) for d in p["shape"])) for p in header["params"]]
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: malformed header ({exc})") from exc
    if expected_kind is not None and kind.tag != CellTag(expected_kind):
        raise CheckpointMismatchError(
            f"{path}: checkpoint holds a {kind.tag.value} model, expected {CellTag(expected_kind).value}"
        )
    off += header_len
    arrays: dict[str, np.ndarray] = {}
    for name, shape in declared:
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if off + nbytes > len(data):
            raise CheckpointTruncatedError(f"{path}: parameter {name} is truncated")
        arrays[name] = np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - off} trailing bytes after parameters")
    expected_names = None
    try:
        model = RecurrentLM(config, seed=int(header["seed"]), _arrays=arrays)
    except (ShapeError, KeyError) as exc:
        raise CheckpointMismatchError(f"{path}: parameter set does not match config ({exc})") from exc
    if model.parameter_names() != [n for n, _ in declared]:
        raise CheckpointMismatchError(f"{path}: parameter order does not match config")
    return model
