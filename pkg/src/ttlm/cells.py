"""One-step forward and backward computations for the recurrent cell zoo.

Seven cell variants share one interface. Three live natively in tensor-train
form (the full shared-core cell and its two factored variants), three are the
classic multiplicative baselines (RAC, multiplicative-integration RNN,
second-order RNN), and one is the additive vanilla RNN. Per-word one-hot
contractions are implemented as row/column selection throughout; the
fourth-order diagonal coupling tensor of the factored variants is realized as
a reshape so the input/hidden interaction is a pair of matrix products.

Forward passes accept a batch of word indices and hidden states; the scalar
`step`/`backward_step` wrappers operate on a single (word, state) pair.
Backward passes are hand-derived reverse-mode gradients checked against
central finite differences in the test suite. Gradients never clip or rescale
here: if a hidden state leaves the finite range the step raises.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .tensor import NumericalDivergenceError, ShapeError

__all__ = [
    "CellTag",
    "CellKind",
    "CellParams",
    "TT_FAMILY",
    "DEFAULT_ACTIVATION",
    "ACTIVATIONS",
    "cell_array_specs",
    "init_params",
    "forward",
    "backward",
    "step",
    "backward_step",
]

ACTIVATIONS = ("none", "tanh")


class CellTag(str, Enum):
    TTLM = "ttlm"
    TTLM_TINY = "ttlm-tiny"
    TTLM_LARGE = "ttlm-large"
    VANILLA_RNN = "rnn"
    RAC = "rac"
    MI_RNN = "mi-rnn"
    SECOND_ORDER = "second-order"


# Tensor-train family: the hidden dimension is the bond rank and the embed
# size is forced to its square.
TT_FAMILY = frozenset({CellTag.TTLM, CellTag.TTLM_TINY, CellTag.TTLM_LARGE})

# Linear multiplicative cells default to no activation; the classic RNN
# baselines default to tanh. Ablations may override either way.
DEFAULT_ACTIVATION = {
    CellTag.TTLM: "none",
    CellTag.TTLM_TINY: "none",
    CellTag.TTLM_LARGE: "none",
    CellTag.RAC: "none",
    CellTag.VANILLA_RNN: "tanh",
    CellTag.MI_RNN: "tanh",
    CellTag.SECOND_ORDER: "tanh",
}


@dataclass(frozen=True)
class CellKind:
    """A cell variant plus its (possibly overridden) activation."""

    tag: CellTag
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @classmethod
    def make(cls, tag, activation: str | None = None) -> "CellKind":
        tag = CellTag(tag)
        return cls(tag, activation if activation is not None else DEFAULT_ACTIVATION[tag])

    def __str__(self) -> str:
        return f"{self.tag.value}[{self.activation}]"


def resolve_embed_size(tag: CellTag, hidden: int, embed: int | None) -> int:
    """Embed size: the squared rank for the TT family, free otherwise."""
    if tag in TT_FAMILY:
        if embed is not None and embed != hidden * hidden:
            raise ValueError(
                f"{tag.value} requires embed size {hidden * hidden} (= rank squared), got {embed}"
            )
        return hidden * hidden
    return embed if embed is not None else hidden * hidden


def cell_array_specs(tag: CellTag, vocab_size: int, hidden: int, embed: int) -> list[tuple[str, tuple[int, ...]]]:
    """Trainable cell arrays in declared (initialization and storage) order."""
    v, h, e = vocab_size, hidden, embed
    if tag is CellTag.TTLM:
        specs = [("g_mid", (h, v, h))]
    elif tag is CellTag.TTLM_TINY:
        specs = [("w_xe", (v, h * h)), ("w_hh", (h, h))]
    elif tag is CellTag.TTLM_LARGE:
        specs = [("w_xe", (v, h * h)), ("w_eh", (h * h, h * h)), ("w_hh", (h, h))]
    elif tag in (CellTag.VANILLA_RNN, CellTag.RAC, CellTag.MI_RNN):
        specs = [("w_xe", (e, v)), ("w_eh", (e, h)), ("w_hh", (h, h))]
    elif tag is CellTag.SECOND_ORDER:
        specs = [("w_xe", (e, v)), ("proj", (e, h)), ("t3", (h, h, h)), ("b", (h,))]
    else:  # pragma: no cover
        raise ValueError(f"unknown cell tag {tag}")
    specs.append(("g_init", (h,)))
    return specs


@dataclass
class CellParams:
    """Per-variant trainable cell parameters with validated shapes."""

    kind: CellKind
    vocab_size: int
    hidden: int
    embed: int
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        expected = dict(cell_array_specs(self.kind.tag, self.vocab_size, self.hidden, self.embed))
        if set(self.arrays) != set(expected):
            raise ShapeError(
                f"{self.kind.tag.value} expects arrays {sorted(expected)}, got {sorted(self.arrays)}"
            )
        for name, shape in expected.items():
            arr = self.arrays[name]
            if arr.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {arr.shape}")
            if arr.dtype != np.float64:
                raise ShapeError(f"{name} must be float64, got {arr.dtype}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


# Uniform init half-widths: embeddings get 0.1, recurrent-family tensors get
# 1/sqrt(hidden). Biases start at zero.
_EMBED_LIKE = {"w_xe", "g_init"}
_ZERO_INIT = {"b"}


def _init_width(name: str, hidden: int) -> float:
    if name in _EMBED_LIKE:
        return 0.1
    return 1.0 / np.sqrt(hidden)


def init_params(kind: CellKind, vocab_size: int, hidden: int,
                embed: int | None = None, seed: int = 0) -> CellParams:
    """Freshly initialized cell parameters, deterministic in the seed.

    Arrays are drawn in declared order from one generator, so a given
    (kind, shape, seed) triple always produces bitwise-identical values.
    """
    embed = resolve_embed_size(kind.tag, hidden, embed)
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in cell_array_specs(kind.tag, vocab_size, hidden, embed):
        if name in _ZERO_INIT:
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            w = _init_width(name, hidden)
            arrays[name] = rng.uniform(-w, w, size=shape)
    return CellParams(kind, vocab_size, hidden, embed, arrays)


def _apply_activation(kind: CellKind, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if kind.activation == "tanh" else z


def _activation_backward(kind: CellKind, h_new: np.ndarray, dh_new: np.ndarray) -> np.ndarray:
    if kind.activation == "tanh":
        return dh_new * (1.0 - h_new * h_new)
    return dh_new


def _check_words(words: np.ndarray, vocab_size: int) -> np.ndarray:
    words = np.asarray(words, dtype=np.int64)
    if words.ndim != 1:
        raise ShapeError(f"word indices must be a 1-d batch, got shape {words.shape}")
    if words.size and (words.min() < 0 or words.max() >= vocab_size):
        raise IndexError(f"word index out of range for vocabulary of {vocab_size}")
    return words


def forward(params: CellParams, words, h: np.ndarray) -> tuple[np.ndarray, dict]:
    """One batched recurrence step: (B,) word indices x (B, H) states.

    Returns the new hidden states and a cache holding the intermediates the
    matching :func:`backward` call needs.
    """
    kind = params.kind
    tag = kind.tag
    words = _check_words(words, params.vocab_size)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape != (words.shape[0], params.hidden):
        raise ShapeError(
            f"hidden batch must have shape ({words.shape[0]}, {params.hidden}), got {h.shape}"
        )
    cache: dict = {"words": words, "h": h}
    r = params.hidden

    if tag is CellTag.TTLM:
        slices = params["g_mid"].transpose(1, 0, 2)[words]  # (B, R_out, R_in)
        z = np.einsum("bij,bj->bi", slices, h)
        cache["slices"] = slices
    elif tag is CellTag.TTLM_TINY:
        e_mat = params["w_xe"][words].reshape(-1, r, r)
        u = h @ params["w_hh"].T
        z = np.einsum("bij,bj->bi", e_mat, u)
        cache["e_mat"] = e_mat
        cache["u"] = u
    elif tag is CellTag.TTLM_LARGE:
        e = params["w_xe"][words]
        ehat = (e @ params["w_eh"].T).reshape(-1, r, r)
        u = h @ params["w_hh"].T
        z = np.einsum("bij,bj->bi", ehat, u)
        cache["e"] = e
        cache["ehat"] = ehat
        cache["u"] = u
    elif tag is CellTag.VANILLA_RNN:
        x = params["w_xe"][:, words].T
        u = h @ params["w_hh"].T
        z = x @ params["w_eh"] + u
        cache["x"] = x
    elif tag in (CellTag.RAC, CellTag.MI_RNN):
        x = params["w_xe"][:, words].T
        a = x @ params["w_eh"]
        u = h @ params["w_hh"].T
        z = a * u
        cache["x"] = x
        cache["a"] = a
        cache["u"] = u
    elif tag is CellTag.SECOND_ORDER:
        x = params["w_xe"][:, words].T
        ehat = x @ params["proj"]
        z = np.einsum("bm,imk,bk->bi", ehat, params["t3"], h) + params["b"]
        cache["x"] = x
        cache["ehat"] = ehat
    else:  # pragma: no cover
        raise ValueError(f"unknown cell tag {tag}")

    h_new = _apply_activation(kind, z)
    if not np.all(np.isfinite(h_new)):
        raise NumericalDivergenceError(
            f"non-finite hidden state after a {tag.value} step"
        )
    cache["h_new"] = h_new
    return h_new, cache


def backward(params: CellParams, cache: Mapping, dh_new: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse-mode gradients of one batched step.

    Returns per-array gradients (only the arrays this step touched) and the
    gradient with respect to the incoming hidden states. Gradients from
    several steps of one window are meant to be summed by the caller.
    """
    kind = params.kind
    tag = kind.tag
    words = cache["words"]
    h = cache["h"]
    dz = _activation_backward(kind, cache["h_new"], np.asarray(dh_new, dtype=np.float64))
    grads: dict[str, np.ndarray] = {}
    r = params.hidden

    if tag is CellTag.TTLM:
        slices = cache["slices"]
        dh = np.einsum("bij,bi->bj", slices, dz)
        dslices = np.einsum("bi,bj->bij", dz, h)
        g = np.zeros((params.vocab_size, r, r))
        np.add.at(g, words, dslices)
        grads["g_mid"] = g.transpose(1, 0, 2)
    elif tag is CellTag.TTLM_TINY:
        e_mat, u = cache["e_mat"], cache["u"]
        de_mat = np.einsum("bi,bj->bij", dz, u)
        du = np.einsum("bij,bi->bj", e_mat, dz)
        g = np.zeros_like(params["w_xe"])
        np.add.at(g, words, de_mat.reshape(len(words), -1))
        grads["w_xe"] = g
        grads["w_hh"] = du.T @ h
        dh = du @ params["w_hh"]
    elif tag is CellTag.TTLM_LARGE:
        e, ehat, u = cache["e"], cache["ehat"], cache["u"]
        dehat = np.einsum("bi,bj->bij", dz, u).reshape(len(words), -1)
        du = np.einsum("bij,bi->bj", ehat, dz)
        grads["w_eh"] = dehat.T @ e
        de = dehat @ params["w_eh"]
        g = np.zeros_like(params["w_xe"])
        np.add.at(g, words, de)
        grads["w_xe"] = g
        grads["w_hh"] = du.T @ h
        dh = du @ params["w_hh"]
    elif tag is CellTag.VANILLA_RNN:
        x = cache["x"]
        grads["w_eh"] = x.T @ dz
        dx = dz @ params["w_eh"].T
        g = np.zeros_like(params["w_xe"])
        np.add.at(g.T, words, dx)
        grads["w_xe"] = g
        grads["w_hh"] = dz.T @ h
        dh = dz @ params["w_hh"]
    elif tag in (CellTag.RAC, CellTag.MI_RNN):
        x, a, u = cache["x"], cache["a"], cache["u"]
        da = dz * u
        du = dz * a
        grads["w_eh"] = x.T @ da
        dx = da @ params["w_eh"].T
        g = np.zeros_like(params["w_xe"])
        np.add.at(g.T, words, dx)
        grads["w_xe"] = g
        grads["w_hh"] = du.T @ h
        dh = du @ params["w_hh"]
    elif tag is CellTag.SECOND_ORDER:
        x, ehat = cache["x"], cache["ehat"]
        t3 = params["t3"]
        grads["b"] = dz.sum(axis=0)
        grads["t3"] = np.einsum("bi,bm,bk->imk", dz, ehat, h)
        dehat = np.einsum("bi,imk,bk->bm", dz, t3, h)
        dh = np.einsum("bi,imk,bm->bk", dz, t3, ehat)
        grads["proj"] = x.T @ dehat
        dx = dehat @ params["proj"].T
        g = np.zeros_like(params["w_xe"])
        np.add.at(g.T, words, dx)
        grads["w_xe"] = g
    else:  # pragma: no cover
        raise ValueError(f"unknown cell tag {tag}")

    return grads, dh


def step(params: CellParams, word_index: int, h_prev: np.ndarray) -> np.ndarray:
    """Single-sequence step: one word index, one (H,) hidden vector."""
    h_new, _ = forward(params, np.array([word_index]), np.asarray(h_prev, dtype=np.float64)[None, :])
    return h_new[0]


def backward_step(params: CellParams, word_index: int, h_prev: np.ndarray,
                  grad_h_next: np.ndarray, cache: dict | None = None) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a single-sequence step; recomputes the forward if no cache."""
    if cache is None:
        _, cache = forward(params, np.array([word_index]), np.asarray(h_prev, dtype=np.float64)[None, :])
    grads, dh = backward(params, cache, np.asarray(grad_h_next, dtype=np.float64)[None, :])
    return grads, dh[0]
