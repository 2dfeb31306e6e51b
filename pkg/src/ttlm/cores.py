"""Tensor-train sequence scoring and its exponential-space ground truth.

A sequence score is a single entry of a huge order-N coefficient tensor that
is never stored directly: it factors into a chain of small cores, one shared
core per interior position. This module keeps both views side by side:

* the recursive, low-dimensional computations actually used by the models
  (:func:`score_recursive`, :func:`conditional_recursive`), and
* brute-force references that really build the exponential objects
  (:func:`materialize_coefficients`, :func:`phi_of_sequence`,
  :func:`score_bruteforce`, :func:`conditional_bruteforce`), guarded by an
  explicit entry cap.

The shared middle core is stored as (out_bond, vocab, in_bond), so one step
of the recursion is ``h_new = g_mid[:, w, :] @ h``. Constructors are provided
that assemble the middle core from a multiplicative (Hadamard-style) cell and
from a second-order bilinear map, which is how those architectures embed in
the tensor-train picture.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .tensor import (
    ShapeError,
    as_tensor,
    generalized_inner_product,
    inner_product,
    one_hot,
    softmax,
    tensor_product,
)

__all__ = [
    "DEFAULT_ENTRY_CAP",
    "EntryCapExceededError",
    "TTCores",
    "SequenceEncoding",
    "phi_of_sequence",
    "tt_element",
    "materialize_coefficients",
    "score_bruteforce",
    "score_recursive",
    "conditional_bruteforce",
    "conditional_recursive",
    "cores_from_hadamard",
    "core_from_secondorder",
    "secondorder_from_core",
]

# Materialized brute-force tensors are definitional, not computational; this
# cap bounds how many fp64 entries one may hold.
DEFAULT_ENTRY_CAP = 10_000_000


class EntryCapExceededError(ValueError):
    """A brute-force tensor would exceed the configured entry cap."""


def _check_cap(vocab_size: int, order: int, entry_cap: int) -> None:
    entries = vocab_size**order
    if entries > entry_cap:
        raise EntryCapExceededError(
            f"materializing {vocab_size}^{order} = {entries} entries exceeds "
            f"the cap of {entry_cap}"
        )


@dataclass(frozen=True)
class SequenceEncoding:
    """A word sequence as a tuple of vocabulary indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(self.indices) < 1:
            raise ValueError("a sequence must contain at least one word")
        if any(i < 0 for i in self.indices):
            raise ValueError("word indices must be non-negative")

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def _as_indices(seq, vocab_size: int) -> tuple[int, ...]:
    idx = tuple(seq.indices if isinstance(seq, SequenceEncoding) else (int(i) for i in seq))
    for i in idx:
        if not 0 <= i < vocab_size:
            raise IndexError(f"word index {i} out of range for vocabulary of {vocab_size}")
    return idx


@dataclass(frozen=True)
class TTCores:
    """The core triple of a shared-core tensor train over a vocabulary.

    ``g_first`` maps the first word to the initial bond vector (one row per
    word, or a single row when ``collapsed`` and the row doubles as a plain
    initial hidden state). ``g_mid`` is the shared interior core with modes
    (out_bond, vocab, in_bond). ``g_out`` maps the final bond vector to a
    score per word. ``tied`` records the convention that the output core
    reuses the first core's storage.
    """

    g_first: np.ndarray
    g_mid: np.ndarray
    g_out: np.ndarray
    tied: bool = False
    collapsed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "g_first", as_tensor(self.g_first))
        object.__setattr__(self, "g_mid", as_tensor(self.g_mid))
        object.__setattr__(self, "g_out", as_tensor(self.g_out))
        if self.g_mid.ndim != 3 or self.g_mid.shape[0] != self.g_mid.shape[2]:
            raise ShapeError(f"middle core must be (R, V, R), got {self.g_mid.shape}")
        rank = self.g_mid.shape[0]
        vocab = self.g_mid.shape[1]
        if self.g_out.shape != (vocab, rank):
            raise ShapeError(f"output core must be ({vocab}, {rank}), got {self.g_out.shape}")
        expected_first = (1, rank) if self.collapsed else (vocab, rank)
        if self.g_first.shape != expected_first:
            raise ShapeError(
                f"first core must be {expected_first}, got {self.g_first.shape}"
            )
        if self.tied:
            if self.collapsed:
                raise ShapeError("a collapsed first core cannot be tied to the output core")
            if self.g_out is not self.g_first:
                raise ShapeError("tied cores must share the same array")

    @property
    def rank(self) -> int:
        return self.g_mid.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.g_mid.shape[1]

    @classmethod
    def random(cls, vocab_size: int, rank: int, seed: int, *, tied: bool = False,
               collapsed: bool = False) -> "TTCores":
        """Uniform[-1, 1] cores from a fixed seed, for oracle fixtures."""
        rng = np.random.default_rng(seed)
        first_rows = 1 if collapsed else vocab_size
        g_first = rng.uniform(-1.0, 1.0, size=(first_rows, rank))
        g_mid = rng.uniform(-1.0, 1.0, size=(rank, vocab_size, rank))
        g_out = g_first if tied else rng.uniform(-1.0, 1.0, size=(vocab_size, rank))
        return cls(g_first, g_mid, g_out, tied=tied, collapsed=collapsed)


def phi_of_sequence(seq, vocab_size: int, entry_cap: int = DEFAULT_ENTRY_CAP) -> np.ndarray:
    """Order-N one-hot encoding of a sequence: the outer product of its words.

    The result has one mode of dimension ``vocab_size`` per word and a single
    1 at the position given by the word indices.
    """
    idx = _as_indices(seq, vocab_size)
    _check_cap(vocab_size, len(idx), entry_cap)
    phi = one_hot(idx[0], vocab_size)
    for w in idx[1:]:
        phi = tensor_product(phi, one_hot(w, vocab_size))
    return phi


def tt_element(cores: TTCores, seq) -> float:
    """One coefficient as the explicit chain product of sliced cores.

    The row of the first core for the first word, times the interior-core
    slices of the middle words multiplied together into one bond-space
    matrix, times the output-core row for the last word.
    """
    if cores.collapsed:
        raise ShapeError("chain products need an uncollapsed first core")
    idx = _as_indices(seq, cores.vocab_size)
    if len(idx) < 2:
        raise ValueError("chain products are defined for sequences of length >= 2")
    chain = np.eye(cores.rank)
    for w in idx[1:-1]:
        chain = cores.g_mid[:, w, :] @ chain
    return float(cores.g_out[idx[-1], :] @ chain @ cores.g_first[idx[0], :])


def materialize_coefficients(cores: TTCores, n: int,
                             entry_cap: int = DEFAULT_ENTRY_CAP) -> np.ndarray:
    """The full order-``n`` coefficient tensor, built by batch contraction.

    Entry (w1, ..., wn) equals ``tt_element(cores, (w1, ..., wn))``. This
    deliberately follows a different evaluation order than the per-entry
    chain so the exhaustive agreement test is not a tautology.
    """
    if cores.collapsed:
        raise ShapeError("materialization needs an uncollapsed first core")
    if n < 2:
        raise ValueError("the coefficient tensor has order >= 2")
    _check_cap(cores.vocab_size, n, entry_cap)
    # acc modes: (w1, ..., wk, bond)
    acc = cores.g_first
    for _ in range(n - 2):
        # contract the bond, pick up (out_bond, vocab) from the middle core,
        # then put the new word mode before the new bond mode
        acc = np.tensordot(acc, cores.g_mid, axes=([-1], [2]))
        acc = np.swapaxes(acc, -1, -2)
    return np.tensordot(acc, cores.g_out, axes=([-1], [1]))


def score_bruteforce(cores: TTCores, seq,
                     entry_cap: int = DEFAULT_ENTRY_CAP) -> float:
    """Sequence score as an inner product in the exponential space."""
    idx = _as_indices(seq, cores.vocab_size)
    coeffs = materialize_coefficients(cores, len(idx), entry_cap)
    phi = phi_of_sequence(idx, cores.vocab_size, entry_cap)
    return inner_product(coeffs, phi)


def score_recursive(cores: TTCores, seq) -> float:
    """Sequence score via the hidden-state recursion; no exponential object.

    The bond vector after the first word acts as a hidden state; each middle
    word updates it through the shared core; the output core's row for the
    last word reads the score off.
    """
    if cores.collapsed:
        raise ShapeError("the sequence recursion needs an uncollapsed first core")
    idx = _as_indices(seq, cores.vocab_size)
    if len(idx) < 2:
        raise ValueError("the sequence recursion is defined for length >= 2")
    h = cores.g_first[idx[0], :]
    for w in idx[1:-1]:
        h = cores.g_mid[:, w, :] @ h
    return float(cores.g_out[idx[-1], :] @ h)


def _prefix_coefficients(cores: TTCores, prefix_len: int, entry_cap: int) -> np.ndarray:
    """Coefficient tensor over (prefix words..., next word)."""
    order = prefix_len + 1
    _check_cap(cores.vocab_size, order, entry_cap)
    if cores.collapsed:
        # every prefix word goes through the shared core; the single stored
        # row plays the initial hidden state
        acc = cores.g_first[0, :]
        middles = prefix_len
    else:
        acc = cores.g_first
        middles = prefix_len - 1
    for _ in range(middles):
        acc = np.tensordot(acc, cores.g_mid, axes=([-1], [2]))
        acc = np.swapaxes(acc, -1, -2)
    return np.tensordot(acc, cores.g_out, axes=([-1], [1]))


def conditional_bruteforce(cores: TTCores, prefix,
                           entry_cap: int = DEFAULT_ENTRY_CAP) -> np.ndarray:
    """Next-word distribution computed against the materialized prefix tensor.

    Builds the coefficient tensor one order higher than the prefix, contracts
    it with the prefix's one-hot encoding over all shared modes, and
    normalizes the resulting per-word scores with softmax.
    """
    idx = _as_indices(prefix, cores.vocab_size)
    coeffs = _prefix_coefficients(cores, len(idx), entry_cap)
    phi = phi_of_sequence(idx, cores.vocab_size, entry_cap)
    logits = generalized_inner_product(phi, coeffs, len(idx))
    return softmax(logits)


def conditional_recursive(cores: TTCores, prefix) -> np.ndarray:
    """Next-word distribution via the hidden-state recursion."""
    idx = _as_indices(prefix, cores.vocab_size)
    if cores.collapsed:
        h = cores.g_first[0, :]
        rest = idx
    else:
        h = cores.g_first[idx[0], :]
        rest = idx[1:]
    for w in rest:
        h = cores.g_mid[:, w, :] @ h
    return softmax(cores.g_out @ h)


def cores_from_hadamard(w_hx, w_hh) -> np.ndarray:
    """Middle core realizing a multiplicative cell.

    A cell ``h_new = (w_hx @ f(x)) * (w_hh @ h)`` couples its two matrix
    outputs entry by entry; routed through the order-3 diagonal coupling
    tensor this is exactly a shared core with
    ``G[a, w, b] = w_hx[a, w] * w_hh[a, b]``.
    """
    w_hx = as_tensor(w_hx)
    w_hh = as_tensor(w_hh)
    if w_hx.ndim != 2 or w_hh.ndim != 2:
        raise ShapeError("expected matrices (R, V) and (R, R)")
    r = w_hx.shape[0]
    if w_hh.shape != (r, r):
        raise ShapeError(f"hidden matrix must be ({r}, {r}), got {w_hh.shape}")
    return np.einsum("aw,ab->awb", w_hx, w_hh)


def core_from_secondorder(t3) -> np.ndarray:
    """Middle core equal to a second-order cell's bilinear map.

    ``t3`` has modes (out_hidden, vocab, in_hidden); slice ``t3[:, w, :]``
    is the hidden-to-hidden map applied when word ``w`` is read, which is
    precisely the shared core's role. Only the index bookkeeping differs, so
    this is a validated relabeling.
    """
    t3 = as_tensor(t3)
    if t3.ndim != 3 or t3.shape[0] != t3.shape[2]:
        raise ShapeError(f"bilinear map must be (H, V, H), got {t3.shape}")
    return t3.copy()


def secondorder_from_core(g_mid) -> np.ndarray:
    """Inverse of :func:`core_from_secondorder` (exact round-trip)."""
    g_mid = as_tensor(g_mid)
    if g_mid.ndim != 3 or g_mid.shape[0] != g_mid.shape[2]:
        raise ShapeError(f"middle core must be (R, V, R), got {g_mid.shape}")
    return g_mid.copy()
