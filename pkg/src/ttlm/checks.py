"""Self-contained numerical equivalence suites.

Each suite pits a low-dimensional computation against an independent
reference on seeded instances and reports the worst residual:

* inner-product-vs-chain-product: exponential-space scoring (materialized
  coefficient tensor against the one-hot encoding) vs the explicit chain
  product of core slices.
* chain-product-vs-recursion: the chain product vs the hidden-state
  recursion.
* conditional-recursive-vs-bruteforce: recursive next-word distributions vs
  the materialized prefix tensor, plus the sum-to-one check.
* second-order-equivalence: a dense bilinear (second-order) step, linear and
  tanh, vs the tensor-train step through the relabeled core.
* rac-mi-equivalence: multiplicative (Hadamard) cells, linear and tanh, vs
  the tensor-train step through the assembled core.
* gradient-check: analytic BPTT gradients vs central finite differences for
  every cell variant and activation.

Used by the command-line `check` subcommand and by the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells
from .cells import CellKind, CellTag
from .cores import (
    TTCores,
    conditional_bruteforce,
    conditional_recursive,
    core_from_secondorder,
    cores_from_hadamard,
    score_bruteforce,
    score_recursive,
    tt_element,
)
from .model import ModelConfig, RecurrentLM

__all__ = ["SuiteResult", "run_suite", "run_all", "SUITE_NAMES", "fd_gradient_errors"]


@dataclass
class SuiteResult:
    name: str
    max_residual: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance

    def format_line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (
            f"{self.name}: max residual {self.max_residual:.3e} "
            f"(tolerance {self.tolerance:.0e}, {self.cases} cases) {status}"
        )


def _instance_grid(scale: str):
    """Seeded (vocab, length, rank, seed) instances for the scoring suites."""
    if scale == "large":
        vocabs, lengths, ranks = (2, 3, 4, 6), (2, 3, 4, 5, 6), (1, 2, 3)
    else:
        vocabs, lengths, ranks = (2, 3, 4), (2, 3, 4, 5), (1, 2, 3)
    seed = 0
    for v in vocabs:
        for n in lengths:
            for r in ranks:
                for _ in range(3):
                    yield v, n, r, seed
                    seed += 1


def _sequences(vocab_size: int, length: int, rng: np.random.Generator, count: int = 4):
    for _ in range(count):
        yield tuple(int(w) for w in rng.integers(0, vocab_size, size=length))


def suite_inner_vs_chain(scale: str = "default") -> SuiteResult:
    worst = 0.0
    cases = 0
    for v, n, r, seed in _instance_grid(scale):
        cores = TTCores.random(v, r, seed)
        rng = np.random.default_rng(seed + 10_000)
        for seq in _sequences(v, n, rng):
            worst = max(worst, abs(score_bruteforce(cores, seq) - tt_element(cores, seq)))
            cases += 1
    return SuiteResult("inner-product-vs-chain-product", worst, 1e-12, cases)


def suite_chain_vs_recursion(scale: str = "default") -> SuiteResult:
    worst = 0.0
    cases = 0
    for v, n, r, seed in _instance_grid(scale):
        cores = TTCores.random(v, r, seed)
        rng = np.random.default_rng(seed + 20_000)
        for seq in _sequences(v, n, rng):
            worst = max(worst, abs(tt_element(cores, seq) - score_recursive(cores, seq)))
            cases += 1
    return SuiteResult("chain-product-vs-recursion", worst, 1e-10, cases)


def suite_conditional(scale: str = "default") -> SuiteResult:
    worst = 0.0
    cases = 0
    for v, n, r, seed in _instance_grid(scale):
        cores = TTCores.random(v, r, seed)
        rng = np.random.default_rng(seed + 30_000)
        for prefix in _sequences(v, max(1, n - 1), rng, count=3):
            brute = conditional_bruteforce(cores, prefix)
            rec = conditional_recursive(cores, prefix)
            worst = max(worst, float(np.max(np.abs(brute - rec))))
            worst = max(worst, abs(float(brute.sum()) - 1.0), abs(float(rec.sum()) - 1.0))
            cases += 1
    return SuiteResult("conditional-recursive-vs-bruteforce", worst, 1e-10, cases)


def _ttlm_params_from_core(g_mid: np.ndarray) -> cells.CellParams:
    rank, vocab = g_mid.shape[0], g_mid.shape[1]
    kind = CellKind.make(CellTag.TTLM)
    params = cells.init_params(kind, vocab, rank, seed=0)
    params.arrays["g_mid"][...] = g_mid
    return params


def suite_second_order(vocab_size: int = 5, hidden: int = 3, seeds=(0, 1, 2)) -> SuiteResult:
    """Dense bilinear step vs tensor-train step through the relabeled core."""
    worst = 0.0
    cases = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        t3 = rng.uniform(-1, 1, size=(hidden, vocab_size, hidden))
        params = _ttlm_params_from_core(core_from_secondorder(t3))
        for w in range(vocab_size):
            h = rng.uniform(-1, 1, size=hidden)
            f = np.zeros(vocab_size)
            f[w] = 1.0
            dense = np.einsum("ivk,v,k->i", t3, f, h)
            tt = cells.step(params, w, h)
            worst = max(worst, float(np.max(np.abs(dense - tt))))
            worst = max(worst, float(np.max(np.abs(np.tanh(dense) - np.tanh(tt)))))
            cases += 1
    return SuiteResult("second-order-equivalence", worst, 1e-14, cases)


def suite_rac_mi(vocab_size: int = 5, hidden: int = 3, seeds=(0, 1, 2)) -> SuiteResult:
    """Multiplicative cells vs the tensor-train step through the Hadamard core."""
    worst = 0.0
    cases = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        w_hx = rng.uniform(-1, 1, size=(hidden, vocab_size))
        w_hh = rng.uniform(-1, 1, size=(hidden, hidden))
        tt_params = _ttlm_params_from_core(cores_from_hadamard(w_hx, w_hh))
        # realize the multiplicative cell with an identity embedding factor
        for tag in (CellTag.RAC, CellTag.MI_RNN):
            kind = CellKind.make(tag)
            params = cells.init_params(kind, vocab_size, hidden, embed=hidden, seed=0)
            params.arrays["w_xe"][...] = w_hx
            params.arrays["w_eh"][...] = np.eye(hidden)
            params.arrays["w_hh"][...] = w_hh
            for w in range(vocab_size):
                h = rng.uniform(-1, 1, size=hidden)
                lhs = cells.step(params, w, h)
                tt = cells.step(tt_params, w, h)
                if tag is CellTag.MI_RNN:
                    tt = np.tanh(tt)
                worst = max(worst, float(np.max(np.abs(lhs - tt))))
                cases += 1
    return SuiteResult("rac-mi-equivalence", worst, 1e-14, cases)


def fd_gradient_errors(model: RecurrentLM, seq, step_size: float = 1e-5) -> float:
    """Worst elementwise relative error of analytic vs central-difference grads."""
    _, grads = model.sequence_grads(seq)
    worst = 0.0
    for name in model.trainable_names():
        arr = model.params[name]
        analytic = grads.get(name, np.zeros_like(arr))
        flat = arr.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step_size
            plus, _ = model.sequence_nll(seq)
            flat[i] = orig - step_size
            minus, _ = model.sequence_nll(seq)
            flat[i] = orig
            fd[i] = (plus - minus) / (2 * step_size)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - fd) / denom)))
    return worst


def suite_gradient_check(vocab_size: int = 5, hidden: int = 3) -> SuiteResult:
    """Finite-difference check of full-model gradients for every variant."""
    worst = 0.0
    cases = 0
    rng = np.random.default_rng(99)
    for tag in CellTag:
        for activation in cells.ACTIVATIONS:
            kind = CellKind(tag, activation)
            config = ModelConfig(kind=kind, rank_or_hidden=hidden, vocab_size=vocab_size)
            model = RecurrentLM(config, seed=7)
            seq = tuple(int(w) for w in rng.integers(0, vocab_size, size=3))
            worst = max(worst, fd_gradient_errors(model, seq))
            cases += 1
    return SuiteResult("gradient-check", worst, 1e-4, cases)


SUITE_NAMES = (
    "inner-product-vs-chain-product",
    "chain-product-vs-recursion",
    "conditional-recursive-vs-bruteforce",
    "second-order-equivalence",
    "rac-mi-equivalence",
    "gradient-check",
)


def run_suite(name: str, scale: str = "default") -> SuiteResult:
    if name == "inner-product-vs-chain-product":
        return suite_inner_vs_chain(scale)
    if name == "chain-product-vs-recursion":
        return suite_chain_vs_recursion(scale)
    if name == "conditional-recursive-vs-bruteforce":
        return suite_conditional(scale)
    if name == "second-order-equivalence":
        return suite_second_order()
    if name == "rac-mi-equivalence":
        return suite_rac_mi()
    if name == "gradient-check":
        return suite_gradient_check()
    raise ValueError(f"unknown suite {name!r}")


def run_all(scale: str = "default") -> list[SuiteResult]:
    return [run_suite(name, scale) for name in SUITE_NAMES]
