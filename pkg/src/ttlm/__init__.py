"""Tensor-train recurrent language models, baselines, and their oracles.

The package has two faces:

* a scikit-learn style estimator, :class:`ttlm.TTLanguageModel`, covering the
  fit / predict_proba / score / sample workflow, and
* the underlying engine: strict fp64 tensor primitives (:mod:`ttlm.tensor`),
  tensor-train scoring with brute-force ground truth (:mod:`ttlm.cores`),
  the recurrent cell zoo with hand-derived BPTT (:mod:`ttlm.cells`), full
  models with tied embeddings and bit-exact checkpoints (:mod:`ttlm.model`),
  corpus handling (:mod:`ttlm.data`), and the SGD training loop
  (:mod:`ttlm.trainer`).

The `ttlm` command line exposes train / eval / check / sample.
"""

from .cells import ACTIVATIONS, CellKind, CellParams, CellTag, init_params
from .cores import (
    SequenceEncoding,
    TTCores,
    conditional_bruteforce,
    conditional_recursive,
    core_from_secondorder,
    cores_from_hadamard,
    materialize_coefficients,
    phi_of_sequence,
    score_bruteforce,
    score_recursive,
    tt_element,
)
from .data import (
    Vocabulary,
    batchify,
    bptt_windows,
    build_vocab,
    decode,
    encode,
    zipf_bigram_corpus,
)
from .estimator import TTLanguageModel
from .model import (
    ModelConfig,
    RecurrentLM,
    load_checkpoint,
    sample_sequence,
    save_checkpoint,
)
from .tensor import NumericalDivergenceError, ShapeError
from .trainer import TrainConfig, evaluate_ppl, run_training, train_epoch

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS",
    "CellKind",
    "CellParams",
    "CellTag",
    "ModelConfig",
    "NumericalDivergenceError",
    "RecurrentLM",
    "SequenceEncoding",
    "ShapeError",
    "TTCores",
    "TTLanguageModel",
    "TrainConfig",
    "Vocabulary",
    "batchify",
    "bptt_windows",
    "build_vocab",
    "conditional_bruteforce",
    "conditional_recursive",
    "core_from_secondorder",
    "cores_from_hadamard",
    "decode",
    "encode",
    "evaluate_ppl",
    "init_params",
    "load_checkpoint",
    "materialize_coefficients",
    "phi_of_sequence",
    "run_training",
    "sample_sequence",
    "save_checkpoint",
    "score_bruteforce",
    "score_recursive",
    "train_epoch",
    "tt_element",
    "zipf_bigram_corpus",
    "__version__",
]
