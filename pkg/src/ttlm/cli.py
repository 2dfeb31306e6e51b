"""Command-line driver: train, eval, check, sample.

Configuration is line-oriented ``key=value`` text; command-line flags
override file values, and the fully resolved configuration is echoed into
the run directory so any run can be reproduced from its own artifacts.
Exit codes are stable for scripting: 0 success, 2 usage/config errors,
3 runtime or numerical errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .cells import ACTIVATIONS, CellKind, CellTag
from .checks import run_all
from .data import Vocabulary, build_vocab, encode
from .model import (
    CheckpointError,
    ModelConfig,
    RecurrentLM,
    load_checkpoint,
    sample_sequence,
)
from .tensor import NumericalDivergenceError
from .trainer import STATE_POLICIES, TrainConfig, evaluate_ppl, run_training

RUN_DIR_ENV = "TTLM_RUN_DIR"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    """A configuration value is missing, unknown, or malformed."""


# Every train-config key with its type and hard default. "optional" types
# accept the literal value "none".
_INT = ("int", None)
_TRAIN_KEYS: dict[str, tuple[str, object]] = {
    "kind": ("str", "ttlm-tiny"),
    "rank": ("int", 8),
    "embed_size": ("optint", None),
    "activation": ("optstr", None),
    "tie_weights": ("bool", True),
    "zero_init_hidden": ("bool", False),
    "max_vocab": ("optint", None),
    "min_count": ("int", 1),
    "epochs": ("int", 50),
    "lr": ("float", 1.0),
    "anneal_factor": ("float", 0.25),
    "clip_norm": ("float", 0.25),
    "batch_size": ("int", 20),
    "bptt_len": ("int", 35),
    "seed": ("int", 0),
    "eval_interval": ("int", 1),
    "state_policy": ("str", "restart"),
    "corpus": ("optstr", None),
    "vocab": ("optstr", None),
    "run_dir": ("optstr", None),
}


def _parse_value(key: str, raw: str):
    kind, _ = _TRAIN_KEYS[key]
    raw = raw.strip()
    if kind.startswith("opt") and raw.lower() in ("none", ""):
        return None
    try:
        if kind in ("int", "optint"):
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def read_config_file(path) -> dict:
    """Parse a key=value config file; '#' starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def resolve_train_config(args) -> dict:
    """Merge flag > config file > environment (run dir only) > defaults."""
    resolved = {key: default for key, (_, default) in _TRAIN_KEYS.items()}
    if args.config is not None:
        resolved.update(read_config_file(args.config))
    for key in _TRAIN_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    if resolved["run_dir"] is None:
        resolved["run_dir"] = os.environ.get(RUN_DIR_ENV, "ttlm-run")
    if resolved["corpus"] is None:
        raise ConfigError("a corpus directory is required (--corpus or corpus= in the config)")
    if resolved["kind"] not in [t.value for t in CellTag]:
        raise ConfigError(f"unknown model kind {resolved['kind']!r}")
    if resolved["activation"] is not None and resolved["activation"] not in ACTIVATIONS:
        raise ConfigError(f"activation must be one of {ACTIVATIONS}")
    if resolved["state_policy"] not in STATE_POLICIES:
        raise ConfigError(f"state_policy must be one of {STATE_POLICIES}")
    return resolved


def write_resolved_config(resolved: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            value = resolved[key]
            fh.write(f"{key}={'none' if value is None else value}\n")


def find_split_file(corpus_dir: Path, split: str) -> Path:
    """Locate a split file under PTB/WikiText-style naming conventions."""
    candidates = [
        corpus_dir / f"{split}.txt",
        corpus_dir / f"ptb.{split}.txt",
        corpus_dir / f"wiki.{split}.tokens",
    ]
    for cand in candidates:
        if cand.is_file():
            return cand
    matches = sorted(corpus_dir.glob(f"*{split}*"))
    matches = [m for m in matches if m.is_file()]
    if len(matches) == 1:
        return matches[0]
    raise ConfigError(f"cannot locate a unique '{split}' split in {corpus_dir}")


def cmd_train(args) -> int:
    resolved = resolve_train_config(args)
    corpus_dir = Path(resolved["corpus"])
    if not corpus_dir.is_dir():
        raise ConfigError(f"corpus directory {corpus_dir} does not exist")
    texts = {}
    for split in ("train", "valid", "test"):
        try:
            texts[split] = find_split_file(corpus_dir, split).read_text(encoding="utf-8")
        except ConfigError:
            if split == "train":
                raise
    if "valid" not in texts:
        raise ConfigError(f"cannot locate a 'valid' split in {corpus_dir}")

    run_dir = Path(resolved["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    if resolved["vocab"] is not None:
        vocab = Vocabulary.load(resolved["vocab"])
    else:
        vocab = build_vocab(texts["train"], max_size=resolved["max_vocab"],
                            min_count=resolved["min_count"])
    vocab.save(run_dir / "vocab.txt")
    splits = {name: encode(text, vocab) for name, text in texts.items()}

    kind = CellKind.make(resolved["kind"], resolved["activation"])
    model_config = ModelConfig(
        kind=kind, rank_or_hidden=resolved["rank"], vocab_size=len(vocab),
        embed_size=resolved["embed_size"], tie_weights=resolved["tie_weights"],
        zero_init_hidden=resolved["zero_init_hidden"],
    )
    train_config = TrainConfig(
        epochs=resolved["epochs"], lr=resolved["lr"],
        anneal_factor=resolved["anneal_factor"], clip_norm=resolved["clip_norm"],
        batch_size=resolved["batch_size"], bptt_len=resolved["bptt_len"],
        seed=resolved["seed"], eval_interval=resolved["eval_interval"],
        state_policy=resolved["state_policy"],
    )
    model = RecurrentLM(model_config, seed=resolved["seed"])
    print(f"training {kind} | vocab {len(vocab)} | {model.parameter_count()} parameters")
    write_resolved_config(resolved, run_dir / "config.resolved")

    result = run_training(
        model, splits, train_config,
        checkpoint_path=run_dir / "best.ckpt",
        metrics_path=run_dir / "metrics.log",
        verbose=True,
    )
    if result.best_epoch == 0:
        reason = (result.divergence_message if result.diverged
                  else "validation never produced a finite perplexity")
        print(f"error: training diverged or stalled before any checkpoint ({reason})",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"best epoch {result.best_epoch} valid_ppl {result.best_valid_ppl:.1f}")
    if result.test_ppl is not None:
        print(f"test_ppl {result.test_ppl:.1f}")
    print(f"artifacts in {run_dir}")
    if result.diverged:
        print(f"error: training diverged after epoch {result.epochs_run} "
              f"({result.divergence_message}); best checkpoint kept", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _load_model_and_vocab(checkpoint: str, vocab_path: str | None) -> tuple[RecurrentLM, Vocabulary]:
    ckpt = Path(checkpoint)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    vocab_file = Path(vocab_path) if vocab_path else ckpt.parent / "vocab.txt"
    if not vocab_file.is_file():
        raise ConfigError(f"vocabulary file {vocab_file} does not exist")
    model = load_checkpoint(ckpt)
    vocab = Vocabulary.load(vocab_file)
    if len(vocab) != model.config.vocab_size:
        raise CheckpointError(
            f"vocabulary has {len(vocab)} entries but the checkpoint expects "
            f"{model.config.vocab_size}"
        )
    return model, vocab


def cmd_eval(args) -> int:
    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab)
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        raise ConfigError(f"corpus directory {corpus_dir} does not exist")
    text = find_split_file(corpus_dir, args.split).read_text(encoding="utf-8")
    cfg = TrainConfig(batch_size=args.batch_size, bptt_len=args.bptt_len,
                      state_policy=args.state_policy)
    ppl = evaluate_ppl(model, encode(text, vocab), cfg)
    print(f"{ppl:.1f}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_all(scale=args.scale)
    for res in results:
        print(res.format_line())
    failed = [res.name for res in results if not res.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sample(args) -> int:
    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab)
    if args.temperature <= 0:
        raise ConfigError("temperature must be positive")
    prompt_idx = [vocab.to_index(t) for t in args.prompt.split()] if args.prompt else []
    indices = sample_sequence(
        model, args.length, temperature=args.temperature, seed=args.seed,
        prompt=prompt_idx, greedy=args.greedy,
    )
    print(" ".join(vocab.to_token(i) for i in indices))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttlm",
        description="Tensor-train and baseline recurrent word-level language models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model on a corpus directory")
    train.add_argument("--config", help="key=value config file; flags override it")
    train.add_argument("--corpus", help="directory with train/valid[/test] split files")
    train.add_argument("--kind", choices=[t.value for t in CellTag])
    train.add_argument("--rank", type=int, help="bond rank / hidden size")
    train.add_argument("--embed-size", dest="embed_size", type=int)
    train.add_argument("--activation", choices=list(ACTIVATIONS))
    train.add_argument("--tie-weights", dest="tie_weights",
                       action=argparse.BooleanOptionalAction, default=None)
    train.add_argument("--zero-init-hidden", dest="zero_init_hidden",
                       action=argparse.BooleanOptionalAction, default=None)
    train.add_argument("--max-vocab", dest="max_vocab", type=int)
    train.add_argument("--min-count", dest="min_count", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--anneal-factor", dest="anneal_factor", type=float)
    train.add_argument("--clip-norm", dest="clip_norm", type=float)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--bptt-len", dest="bptt_len", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--eval-interval", dest="eval_interval", type=int)
    train.add_argument("--state-policy", dest="state_policy", choices=STATE_POLICIES,
                       help="hidden state per window: restart from the trained "
                            "initial state (default) or carry across windows")
    train.add_argument("--vocab", help="reuse an existing vocabulary file")
    train.add_argument("--run-dir", dest="run_dir",
                       help=f"output directory (default from ${RUN_DIR_ENV} or ./ttlm-run)")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint's perplexity on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--split", choices=("train", "valid", "test"), default="test")
    ev.add_argument("--vocab", help="vocabulary file (default: vocab.txt next to the checkpoint)")
    ev.add_argument("--batch-size", dest="batch_size", type=int, default=20)
    ev.add_argument("--bptt-len", dest="bptt_len", type=int, default=35)
    ev.add_argument("--state-policy", dest="state_policy", choices=STATE_POLICIES,
                    default="restart")
    ev.set_defaults(func=cmd_eval)

    check = sub.add_parser("check", help="run the numerical equivalence suites")
    check.add_argument("--scale", choices=("default", "large"), default="default")
    check.set_defaults(func=cmd_check)

    samp = sub.add_parser("sample", help="sample text from a checkpoint")
    samp.add_argument("--checkpoint", required=True)
    samp.add_argument("--vocab")
    samp.add_argument("--length", type=int, default=50)
    samp.add_argument("--temperature", type=float, default=1.0)
    samp.add_argument("--seed", type=int, default=0)
    samp.add_argument("--greedy", action="store_true",
                      help="argmax decoding (zero-temperature limit)")
    samp.add_argument("--prompt", default="")
    samp.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, NumericalDivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
