"""Command-line surface: vocab building, training, evaluation, prediction,
and self-verification (gradient check, parameter count).

Exit codes: 0 success, 1 usage/config error, 2 data or format error,
3 numeric failure (divergence or gradient-check failure).
"""

import argparse
import io
import json
import logging
import os
import sys

import numpy as np

from . import tensor as T
from .evaluation import evaluate, write_predictions
from .model import (ConfigError, SIRMConfig, init_sirm_params, param_count,
                    sirm_forward, sirm_loss)
from .text import (DataFormatError, Vocabulary, build_vocab, encode_split,
                   load_dataset)
from .training import (CheckpointError, TrainConfig, TrainingError,
                       atomic_write_bytes, load_checkpoint, save_checkpoint,
                       split_dev, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SIRM_FIELDS = {"vocab_size", "d_e", "d_c", "src_windows", "k", "d_ns", "d_np",
               "d_as", "d_ap", "lambda_adv", "m", "n", "mask_aware_pooling"}
TRAIN_FIELDS = {"learning_rate", "batch_size", "max_epochs", "adam_beta1",
                "adam_beta2", "adam_eps", "seed", "early_stop_patience",
                "shuffle", "grad_clip"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"cannot read config {path}: {e}") from e
    unknown = set(cfg) - SIRM_FIELDS - TRAIN_FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _seed_override(seed):
    env = os.environ.get("SIRM_SEED")
    return int(env) if env else seed


def _assemble(args, vocab_size):
    """Merge config-file values with CLI flag overrides."""
    cfg = _load_config_file(getattr(args, "config", None))
    overrides = {
        "lambda_adv": getattr(args, "lambda_adv", None),
        "m": getattr(args, "m", None),
        "n": getattr(args, "n", None),
        "d_e": getattr(args, "d_e", None),
        "d_c": getattr(args, "d_c", None),
        "mask_aware_pooling": getattr(args, "mask_aware", None) or None,
        "learning_rate": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
        "max_epochs": getattr(args, "max_epochs", None),
        "early_stop_patience": getattr(args, "patience", None),
        "seed": getattr(args, "seed", None),
        "grad_clip": getattr(args, "grad_clip", None),
    }
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    cfg["vocab_size"] = vocab_size
    sirm_cfg = SIRMConfig(**{k: v for k, v in cfg.items() if k in SIRM_FIELDS})
    train_cfg = TrainConfig(**{k: v for k, v in cfg.items() if k in TRAIN_FIELDS})
    train_cfg.seed = _seed_override(train_cfg.seed)
    return sirm_cfg, train_cfg


def cmd_build_vocab(args):
    split = load_dataset(args.train, fmt=args.format)
    vocab = build_vocab(split, min_frequency=args.min_freq, max_size=args.max_size)
    if len(vocab) <= 2:
        print("warning: vocabulary holds only the reserved tokens", file=sys.stderr)
    buf = io.StringIO()
    for tok, freq in zip(vocab.id_to_token, vocab.frequencies):
        buf.write(f"{tok}\t{freq}\n")
    atomic_write_bytes(args.out, buf.getvalue().encode("utf-8"))
    from .text import tokenize
    total = known = 0
    for text, _ in split.examples:
        for tok in tokenize(text):
            total += 1
            known += int(tok in vocab.token_to_id)
    coverage = known / total if total else 0.0
    print(f"vocabulary size: {len(vocab)}")
    print(f"token coverage on train: {coverage:.4f}")
    return EXIT_OK


def cmd_train(args):
    vocab = Vocabulary.load(args.vocab)
    sirm_cfg, train_cfg = _assemble(args, len(vocab))
    train_split = load_dataset(args.train, fmt=args.format)
    train_grids = encode_split(train_split, vocab, sirm_cfg.m, sirm_cfg.n)
    if args.dev:
        dev_grids = encode_split(load_dataset(args.dev, fmt=args.format, name="dev"),
                                 vocab, sirm_cfg.m, sirm_cfg.n)
    else:
        train_grids, dev_grids = split_dev(train_grids, seed=train_cfg.seed)
    if sirm_cfg.lambda_adv == 0 and args.model == "sirm":
        logging.getLogger(__name__).info("adversarial branch gradient disabled (lambda 0)")

    os.makedirs(args.out_dir, exist_ok=True)
    history_path = os.path.join(args.out_dir, "history.jsonl")
    params, history = train(train_grids, dev_grids, args.model, sirm_cfg,
                            train_cfg, history_path=history_path)
    ckpt_path = os.path.join(args.out_dir, "best.ckpt")
    save_checkpoint(ckpt_path, args.model, sirm_cfg, params)
    report, _ = evaluate(args.model, params, sirm_cfg, dev_grids)
    atomic_write_bytes(os.path.join(args.out_dir, "dev_metrics.json"),
                       (json.dumps(report, indent=2) + "\n").encode("utf-8"))
    print(f"checkpoint: {ckpt_path}")
    print(f"epochs run: {len(history)}")
    print(json.dumps(report))
    return EXIT_OK


def _load_for_inference(args):
    model_kind, config, params = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if len(vocab) != config.vocab_size:
        raise CheckpointError(
            f"vocabulary size {len(vocab)} does not match checkpoint "
            f"config ({config.vocab_size})")
    split = load_dataset(args.data, fmt=args.format, name="eval")
    grids = encode_split(split, vocab, config.m, config.n)
    return model_kind, config, params, grids


def cmd_eval(args):
    model_kind, config, params, grids = _load_for_inference(args)
    report, _ = evaluate(model_kind, params, config, grids, threshold=args.threshold)
    print(json.dumps(report))
    return EXIT_OK


def cmd_predict(args):
    model_kind, config, params, grids = _load_for_inference(args)
    _, rows = evaluate(model_kind, params, config, grids, threshold=args.threshold)
    buf = io.StringIO()
    for idx, prob, pred, gold in rows:
        buf.write(f"{idx}\t{prob:.6f}\t{pred}\t{gold}\n")
    atomic_write_bytes(args.out, buf.getvalue().encode("utf-8"))
    print(f"wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def toy_grad_check_config(vocab_size=12):
    return SIRMConfig(vocab_size=vocab_size, d_e=4, d_c=4, src_windows=(1, 2),
                      k=1, d_ns=4, d_np=4, d_as=4, d_ap=4, m=2, n=3)


def run_grad_check(config=None, seed=7, tolerance=1e-4):
    """Finite-difference the full model loss against every parameter tensor.

    Runs with the gradient-reversal node bypassed: reversal makes analytic
    gradients upstream of the skim features differ from the loss derivative
    on purpose, so its backward rule is verified separately and exactly.
    Returns (max error, {name: error}); 64-bit throughout.
    """
    from .text import ParagraphGrid

    config = config or toy_grad_check_config()
    rng = np.random.default_rng(seed)
    params = init_sirm_params(config, seed=seed, dtype=np.float64)
    ids = rng.integers(2, config.vocab_size, size=(config.m, config.n))
    grid = ParagraphGrid(ids, np.ones_like(ids, bool),
                         np.ones(config.m, bool), label=1)

    errors = {}
    for name, t in params.named_tensors():
        def f(_t, _grid=grid):
            for tensor in params.tensors():
                tensor.zero_grad()
            trace = sirm_forward(_grid, params, config, reverse_gradients=False)
            return sirm_loss(trace, _grid.label)

        errors[name] = T.finite_diff_check(f, t, eps=1e-5)
    return max(errors.values()), errors


def cmd_grad_check(args):
    if args.config:
        cfg_dict = _load_config_file(args.config)
        cfg_dict.setdefault("vocab_size", 12)
        config = SIRMConfig(**{k: v for k, v in cfg_dict.items() if k in SIRM_FIELDS})
    else:
        config = toy_grad_check_config()
    max_err, errors = run_grad_check(config)
    print(f"max relative gradient error: {max_err:.3e}")
    failing = sorted(n for n, e in errors.items() if e >= 1e-4)
    if failing:
        for name in failing:
            print(f"FAIL {name}: {errors[name]:.3e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_param_count(args):
    if args.config:
        cfg_dict = _load_config_file(args.config)
        cfg_dict.setdefault("vocab_size", 30000)
        config = SIRMConfig(**{k: v for k, v in cfg_dict.items() if k in SIRM_FIELDS})
    else:
        config = SIRMConfig(vocab_size=30000)
    params = init_sirm_params(config, seed=0)
    without = param_count(params, include_embeddings=False)
    with_emb = param_count(params, include_embeddings=True)
    print(f"parameters (excluding embeddings): {without}")
    print(f"parameters (including embeddings): {with_emb}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="sirm", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_format(p):
        p.add_argument("--format", choices=["jsonl", "tsv"], default="jsonl",
                       help="dataset file format (default jsonl)")

    p = sub.add_parser("build-vocab", help="build a vocabulary from training data")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("--max-size", type=int, default=30000)
    add_format(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model (defaults: d_c 16, windows 1-4, "
                       "k 1, widths 64, lambda 1e-6, lr 1e-3, batch 64)")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", help="dev file; default is a seeded 10%% train split")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", choices=["sirm", "nbow"], default="sirm")
    p.add_argument("--config", help="flat JSON config; flags override file values")
    p.add_argument("--lambda", dest="lambda_adv", type=float,
                   help="adversarial scale factor (default 1e-6)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--batch-size", type=int, help="batch size (default 64)")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int, help="early-stop patience in epochs")
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int, help="sentences per paragraph grid")
    p.add_argument("--n", type=int, help="tokens per sentence")
    p.add_argument("--d-e", dest="d_e", type=int)
    p.add_argument("--d-c", dest="d_c", type=int)
    p.add_argument("--mask-aware", action="store_true",
                   help="divide pooling by valid counts instead of fixed lengths")
    p.add_argument("--grad-clip", type=float, help="global-norm clip (0 disables)")
    add_format(p)
    p.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("predict", cmd_predict)):
        p = sub.add_parser(name, help=f"{name} a checkpoint on a dataset")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--threshold", type=float, default=0.5)
        add_format(p)
        if name == "predict":
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("grad-check", help="finite-difference the full model at 64-bit")
    p.add_argument("--config", help="JSON architecture config; default is a toy config")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("param-count", help="count trainable parameters")
    p.add_argument("--config")
    p.set_defaults(func=cmd_param_count)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("SIRM_LOG", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_OK
    except (ConfigError, ValueError) as e:
        if isinstance(e, (DataFormatError, CheckpointError)):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
