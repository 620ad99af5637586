"""Command-line entry point.

Three subcommands: imao trains the supervised phase, maao the preference
phase, verify runs the masking check on a dataset batch and reports.
Exit codes follow the dataset producer's convention: 2 for configuration
problems, 3 for data contract violations, 1 for a failing verify report.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import (
    PHASE_IMAO,
    PHASE_MAAO,
    TrainConfig,
    Z0_SHIFTED_PAIRS,
    Z0_SUPPLIED,
)
from .data import collate_sft, load_sft_dataset
from .errors import ConfigError, DataError, TrainerError
from .model import build_model, preset
from .train import train_imao, train_maao
from .verify import verify_mask_gradients

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _add_common(p: argparse.ArgumentParser, phase: str) -> None:
    defaults = TrainConfig(phase)
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--out", required=True, help="checkpoint and metrics directory")
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--warmup-ratio", type=float, default=defaults.warmup_ratio)
    p.add_argument("--preset", default="tiny", help="model size preset")
    p.add_argument("--seed", type=int, default=0)


def _config_from(args: argparse.Namespace, phase: str) -> TrainConfig:
    return TrainConfig(
        phase=phase,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        warmup_ratio=args.warmup_ratio,
        model_preset=args.preset,
        seed=args.seed,
        beta=getattr(args, "beta", 0.1),
        z0_mode=getattr(args, "z0_mode", Z0_SUPPLIED),
        z0=getattr(args, "z0", 0.0),
        allow_single_label=getattr(args, "allow_single_label", False),
    )


def cmd_imao(args: argparse.Namespace) -> int:
    result = train_imao(args.data, _config_from(args, PHASE_IMAO), args.out)
    print(
        json.dumps(
            {
                "phase": PHASE_IMAO,
                "initial_loss": result.initial_loss,
                "final_loss": result.final_loss,
                "n_records": result.n_records,
                "n_steps": result.n_steps,
                "checkpoint": str(result.checkpoint_path),
                "metrics": str(result.metrics_path),
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_maao(args: argparse.Namespace) -> int:
    result = train_maao(
        args.data, _config_from(args, PHASE_MAAO), args.out, reference_checkpoint=args.reference
    )
    print(
        json.dumps(
            {
                "phase": PHASE_MAAO,
                "n_records": result.n_records,
                "n_steps": result.n_steps,
                "lambda_pos": result.lambda_pos,
                "lambda_neg": result.lambda_neg,
                "mean_logratio_desirable": result.mean_logratio_desirable,
                "mean_logratio_undesirable": result.mean_logratio_undesirable,
                "logratio_gap": result.logratio_gap,
                "checkpoint": str(result.checkpoint_path),
                "metrics": str(result.metrics_path),
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    model_config = preset(args.preset)
    examples = load_sft_dataset(args.data, model_config.max_seq_len)
    batch = collate_sft(examples[: args.batch_size])
    model = build_model(model_config, args.seed)
    report = verify_mask_gradients(model, batch, seed=args.seed)
    print(json.dumps(report.to_json_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mechact-train",
        description="Desk-scale training over forged dialogue datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("imao", help="supervised phase with per-message loss masking")
    _add_common(p, PHASE_IMAO)
    p.set_defaults(func=cmd_imao)

    p = sub.add_parser("maao", help="preference phase against a frozen reference")
    _add_common(p, PHASE_MAAO)
    p.add_argument("--reference", help="checkpoint to start from and compare against")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument(
        "--z0-mode", choices=[Z0_SUPPLIED, Z0_SHIFTED_PAIRS], default=Z0_SUPPLIED
    )
    p.add_argument("--z0", type=float, default=0.0)
    p.add_argument(
        "--allow-single-label",
        action="store_true",
        help="train even when only one label is present",
    )
    p.set_defaults(func=cmd_maao)

    p = sub.add_parser("verify", help="masking contract check on one batch")
    p.add_argument("--data", required=True, help="supervised dataset JSONL")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--preset", default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(json.dumps({"error": "data-format", "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA
    except TrainerError as exc:
        print(json.dumps({"error": "error", "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
