"""Command-line surface for the full pipeline.

Subcommands: explore, build-datasets, eval, analyze, loss, memory-build.
Exit codes: 0 success, 2 usage/config, 3 data format, 4 infrastructure.
Failures print one machine-readable JSON object to stderr. All relative
paths resolve against --workdir.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfg
from .environment import build_memory
from .errors import (
    ConfigError,
    DataFormatError,
    GatewayError,
    InfraError,
    MechactError,
    ParseError,
    ValidationError,
)
from .evaluation import (
    MODE_MAJORITY,
    evaluate,
    evaluate_suite,
    specificity_report,
    write_summary_csv,
)
from .explorer import ExplorationRun, explore_all
from .forge import apply_imao_cap, emit_imao, emit_maao, partition, write_records_jsonl
from .model import (
    RewardMatrix,
    load_tasks,
    read_trajectories,
)
from .objectives import (
    KtoConfig,
    ScoredTrajectory,
    Z0_BATCH_ESTIMATE,
    Z0_SUPPLIED,
    kto_loss,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFRA = 4
EXIT_INTERRUPT = 130


def _emit(obj: dict, out: str | None, workdir: Path) -> None:
    text = json.dumps(obj, ensure_ascii=False, indent=2)
    if out:
        path = _resolve(workdir, out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _resolve(workdir: Path, path: str | Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else workdir / p


def _load_scored(path: Path) -> list[ScoredTrajectory]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    ScoredTrajectory(
                        logp_policy=float(obj["logp_policy"]),
                        logp_ref=float(obj["logp_ref"]),
                        label=obj["label"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path} line {n}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# Subcommands


def cmd_explore(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    config = cfg.load_config(_resolve(workdir, args.config))
    tasks = load_tasks(_resolve(workdir, args.tasks))
    backend = cfg.build_backend(config["backend"]["policy"], workdir)
    run = ExplorationRun(
        tasks=tasks,
        mechanisms=cfg.mechanisms_from(config),
        demos=cfg.build_demos(config, workdir),
        backend=backend,
        environment=cfg.build_environment(config, workdir),
        out_dir=_resolve(workdir, args.out),
        turn_budget=cfg.turn_budget_from(config),
        concurrency=args.concurrency or cfg.concurrency_from(config),
        params=cfg.build_sampling(config.get("sampling")),
        infra_failure_threshold=cfg.infra_threshold_from(config),
        resume=args.resume,
    )
    result = explore_all(run)
    _emit(result.report, args.report_out, workdir)
    return EXIT_OK


def cmd_build_datasets(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    matrix = RewardMatrix.load(_resolve(workdir, args.rewards))
    trajectories = list(read_trajectories(_resolve(workdir, args.traj)))
    part = partition(matrix, include_all_fail=args.include_all_fail)
    part = apply_imao_cap(part, args.imao_cap, args.seed)
    imao_records, _ = emit_imao(part, trajectories)
    maao_records, _, counts = emit_maao(part, trajectories)
    counts["n_imao_records"] = len(imao_records)
    out_dir = _resolve(workdir, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records_jsonl(out_dir / "imao.jsonl", imao_records)
    write_records_jsonl(out_dir / "maao.jsonl", maao_records)
    (out_dir / "counts.json").write_text(
        json.dumps(counts, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps(counts, ensure_ascii=False, indent=2))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    config = cfg.load_config(_resolve(workdir, args.config))
    tasks = load_tasks(_resolve(workdir, args.tasks))
    environment = cfg.build_environment(config, workdir)
    backend = cfg.build_backend(config["backend"]["policy"], workdir)
    demos = cfg.build_demos(config, workdir)
    params = cfg.build_sampling(config.get("sampling"))
    turn_budget = cfg.turn_budget_from(config)
    if args.mode == "suite":
        reports = evaluate_suite(
            tasks, backend, environment, demos, params=params, turn_budget=turn_budget
        )
        if args.csv:
            write_summary_csv(_resolve(workdir, args.csv), reports)
        _emit(
            {mode: report.to_json_dict() for mode, report in reports.items()},
            args.out,
            workdir,
        )
        return EXIT_OK
    if args.csv:
        raise ConfigError("csv output needs --mode suite")
    stored = None
    if args.stored:
        if args.mode != MODE_MAJORITY:
            raise ConfigError("--stored only applies to majority mode")
        stored = read_trajectories(_resolve(workdir, args.stored))
    report = evaluate(
        tasks,
        args.mode,
        backend,
        environment,
        demos,
        params=params,
        turn_budget=turn_budget,
        base_seed=args.seed if args.seed is not None else config.get("seed", 0),
        stored_trajectories=stored,
    )
    _emit(report.to_json_dict(), args.out, workdir)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    matrix = RewardMatrix.load(_resolve(workdir, args.rewards))
    report = specificity_report(matrix)
    _emit(report.to_json_dict(), args.out, workdir)
    return EXIT_OK


def cmd_loss(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    batch = _load_scored(_resolve(workdir, args.records))
    mismatched = None
    if args.mismatched:
        mismatched = _load_scored(_resolve(workdir, args.mismatched))
        z0_mode, z0 = Z0_BATCH_ESTIMATE, 0.0
    else:
        z0_mode, z0 = Z0_SUPPLIED, args.z0
    config = KtoConfig(
        beta=args.beta,
        lambda_pos=args.lambda_pos,
        lambda_neg=args.lambda_neg,
        z0_mode=z0_mode,
        z0=z0,
    )
    result = kto_loss(batch, config, mismatched=mismatched)
    _emit(result.to_json_dict(), args.out, workdir)
    return EXIT_OK


def cmd_memory_build(args: argparse.Namespace) -> int:
    workdir = Path(args.workdir)
    failed = [t for t in read_trajectories(_resolve(workdir, args.traj)) if t.reward == 0]
    embedder = cfg.build_embedder({"kind": "deterministic", "dim": args.dim})
    store = build_memory(failed, embedder)
    out = _resolve(workdir, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save(out)
    print(
        json.dumps(
            {"n_entries": len(store.entries), "embedder": store.embedder_id, "path": str(out)},
            ensure_ascii=False,
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mechact",
        description="Agent-mechanism exploration, dataset forging, and evaluation.",
    )
    parser.add_argument(
        "--workdir", default=".", help="base directory for relative paths (default: .)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="run per-mechanism episodes over a task file")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--tasks", required=True, help="tasks JSONL")
    p.add_argument("--out", default="run", help="output directory (default: run)")
    p.add_argument("--resume", action="store_true", help="continue from the journal checkpoint")
    p.add_argument("--concurrency", type=int, default=None, help="override config concurrency")
    p.add_argument("--report-out", default=None, help="write the run report here instead of stdout")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("build-datasets", help="partition rewards and emit fine-tuning datasets")
    p.add_argument("--traj", required=True, help="trajectories JSONL from explore")
    p.add_argument("--rewards", required=True, help="reward matrix JSON from explore")
    p.add_argument("--out", default="datasets", help="output directory (default: datasets)")
    p.add_argument("--imao-cap", type=int, default=None, help="max positives per mechanism")
    p.add_argument("--seed", type=int, default=0, help="cap sampling seed (default: 0)")
    p.add_argument(
        "--include-all-fail",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="keep tasks no mechanism solved as negatives (default: on)",
    )
    p.set_defaults(func=cmd_build_datasets)

    p = sub.add_parser("eval", help="evaluate an agent over a task file")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--tasks", required=True, help="tasks JSONL")
    p.add_argument(
        "--mode",
        required=True,
        help="single:<mechanism> | zero_shot | majority | self_adapt_consistency:<k> | suite",
    )
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.add_argument("--csv", default=None, help="summary CSV (suite mode only)")
    p.add_argument("--stored", default=None, help="vote over stored trajectories (majority mode)")
    p.add_argument("--seed", type=int, default=None, help="consistency sampling base seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="mechanism-specificity report from a reward matrix")
    p.add_argument("--rewards", required=True, help="reward matrix JSON")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("loss", help="preference loss over scored dialogues")
    p.add_argument("--records", required=True, help="JSONL of {logp_policy, logp_ref, label}")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--lambda-pos", type=float, default=1.0)
    p.add_argument("--lambda-neg", type=float, default=1.0)
    p.add_argument("--z0", type=float, default=0.0, help="supplied reference point (default: 0)")
    p.add_argument(
        "--mismatched",
        default=None,
        help="JSONL of mismatched-pair scores; switches to batch z0 estimation",
    )
    p.add_argument("--out", default=None, help="write the result here instead of stdout")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("memory-build", help="build the episodic memory store from failures")
    p.add_argument("--traj", required=True, help="trajectories JSONL")
    p.add_argument("--out", required=True, help="memory store output path")
    p.add_argument("--dim", type=int, default=256, help="embedding dimension (default: 256)")
    p.set_defaults(func=cmd_memory_build)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (DataFormatError, ParseError, ValidationError) as exc:
        return _fail(EXIT_DATA, "data-format", exc)
    except (GatewayError, InfraError) as exc:
        return _fail(EXIT_INFRA, "infra", exc)
    except MechactError as exc:
        return _fail(EXIT_DATA, "error", exc)
    except KeyboardInterrupt:
        return _fail(EXIT_INTERRUPT, "interrupted", "checkpoint flushed, exiting")


def _fail(code: int, kind: str, exc: object) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}, ensure_ascii=False), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
