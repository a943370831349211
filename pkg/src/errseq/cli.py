"""Command-line interface.

Subcommands: synth (generate a synthetic corpus), validate (check a
corpus on disk), run (one configuration), grid (sweep configurations),
report (re-render report files from a previous run's folds.jsonl).

Exit codes: 0 success, 1 validation errors (bad corpus, bad config),
2 runtime errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import CorpusError, load_corpus, save_corpus
from .harness import (
    HarnessError,
    emit_report,
    expand_grid,
    report_from_folds,
    run_grid,
)
from .synth import SynthConfig, generate_corpus


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        participants=args.participants,
        seed=args.seed,
        profile=args.profile,
        drift=args.drift,
        noise_sd=args.noise,
    )
    corpus = generate_corpus(cfg)
    manifest = save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.sessions)} participants to {manifest}")
    return 0


def _cmd_validate(args) -> int:
    try:
        corpus = load_corpus(args.corpus)
    except CorpusError as e:
        print(f"corpus invalid: {e}", file=sys.stderr)
        return 1
    frames = sum(s.num_frames for s in corpus.sessions)
    modalities = sorted({m for s in corpus.sessions for m in s.features})
    print(
        f"corpus ok: {len(corpus.sessions)} participants, {frames} frames, "
        f"modalities {'+'.join(modalities)}"
    )
    return 0


def _load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        spec = json.load(f)
    if not isinstance(spec, dict):
        raise ValueError("config file must hold a JSON object")
    return spec


def _progress(result, agg) -> None:
    cfg = result.config
    mean, sd = agg["accuracy"]
    note = f", {len(result.skipped)} skipped" if result.skipped else ""
    print(
        f"{result.config_id} {cfg.scheme}/{cfg.cell}/{cfg.fusion}/"
        f"{cfg.representation}/{'+'.join(cfg.modalities)} "
        f"accuracy {mean:.3f} ± {sd:.3f} ({len(result.folds)} folds{note})",
        flush=True,
    )


def _run_configs(args, configs) -> int:
    corpus = load_corpus(args.corpus)
    report = run_grid(corpus, configs, args.out, progress=_progress)
    csv_path = emit_report(report, "csv", Path(args.out) / "report.csv")
    md_path = emit_report(report, "markdown", Path(args.out) / "report.md")
    print(f"wrote {csv_path} and {md_path}")
    return 0


def _cmd_run(args) -> int:
    configs = expand_grid(_load_config_file(args.config))
    if len(configs) != 1:
        raise ValueError(
            f"config expands to {len(configs)} combinations; use the grid command"
        )
    return _run_configs(args, configs)


def _cmd_grid(args) -> int:
    configs = expand_grid(_load_config_file(args.config))
    return _run_configs(args, configs)


def _cmd_report(args) -> int:
    report = report_from_folds(args.in_dir)
    suffix = "csv" if args.format == "csv" else "md"
    path = emit_report(report, args.format, Path(args.in_dir) / f"report.{suffix}")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="errseq",
        description="Successive robot-error detection experiments on multimodal reactions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--participants", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--profile", choices=("separable", "null"), default="separable")
    p.add_argument("--drift", type=float, default=1.0,
                   help="per-stage mean shift magnitude (separable profile)")
    p.add_argument("--noise", type=float, default=1.0, help="noise standard deviation")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", help="validate a corpus directory")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="run one configuration over all participants")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("grid", help="run a configuration sweep")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True, help="JSON config file, arrays sweep keys")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("report", help="re-render reports from folds.jsonl")
    p.add_argument("--in", dest="in_dir", required=True, help="run output directory")
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (HarnessError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
