"""Command-line entry point for the benchmarking toolkit."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .campaign import capture_idle_baseline, run_campaign
from .config import ExperimentConfig, load_config
from .errors import BenchError
from .records import load_records
from .report import analyze, emit, siti_summary, write_siti_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codecbench",
        description="Measure encode/decode energy of video codecs and "
        "compare rate-quality-energy tradeoffs.",
    )
    parser.add_argument("--config", "-c", required=True, help="experiment TOML file")
    parser.add_argument("--workdir", help="override the configured work directory")
    parser.add_argument("--resume", action="store_true", help="skip already-recorded cells")
    parser.add_argument(
        "--force-merge", action="store_true",
        help="analyze records from different host fingerprints together",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_idle = sub.add_parser("measure-idle", help="capture the idle power baseline")
    p_idle.add_argument("--duration", type=float, default=None, help="observation window in seconds")

    sub.add_parser("campaign", help="run the full measurement campaign")

    p_analyze = sub.add_parser("analyze", help="compute metrics from records")
    p_analyze.add_argument("--out", default=None, help="output directory (default: workdir/report)")

    p_report = sub.add_parser("report", help="analyze and emit CSV + plot data")
    p_report.add_argument("--out", default=None, help="output directory (default: workdir/report)")

    p_siti = sub.add_parser("siti", help="SI/TI descriptors of the configured sequences")
    p_siti.add_argument("--out", default=None, help="output CSV (default: workdir/siti.csv)")

    sub.add_parser("validate-config", help="parse and validate the experiment file")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.workdir:
        config = dataclasses.replace(config, workdir=Path(args.workdir).resolve())
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
        if args.command == "validate-config":
            print(f"ok: {len(config.codecs)} codecs, {len(config.sequences)} sequences")
            return 0

        if args.command == "measure-idle":
            baseline = capture_idle_baseline(config, args.duration)
            print(
                f"idle baseline: {baseline.mean_w:.3f} W "
                f"(std {baseline.std_w:.3f} W over {baseline.duration_s:.1f} s)"
            )
            return 0

        if args.command == "campaign":
            records = run_campaign(config, resume=args.resume)
            failed = sum(1 for r in records if r.status != "ok")
            print(f"campaign complete: {len(records)} records, {failed} failed")
            return 0

        if args.command in ("analyze", "report"):
            records = load_records(config.workdir)
            report = analyze(records, config, force_merge=args.force_merge)
            out_dir = Path(args.out) if args.out else config.workdir / "report"
            formats = {"json"} if args.command == "analyze" else {"csv", "json", "plotdata"}
            written = emit(report, out_dir, formats)
            for path in written:
                print(path)
            return 0

        if args.command == "siti":
            rows = siti_summary(config)
            out = Path(args.out) if args.out else config.workdir / "siti.csv"
            out.parent.mkdir(parents=True, exist_ok=True)
            write_siti_csv(rows, out)
            print(out)
            return 0

        raise AssertionError(f"unhandled command {args.command}")
    except BenchError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "errors"):
            payload["detail"] = exc.errors
        print(json.dumps(payload), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
