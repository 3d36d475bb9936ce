"""Command line entry point: ``barnsim generate|run|score|replay``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .harness import PROFILES, SuiteConfig, generate_suite, record_from_trace, replay_trace, run_suite
from .scoring import aggregate, records_from_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REPLAY_MISMATCH = 3


def _add_common(p: argparse.ArgumentParser, suite: bool = True) -> None:
    p.add_argument("--config", type=Path, help="key=value config file; flags override its values")
    p.add_argument("--out", type=Path, help="output directory")
    if suite:
        p.add_argument("--seed", type=int, help="seed_base for environment generation")
        p.add_argument("--envs", type=int, help="number of environments")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="barnsim", description="Seeded BARN-style navigation benchmark.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="write the suite's maps and metadata only")
    _add_common(g)

    r = sub.add_parser("run", help="run a full suite and write results.csv / summary.json")
    _add_common(r)
    r.add_argument("--trials", type=int, help="trials per environment")
    r.add_argument("--profile", choices=PROFILES, help="navigation stack")
    r.add_argument("--workers", type=int, help="worker processes")
    r.add_argument("--emit-traces", action="store_true", default=None, help="write one trace file per trial")

    s = sub.add_parser("score", help="recompute scores from results.csv files or trace files")
    _add_common(s, suite=False)
    s.add_argument("inputs", nargs="+", type=Path, help="results.csv, *.trace, or directories of traces")

    p = sub.add_parser("replay", help="re-execute one trace and compare it with the file")
    _add_common(p, suite=False)
    p.add_argument("trace", type=Path)
    return ap


def load_config(args: argparse.Namespace) -> SuiteConfig:
    cfg = SuiteConfig.load(args.config) if args.config else SuiteConfig()
    overrides = {
        "seed_base": getattr(args, "seed", None),
        "env_count": getattr(args, "envs", None),
        "trials_per_env": getattr(args, "trials", None),
        "profile": getattr(args, "profile", None),
        "workers": getattr(args, "workers", None),
        "emit_traces": getattr(args, "emit_traces", None),
        "out_dir": None if args.out is None else str(args.out),
    }
    return dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_generate(cfg: SuiteConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    envs, skipped = generate_suite(cfg)
    for env_id, env in envs.items():
        env.save(out / f"env{env_id:03d}")
    for env_id, why in skipped.items():
        print(f"env {env_id}: skipped ({why})", file=sys.stderr)
    cfg.save(out / "config.txt")
    print(f"wrote {len(envs)} environments to {out}")
    return EXIT_OK


def cmd_run(cfg: SuiteConfig) -> int:
    report = run_suite(cfg)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    cfg.save(Path(cfg.out_dir) / "config.txt")
    sys.stdout.write(report.summary_text())
    return EXIT_OK


def _trace_files(paths: list[Path]) -> tuple[list[Path], list[Path]]:
    csvs, traces = [], []
    for p in paths:
        if p.is_dir():
            traces += sorted(p.rglob("*.trace"))
            csvs += sorted(p.glob("results.csv"))
        elif p.suffix == ".csv":
            csvs.append(p)
        else:
            traces.append(p)
    return csvs, traces


def cmd_score(cfg: SuiteConfig, inputs: list[Path], out: Path | None) -> int:
    csvs, traces = _trace_files(inputs)
    records = []
    for path in csvs:
        records += records_from_csv(path.read_text(encoding="utf-8"), cfg.clip_low, cfg.clip_high)
    for path in traces:
        records.append(record_from_trace(path.read_text(encoding="utf-8").splitlines(), cfg.clip_low, cfg.clip_high))
    if not records:
        raise FileNotFoundError("no results.csv or trace files found in the given inputs")
    report = aggregate(records)
    if out is not None:
        report.write(out)
    sys.stdout.write(report.summary_text())
    return EXIT_OK


def cmd_replay(trace: Path, out: Path | None) -> int:
    res, same = replay_trace(trace)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / trace.name).write_text("\n".join(res.trace) + "\n", encoding="utf-8")
    r = res.record
    print(f"env={r.env_id} seed={r.seed} outcome={r.outcome.value} AT={r.AT:.6f} score={r.score:.6f}")
    print("trace identical" if same else "trace DIFFERS from file")
    return EXIT_OK if same else EXIT_REPLAY_MISMATCH


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.verb == "generate":
            return cmd_generate(cfg)
        if args.verb == "run":
            return cmd_run(cfg)
        if args.verb == "score":
            return cmd_score(cfg, args.inputs, args.out)
        return cmd_replay(args.trace, args.out)
    except (ValueError, KeyError, OSError) as exc:
        print(f"barnsim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
