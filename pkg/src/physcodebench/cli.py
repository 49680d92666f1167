"""Command-line entry point.

Subcommands: dataset stats/validate, eval run, eval score-only, report,
correlate, kappa and judge. Backend endpoints, the embedder and sandbox
limits come from a YAML config file (--config or the PHYSCODEBENCH_CONFIG
environment variable); credentials are only ever named by environment
variable. Exit status: 0 on success, 1 when --strict and any entry-level
failure occurred, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import benchdata, reporting
from .engineprofiles import EngineProfile, ProfileError, find_profile, load_profile
from .llmgateway import CallLog, backends_from_config
from .mediacheck import MediaTools, extract_frames
from .physcodeeval import (
    HashEmbedder,
    JudgeError,
    Scorer,
    embedder_from_config,
    evaluate,
    judge_vlm,
)
from .sandbox import SandboxPolicy
from .smrf import AgentTeam, ResultsSink, RunConfig, run_benchmark


class CliError(Exception):
    """User-facing command failure (prints the message, exits 1)."""


@dataclass
class HarnessConfig:
    backends: dict
    embedder: object
    sandbox: dict
    media: MediaTools | None = None

    @classmethod
    def from_file(cls, path: str | Path | None) -> HarnessConfig:
        if path is None:
            path = os.environ.get("PHYSCODEBENCH_CONFIG")
        if path is None:
            return cls(backends={}, embedder=HashEmbedder(), sandbox={})
        path = Path(path)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        with path.open("r", encoding="utf-8") as f:
            doc = yaml.safe_load(f) or {}
        backends = backends_from_config(
            doc.get("backends", {}), base_dir=path.parent, call_log=CallLog()
        )
        embedder = embedder_from_config(doc.get("embedding", {"kind": "hash"}))
        media = None
        if "media" in doc:
            media = MediaTools(
                prober=tuple(doc["media"]["prober"]),
                decoder=tuple(doc["media"]["decoder"]),
            )
        return cls(
            backends=backends,
            embedder=embedder,
            sandbox=doc.get("sandbox", {}),
            media=media,
        )

    def agent_team(self) -> AgentTeam:
        generator = self.backends.get("generator")
        if generator is None:
            raise CliError("config must define a 'generator' backend for eval runs")
        return AgentTeam(
            generator=generator,
            corrector=self.backends.get("corrector", generator),
            refiner=self.backends.get("refiner", generator),
        )

    def policy(self, results_dir: Path | None = None,
               timeout: float | None = None) -> SandboxPolicy:
        section = dict(self.sandbox)
        if timeout is not None:
            section["timeout"] = timeout
        workdir_root = section.get("workdir_root")
        if workdir_root is None and results_dir is not None:
            workdir_root = str(results_dir / "workdirs")
        kwargs = {}
        if "timeout" in section:
            kwargs["timeout"] = float(section["timeout"])
        if "max_captured_bytes" in section:
            kwargs["max_captured_bytes"] = int(section["max_captured_bytes"])
        if "env_allowlist" in section:
            kwargs["env_allowlist"] = tuple(section["env_allowlist"])
        if workdir_root is not None:
            kwargs["workdir_root"] = workdir_root
        return SandboxPolicy(**kwargs)


def _load_profile_arg(name_or_path: str) -> EngineProfile:
    try:
        return load_profile(find_profile(name_or_path))
    except ProfileError as exc:
        raise CliError(str(exc)) from exc


def _write_output(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --- subcommand handlers -----------------------------------------------------

def cmd_dataset_stats(args) -> int:
    ds = benchdata.load_dataset(args.path)
    stats = benchdata.dataset_stats(ds)
    if args.format == "json":
        _write_output(json.dumps(stats.to_dict(), indent=2, sort_keys=True), args.output)
    else:
        _write_output(stats.render_table(), args.output)
    return 0


def cmd_dataset_validate(args) -> int:
    ds = benchdata.load_dataset(args.path)
    sys.stdout.write(f"{args.path}: {len(ds)} entries, all invariants hold\n")
    return 0


def cmd_eval_run(args) -> int:
    config = HarnessConfig.from_file(args.config)
    profile = _load_profile_arg(args.profile)
    ds = benchdata.load_dataset(args.dataset)
    results_dir = Path(args.results)
    sink = ResultsSink(results_dir)
    cfg = RunConfig(
        mode=args.mode,
        max_corrections=args.max_corrections,
        passes=args.passes,
        workers=args.workers,
        refine_enabled=not args.no_refine,
    )
    scorer = Scorer(spec=profile.output_spec, embedder=config.embedder, tools=config.media)
    policy = config.policy(results_dir=results_dir, timeout=args.timeout)
    records = run_benchmark(
        ds,
        config.agent_team(),
        profile,
        cfg,
        scorer=scorer,
        policy=policy,
        sink=sink,
        split=args.split or None,
        overwrite=args.overwrite,
    )
    failures = sum(1 for r in records if r.outcome != "scored")
    sys.stdout.write(
        f"ran {len(records)} runs ({failures} not scored) -> {results_dir}\n"
    )
    return 1 if (args.strict and failures) else 0


def _scored_workdir(record) -> str | None:
    passing = [s for s in record.steps if s.execution is not None and s.execution.ok]
    return passing[-1].execution.workdir if passing else None


def cmd_eval_score_only(args) -> int:
    config = HarnessConfig.from_file(args.config)
    profile = _load_profile_arg(args.profile)
    ds = benchdata.load_dataset(args.dataset)
    lookup = {entry.id: entry for entry in ds}
    sink = ResultsSink(args.results)
    rescored = skipped = 0
    for record in sink.load_records():
        entry = lookup.get(record.entry_id)
        workdir = _scored_workdir(record)
        if record.outcome != "scored" or entry is None or workdir is None or not os.path.isdir(workdir):
            skipped += 1
            continue
        passing = [s.execution for s in record.steps if s.execution is not None and s.execution.ok]
        card = evaluate(
            entry, passing[-1], workdir, profile.output_spec, config.embedder,
            tools=config.media,
        )
        updated = record.to_dict()
        updated["scorecard"] = card.to_dict()
        path = sink.run_dir(record.entry_id, record.pass_index) / "record.json"
        path.write_text(json.dumps(updated, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        rescored += 1
    sys.stdout.write(f"re-scored {rescored} runs, skipped {skipped}\n")
    return 0


def cmd_report(args) -> int:
    sink = ResultsSink(args.results)
    records = sink.load_records()
    if not records:
        raise CliError(f"no records under {args.results}")
    entries = benchdata.load_dataset(args.dataset) if args.dataset else None
    report = reporting.aggregate(records, entries)
    _write_output(reporting.render_report(report, args.format), args.output)
    return 0


def _read_ratings(path: str) -> dict:
    ratings = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.reader(f):
            if not row or row[0] in ("entry_id", "id"):
                continue
            ratings[row[0]] = float(row[1])
    if not ratings:
        raise CliError(f"no ratings parsed from {path}")
    return ratings


def cmd_correlate(args) -> int:
    sink = ResultsSink(args.results)
    records = sink.load_records()
    if not records:
        raise CliError(f"no records under {args.results}")
    ratings = _read_ratings(args.ratings)
    xs, ys = [], []
    if args.granularity == "entry":
        report = reporting.aggregate(records)
        for entry_id, card in report.per_entry.items():
            if entry_id in ratings:
                xs.append(card.total)
                ys.append(ratings[entry_id])
    else:
        for record in records:
            if record.entry_id in ratings:
                xs.append(record.scorecard.total)
                ys.append(ratings[record.entry_id])
    try:
        result = reporting.spearman(xs, ys)
    except reporting.ReportingError as exc:
        raise CliError(f"cannot correlate: {exc}") from exc
    sys.stdout.write(f"spearman rho = {result.rho:.4f} (n = {result.n})\n")
    return 0


def cmd_kappa(args) -> int:
    with open(args.votes, newline="", encoding="utf-8") as f:
        table = [[int(cell) for cell in row] for row in csv.reader(f) if row]
    try:
        value = reporting.fleiss_kappa(table)
    except reporting.ReportingError as exc:
        raise CliError(str(exc)) from exc
    sys.stdout.write(f"fleiss kappa = {value:.4f} ({len(table)} items)\n")
    return 0


def cmd_judge(args) -> int:
    config = HarnessConfig.from_file(args.config)
    judge_backend = config.backends.get("judge")
    if judge_backend is None:
        raise CliError("config must define a 'judge' backend")
    profile = _load_profile_arg(args.profile)
    ds = benchdata.load_dataset(args.dataset)
    lookup = {entry.id: entry for entry in ds}
    sink = ResultsSink(args.results)
    judged = skipped = 0
    for record in sink.load_records():
        entry = lookup.get(record.entry_id)
        workdir = _scored_workdir(record)
        if entry is None or workdir is None:
            skipped += 1
            continue
        video = os.path.join(workdir, profile.output_spec.filename)
        if not os.path.isfile(video):
            skipped += 1
            continue
        try:
            frames = extract_frames(video, 10, config.media)
            report = judge_vlm(judge_backend, frames, entry, runs=args.runs)
        except Exception as exc:  # per-run isolation
            sys.stderr.write(f"judge failed for {record.entry_id}/{record.pass_index}: {exc}\n")
            skipped += 1
            continue
        out = sink.run_dir(record.entry_id, record.pass_index) / "judge.json"
        out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        judged += 1
    sys.stdout.write(f"judged {judged} runs, skipped {skipped}\n")
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="physcodebench",
        description="Benchmark harness for physics-simulation code generation.",
    )
    parser.add_argument("--config", help="harness config file (or set PHYSCODEBENCH_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="dataset inspection")
    dataset_sub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_stats = dataset_sub.add_parser("stats", help="distribution statistics")
    p_stats.add_argument("path")
    p_stats.add_argument("--format", choices=("table", "json"), default="table")
    p_stats.add_argument("--output")
    p_stats.set_defaults(handler=cmd_dataset_stats)
    p_validate = dataset_sub.add_parser("validate", help="check every invariant")
    p_validate.add_argument("path")
    p_validate.set_defaults(handler=cmd_dataset_validate)

    p_eval = sub.add_parser("eval", help="run or re-score evaluations")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)
    p_run = eval_sub.add_parser("run", help="orchestrate model runs")
    p_run.add_argument("--dataset", required=True)
    p_run.add_argument("--mode", choices=("smrf", "single_agent", "zero_shot"), default="smrf")
    p_run.add_argument("--profile", default="stub")
    p_run.add_argument("--passes", type=int, default=5)
    p_run.add_argument("--max-corrections", type=int, default=3)
    p_run.add_argument("--workers", type=int, default=4)
    p_run.add_argument("--results", required=True)
    p_run.add_argument("--split", default="test", help="dataset split to run ('' for all)")
    p_run.add_argument("--timeout", type=float, default=None, help="sandbox timeout override")
    p_run.add_argument("--no-refine", action="store_true")
    p_run.add_argument("--overwrite", action="store_true",
                       help="redo runs already present in the results dir")
    p_run.add_argument("--strict", action="store_true",
                       help="exit 1 if any run is not scored")
    p_run.set_defaults(handler=cmd_eval_run)
    p_score = eval_sub.add_parser("score-only", help="re-score archived workdirs")
    p_score.add_argument("--results", required=True)
    p_score.add_argument("--dataset", required=True)
    p_score.add_argument("--profile", default="stub")
    p_score.set_defaults(handler=cmd_eval_score_only)

    p_report = sub.add_parser("report", help="aggregate results into tables")
    p_report.add_argument("--results", required=True)
    p_report.add_argument("--dataset", help="enables difficulty/domain breakdowns")
    p_report.add_argument("--format", choices=("json", "csv", "markdown"), default="markdown")
    p_report.add_argument("--output")
    p_report.set_defaults(handler=cmd_report)

    p_corr = sub.add_parser("correlate", help="rank correlation against human ratings")
    p_corr.add_argument("--results", required=True)
    p_corr.add_argument("--ratings", required=True, help="CSV of entry_id,rating")
    p_corr.add_argument("--granularity", choices=("entry", "record"), default="entry")
    p_corr.set_defaults(handler=cmd_correlate)

    p_kappa = sub.add_parser("kappa", help="Fleiss kappa over a votes matrix CSV")
    p_kappa.add_argument("votes")
    p_kappa.set_defaults(handler=cmd_kappa)

    p_judge = sub.add_parser("judge", help="VLM judging over result videos")
    p_judge.add_argument("--results", required=True)
    p_judge.add_argument("--dataset", required=True)
    p_judge.add_argument("--profile", default="stub")
    p_judge.add_argument("--runs", type=int, default=3)
    p_judge.set_defaults(handler=cmd_judge)

    return parser


def dispatch(argv) -> int:
    """Parse argv and run the selected subcommand (0/1/2 exit status)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except (CliError, benchdata.DatasetError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
