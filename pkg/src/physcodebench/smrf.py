"""Orchestration: the generate / correct / refine loop and batch runs.

One run drives a single benchmark entry through up to three stages:
generation, a bounded correction loop (budget counts total corrector calls),
and one refinement pass whose output is reverted if it breaks execution.
Zero-shot mode is the same machine with the correction budget at zero and
refinement off; the single-agent baseline plays every role with one backend
and skips refinement. Backend/transport failures are reported as their own
outcome so infrastructure flakiness never masquerades as model failure.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .benchdata import Dataset, filter_entries
from .llmgateway import ChatMessage, ChatRequest, GatewayError, complete
from .mediacheck import MediaTools
from .physcodeeval import HashEmbedder, ScoreCard, Scorer
from .promptkit import (
    DocCorpus,
    PromptError,
    PromptText,
    extract_code,
    load_doc_corpus,
    pack_context,
    render_correction_prompt,
    render_generation_prompt,
    render_refinement_prompt,
)
from .sandbox import ExecutionReport, SandboxPolicy, execute, load_pattern_table
from .llmgateway import digest_text

MODES = ("smrf", "single_agent", "zero_shot")
OUTCOMES = ("scored", "framework_failure", "transport_failure")


class OrchestrationError(Exception):
    """Raised for configuration mistakes, not for model or script failures."""


@dataclass(frozen=True)
class RunConfig:
    mode: str = "smrf"
    max_corrections: int = 3
    passes: int = 5
    temperature: float = 0.1
    max_tokens: int = 4096
    context_budget: int = 24_000
    refine_enabled: bool = True
    workers: int = 4

    def __post_init__(self):
        if self.mode not in MODES:
            raise OrchestrationError(f"unknown mode {self.mode!r}")
        if self.max_corrections < 0:
            raise OrchestrationError("max_corrections must be >= 0")
        if self.passes < 1:
            raise OrchestrationError("passes must be >= 1")

    def effective(self) -> RunConfig:
        """Zero-shot is the same machine with corrections and refinement off."""
        if self.mode == "zero_shot":
            return RunConfig(
                mode="zero_shot",
                max_corrections=0,
                passes=self.passes,
                temperature=self.temperature,
                max_tokens=self.max_tokens,
                context_budget=self.context_budget,
                refine_enabled=False,
                workers=self.workers,
            )
        return self


@dataclass(frozen=True)
class Step:
    role: str  # generator | corrector | refiner
    prompt_digest: str
    reply_digest: str
    execution: ExecutionReport | None = None

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "prompt_digest": self.prompt_digest,
            "reply_digest": self.reply_digest,
            "execution": self.execution.to_dict() if self.execution else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Step:
        execution = ExecutionReport.from_dict(data["execution"]) if data.get("execution") else None
        return cls(
            role=data["role"],
            prompt_digest=data["prompt_digest"],
            reply_digest=data["reply_digest"],
            execution=execution,
        )


@dataclass(frozen=True)
class RunRecord:
    entry_id: str
    mode: str
    pass_index: int
    steps: tuple[Step, ...]
    final_code: str | None
    outcome: str
    scorecard: ScoreCard
    wall_time: float

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise OrchestrationError(f"unknown outcome {self.outcome!r}")
        if self.outcome != "scored" and self.scorecard.total != 0.0:
            raise OrchestrationError(f"{self.outcome} runs must carry a zero scorecard")

    def corrector_steps(self) -> int:
        return sum(1 for s in self.steps if s.role == "corrector")

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "mode": self.mode,
            "pass_index": self.pass_index,
            "steps": [s.to_dict() for s in self.steps],
            "final_code": self.final_code,
            "outcome": self.outcome,
            "scorecard": self.scorecard.to_dict(),
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunRecord:
        return cls(
            entry_id=data["entry_id"],
            mode=data["mode"],
            pass_index=data["pass_index"],
            steps=tuple(Step.from_dict(s) for s in data["steps"]),
            final_code=data.get("final_code"),
            outcome=data["outcome"],
            scorecard=ScoreCard.from_dict(data["scorecard"]),
            wall_time=data["wall_time"],
        )


@dataclass(frozen=True)
class AgentTeam:
    generator: object
    corrector: object
    refiner: object

    @classmethod
    def single(cls, backend) -> AgentTeam:
        return cls(generator=backend, corrector=backend, refiner=backend)


class ResultsSink:
    """Persists one directory per (entry, pass): the record as JSON plus the
    raw prompts and replies as numbered text files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def run_dir(self, entry_id: str, pass_index: int) -> Path:
        return self.root / entry_id / str(pass_index)

    def exists(self, entry_id: str, pass_index: int) -> bool:
        return (self.run_dir(entry_id, pass_index) / "record.json").is_file()

    def write_run(self, record: RunRecord, transcripts: list[tuple[str, str, str]]) -> None:
        run_dir = self.run_dir(record.entry_id, record.pass_index)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "record.json").write_text(
            json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        for index, (role, prompt, reply) in enumerate(transcripts):
            (run_dir / f"{index:03d}_{role}_prompt.txt").write_text(prompt, encoding="utf-8")
            (run_dir / f"{index:03d}_{role}_reply.txt").write_text(reply, encoding="utf-8")

    def load_records(self) -> list[RunRecord]:
        records = []
        for path in sorted(self.root.glob("*/*/record.json")):
            records.append(RunRecord.from_dict(json.loads(path.read_text(encoding="utf-8"))))
        return records


def _profile_docs(profile) -> DocCorpus:
    path = getattr(profile, "doc_corpus_path", None)
    return load_doc_corpus(path) if path else DocCorpus()


def _profile_pattern_table(profile):
    path = getattr(profile, "error_pattern_table", None)
    return load_pattern_table(path) if path else None


def _default_scorer(profile) -> Scorer:
    return Scorer(spec=profile.output_spec, embedder=HashEmbedder())


class _Transcript:
    def __init__(self):
        self.steps: list[Step] = []
        self.texts: list[tuple[str, str, str]] = []

    def add(self, role: str, prompt: PromptText, reply: str,
            execution: ExecutionReport | None) -> None:
        prompt_text = prompt.system + "\n\n" + prompt.user
        self.steps.append(
            Step(
                role=role,
                prompt_digest=digest_text(prompt_text),
                reply_digest=digest_text(reply),
                execution=execution,
            )
        )
        self.texts.append((role, prompt_text, reply))


def _ask(backend, prompt: PromptText, cfg: RunConfig) -> str:
    request = ChatRequest(
        model=getattr(backend, "model", "scripted"),
        messages=(
            ChatMessage("system", prompt.system),
            ChatMessage("user", prompt.user),
        ),
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
    )
    return complete(backend, request).content


def _finish(entry, cfg, pass_index, transcript, outcome, final_code, scorecard,
            start, sink):
    record = RunRecord(
        entry_id=entry.id,
        mode=cfg.mode,
        pass_index=pass_index,
        steps=tuple(transcript.steps),
        final_code=final_code,
        outcome=outcome,
        scorecard=scorecard,
        wall_time=time.monotonic() - start,
    )
    if sink is not None:
        sink.write_run(record, transcript.texts)
    return record


def _run_loop(entry, agents: AgentTeam, profile, cfg: RunConfig, *,
              scorer: Scorer | None, policy: SandboxPolicy | None,
              pass_index: int, sink: ResultsSink | None,
              refine_stage: bool, docs: DocCorpus | None = None,
              pattern_table=None) -> RunRecord:
    cfg = cfg.effective()
    scorer = scorer or _default_scorer(profile)
    policy = policy or SandboxPolicy()
    docs = docs if docs is not None else _profile_docs(profile)
    table = pattern_table if pattern_table is not None else _profile_pattern_table(profile)

    transcript = _Transcript()
    start = time.monotonic()

    def fail_transport(reason: str) -> RunRecord:
        return _finish(
            entry, cfg, pass_index, transcript, "transport_failure", None,
            ScoreCard.zeros(note=f"transport failure: {reason}"), start, sink,
        )

    ctx = pack_context(docs, entry, cfg.context_budget)
    prompt = render_generation_prompt(entry, ctx, profile.output_spec)
    try:
        reply = _ask(agents.generator, prompt, cfg)
        code = extract_code(reply)
    except (GatewayError, PromptError) as exc:
        return fail_transport(str(exc))
    report = execute(code, profile, policy, table)
    transcript.add("generator", prompt, reply, report)

    corrections = 0
    while not report.ok and corrections < cfg.max_corrections:
        prompt = render_correction_prompt(entry, code, report)
        try:
            reply = _ask(agents.corrector, prompt, cfg)
            code = extract_code(reply)
        except (GatewayError, PromptError) as exc:
            return fail_transport(str(exc))
        report = execute(code, profile, policy, table)
        transcript.add("corrector", prompt, reply, report)
        corrections += 1

    if not report.ok:
        note = "all correction attempts exhausted without a passing execution"
        return _finish(
            entry, cfg, pass_index, transcript, "framework_failure", None,
            ScoreCard.zeros(note=note), start, sink,
        )

    passing_code, passing_report = code, report
    if refine_stage and cfg.refine_enabled:
        prompt = render_refinement_prompt(entry, passing_code)
        try:
            reply = _ask(agents.refiner, prompt, cfg)
            refined = extract_code(reply)
        except (GatewayError, PromptError) as exc:
            return fail_transport(str(exc))
        refined_report = execute(refined, profile, policy, table)
        transcript.add("refiner", prompt, reply, refined_report)
        if refined_report.ok:
            passing_code, passing_report = refined, refined_report
        # a failing refinement reverts to the last passing code

    scorecard = scorer.evaluate(entry, passing_report, passing_report.workdir)
    return _finish(
        entry, cfg, pass_index, transcript, "scored", passing_code, scorecard, start, sink,
    )


def run_smrf(entry, agents: AgentTeam, profile, cfg: RunConfig, *,
             scorer: Scorer | None = None, policy: SandboxPolicy | None = None,
             pass_index: int = 0, sink: ResultsSink | None = None,
             docs: DocCorpus | None = None, pattern_table=None) -> RunRecord:
    """Full three-agent loop (or zero-shot when cfg.mode says so)."""
    if cfg.mode == "single_agent":
        raise OrchestrationError("use run_single_agent for single_agent mode")
    return _run_loop(
        entry, agents, profile, cfg,
        scorer=scorer, policy=policy, pass_index=pass_index, sink=sink,
        refine_stage=True, docs=docs, pattern_table=pattern_table,
    )


def run_single_agent(entry, backend, profile, cfg: RunConfig, *,
                     scorer: Scorer | None = None, policy: SandboxPolicy | None = None,
                     pass_index: int = 0, sink: ResultsSink | None = None,
                     docs: DocCorpus | None = None, pattern_table=None) -> RunRecord:
    """Iterative-refinement baseline: one backend, same correction budget,
    no refinement stage."""
    if cfg.mode != "single_agent":
        raise OrchestrationError("run_single_agent requires cfg.mode == 'single_agent'")
    return _run_loop(
        entry, AgentTeam.single(backend), profile, cfg,
        scorer=scorer, policy=policy, pass_index=pass_index, sink=sink,
        refine_stage=False, docs=docs, pattern_table=pattern_table,
    )


def run_benchmark(ds: Dataset, agents: AgentTeam, profile, cfg: RunConfig, *,
                  scorer: Scorer | None = None, policy: SandboxPolicy | None = None,
                  sink: ResultsSink | None = None, split: str | None = "test",
                  overwrite: bool = True) -> list[RunRecord]:
    """Run every (test-split) entry for cfg.passes independent passes.

    Entries run concurrently on a bounded worker pool; a failing run is
    recorded and never aborts the batch. With overwrite=False, runs already
    present in the sink are skipped.
    """
    entries = filter_entries(ds, split=split).entries if split else ds.entries
    docs = _profile_docs(profile)
    table = _profile_pattern_table(profile)
    scorer = scorer or _default_scorer(profile)
    policy = policy or SandboxPolicy()

    jobs = [
        (entry, pass_index)
        for entry in entries
        for pass_index in range(cfg.passes)
        if overwrite or sink is None or not sink.exists(entry.id, pass_index)
    ]

    def one(job):
        entry, pass_index = job
        try:
            if cfg.mode == "single_agent":
                return run_single_agent(
                    entry, agents.generator, profile, cfg,
                    scorer=scorer, policy=policy, pass_index=pass_index, sink=sink,
                    docs=docs, pattern_table=table,
                )
            return run_smrf(
                entry, agents, profile, cfg,
                scorer=scorer, policy=policy, pass_index=pass_index, sink=sink,
                docs=docs, pattern_table=table,
            )
        except Exception as exc:  # isolation: one bad run never kills the batch
            record = RunRecord(
                entry_id=entry.id,
                mode=cfg.mode,
                pass_index=pass_index,
                steps=(),
                final_code=None,
                outcome="transport_failure",
                scorecard=ScoreCard.zeros(note=f"run crashed: {exc}"),
                wall_time=0.0,
            )
            if sink is not None:
                sink.write_run(record, [])
            return record

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        return list(pool.map(one, jobs))
