"""Isolated execution of candidate simulation scripts.

Each execution gets a fresh unique working directory, a filtered
environment and a hard wall-clock timeout enforced by killing the whole
process group. Working directories are retained so file validation can
inspect the outputs afterwards.
"""

from __future__ import annotations

import os
import re
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

ERROR_CLASSES = (
    "syntax",
    "api_usage",
    "parameter",
    "boundary_condition",
    "temporal_discretization",
    "incompatible_interaction",
    "resource",
    "other",
)

DEFAULT_ENV_ALLOWLIST = (
    "PATH",
    "HOME",
    "LANG",
    "LC_ALL",
    "TMPDIR",
    "PYTHONPATH",
    "PYTHONHASHSEED",
    "STUB_FAIL",
)


class SandboxError(Exception):
    """Raised for misuse of the sandbox API (not for script failures)."""


@dataclass(frozen=True)
class SandboxPolicy:
    """Resource policy applied to every execution."""

    timeout: float = 120.0
    max_captured_bytes: int = 64 * 1024
    env_allowlist: tuple[str, ...] = DEFAULT_ENV_ALLOWLIST
    workdir_root: str | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise SandboxError("timeout must be positive")


@dataclass(frozen=True)
class ExecutionReport:
    """Outcome of one sandboxed script run."""

    outcome: str  # success | nonzero_exit | timeout | spawn_failure
    exit_code: int | None
    stdout_tail: str
    stderr_tail: str
    wall_time: float
    workdir: str
    error_class: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "success"

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "exit_code": self.exit_code,
            "stdout_tail": self.stdout_tail,
            "stderr_tail": self.stderr_tail,
            "wall_time": self.wall_time,
            "workdir": self.workdir,
            "error_class": self.error_class,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ExecutionReport:
        return cls(**data)


@dataclass(frozen=True)
class PatternRule:
    pattern: re.Pattern
    error_class: str


# First match wins; specific physics vocab is checked before the generic
# Python exception families, and ambiguous value errors land on "parameter".
DEFAULT_PATTERN_SPEC = [
    ("SyntaxError|IndentationError|TabError", "syntax"),
    (r"CFL|time[-_ ]?step|timestep|\bdt\b.*(?:large|small)|unstable.*integration|integration.*unstable", "temporal_discretization"),
    (r"incompatible|cannot couple|no collision pair|coupling.*not supported|cannot interact", "incompatible_interaction"),
    (r"boundary|out of bounds|outside (?:the )?(?:domain|simulation)|escaped the", "boundary_condition"),
    (r"unexpected keyword argument|has no attribute|AttributeError|NameError|is not defined|ImportError|ModuleNotFoundError|not callable|missing \d+ required|takes \d+ positional", "api_usage"),
    (r"ValueError|must be (?:positive|non-negative|finite)|negative (?:mass|radius|density|volume)|exceeds physical limits|invalid (?:value|parameter)|out of range|not a valid", "parameter"),
    (r"MemoryError|RecursionError|Cannot allocate|Too many open files|\bKilled\b|OSError.*resource", "resource"),
]


def compile_pattern_table(spec: list[tuple[str, str]]) -> tuple[PatternRule, ...]:
    rules = []
    for pattern, error_class in spec:
        if error_class not in ERROR_CLASSES:
            raise SandboxError(f"unknown error class {error_class!r} in pattern table")
        rules.append(PatternRule(re.compile(pattern, re.IGNORECASE), error_class))
    return tuple(rules)


DEFAULT_PATTERN_TABLE = compile_pattern_table(DEFAULT_PATTERN_SPEC)


def load_pattern_table(path: str | Path) -> tuple[PatternRule, ...]:
    """Read an ordered list of {pattern, class} mappings from a YAML file."""
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, list):
        raise SandboxError(f"pattern table {path} must be a YAML list")
    return compile_pattern_table([(item["pattern"], item["class"]) for item in raw])


def classify_error(
    report: ExecutionReport,
    table: tuple[PatternRule, ...] = DEFAULT_PATTERN_TABLE,
) -> str:
    """Map a failed execution to an error class via the ordered pattern table."""
    if report.outcome == "success":
        raise SandboxError("classify_error called on a successful report")
    if report.outcome == "timeout":
        return "resource"
    return classify_stderr(report.stderr_tail, table)


def classify_stderr(
    stderr: str,
    table: tuple[PatternRule, ...] = DEFAULT_PATTERN_TABLE,
) -> str:
    for rule in table:
        if rule.pattern.search(stderr):
            return rule.error_class
    return "other"


def classify_with_backend(report: ExecutionReport, backend) -> str:
    """Optional model-assisted classification (off by default).

    Pure stderr patterns cannot always separate behavioral categories such
    as boundary-condition vs parameter errors; this asks a backend to pick
    the class instead. Falls back to the pattern table when the reply is
    not a known class.
    """
    from .llmgateway import ChatMessage, ChatRequest, GatewayError, complete

    if report.outcome == "success":
        raise SandboxError("classify_with_backend called on a successful report")
    if report.outcome == "timeout":
        return "resource"
    prompt = (
        "Classify the error behind this Python stderr into exactly one of: "
        + ", ".join(ERROR_CLASSES)
        + ". Reply with the class name only.\n\n"
        + report.stderr_tail
    )
    request = ChatRequest(
        model=getattr(backend, "model", "classifier"),
        messages=(ChatMessage("user", prompt),),
        temperature=0.0,
        max_tokens=16,
    )
    try:
        reply = complete(backend, request).content.strip().lower()
    except GatewayError:
        return classify_error(report)
    return reply if reply in ERROR_CLASSES else classify_error(report)


def _tail(data: bytes, limit: int) -> str:
    if len(data) > limit:
        data = data[-limit:]
    return data.decode("utf-8", errors="replace")


def _resolve_argv(template: tuple[str, ...] | list[str], script_name: str) -> list[str]:
    argv = []
    for part in template:
        part = part.replace("{python}", sys.executable)
        part = part.replace("{script}", script_name)
        argv.append(part)
    return argv


def execute(code: str, profile, policy: SandboxPolicy,
            pattern_table: tuple[PatternRule, ...] | None = None) -> ExecutionReport:
    """Run candidate code under the profile's interpreter inside a fresh workdir.

    ``profile`` needs ``interpreter_command`` (argv template with {python}
    and {script} placeholders) and ``script_filename``. A timeout kills the
    whole process group; a spawn failure is reported distinctly from any
    script failure.
    """
    root = policy.workdir_root or os.path.join(tempfile.gettempdir(), "physcodebench")
    os.makedirs(root, exist_ok=True)
    workdir = tempfile.mkdtemp(prefix="run-", dir=root)
    script_path = os.path.join(workdir, profile.script_filename)
    with open(script_path, "w", encoding="utf-8") as f:
        f.write(code)

    env = {k: os.environ[k] for k in policy.env_allowlist if k in os.environ}
    argv = _resolve_argv(profile.interpreter_command, profile.script_filename)
    table = pattern_table if pattern_table is not None else DEFAULT_PATTERN_TABLE

    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=workdir,
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except OSError as exc:
        return ExecutionReport(
            outcome="spawn_failure",
            exit_code=None,
            stdout_tail="",
            stderr_tail=f"failed to spawn {argv[0]!r}: {exc}",
            wall_time=time.monotonic() - start,
            workdir=workdir,
        )

    timed_out = False
    try:
        stdout, stderr = proc.communicate(timeout=policy.timeout)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        stdout, stderr = proc.communicate()
    wall_time = time.monotonic() - start

    if timed_out:
        outcome, exit_code = "timeout", None
    elif proc.returncode == 0:
        outcome, exit_code = "success", 0
    else:
        outcome, exit_code = "nonzero_exit", proc.returncode

    report = ExecutionReport(
        outcome=outcome,
        exit_code=exit_code,
        stdout_tail=_tail(stdout, policy.max_captured_bytes),
        stderr_tail=_tail(stderr, policy.max_captured_bytes),
        wall_time=wall_time,
        workdir=workdir,
    )
    if outcome == "success":
        return report
    return ExecutionReport(
        **{**report.to_dict(), "error_class": classify_error(report, table)}
    )
