from dataclasses import dataclass, field

import pytest

from physcodebench.physcodeeval import OutputSpec
from physcodebench.sandbox import SandboxPolicy


@dataclass(frozen=True)
class ScriptProfile:
    """Minimal duck-typed stand-in for an engine profile in tests."""

    interpreter_command: tuple[str, ...] = ("{python}", "{script}")
    script_filename: str = "candidate.py"
    output_spec: OutputSpec = field(default_factory=OutputSpec)
    name: str = "script"


@pytest.fixture
def script_profile():
    return ScriptProfile()


@pytest.fixture
def fast_policy(tmp_path):
    return SandboxPolicy(timeout=1.0, workdir_root=str(tmp_path / "runs"))
