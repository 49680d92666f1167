"""Declarative engine profiles: which interpreter runs candidate scripts,
what the output must look like, and where the documentation corpus lives.

Profiles are plain YAML files; two ship with the package ("genesis" for the
real engine, "stub" for the hermetic stand-in). Relative paths inside a
profile resolve against the profile file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .physcodeeval import OutputSpec

BUNDLED_DIR = Path(__file__).parent / "profiles"


class ProfileError(Exception):
    """Raised for missing fields or unresolvable paths in a profile file."""


@dataclass(frozen=True)
class EngineProfile:
    name: str
    interpreter_command: tuple[str, ...]
    script_filename: str
    output_spec: OutputSpec
    doc_corpus_path: str
    error_pattern_table: str

    def __post_init__(self):
        if not self.interpreter_command:
            raise ProfileError("interpreter_command must be non-empty")


def bundled_profile_path(name: str) -> Path:
    return BUNDLED_DIR / f"{name}.yaml"


def find_profile(name_or_path: str | Path) -> Path:
    """Resolve a profile argument: an existing file path or a bundled name."""
    candidate = Path(name_or_path)
    if candidate.is_file():
        return candidate
    bundled = bundled_profile_path(str(name_or_path))
    if bundled.is_file():
        return bundled
    raise ProfileError(f"no profile file or bundled profile named {name_or_path!r}")


def load_profile(path: str | Path) -> EngineProfile:
    """Parse a profile file into a fully path-resolved EngineProfile."""
    path = Path(path)
    if not path.is_file():
        raise ProfileError(f"profile file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        doc = yaml.safe_load(f)

    def required(key: str):
        if key not in doc:
            raise ProfileError(f"{path}: missing required field {key!r}")
        return doc[key]

    def resolve(key: str) -> str:
        value = Path(required(key))
        if not value.is_absolute():
            value = path.parent / value
        if not value.exists():
            raise ProfileError(f"{path}: {key} does not resolve to an existing path: {value}")
        return str(value)

    try:
        output_spec = OutputSpec.from_dict(required("output_spec"))
    except TypeError as exc:
        raise ProfileError(f"{path}: bad output_spec: {exc}") from exc

    return EngineProfile(
        name=str(required("name")),
        interpreter_command=tuple(required("interpreter_command")),
        script_filename=str(required("script_filename")),
        output_spec=output_spec,
        doc_corpus_path=resolve("doc_corpus_path"),
        error_pattern_table=resolve("error_pattern_table"),
    )
