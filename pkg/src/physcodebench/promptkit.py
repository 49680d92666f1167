"""Prompt assembly for the generation, correction and refinement roles.

The generation prompt follows a fixed template whose output-specification
block is substituted from the engine profile's OutputSpec; documentation
context is selected by term overlap against the instruction under a token
budget (estimated at four characters per token).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .physcodeeval import OutputSpec
from .sandbox import ExecutionReport


class PromptError(Exception):
    """Raised when a renderer is invoked outside its precondition."""


@dataclass(frozen=True)
class DocCorpus:
    """Documentation sections and code example snippets, in corpus order."""

    sections: tuple[tuple[str, str], ...] = ()  # (title, text)
    examples: tuple[str, ...] = ()


def load_doc_corpus(directory: str | Path) -> DocCorpus:
    """Load a corpus from a directory: .md/.txt become titled sections
    (title = file stem), .py files become example snippets. Files are taken
    in sorted-name order."""
    directory = Path(directory)
    sections = []
    examples = []
    if directory.is_dir():
        for path in sorted(directory.iterdir()):
            if path.suffix in (".md", ".txt"):
                sections.append((path.stem, path.read_text(encoding="utf-8")))
            elif path.suffix == ".py":
                examples.append(path.read_text(encoding="utf-8"))
    return DocCorpus(sections=tuple(sections), examples=tuple(examples))


@dataclass(frozen=True)
class ContextPack:
    doc_excerpts: tuple[tuple[str, str], ...]
    example_snippets: tuple[str, ...]
    token_estimate: int


@dataclass(frozen=True)
class PromptText:
    system: str
    user: str

    def __post_init__(self):
        if not self.user:
            raise PromptError("user prompt must be non-empty")


def estimate_tokens(text: str) -> int:
    """Crude cross-backend token estimate: ceil(len/4)."""
    return -(-len(text) // 4)


_TOKEN_RE = re.compile(r"[a-z0-9_]+")


def _token_set(text: str) -> set:
    return set(_TOKEN_RE.findall(text.casefold()))


def pack_context(docs: DocCorpus, entry, budget: int) -> ContextPack:
    """Greedy budget-constrained selection of the most relevant context.

    Sections are ranked by the number of distinct case-folded tokens they
    share with the instruction (corpus order breaks ties) and included
    while they fit; example snippets fill the remaining budget the same
    way. Selected items are emitted in corpus order.
    """
    if budget <= 0:
        raise PromptError("budget must be positive")
    prompt_tokens = _token_set(entry.prompt)

    def ranked(items, text_of):
        scored = [
            (-len(prompt_tokens & _token_set(text_of(item))), position)
            for position, item in enumerate(items)
        ]
        return [position for _, position in sorted(scored)]

    def select(items, text_of, used):
        chosen = []
        for position in ranked(items, text_of):
            cost = estimate_tokens(text_of(items[position]))
            if used + cost <= budget:
                chosen.append(position)
                used += cost
        return [items[p] for p in sorted(chosen)], used

    doc_excerpts, used = select(docs.sections, lambda s: s[0] + "\n" + s[1], 0)
    example_snippets, used = select(docs.examples, lambda s: s, used)

    return ContextPack(
        doc_excerpts=tuple(doc_excerpts),
        example_snippets=tuple(example_snippets),
        token_estimate=used,
    )


GENERATION_SYSTEM = (
    "You are an expert programmer specializing in physical simulations using "
    "the Genesis physics engine."
)

GENERATION_USER_TEMPLATE = """Your task is to implement the following physical scenario:

[INSTRUCTION]: {user_prompt}

Please generate Python code that implements this scenario using the Genesis
physics engine.
Your code should:

1. Initialize the Genesis environment with appropriate parameters
2. Create all necessary physical objects with realistic properties
3. Configure the correct physical interactions and constraints
4. Set up an appropriate camera angle to visualize the phenomenon
5. Run the simulation and save the output video

The code should be physically accurate, following these laws:
- Respect conservation laws (energy, momentum, etc.)
- Use realistic parameters for mass, friction, elasticity, etc.
- Implement correct collision detection and response
- Apply appropriate forces and constraints

For the output specifications:
- Set the resolution to {width}x{height} pixels
- Use a frame rate of {fps} fps
- Generate a {duration}-second video
- Save the output file as "{filename}"
- Set visualization parameter to False (run in background mode)

Here are some relevant examples and documentation to help you:
[CONTEXT]: {genesis_documentation}
[EXAMPLES]: {relevant_code_examples}

Your implementation should be complete, executable, and produce a simulation
that accurately reflects the described scenario.
"""


def _format_number(value: float) -> str:
    if float(value) == int(value):
        return str(int(value))
    return f"{value:g}"


def _render_docs(ctx: ContextPack) -> str:
    blocks = [f"## {title}\n{text.strip()}" for title, text in ctx.doc_excerpts]
    return "\n\n".join(blocks)


def render_generation_prompt(entry, ctx: ContextPack, spec: OutputSpec) -> PromptText:
    """Fill the generation template with the instruction, context and output spec."""
    user = GENERATION_USER_TEMPLATE.format(
        user_prompt=entry.prompt,
        width=spec.width,
        height=spec.height,
        fps=_format_number(spec.fps),
        duration=_format_number(spec.duration),
        filename=spec.filename,
        genesis_documentation=_render_docs(ctx),
        relevant_code_examples="\n\n".join(ctx.example_snippets),
    )
    return PromptText(system=GENERATION_SYSTEM, user=user)


CORRECTION_SYSTEM = (
    "You are a physics-simulation debugging specialist. Diagnose the error in "
    "the failing script and reply with a complete corrected program."
)

CORRECTION_USER_TEMPLATE = """The following simulation script failed to run.

[INSTRUCTION]: {user_prompt}

[FAILING CODE]:
```python
{code}
```

[ERROR] (class: {error_class}):
{error_excerpt}

Reply with the full corrected program in a single fenced code block. Keep the
output specifications (resolution, frame rate, duration, output filename)
unchanged.
"""

ERROR_EXCERPT_LINES = 20


def error_excerpt(report: ExecutionReport, max_lines: int = ERROR_EXCERPT_LINES) -> str:
    """Distilled error description: final stderr lines (timeouts state so).

    The per-run working directory is replaced by a placeholder so identical
    failures produce identical prompts across runs.
    """
    if report.outcome == "timeout":
        return "(process killed: exceeded the execution time limit)"
    text = report.stderr_tail
    if report.workdir:
        text = text.replace(report.workdir, "<workdir>")
    lines = text.strip().splitlines()
    return "\n".join(lines[-max_lines:]) if lines else "(no stderr output)"


def render_correction_prompt(entry, code: str, report: ExecutionReport) -> PromptText:
    if report.outcome == "success":
        raise PromptError("correction prompt requires a failing execution report")
    user = CORRECTION_USER_TEMPLATE.format(
        user_prompt=entry.prompt,
        code=code,
        error_class=report.error_class or "other",
        error_excerpt=error_excerpt(report),
    )
    return PromptText(system=CORRECTION_SYSTEM, user=user)


REFINEMENT_SYSTEM = (
    "You are a physics-simulation reviewer. Improve physical parameters and "
    "code quality without restructuring working code."
)

REFINEMENT_USER_TEMPLATE = """This simulation script already runs successfully.

[INSTRUCTION]: {user_prompt}

[WORKING CODE]:
```python
{code}
```

Improve the physical parameters (mass, friction, elasticity, damping, camera
framing) and overall code quality while maintaining the code structure. Keep
the output specifications (resolution, frame rate, duration, output filename)
exactly as they are. Reply with the full program in a single fenced code
block.
"""


def render_refinement_prompt(entry, code: str) -> PromptText:
    if not code.strip():
        raise PromptError("refinement prompt requires non-empty code")
    user = REFINEMENT_USER_TEMPLATE.format(user_prompt=entry.prompt, code=code)
    return PromptText(system=REFINEMENT_SYSTEM, user=user)


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_code(reply: str) -> str:
    """Return the largest fenced code block, or the whole reply when unfenced."""
    if not reply.strip():
        raise PromptError("cannot extract code from an empty reply")
    blocks = _FENCE_RE.findall(reply)
    if not blocks:
        return reply
    largest = max(blocks, key=len)
    return largest[:-1] if largest.endswith("\n") else largest
