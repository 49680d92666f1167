"""Dataset model, ingestion and statistics for PhysCodeBench-format files.

The on-disk format is JSONL: one record per line, each carrying a
``schema: "physcodebench/1"`` marker plus the entry fields. Datasets are
immutable after load and safe to share across evaluation workers.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_TAG = "physcodebench/1"

DOMAINS = ("rigid_body", "soft_body", "fluid", "mechanics")
PHYSICAL_LAWS = ("collisions", "gravity", "elasticity", "friction", "fluid_dynamics", "other")
DIFFICULTIES = ("easy", "hard")
SPLITS = ("train", "test")


class DatasetError(Exception):
    """Raised for unreadable files, malformed records or invariant violations."""


@dataclass(frozen=True)
class PreferencePair:
    """Two rival implementations of the same prompt plus expert votes."""

    code_a: str
    code_b: str
    preferred: str  # "a" | "b"
    annotator_votes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.preferred not in ("a", "b"):
            raise DatasetError(f"preferred must be 'a' or 'b', got {self.preferred!r}")
        for annotator, choice in self.annotator_votes:
            if choice not in ("a", "b"):
                raise DatasetError(f"vote by {annotator!r} must be 'a' or 'b', got {choice!r}")
        if self.annotator_votes:
            tally = Counter(choice for _, choice in self.annotator_votes)
            if tally["a"] == tally["b"]:
                raise DatasetError("annotator votes are tied; preference data is corrupt")
            majority = "a" if tally["a"] > tally["b"] else "b"
            if majority != self.preferred:
                raise DatasetError(
                    f"preferred={self.preferred!r} contradicts the vote majority {majority!r}"
                )

    def to_dict(self) -> dict:
        return {
            "code_a": self.code_a,
            "code_b": self.code_b,
            "preferred": self.preferred,
            "annotator_votes": [list(v) for v in self.annotator_votes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> PreferencePair:
        votes = tuple((str(a), str(c)) for a, c in data.get("annotator_votes", []))
        return cls(
            code_a=data["code_a"],
            code_b=data["code_b"],
            preferred=data["preferred"],
            annotator_votes=votes,
        )


@dataclass(frozen=True)
class BenchmarkEntry:
    """One benchmark item: a prompt, optional reference code and metadata."""

    id: str
    prompt: str
    difficulty: str
    domains: tuple[str, ...]
    split: str
    physical_laws: tuple[str, ...] = ()
    object_types: tuple[str, ...] = ()
    reference_code: str | None = None
    preference: PreferencePair | None = None
    # Optional override: when set, statistics count this entry toward the
    # named domain only instead of every carried domain.
    primary_domain: str | None = None

    def __post_init__(self):
        if not self.prompt.strip():
            raise DatasetError(f"entry {self.id!r}: prompt is empty")
        if self.difficulty not in DIFFICULTIES:
            raise DatasetError(f"entry {self.id!r}: bad difficulty {self.difficulty!r}")
        if self.split not in SPLITS:
            raise DatasetError(f"entry {self.id!r}: bad split {self.split!r}")
        if not self.domains:
            raise DatasetError(f"entry {self.id!r}: domains must be non-empty")
        for d in self.domains:
            if d not in DOMAINS:
                raise DatasetError(f"entry {self.id!r}: unknown domain {d!r}")
        for law in self.physical_laws:
            if law not in PHYSICAL_LAWS:
                raise DatasetError(f"entry {self.id!r}: unknown physical law {law!r}")
        if self.primary_domain is not None and self.primary_domain not in self.domains:
            raise DatasetError(
                f"entry {self.id!r}: primary_domain {self.primary_domain!r} not in domains"
            )

    @property
    def counted_domains(self) -> tuple[str, ...]:
        """Domains this entry contributes to in per-domain statistics."""
        if self.primary_domain is not None:
            return (self.primary_domain,)
        return self.domains

    def to_dict(self) -> dict:
        record: dict = {
            "schema": SCHEMA_TAG,
            "id": self.id,
            "prompt": self.prompt,
            "difficulty": self.difficulty,
            "domains": list(self.domains),
            "physical_laws": list(self.physical_laws),
            "object_types": list(self.object_types),
            "split": self.split,
        }
        if self.reference_code is not None:
            record["reference_code"] = self.reference_code
        if self.preference is not None:
            record["preference"] = self.preference.to_dict()
        if self.primary_domain is not None:
            record["primary_domain"] = self.primary_domain
        return record

    @classmethod
    def from_dict(cls, data: dict) -> BenchmarkEntry:
        if data.get("schema") != SCHEMA_TAG:
            raise DatasetError(f"missing or unsupported schema tag {data.get('schema')!r}")
        preference = None
        if data.get("preference") is not None:
            preference = PreferencePair.from_dict(data["preference"])
        return cls(
            id=str(data["id"]),
            prompt=data["prompt"],
            difficulty=data["difficulty"],
            domains=tuple(data["domains"]),
            split=data["split"],
            physical_laws=tuple(data.get("physical_laws", [])),
            object_types=tuple(data.get("object_types", [])),
            reference_code=data.get("reference_code"),
            preference=preference,
            primary_domain=data.get("primary_domain"),
        )


@dataclass(frozen=True)
class Dataset:
    """Ordered, id-unique collection of benchmark entries."""

    entries: tuple[BenchmarkEntry, ...]
    source_path: str = "<memory>"

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.id in seen:
                raise DatasetError(f"duplicate entry id {entry.id!r}")
            seen.add(entry.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_id(self, entry_id: str) -> BenchmarkEntry:
        for entry in self.entries:
            if entry.id == entry_id:
                return entry
        raise KeyError(entry_id)


def load_dataset(path: str | Path) -> Dataset:
    """Parse a JSONL benchmark file, enforcing all record invariants.

    Errors carry the 1-based line number of the offending record.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset file {path}: {exc}") from exc

    entries: list[BenchmarkEntry] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            entries.append(BenchmarkEntry.from_dict(raw))
        except (DatasetError, KeyError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc

    try:
        return Dataset(entries=tuple(entries), source_path=str(path))
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a dataset back to JSONL; inverse of :func:`load_dataset`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for entry in ds.entries:
            f.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")


@dataclass
class StatsReport:
    """Counts over a dataset, mirroring the published distribution tables."""

    total: int
    split_counts: dict[str, int]
    # domain -> {"easy": n, "hard": n, "total": n}
    domain_difficulty: dict[str, dict[str, int]]
    # law -> domain -> n
    law_domain: dict[str, dict[str, int]]
    multi_domain_count: int

    def domain_total(self, domain: str) -> int:
        return self.domain_difficulty[domain]["total"]

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "split_counts": dict(self.split_counts),
            "domain_difficulty": {d: dict(v) for d, v in self.domain_difficulty.items()},
            "law_domain": {l: dict(v) for l, v in self.law_domain.items()},
            "multi_domain_count": self.multi_domain_count,
        }

    def render_table(self) -> str:
        """Plain-text table of domain x difficulty counts plus split totals."""
        lines = ["Domain            Easy  Hard  Total", "-" * 36]
        for domain in DOMAINS:
            row = self.domain_difficulty[domain]
            lines.append(f"{domain:<16} {row['easy']:>5} {row['hard']:>5} {row['total']:>6}")
        lines.append("-" * 36)
        lines.append(f"{'entries':<16} {self.total:>18}")
        lines.append(f"{'multi-domain':<16} {self.multi_domain_count:>18}")
        for split in SPLITS:
            lines.append(f"{'split ' + split:<16} {self.split_counts.get(split, 0):>18}")
        return "\n".join(lines)


def dataset_stats(ds: Dataset) -> StatsReport:
    """Count entries per (domain x difficulty) and per (law x domain).

    Entries are counted once per carried domain unless ``primary_domain``
    narrows them to a single column; multi-domain entries are also tallied
    separately.
    """
    domain_difficulty = {d: {"easy": 0, "hard": 0, "total": 0} for d in DOMAINS}
    law_domain = {law: {d: 0 for d in DOMAINS} for law in PHYSICAL_LAWS}
    split_counts = {s: 0 for s in SPLITS}
    multi_domain = 0

    for entry in ds.entries:
        split_counts[entry.split] += 1
        if len(entry.domains) > 1:
            multi_domain += 1
        for domain in entry.counted_domains:
            domain_difficulty[domain][entry.difficulty] += 1
            domain_difficulty[domain]["total"] += 1
            for law in entry.physical_laws:
                law_domain[law][domain] += 1

    return StatsReport(
        total=len(ds.entries),
        split_counts=split_counts,
        domain_difficulty=domain_difficulty,
        law_domain=law_domain,
        multi_domain_count=multi_domain,
    )


def filter_entries(
    ds: Dataset,
    difficulty: str | None = None,
    domain: str | None = None,
    split: str | None = None,
) -> Dataset:
    """Order-preserving conjunctive filter; a domain matches any carried domain."""
    selected = []
    for entry in ds.entries:
        if difficulty is not None and entry.difficulty != difficulty:
            continue
        if domain is not None and domain not in entry.domains:
            continue
        if split is not None and entry.split != split:
            continue
        selected.append(entry)
    return Dataset(entries=tuple(selected), source_path=ds.source_path)
