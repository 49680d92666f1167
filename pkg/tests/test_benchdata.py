import json
import random
from pathlib import Path

import pytest

from physcodebench.benchdata import (
    DOMAINS,
    SCHEMA_TAG,
    BenchmarkEntry,
    Dataset,
    DatasetError,
    PreferencePair,
    dataset_stats,
    filter_entries,
    load_dataset,
    save_dataset,
)

FIXTURES = Path(__file__).parent / "fixtures"


def make_entry(entry_id="e1", **overrides) -> BenchmarkEntry:
    fields = dict(
        id=entry_id,
        prompt="a ball bouncing on a trampoline",
        difficulty="easy",
        domains=("soft_body",),
        split="train",
        physical_laws=("elasticity", "gravity"),
        object_types=("sphere",),
        reference_code="print('sim')",
    )
    fields.update(overrides)
    return BenchmarkEntry(**fields)


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def record(entry_id="r1", **overrides):
    rec = {
        "schema": SCHEMA_TAG,
        "id": entry_id,
        "prompt": "simulate a cube sliding down an incline",
        "difficulty": "easy",
        "domains": ["rigid_body"],
        "physical_laws": ["friction", "gravity"],
        "object_types": ["box"],
        "split": "train",
    }
    rec.update(overrides)
    return rec


class TestLoadDataset:
    def test_two_valid_lines(self, tmp_path):
        path = tmp_path / "ds.jsonl"
        write_jsonl(path, [record("a"), record("b")])
        ds = load_dataset(path)
        assert [e.id for e in ds.entries] == ["a", "b"]

    def test_empty_prompt_names_line(self, tmp_path):
        path = tmp_path / "ds.jsonl"
        write_jsonl(path, [record("a"), record("b", prompt="   ")])
        with pytest.raises(DatasetError, match=r":2:"):
            load_dataset(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "ds.jsonl"
        write_jsonl(path, [record("a"), record("a")])
        with pytest.raises(DatasetError, match="duplicate"):
            load_dataset(path)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "ds.jsonl"
        path.write_text(json.dumps(record("a")) + "\n{not json\n")
        with pytest.raises(DatasetError, match=r":2:"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="cannot read"):
            load_dataset(tmp_path / "absent.jsonl")

    def test_wrong_schema_tag(self, tmp_path):
        path = tmp_path / "ds.jsonl"
        write_jsonl(path, [record("a", schema="physcodebench/99")])
        with pytest.raises(DatasetError, match="schema"):
            load_dataset(path)

    def test_distribution_fixture_split(self):
        ds = load_dataset(FIXTURES / "bench_distribution.jsonl")
        assert len(ds) == 700
        stats = dataset_stats(ds)
        assert stats.split_counts == {"train": 600, "test": 100}

    def test_round_trip(self, tmp_path):
        ds = load_dataset(FIXTURES / "bench_distribution.jsonl")
        out = tmp_path / "copy.jsonl"
        save_dataset(ds, out)
        again = load_dataset(out)
        assert again.entries == ds.entries


class TestInvariants:
    def test_bad_difficulty(self):
        with pytest.raises(DatasetError):
            make_entry(difficulty="medium")

    def test_bad_split(self):
        with pytest.raises(DatasetError):
            make_entry(split="dev")

    def test_empty_domains(self):
        with pytest.raises(DatasetError):
            make_entry(domains=())

    def test_unknown_domain(self):
        with pytest.raises(DatasetError):
            make_entry(domains=("plasma",))

    def test_primary_domain_must_be_carried(self):
        with pytest.raises(DatasetError):
            make_entry(domains=("fluid",), primary_domain="mechanics")

    def test_preference_majority_enforced(self):
        with pytest.raises(DatasetError, match="majority"):
            PreferencePair(
                code_a="a", code_b="b", preferred="b",
                annotator_votes=(("x", "a"), ("y", "a"), ("z", "b")),
            )

    def test_preference_tie_rejected(self):
        with pytest.raises(DatasetError, match="tie"):
            PreferencePair(
                code_a="a", code_b="b", preferred="a",
                annotator_votes=(("x", "a"), ("y", "b")),
            )


class TestStats:
    def test_empty_dataset(self):
        stats = dataset_stats(Dataset(entries=()))
        assert stats.total == 0
        assert stats.multi_domain_count == 0
        assert all(row["total"] == 0 for row in stats.domain_difficulty.values())

    def test_distribution_fixture_matches_table(self):
        ds = load_dataset(FIXTURES / "bench_distribution.jsonl")
        stats = dataset_stats(ds)
        assert stats.domain_total("rigid_body") == 240
        assert stats.domain_total("soft_body") == 180
        assert stats.domain_total("fluid") == 160
        assert stats.domain_total("mechanics") == 120
        assert stats.domain_difficulty["rigid_body"] == {"easy": 144, "hard": 96, "total": 240}
        assert stats.domain_difficulty["fluid"] == {"easy": 84, "hard": 76, "total": 160}

    def test_multi_domain_counted_in_each(self):
        ds = Dataset(entries=(make_entry("m1", domains=("rigid_body", "fluid")),))
        stats = dataset_stats(ds)
        assert stats.multi_domain_count == 1
        assert stats.domain_total("rigid_body") == 1
        assert stats.domain_total("fluid") == 1

    def test_primary_domain_overrides_counting(self):
        ds = Dataset(
            entries=(make_entry("m1", domains=("rigid_body", "fluid"), primary_domain="fluid"),)
        )
        stats = dataset_stats(ds)
        assert stats.domain_total("fluid") == 1
        assert stats.domain_total("rigid_body") == 0

    def test_accounting_identity_on_random_fixtures(self):
        # Per-domain sums exceed the entry count by exactly (|domains|-1)
        # per multi-domain entry.
        rng = random.Random(20240811)
        for trial in range(25):
            entries = []
            for i in range(rng.randrange(1, 40)):
                k = rng.randrange(1, len(DOMAINS) + 1)
                entries.append(
                    make_entry(
                        f"t{trial}_{i}",
                        domains=tuple(rng.sample(DOMAINS, k)),
                        difficulty=rng.choice(("easy", "hard")),
                    )
                )
            ds = Dataset(entries=tuple(entries))
            stats = dataset_stats(ds)
            per_domain_sum = sum(stats.domain_total(d) for d in DOMAINS)
            inflation = sum(len(e.domains) - 1 for e in entries)
            assert per_domain_sum == stats.total + inflation


class TestFilter:
    def test_split_filter_on_distribution_fixture(self):
        ds = load_dataset(FIXTURES / "bench_distribution.jsonl")
        assert len(filter_entries(ds, split="test")) == 100
        assert len(filter_entries(ds, split="train")) == 600

    def test_empty_criteria_is_identity(self):
        ds = load_dataset(FIXTURES / "bench_distribution.jsonl")
        assert filter_entries(ds).entries == ds.entries

    def test_conjunctive(self):
        ds = Dataset(
            entries=(
                make_entry("a", difficulty="hard", domains=("fluid",)),
                make_entry("b", difficulty="hard", domains=("rigid_body",)),
                make_entry("c", difficulty="easy", domains=("fluid",)),
            )
        )
        out = filter_entries(ds, difficulty="hard", domain="fluid")
        assert [e.id for e in out] == ["a"]

    def test_filters_commute(self):
        ds = load_dataset(FIXTURES / "bench_distribution.jsonl")
        one = filter_entries(filter_entries(ds, split="test"), domain="fluid")
        two = filter_entries(filter_entries(ds, domain="fluid"), split="test")
        assert one.entries == two.entries
