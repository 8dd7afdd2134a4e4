"""Corpus loading, splits, pooling."""

import pytest
from hypothesis import given, settings, strategies as st

from unitype.errors import EmptyPool, InvalidSpan, ParseError, UnknownLabel
from unitype.hashing import derive_seed
from unitype.ingestion import (
    DatasetDescriptor,
    MentionInstance,
    SplitSet,
    load_column_file,
    load_dataset,
    load_mention_file,
    load_registry,
    mention_record,
    merge_tests,
    pool_train,
    save_mentions,
    split_dataset,
)

NEWS = DatasetDescriptor("news", "newswire", frozenset({"ORG", "LOC", "PER"}))
WIKI = DatasetDescriptor(
    "wiki", "encyclopedia", frozenset({"person", "athlete", "organization"}),
    multi_label=True,
)


def make_instance(i: int, dataset: str = "news", gold: tuple[str, ...] = ("ORG",)):
    return MentionInstance(
        tokens=("t0", "t1", "t2"), start=1, end=2, gold=gold,
        dataset=dataset, instance_id=f"{dataset}-{i:04d}",
    )


class TestColumnFormat:
    def test_single_mention_sentences(self, data_dir):
        instances = load_column_file(data_dir / "sample_column.txt", NEWS)
        assert [i.gold for i in instances] == [("ORG",), ("LOC",), ("PER",)]
        first = instances[0]
        assert first.tokens[first.start:first.end] == ("committee", "of", "ministers")
        assert first.instance_id == "sample_column.txt:1:1:4"
        # the zero-mention sentence is dropped
        assert all("No" != i.tokens[0] for i in instances[1:])

    def test_first_malformed_line_reported(self, data_dir):
        with pytest.raises(ParseError) as err:
            load_column_file(data_dir / "malformed_column.txt", NEWS)
        assert err.value.line_no == 12

    def test_unknown_tag_label(self, tmp_path):
        path = tmp_path / "bad.col"
        path.write_text("Vienna\tB-CITY\n")
        with pytest.raises(UnknownLabel):
            load_column_file(path, NEWS)

    def test_dangling_i_tag(self, tmp_path):
        path = tmp_path / "bad.col"
        path.write_text("over\tO\nthere\tI-LOC\n")
        with pytest.raises(ParseError) as err:
            load_column_file(path, NEWS)
        assert err.value.line_no == 2

    def test_adjacent_mentions(self, tmp_path):
        path = tmp_path / "two.col"
        path.write_text("Paris\tB-LOC\nBerlin\tB-LOC\n")
        instances = load_column_file(path, NEWS)
        assert [(i.start, i.end) for i in instances] == [(0, 1), (1, 2)]


class TestMentionFormat:
    def test_multi_label_record(self, data_dir):
        instances = load_mention_file(data_dir / "sample_mentions.jsonl", WIKI)
        assert instances[1].gold == ("person", "athlete")
        assert instances[1].mention_text == "Kipchoge"

    def test_multi_label_rejected_for_single_label_dataset(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"id": "x", "tokens": ["a"], "start": 0, "end": 1, "labels": ["ORG", "LOC"]}\n'
        )
        with pytest.raises(ParseError):
            load_mention_file(path, NEWS)

    def test_bad_span(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"id": "x", "tokens": ["a"], "start": 0, "end": 2, "labels": ["ORG"]}\n'
        )
        with pytest.raises(InvalidSpan):
            load_mention_file(path, NEWS)

    def test_round_trip_identity(self, data_dir, tmp_path):
        instances = load_mention_file(data_dir / "sample_mentions.jsonl", WIKI)
        out = tmp_path / "again.jsonl"
        save_mentions(instances, out)
        assert load_mention_file(out, WIKI) == instances
        # the committed golden is in canonical form, so bytes survive too
        assert out.read_bytes() == (data_dir / "sample_mentions.jsonl").read_bytes()

    def test_format_dispatch(self, data_dir):
        assert load_dataset(data_dir / "sample_column.txt", "column", NEWS)
        with pytest.raises(ValueError):
            load_dataset(data_dir / "sample_column.txt", "parquet", NEWS)


class TestSplits:
    def test_seventy_fifteen_fifteen(self):
        instances = [make_instance(i) for i in range(100)]
        splits = split_dataset(instances, seed=5)
        assert (len(splits.train), len(splits.validation), len(splits.test)) == (70, 15, 15)

    def test_single_instance_goes_to_test(self):
        splits = split_dataset([make_instance(0)], seed=1)
        assert (len(splits.train), len(splits.validation), len(splits.test)) == (0, 0, 1)

    def test_same_seed_same_split(self):
        instances = [make_instance(i) for i in range(37)]
        a, b = split_dataset(instances, seed=9), split_dataset(instances, seed=9)
        assert a.train == b.train and a.validation == b.validation and a.test == b.test

    @given(st.integers(1, 300), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_partition_properties(self, n, seed):
        instances = [make_instance(i) for i in range(n)]
        splits = split_dataset(instances, seed)
        combined = splits.train + splits.validation + splits.test
        assert sorted(i.instance_id for i in combined) == sorted(
            i.instance_id for i in instances
        )
        ids = [set(i.instance_id for i in part)
               for part in (splits.train, splits.validation, splits.test)]
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
        assert len(splits.train) == int(0.7 * n)
        assert len(splits.validation) == int(0.15 * n)


class TestPooling:
    def _splitset(self, dataset, n):
        return SplitSet(
            dataset=dataset,
            train=[make_instance(i, dataset) for i in range(n)],
            validation=[],
            test=[make_instance(1000 + i, dataset) for i in range(2)],
        )

    def test_round_robin_interleave(self):
        a, b = self._splitset("a", 2), self._splitset("b", 2)
        pooled = pool_train([a, b])
        assert [i.dataset for i in pooled] == ["a", "b", "a", "b"]

    def test_sizes_add_up_with_uneven_pools(self):
        a, b = self._splitset("a", 3), self._splitset("b", 2)
        pooled = pool_train([a, b])
        assert len(pooled) == 5
        assert sorted(i.instance_id for i in pooled) == sorted(
            i.instance_id for i in a.train + b.train
        )

    def test_empty_pool_is_an_error(self):
        empty = SplitSet(dataset="a", train=[], validation=[], test=[])
        with pytest.raises(EmptyPool):
            pool_train([empty])

    def test_merge_tests_keeps_provenance(self):
        a, b = self._splitset("a", 1), self._splitset("b", 1)
        merged = merge_tests([a, b])
        assert len(merged) == 4
        assert {i.dataset for i in merged} == {"a", "b"}
        with pytest.raises(EmptyPool):
            merge_tests([SplitSet(dataset="a", train=[], validation=[], test=[])])


class TestRegistry:
    def test_load_sources_and_splits(self, tmp_path, data_dir):
        registry = tmp_path / "registry.ini"
        column = (data_dir / "sample_column.txt").read_text()
        (tmp_path / "news.col").write_text(column)
        registry.write_text(
            """
[news]
domain = newswire
format = column
labels = ORG, LOC, PER
data = news.col
"""
        )
        sources = load_registry(registry)
        assert len(sources) == 1
        assert sources[0].descriptor.name == "news"
        assert not sources[0].descriptor.has_standard_splits
        splits = sources[0].load_splits(seed=4)
        assert len(splits.all_instances()) == 3
        again = sources[0].load_splits(seed=4)
        assert splits.train == again.train

    def test_standard_splits(self, tmp_path, data_dir):
        mentions = (data_dir / "sample_mentions.jsonl").read_text()
        for part in ("train", "validation", "test"):
            (tmp_path / f"{part}.jsonl").write_text(mentions)
        (tmp_path / "registry.ini").write_text(
            """
[wiki]
domain = encyclopedia
multi_label = true
labels = person, athlete, organization
train = train.jsonl
validation = validation.jsonl
test = test.jsonl
"""
        )
        sources = load_registry(tmp_path / "registry.ini")
        assert sources[0].descriptor.has_standard_splits
        splits = sources[0].load_splits(seed=0)
        assert len(splits.train) == len(splits.test) == 3

    def test_missing_registry(self, tmp_path):
        from unitype.errors import ConfigError

        with pytest.raises(ConfigError):
            load_registry(tmp_path / "nope.ini")


def test_mention_record_is_canonical():
    instance = make_instance(7)
    line = mention_record(instance)
    assert line.index('"end"') < line.index('"id"') < line.index('"labels"')


def test_derived_split_seeds_differ_by_dataset():
    assert derive_seed(13, "split:a") != derive_seed(13, "split:b")
