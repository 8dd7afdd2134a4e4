"""Corpus loading, splitting and pooling.

Two concrete input formats cover the usual mention-annotation styles without
shipping any licensed data:

* ``column``: one ``token<TAB>tag`` pair per line, blank line between
  sentences, BIO tags (``B-X`` opens a mention of label ``X``, ``I-X``
  continues it, ``O`` is outside). Each mention becomes one instance.
* ``mention-record``: one JSON object per line with keys ``id``, ``tokens``,
  ``start``, ``end``, ``labels`` (half-open token span, one or more gold
  labels).

Sentences with zero mentions are dropped with a logged count. Instances are
immutable once loaded.
"""

from __future__ import annotations

import json
import logging
import random
from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, EmptyPool, InvalidSpan, ParseError, UnknownLabel
from .hashing import derive_seed

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 0.7
VALIDATION_FRACTION = 0.15


@dataclass(frozen=True)
class DatasetDescriptor:
    """Identity and label inventory of one dataset."""

    name: str
    domain: str
    labels: frozenset[str]
    multi_label: bool = False
    has_standard_splits: bool = False

    def __post_init__(self):
        if not self.labels:
            raise ValueError(f"dataset {self.name} declares no labels")


@dataclass(frozen=True)
class MentionInstance:
    """One annotated entity mention in its sentence context."""

    tokens: tuple[str, ...]
    start: int
    end: int
    gold: tuple[str, ...]
    dataset: str
    instance_id: str

    def __post_init__(self):
        if not (0 <= self.start < self.end <= len(self.tokens)):
            raise InvalidSpan(
                f"{self.instance_id}: span [{self.start}, {self.end}) outside "
                f"sentence of {len(self.tokens)} tokens"
            )
        if not self.gold:
            raise ValueError(f"{self.instance_id}: no gold label")

    @property
    def mention_text(self) -> str:
        return " ".join(self.tokens[self.start:self.end])


@dataclass
class SplitSet:
    """Disjoint train/validation/test partition of one dataset."""

    dataset: str
    train: list[MentionInstance]
    validation: list[MentionInstance]
    test: list[MentionInstance]
    seed: int | None = None

    def all_instances(self) -> list[MentionInstance]:
        return [*self.train, *self.validation, *self.test]


def _check_labels(
    labels: Sequence[str], descriptor: DatasetDescriptor, path: str, line_no: int
) -> None:
    for lab in labels:
        if lab not in descriptor.labels:
            raise UnknownLabel(
                f"{path}:{line_no}: label {lab!r} is not in dataset "
                f"{descriptor.name}'s label set"
            )
    if len(labels) > 1 and not descriptor.multi_label:
        raise ParseError(
            path, line_no,
            f"{len(labels)} gold labels on a single-label dataset",
        )


def load_column_file(path: str | Path, descriptor: DatasetDescriptor) -> list[MentionInstance]:
    """Parse a BIO column file into one instance per mention."""
    path = Path(path)
    name = path.name
    instances: list[MentionInstance] = []
    tokens: list[str] = []
    tags: list[tuple[int, str]] = []  # (line_no, tag)
    sentence_start = 1
    dropped = 0

    def flush(next_start: int) -> None:
        nonlocal dropped
        if tokens:
            found = _mentions_from_bio(tags, str(path))
            if not found:
                dropped += 1
            for start, end, label, line_no in found:
                _check_labels([label], descriptor, str(path), line_no)
                instances.append(MentionInstance(
                    tokens=tuple(tokens),
                    start=start,
                    end=end,
                    gold=(label,),
                    dataset=descriptor.name,
                    instance_id=f"{name}:{sentence_start}:{start}:{end}",
                ))
        tokens.clear()
        tags.clear()

    with path.open(encoding="utf-8") as handle:
        line_no = 0
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush(line_no + 1)
                sentence_start = line_no + 1
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise ParseError(str(path), line_no, f"expected 'token<TAB>tag', got {line!r}")
            if not tokens:
                sentence_start = line_no
            tokens.append(fields[0])
            tags.append((line_no, fields[1]))
        flush(line_no + 1)

    if dropped:
        logger.info("%s: dropped %d sentences with zero mentions", name, dropped)
    return instances


def _mentions_from_bio(tags: list[tuple[int, str]], path: str) -> list[tuple[int, int, str, int]]:
    mentions: list[tuple[int, int, str, int]] = []
    open_label: str | None = None
    open_start = 0
    open_line = 0
    for idx, (line_no, tag) in enumerate(tags):
        if tag == "O":
            if open_label is not None:
                mentions.append((open_start, idx, open_label, open_line))
                open_label = None
            continue
        prefix, _, label = tag.partition("-")
        if prefix not in ("B", "I") or not label:
            raise ParseError(path, line_no, f"bad BIO tag {tag!r}")
        if prefix == "B":
            if open_label is not None:
                mentions.append((open_start, idx, open_label, open_line))
            open_label, open_start, open_line = label, idx, line_no
        else:  # I-
            if open_label != label:
                raise ParseError(path, line_no, f"I-{label} does not continue a mention")
    if open_label is not None:
        mentions.append((open_start, len(tags), open_label, open_line))
    return mentions


def load_mention_file(path: str | Path, descriptor: DatasetDescriptor) -> list[MentionInstance]:
    """Parse a mention-record (JSON lines) file."""
    path = Path(path)
    instances: list[MentionInstance] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), line_no, f"bad JSON: {exc.msg}") from exc
            try:
                tokens = tuple(str(t) for t in record["tokens"])
                start = int(record["start"])
                end = int(record["end"])
                labels = tuple(str(l) for l in record["labels"])
                instance_id = str(record["id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(
                    str(path), line_no,
                    "record needs keys id, tokens, start, end, labels",
                ) from exc
            _check_labels(labels, descriptor, str(path), line_no)
            if not (0 <= start < end <= len(tokens)):
                raise InvalidSpan(
                    f"{path}:{line_no}: span [{start}, {end}) outside sentence "
                    f"of {len(tokens)} tokens"
                )
            instances.append(MentionInstance(
                tokens=tokens, start=start, end=end, gold=labels,
                dataset=descriptor.name, instance_id=instance_id,
            ))
    return instances


FORMATS = ("column", "mention-record")


def load_dataset(
    path: str | Path, format: str, descriptor: DatasetDescriptor
) -> list[MentionInstance]:
    """Load a corpus file in the named format, validating spans and labels."""
    if format == "column":
        return load_column_file(path, descriptor)
    if format == "mention-record":
        return load_mention_file(path, descriptor)
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


def mention_record(instance: MentionInstance) -> str:
    """Canonical one-line JSON form of an instance."""
    return json.dumps(
        {
            "id": instance.instance_id,
            "tokens": list(instance.tokens),
            "start": instance.start,
            "end": instance.end,
            "labels": list(instance.gold),
        },
        sort_keys=True,
        separators=(", ", ": "),
        ensure_ascii=False,
    )


def save_mentions(instances: Iterable[MentionInstance], path: str | Path) -> None:
    Path(path).write_text(
        "".join(mention_record(i) + "\n" for i in instances), encoding="utf-8"
    )


def split_dataset(instances: Sequence[MentionInstance], seed: int) -> SplitSet:
    """70/15/15 split; the permutation is a pure function of the seed."""
    if not instances:
        raise ValueError("cannot split an empty dataset")
    order = list(range(len(instances)))
    random.Random(seed).shuffle(order)
    n = len(instances)
    n_train = int(TRAIN_FRACTION * n)
    n_val = int(VALIDATION_FRACTION * n)
    shuffled = [instances[i] for i in order]
    return SplitSet(
        dataset=instances[0].dataset,
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        seed=seed,
    )


def pool_train(splitsets: Sequence[SplitSet]) -> list[MentionInstance]:
    """Interleave the train splits round-robin in dataset registration order.

    Epoch-level shuffling is the trainer's job; this order is deterministic.
    """
    pools = [list(s.train) for s in splitsets]
    total = sum(len(p) for p in pools)
    if total == 0:
        raise EmptyPool("no training instances to pool")
    out: list[MentionInstance] = []
    depth = 0
    while len(out) < total:
        for pool in pools:
            if depth < len(pool):
                out.append(pool[depth])
        depth += 1
    return out


def merge_tests(splitsets: Sequence[SplitSet]) -> list[MentionInstance]:
    """Concatenate test splits, keeping dataset provenance on each instance.

    Provenance is used for routing in the idealistic scheme and must be
    ignored by models under the realistic scheme.
    """
    merged: list[MentionInstance] = []
    for s in splitsets:
        merged.extend(s.test)
    if not merged:
        raise EmptyPool("no test instances to merge")
    return merged


@dataclass
class DatasetSource:
    """A registry entry: descriptor plus where its files live."""

    descriptor: DatasetDescriptor
    format: str
    data: Path | None = None
    train: Path | None = None
    validation: Path | None = None
    test: Path | None = None
    label_list: tuple[str, ...] = field(default_factory=tuple)

    def load_splits(self, seed: int) -> SplitSet:
        if self.descriptor.has_standard_splits:
            return SplitSet(
                dataset=self.descriptor.name,
                train=load_dataset(self.train, self.format, self.descriptor),
                validation=load_dataset(self.validation, self.format, self.descriptor),
                test=load_dataset(self.test, self.format, self.descriptor),
            )
        instances = load_dataset(self.data, self.format, self.descriptor)
        return split_dataset(instances, derive_seed(seed, f"split:{self.descriptor.name}"))


def load_registry(path: str | Path) -> list[DatasetSource]:
    """Read a dataset registry file (one INI section per dataset)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"registry file not found: {path}")
    parser = ConfigParser()
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except ConfigParserError as exc:
        raise ConfigError(f"bad registry file {path}: {exc}") from exc
    base = path.parent
    sources: list[DatasetSource] = []
    for section in parser.sections():
        opts = parser[section]
        try:
            labels = tuple(l.strip() for l in opts["labels"].split(",") if l.strip())
            fmt = opts.get("format", "mention-record")
            if fmt not in FORMATS:
                raise ConfigError(f"{path} [{section}]: unknown format {fmt!r}")
            standard = "train" in opts
            descriptor = DatasetDescriptor(
                name=section,
                domain=opts.get("domain", ""),
                labels=frozenset(labels),
                multi_label=opts.getboolean("multi_label", fallback=False),
                has_standard_splits=standard,
            )
            source = DatasetSource(descriptor=descriptor, format=fmt, label_list=labels)
            if standard:
                for key in ("train", "validation", "test"):
                    if key not in opts:
                        raise ConfigError(f"{path} [{section}]: missing {key} path")
                    setattr(source, key, base / opts[key])
            else:
                if "data" not in opts:
                    raise ConfigError(f"{path} [{section}]: needs data= or train/validation/test=")
                source.data = base / opts["data"]
        except KeyError as exc:
            raise ConfigError(f"{path} [{section}]: missing key {exc}") from exc
        sources.append(source)
    if not sources:
        raise ConfigError(f"registry {path} defines no datasets")
    return sources
