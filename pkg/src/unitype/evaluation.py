"""Merged-corpus evaluation schemes and metrics.

Predictions and gold annotations may live in different label sets, so both
are mapped into the unified hierarchy and compared there. A prediction is
correct when it matches a gold node exactly, or when it is a finer node
inside a gold node's subtree and the gold dataset contributed no node in
that subtree (if it did, the dataset could have annotated finer and the
coarse gold is binding). Every instance receives exactly one prediction, so
micro precision, recall and F1 all reduce to the fraction correct; reports
state that reduction and tally which correctness rule fired per instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import UnmappableLabel
from .ingestion import MentionInstance
from .oracle import LabelId
from .taxonomy import LabelMapping, UnifiedHierarchy


class RuleTag(str, Enum):
    """Which correctness clause decided an instance."""

    EXACT = "exact"
    FINE_UNDER_COARSE = "fine-under-coarse"
    EXCEPTION_BLOCKED = "exception-blocked"
    INCORRECT = "incorrect"


@dataclass
class PredictionRecord:
    """One model's prediction for one test instance."""

    instance_id: str
    predictor_id: str
    kind: str  # "node" | "dataset_label"
    label: str
    confidence: float
    trace: object | None = None  # ArbitrationTrace for arbitrated predictions

    def to_line(self) -> str:
        return (
            f"PRED {self.instance_id} by={self.predictor_id} kind={self.kind} "
            f"label={self.label} confidence={self.confidence!r}"
        )


class Model(Protocol):
    """What the evaluation schemes need from a model or ensemble."""

    kind: str

    def predict_idealistic(self, instance: MentionInstance) -> PredictionRecord: ...

    def predict_realistic(
        self, instance: MentionInstance, criterion: str
    ) -> PredictionRecord: ...


def resolve_to_nodes(
    prediction: str | LabelId | frozenset[str],
    mapping: LabelMapping,
    hierarchy: UnifiedHierarchy,
) -> frozenset[str]:
    """Map a prediction to hierarchy nodes: identity for node ids, the label
    mapping for dataset labels."""
    if isinstance(prediction, frozenset):
        nodes = prediction
    elif isinstance(prediction, LabelId):
        if prediction not in mapping:
            raise UnmappableLabel(f"prediction {prediction} has no mapping entry")
        nodes = frozenset(mapping.nodes_for(prediction))
    else:
        if prediction not in hierarchy:
            raise UnmappableLabel(f"prediction {prediction!r} is not a hierarchy node")
        nodes = frozenset([prediction])
    if not nodes:
        raise UnmappableLabel("prediction resolved to no nodes")
    return nodes


def best_effort_correct(
    prediction: str | LabelId | frozenset[str],
    gold: Sequence[str],
    gold_dataset: str,
    mapping: LabelMapping,
    hierarchy: UnifiedHierarchy,
) -> tuple[bool, RuleTag]:
    """Score one prediction against one instance's gold annotation.

    Multi-label gold counts as correct if any gold label matches. Exact
    matches win over fine-under-coarse; the exception clause reports a
    fine-in-subtree match that was blocked because the gold dataset itself
    contributed a node inside the gold subtree.
    """
    pred_nodes = resolve_to_nodes(prediction, mapping, hierarchy)
    any_blocked = False
    any_fine = False
    for gold_name in gold:
        gold_label = LabelId(gold_dataset, gold_name)
        if gold_label not in mapping:
            raise UnmappableLabel(f"gold label {gold_label} has no mapping entry")
        for gold_node in mapping.nodes_for(gold_label):
            if gold_node in pred_nodes:
                return True, RuleTag.EXACT
            descendants = hierarchy.subtree(gold_node)
            hits = pred_nodes & descendants
            if not hits:
                continue
            dataset_blocks = any(
                (origin := hierarchy.origin(d)) is not None
                and origin.dataset == gold_dataset
                for d in descendants
            )
            if dataset_blocks:
                any_blocked = True
            else:
                any_fine = True
    if any_fine:
        return True, RuleTag.FINE_UNDER_COARSE
    if any_blocked:
        return False, RuleTag.EXCEPTION_BLOCKED
    return False, RuleTag.INCORRECT


def micro_f1(outcomes: Iterable[bool]) -> float:
    """Micro-averaged F1 with one prediction and one effective gold per
    instance, which reduces to plain accuracy."""
    outcomes = list(outcomes)
    if not outcomes:
        return 0.0
    return sum(outcomes) / len(outcomes)


@dataclass
class EvaluationReport:
    scheme: str
    criterion: str
    model_id: str
    micro_f1: float = 0.0
    total: int = 0
    per_dataset: dict[str, tuple[int, int]] = field(default_factory=dict)
    rule_counts: dict[RuleTag, int] = field(
        default_factory=lambda: {tag: 0 for tag in RuleTag}
    )
    confusion: dict[tuple[str, str], int] = field(default_factory=dict)
    records: list[PredictionRecord] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def table_lines(self) -> list[str]:
        lines = [
            f"scheme={self.scheme} criterion={self.criterion} model={self.model_id}",
            f"instances: {self.total}",
            f"micro-F1 (one prediction per instance, equals accuracy): {self.micro_f1:.4f}",
            "rule firings:",
        ]
        for tag in RuleTag:
            lines.append(f"  {tag.value}: {self.rule_counts[tag]}")
        lines.append("per-dataset accuracy:")
        for name in sorted(self.per_dataset):
            correct, total = self.per_dataset[name]
            share = correct / total if total else 0.0
            lines.append(f"  {name}: {correct}/{total} = {share:.4f}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return lines

    def record_lines(self) -> list[str]:
        lines = [
            f"REPORT scheme={self.scheme} criterion={self.criterion} "
            f"model={self.model_id} total={self.total} micro_f1={self.micro_f1!r}"
        ]
        for tag in RuleTag:
            lines.append(f"RULE {tag.value} {self.rule_counts[tag]}")
        for name in sorted(self.per_dataset):
            correct, total = self.per_dataset[name]
            lines.append(f"DATASET {name} correct={correct} total={total}")
        for (gold, pred) in sorted(self.confusion):
            lines.append(f"CONFUSION gold={gold} pred={pred} count={self.confusion[(gold, pred)]}")
        lines.extend(r.to_line() for r in self.records)
        for note in self.notes:
            lines.append(f"NOTE {note}")
        return lines

    def write(self, directory: str | Path, stem: str) -> list[Path]:
        directory = Path(directory)
        table = directory / f"{stem}.txt"
        machine = directory / f"{stem}.records"
        table.write_text("\n".join(self.table_lines()) + "\n", encoding="utf-8")
        machine.write_text("\n".join(self.record_lines()) + "\n", encoding="utf-8")
        return [table, machine]


def _score_records(
    scheme: str,
    criterion: str,
    model_id: str,
    pairs: Sequence[tuple[MentionInstance, PredictionRecord]],
    mapping: LabelMapping,
    hierarchy: UnifiedHierarchy,
    notes: Sequence[str] = (),
) -> EvaluationReport:
    report = EvaluationReport(scheme=scheme, criterion=criterion, model_id=model_id)
    outcomes = []
    for instance, record in pairs:
        if record.kind == "dataset_label":
            prediction: str | LabelId = LabelId.parse(record.label)
        else:
            prediction = record.label
        correct, tag = best_effort_correct(
            prediction, instance.gold, instance.dataset, mapping, hierarchy
        )
        outcomes.append(correct)
        report.rule_counts[tag] += 1
        got, total = report.per_dataset.get(instance.dataset, (0, 0))
        report.per_dataset[instance.dataset] = (got + int(correct), total + 1)
        gold_repr = f"{instance.dataset}:{instance.gold[0]}"
        key = (gold_repr, record.label)
        report.confusion[key] = report.confusion.get(key, 0) + 1
        report.records.append(record)
    report.total = len(outcomes)
    report.micro_f1 = micro_f1(outcomes)
    report.notes = list(notes)
    return report


def evaluate_idealistic(
    model: Model,
    merged_test: Sequence[MentionInstance],
    mapping: LabelMapping,
    hierarchy: UnifiedHierarchy,
) -> EvaluationReport:
    """Route every instance to the model or head trained on its own dataset."""
    pairs = [(inst, model.predict_idealistic(inst)) for inst in merged_test]
    return _score_records(
        "idealistic", "routed", model.kind, pairs, mapping, hierarchy,
        notes=getattr(model, "caveats", ()),
    )


def evaluate_realistic(
    model: Model,
    merged_test: Sequence[MentionInstance],
    mapping: LabelMapping,
    hierarchy: UnifiedHierarchy,
    criterion: str,
) -> EvaluationReport:
    """Score without origin knowledge: arbitrated for ensembles, direct for
    single classifiers."""
    pairs = [(inst, model.predict_realistic(inst, criterion)) for inst in merged_test]
    return _score_records(
        "realistic", criterion, f"{model.kind}+{criterion}", pairs, mapping, hierarchy,
        notes=getattr(model, "caveats", ()),
    )


def fine_grained_eval(
    model: Model,
    annotated: Sequence[tuple[MentionInstance, str]],
    targets: Sequence[str],
    criterion: str = "direct",
) -> dict[str, dict[str, int]]:
    """Prediction histogram on a re-annotated subset.

    ``annotated`` pairs each instance with a fine gold node absent from its
    origin dataset's label set; for each target node the returned histogram
    counts the model's predicted labels under the realistic scheme.
    """
    histograms: dict[str, dict[str, int]] = {t: {} for t in targets}
    for instance, fine_node in annotated:
        if fine_node not in histograms:
            continue
        record = model.predict_realistic(instance, criterion)
        bucket = histograms[fine_node]
        bucket[record.label] = bucket.get(record.label, 0) + 1
    return histograms
