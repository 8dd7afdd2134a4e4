"""Ensemble baselines: per-dataset silo models and a shared-encoder
multi-head model, plus the arbitration criteria they need when test
instances arrive without origin information.

Member heads emit scores only over their own dataset's labels. Arbitration
picks the globally highest raw confidence (HCL) or the highest confidence
after multiplying each model's scores by its label count (RHCL); both are
pure functions of the score table and emit a full trace of the decision.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .arrayio import read_arrays, write_arrays
from .encoder import EncoderConfig, EncoderParams, HashedMeanEncoder
from .errors import DivergedLoss, MissingModel
from .evaluation import PredictionRecord
from .hashing import derive_seed
from .ingestion import DatasetDescriptor, MentionInstance, SplitSet, pool_train
from .predictor import EpochRecord, TrainingConfig, TrainingLog, softmax

SIGMOID_CAVEAT = (
    "sigmoid-head confidences are compared directly against softmax "
    "probabilities of other heads, without calibration"
)


@dataclass(frozen=True)
class TraceRow:
    model: str
    top_label: str
    raw: float
    normalized: float


@dataclass(frozen=True)
class ArbitrationTrace:
    """Audit record for one arbitrated prediction."""

    criterion: str
    rows: tuple[TraceRow, ...]
    chosen_model: str
    chosen_label: str
    chosen_score: float

    def to_line(self) -> str:
        cells = " ".join(
            f"{r.model}:{r.top_label}={r.raw!r}/{r.normalized!r}" for r in self.rows
        )
        return (
            f"TRACE criterion={self.criterion} chosen={self.chosen_model}"
            f":{self.chosen_label}@{self.chosen_score!r} {cells}"
        )


ScoreTable = Sequence[tuple[str, Sequence[tuple[str, float]]]]


def _select(table: ScoreTable, criterion: str) -> tuple[str, str, float, ArbitrationTrace]:
    if not table:
        raise ValueError("arbitration needs at least one model")
    rows = []
    best: tuple[str, str, float] | None = None
    for model_name, scores in table:
        if not scores:
            raise ValueError(f"model {model_name} produced no scores")
        factor = len(scores) if criterion == "rhcl" else 1.0
        top_label, top_raw, top_norm = None, None, None
        for label, raw in scores:
            value = raw * factor
            # Strict comparisons keep the first maximum, which encodes the
            # dataset-registration then label-order tie rule.
            if top_norm is None or value > top_norm:
                top_label, top_raw, top_norm = label, raw, value
            if best is None or value > best[2]:
                best = (model_name, label, value)
        rows.append(TraceRow(model_name, top_label, top_raw, top_norm))
    model_name, label, score = best
    trace = ArbitrationTrace(criterion, tuple(rows), model_name, label, score)
    return model_name, label, score, trace


def hcl_select(table: ScoreTable) -> tuple[str, str, float, ArbitrationTrace]:
    """Highest raw confidence across all models; ties break by dataset
    registration order, then label order."""
    return _select(table, "hcl")


def rhcl_select(table: ScoreTable) -> tuple[str, str, float, ArbitrationTrace]:
    """Highest confidence after scaling each model's scores by its label count."""
    return _select(table, "rhcl")


class DatasetHead:
    """Linear classifier over one dataset's original label set."""

    def __init__(
        self,
        dataset: str,
        labels: Sequence[str],
        multi_label: bool,
        W: np.ndarray,
        b: np.ndarray,
    ):
        self.dataset = dataset
        self.labels = tuple(labels)
        self.multi_label = multi_label
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)

    @classmethod
    def initialize(
        cls, descriptor: DatasetDescriptor, dimension: int, seed: int
    ) -> "DatasetHead":
        labels = tuple(sorted(descriptor.labels))
        rng = np.random.default_rng(derive_seed(seed, f"head:{descriptor.name}"))
        W = rng.uniform(-0.1, 0.1, size=(dimension, len(labels)))
        return cls(descriptor.name, labels, descriptor.multi_label, W, np.zeros(len(labels)))

    @property
    def loss_kind(self) -> str:
        return "sigmoid-CE" if self.multi_label else "softmax-CE"

    def scores(self, R: np.ndarray) -> np.ndarray:
        """Per-label confidences: softmax probabilities, or sigmoids for
        multi-label heads."""
        logits = np.asarray(R, dtype=np.float64) @ self.W + self.b
        if self.multi_label:
            return 1.0 / (1.0 + np.exp(-logits))
        return softmax(logits)

    def top(self, R: np.ndarray) -> tuple[str, float]:
        scores = self.scores(R)
        best = int(np.argmax(scores))
        return self.labels[best], float(scores[best])

    def loss_and_grads(
        self, R: np.ndarray, golds: Sequence[tuple[str, ...]]
    ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
        """Summed (not averaged) cross-entropy loss and gradients."""
        R = np.atleast_2d(R)
        n = R.shape[0]
        logits = R @ self.W + self.b
        targets = np.zeros_like(logits)
        for row, gold in enumerate(golds):
            for name in gold:
                targets[row, self.label_index[name]] = 1.0
        if self.multi_label:
            # stable log sigmoid: log s(z) = -softplus(-z), log(1-s(z)) = -softplus(z)
            loss = float(
                np.sum(targets * np.logaddexp(0.0, -logits))
                + np.sum((1.0 - targets) * np.logaddexp(0.0, logits))
            )
            dlogits = 1.0 / (1.0 + np.exp(-logits)) - targets
        else:
            p = softmax(logits)
            picked = (p * targets).sum(axis=1)
            loss = float(-np.log(picked).sum())
            dlogits = p - targets
        dW = R.T @ dlogits
        db = dlogits.sum(axis=0)
        dR = dlogits @ self.W.T
        return loss, dW, db, dR

    def top1_correct(self, R: np.ndarray, gold: tuple[str, ...]) -> bool:
        label, _ = self.top(R)
        return label in gold

    def to_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


def _train_one_head(
    encoder: HashedMeanEncoder,
    head: DatasetHead,
    train: Sequence[MentionInstance],
    validation: Sequence[MentionInstance],
    config: TrainingConfig,
    shuffle_tag: str,
) -> TrainingLog:
    """SGD with early stopping on top-1 validation accuracy."""
    rng = np.random.default_rng(derive_seed(config.seed, shuffle_tag))
    log = TrainingLog()
    best: tuple[EncoderParams, np.ndarray, np.ndarray] | None = None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[lo:lo + config.batch_size]]
            R = encoder.encode_batch(batch)
            loss, dW, db, dR = head.loss_and_grads(R, [b.gold for b in batch])
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss training head {head.dataset}")
            total += loss
            scale = 1.0 / len(batch)
            head.W -= config.learning_rate * scale * dW
            head.b -= config.learning_rate * scale * db
            encoder.apply_gradients(encoder.backward(batch, dR * scale), config.learning_rate)
        val = _top1_accuracy(encoder, head, validation)
        improved = val > log.best_metric
        if improved:
            log.best_metric = val
            log.best_epoch = epoch
            best = (encoder.params.copy(), head.W.copy(), head.b.copy())
            stale = 0
        else:
            stale += 1
        log.records.append(EpochRecord(epoch, total / max(len(train), 1), val, improved))
        if stale >= config.patience:
            break
    if best is not None:
        encoder.params = best[0]
        head.W, head.b = best[1], best[2]
    return log


def _top1_accuracy(
    encoder: HashedMeanEncoder, head: DatasetHead, instances: Sequence[MentionInstance]
) -> float:
    if not instances:
        return 0.0
    hits = sum(
        head.top1_correct(encoder.encode(inst), inst.gold) for inst in instances
    )
    return hits / len(instances)


@dataclass
class SiloMember:
    descriptor: DatasetDescriptor
    encoder: HashedMeanEncoder
    head: DatasetHead


class SiloEnsemble:
    """One independently trained model per dataset."""

    kind = "silo"

    def __init__(self, members: Sequence[SiloMember]):
        self.members = list(members)
        self._by_dataset = {m.descriptor.name: m for m in self.members}
        self.caveats = (
            [SIGMOID_CAVEAT]
            if any(m.descriptor.multi_label for m in self.members)
            else []
        )

    def member(self, dataset: str) -> SiloMember:
        try:
            return self._by_dataset[dataset]
        except KeyError:
            raise MissingModel(f"no silo model trained for dataset {dataset!r}") from None

    def predict_idealistic(self, instance: MentionInstance) -> PredictionRecord:
        member = self.member(instance.dataset)
        label, score = member.head.top(member.encoder.encode(instance))
        return PredictionRecord(
            instance_id=instance.instance_id,
            predictor_id=f"{self.kind}({instance.dataset})",
            kind="dataset_label",
            label=f"{instance.dataset}:{label}",
            confidence=score,
        )

    def score_table(self, instance: MentionInstance) -> ScoreTable:
        # Origin provenance is deliberately unused here: under the realistic
        # scheme every member scores every instance.
        table = []
        for m in self.members:
            scores = m.head.scores(m.encoder.encode(instance))
            table.append(
                (m.descriptor.name, list(zip(m.head.labels, scores.tolist())))
            )
        return table

    def predict_realistic(self, instance: MentionInstance, criterion: str) -> PredictionRecord:
        if criterion not in ("hcl", "rhcl"):
            raise ValueError(f"ensemble arbitration criterion must be hcl or rhcl, got {criterion!r}")
        model_name, label, score, trace = _select(self.score_table(instance), criterion)
        return PredictionRecord(
            instance_id=instance.instance_id,
            predictor_id=f"{self.kind}+{criterion}",
            kind="dataset_label",
            label=f"{model_name}:{label}",
            confidence=score,
            trace=trace,
        )

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = [f"KIND {self.kind}", "VERSION 1"]
        for m in self.members:
            filename = f"member_{m.descriptor.name}.bin"
            meta = {
                "dataset": m.descriptor.name,
                "domain": m.descriptor.domain,
                "labels": list(m.head.labels),
                "multi_label": m.descriptor.multi_label,
                "encoder_config": m.encoder.params.config.to_dict(),
            }
            arrays = {**m.encoder.params.to_arrays(), **m.head.to_arrays("head")}
            write_arrays(directory / filename, meta, arrays)
            lines.append(f"MEMBER {m.descriptor.name} {filename}")
        (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "SiloEnsemble":
        directory = Path(directory)
        names = _read_manifest(directory, cls.kind)
        members = []
        for name, filename in names:
            meta, arrays = read_arrays(directory / filename)
            config = EncoderConfig.from_dict(meta["encoder_config"])
            encoder = HashedMeanEncoder(EncoderParams.from_arrays(config, arrays))
            head = DatasetHead(
                meta["dataset"], meta["labels"], meta["multi_label"],
                arrays["head.W"], arrays["head.b"],
            )
            descriptor = DatasetDescriptor(
                name=meta["dataset"], domain=meta.get("domain", ""),
                labels=frozenset(meta["labels"]), multi_label=meta["multi_label"],
            )
            members.append(SiloMember(descriptor, encoder, head))
        return cls(members)


def train_silo(
    datasets: Sequence[tuple[DatasetDescriptor, SplitSet]],
    encoder_config: EncoderConfig,
    config: TrainingConfig,
) -> tuple[SiloEnsemble, dict[str, TrainingLog]]:
    """Train one independent model per dataset on its own splits."""
    members = []
    logs: dict[str, TrainingLog] = {}
    for descriptor, splits in datasets:
        encoder = HashedMeanEncoder(EncoderParams.initialize(encoder_config))
        head = DatasetHead.initialize(descriptor, encoder_config.dimension, config.seed)
        logs[descriptor.name] = _train_one_head(
            encoder, head, splits.train, splits.validation, config, "train:silo"
        )
        members.append(SiloMember(descriptor, encoder, head))
    return SiloEnsemble(members), logs


class MultiHeadModel:
    """Shared encoder with one classification head per dataset."""

    kind = "multihead"

    def __init__(self, encoder: HashedMeanEncoder, heads: Sequence[DatasetHead],
                 descriptors: Sequence[DatasetDescriptor]):
        self.encoder = encoder
        self.heads = list(heads)
        self.descriptors = list(descriptors)
        self._by_dataset = {h.dataset: h for h in self.heads}
        self.caveats = (
            [SIGMOID_CAVEAT] if any(d.multi_label for d in self.descriptors) else []
        )

    def head(self, dataset: str) -> DatasetHead:
        try:
            return self._by_dataset[dataset]
        except KeyError:
            raise MissingModel(f"no head trained for dataset {dataset!r}") from None

    def predict_idealistic(self, instance: MentionInstance) -> PredictionRecord:
        head = self.head(instance.dataset)
        label, score = head.top(self.encoder.encode(instance))
        return PredictionRecord(
            instance_id=instance.instance_id,
            predictor_id=f"{self.kind}({instance.dataset})",
            kind="dataset_label",
            label=f"{instance.dataset}:{label}",
            confidence=score,
        )

    def score_table(self, instance: MentionInstance) -> ScoreTable:
        R = self.encoder.encode(instance)
        return [
            (h.dataset, list(zip(h.labels, h.scores(R).tolist())))
            for h in self.heads
        ]

    def predict_realistic(self, instance: MentionInstance, criterion: str) -> PredictionRecord:
        if criterion not in ("hcl", "rhcl"):
            raise ValueError(f"ensemble arbitration criterion must be hcl or rhcl, got {criterion!r}")
        model_name, label, score, trace = _select(self.score_table(instance), criterion)
        return PredictionRecord(
            instance_id=instance.instance_id,
            predictor_id=f"{self.kind}+{criterion}",
            kind="dataset_label",
            label=f"{model_name}:{label}",
            confidence=score,
            trace=trace,
        )

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = [f"KIND {self.kind}", "VERSION 1"]
        shared_meta = {"encoder_config": self.encoder.params.config.to_dict()}
        write_arrays(directory / "shared_encoder.bin", shared_meta,
                     self.encoder.params.to_arrays())
        lines.append("ENCODER shared_encoder.bin")
        for head, descriptor in zip(self.heads, self.descriptors):
            filename = f"head_{head.dataset}.bin"
            meta = {
                "dataset": head.dataset,
                "domain": descriptor.domain,
                "labels": list(head.labels),
                "multi_label": head.multi_label,
            }
            write_arrays(directory / filename, meta, head.to_arrays("head"))
            lines.append(f"MEMBER {head.dataset} {filename}")
        (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "MultiHeadModel":
        directory = Path(directory)
        names = _read_manifest(directory, cls.kind)
        shared_meta, shared_arrays = read_arrays(directory / "shared_encoder.bin")
        config = EncoderConfig.from_dict(shared_meta["encoder_config"])
        encoder = HashedMeanEncoder(EncoderParams.from_arrays(config, shared_arrays))
        heads, descriptors = [], []
        for name, filename in names:
            meta, arrays = read_arrays(directory / filename)
            heads.append(DatasetHead(
                meta["dataset"], meta["labels"], meta["multi_label"],
                arrays["head.W"], arrays["head.b"],
            ))
            descriptors.append(DatasetDescriptor(
                name=meta["dataset"], domain=meta.get("domain", ""),
                labels=frozenset(meta["labels"]), multi_label=meta["multi_label"],
            ))
        return cls(encoder, heads, descriptors)


def train_multihead(
    datasets: Sequence[tuple[DatasetDescriptor, SplitSet]],
    encoder_config: EncoderConfig,
    config: TrainingConfig,
) -> tuple[MultiHeadModel, TrainingLog]:
    """Train pooled batches through a shared encoder, routing each instance's
    loss to its dataset's head; model selection on the combined validation
    split (top-1 accuracy with provenance routing)."""
    descriptors = [d for d, _ in datasets]
    splitsets = [s for _, s in datasets]
    encoder = HashedMeanEncoder(EncoderParams.initialize(encoder_config))
    heads = [
        DatasetHead.initialize(d, encoder_config.dimension, config.seed)
        for d in descriptors
    ]
    model = MultiHeadModel(encoder, heads, descriptors)
    pooled = pool_train(splitsets)
    combined_val = [inst for s in splitsets for inst in s.validation]

    rng = np.random.default_rng(derive_seed(config.seed, "train:multihead"))
    log = TrainingLog()
    best: tuple[EncoderParams, list[np.ndarray], list[np.ndarray]] | None = None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pooled))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [pooled[i] for i in order[lo:lo + config.batch_size]]
            R = encoder.encode_batch(batch)
            dR = np.zeros_like(R)
            scale = 1.0 / len(batch)
            for head in heads:
                rows = [i for i, inst in enumerate(batch) if inst.dataset == head.dataset]
                if not rows:
                    continue
                golds = [batch[i].gold for i in rows]
                loss, dW, db, dR_rows = head.loss_and_grads(R[rows], golds)
                if not np.isfinite(loss):
                    raise DivergedLoss(f"non-finite loss on head {head.dataset}")
                total += loss
                head.W -= config.learning_rate * scale * dW
                head.b -= config.learning_rate * scale * db
                dR[rows] = dR_rows * scale
            encoder.apply_gradients(encoder.backward(batch, dR), config.learning_rate)
        val = _routed_accuracy(model, combined_val)
        improved = val > log.best_metric
        if improved:
            log.best_metric = val
            log.best_epoch = epoch
            best = (encoder.params.copy(), [h.W.copy() for h in heads],
                    [h.b.copy() for h in heads])
            stale = 0
        else:
            stale += 1
        log.records.append(EpochRecord(epoch, total / max(len(pooled), 1), val, improved))
        if stale >= config.patience:
            break
    if best is not None:
        encoder.params = best[0]
        for head, W, b in zip(heads, best[1], best[2]):
            head.W, head.b = W, b
    return model, log


def _routed_accuracy(model: MultiHeadModel, instances: Sequence[MentionInstance]) -> float:
    if not instances:
        return 0.0
    hits = 0
    for inst in instances:
        head = model.head(inst.dataset)
        hits += head.top1_correct(model.encoder.encode(inst), inst.gold)
    return hits / len(instances)


def _read_manifest(directory: Path, expected_kind: str) -> list[tuple[str, str]]:
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no ensemble manifest at {manifest}")
    names: list[tuple[str, str]] = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        fields = line.split()
        if not fields:
            continue
        if fields[0] == "KIND" and fields[1] != expected_kind:
            raise ValueError(
                f"{manifest}: checkpoint kind {fields[1]!r}, expected {expected_kind!r}"
            )
        if fields[0] == "MEMBER":
            names.append((fields[1], fields[2]))
    return names
