"""Unified hierarchical classifier.

One linear head over all non-root hierarchy nodes. The probability
distribution from the softmax is adjusted so that every node also receives a
``beta``-weighted share of its ancestors' probability (the synthetic root is
excluded), then renormalized. Training uses a partial-label rule: among the
nodes an instance's annotation may legitimately be credited with (its
candidate set), the highest-probability one is assumed correct and its
negative log-likelihood is propagated, with that selection treated as a
constant during the backward pass.

Instances whose annotation maps only to a single leaf pin the model down
there; coarsely annotated instances are then pulled toward whichever fine
candidate the model already believes in, which is what drives fine-grained
prediction on datasets that only have coarse labels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import evaluation
from .arrayio import read_arrays, write_arrays
from .encoder import EncoderConfig, EncoderParams, HashedMeanEncoder
from .errors import DivergedLoss, EmptyCandidateSet, NonFiniteInput
from .hashing import derive_seed
from .ingestion import MentionInstance
from .oracle import LabelId
from .taxonomy import (
    LabelMapping,
    UnifiedHierarchy,
    candidate_set,
    hierarchy_to_lines,
    parse_hierarchy,
)

DEFAULT_BETA = 0.4


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    seed: int = 13
    patience: int = 5
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


class TypePredictor:
    """Projection over the hierarchy's non-root nodes plus the adjustment weight.

    Column order of the weight matrix follows the canonical node order
    (sorted node ids) and is recorded in checkpoints.
    """

    def __init__(self, hierarchy: UnifiedHierarchy, beta: float, W: np.ndarray, b: np.ndarray):
        self.hierarchy = hierarchy
        self.beta = float(beta)
        self.node_ids: tuple[str, ...] = hierarchy.non_root_ids()
        self.node_index: dict[str, int] = {n: i for i, n in enumerate(self.node_ids)}
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        n = len(self.node_ids)
        if n == 0:
            raise ValueError("hierarchy has no label nodes to predict over")
        if self.W.ndim != 2 or self.W.shape[1] != n or self.b.shape != (n,):
            raise ValueError(
                f"weights shaped {self.W.shape}/{self.b.shape} do not match "
                f"{n} hierarchy nodes"
            )
        # mix[i, j] = 1 at i == j, beta where node j is a non-root ancestor of i.
        anc = np.zeros((n, n))
        for i, node in enumerate(self.node_ids):
            for a in hierarchy.ancestors(node):
                anc[i, self.node_index[a]] = 1.0
        self._mix = np.eye(n) + self.beta * anc
        self._column_mass = self._mix.sum(axis=0)

    @classmethod
    def initialize(
        cls, hierarchy: UnifiedHierarchy, dimension: int, beta: float, seed: int
    ) -> "TypePredictor":
        n = len(hierarchy.non_root_ids())
        rng = np.random.default_rng(derive_seed(seed, "predictor:W"))
        W = rng.uniform(-0.1, 0.1, size=(dimension, n))
        return cls(hierarchy, beta, W, np.zeros(n))

    @property
    def dimension(self) -> int:
        return self.W.shape[0]

    # -- forward -----------------------------------------------------------

    def label_distribution(self, representation: np.ndarray) -> np.ndarray:
        """Softmax over all nodes; accepts a single vector or a batch."""
        representation = np.asarray(representation, dtype=np.float64)
        if not np.all(np.isfinite(representation)):
            raise NonFiniteInput("representation contains NaN or infinity")
        return softmax(representation @ self.W + self.b)

    def adjusted_distribution(self, p: np.ndarray) -> np.ndarray:
        """Fold each node's ancestor probability mass in, then renormalize."""
        p = np.asarray(p, dtype=np.float64)
        raw = p @ self._mix.T
        return raw / raw.sum(axis=-1, keepdims=True)

    def candidate_indices(self, candidates: Iterable[str]) -> np.ndarray:
        idx = sorted(self.node_index[c] for c in candidates)
        if not idx:
            raise EmptyCandidateSet("no candidate nodes given")
        return np.array(idx, dtype=np.intp)

    def partial_loss(
        self, p_hat: np.ndarray, candidates: Iterable[str]
    ) -> tuple[float, str]:
        """Negative log-likelihood of the best candidate under ``p_hat``.

        Ties break toward the canonical node order.
        """
        p_hat = np.asarray(p_hat, dtype=np.float64)
        idx = self.candidate_indices(candidates)
        best = idx[int(np.argmax(p_hat[idx]))]
        return float(-np.log(p_hat[best])), self.node_ids[best]

    def forward_batch(self, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.label_distribution(R)
        return p, self.adjusted_distribution(p)

    # -- backward ----------------------------------------------------------

    def loss_backward(
        self, R: np.ndarray, candidate_rows: Sequence[np.ndarray]
    ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Mean partial loss over a batch and its exact analytic gradients.

        The selected candidate is fixed at the forward-pass argmax, so the
        derivative flows through the probabilities only. Returns
        ``(loss, dW, db, dR, selected_indices)``.
        """
        R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        batch = R.shape[0]
        p, p_hat = self.forward_batch(R)
        raw = p @ self._mix.T  # pre-normalization scores
        Z = raw.sum(axis=1)

        selected = np.empty(batch, dtype=np.intp)
        for row, idx in enumerate(candidate_rows):
            selected[row] = idx[int(np.argmax(p_hat[row, idx]))]

        picked_raw = raw[np.arange(batch), selected]
        loss = float(np.mean(-np.log(p_hat[np.arange(batch), selected])))

        # d(-log(raw_k / Z))/dp = -mix[k, :] / raw_k + column_mass / Z
        dP = -self._mix[selected] / picked_raw[:, None] + self._column_mass / Z[:, None]
        # softmax Jacobian, then average over the batch
        inner = (dP * p).sum(axis=1, keepdims=True)
        dlogits = p * (dP - inner) / batch
        dW = R.T @ dlogits
        db = dlogits.sum(axis=0)
        dR = dlogits @ self.W.T
        return loss, dW, db, dR, selected

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"predictor.W": self.W, "predictor.b": self.b}


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    checkpointed: bool

    def to_line(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss!r} "
            f"val_metric={self.val_metric!r} checkpointed={int(self.checkpointed)}"
        )


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")

    def to_lines(self) -> list[str]:
        lines = [r.to_line() for r in self.records]
        lines.append(f"best epoch={self.best_epoch} val_metric={self.best_metric!r}")
        return lines


class UnifiedModel:
    """Encoder plus unified predictor plus the label mapping they were built on."""

    kind = "uhls"

    def __init__(
        self,
        encoder: HashedMeanEncoder,
        predictor: TypePredictor,
        mapping: LabelMapping,
    ):
        self.encoder = encoder
        self.predictor = predictor
        self.mapping = mapping
        self.hierarchy = predictor.hierarchy
        self._candidate_cache: dict[LabelId, frozenset[str]] = {}
        self._instance_rows: dict[tuple[str, tuple[str, ...]], np.ndarray] = {}

    @classmethod
    def initialize(
        cls,
        hierarchy: UnifiedHierarchy,
        mapping: LabelMapping,
        encoder_config: EncoderConfig,
        training_config: TrainingConfig,
    ) -> "UnifiedModel":
        encoder = HashedMeanEncoder(EncoderParams.initialize(encoder_config))
        predictor = TypePredictor.initialize(
            hierarchy, encoder_config.dimension, training_config.beta, training_config.seed
        )
        return cls(encoder, predictor, mapping)

    # -- candidate sets ------------------------------------------------------

    def candidates_for(self, instance: MentionInstance) -> np.ndarray:
        """Union of candidate sets over the instance's gold labels, as indices."""
        key = (instance.dataset, instance.gold)
        rows = self._instance_rows.get(key)
        if rows is not None:
            return rows
        nodes: set[str] = set()
        for gold in instance.gold:
            label = LabelId(instance.dataset, gold)
            cached = self._candidate_cache.get(label)
            if cached is None:
                cached = candidate_set(self.mapping, self.hierarchy, label)
                self._candidate_cache[label] = cached
            nodes.update(cached)
        rows = self.predictor.candidate_indices(nodes)
        self._instance_rows[key] = rows
        return rows

    # -- training --------------------------------------------------------------

    def train(
        self,
        pooled_train: Sequence[MentionInstance],
        combined_validation: Sequence[MentionInstance],
        config: TrainingConfig,
    ) -> TrainingLog:
        """Mini-batch gradient descent with best-validation checkpointing.

        The checkpoint criterion is best-effort micro-F1 on the combined
        validation split; training stops early once it has not improved for
        ``config.patience`` consecutive epochs.
        """
        if not pooled_train:
            raise ValueError("no training instances")
        rng = np.random.default_rng(derive_seed(config.seed, "train:unified"))
        log = TrainingLog()
        best_state: tuple[EncoderParams, np.ndarray, np.ndarray] | None = None
        stale = 0
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(pooled_train))
            total = 0.0
            for lo in range(0, len(order), config.batch_size):
                batch = [pooled_train[i] for i in order[lo:lo + config.batch_size]]
                R = self.encoder.encode_batch(batch)
                rows = [self.candidates_for(inst) for inst in batch]
                loss, dW, db, dR, _ = self.predictor.loss_backward(R, rows)
                if not np.isfinite(loss):
                    raise DivergedLoss(f"non-finite loss at epoch {epoch}")
                total += loss * len(batch)
                self.predictor.W -= config.learning_rate * dW
                self.predictor.b -= config.learning_rate * db
                self.encoder.apply_gradients(
                    self.encoder.backward(batch, dR), config.learning_rate
                )
            train_loss = total / len(pooled_train)
            val_metric = self.validation_metric(combined_validation)
            improved = val_metric > log.best_metric
            if improved:
                log.best_metric = val_metric
                log.best_epoch = epoch
                best_state = (
                    self.encoder.params.copy(),
                    self.predictor.W.copy(),
                    self.predictor.b.copy(),
                )
                stale = 0
            else:
                stale += 1
            log.records.append(EpochRecord(epoch, train_loss, val_metric, improved))
            if stale >= config.patience:
                break
        if best_state is not None:
            params, W, b = best_state
            self.encoder = HashedMeanEncoder(params)
            self.predictor.W = W
            self.predictor.b = b
        return log

    def validation_metric(self, instances: Sequence[MentionInstance]) -> float:
        """Best-effort micro-F1 of direct predictions on a validation set."""
        if not instances:
            return 0.0
        outcomes = []
        for inst in instances:
            node, _ = self.predict(inst)
            correct, _ = evaluation.best_effort_correct(
                frozenset([node]), inst.gold, inst.dataset, self.mapping, self.hierarchy
            )
            outcomes.append(correct)
        return evaluation.micro_f1(outcomes)

    # -- inference ----------------------------------------------------------

    def adjusted_scores(self, instance: MentionInstance) -> np.ndarray:
        R = self.encoder.encode(instance)
        p = self.predictor.label_distribution(R)
        return self.predictor.adjusted_distribution(p)

    def predict(self, instance: MentionInstance) -> tuple[str, float]:
        """Finest-belief node over the whole hierarchy, with its probability.

        No restriction to any dataset's label set or to leaves; ties break
        toward the canonical node order.
        """
        p_hat = self.adjusted_scores(instance)
        best = int(np.argmax(p_hat))
        return self.predictor.node_ids[best], float(p_hat[best])

    def predict_idealistic(self, instance: MentionInstance) -> evaluation.PredictionRecord:
        node, confidence = self.predict(instance)
        return evaluation.PredictionRecord(
            instance_id=instance.instance_id,
            predictor_id=self.kind,
            kind="node",
            label=node,
            confidence=confidence,
        )

    def predict_realistic(
        self, instance: MentionInstance, criterion: str = "direct"
    ) -> evaluation.PredictionRecord:
        if criterion != "direct":
            raise ValueError("a single unified model only supports the 'direct' criterion")
        record = self.predict_idealistic(instance)
        record.predictor_id = f"{self.kind}+direct"
        return record

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": self.kind,
            "version": 1,
            "beta": self.predictor.beta,
            "node_ids": list(self.predictor.node_ids),
            "encoder_config": self.encoder.params.config.to_dict(),
            "hierarchy": "\n".join(hierarchy_to_lines(self.hierarchy, self.mapping)),
        }
        arrays = {**self.encoder.params.to_arrays(), **self.predictor.to_arrays()}
        write_arrays(path, meta, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "UnifiedModel":
        meta, arrays = read_arrays(path)
        if meta.get("kind") != cls.kind:
            raise ValueError(f"{path}: checkpoint kind {meta.get('kind')!r}, expected {cls.kind!r}")
        hierarchy, mapping = parse_hierarchy(meta["hierarchy"], str(path))
        config = EncoderConfig.from_dict(meta["encoder_config"])
        encoder = HashedMeanEncoder(EncoderParams.from_arrays(config, arrays))
        predictor = TypePredictor(
            hierarchy, meta["beta"], arrays["predictor.W"], arrays["predictor.b"]
        )
        if list(predictor.node_ids) != meta["node_ids"]:
            raise ValueError(f"{path}: node order in checkpoint does not match hierarchy")
        return cls(encoder, predictor, mapping)
