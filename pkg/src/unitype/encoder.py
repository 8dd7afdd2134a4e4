"""Mention-in-context encoders.

A mention instance is encoded as the concatenation of three sub-vectors:
left context, right context, and the mention's characters. The reference
implementation is a hashed mean-embedding encoder: tokens and characters
hash into fixed-size tables (collisions accepted, hashing seed recorded) and
each field contributes the mean of its rows, so gradients are exact and
hand-checkable. Recurrent encoders can be slotted in behind the same
contract.

``encode`` is pure given the parameters; parameters are owned by the
training loop during updates and immutable at inference time.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .hashing import derive_seed, hash_index
from .ingestion import MentionInstance

INIT_SCALE = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    left_dim: int = 32
    right_dim: int = 32
    char_dim: int = 32
    token_hash_bits: int = 15
    char_hash_bits: int = 8
    seed: int = 0
    max_context: int | None = None  # tokens kept per side; None = full sentence

    @property
    def dimension(self) -> int:
        return self.left_dim + self.right_dim + self.char_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


class EncoderParams:
    """The three embedding tables of the hashed reference encoder."""

    def __init__(self, config: EncoderConfig, left, right, chars):
        self.config = config
        self.left = np.asarray(left, dtype=np.float64)
        self.right = np.asarray(right, dtype=np.float64)
        self.chars = np.asarray(chars, dtype=np.float64)
        expected = {
            "left": (1 << config.token_hash_bits, config.left_dim),
            "right": (1 << config.token_hash_bits, config.right_dim),
            "chars": (1 << config.char_hash_bits, config.char_dim),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name} table has shape {actual}, expected {shape}")

    @classmethod
    def initialize(cls, config: EncoderConfig) -> "EncoderParams":
        tables = {}
        for name, shape in (
            ("left", (1 << config.token_hash_bits, config.left_dim)),
            ("right", (1 << config.token_hash_bits, config.right_dim)),
            ("chars", (1 << config.char_hash_bits, config.char_dim)),
        ):
            rng = np.random.default_rng(derive_seed(config.seed, f"encoder:{name}"))
            tables[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        return cls(config, tables["left"], tables["right"], tables["chars"])

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.config, self.left.copy(), self.right.copy(), self.chars.copy()
        )

    def to_arrays(self, prefix: str = "encoder") -> dict[str, np.ndarray]:
        return {
            f"{prefix}.left": self.left,
            f"{prefix}.right": self.right,
            f"{prefix}.chars": self.chars,
        }

    @classmethod
    def from_arrays(
        cls, config: EncoderConfig, arrays: dict[str, np.ndarray], prefix: str = "encoder"
    ) -> "EncoderParams":
        return cls(
            config,
            arrays[f"{prefix}.left"],
            arrays[f"{prefix}.right"],
            arrays[f"{prefix}.chars"],
        )


# Sparse per-table gradients: row index -> accumulated row gradient.
TableGrads = dict[int, np.ndarray]


@dataclass
class EncoderGradients:
    left: TableGrads
    right: TableGrads
    chars: TableGrads

    def scale(self, factor: float) -> None:
        for table in (self.left, self.right, self.chars):
            for row in table.values():
                row *= factor


class MentionEncoder(ABC):
    """Contract every encoder implementation satisfies."""

    params: EncoderParams

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def encode(self, instance: MentionInstance) -> np.ndarray: ...

    @abstractmethod
    def encode_batch(self, instances: Sequence[MentionInstance]) -> np.ndarray: ...

    @abstractmethod
    def backward(
        self, instances: Sequence[MentionInstance], upstream: np.ndarray
    ) -> EncoderGradients: ...

    @abstractmethod
    def apply_gradients(self, grads: EncoderGradients, learning_rate: float) -> None: ...


class HashedMeanEncoder(MentionEncoder):
    """Mean of hashed embeddings per field; empty fields contribute zeros."""

    def __init__(self, params: EncoderParams):
        self.params = params
        self._row_cache: dict[MentionInstance, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def dimension(self) -> int:
        return self.params.config.dimension

    def _rows(self, instance: MentionInstance) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cached = self._row_cache.get(instance)
        if cached is not None:
            return cached
        cfg = self.params.config
        left_tokens = list(instance.tokens[:instance.start])
        right_tokens = list(instance.tokens[instance.end:])
        if cfg.max_context is not None:
            left_tokens = left_tokens[-cfg.max_context:]
            right_tokens = right_tokens[:cfg.max_context]
        token_size = 1 << cfg.token_hash_bits
        char_size = 1 << cfg.char_hash_bits
        rows = (
            np.array(
                [hash_index(t, cfg.seed, token_size, "left") for t in left_tokens],
                dtype=np.intp,
            ),
            np.array(
                [hash_index(t, cfg.seed, token_size, "right") for t in right_tokens],
                dtype=np.intp,
            ),
            np.array(
                [hash_index(c, cfg.seed, char_size, "char") for c in instance.mention_text],
                dtype=np.intp,
            ),
        )
        self._row_cache[instance] = rows
        return rows

    def encode(self, instance: MentionInstance) -> np.ndarray:
        cfg = self.params.config
        left_rows, right_rows, char_rows = self._rows(instance)
        out = np.zeros(cfg.dimension)
        if left_rows.size:
            out[:cfg.left_dim] = self.params.left[left_rows].mean(axis=0)
        if right_rows.size:
            out[cfg.left_dim:cfg.left_dim + cfg.right_dim] = (
                self.params.right[right_rows].mean(axis=0)
            )
        if char_rows.size:
            out[cfg.left_dim + cfg.right_dim:] = self.params.chars[char_rows].mean(axis=0)
        return out

    def encode_batch(self, instances: Sequence[MentionInstance]) -> np.ndarray:
        return np.stack([self.encode(i) for i in instances])

    def backward(
        self, instances: Sequence[MentionInstance], upstream: np.ndarray
    ) -> EncoderGradients:
        """Exact gradients w.r.t. the tables for d(loss)/d(representation)."""
        cfg = self.params.config
        upstream = np.atleast_2d(upstream)
        if upstream.shape != (len(instances), cfg.dimension):
            raise ValueError(
                f"upstream gradient has shape {upstream.shape}, expected "
                f"({len(instances)}, {cfg.dimension})"
            )
        grads = EncoderGradients({}, {}, {})
        splits = (
            (grads.left, 0, cfg.left_dim),
            (grads.right, cfg.left_dim, cfg.left_dim + cfg.right_dim),
            (grads.chars, cfg.left_dim + cfg.right_dim, cfg.dimension),
        )
        for b, instance in enumerate(instances):
            fields = self._rows(instance)
            for (table, lo, hi), rows in zip(splits, fields):
                if not rows.size:
                    continue
                # d(mean)/d(row) = 1/k for each of the k contributing rows.
                piece = upstream[b, lo:hi] / rows.size
                for row in rows:
                    slot = table.get(int(row))
                    if slot is None:
                        table[int(row)] = piece.copy()
                    else:
                        slot += piece
        return grads

    def apply_gradients(self, grads: EncoderGradients, learning_rate: float) -> None:
        for table, grad in (
            (self.params.left, grads.left),
            (self.params.right, grads.right),
            (self.params.chars, grads.chars),
        ):
            for row in sorted(grad):
                table[row] -= learning_rate * grad[row]
