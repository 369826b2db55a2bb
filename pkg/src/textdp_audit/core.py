"""Domain types, counter-based random streams and small numeric helpers.

Every random quantity in the package is read from an :class:`RngStream`, a
pure function of ``(seed, stream_id, draw_index)``.  Trials never share
mutable generator state, so audits give the same answer for any worker count
or execution order.
"""
from __future__ import annotations

import dataclasses
import math
from collections.abc import Sequence
from typing import Any

import numpy as np

MASK64 = (1 << 64) - 1

# SplitMix64 constants (Steele, Lea & Flood 2014).
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MUL_1 = 0xBF58476D1CE4E5B9
MIX_MUL_2 = 0x94D049BB133111EB
# Odd multiplier spreading stream ids before the key is mixed.
STREAM_GAMMA = 0xD1B54A32D192ED03

_TWO_M53 = 2.0 ** -53

SUBSTREAMS = {"sampling": 0, "target": 1, "mechanism": 2, "adversary": 3}
_SUBSTREAM_SLOTS = 8


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX_MUL_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MUL_2) & MASK64
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_MUL_1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_MUL_2)
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, stream_id: int) -> int:
    """64-bit key of a stream; injective in ``stream_id`` for a fixed seed."""
    base = _mix64(seed & MASK64)
    return _mix64((base + (stream_id & MASK64) * STREAM_GAMMA) & MASK64)


def _to_unit(bits: int) -> float:
    # 53 random bits, centred in their cell so 0 and 1 are never returned.
    return ((bits >> 11) + 0.5) * _TWO_M53


@dataclasses.dataclass(frozen=True)
class RngStream:
    """Counter-based uniform stream.

    Draw ``j`` of the stream is ``mix64(key + (j + 1) * GOLDEN_GAMMA)`` mapped
    to the open interval (0, 1), i.e. the SplitMix64 sequence started at
    ``key``.  Identical ``(seed, stream_id)`` give identical draws on every
    platform since only exact 64-bit integer arithmetic is involved.
    """

    seed: int
    stream_id: int

    @property
    def key(self) -> int:
        return stream_key(self.seed, self.stream_id)

    def uniforms(self, n: int, start: int = 0) -> np.ndarray:
        """Draws ``start .. start + n - 1`` as a float64 array."""
        if n < 0 or start < 0:
            raise ValueError("n and start must be non-negative")
        key = self.key
        if n <= 8:
            return np.array(
                [_to_unit(_mix64((key + (start + j + 1) * GOLDEN_GAMMA) & MASK64))
                 for j in range(n)],
                dtype=np.float64,
            )
        counters = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        z = np.uint64(key) + counters * np.uint64(GOLDEN_GAMMA)
        return ((_mix64_np(z) >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53

    def uniform(self, index: int = 0) -> float:
        return _to_unit(_mix64((self.key + (index + 1) * GOLDEN_GAMMA) & MASK64))

    def fork(self, tag: int) -> RngStream:
        """Child stream, independent of the parent and of other tags."""
        return RngStream(self.key, tag)


def trial_stream_id(trial_index: int, substream: str) -> int:
    try:
        code = SUBSTREAMS[substream]
    except KeyError:
        raise ValueError(f"unknown substream {substream!r}") from None
    return trial_index * _SUBSTREAM_SLOTS + code


def derive_trial_rng(base_seed: int, trial_index: int, substream: str) -> RngStream:
    """Stream for one (trial, substream) pair; a pure function of its inputs."""
    if trial_index < 0:
        raise ValueError("trial_index must be non-negative")
    return RngStream(base_seed & MASK64, trial_stream_id(trial_index, substream))


def uniform_block(base_seed: int, trial_indices: Sequence[int] | np.ndarray,
                  substream: str, n: int) -> np.ndarray:
    """Vectorised draws ``0..n-1`` for many trials at once, shape (len, n).

    Row ``r`` equals ``derive_trial_rng(base_seed, trial_indices[r],
    substream).uniforms(n)`` bit for bit.
    """
    trials = np.asarray(trial_indices, dtype=np.uint64)
    code = np.uint64(SUBSTREAMS[substream])
    ids = trials * np.uint64(_SUBSTREAM_SLOTS) + code
    base = np.uint64(_mix64(base_seed & MASK64))
    keys = _mix64_np(base + ids * np.uint64(STREAM_GAMMA))
    counters = np.arange(1, n + 1, dtype=np.uint64)
    z = keys[:, None] + counters[None, :] * np.uint64(GOLDEN_GAMMA)
    return ((_mix64_np(z) >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def log_sum_exp(values: Sequence[float] | np.ndarray) -> float:
    """ln(sum(exp(v))) with max-subtraction; all ``-inf`` gives ``-inf``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise ValueError("values must be finite or -inf")
    top = arr.max()
    if top == -np.inf:
        return -math.inf
    return float(top + math.log(np.exp(arr - top).sum()))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class TextRecord:
    id: int
    tokens: tuple[int, ...]
    raw_text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))


@dataclasses.dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Vocabulary-indexed matrix of token vectors (float64 internally)."""

    vectors: np.ndarray
    vocab: tuple[str, ...] | None = None
    source_path: str | None = None

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("embedding vectors must be a 2-d matrix")
        if vectors.shape[0] < 1:
            raise ValueError("embedding table is empty")
        if vectors.shape[1] < 2:
            raise ValueError(f"embedding dim must be >= 2, got {vectors.shape[1]}")
        if not np.isfinite(vectors).all():
            raise ValueError("embedding table contains non-finite values")
        if self.vocab is not None:
            vocab = tuple(self.vocab)
            if len(vocab) != vectors.shape[0]:
                raise ValueError(
                    f"vocab has {len(vocab)} entries but table has {vectors.shape[0]} rows")
            if len(set(vocab)) != len(vocab):
                raise ValueError("vocab entries must be unique")
            object.__setattr__(self, "vocab", vocab)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def sentence_embedding(self, tokens: Sequence[int]) -> np.ndarray:
        """Mean of the token vectors; the zero vector for an empty sequence."""
        if len(tokens) == 0:
            return np.zeros(self.dim)
        return self.vectors[np.asarray(tokens, dtype=np.intp)].mean(axis=0)

    def scaled(self, factor: float) -> EmbeddingTable:
        return EmbeddingTable(self.vectors * factor, self.vocab)


@dataclasses.dataclass(frozen=True, eq=False)
class Corpus:
    records: tuple[TextRecord, ...]
    source_path: str = ""
    vocab: tuple[str, ...] | None = None

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValueError("corpus must be non-empty")
        ids = [r.id for r in records]
        if sorted(ids) != list(range(len(records))):
            raise ValueError("record ids must be unique and dense in [0, N)")
        records = tuple(sorted(records, key=lambda r: r.id))
        for r in records:
            if not r.tokens:
                raise ValueError(f"record {r.id} has no tokens")
        object.__setattr__(self, "records", records)
        if self.vocab is not None:
            object.__setattr__(self, "vocab", tuple(self.vocab))

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> TextRecord:
        return self.records[i]

    @property
    def max_token(self) -> int:
        return max(max(r.tokens) for r in self.records)

    @property
    def mean_tokens(self) -> float:
        return sum(len(r.tokens) for r in self.records) / len(self.records)

    def validate_against(self, table: EmbeddingTable) -> None:
        if self.max_token >= table.size:
            raise ValueError(
                f"corpus uses token id {self.max_token} but the embedding table "
                f"has only {table.size} rows")

    def render(self, record: TextRecord) -> str:
        """Display text of a record: its raw text, else its tokens spelled out."""
        if record.raw_text is not None:
            return record.raw_text
        if self.vocab is not None and all(t < len(self.vocab) for t in record.tokens):
            return " ".join(self.vocab[t] for t in record.tokens)
        return " ".join(str(t) for t in record.tokens)

    def sentence_matrix(self, table: EmbeddingTable) -> np.ndarray:
        self.validate_against(table)
        return np.stack([table.sentence_embedding(r.tokens) for r in self.records])


ESTIMATOR_MODES = ("efficient", "symmetric-baseline")


@dataclasses.dataclass(frozen=True)
class AuditConfig:
    """Everything needed to run one audit."""

    mechanism: Any  # mechanisms.MechanismSpec
    adversary: Any  # adversaries.AdversarySpec
    k: int = 2
    trials: int = 10_000
    alpha_conf: float = 0.005
    delta: float = 0.0
    lam: float = -10_000.0
    base_seed: int = 42
    estimator_mode: str = "efficient"
    failure_budget: int | None = None
    log_cap: int = 100_000
    chunk_size: int = 2048

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0.0 < self.alpha_conf <= 0.5:
            raise ValueError(f"alpha_conf must be in (0, 0.5], got {self.alpha_conf}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must be in [0, 1), got {self.delta}")
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if self.estimator_mode not in ESTIMATOR_MODES:
            raise ValueError(f"estimator_mode must be one of {ESTIMATOR_MODES}")
        if self.estimator_mode == "symmetric-baseline" and self.k != 2:
            raise ValueError("the symmetric baseline audits pairs; k must be 2")
        if (self.failure_budget is not None and self.failure_budget < 0) \
                or self.log_cap < 0 or self.chunk_size < 1:
            raise ValueError("failure_budget, log_cap must be >= 0 and chunk_size >= 1")

    def validate_for(self, corpus: Corpus) -> None:
        if self.k > len(corpus):
            raise ValueError(f"k={self.k} exceeds corpus size {len(corpus)}")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "trials": self.trials,
            "alpha_conf": self.alpha_conf,
            "delta": self.delta,
            "lambda": self.lam,
            "base_seed": self.base_seed,
            "estimator_mode": self.estimator_mode,
            "failure_budget": self.failure_budget,
            "log_cap": self.log_cap,
            "mechanism": self.mechanism.to_dict(),
            "adversary": self.adversary.to_dict(),
        }
