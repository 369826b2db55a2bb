"""Candidate-set construction by probabilistic transition sampling.

The first member is uniform over the corpus.  Each further member x is drawn
from the remaining records with probability proportional to
exp(lam * L(x, S)), where L(x, S) = sum over selected s of ln P(x | s) and
P(. | s) is a softmax of negative cosine distances over the whole corpus.
Negative ``lam`` favours records far from the current set, positive ``lam``
favours close ones, ``lam = 0`` is uniform sampling without replacement.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy.special import logsumexp

from .core import Corpus, EmbeddingTable, RngStream, uniform_block
from .mechanisms import cosine_distance_matrix

ON_DEMAND_THRESHOLD = 20_000


class DistanceCache:
    """Pairwise cosine distances between record sentence embeddings.

    Materialises the N x N matrix (and the per-anchor log normalisers) up to
    ``on_demand_threshold`` records; above that, rows are computed as needed.
    """

    def __init__(self, sentence_vectors: np.ndarray, on_demand_threshold: int = ON_DEMAND_THRESHOLD):
        vecs = np.asarray(sentence_vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] < 1:
            raise ValueError("sentence_vectors must be a non-empty 2-d matrix")
        norms = np.linalg.norm(vecs, axis=1)
        self._unit = np.divide(vecs, norms[:, None], out=np.zeros_like(vecs),
                               where=norms[:, None] > 0)
        self.n = vecs.shape[0]
        self.on_demand = self.n > on_demand_threshold
        self.matrix = None
        self._log_norm = None
        if not self.on_demand:
            d = cosine_distance_matrix(vecs, vecs)
            d = 0.5 * (d + d.T)
            np.fill_diagonal(d, 0.0)
            d.setflags(write=False)
            self.matrix = d
            self._log_norm = logsumexp(-d, axis=1)

    @classmethod
    def from_corpus(cls, corpus: Corpus, table: EmbeddingTable, **kw) -> DistanceCache:
        return cls(corpus.sentence_matrix(table), **kw)

    def rows(self, anchors) -> np.ndarray:
        anchors = np.asarray(anchors, dtype=np.intp)
        if self.matrix is not None:
            return self.matrix[anchors]
        # One product per anchor, so a row never depends on the batch it was
        # requested in.  Zero vectors have a zero unit row: distance 1 to all.
        d = np.clip(1.0 - np.stack([self._unit @ self._unit[a] for a in anchors]), 0.0, 2.0)
        d[np.arange(len(anchors)), anchors] = 0.0
        return d

    def distance(self, i: int, j: int) -> float:
        return float(self.rows([i])[0, j])

    def logprob_rows(self, anchors) -> np.ndarray:
        """ln P(x | s) for every x, one row per anchor s."""
        anchors = np.asarray(anchors, dtype=np.intp)
        if self.matrix is not None:
            return -self.matrix[anchors] - self._log_norm[anchors][:, None]
        d = self.rows(anchors)
        return -d - logsumexp(-d, axis=1)[:, None]


@dataclasses.dataclass(frozen=True)
class CandidateSet:
    members: tuple[int, ...]
    target_position: int

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        if len(set(self.members)) != len(self.members):
            raise ValueError("candidate members must be distinct")
        if not 0 <= self.target_position < len(self.members):
            raise ValueError("target_position out of range")

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def target(self) -> int:
        return self.members[self.target_position]


def pairwise_transition_logprob(candidate: int, anchor: int, cache: DistanceCache) -> float:
    """ln P(candidate | anchor), normalised over the whole corpus."""
    return float(cache.logprob_rows([anchor])[0, candidate])


def joint_loglik(candidate: int, selected, cache: DistanceCache) -> float:
    """Sum of ln P(candidate | s) over the selected prefix."""
    selected = list(selected)
    if candidate in selected:
        raise ValueError("candidate is already selected")
    if not selected:
        return 0.0
    return float(cache.logprob_rows(selected)[:, candidate].sum())


def policy(loglik: np.ndarray, lam: float, available: np.ndarray) -> np.ndarray:
    """Boltzmann weights exp(lam * L) over available records, normalised; zero elsewhere.

    Works row-wise on 2-d input.
    """
    logits = np.where(available, lam * loglik, -np.inf)
    top = logits.max(axis=-1, keepdims=True)
    w = np.exp(logits - top)
    return w / w.sum(axis=-1, keepdims=True)


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    # guard against rounding landing on a zero-weight tail entry
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def sample_members(n: int, k: int, lam: float, cache: DistanceCache | None,
                   u: np.ndarray) -> np.ndarray:
    """Ordered members for a batch of trials from uniforms ``u`` of shape (B, k)."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= N, got k={k}, N={n}")
    batch = u.shape[0]
    members = np.empty((batch, k), dtype=np.intp)
    members[:, 0] = np.minimum((u[:, 0] * n).astype(np.intp), n - 1)
    rows = np.arange(batch)
    available = np.ones((batch, n), dtype=bool)
    available[rows, members[:, 0]] = False
    need_scores = lam != 0.0
    if need_scores and cache is None:
        raise ValueError("a DistanceCache is required when lambda != 0")
    loglik = np.zeros((batch, n))
    for t in range(1, k):
        if need_scores:
            loglik += cache.logprob_rows(members[:, t - 1])
        probs = policy(loglik, lam, available)
        members[:, t] = _inverse_cdf(probs, u[:, t])
        available[rows, members[:, t]] = False
    return members


def sample_candidate_set(corpus: Corpus | int, k: int, lam: float, cache: DistanceCache | None,
                         rng: RngStream, target_rng: RngStream | None = None) -> CandidateSet:
    """One candidate set; members use draws 0..k-1 of ``rng``.

    The target position is draw 0 of ``target_rng``, or draw k of ``rng``
    when no separate target stream is given.
    """
    n = corpus if isinstance(corpus, int) else len(corpus)
    members = sample_members(n, k, lam, cache, rng.uniforms(k)[None, :])[0]
    u_target = target_rng.uniform(0) if target_rng is not None else rng.uniform(k)
    return CandidateSet(tuple(members), min(int(u_target * k), k - 1))


def sample_trial_sets(n: int, k: int, lam: float, cache: DistanceCache | None,
                      base_seed: int, trial_indices) -> tuple[np.ndarray, np.ndarray]:
    """Members and target positions for many trials, drawn from their own substreams."""
    u = uniform_block(base_seed, trial_indices, "sampling", k)
    members = sample_members(n, k, lam, cache, u)
    ut = uniform_block(base_seed, trial_indices, "target", 1)[:, 0]
    targets = np.minimum((ut * k).astype(np.intp), k - 1)
    return members, targets
