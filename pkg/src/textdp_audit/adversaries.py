"""Distinguishability attacks: predict which candidate produced a released record.

All attacks return a position in the candidate set.  Ties go to the lowest
position everywhere.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections.abc import Sequence

import numpy as np

from .core import Corpus, EmbeddingTable, RngStream, TextRecord
from .sampling import CandidateSet

logger = logging.getLogger(__name__)

KINDS = ("embedding_nn", "surface_overlap", "remote_judge", "internal_embedding",
         "value_map", "synthetic")

# Cosine distances closer than this count as ties.
TIE_TOLERANCE = 1e-12


@dataclasses.dataclass(frozen=True)
class RemoteJudgeConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = "JUDGE_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 8
    backoff: float = 0.5

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise ValueError("max_retries must be >= 0 and max_in_flight >= 1")

    def to_dict(self) -> dict:
        # the key itself is never serialised, only the variable holding it
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True, eq=False)
class AdversarySpec:
    """Which attack to run.

    ``value_map`` is the MAP attack for GRR (needs ``domain_size``);
    ``synthetic`` succeeds with probability ``success_prob`` and exists to
    exercise the estimator with a known ground truth.
    """

    kind: str
    embedding: EmbeddingTable | None = None
    endpoint: RemoteJudgeConfig | None = None
    domain_size: int | None = None
    success_prob: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "embedding_nn" and self.embedding is None:
            raise ValueError("embedding_nn needs an embedding table")
        if self.kind == "remote_judge" and self.endpoint is None:
            raise ValueError("remote_judge needs an endpoint")
        if self.kind == "value_map" and (self.domain_size is None or self.domain_size < 2):
            raise ValueError("value_map needs domain_size >= 2")
        if self.kind == "synthetic" and not (self.success_prob is not None
                                             and 0.0 <= self.success_prob <= 1.0):
            raise ValueError("synthetic adversary needs success_prob in [0, 1]")

    @property
    def stochastic(self) -> bool:
        return self.kind in ("value_map", "synthetic")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.embedding is not None:
            out["embedding"] = self.embedding.source_path
        if self.endpoint is not None:
            out["endpoint"] = self.endpoint.to_dict()
        if self.domain_size is not None:
            out["domain_size"] = self.domain_size
        if self.success_prob is not None:
            out["success_prob"] = self.success_prob
        return out


class TrialError(RuntimeError):
    """An attack could not produce a guess for one trial."""

    def __init__(self, message: str, trial_index: int | None = None):
        super().__init__(message)
        self.trial_index = trial_index


class JudgeTransportError(TrialError):
    pass


class JudgeParseError(TrialError):
    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


# ---------------------------------------------------------------------------
# Embedding and surface attacks
# ---------------------------------------------------------------------------


def _lowest_argmin(dist: np.ndarray) -> int:
    return int(np.flatnonzero(dist <= dist.min() + TIE_TOLERANCE)[0])


def cosine_distances_to(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    qn = float(np.linalg.norm(query))
    mn = np.linalg.norm(matrix, axis=1)
    if qn == 0.0:
        return np.ones(matrix.shape[0])
    dots = matrix @ query
    cos = np.divide(dots, mn * qn, out=np.zeros_like(dots), where=mn > 0)
    return np.clip(1.0 - cos, 0.0, 2.0)


def nearest_by_cosine(query: np.ndarray, candidate_vectors: np.ndarray) -> int:
    return _lowest_argmin(cosine_distances_to(query, candidate_vectors))


def attack_embedding(output: TextRecord, candidates: CandidateSet, corpus: Corpus,
                     table: EmbeddingTable) -> int:
    """Candidate whose mean token vector is closest in cosine distance to the output's."""
    query = table.sentence_embedding(output.tokens)
    cands = np.stack([table.sentence_embedding(corpus[m].tokens) for m in candidates.members])
    return nearest_by_cosine(query, cands)


def attack_surface(output: TextRecord, candidates: CandidateSet, corpus: Corpus) -> int:
    """Candidate with the highest Jaccard similarity of token-id sets."""
    out = set(output.tokens)
    best_pos, best_inter, best_union = 0, 0, 1
    for pos, m in enumerate(candidates.members):
        cand = set(corpus[m].tokens)
        inter = len(out & cand)
        union = len(out | cand)
        # exact comparison of inter/union against the best ratio so far
        if inter * best_union > best_inter * union:
            best_pos, best_inter, best_union = pos, inter, union
    return best_pos


def attack_internal_embedding(clean_latent: np.ndarray, noised_latent: np.ndarray,
                              candidate_latents: Sequence[np.ndarray]) -> int:
    """Candidate latent nearest (L2) to the noised latent."""
    noised = np.asarray(noised_latent, dtype=np.float64)
    clean = np.asarray(clean_latent, dtype=np.float64)
    cands = np.asarray(candidate_latents, dtype=np.float64)
    if cands.ndim != 2 or cands.shape[1] != noised.shape[0] or clean.shape != noised.shape:
        raise ValueError("latent dimensions do not match")
    d2 = ((cands - noised) ** 2).sum(axis=1)
    return int(np.flatnonzero(d2 == d2.min())[0])


def attack_value_map(output: TextRecord, candidates: CandidateSet, domain_size: int,
                     rng: RngStream) -> int:
    """MAP guess against GRR: a uniformly chosen candidate whose value equals the output.

    With no match every candidate is equally likely.  Uses draw 0 of ``rng``.
    """
    z = output.tokens[0] if output.tokens else None
    values = [m % domain_size for m in candidates.members]
    matches = [pos for pos, v in enumerate(values) if v == z] or list(range(len(values)))
    if len(matches) == 1:
        return matches[0]
    return matches[min(int(rng.uniform(0) * len(matches)), len(matches) - 1)]


def attack_synthetic(candidates: CandidateSet, success_prob: float, rng: RngStream) -> int:
    """Right with probability ``success_prob``, otherwise a uniform wrong position."""
    k = candidates.k
    target = candidates.target_position
    u_hit, u_other = rng.uniforms(2)
    if u_hit < success_prob:
        return target
    other = min(int(u_other * (k - 1)), k - 2)
    return other if other < target else other + 1


# ---------------------------------------------------------------------------
# Remote judge
# ---------------------------------------------------------------------------

JUDGE_PROMPT = """You are given a rewritten text Y and several candidate original texts. Your task is to identify which candidate is the most likely original text that was rewritten to produce Y.

Output format.
Answer with exactly the following format on a single line:
answer: [[N]], where N ∈ {{1,...,{k}}}.
Do not include analysis or any additional text.

Rewritten text Y:
{y_text}

Candidate original texts:
{candidates}

Which candidate is most likely the original?"""

ANSWER_RE = re.compile(r"answer:\s*\[\[\s*(\d+)\s*\]\]", re.IGNORECASE)


def render_judge_prompt(y_text: str, candidate_texts: Sequence[str]) -> str:
    lines = "\n".join(f"{i}. {t}" for i, t in enumerate(candidate_texts, start=1))
    return JUDGE_PROMPT.format(k=len(candidate_texts), y_text=y_text, candidates=lines)


def parse_judge_answer(text: str, k: int) -> int:
    """Zero-based position from the first ``answer: [[N]]`` in ``text``."""
    match = ANSWER_RE.search(text or "")
    if match is None:
        raise JudgeParseError("no 'answer: [[N]]' in judge response", text)
    n = int(match.group(1))
    if not 1 <= n <= k:
        raise JudgeParseError(f"judge answered {n}, outside 1..{k}", text)
    return n - 1


class RemoteJudge:
    """Chat-completion client with a cap on concurrent requests."""

    def __init__(self, cfg: RemoteJudgeConfig):
        self.cfg = cfg
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self.requests_sent = 0
        self._count_lock = threading.Lock()

    def _post(self, prompt: str) -> str:
        cfg = self.cfg
        body = json.dumps({
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "top_p": 1,
            "n": 1,
        }).encode()
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env_var)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(cfg.base_url.rstrip("/") + "/chat/completions",
                                     data=body, headers=headers, method="POST")
        with self._count_lock:
            self.requests_sent += 1
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            payload = json.loads(resp.read().decode())
        return payload["choices"][0]["message"]["content"]

    def complete(self, prompt: str) -> str:
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                with self._slots:
                    return self._post(prompt)
            except (urllib.error.URLError, TimeoutError, OSError, KeyError, IndexError,
                    ValueError) as err:
                last_error = err
                logger.warning("judge request failed (attempt %d/%d): %s",
                               attempt + 1, self.cfg.max_retries + 1, type(err).__name__)
                if attempt < self.cfg.max_retries:
                    time.sleep(self.cfg.backoff * (2 ** attempt))
        raise JudgeTransportError(f"judge unreachable after {self.cfg.max_retries + 1} attempts: "
                                  f"{last_error}")

    def attack(self, output: TextRecord, candidates: CandidateSet, corpus: Corpus) -> int:
        texts = [corpus.render(corpus[m]) for m in candidates.members]
        prompt = render_judge_prompt(corpus.render(output), texts)
        return parse_judge_answer(self.complete(prompt), candidates.k)


def attack_remote_judge(output: TextRecord, candidates: CandidateSet, corpus: Corpus,
                        cfg: RemoteJudgeConfig, client: RemoteJudge | None = None) -> int:
    return (client or RemoteJudge(cfg)).attack(output, candidates, corpus)
