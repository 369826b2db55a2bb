"""Audit loop: sample candidates, privatize the target, attack, count, estimate.

Trials are grouped in fixed-size chunks.  Candidate sets and targets for a
chunk are drawn in one vectorised call; the mechanism and the attack then
run trial by trial.  Every random quantity comes from the trial's own
substream, so chunks can run on any number of threads and the aggregate
(an integer sum) never depends on scheduling.
"""
from __future__ import annotations

import dataclasses
import math
import os
import threading
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .adversaries import (
    AdversarySpec,
    RemoteJudge,
    TrialError,
    attack_internal_embedding,
    attack_surface,
    attack_synthetic,
    attack_value_map,
    nearest_by_cosine,
)
from .core import AuditConfig, Corpus, EmbeddingTable, RngStream, TextRecord, derive_trial_rng
from .estimation import EstimateSummary, summarize, summarize_symmetric
from .mechanisms import VectorNoiseMechanism, build_mechanism
from .sampling import CandidateSet, DistanceCache, sample_trial_sets

# Share of T that remote-judge audits may lose to failed trials by default.
REMOTE_FAILURE_SHARE = 0.005
# Dimension of the stand-in embedding used for sampling when no table is attached.
FALLBACK_EMBEDDING_DIM = 16
FALLBACK_EMBEDDING_SEED = 0


@dataclasses.dataclass(frozen=True)
class TrialOutcome:
    trial_index: int
    candidate_ids: tuple[int, ...]
    target_position: int
    output_record: TextRecord
    guess_position: int
    success: bool
    seed_used: int
    # symmetric baseline only: the second experiment, privatizing member 1
    fp_output_record: TextRecord | None = None
    fp_guess_position: int | None = None
    false_positive: bool | None = None


@dataclasses.dataclass(frozen=True)
class TrialFailure:
    trial_index: int
    message: str


@dataclasses.dataclass(frozen=True)
class AuditResult:
    summary: EstimateSummary
    trial_log: tuple[TrialOutcome, ...] | None
    wall_time: float
    config_echo: dict
    mechanism_queries: int = 0
    failed_trials: tuple[TrialFailure, ...] = ()
    log_truncated: bool = False


class AuditError(RuntimeError):
    """The failure budget was exceeded; carries what was completed."""

    def __init__(self, message: str, partial_log: Sequence[TrialOutcome],
                 failures: Sequence[TrialFailure]):
        super().__init__(message)
        self.partial_log = tuple(partial_log)
        self.failures = tuple(failures)


def failure_budget(config: AuditConfig) -> int:
    """Resolved budget: explicit value, else 0.5% of T for remote judges, else 0."""
    if config.failure_budget is not None:
        return config.failure_budget
    if config.adversary.kind == "remote_judge":
        return math.ceil(REMOTE_FAILURE_SHARE * config.trials)
    return 0


def default_workers() -> int:
    return os.cpu_count() or 1


def sampling_table(config: AuditConfig, corpus: Corpus) -> EmbeddingTable:
    """Embedding that defines the distances of the candidate sampler."""
    if config.adversary.embedding is not None:
        return config.adversary.embedding
    params = config.mechanism.params
    table = getattr(params, "embedding", None)
    if table is not None:
        return table
    from .io import synthetic_embeddings
    return synthetic_embeddings(corpus.max_token + 1, FALLBACK_EMBEDDING_DIM,
                                FALLBACK_EMBEDDING_SEED)


class AuditContext:
    """Read-only state shared by all trials of one audit."""

    def __init__(self, config: AuditConfig, corpus: Corpus, judge: RemoteJudge | None = None,
                 distance_cache: DistanceCache | None = None):
        config.validate_for(corpus)
        self.config = config
        self.corpus = corpus
        self.mechanism = build_mechanism(config.mechanism, corpus)
        adv: AdversarySpec = config.adversary
        self.adversary = adv
        if adv.kind == "internal_embedding" and not isinstance(self.mechanism, VectorNoiseMechanism):
            raise ValueError("the internal_embedding attack needs the vector_noise mechanism")
        self.cache = distance_cache
        if self.cache is None and config.lam != 0.0:
            self.cache = DistanceCache.from_corpus(corpus, sampling_table(config, corpus))
        self._sentences = None
        if adv.kind == "embedding_nn":
            self._sentences = corpus.sentence_matrix(adv.embedding)
        self.judge = judge
        if adv.kind == "remote_judge" and self.judge is None:
            self.judge = RemoteJudge(adv.endpoint)
        self._queries = 0
        self._lock = threading.Lock()

    @property
    def mechanism_queries(self) -> int:
        return self._queries

    def _count(self, n: int) -> None:
        with self._lock:
            self._queries += n

    def privatize(self, record: TextRecord, rng: RngStream):
        """Output record plus the latent release when the attack needs it."""
        if self.adversary.kind == "internal_embedding":
            rel = self.mechanism.release(record, rng)
            return rel.output, rel
        return self.mechanism.perturb(record, rng), None

    def guess(self, output: TextRecord, cset: CandidateSet, rng: RngStream, release) -> int:
        adv = self.adversary
        kind = adv.kind
        if kind == "embedding_nn":
            query = adv.embedding.sentence_embedding(output.tokens)
            return nearest_by_cosine(query, self._sentences[list(cset.members)])
        if kind == "surface_overlap":
            return attack_surface(output, cset, self.corpus)
        if kind == "value_map":
            return attack_value_map(output, cset, adv.domain_size, rng)
        if kind == "synthetic":
            return attack_synthetic(cset, adv.success_prob, rng)
        if kind == "internal_embedding":
            cands = self.mechanism.latents[list(cset.members)]
            return attack_internal_embedding(release.clean_latent, release.noised_latent, cands)
        return self.judge.attack(output, cset, self.corpus)

    def efficient_trial(self, trial_index: int, members, target_position: int) -> TrialOutcome:
        cfg = self.config
        cset = CandidateSet(tuple(members), int(target_position))
        mech_rng = derive_trial_rng(cfg.base_seed, trial_index, "mechanism")
        adv_rng = derive_trial_rng(cfg.base_seed, trial_index, "adversary")
        self._count(1)
        output, release = self.privatize(self.corpus[cset.target], mech_rng)
        try:
            guess = self.guess(output, cset, adv_rng, release)
        except TrialError as err:
            err.trial_index = trial_index
            raise
        return TrialOutcome(trial_index, cset.members, cset.target_position, output,
                            guess, guess == cset.target_position, cfg.base_seed)

    def symmetric_trial(self, trial_index: int, members) -> TrialOutcome:
        """TP experiment privatizes member 0, FP experiment member 1; both ask for member 0."""
        cfg = self.config
        pair = tuple(members)
        mech_rng = derive_trial_rng(cfg.base_seed, trial_index, "mechanism")
        adv_rng = derive_trial_rng(cfg.base_seed, trial_index, "adversary")
        tp_set = CandidateSet(pair, 0)
        fp_set = CandidateSet(pair, 1)
        self._count(2)
        out_tp, rel_tp = self.privatize(self.corpus[pair[0]], mech_rng)
        out_fp, rel_fp = self.privatize(self.corpus[pair[1]], mech_rng.fork(1))
        try:
            guess_tp = self.guess(out_tp, tp_set, adv_rng, rel_tp)
            guess_fp = self.guess(out_fp, fp_set, adv_rng.fork(1), rel_fp)
        except TrialError as err:
            err.trial_index = trial_index
            raise
        return TrialOutcome(trial_index, pair, 0, out_tp, guess_tp, guess_tp == 0,
                            cfg.base_seed, fp_output_record=out_fp,
                            fp_guess_position=guess_fp, false_positive=guess_fp == 0)

    def sample(self, trial_indices: np.ndarray):
        cfg = self.config
        return sample_trial_sets(len(self.corpus), cfg.k, cfg.lam, self.cache,
                                 cfg.base_seed, trial_indices)

    def run_chunk(self, trial_indices: np.ndarray, symmetric: bool) -> _ChunkResult:
        members, targets = self.sample(trial_indices)
        outcomes: list[TrialOutcome] = []
        failures: list[TrialFailure] = []
        for row, t in enumerate(trial_indices.tolist()):
            try:
                if symmetric:
                    outcomes.append(self.symmetric_trial(t, members[row].tolist()))
                else:
                    outcomes.append(self.efficient_trial(t, members[row].tolist(), targets[row]))
            except TrialError as err:
                failures.append(TrialFailure(t, str(err)))
        return _ChunkResult(outcomes, failures)


@dataclasses.dataclass
class _ChunkResult:
    outcomes: list[TrialOutcome]
    failures: list[TrialFailure]


def run_trial(config: AuditConfig, corpus: Corpus, caches: AuditContext | None,
              trial_index: int) -> TrialOutcome:
    """One trial, identical to the same trial inside a full audit.

    ``caches`` is an :class:`AuditContext` to reuse; ``None`` builds one.
    """
    if not 0 <= trial_index < config.trials:
        raise ValueError(f"trial_index must be in [0, {config.trials})")
    ctx = caches if caches is not None else AuditContext(config, corpus)
    members, targets = ctx.sample(np.array([trial_index]))
    if config.estimator_mode == "symmetric-baseline":
        return ctx.symmetric_trial(trial_index, members[0].tolist())
    return ctx.efficient_trial(trial_index, members[0].tolist(), targets[0])


def _execute(config: AuditConfig, corpus: Corpus, symmetric: bool, workers: int | None,
             context: AuditContext | None) -> AuditResult:
    start = time.perf_counter()
    ctx = context if context is not None else AuditContext(config, corpus)
    budget = failure_budget(config)
    chunks = [np.arange(lo, min(lo + config.chunk_size, config.trials))
              for lo in range(0, config.trials, config.chunk_size)]
    workers = default_workers() if workers is None else max(1, int(workers))

    log: list[TrialOutcome] = []
    failures: list[TrialFailure] = []
    tp = fp = completed = 0

    def absorb(res: _ChunkResult) -> None:
        nonlocal tp, fp, completed
        for o in res.outcomes:
            tp += o.success
            if symmetric:
                fp += o.false_positive
            if len(log) < config.log_cap:
                log.append(o)
        completed += len(res.outcomes)
        failures.extend(res.failures)

    def over_budget() -> bool:
        return len(failures) > budget

    if workers == 1 or len(chunks) == 1:
        for c in chunks:
            absorb(ctx.run_chunk(c, symmetric))
            if over_budget():
                break
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(ctx.run_chunk, c, symmetric) for c in chunks]
            # consume in trial order so the retained log is the first log_cap trials
            for fut in futures:
                absorb(fut.result())
                if over_budget():
                    for f in futures:
                        f.cancel()
                    break

    if over_budget():
        raise AuditError(
            f"{len(failures)} failed trials exceed the failure budget of {budget}",
            log, failures)
    if completed == 0:
        raise AuditError("no trial completed", log, failures)

    cfg = config
    if symmetric:
        summary = summarize_symmetric(tp, fp, completed, cfg.alpha_conf, cfg.delta)
    else:
        summary = summarize(tp, completed, cfg.k, cfg.alpha_conf, cfg.delta)
    echo = cfg.to_dict()
    echo["failure_budget"] = budget
    echo["failure_policy"] = "failed trials excluded from both successes and trials"
    return AuditResult(
        summary=summary,
        trial_log=tuple(log) if cfg.log_cap > 0 else None,
        wall_time=time.perf_counter() - start,
        config_echo=echo,
        mechanism_queries=ctx.mechanism_queries,
        failed_trials=tuple(failures),
        log_truncated=completed > len(log),
    )


def run_audit(config: AuditConfig, corpus: Corpus, workers: int | None = 1,
              context: AuditContext | None = None) -> AuditResult:
    """Efficient audit (or the symmetric baseline if the config asks for it)."""
    if config.estimator_mode == "symmetric-baseline":
        return run_symmetric_audit(config, corpus, workers, context)
    return _execute(config, corpus, False, workers, context)


def run_symmetric_audit(config: AuditConfig, corpus: Corpus, workers: int | None = 1,
                        context: AuditContext | None = None) -> AuditResult:
    if config.estimator_mode != "symmetric-baseline":
        raise ValueError("run_symmetric_audit needs estimator_mode='symmetric-baseline'")
    return _execute(config, corpus, True, workers, context)


@dataclasses.dataclass(frozen=True)
class SweepCell:
    epsilon: float
    result: AuditResult | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def run_sweep(base_config: AuditConfig, epsilon_grid: Sequence[float], corpus: Corpus,
              workers: int | None = 1, distance_cache: DistanceCache | None = None
              ) -> list[SweepCell]:
    """One audit per budget; cell ``i`` uses seed ``base_seed + i``.

    A failing cell is recorded with its error and the sweep moves on.
    """
    grid = [float(e) for e in epsilon_grid]
    if not grid:
        raise ValueError("epsilon grid is empty")
    if any(not e > 0 for e in grid):
        raise ValueError("epsilon grid values must be > 0")
    cache = distance_cache
    if cache is None and base_config.lam != 0.0:
        cache = DistanceCache.from_corpus(corpus, sampling_table(base_config, corpus))
    cells = []
    for i, eps in enumerate(grid):
        mech = dataclasses.replace(base_config.mechanism, epsilon=eps)
        cfg = dataclasses.replace(base_config, mechanism=mech, base_seed=base_config.base_seed + i)
        try:
            ctx = AuditContext(cfg, corpus, distance_cache=cache)
            cells.append(SweepCell(eps, run_audit(cfg, corpus, workers, ctx)))
        except (AuditError, TrialError, ValueError) as err:
            cells.append(SweepCell(eps, None, f"{type(err).__name__}: {err}"))
    return cells
