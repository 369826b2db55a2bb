"""Empirical privacy auditing of local differential privacy text mechanisms."""
__version__ = "0.1.0"

from .adversaries import AdversarySpec, RemoteJudgeConfig
from .core import AuditConfig, Corpus, EmbeddingTable, RngStream, TextRecord, derive_trial_rng
from .engine import AuditError, AuditResult, TrialOutcome, run_audit, run_sweep, \
    run_symmetric_audit, run_trial
from .estimation import EstimateSummary, ceiling, clopper_pearson_lower, epsilon_emp, \
    symmetric_baseline_estimate
from .mechanisms import GrrParams, MechanismSpec, TokenEmParams, VectorNoiseParams

__all__ = [
    "AdversarySpec", "AuditConfig", "AuditError", "AuditResult", "Corpus", "EmbeddingTable",
    "EstimateSummary", "GrrParams", "MechanismSpec", "RemoteJudgeConfig", "RngStream",
    "TextRecord", "TokenEmParams", "TrialOutcome", "VectorNoiseParams", "ceiling",
    "clopper_pearson_lower", "derive_trial_rng", "epsilon_emp", "run_audit", "run_sweep",
    "run_symmetric_audit", "run_trial", "symmetric_baseline_estimate",
]
