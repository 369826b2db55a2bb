"""Exact binomial confidence bounds and empirical privacy-loss estimators.

The efficient estimator only needs the number of successful attributions:

    eps_emp = ln((k - 1) * (p_lower - delta) / (1 - p_lower))

where ``p_lower`` is the one-sided Clopper-Pearson lower bound on the attack
success probability.  The symmetric baseline tracks true and false positives
separately and needs twice as many mechanism queries.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import gammaln

DEFAULT_ALPHA = 0.005


@dataclasses.dataclass(frozen=True)
class EstimateSummary:
    tp_count: int
    trials: int
    p_lower: float
    epsilon_emp: float
    ceiling: float
    k: int
    alpha_conf: float
    delta: float
    mode: str = "efficient"
    fp_count: int | None = None
    fp_upper: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> EstimateSummary:
        return cls(**data)


def _check_counts(successes: int, trials: int, alpha: float) -> None:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes must be in [0, {trials}], got {successes}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")


def log_binomial_upper_tail(trials: int, p: float, successes: int) -> float:
    """ln P[X >= successes] for X ~ Binomial(trials, p), summed in log space."""
    if successes <= 0:
        return 0.0
    if successes > trials:
        return -math.inf
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return 0.0
    j = np.arange(successes, trials + 1, dtype=np.float64)
    log_terms = (gammaln(trials + 1.0) - gammaln(j + 1.0) - gammaln(trials - j + 1.0)
                 + j * math.log(p) + (trials - j) * math.log1p(-p))
    top = log_terms.max()
    return float(top + math.log(np.exp(log_terms - top).sum()))


def binomial_upper_tail(trials: int, p: float, successes: int) -> float:
    return math.exp(log_binomial_upper_tail(trials, p, successes))


def clopper_pearson_lower(successes: int, trials: int, alpha: float = DEFAULT_ALPHA) -> float:
    """One-sided exact lower bound p_L with P[X >= successes | p_L] = alpha.

    Found by bisection on the tail, which is increasing in p.  Returns 0 when
    there are no successes.
    """
    _check_counts(successes, trials, alpha)
    if successes == 0:
        return 0.0
    log_alpha = math.log(alpha)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if log_binomial_upper_tail(trials, mid, successes) < log_alpha:
            lo = mid
        else:
            hi = mid
    # Both endpoints bracket the root to within one ulp; take the closer one.
    t_lo = math.exp(log_binomial_upper_tail(trials, lo, successes))
    t_hi = math.exp(log_binomial_upper_tail(trials, hi, successes))
    return lo if abs(t_lo - alpha) <= abs(t_hi - alpha) else hi


def clopper_pearson_upper(successes: int, trials: int, alpha: float = DEFAULT_ALPHA) -> float:
    """One-sided exact upper bound p_U with P[X <= successes | p_U] = alpha."""
    _check_counts(successes, trials, alpha)
    return 1.0 - clopper_pearson_lower(trials - successes, trials, alpha)


def epsilon_emp(p_lower: float, k: int, delta: float = 0.0) -> float:
    """Empirical epsilon from a lower bound on the success probability, clamped at 0."""
    if not 0.0 <= p_lower < 1.0:
        raise ValueError(f"p_lower must be in [0, 1), got {p_lower}")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    num = (k - 1) * (p_lower - delta)
    den = 1.0 - p_lower
    if p_lower <= delta or num <= den:
        return 0.0
    return math.log(num) - math.log(den)


def ceiling(k: int, trials: int, alpha: float = DEFAULT_ALPHA, delta: float = 0.0) -> float:
    """Largest attainable eps_emp at (k, T, alpha, delta): every trial succeeds."""
    return epsilon_emp(clopper_pearson_lower(trials, trials, alpha), k, delta)


def symmetric_baseline_estimate(tp_successes: int, tp_trials: int,
                                fp_successes: int, fp_trials: int,
                                alpha: float = DEFAULT_ALPHA, delta: float = 0.0) -> float:
    """max(0, ln((TP_lower - delta) / FP_upper)) from separate TP and FP counts."""
    tp_lower = clopper_pearson_lower(tp_successes, tp_trials, alpha)
    fp_upper = clopper_pearson_upper(fp_successes, fp_trials, alpha)
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    if tp_lower <= delta or tp_lower - delta <= fp_upper:
        return 0.0
    return math.log(tp_lower - delta) - math.log(fp_upper)


def symmetric_ceiling(trials: int, alpha: float = DEFAULT_ALPHA, delta: float = 0.0) -> float:
    return symmetric_baseline_estimate(trials, trials, 0, trials, alpha, delta)


def summarize(tp_count: int, trials: int, k: int, alpha: float, delta: float) -> EstimateSummary:
    p_lower = clopper_pearson_lower(tp_count, trials, alpha)
    return EstimateSummary(
        tp_count=tp_count,
        trials=trials,
        p_lower=p_lower,
        epsilon_emp=epsilon_emp(p_lower, k, delta),
        ceiling=ceiling(k, trials, alpha, delta),
        k=k,
        alpha_conf=alpha,
        delta=delta,
        mode="efficient",
    )


def summarize_symmetric(tp_count: int, fp_count: int, trials: int,
                        alpha: float, delta: float) -> EstimateSummary:
    return EstimateSummary(
        tp_count=tp_count,
        trials=trials,
        p_lower=clopper_pearson_lower(tp_count, trials, alpha),
        epsilon_emp=symmetric_baseline_estimate(tp_count, trials, fp_count, trials, alpha, delta),
        ceiling=symmetric_ceiling(trials, alpha, delta),
        k=2,
        alpha_conf=alpha,
        delta=delta,
        mode="symmetric-baseline",
        fp_count=fp_count,
        fp_upper=clopper_pearson_upper(fp_count, trials, alpha),
    )
