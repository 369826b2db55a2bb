"""Independent reference computations used to freeze expected values."""
import math

from scipy import stats


def upper_tail(n, p, s):
    """P[X >= s] for X ~ Binomial(n, p), via scipy's survival function."""
    return float(stats.binom.sf(s - 1, n, p))


def bisect_lower_bound(s, n, alpha, iters=200):
    """Clopper-Pearson lower bound by plain bisection on scipy's binomial tail."""
    if s == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if upper_tail(n, mid, s) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def grr_map_success(eps):
    """Success probability of the MAP attack on binary randomized response, k = 2."""
    return math.exp(eps) / (1.0 + math.exp(eps))
