"""Candidate sets under the three sampling temperatures.

Negative lambda builds sets of mutually distant records, zero samples
uniformly, positive lambda builds sets of near neighbours.  Harder sets
(similar candidates) make attribution harder and eps_emp smaller.
"""
import numpy as np

from textdp_audit.sampling import DistanceCache, sample_trial_sets

rng = np.random.default_rng(0)
# three tight clusters of four records each
centres = rng.standard_normal((3, 8)) * 3
vectors = np.concatenate([c + 0.3 * rng.standard_normal((4, 8)) for c in centres])
cluster = np.repeat(np.arange(3), 4)
cache = DistanceCache(vectors)

for lam in (-10_000.0, -1.0, 0.0, 1.0, 10_000.0):
    members, _ = sample_trial_sets(12, 3, lam, cache, base_seed=1, trial_indices=np.arange(20_000))
    same = (cluster[members] == cluster[members[:, :1]]).all(axis=1).mean()
    spread = np.mean([cache.matrix[np.ix_(m, m)].sum() / 6 for m in members[:2000]])
    print(f"lambda={lam:>9}: all three from one cluster {same:6.3f}, "
          f"mean pairwise distance {spread:.3f}")
