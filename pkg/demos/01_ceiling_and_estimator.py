"""How many trials does an audit need before it can certify a given epsilon?

With T trials the best possible outcome is T successes, whose exact lower
confidence bound is alpha^(1/T).  That caps eps_emp however leaky the
mechanism is.
"""
import math

from textdp_audit.estimation import ceiling, clopper_pearson_lower, epsilon_emp

print("ceiling on eps_emp (alpha = 0.005, delta = 0)")
print(f"{'trials':>10} {'k=2':>8} {'k=4':>8} {'k=16':>8}")
for trials in (100, 1_000, 10_000, 100_000, 1_000_000):
    row = [ceiling(k, trials) for k in (2, 4, 16)]
    print(f"{trials:>10} " + " ".join(f"{v:8.4f}" for v in row))

# Larger candidate sets shift the ceiling by ln(k - 1): chance is 1/k, so the
# same success rate carries more evidence.
print(f"\nk=4 minus k=2 at T=10^4: {ceiling(4, 10_000) - ceiling(2, 10_000):.6f}"
      f" (ln 3 = {math.log(3):.6f})")

print("\nobserved success rate -> eps_emp at T = 10^4, k = 2")
for rate in (0.5, 0.6, 0.73, 0.88, 0.98, 1.0):
    s = round(rate * 10_000)
    p_lower = clopper_pearson_lower(s, 10_000)
    print(f"  {rate:5.2f}  p_lower={p_lower:.5f}  eps_emp={epsilon_emp(p_lower, 2):.4f}")
