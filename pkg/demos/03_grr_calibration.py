"""Calibration curve for randomized response, where the answer is known.

Binary GRR with the MAP attack succeeds with probability e^eps / (1 + e^eps),
so eps_emp should sit just under the nominal budget until the trial count
caps it.  Any single cell may land above the nominal budget; the lower
bound allows that in at most alpha = 0.5% of audits (cell seeds are
base_seed + i, and the eps = 1 cell here is one such case).  Writes
grr_calibration.csv next to this script.
"""
from pathlib import Path

from textdp_audit import AdversarySpec, AuditConfig, Corpus, GrrParams, MechanismSpec, TextRecord
from textdp_audit.engine import run_sweep
from textdp_audit.io import write_sweep

corpus = Corpus((TextRecord(0, (0,), "yes"), TextRecord(1, (1,), "no")))
config = AuditConfig(MechanismSpec("grr", 1.0, GrrParams(2)),
                     AdversarySpec("value_map", domain_size=2),
                     trials=20_000, lam=0.0, base_seed=0)
grid = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
cells = run_sweep(config, grid, corpus, workers=4)

print(f"{'nominal':>8} {'eps_emp':>8} {'ceiling':>8}")
for cell in cells:
    s = cell.result.summary
    print(f"{cell.epsilon:8.2f} {s.epsilon_emp:8.4f} {s.ceiling:8.4f}")

out = Path(__file__).with_name("grr_calibration.csv")
write_sweep(cells, out)
print(f"\nwrote {out}")
