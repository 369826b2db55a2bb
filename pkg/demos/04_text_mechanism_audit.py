"""Auditing text rewriting: a token-level and a sentence-level mechanism.

The corpus and embeddings are synthetic so the script runs anywhere.  The
token mechanism's nominal budget is per token; the last column converts it
to a sentence budget by basic composition, which is what a fair comparison
with the sentence-level mechanism needs.
"""
import numpy as np

from textdp_audit import (AdversarySpec, AuditConfig, Corpus, MechanismSpec, TextRecord,
                          TokenEmParams, VectorNoiseParams)
from textdp_audit.engine import run_audit
from textdp_audit.io import synthetic_embeddings
from textdp_audit.mechanisms import sentence_budget, snr

rng = np.random.default_rng(3)
table = synthetic_embeddings(200, 32, seed=3)
corpus = Corpus(tuple(TextRecord(i, tuple(rng.choice(200, size=8, replace=False)))
                      for i in range(300)))
n_tokens = corpus.mean_tokens


def audit(mechanism, adversary, trials=5_000):
    cfg = AuditConfig(mechanism, adversary, k=2, trials=trials, base_seed=11)
    return run_audit(cfg, corpus, workers=4).summary


embed = AdversarySpec("embedding_nn", embedding=table)
surface = AdversarySpec("surface_overlap")

print("token exponential mechanism")
print(f"{'eps/token':>9} {'embedding':>10} {'surface':>8} {'eps/sentence':>13}")
for eps in (1.0, 4.0, 16.0, 64.0):
    mech = MechanismSpec("token_em", eps, TokenEmParams(table))
    e_emb = audit(mech, embed).epsilon_emp
    e_sur = audit(mech, surface).epsilon_emp
    print(f"{eps:9.1f} {e_emb:10.4f} {e_sur:8.4f} {sentence_budget(eps, n_tokens):13.1f}")

print("\nsentence-embedding noise (laplace), decoded to the nearest corpus sentence")
print(f"{'eps':>7} {'snr':>7} {'decoded':>8} {'latent':>8}")
params = VectorNoiseParams(table, clip_norm=1.0)
for eps in (10.0, 100.0, 400.0, 1600.0):
    mech = MechanismSpec("vector_noise", eps, params)
    e_dec = audit(mech, embed, 2_000).epsilon_emp
    e_lat = audit(mech, AdversarySpec("internal_embedding"), 2_000).epsilon_emp
    print(f"{eps:7.0f} {snr(params, eps):7.3f} {e_dec:8.4f} {e_lat:8.4f}")
