"""Signal-to-noise ratio of clipped-embedding Laplace noise.

SNR is linear in epsilon and falls with the square root of the dimension
times the typical noise norm, so the budgets at which decoding moves from
noise-dominated to signal-dominated depend strongly on the embedding size.
"""
from textdp_audit.core import EmbeddingTable
from textdp_audit.mechanisms import VectorNoiseParams, expected_noise_norm, snr
import numpy as np

for dim in (16, 128, 768):
    params = VectorNoiseParams(EmbeddingTable(np.eye(2, dim)), clip_norm=1.0)
    print(f"dim={dim}")
    for eps in (250.0, 1000.0, 2500.0):
        print(f"  eps={eps:7.0f}  E|noise|={expected_noise_norm(params, eps):9.4f}"
              f"  snr={snr(params, eps):7.4f}")
    # budget at which the clipped signal and the noise have equal norm
    print(f"  snr = 1 at eps = {1.0 / snr(params, 1.0):.1f}")
