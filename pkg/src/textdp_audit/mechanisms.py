"""Small LDP mechanisms with analytically known guarantees.

Three families are covered: generalized randomized response over a finite
value domain, per-token exponential-mechanism rewriting over an embedding
vocabulary, and sentence-embedding noise (clip, add Laplace or Gaussian
noise, decode to the nearest corpus sentence).  Every mechanism exposes
``perturb(record, rng) -> TextRecord``; the audit engine uses nothing else.
"""
from __future__ import annotations

import dataclasses
import functools
import math
from typing import Any

import numpy as np
from scipy import integrate, special

from .core import Corpus, EmbeddingTable, RngStream, TextRecord

KINDS = ("grr", "token_em", "vector_noise", "identity", "constant")
GRANULARITY = {
    "grr": "value",
    "token_em": "token",
    "vector_noise": "sentence",
    "identity": "sentence",
    "constant": "sentence",
}
NOISE_FAMILIES = ("laplace_vector", "gaussian")


@dataclasses.dataclass(frozen=True)
class GrrParams:
    domain_size: int

    def __post_init__(self):
        if self.domain_size < 2:
            raise ValueError(f"GRR domain size must be >= 2, got {self.domain_size}")


@dataclasses.dataclass(frozen=True, eq=False)
class TokenEmParams:
    """Exponential-mechanism token rewriting.

    ``sensitivity=None`` uses the largest distance that occurs inside the
    candidate pools.  ``candidate_pool=None`` scores the full vocabulary;
    an integer restricts each token to its that-many nearest neighbours
    (itself included), which no longer gives a uniform guarantee across
    inputs.
    """

    embedding: EmbeddingTable
    sensitivity: float | None = None
    candidate_pool: int | None = None

    def __post_init__(self):
        if self.sensitivity is not None and not self.sensitivity > 0:
            raise ValueError("sensitivity must be > 0")
        if self.candidate_pool is not None and not 1 <= self.candidate_pool <= self.embedding.size:
            raise ValueError("candidate_pool must be in [1, vocabulary size]")


@dataclasses.dataclass(frozen=True, eq=False)
class VectorNoiseParams:
    embedding: EmbeddingTable
    clip_norm: float = 1.0
    noise_family: str = "laplace_vector"
    delta_mech: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.clip_norm) and self.clip_norm > 0):
            raise ValueError("clip_norm must be finite and > 0")
        if self.noise_family not in NOISE_FAMILIES:
            raise ValueError(f"noise_family must be one of {NOISE_FAMILIES}")
        if self.noise_family == "gaussian" and not 0.0 < self.delta_mech < 1.0:
            raise ValueError("gaussian noise requires delta_mech in (0, 1)")


@dataclasses.dataclass(frozen=True, eq=False)
class MechanismSpec:
    kind: str
    epsilon: float
    params: Any = None
    granularity: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mechanism kind {self.kind!r}; expected one of {KINDS}")
        # token rewriting at zero budget is uniform and still well defined;
        # the reference mechanisms carry their nominal budget only as a label
        floor_ok = self.kind in ("token_em", "identity", "constant")
        if not (self.epsilon > 0 or (floor_ok and self.epsilon == 0)):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        expected = GRANULARITY[self.kind]
        if self.granularity is None:
            object.__setattr__(self, "granularity", expected)
        elif self.granularity != expected:
            raise ValueError(f"{self.kind} has {expected} granularity, not {self.granularity}")
        wanted = {"grr": GrrParams, "token_em": TokenEmParams,
                  "vector_noise": VectorNoiseParams}.get(self.kind)
        if wanted is not None and not isinstance(self.params, wanted):
            raise ValueError(f"{self.kind} needs {wanted.__name__}")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "epsilon": self.epsilon,
                               "granularity": self.granularity}
        p = self.params
        if isinstance(p, GrrParams):
            out["params"] = {"domain_size": p.domain_size}
        elif isinstance(p, TokenEmParams):
            out["params"] = {"embedding": p.embedding.source_path,
                             "sensitivity": p.sensitivity,
                             "candidate_pool": p.candidate_pool}
        elif isinstance(p, VectorNoiseParams):
            out["params"] = {"embedding": p.embedding.source_path,
                             "clip_norm": p.clip_norm,
                             "noise_family": p.noise_family,
                             "delta_mech": p.delta_mech}
        return out


# ---------------------------------------------------------------------------
# Generalized randomized response
# ---------------------------------------------------------------------------


def grr_keep_probability(epsilon: float, domain_size: int) -> float:
    if math.isinf(epsilon):
        return 1.0
    # e^eps / (e^eps + g - 1), written to stay finite for large eps.
    return 1.0 / (1.0 + (domain_size - 1) * math.exp(-epsilon))


def grr_distribution(value: int, domain_size: int, epsilon: float) -> np.ndarray:
    p = grr_keep_probability(epsilon, domain_size)
    dist = np.full(domain_size, (1.0 - p) / (domain_size - 1))
    dist[value] = p
    return dist


def grr_perturb(value: int, params: GrrParams, epsilon: float, rng: RngStream) -> int:
    """Keep ``value`` with probability e^eps/(e^eps+g-1), else a uniform other value.

    Draw 0 decides keep/replace, draw 1 picks the replacement.
    """
    g = params.domain_size
    if not 0 <= value < g:
        raise ValueError(f"value {value} outside GRR domain [0, {g})")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    u_keep, u_other = rng.uniforms(2)
    if u_keep < grr_keep_probability(epsilon, g):
        return value
    other = min(int(u_other * (g - 1)), g - 2)
    return other if other < value else other + 1


def grr_value(record: TextRecord, domain_size: int) -> int:
    """GRR input value of a corpus record: its id modulo the domain size."""
    return record.id % domain_size


class GrrMechanism:
    def __init__(self, params: GrrParams, epsilon: float):
        self.params = params
        self.epsilon = epsilon

    def perturb(self, record: TextRecord, rng: RngStream) -> TextRecord:
        z = grr_perturb(grr_value(record, self.params.domain_size), self.params,
                        self.epsilon, rng)
        return TextRecord(-1, (z,), str(z))


# ---------------------------------------------------------------------------
# Exponential-mechanism token rewriting
# ---------------------------------------------------------------------------


def cosine_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 - cos between rows, clipped to [0, 2]; zero rows sit at distance 1."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ua = np.divide(a, na[:, None], out=np.zeros_like(a, dtype=np.float64), where=na[:, None] > 0)
    ub = np.divide(b, nb[:, None], out=np.zeros_like(b, dtype=np.float64), where=nb[:, None] > 0)
    return np.clip(1.0 - ua @ ub.T, 0.0, 2.0)


class TokenEmMechanism:
    """Replace each token t by w with probability proportional to exp(-eps d(t,w) / (2 sensitivity))."""

    def __init__(self, params: TokenEmParams, epsilon_per_token: float):
        if epsilon_per_token < 0:
            raise ValueError("epsilon_per_token must be >= 0")
        self.params = params
        self.epsilon = epsilon_per_token
        table = params.embedding
        self._dist = cosine_distance_matrix(table.vectors, table.vectors)
        np.fill_diagonal(self._dist, 0.0)
        m = params.candidate_pool
        if m is None or m >= table.size:
            self._pools = None
            pool_max = float(self._dist.max())
        else:
            # stable sort keeps lower ids first among equal distances
            order = np.argsort(self._dist, axis=1, kind="stable")[:, :m]
            self._pools = order
            pool_max = float(np.take_along_axis(self._dist, order, axis=1).max())
        if params.sensitivity is None:
            self.sensitivity = pool_max if pool_max > 0 else 1.0
        else:
            if params.sensitivity < pool_max - 1e-12:
                raise ValueError(
                    f"sensitivity {params.sensitivity} is below the largest pool distance {pool_max}")
            self.sensitivity = params.sensitivity
        self._cdf_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def pool(self, token: int) -> np.ndarray:
        if self._pools is None:
            return np.arange(self.params.embedding.size)
        return self._pools[token]

    def probabilities(self, token: int) -> tuple[np.ndarray, np.ndarray]:
        """(candidate ids, selection probabilities) for one input token."""
        pool = self.pool(token)
        logits = -self.epsilon * self._dist[token, pool] / (2.0 * self.sensitivity)
        w = np.exp(logits - logits.max())
        return pool, w / w.sum()

    def _cdf(self, token: int) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cdf_cache.get(token)
        if hit is None:
            pool, p = self.probabilities(token)
            cdf = np.cumsum(p)
            cdf[-1] = 1.0
            hit = (pool, cdf)
            self._cdf_cache[token] = hit
        return hit

    def rewrite_tokens(self, tokens, rng: RngStream) -> tuple[int, ...]:
        if len(tokens) == 0:
            return ()
        u = rng.uniforms(len(tokens))
        out = []
        for t, ui in zip(tokens, u):
            pool, cdf = self._cdf(int(t))
            out.append(int(pool[np.searchsorted(cdf, ui, side="right")]))
        return tuple(out)

    def perturb(self, record: TextRecord, rng: RngStream) -> TextRecord:
        vocab = self.params.embedding.vocab
        tokens = self.rewrite_tokens(record.tokens, rng)
        raw = " ".join(vocab[t] for t in tokens) if vocab is not None else None
        return TextRecord(-1, tokens, raw)


def em_token_rewrite(record: TextRecord, params: TokenEmParams, epsilon_per_token: float,
                     rng: RngStream) -> TextRecord:
    return TokenEmMechanism(params, epsilon_per_token).perturb(record, rng)


def sentence_budget(epsilon_per_token: float, token_count: int) -> float:
    """Sentence-level budget of a token-level mechanism under basic composition."""
    if token_count < 0:
        raise ValueError("token_count must be >= 0")
    return epsilon_per_token * token_count


# ---------------------------------------------------------------------------
# Sentence-embedding noise
# ---------------------------------------------------------------------------


def clip_l2(vector: np.ndarray, clip_norm: float) -> np.ndarray:
    """Project onto the L2 ball of radius ``clip_norm``."""
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= clip_norm:
        return v.copy()
    return v * (clip_norm / norm)


def laplace_scale(clip_norm: float, dim: int, epsilon: float) -> float:
    # L1 diameter of the radius-C L2 ball is 2C*sqrt(dim).
    return 2.0 * clip_norm * math.sqrt(dim) / epsilon


def gaussian_sigma(clip_norm: float, epsilon: float, delta_mech: float) -> float:
    return math.sqrt(2.0 * math.log(1.25 / delta_mech)) * 2.0 * clip_norm / epsilon


def noise_scale(params: VectorNoiseParams, epsilon: float) -> float:
    dim = params.embedding.dim
    if params.noise_family == "laplace_vector":
        return laplace_scale(params.clip_norm, dim, epsilon)
    return gaussian_sigma(params.clip_norm, epsilon, params.delta_mech)


@functools.lru_cache(maxsize=None)
def unit_laplace_norm_mean(dim: int) -> float:
    """E||X|| for X with ``dim`` i.i.d. Laplace(0, 1) coordinates.

    Uses E[sqrt(S)] = (1 / (2 sqrt(pi))) * int_0^inf (1 - E[exp(-tS)]) t^(-3/2) dt
    with S = ||X||^2 and the per-coordinate transform
    E[exp(-t x^2)] = sqrt(pi / (4t)) * erfcx(1 / (2 sqrt(t))).
    """
    # integrate over x = ln t, where the integrand is smooth and bell-shaped
    def integrand(x: float) -> float:
        t = math.exp(x)
        if t < 1e-4:
            # moment series; E[x^(2n)] = (2n)! for unit Laplace
            log_m = math.log1p(t * (-2.0 + t * (12.0 + t * (-120.0 + t * 1680.0))))
        else:
            log_m = math.log(math.sqrt(math.pi / (4.0 * t)) * special.erfcx(0.5 / math.sqrt(t)))
        return -math.expm1(dim * log_m) / math.sqrt(t)

    centre = -math.log(dim)
    lo, hi = centre - 40.0, centre + 40.0
    total, _ = integrate.quad(integrand, lo, hi, points=[centre],
                              limit=500, epsabs=0.0, epsrel=1e-11)
    # tails: integrand ~ 2 dim sqrt(t) below lo and ~ 1 / sqrt(t) above hi
    total += 4.0 * dim * math.exp(lo / 2.0) + 2.0 * math.exp(-hi / 2.0)
    return total / (2.0 * math.sqrt(math.pi))


def expected_noise_norm(params: VectorNoiseParams, epsilon: float) -> float:
    dim = params.embedding.dim
    scale = noise_scale(params, epsilon)
    if params.noise_family == "laplace_vector":
        return scale * unit_laplace_norm_mean(dim)
    # chi distribution mean
    return scale * math.sqrt(2.0) * math.exp(special.gammaln((dim + 1) / 2) - special.gammaln(dim / 2))


def snr(params: VectorNoiseParams, epsilon: float) -> float:
    """Clip norm over expected L2 noise norm."""
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    return params.clip_norm / expected_noise_norm(params, epsilon)


def sample_noise(params: VectorNoiseParams, epsilon: float, rng: RngStream) -> np.ndarray:
    """Noise vector from draws 0..dim-1 by inverse CDF."""
    dim = params.embedding.dim
    u = rng.uniforms(dim)
    scale = noise_scale(params, epsilon)
    if params.noise_family == "laplace_vector":
        centred = u - 0.5
        return -scale * np.sign(centred) * np.log1p(-2.0 * np.abs(centred))
    return scale * special.ndtri(u)


@dataclasses.dataclass(frozen=True)
class LatentRelease:
    output: TextRecord
    clean_latent: np.ndarray
    noised_latent: np.ndarray


class VectorNoiseMechanism:
    """Clip the sentence embedding, add noise, decode to the nearest corpus sentence (L2)."""

    def __init__(self, params: VectorNoiseParams, epsilon: float, corpus: Corpus):
        self.params = params
        self.epsilon = epsilon
        self.corpus = corpus
        raw = corpus.sentence_matrix(params.embedding)
        self.latents = np.stack([clip_l2(v, params.clip_norm) for v in raw])

    def latent_of(self, record: TextRecord) -> np.ndarray:
        if record.id >= 0 and record.id < len(self.corpus) and \
                self.corpus[record.id].tokens == record.tokens:
            return self.latents[record.id]
        return clip_l2(self.params.embedding.sentence_embedding(record.tokens),
                       self.params.clip_norm)

    def decode(self, latent: np.ndarray) -> TextRecord:
        d2 = ((self.latents - latent) ** 2).sum(axis=1)
        return self.corpus[int(np.argmin(d2))]

    def release(self, record: TextRecord, rng: RngStream) -> LatentRelease:
        if not record.tokens:
            raise ValueError("vector mechanism needs a non-empty input")
        clean = self.latent_of(record)
        noised = clean + sample_noise(self.params, self.epsilon, rng)
        return LatentRelease(self.decode(noised), clean, noised)

    def perturb(self, record: TextRecord, rng: RngStream) -> TextRecord:
        return self.release(record, rng).output


def vector_mechanism(record: TextRecord, params: VectorNoiseParams, epsilon: float,
                     rng: RngStream, corpus: Corpus) -> TextRecord:
    return VectorNoiseMechanism(params, epsilon, corpus).perturb(record, rng)


# ---------------------------------------------------------------------------
# Reference mechanisms without privacy
# ---------------------------------------------------------------------------


class IdentityMechanism:
    epsilon = math.inf

    def perturb(self, record: TextRecord, rng: RngStream) -> TextRecord:
        return record


class ConstantMechanism:
    """Releases the same (empty) record whatever the input."""

    epsilon = 0.0

    def __init__(self, output: TextRecord | None = None):
        self.output = output if output is not None else TextRecord(-1, (), "")

    def perturb(self, record: TextRecord, rng: RngStream) -> TextRecord:
        return self.output


def build_mechanism(spec: MechanismSpec, corpus: Corpus):
    if spec.kind == "grr":
        return GrrMechanism(spec.params, spec.epsilon)
    if spec.kind == "token_em":
        corpus.validate_against(spec.params.embedding)
        return TokenEmMechanism(spec.params, spec.epsilon)
    if spec.kind == "vector_noise":
        return VectorNoiseMechanism(spec.params, spec.epsilon, corpus)
    if spec.kind == "identity":
        return IdentityMechanism()
    return ConstantMechanism()
