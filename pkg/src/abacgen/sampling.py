"""Seeded sampling of attribute-value indices under U / N / P distributions.

Random streams are numpy ``Generator`` objects over the counter-based Philox
bit generator. Each stream is keyed by ``blake2b(master_seed, stream_id)`` so
that every attribute draws from its own reproducible, independent sequence.

All index-returning functions use 1-based value indices.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import DegenerateTruncation, InvalidLambda, InvalidN
from .spec_model import NORMAL, POISSON, UNIFORM, DistributionSpec

BinMasses = np.ndarray

SEED_MASK = (1 << 64) - 1
# below this truncation mass rejection sampling is abandoned for inverse CDF
REJECTION_MIN_ACCEPTANCE = 0.01
_TINY_MASS = 1e-300


def derive_key(master_seed: int, stream_id: str) -> int:
    if not 0 <= master_seed <= SEED_MASK:
        raise ValueError(f"master seed must be a 64-bit unsigned integer, got {master_seed}")
    h = hashlib.blake2b(digest_size=16, person=b"abacgen-stream")
    h.update(master_seed.to_bytes(8, "little"))
    h.update(stream_id.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """A named, reproducible random stream derived from a master seed."""

    def __init__(self, master_seed: int, stream_id: str):
        self.master_seed = master_seed
        self.stream_id = stream_id
        self.generator = np.random.Generator(np.random.Philox(key=derive_key(master_seed, stream_id)))

    def random(self, size: int | None = None):
        return self.generator.random(size)

    def standard_normal(self, size: int | None = None):
        return self.generator.standard_normal(size)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id!r})"


# -- standard normal CDF ----------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def std_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def std_normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def _interval_mass(a: float, b: float) -> float:
    """P(a <= Z <= b) for a standard normal Z, computed on the accurate tail."""
    if a > 0.0:
        return std_normal_sf(a) - std_normal_sf(b)
    return std_normal_cdf(b) - std_normal_cdf(a)


def _check_n(n: int) -> None:
    if n < 1:
        raise InvalidN(f"value count must be >= 1, got {n}")


def _truncated_normal_raw(mu: float, variance: float, n: int) -> tuple[np.ndarray, float]:
    _check_n(n)
    if not variance > 0:
        raise DegenerateTruncation(f"variance must be > 0, got {variance}")
    sigma = math.sqrt(variance)
    z = [(k - mu) / sigma for k in range(n + 1)]
    raw = np.array([_interval_mass(z[k - 1], z[k]) for k in range(1, n + 1)])
    total = float(raw.sum())
    if not math.isfinite(total) or total < _TINY_MASS:
        raise DegenerateTruncation(
            f"normal(mean={mu}, variance={variance}) has no usable mass on [0, {n}]"
        )
    return raw, total


def truncated_normal_bin_masses(mu: float, variance: float, n: int) -> BinMasses:
    """Masses of the unit bins ``[k-1, k)`` of a normal truncated to ``[0, n]``."""
    raw, total = _truncated_normal_raw(mu, variance, n)
    return raw / total


def poisson_weights(lam: float, n: int) -> BinMasses:
    """Normalized ``lam**k / k!`` for ``k = 1..n`` (support starts at 1)."""
    _check_n(n)
    if not lam > 0 or not math.isfinite(lam):
        raise InvalidLambda(f"lambda must be a finite number > 0, got {lam}")
    w = np.empty(n)
    w[0] = 1.0
    for k in range(1, n):
        w[k] = w[k - 1] * lam / (k + 1)
        if w[k] > 1e250:
            w[: k + 1] /= w[k]
    w /= w.sum()
    return w


def uniform_masses(n: int) -> BinMasses:
    _check_n(n)
    return np.full(n, 1.0 / n)


def distribution_masses(dist: DistributionSpec, n: int) -> BinMasses:
    if dist.kind == UNIFORM:
        return uniform_masses(n)
    if dist.kind == NORMAL:
        return truncated_normal_bin_masses(dist.mean, dist.variance, n)
    if dist.kind == POISSON:
        return poisson_weights(dist.lam, n)
    raise ValueError(f"unknown distribution kind {dist.kind!r}")


def expected_counts(dist: DistributionSpec, n: int, population: int) -> np.ndarray:
    """Expected number of entities holding each of the ``n`` values."""
    if dist.kind == UNIFORM:
        _check_n(n)
        return np.full(n, population / n)
    return population * distribution_masses(dist, n)


# -- samplers ---------------------------------------------------------------

def _cdf(masses: BinMasses) -> np.ndarray:
    cdf = np.cumsum(masses)
    positive = np.flatnonzero(np.asarray(masses) > 0)
    cdf[positive[-1]:] = 1.0
    return cdf


def sample_categorical_indices(masses: BinMasses, rng: RngStream, size: int) -> np.ndarray:
    """Inverse-CDF sampling, one uniform draw per sample."""
    u = rng.random(size)
    return np.searchsorted(_cdf(masses), u, side="right") + 1


def sample_categorical(masses: BinMasses, rng: RngStream) -> int:
    return int(sample_categorical_indices(masses, rng, 1)[0])


def sample_uniform_indices(n: int, rng: RngStream, size: int) -> np.ndarray:
    _check_n(n)
    u = rng.random(size)
    return np.minimum((u * n).astype(np.int64), n - 1) + 1


def sample_uniform_index(n: int, rng: RngStream) -> int:
    return int(sample_uniform_indices(n, rng, 1)[0])


def sample_truncated_normal_indices(mu: float, variance: float, n: int, rng: RngStream, size: int) -> np.ndarray:
    """Draw ``x`` from the normal truncated to ``[0, n]`` and bin it.

    Rejection from the untruncated normal when the truncation keeps at least
    1% of the mass; otherwise inverse CDF over the truncated law's bins.
    """
    raw, acceptance = _truncated_normal_raw(mu, variance, n)
    if acceptance < REJECTION_MIN_ACCEPTANCE:
        return sample_categorical_indices(raw / acceptance, rng, size)
    sigma = math.sqrt(variance)
    out = np.empty(size, dtype=np.int64)
    filled = 0
    while filled < size:
        need = size - filled
        batch = int(need / acceptance * 1.05) + 16
        x = mu + sigma * rng.standard_normal(batch)
        x = x[(x >= 0.0) & (x <= n)][:need]
        # [k-1, k) -> k; x == n joins the last bin
        out[filled : filled + x.size] = np.minimum(np.floor(x).astype(np.int64) + 1, n)
        filled += x.size
    return out


def sample_truncated_normal_index(mu: float, variance: float, n: int, rng: RngStream) -> int:
    return int(sample_truncated_normal_indices(mu, variance, n, rng, 1)[0])


def sample_indices(dist: DistributionSpec, n: int, rng: RngStream, size: int) -> np.ndarray:
    """Sample ``size`` value indices in ``1..n`` from ``dist``."""
    if dist.kind == UNIFORM:
        return sample_uniform_indices(n, rng, size)
    if dist.kind == NORMAL:
        return sample_truncated_normal_indices(dist.mean, dist.variance, n, rng, size)
    if dist.kind == POISSON:
        return sample_categorical_indices(poisson_weights(dist.lam, n), rng, size)
    raise ValueError(f"unknown distribution kind {dist.kind!r}")
