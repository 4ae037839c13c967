"""Relative entropy of particle samples against a reference density."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln


class DegenerateSamples(ValueError):
    pass


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    stderr: float
    method: str
    n: int
    k: int | None = None
    bins: int | None = None


class GaussianReference:
    """log of e^{-pi|x|^2}."""

    def __init__(self, dim: int):
        self.dim = dim

    def logpdf(self, x):
        x = np.atleast_2d(x)
        return -math.pi * np.einsum("ni,ni->n", x, x)


@lru_cache(maxsize=None)
def _sphere_lognorm(M: int, N: int) -> float:
    n = M + N
    return gammaln(n / 2) - gammaln(N / 2) - 0.5 * M * math.log(n * math.pi)


def sphere_reference_logdensity(M: int, N: int, v) -> np.ndarray:
    """Log-density of the v-marginal of the uniform measure on S^{M+N-1}(sqrt(M+N)).

    The density is proportional to (1 - |v|^2/(M+N))^{(N-2)/2}.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[1] != M:
        raise ValueError(f"expected points in R^{M}")
    r2 = np.einsum("ni,ni->n", v, v) / (M + N)
    if np.any(r2 >= 1):
        raise ValueError("|v|^2 must be below M+N")
    return _sphere_lognorm(M, N) + 0.5 * (N - 2) * np.log1p(-r2)


class SphereMarginalReference:
    def __init__(self, M: int, N: int):
        self.M, self.N, self.dim = M, N, M

    def logpdf(self, x):
        return sphere_reference_logdensity(self.M, self.N, x)


def _prepare(samples, max_dim=3):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    if d > max_dim:
        raise ValueError(f"entropy estimation is limited to dimension <= {max_dim}")
    return x, n, d


def _block_stderr(terms, blocks):
    means = np.array([b.mean() for b in np.array_split(terms, blocks)])
    return float(means.std(ddof=1) / math.sqrt(blocks))


def knn_entropy_terms(x: np.ndarray, k: int = 5):
    """Kozachenko-Leonenko differential entropy and its per-point terms."""
    n, d = x.shape
    dist, _ = cKDTree(x).query(x, k=k + 1)
    eps = dist[:, -1]
    if np.mean(eps == 0) > 0.01:
        raise DegenerateSamples("more than 1% of samples have a zero k-th neighbour distance")
    eps = np.where(eps == 0, np.min(eps[eps > 0]), eps)
    log_vd = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1)
    const = digamma(n) - digamma(k) + log_vd
    terms = d * np.log(eps)
    return const + terms.mean(), const, terms


def relative_entropy_knn(samples, reference, k: int = 5, blocks: int = 20) -> EntropyEstimate:
    """S = -H(samples) - mean log reference, with a kNN estimate of H.

    Standard error from the spread of per-point terms over non-overlapping
    blocks of the sample.
    """
    x, n, d = _prepare(samples)
    if np.unique(x, axis=0).shape[0] < 0.99 * n:
        raise DegenerateSamples("more than 1% duplicate samples")
    _, const, terms = knn_entropy_terms(x, k)
    per_point = -terms - reference.logpdf(x)
    value = -const + per_point.mean()
    return EntropyEstimate(float(value), _block_stderr(per_point, blocks), "knn", n, k=k)


def relative_entropy_histogram(samples, reference, bins: int | None = None, blocks: int = 20) -> EntropyEstimate:
    """Plug-in histogram estimate; a cross-check for the kNN estimator."""
    x, n, d = _prepare(samples)
    if bins is None:
        bins = max(10, int(round(n ** (1.0 / (d + 2)))))
    counts, edges = np.histogramdd(x, bins=bins)
    vol = np.ones_like(counts)
    for k, e in enumerate(edges):
        shape = [1] * d
        shape[k] = len(e) - 1
        vol = vol * np.diff(e).reshape(shape)
    dens = counts / (n * vol)
    idx = tuple(
        np.clip(np.searchsorted(e, x[:, k], side="right") - 1, 0, len(e) - 2)
        for k, e in enumerate(edges)
    )
    per_point = np.log(dens[idx]) - reference.logpdf(x)
    return EntropyEstimate(float(per_point.mean()), _block_stderr(per_point, blocks), "histogram", n, bins=bins)
