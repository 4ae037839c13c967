"""History-averaged A^T A, its closed form, and the decay factors built on it."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import KacParams, collision_table


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class DecayCoefficients:
    P: np.ndarray
    ell1: float
    ell2: float
    eigvec1: np.ndarray
    eigvec2: np.ndarray
    M: int
    N: int

    def C(self, k: int) -> float:
        return self.M / (self.M + self.N) + self.N / (self.M + self.N) * self.ell2**k

    def d(self, k: int) -> float:
        """Reservoir-block coefficient, second component of P^k (1, 0)^T."""
        return self.M / (self.M + self.N) * (1.0 - self.ell2**k)

    def decomposition(self) -> tuple[float, np.ndarray]:
        """(1,0)^T = c * eigvec1 + eigvec2; returns (c, eigvec2)."""
        return self.M / (self.M + self.N), self.eigvec2


def closed_form_Ck(params: KacParams, k: int) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    M, N = params.M, params.N
    return M / (N + M) + N / (M + N) * params.ell2**k


def spectral_P(params: KacParams) -> DecayCoefficients:
    M, N = params.M, params.N
    g = params.mu_nu / (params.Lambda * N)
    P = np.eye(2) - g * np.array([[N, -N], [-M, M]], dtype=float)
    return DecayCoefficients(
        P=P,
        ell1=1.0,
        ell2=params.ell2,
        eigvec1=np.array([1.0, 1.0]),
        eigvec2=np.array([N, -M], dtype=float) / (M + N),
        M=M,
        N=N,
    )


def _expand(cols, weights, table):
    """Apply every tabulated collision to every prefix (left multiplication)."""
    I, J, C, S, W = table
    n, d, m = cols.shape
    q = len(W)
    out = np.repeat(cols[:, None], q, axis=1)  # (n, q, d, m)
    ar = np.arange(q)
    xi = cols[:, I, :]  # (n, q, m)
    xj = cols[:, J, :]
    out[:, ar, I, :] = xi * C[None, :, None] - xj * S[None, :, None]
    out[:, ar, J, :] = xi * S[None, :, None] + xj * C[None, :, None]
    return out.reshape(n * q, d, m), (weights[:, None] * W[None, :]).ravel()


def _shard(args):
    M, dim, table, first, k = args
    I, J, C, S, W = table
    cols = np.zeros((1, dim, M))
    cols[0, :M, :] = np.eye(M)
    weights = np.ones(1)
    # first collision fixed by the shard index
    one = tuple(np.array([x[first]]) for x in table)
    cols, weights = _expand(cols, weights, one)
    for _ in range(k - 1):
        cols, weights = _expand(cols, weights, table)
    A = cols[:, :M, :]
    return np.einsum("n,nki,nkj->ij", weights, A, A)


def brute_force_K(params: KacParams, k: int, budget: float = 1e8, workers: int = 1) -> np.ndarray:
    """Enumerate every k-collision history on the quadrature nodes of nu.

    Returns the weighted average of A^T A, where A is the system-system
    block of the product rotation. Shards over the first collision; the
    per-shard partial sums are combined in a fixed order, so the result does
    not depend on ``workers``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    M = params.M
    if k == 0:
        return np.eye(M)
    table = collision_table(params)
    q = len(table[0])
    if float(q) ** k > budget:
        raise BudgetExceeded(f"{q}^{k} histories exceed budget {budget:g}")
    jobs = [(M, params.dim, table, f, k) for f in range(q)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_shard, jobs))
    else:
        parts = [_shard(job) for job in jobs]
    out = np.empty((M, M))
    stack = np.stack(parts)
    for a in range(M):
        for b in range(M):
            out[a, b] = math.fsum(stack[:, a, b])
    return out


def decay_bound_gauss(params: KacParams, t: float) -> float:
    """M/(N+M) + N/(N+M) exp(-t mu_nu (N+M)/N)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    M, N = params.M, params.N
    return M / (N + M) + N / (N + M) * math.exp(-t * params.relaxation_rate)


def decay_bound_sphere(params: KacParams, t: float) -> float:
    """2 (M/(M+N) + exp(-mu t) N/(M+N)) + M/N."""
    if t < 0:
        raise ValueError("t must be non-negative")
    M, N = params.M, params.N
    return 2 * (M / (M + N) + math.exp(-params.mu * t) * N / (M + N)) + M / N


def poisson_resummed_C(params: KacParams, t: float, tail: float = 1e-16) -> float:
    """sum_k Poisson(k; Lambda t) C_k, truncated once the Poisson tail is below ``tail``."""
    from scipy.stats import poisson

    lt = params.Lambda * t
    kmax = int(poisson.isf(tail, lt)) + 1 if lt > 0 else 0
    ks = np.arange(kmax + 1)
    p = poisson.pmf(ks, lt)
    return math.fsum(p * np.array([closed_form_Ck(params, int(k)) for k in ks]))
