"""Angular-momentum algebra for densities on the sphere S^{M+N-1}(sqrt(M+N)).

Test functions depend on the reservoir only through |w|^2, so
grad_w F = ell(v, |w|) w with ell = 2 dphi/d(|w|^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import assemble_history, derive_params


@dataclass(frozen=True)
class SphericalTestFunction:
    """F(v, w) = phi(v, |w|^2) = exp(a.v + b |w|^2 + v^T S v / 2)."""

    a: np.ndarray
    b: float
    S: np.ndarray

    @classmethod
    def constant(cls, M: int) -> "SphericalTestFunction":
        return cls(np.zeros(M), 0.0, np.zeros((M, M)))

    @classmethod
    def random(cls, M: int, rng: np.random.Generator, scale: float = 0.3):
        S = rng.normal(scale=scale, size=(M, M))
        return cls(rng.normal(scale=scale, size=M), float(rng.normal(scale=scale)), 0.5 * (S + S.T))

    @property
    def M(self) -> int:
        return len(self.a)

    def value(self, v, w) -> float:
        return math.exp(self.a @ v + self.b * (w @ w) + 0.5 * v @ self.S @ v)

    def grad_v(self, v, w) -> np.ndarray:
        return self.value(v, w) * (self.a + self.S @ v)

    def ell(self, v, w) -> float:
        return 2.0 * self.b * self.value(v, w)

    def grad(self, x) -> np.ndarray:
        """Full gradient on R^{M+N}."""
        v, w = x[: self.M], x[self.M:]
        return np.concatenate([self.grad_v(v, w), self.ell(v, w) * w])


@dataclass(frozen=True)
class BlockRotation:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @classmethod
    def from_matrix(cls, R, M: int) -> "BlockRotation":
        R = np.asarray(R, dtype=float)
        return cls(R[:M, :M], R[:M, M:], R[M:, :M], R[M:, M:])

    @classmethod
    def identity(cls, M: int, N: int) -> "BlockRotation":
        return cls.from_matrix(np.eye(M + N), M)

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.C, self.D]])


def random_history_rotation(M: int, N: int, rng: np.random.Generator, length: int | None = None) -> BlockRotation:
    """Product of random 2-plane rotations over random pairs."""
    params = derive_params(M, N, 1.0, 1.0, 1.0)
    pairs = params.pairs
    if length is None:
        length = int(rng.integers(1, 4 * (M + N)))
    idx = rng.integers(0, len(pairs), size=length)
    thetas = rng.uniform(-math.pi, math.pi, size=length)
    return BlockRotation.from_matrix(assemble_history(params, [pairs[i] for i in idx], thetas).matrix, M)


def random_sphere_point(M: int, N: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=M + N)
    return math.sqrt(M + N) * z / np.linalg.norm(z)


def _check_point(x, tol=1e-9):
    if abs(x @ x - len(x)) > tol * len(x):
        raise ValueError("point is not on the sphere of radius sqrt(M+N)")


def generator_sum(grad, x, M: int) -> tuple[float, float, float]:
    """(|LF|^2, |L^int F|^2, |L^out F|^2) summed over every rotation generator."""
    n = len(x)
    internal = external = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            term = (x[i] * grad[j] - x[j] * grad[i]) ** 2
            if i < M:
                internal += term
            else:
                external += term
    return internal + external, internal, external


def angular_momentum_sq(F: SphericalTestFunction, x) -> tuple[float, float, float]:
    """(total, internal, external) squared angular momentum at ``x``.

    Uses the closed form for w-rotation-invariant F; the external part is 0.
    """
    x = np.asarray(x, dtype=float)
    _check_point(x)
    M = F.M
    v, w = x[:M], x[M:]
    g = F.grad_v(v, w)
    q = F.ell(v, w) * v - g
    total = (v @ v) * (g @ g) - (v @ g) ** 2 + (w @ w) * (q @ q)
    return total, total, 0.0


def _parts(F, R, x):
    x = np.asarray(x, dtype=float)
    _check_point(x)
    M = F.M
    v, w = x[:M], x[M:]
    g = F.grad_v(v, w)
    q = F.ell(v, w) * v - g
    return v, w, g, q


def sigma1(F: SphericalTestFunction, R: BlockRotation, x) -> float:
    v, w, g, q = _parts(F, R, x)
    C, D = R.C, R.D
    N = D.shape[0]
    Cv, Cg, Cq = C @ v, C @ g, C @ q
    first = (Cv @ Cv) * (Cg @ Cg) - (Cv @ Cg) ** 2
    DtCq = D.T @ Cq
    return first + (w @ w) / N * ((Cq @ Cq) * np.trace(D.T @ D) - DtCq @ DtCq)


def sigma2(F: SphericalTestFunction, R: BlockRotation, x) -> float:
    v, w, g, q = _parts(F, R, x)
    A = R.A
    M, N = len(v), R.D.shape[0]
    Av, Ag, Aq = A @ v, A @ g, A @ q
    w2 = w @ w
    return (
        (v @ v) * (Ag @ Ag)
        + (Av @ Av) * (g @ g)
        - 2 * (v @ g) * (Av @ Ag)
        + (1 - (M - 1) / N) * w2 * (Aq @ Aq)
        + M / N * w2 * (q @ q)
    )


def sigma0_average(F: SphericalTestFunction, R: BlockRotation, x, samples: int,
                   rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo mean and standard error of Sigma_0 over directions of w.

    |w| is held fixed; each sample uses a uniform direction and the raw sum
    over reservoir generator pairs.
    """
    v, w, g, _ = _parts(F, R, x)
    C, D = R.C, R.D
    N = D.shape[0]
    z = rng.normal(size=(samples, N))
    omega = z / np.linalg.norm(z, axis=1, keepdims=True) * math.sqrt(w @ w)
    p = (C @ v)[None, :] + omega @ D.T
    qv = C @ (g - F.ell(v, w) * v)
    P = p[:, :, None] * qv[None, None, :] - qv[None, :, None] * p[:, None, :]
    iu = np.triu_indices(N, 1)
    vals = (P[:, iu[0], iu[1]] ** 2).sum(axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


@dataclass
class InequalityResult:
    lhs: float
    sigma2: float
    slack: float
    scale: float
    passed: bool


def check_pointwise_inequality(F: SphericalTestFunction, R: BlockRotation, x, rel_tol: float = 1e-9) -> InequalityResult:
    """|LF|^2 - Sigma_1 <= Sigma_2 up to ``rel_tol`` times the largest term."""
    lf = angular_momentum_sq(F, x)[0]
    s1 = sigma1(F, R, x)
    s2 = sigma2(F, R, x)
    scale = max(abs(lf), abs(s1), abs(s2))
    slack = s2 - (lf - s1)
    return InequalityResult(lf - s1, s2, slack, scale, slack >= -rel_tol * scale)


@dataclass
class SigmaCheckReport:
    rows: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(not r["passed"] for r in self.rows)


def sigma_check(trials: int, seed: int, Ms=(1, 2, 3), Ns=(2, 3, 8)) -> SigmaCheckReport:
    """Randomised trials of the pointwise inequality over (M, N) combinations."""
    rng = np.random.default_rng(seed)
    combos = [(M, N) for M in Ms for N in Ns]
    report = SigmaCheckReport()
    for t in range(trials):
        M, N = combos[t % len(combos)]
        F = SphericalTestFunction.random(M, rng)
        R = random_history_rotation(M, N, rng)
        x = random_sphere_point(M, N, rng)
        res = check_pointwise_inequality(F, R, x)
        report.rows.append(
            {"trial": t, "M": M, "N": N, "lhs": res.lhs, "sigma2": res.sigma2,
             "slack": res.slack, "scale": res.scale, "passed": res.passed}
        )
    return report
