"""Kac system-plus-reservoir model: parameters, collision measure, rotations.

Particles ``0..M-1`` form the system, ``M..M+N-1`` the reservoir. All indices
are zero-based.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SYSTEM = "system-system"
RESERVOIR = "reservoir-reservoir"
CROSS = "cross"

# Four equispaced nodes integrate trigonometric polynomials of degree <= 3 exactly.
_UNIFORM_NODES = (-math.pi / 2, 0.0, math.pi / 2, math.pi)


def _snap(x: float) -> float:
    # cos(pi/2) is 6e-17 in floating point; keep quarter-turns exact
    for target in (-1.0, 0.0, 1.0):
        if abs(x - target) < 1e-15:
            return target
    return x


def cos_sin(theta) -> tuple:
    """Cosine and sine with values within 1e-15 of 0 or +-1 snapped."""
    c, s = np.cos(theta), np.sin(theta)
    if np.ndim(theta) == 0:
        return _snap(float(c)), _snap(float(s))
    c = np.where(np.abs(c) < 1e-15, 0.0, c)
    s = np.where(np.abs(s) < 1e-15, 0.0, s)
    c = np.where(np.abs(np.abs(c) - 1) < 1e-15, np.sign(c), c)
    s = np.where(np.abs(np.abs(s) - 1) < 1e-15, np.sign(s), s)
    return c, s


@dataclass(frozen=True)
class CollisionMeasure:
    """The angle law nu on [-pi, pi].

    ``kind`` is ``"uniform"`` or ``"atoms"``. For atoms, ``angles`` and
    ``weights`` hold the point masses.
    """

    kind: str = "uniform"
    angles: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind == "uniform":
            if self.angles or self.weights:
                raise ValueError("uniform measure takes no atoms")
            return
        if self.kind != "atoms":
            raise ValueError(f"unknown collision measure kind {self.kind!r}")
        if len(self.angles) == 0 or len(self.angles) != len(self.weights):
            raise ValueError("atoms need matching non-empty angle and weight lists")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("atom weights must be finite and non-negative")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError(f"atom weights sum to {math.fsum(w)!r}, not 1")
        w = w / math.fsum(w)
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        if abs(self.moment_sincos) > 1e-14:
            raise ValueError(
                f"collision measure has int sin*cos dnu = {self.moment_sincos!r}; must vanish"
            )

    @classmethod
    def uniform(cls) -> "CollisionMeasure":
        return cls("uniform")

    @classmethod
    def atoms(cls, angles: Sequence[float], weights: Sequence[float] | None = None):
        if weights is None:
            weights = [1.0 / len(angles)] * len(angles)
        return cls("atoms", tuple(angles), tuple(weights))

    @classmethod
    def from_json(cls, doc) -> "CollisionMeasure":
        if isinstance(doc, str):
            doc = json.loads(doc)
        if doc.get("kind") == "uniform":
            return cls.uniform()
        if doc.get("kind") == "atoms":
            atoms = doc["atoms"]
            return cls.atoms([a["theta"] for a in atoms], [a["weight"] for a in atoms])
        raise ValueError(f"unrecognised collision measure document: {doc!r}")

    def to_json(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform"}
        return {
            "kind": "atoms",
            "atoms": [{"theta": a, "weight": w} for a, w in zip(self.angles, self.weights)],
        }

    @property
    def quadrature_nodes(self) -> tuple:
        """(angles, weights) integrating every trig polynomial of degree <= 3 against nu."""
        if self.kind == "uniform":
            return np.array(_UNIFORM_NODES), np.full(4, 0.25)
        return np.array(self.angles), np.array(self.weights)

    def expect(self, fn) -> float:
        angles, weights = self.quadrature_nodes
        return math.fsum(weights * fn(angles))

    @property
    def moment_sin2(self) -> float:
        if self.kind == "uniform":
            return 0.5
        return self.expect(lambda th: np.sin(th) ** 2)

    @property
    def moment_sincos(self) -> float:
        if self.kind == "uniform":
            return 0.0
        return self.expect(lambda th: np.sin(th) * np.cos(th))

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms on [0, 1) to angles distributed according to nu."""
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return -math.pi + 2.0 * math.pi * u
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u, side="right")
        return np.asarray(self.angles)[np.minimum(idx, len(self.angles) - 1)]


@dataclass(frozen=True)
class PairIndex:
    i: int
    j: int
    kind: str


@dataclass(frozen=True)
class KacParams:
    M: int
    N: int
    lambda_S: float
    lambda_R: float
    mu: float
    nu: CollisionMeasure = field(default_factory=CollisionMeasure.uniform)

    @property
    def dim(self) -> int:
        return self.M + self.N

    @property
    def Lambda(self) -> float:
        """Total jump rate; empty intra-group sums contribute nothing."""
        total = self.mu * self.M
        if self.M > 1:
            total += 0.5 * self.lambda_S * self.M
        if self.N > 1:
            total += 0.5 * self.lambda_R * self.N
        return total

    @property
    def mu_nu(self) -> float:
        return self.mu * self.nu.moment_sin2

    @property
    def ell2(self) -> float:
        """Second eigenvalue of the 2x2 energy-sharing matrix."""
        return 1.0 - self.mu_nu * (self.M + self.N) / (self.Lambda * self.N)

    @property
    def relaxation_rate(self) -> float:
        """mu_nu (M+N)/N, the rate in the Gaussian decay factor."""
        return self.mu_nu * (self.M + self.N) / self.N

    @property
    def pairs(self) -> list[PairIndex]:
        out = []
        n = self.dim
        for i in range(n):
            for j in range(i + 1, n):
                if j < self.M:
                    kind = SYSTEM
                elif i >= self.M:
                    kind = RESERVOIR
                else:
                    kind = CROSS
                out.append(PairIndex(i, j, kind))
        return out

    def class_weight(self, kind: str) -> float:
        lam = self.Lambda
        if kind == SYSTEM:
            return self.lambda_S / ((self.M - 1) * lam) if self.M > 1 else 0.0
        if kind == RESERVOIR:
            return self.lambda_R / ((self.N - 1) * lam) if self.N > 1 else 0.0
        return self.mu / (self.N * lam)

    @property
    def pair_weights(self) -> np.ndarray:
        return np.array([self.class_weight(p.kind) for p in self.pairs])

    def pair_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(i, j, weight) arrays over pairs with non-zero weight."""
        pairs = self.pairs
        w = self.pair_weights
        keep = w > 0
        ii = np.array([p.i for p in pairs], dtype=np.int64)[keep]
        jj = np.array([p.j for p in pairs], dtype=np.int64)[keep]
        return ii, jj, w[keep]

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "N": self.N,
            "lambda_S": self.lambda_S,
            "lambda_R": self.lambda_R,
            "mu": self.mu,
            "nu": self.nu.to_json(),
        }


def derive_params(M, N, lambda_S=0.0, lambda_R=0.0, mu=0.0, nu=None) -> KacParams:
    """Build validated model parameters.

    The system rate is ignored when ``M == 1`` and the reservoir rate when
    ``N == 1``, since the corresponding pair sums are empty.
    """
    if int(M) != M or int(N) != N or M < 1 or N < 1:
        raise ValueError(f"need integer M >= 1 and N >= 1, got M={M}, N={N}")
    for name, val in (("lambda_S", lambda_S), ("lambda_R", lambda_R), ("mu", mu)):
        if not math.isfinite(val) or val < 0:
            raise ValueError(f"{name} must be a finite non-negative rate, got {val}")
    params = KacParams(int(M), int(N), float(lambda_S), float(lambda_R), float(mu),
                       nu if nu is not None else CollisionMeasure.uniform())
    if params.Lambda <= 0:
        raise ValueError("zero total collision rate")
    return params


def local_perturbation_rates(lam: float, M: int, N: int) -> tuple[float, float, float]:
    """Rates making every pair of the M+N particles collide at the same rate."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    denom = N + M - 1
    return (2 * lam * (M - 1) / denom, 2 * lam * (N - 1) / denom, 2 * lam * N / denom)


def local_params(lam: float, M: int, N: int, nu=None) -> KacParams:
    return derive_params(M, N, *local_perturbation_rates(lam, M, N), nu=nu)


def collision_table(params: KacParams):
    """Flattened (i, j, cos, sin, weight) over weighted pairs x quadrature nodes of nu."""
    ii, jj, pw = params.pair_arrays()
    th, tw = params.nu.quadrature_nodes
    c, s = cos_sin(th)
    q = len(th)
    return (np.repeat(ii, q), np.repeat(jj, q), np.tile(c, len(ii)), np.tile(s, len(ii)),
            np.repeat(pw, q) * np.tile(tw, len(ii)))


def rotation_matrix(dim: int, i: int, j: int, theta: float) -> np.ndarray:
    """Dense matrix of the collision map of :func:`apply_collision`."""
    c, s = cos_sin(theta)
    r = np.eye(dim)
    r[i, i] = c
    r[i, j] = -s
    r[j, i] = s
    r[j, j] = c
    return r


def apply_collision(state, pair, theta: float) -> np.ndarray:
    """Rotate components ``i, j`` of ``state`` by ``theta``.

    ``pair`` is a :class:`PairIndex` or an ``(i, j)`` tuple.
    """
    i, j = (pair.i, pair.j) if isinstance(pair, PairIndex) else pair
    x = np.array(state, dtype=float)
    c, s = cos_sin(theta)
    xi, xj = x[i], x[j]
    x[i] = xi * c - xj * s
    x[j] = xi * s + xj * c
    return x


@dataclass(frozen=True)
class RotationHistory:
    """Product rotation of a collision sequence, applied first-to-last."""

    matrix: np.ndarray
    M: int

    @property
    def A(self):
        return self.matrix[: self.M, : self.M]

    @property
    def B(self):
        return self.matrix[: self.M, self.M:]

    @property
    def C(self):
        return self.matrix[self.M:, : self.M]

    @property
    def D(self):
        return self.matrix[self.M:, self.M:]


def assemble_history(params: KacParams, pairs, thetas) -> RotationHistory:
    if len(pairs) != len(thetas):
        raise ValueError("pairs and thetas must have equal length")
    r = np.eye(params.dim)
    for pair, theta in zip(pairs, thetas):
        i, j = (pair.i, pair.j) if isinstance(pair, PairIndex) else pair
        r = rotation_matrix(params.dim, i, j, theta) @ r
    return RotationHistory(r, params.M)
