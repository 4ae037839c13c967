"""Gaussian-mixture densities and their entropy/information against e^{-pi|x|^2}.

Densities are absolute (Lebesgue). The reference Gaussian gamma has mean 0
and covariance I/(2 pi). For a density f, with h = f/gamma,

    S(f) = int f log(f/gamma),   I(f) = int |grad log f + 2 pi x|^2 f,

which are the entropy and information of h relative to gamma dx.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

TWO_PI = 2.0 * math.pi
COV_FLOOR = 1e-13


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.asarray(self.means, dtype=float)
        c = np.asarray(self.covs, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if c.ndim == 1:
            c = c[:, None, None]
        k, d = m.shape
        if w.shape != (k,) or c.shape != (k, d, d):
            raise ValueError(f"inconsistent shapes {w.shape}, {m.shape}, {c.shape}")
        if np.any(w <= 0):
            raise ValueError("component weights must be positive")
        c = 0.5 * (c + np.swapaxes(c, 1, 2))
        lo = np.linalg.eigvalsh(c)[:, 0]
        bad = lo <= COV_FLOOR
        if np.any(bad):
            c = c.copy()
            c[bad] += COV_FLOOR * np.eye(d)
            if np.any(np.linalg.eigvalsh(c[bad])[:, 0] <= 0):
                raise ValueError("covariance is not positive definite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def mass(self) -> float:
        return math.fsum(self.weights)

    @property
    def normalized(self) -> bool:
        return abs(self.mass - 1.0) <= 1e-12

    def renormalized(self) -> "GaussianMixture":
        return GaussianMixture(self.weights / self.mass, self.means, self.covs)

    @classmethod
    def gaussian(cls, mean, cov, weight: float = 1.0) -> "GaussianMixture":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float).reshape(len(mean), len(mean))
        return cls(np.array([weight]), mean[None], cov[None])

    @classmethod
    def standard(cls, dim: int) -> "GaussianMixture":
        """The reference Gaussian e^{-pi|x|^2} on R^dim."""
        return cls.gaussian(np.zeros(dim), np.eye(dim) / TWO_PI)

    @classmethod
    def scaled_standard(cls, a: float, dim: int = 1) -> "GaussianMixture":
        """Centred Gaussian with covariance a I/(2 pi)."""
        return cls.gaussian(np.zeros(dim), a * np.eye(dim) / TWO_PI)

    def product(self, other: "GaussianMixture") -> "GaussianMixture":
        """Tensor product density on R^{d1 + d2}."""
        d1, d2 = self.dim, other.dim
        w = (self.weights[:, None] * other.weights[None, :]).ravel()
        m = np.concatenate(
            [np.repeat(self.means, other.n_components, 0), np.tile(other.means, (self.n_components, 1))],
            axis=1,
        )
        c = np.zeros((len(w), d1 + d2, d1 + d2))
        c[:, :d1, :d1] = np.repeat(self.covs, other.n_components, 0)
        c[:, d1:, d1:] = np.tile(other.covs, (self.n_components, 1, 1))
        return GaussianMixture(w, m, c)

    # -- evaluation ---------------------------------------------------------

    def _factors(self):
        chol = np.linalg.cholesky(self.covs)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        prec = np.linalg.inv(self.covs)
        lognorm = np.log(self.weights) - 0.5 * (self.dim * math.log(TWO_PI) + logdet)
        return prec, lognorm

    def log_and_score(self, x, chunk: int = 1 << 22):
        """log f(x) and grad log f(x) at points ``x`` of shape (n, dim)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        prec, lognorm = self._factors()
        n = len(x)
        logf = np.empty(n)
        score = np.empty_like(x)
        step = max(1, chunk // max(1, self.n_components * self.dim))
        for a in range(0, n, step):
            xs = x[a:a + step]
            diff = xs[None, :, :] - self.means[:, None, :]  # (K, n, d)
            pd = np.einsum("kij,knj->kni", prec, diff)
            logc = lognorm[:, None] - 0.5 * np.einsum("kni,kni->kn", diff, pd)
            lf = logsumexp(logc, axis=0)
            resp = np.exp(logc - lf[None, :])
            logf[a:a + step] = lf
            score[a:a + step] = -np.einsum("kn,kni->ni", resp, pd)
        return logf, score

    def logpdf(self, x) -> np.ndarray:
        return self.log_and_score(x)[0]

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights / self.mass)
        chol = np.linalg.cholesky(self.covs)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)

    # -- serialisation ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "components": [
                {"w": float(w), "mean": m.tolist(), "cov": c.tolist()}
                for w, m, c in zip(self.weights, self.means, self.covs)
            ],
        }

    @classmethod
    def from_json(cls, doc) -> "GaussianMixture":
        if isinstance(doc, str):
            doc = json.loads(doc)
        d = int(doc["dim"])
        comps = doc["components"]
        return cls(
            np.array([c["w"] for c in comps], dtype=float),
            np.array([c["mean"] for c in comps], dtype=float).reshape(len(comps), d),
            np.array([c["cov"] for c in comps], dtype=float).reshape(len(comps), d, d),
        )


def rotate(mix: GaussianMixture, R) -> GaussianMixture:
    R = np.asarray(R, dtype=float)
    if R.shape != (mix.dim, mix.dim):
        raise ValueError("rotation dimension mismatch")
    return GaussianMixture(
        mix.weights, mix.means @ R.T, np.einsum("ij,kjl,ml->kim", R, mix.covs, R)
    )


def marginalize_first(mix: GaussianMixture, m: int) -> GaussianMixture:
    """Integrate out all but the leading ``m`` coordinates."""
    if not 1 <= m < mix.dim:
        raise ValueError(f"need 1 <= m < {mix.dim}")
    return GaussianMixture(mix.weights, mix.means[:, :m], mix.covs[:, :m, :m])


def ou_evolve(mix: GaussianMixture, s: float) -> GaussianMixture:
    """Ornstein-Uhlenbeck smoothing P_s, expressed on absolute densities."""
    if s < 0:
        raise ValueError("s must be non-negative")
    if s == 0:
        return mix
    e1 = math.exp(-s)
    e2 = math.exp(-2 * s)
    covs = e2 * mix.covs + (-math.expm1(-2 * s)) / TWO_PI * np.eye(mix.dim)
    return GaussianMixture(mix.weights, e1 * mix.means, covs)


# -- functionals ------------------------------------------------------------


@dataclass(frozen=True)
class FunctionalReport:
    entropy: float
    information: float
    quadrature_error_estimate: float
    entropy_stderr: float = 0.0
    information_stderr: float = 0.0
    nodes: int = 0


def _integrands(mix, pts):
    logf, score = mix.log_and_score(pts)
    f = np.exp(logf)
    s_int = f * (logf + math.pi * np.einsum("ni,ni->n", pts, pts))
    g = score + TWO_PI * pts
    i_int = f * np.einsum("ni,ni->n", g, g)
    return s_int, i_int


def _bounds(mix):
    sd = np.sqrt(np.diagonal(mix.covs, axis1=1, axis2=2))
    lo = (mix.means - 10 * sd).min(axis=0)
    hi = (mix.means + 10 * sd).max(axis=0)
    return lo, hi, sd.min(axis=0)


def _trapezoid(mix, lo, hi, n):
    axes = [np.linspace(lo[k], hi[k], n[k]) for k in range(mix.dim)]
    h = [(hi[k] - lo[k]) / (n[k] - 1) for k in range(mix.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    s_int, i_int = _integrands(mix, pts)
    wts = np.ones(n)
    for k in range(mix.dim):
        shape = [1] * mix.dim
        shape[k] = n[k]
        wk = np.full(n[k], h[k])
        wk[0] = wk[-1] = 0.5 * h[k]
        wts = wts * wk.reshape(shape)
    wts = wts.ravel()
    return math.fsum(wts * s_int), math.fsum(wts * i_int), int(np.prod(n))


def entropy_information(
    mix: GaussianMixture,
    tol: float = 1e-8,
    max_nodes_per_dim: int = 1 << 20,
    max_total_nodes: int = 1 << 24,
) -> FunctionalReport:
    """S and I by composite trapezoid on a box covering every component to 10 sd.

    The step is halved until successive S and I estimates agree within
    ``tol``; the last difference is reported as the error estimate.
    """
    if mix.dim > 2:
        raise ValueError("grid quadrature supports dim <= 2; use entropy_information_mc")
    if not mix.normalized:
        raise ValueError(f"mixture has mass {mix.mass!r}; renormalize first")
    lo, hi, sd_min = _bounds(mix)
    n = np.maximum(16, np.ceil((hi - lo) / sd_min).astype(int) + 1)
    prev = _trapezoid(mix, lo, hi, n)
    while True:
        n = 2 * n - 1
        if np.any(n > max_nodes_per_dim) or np.prod(n) > max_total_nodes:
            raise QuadratureError("quadrature did not converge within the node budget")
        cur = _trapezoid(mix, lo, hi, n)
        err = max(abs(cur[0] - prev[0]), abs(cur[1] - prev[1]))
        if err < tol:
            return FunctionalReport(cur[0], cur[1], err, nodes=cur[2])
        prev = cur


def entropy_information_mc(mix: GaussianMixture, samples: int, seed: int) -> FunctionalReport:
    """Sample-average estimates of S and I with standard errors."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if not mix.normalized:
        raise ValueError(f"mixture has mass {mix.mass!r}; renormalize first")
    rng = np.random.default_rng(seed)
    x = mix.sample(samples, rng)
    logf, score = mix.log_and_score(x)
    s_terms = logf + math.pi * np.einsum("ni,ni->n", x, x)
    g = score + TWO_PI * x
    i_terms = np.einsum("ni,ni->n", g, g)
    rt = math.sqrt(samples)
    return FunctionalReport(
        float(s_terms.mean()),
        float(i_terms.mean()),
        0.0,
        entropy_stderr=float(s_terms.std(ddof=1) / rt),
        information_stderr=float(i_terms.std(ddof=1) / rt),
        nodes=samples,
    )


def gaussian_functionals(a: float) -> tuple[float, float]:
    """Closed-form (S, I) of the 1-D centred Gaussian with variance a/(2 pi)."""
    return 0.5 * (a - 1 - math.log(a)), TWO_PI * (a - 1) ** 2 / a


# -- Ornstein-Uhlenbeck identities -----------------------------------------


@dataclass
class OURow:
    s: float
    S: float
    I: float
    contractivity_slack: float
    dS_ds: float
    derivative_error: float
    integral_error: float
    lsi_slack: float


@dataclass
class OUReport:
    rows: list = field(default_factory=list)
    S0: float = 0.0
    I0: float = 0.0
    tol: float = 1e-6
    contractivity_tol: float = 1e-8
    lsi_tol: float = 1e-8

    @property
    def contractivity_ok(self) -> bool:
        return all(r.contractivity_slack >= -self.contractivity_tol for r in self.rows)

    @property
    def derivative_ok(self) -> bool:
        return all(r.derivative_error <= self.tol for r in self.rows)

    @property
    def integral_ok(self) -> bool:
        return all(r.integral_error <= self.tol for r in self.rows)

    @property
    def lsi_ok(self) -> bool:
        return all(r.lsi_slack >= -self.lsi_tol for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.contractivity_ok and self.derivative_ok and self.integral_ok and self.lsi_ok


def _SI(mix, s):
    rep = entropy_information(ou_evolve(mix, s), tol=1e-10)
    return rep.entropy, rep.information


def entropy_derivative(mix: GaussianMixture, s: float, h: float = 1e-3) -> float:
    """Five-point finite difference of s -> S(P_s f); one-sided near s = 0."""
    if s >= 2 * h:
        f = [_SI(mix, s + k * h)[0] for k in (-2, -1, 1, 2)]
        return (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    f = [_SI(mix, s + k * h)[0] for k in range(5)]
    return (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)


def information_integral(mix: GaussianMixture, a: float, b: float, nodes: int = 64) -> float:
    """Gauss-Legendre approximation of int_a^b I(P_s f) ds."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (b - a) * x + 0.5 * (b + a)
    vals = np.array([_SI(mix, si)[1] for si in s])
    return 0.5 * (b - a) * math.fsum(w * vals)


def check_ou_identities(
    mix: GaussianMixture,
    s_grid,
    tol: float = 1e-6,
    contractivity_tol: float = 1e-8,
    lsi_tol: float = 1e-8,
) -> OUReport:
    """Verify the OU entropy/information relations at each grid point s.

    With the OU generator (1/2pi) Laplacian - x.grad, the information as
    defined here obeys dS(P_s f)/ds = -I(P_s f)/(2 pi), hence
    S(f) = (1/2pi) int_0^s I(P_u f) du + S(P_s f). Also checked:
    I(P_s f) <= e^{-2s} I(f) and S <= I/2.
    """
    if mix.dim > 2:
        raise ValueError("OU identity checks need a 1-D or 2-D mixture")
    S0, I0 = _SI(mix, 0.0)
    report = OUReport(S0=S0, I0=I0, tol=tol, contractivity_tol=contractivity_tol, lsi_tol=lsi_tol)
    grid = sorted(float(s) for s in s_grid)
    acc = 0.0
    prev = 0.0
    for s in grid:
        S, I = _SI(mix, s)
        if s > prev:
            acc += information_integral(mix, prev, s)
            prev = s
        deriv = entropy_derivative(mix, s)
        report.rows.append(
            OURow(
                s=s,
                S=S,
                I=I,
                contractivity_slack=math.exp(-2 * s) * I0 - I,
                dS_ds=deriv,
                derivative_error=abs(deriv + I / TWO_PI),
                integral_error=abs(acc / TWO_PI + S - S0),
                lsi_slack=0.5 * I - S,
            )
        )
    return report
