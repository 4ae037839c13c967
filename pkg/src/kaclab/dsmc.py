"""Uniformised jump-chain simulation of the Kac master equation.

Each replica carries a global Exp(Lambda) clock; at every event a pair is
picked with probability lambda_alpha and rotated by an angle drawn from nu.
All randomness for replica r, event e comes from the counter-based stream
(seed, r, e), so results do not depend on batching or worker count.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .gaussian import TWO_PI, GaussianMixture
from .model import CollisionMeasure, KacParams, cos_sin

RENORM_PERIOD = 10_000
MIN_ACCEPTANCE = 1e-4


@dataclass
class ParticleEnsemble:
    geometry: str
    M: int
    N: int
    states: np.ndarray
    seed: int
    time: float = 0.0
    collision_count: np.ndarray = None
    next_time: np.ndarray = None
    first_replica: int = 0

    def __post_init__(self):
        if self.geometry not in ("gauss", "sphere"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        n = len(self.states)
        if self.collision_count is None:
            self.collision_count = np.zeros(n, dtype=np.int64)

    @property
    def replicas(self) -> int:
        return len(self.states)

    @property
    def replica_ids(self) -> np.ndarray:
        return self.first_replica + np.arange(self.replicas)

    def subset(self, sl: slice) -> "ParticleEnsemble":
        ids = np.arange(self.replicas)[sl]
        return ParticleEnsemble(
            self.geometry, self.M, self.N, self.states[sl].copy(), self.seed, self.time,
            self.collision_count[sl].copy(),
            None if self.next_time is None else self.next_time[sl].copy(),
            self.first_replica + int(ids[0]) if len(ids) else self.first_replica,
        )


@dataclass
class TrajectoryObservables:
    times: np.ndarray
    system_energy_mean: np.ndarray
    system_energy_stderr: np.ndarray
    replicas: int
    replica_energy: np.ndarray | None = None
    marginals: dict = field(default_factory=dict)


def _normal_block(seed, ids, purpose_index, count):
    """``count`` standard normals per replica from init streams."""
    cols = []
    for b in range((count + 1) // 2):
        z1, z2 = rng.normals(seed, ids, purpose_index + b, rng.INIT)
        cols += [z1, z2]
    return np.stack(cols[:count], axis=1) if count else np.zeros((len(ids), 0))


def _sample_mixture(mix: GaussianMixture, seed, ids, offset):
    u, _ = rng.uniforms(seed, ids, offset, rng.INIT)
    cdf = np.cumsum(mix.weights) / mix.mass
    comp = np.minimum(np.searchsorted(cdf, u, side="right"), mix.n_components - 1)
    z = _normal_block(seed, ids, offset + 1, mix.dim)
    chol = np.linalg.cholesky(mix.covs)
    return mix.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


def init_gauss(params: KacParams, f0, replicas: int, seed: int) -> ParticleEnsemble:
    """Replicas with v ~ f0 and reservoir i.i.d. N(0, 1/(2 pi)).

    ``f0`` is a :class:`GaussianMixture` on R^M or a fixed vector.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    M, N = params.M, params.N
    ids = np.arange(replicas)
    w = _normal_block(seed, ids, 0, N) / math.sqrt(TWO_PI)
    if isinstance(f0, GaussianMixture):
        if f0.dim != M:
            raise ValueError("f0 dimension must equal M")
        v = _sample_mixture(f0, seed, ids, 1 << 20)
    else:
        v = np.broadcast_to(np.asarray(f0, dtype=float).reshape(1, M), (replicas, M)).copy()
    return ParticleEnsemble("gauss", M, N, np.concatenate([v, w], axis=1), seed)


def uniform_sphere(dim: int, seed: int, ids, attempt: int) -> np.ndarray:
    """Uniform points on the sphere of radius sqrt(dim)."""
    z = _normal_block(seed, ids, (1 << 24) + attempt * ((dim + 1) // 2 + 1), dim)
    return math.sqrt(dim) * z / np.linalg.norm(z, axis=1, keepdims=True)


def init_sphere(params: KacParams, g, g_max: float, replicas: int, seed: int,
                max_attempts: int = 100_000) -> ParticleEnsemble:
    """Rejection-sample F0 proportional to g(v) on S^{M+N-1}(sqrt(M+N)).

    ``g`` maps an (n, M) array of system velocities to non-negative values
    bounded by ``g_max``.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    M, d = params.M, params.dim
    states = np.empty((replicas, d))
    pending = np.arange(replicas)
    proposals = accepted = 0
    for attempt in range(max_attempts):
        x = uniform_sphere(d, seed, pending, attempt)
        u, _ = rng.uniforms(seed, pending, attempt, rng.INIT + 8)
        gv = np.asarray(g(x[:, :M]), dtype=float)
        if np.any(gv > g_max * (1 + 1e-12)) or np.any(gv < 0):
            raise ValueError("g exceeds its stated bound or is negative")
        ok = u * g_max < gv
        states[pending[ok]] = x[ok]
        proposals += len(pending)
        accepted += int(ok.sum())
        pending = pending[~ok]
        if proposals >= 1000 and accepted / proposals < MIN_ACCEPTANCE:
            raise ValueError(f"acceptance rate {accepted / proposals:.2e} below {MIN_ACCEPTANCE}")
        if len(pending) == 0:
            return ParticleEnsemble("sphere", M, params.N, states, seed)
    raise ValueError("rejection sampling did not finish")


def _draw_times(ens, lam, ids, counts):
    u, _ = rng.open_uniforms(ens.seed, ids, counts, rng.EVENT)
    return -np.log(u) / lam


def _advance(ens: ParticleEnsemble, params: KacParams, t_end: float, pcdf, ii, jj):
    lam = params.Lambda
    ids = ens.replica_ids
    radius2 = float(params.dim)
    while True:
        active = np.nonzero(ens.next_time <= t_end)[0]
        if len(active) == 0:
            break
        rid = ids[active]
        cnt = ens.collision_count[active]
        _, u_theta = rng.uniforms(ens.seed, rid, cnt, rng.EVENT)
        u_pair, _ = rng.uniforms(ens.seed, rid, cnt, rng.EVENT_AUX)
        p = np.minimum(np.searchsorted(pcdf, u_pair, side="right"), len(pcdf) - 1)
        c, s = cos_sin(params.nu.sample(u_theta))
        i, j = ii[p], jj[p]
        xi = ens.states[active, i]
        xj = ens.states[active, j]
        ens.states[active, i] = xi * c - xj * s
        ens.states[active, j] = xi * s + xj * c
        cnt = cnt + 1
        ens.collision_count[active] = cnt
        if ens.geometry == "sphere":
            due = active[cnt % RENORM_PERIOD == 0]
            if len(due):
                x = ens.states[due]
                ens.states[due] = x * np.sqrt(radius2 / np.einsum("ni,ni->n", x, x))[:, None]
        ens.next_time[active] += _draw_times(ens, lam, rid, cnt)
    ens.time = t_end


def _run_chunk(args):
    ens, params, grid, keep_marginals = args
    ii, jj, pw = params.pair_arrays()
    pcdf = np.cumsum(pw)
    pcdf[-1] = 1.0
    if ens.next_time is None:
        ens.next_time = ens.time + _draw_times(ens, params.Lambda, ens.replica_ids, ens.collision_count)
    energy = np.empty((ens.replicas, len(grid)))
    marg = {}
    for g, t in enumerate(grid):
        _advance(ens, params, t, pcdf, ii, jj)
        v = ens.states[:, : params.M]
        energy[:, g] = np.einsum("ni,ni->n", v, v)
        if keep_marginals:
            marg[g] = v.copy()
    return ens, energy, marg


def run(ens: ParticleEnsemble, params: KacParams, t_grid, nu: CollisionMeasure | None = None,
        keep_marginals: bool = False, keep_replica_energy: bool = True,
        workers: int = 1) -> TrajectoryObservables:
    """Advance ``ens`` in place through ``t_grid`` and record system energies.

    The state at a grid time is the state after the last event at or before
    it. If ``nu`` is given it overrides ``params.nu``.
    """
    if nu is not None and nu != params.nu:
        params = KacParams(params.M, params.N, params.lambda_S, params.lambda_R, params.mu, nu)
    grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(grid) <= 0) or (len(grid) and grid[0] < ens.time):
        raise ValueError("t_grid must be strictly increasing from the current time")
    if (ens.M, ens.N) != (params.M, params.N):
        raise ValueError("ensemble shape does not match params")
    if workers > 1 and ens.replicas > 1:
        bounds = np.linspace(0, ens.replicas, workers + 1).astype(int)
        chunks = [ens.subset(slice(a, b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, [(c, params, grid, keep_marginals) for c in chunks]))
        ens.states = np.concatenate([p[0].states for p in parts])
        ens.collision_count = np.concatenate([p[0].collision_count for p in parts])
        ens.next_time = np.concatenate([p[0].next_time for p in parts])
        ens.time = parts[0][0].time
        energy = np.concatenate([p[1] for p in parts])
        marg = {g: np.concatenate([p[2][g] for p in parts]) for g in parts[0][2]}
    else:
        _, energy, marg = _run_chunk((ens, params, grid, keep_marginals))
    n = ens.replicas
    mean = energy.mean(axis=0)
    stderr = energy.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(grid))
    return TrajectoryObservables(
        grid, mean, stderr, n,
        energy if keep_replica_energy else None,
        {float(grid[g]): m for g, m in marg.items()},
    )


def checkpoint_marginal(ens: ParticleEnsemble) -> np.ndarray:
    """System velocities of every replica, shape (replicas, M)."""
    return ens.states[:, : ens.M].copy()


# -- analysis helpers -------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    rate: float
    stderr: float
    asymptote: float
    amplitude: float


def _fit(times, means):
    from scipy.optimize import curve_fit

    def model(t, e_inf, amp, rate):
        return e_inf + amp * np.exp(-rate * t)

    p0 = (means[-1], means[0] - means[-1], 1.0 / max(times[-1], 1e-12))
    popt, _ = curve_fit(model, times, means, p0=p0, maxfev=20000)
    return popt


def fit_relaxation_rate(obs: TrajectoryObservables, blocks: int = 20) -> RateFit:
    """Fit E(t) = E_inf + a exp(-r t) to the mean system energy.

    The standard error of r is a delete-one-block jackknife over replica
    blocks, which accounts for the correlation between grid times.
    """
    if obs.replica_energy is None:
        raise ValueError("replica energies were not kept")
    e = obs.replica_energy
    full = _fit(obs.times, e.mean(axis=0))
    idx = np.array_split(np.arange(len(e)), blocks)
    total = e.sum(axis=0)
    reps = []
    for b in idx:
        reps.append(_fit(obs.times, (total - e[b].sum(axis=0)) / (len(e) - len(b)))[2])
    reps = np.array(reps)
    se = math.sqrt((blocks - 1) / blocks * np.sum((reps - reps.mean()) ** 2))
    return RateFit(float(full[2]), se, float(full[0]), float(full[1]))


def write_checkpoint(path, samples: np.ndarray, time: float, seed: int, params: KacParams,
                     geometry: str = "gauss") -> Path:
    """Write samples as raw little-endian float64 with a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(samples, dtype="<f8").tofile(path)
    meta = {
        "shape": list(samples.shape),
        "dtype": "<f8",
        "time": time,
        "seed": seed,
        "geometry": geometry,
        "params": params.to_json(),
    }
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return side


def read_checkpoint(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.fromfile(path, dtype=meta.get("dtype", "<f8")).reshape(meta["shape"])
    return data, meta
