"""Euler-Maruyama ensemble integration of the guided bridge SDE.

The controlled process dx = u(t, x) dt + dW starts at the origin and is
stepped on a uniform grid with the analytic drift evaluated at midpoint
stamps t_n = (n + 1/2) dt, clamped to the Green-function validity band.
Midpoint stamps keep every drift query away from both singular endpoints
without a special-cased first or last step.

Reproducibility contract: every particle owns a counter-based stream keyed
by (seed, particle index), so the noise tensor is a pure function of
(seed, M, T, d) no matter how the work is scheduled. Auxiliary draws
(target samples, resampling nulls) live on lanes keyed from the upper half
of the index space and can never collide with particle streams. All
ensemble-sized contractions go through einsum rather than BLAS so results
do not depend on the thread count.

simulate() integrates one protocol and records snapshots; simulate_batch()
advances many protocols that share a stiffness backbone under one noise
tensor, which is what common-random-number gradient estimation needs: the
quadratic kernel coefficients depend on beta alone and are computed once,
while the per-protocol linear terms ride along as small per-member arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .greens import GreensTable, backward_at
from .inference import denoise_mean, reweight
from .protocol import PwcProtocol
from .target import GaussianMixture

__all__ = [
    "SimulationDiverged",
    "SimConfig",
    "Snapshot",
    "EnsembleRun",
    "BatchResult",
    "ModeAssignment",
    "particle_noise",
    "rng_lane",
    "simulate",
    "simulate_batch",
    "mode_assignment",
]

_LANE_BASE = 2**63


class SimulationDiverged(RuntimeError):
    """A particle left the finite range; reports the offending step."""

    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state after step {step} (t = {time:.6g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SimConfig:
    """Ensemble size, grid resolution, seeding, and snapshot plan."""

    steps: int = 1000
    particles: int = 4000
    seed: int = 0
    snapshot_times: tuple[float, ...] | None = None
    record_full_paths: bool = False

    def __post_init__(self):
        if self.steps < 10:
            raise ValueError("steps must be at least 10")
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if self.snapshot_times is not None:
            ts = tuple(float(t) for t in self.snapshot_times)
            if any(not 0.0 <= t <= 1.0 for t in ts):
                raise ValueError("snapshot times must lie in [0, 1]")
            object.__setattr__(self, "snapshot_times", ts)

    @property
    def dt(self) -> float:
        return 1.0 / self.steps

    @property
    def end_clamp(self) -> float:
        return 0.5 / self.steps

    def resolved_snapshot_times(self) -> tuple[float, ...]:
        if self.snapshot_times is not None:
            return self.snapshot_times
        return tuple(np.linspace(0.0, 1.0, 10))


@dataclass
class Snapshot:
    """Ensemble block at one (snapped) grid time."""

    time: float
    positions: np.ndarray  # (M, d)
    mean: np.ndarray  # (d,)
    cov: np.ndarray  # (d, d)


@dataclass
class EnsembleRun:
    """Trajectory ensemble plus the per-step sums diagnostics consume.

    sum_x and sum_sq are sufficient statistics for the squared deviation
    from ANY reference center, so guide costs against protocols other than
    the sampling one need no second simulation.
    """

    protocol: PwcProtocol
    config: SimConfig
    times: np.ndarray  # (T,) midpoint stamps
    sum_x: np.ndarray  # (T, d) per-step sum of positions
    sum_sq: np.ndarray  # (T,) per-step sum of |x|^2
    sum_u_sq: np.ndarray  # (T,) per-step sum of |u|^2
    snapshots: list[Snapshot]
    terminal: np.ndarray  # (M, d)
    paths: np.ndarray | None = None  # (M, T + 1, d) when recorded

    @property
    def particles(self) -> int:
        return self.terminal.shape[0]

    @property
    def dim(self) -> int:
        return self.terminal.shape[1]

    @property
    def seed(self) -> int:
        return self.config.seed

    def step_means(self) -> np.ndarray:
        """Ensemble center of mass at every drift stamp, (T, d)."""
        return self.sum_x / self.particles


@dataclass
class BatchResult:
    """Accumulators for a family of protocols advanced under shared noise."""

    times: np.ndarray  # (T,)
    dt: float
    particles: int
    sum_x: np.ndarray  # (P, T, d)
    sum_sq: np.ndarray  # (P, T)
    sum_u_sq: np.ndarray  # (P, T)
    terminal: np.ndarray  # (P, M, d)


@dataclass(frozen=True)
class ModeAssignment:
    counts: np.ndarray  # (N,) int
    frequencies: np.ndarray  # (N,)


def rng_lane(seed: int, lane: int) -> np.random.Generator:
    """Auxiliary stream `lane` for a run seed; disjoint from particle keys."""
    if lane < 0:
        raise ValueError("lane must be nonnegative")
    key = np.array([seed, _LANE_BASE + lane], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def particle_noise(seed: int, particles: int, steps: int, dim: int) -> np.ndarray:
    """Unit-normal increments, (M, T, d); row i comes from key (seed, i)."""
    out = np.empty((particles, steps, dim))
    for i in range(particles):
        gen = np.random.Generator(
            np.random.Philox(key=np.array([seed, i], dtype=np.uint64))
        )
        out[i] = gen.standard_normal((steps, dim))
    return out


def _check_band(table: GreensTable, config: SimConfig) -> None:
    lo = config.end_clamp
    if table.eps_start > lo or table.eps_end > lo:
        raise ValueError(
            f"table band [{table.eps_start}, 1 - {table.eps_end}] does not "
            f"cover the drift stamps [{lo}, {1.0 - lo}]; rebuild with smaller bands"
        )


def _snap_index(time: float, steps: int) -> int:
    """Nearest state index for a requested snapshot time; 0 maps to 1.

    State j is the ensemble after j steps, at time j/T. The initial block
    is a deterministic point mass, so a request at 0 returns the first
    stochastic state instead.
    """
    return min(max(int(round(time * steps)), 1), steps)


def _step_coefficients(tables: list[GreensTable], times: np.ndarray):
    """Per-step drift coefficients for a shared-beta protocol family.

    Returns scalars per step (a, b, K) and per-member vectors (nu, psi, r)
    of shape (T, P, d). Shared-beta is what makes the scalars common: the
    quadratic coefficients never see the centers.
    """
    base = tables[0].protocol
    for tab in tables[1:]:
        proto = tab.protocol
        if not (
            np.array_equal(proto.breakpoints, base.breakpoints)
            and np.array_equal(proto.beta, base.beta)
        ):
            raise ValueError("batched protocols must share breakpoints and beta")
    steps, members, dim = times.size, len(tables), base.dim
    a = np.empty(steps)
    b = np.empty(steps)
    k = np.empty(steps)
    nu = np.empty((steps, members, dim))
    psi = np.empty((steps, members, dim))
    r = np.empty((steps, members, dim))
    for n, t in enumerate(times):
        for p, tab in enumerate(tables):
            st = reweight(tab, float(t))
            if p == 0:
                a[n], b[n], k[n] = st.bw.a, st.bw.b, st.k_precision
            nu[n, p] = st.bw.nu
            psi[n, p] = st.psi
            r[n, p] = st.bw.r
    return a, b, k, nu, psi, r


def _integrate(
    tables: list[GreensTable],
    gmm: GaussianMixture,
    config: SimConfig,
    noise: np.ndarray | None,
    snap_indices: frozenset[int],
    keep_paths: bool,
):
    """Shared stepping core; returns stats, terminal, snapshot blocks, paths."""
    members = len(tables)
    steps, particles = config.steps, config.particles
    dim = tables[0].protocol.dim
    if gmm.dim != dim:
        raise ValueError("target dimension does not match the protocol")
    for tab in tables:
        _check_band(tab, config)
    if noise is None:
        noise = particle_noise(config.seed, particles, steps, dim)
    elif noise.shape != (particles, steps, dim):
        raise ValueError(
            f"noise tensor has shape {noise.shape}, expected {(particles, steps, dim)}"
        )
    dt = config.dt
    sqrt_dt = np.sqrt(dt)
    times = np.clip(
        (np.arange(steps) + 0.5) * dt, config.end_clamp, 1.0 - config.end_clamp
    )
    a_arr, b_arr, k_arr, nu_arr, psi_arr, r_arr = _step_coefficients(tables, times)

    x = np.zeros((members, particles, dim))
    sum_x = np.empty((members, steps, dim))
    sum_sq = np.empty((members, steps))
    sum_u_sq = np.empty((members, steps))
    snaps: dict[int, np.ndarray] = {}
    paths = np.empty((particles, steps + 1, dim)) if keep_paths else None
    if paths is not None:
        paths[:, 0] = 0.0

    for n in range(steps):
        a, b, k = a_arr[n], b_arr[n], k_arr[n]
        nu = nu_arr[n][:, None, :]  # (P, 1, d)
        dev = x - nu
        mu_rho = nu + (b * dev + psi_arr[n][:, None, :]) / k
        yh = denoise_mean(k, mu_rho.reshape(members * particles, dim), gmm)
        yh = yh.reshape(members, particles, dim)
        u = b * (yh - nu) - a * dev + r_arr[n][:, None, :]
        sum_x[:, n] = x.sum(axis=1)
        sum_sq[:, n] = np.einsum("pmd,pmd->p", x, x)
        sum_u_sq[:, n] = np.einsum("pmd,pmd->p", u, u)
        x = x + u * dt + sqrt_dt * noise[None, :, n, :]
        if not np.isfinite(x).all():
            raise SimulationDiverged(n, float(times[n]))
        if paths is not None:
            paths[:, n + 1] = x[0]
        if (n + 1) in snap_indices:
            snaps[n + 1] = x[0].copy()
    return times, sum_x, sum_sq, sum_u_sq, x, snaps, paths


def _ensemble_moments(block: np.ndarray):
    m = block.shape[0]
    mean = block.mean(axis=0)
    if m < 2:
        return mean, np.zeros((block.shape[1], block.shape[1]))
    centered = block - mean
    cov = np.einsum("mi,mj->ij", centered, centered) / (m - 1)
    return mean, cov


def simulate(
    table: GreensTable,
    gmm: GaussianMixture,
    config: SimConfig,
    noise: np.ndarray | None = None,
) -> EnsembleRun:
    """Integrate one protocol; all particles start at the origin.

    :param noise: optional (M, T, d) increment tensor overriding the seeded
        streams; pass zeros for the deterministic-flow variant.
    """
    requested = config.resolved_snapshot_times()
    indices = [_snap_index(t, config.steps) for t in requested]
    times, sum_x, sum_sq, sum_u_sq, x, snaps, paths = _integrate(
        [table], gmm, config, noise, frozenset(indices), config.record_full_paths
    )
    snapshots = []
    for j in indices:
        block = snaps[j]
        mean, cov = _ensemble_moments(block)
        snapshots.append(
            Snapshot(time=j / config.steps, positions=block, mean=mean, cov=cov)
        )
    return EnsembleRun(
        protocol=table.protocol,
        config=config,
        times=times,
        sum_x=sum_x[0],
        sum_sq=sum_sq[0],
        sum_u_sq=sum_u_sq[0],
        snapshots=snapshots,
        terminal=x[0],
        paths=paths,
    )


def simulate_batch(
    tables: list[GreensTable],
    gmm: GaussianMixture,
    config: SimConfig,
    noise: np.ndarray | None = None,
) -> BatchResult:
    """Advance a shared-beta protocol family under one noise tensor.

    Every member sees identical increments (common random numbers), so
    differences between members reflect the protocols alone.
    """
    if not tables:
        raise ValueError("need at least one table")
    times, sum_x, sum_sq, sum_u_sq, x, _, _ = _integrate(
        tables, gmm, config, noise, frozenset(), False
    )
    return BatchResult(
        times=times,
        dt=config.dt,
        particles=config.particles,
        sum_x=sum_x,
        sum_sq=sum_sq,
        sum_u_sq=sum_u_sq,
        terminal=x,
    )


def mode_assignment(run, gmm: GaussianMixture) -> ModeAssignment:
    """Argmax-responsibility component counts over terminal samples."""
    terminal = run.terminal if isinstance(run, EnsembleRun) else np.asarray(run)
    resp = gmm.log_responsibilities(terminal)
    labels = resp.argmax(axis=1)
    counts = np.bincount(labels, minlength=gmm.n_components)
    return ModeAssignment(counts=counts, frequencies=counts / terminal.shape[0])
