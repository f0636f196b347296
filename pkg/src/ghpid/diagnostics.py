"""Guidance diagnostics: adherence, integrated costs, terminal fidelity.

Everything here is pure post-processing of EnsembleRun sufficient
statistics, so a single simulation can be scored against any number of
reference protocols after the fact. Curve integrals use the trapezoid rule
on the midpoint-stamp series; guide_cost is defined as exactly that
integral, which is what makes the adherence-curve consistency identity
hold to rounding rather than to O(dt).

Terminal fidelity is a two-sample energy-distance test: the observed
statistic (terminal ensemble vs a fresh target draw) is compared against
the 95th percentile of a target-vs-target null built from fresh resampled
pairs. Mode balance is checked separately with binomial confidence
intervals around the target weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .protocol import PwcProtocol
from .sampler import EnsembleRun, ModeAssignment, mode_assignment, rng_lane
from .target import GaussianMixture

__all__ = [
    "DiagnosticError",
    "FidelityReport",
    "DiagnosticReport",
    "mean_sq_deviation",
    "adherence_curve",
    "guide_cost",
    "drift_effort",
    "pid_cost",
    "cross_entropy",
    "energy_distance",
    "fidelity_null",
    "fidelity",
    "report",
]

_DIST_BLOCK = 2048


class DiagnosticError(ValueError):
    """Run and reference disagree on shape, or a parameter is out of range."""


def mean_sq_deviation(
    times: np.ndarray,
    sum_x: np.ndarray,
    sum_sq: np.ndarray,
    particles: int,
    reference: PwcProtocol,
) -> np.ndarray:
    """Per-step E||x - nu_ref(t)||^2 from ensemble sums.

    sum_x may carry leading batch axes: (..., T, d) with sum_sq (..., T).
    """
    if sum_x.shape[-1] != reference.dim:
        raise DiagnosticError(
            f"run dimension {sum_x.shape[-1]} != reference dimension {reference.dim}"
        )
    nu = reference.nu[reference.piece_index(times)]  # (T, d)
    cross = np.einsum("...td,td->...t", sum_x, nu)
    return (sum_sq - 2.0 * cross + particles * np.einsum("td,td->t", nu, nu)) / particles


def adherence_curve(run: EnsembleRun, reference: PwcProtocol):
    """Instantaneous guide cost A(t) = (beta_ref/2) E||x - nu_ref||^2.

    :returns: (times, values), both (T,)
    """
    msd = mean_sq_deviation(run.times, run.sum_x, run.sum_sq, run.particles, reference)
    beta = reference.beta[reference.piece_index(run.times)]
    return run.times, 0.5 * beta * msd


def guide_cost(run: EnsembleRun, reference: PwcProtocol) -> float:
    """Integrated guide cost against a reference protocol (trapezoid)."""
    times, values = adherence_curve(run, reference)
    return float(np.trapezoid(values, times))


def drift_effort(run: EnsembleRun) -> float:
    """Integrated mean squared control, integral of E||u||^2 dt."""
    return float(np.trapezoid(run.sum_u_sq / run.particles, run.times))


def pid_cost(run: EnsembleRun) -> float:
    """Kinetic-plus-potential cost against the run's own protocol."""
    return 0.5 * drift_effort(run) + guide_cost(run, run.protocol)


def cross_entropy(run, gmm: GaussianMixture) -> float:
    """Terminal cross entropy -mean log p_tar(x_1)."""
    terminal = run.terminal if isinstance(run, EnsembleRun) else np.asarray(run)
    return float(-np.mean(gmm.log_density(terminal)))


def _pair_sum(x: np.ndarray, y: np.ndarray) -> float:
    total = 0.0
    for lo in range(0, x.shape[0], _DIST_BLOCK):
        total += float(cdist(x[lo : lo + _DIST_BLOCK], y).sum())
    return total


def energy_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample energy statistic 2 E|X-Y| - E|X-X'| - E|Y-Y'|.

    Within-sample means exclude the diagonal (U-statistic), so the value is
    zero in expectation only asymptotically; the fidelity test calibrates
    against a resampled null rather than against zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise DiagnosticError("energy distance needs at least two samples per side")
    cross = _pair_sum(x, y) / (m * n)
    within_x = _pair_sum(x, x) / (m * (m - 1))
    within_y = _pair_sum(y, y) / (n * (n - 1))
    return 2.0 * cross - within_x - within_y


def fidelity_null(
    gmm: GaussianMixture, size: int, resamples: int = 200, seed: int = 0
) -> np.ndarray:
    """Null energy statistics from fresh target-vs-target pairs, sorted."""
    if resamples < 20:
        raise DiagnosticError("need at least 20 resamples for a usable null")
    rng = rng_lane(seed, 1)
    stats = np.empty(resamples)
    for j in range(resamples):
        xs = gmm.sample(size, rng)
        ys = gmm.sample(size, rng)
        stats[j] = energy_distance(xs, ys)
    stats.sort()
    return stats


@dataclass
class FidelityReport:
    energy_stat: float
    null_q95: float
    passed: bool
    modes: ModeAssignment
    mode_dev: np.ndarray  # |freq - weight| per mode
    mode_bound: np.ndarray  # 3 binomial SEs per mode
    modes_in_ci: bool

    def to_dict(self) -> dict:
        return {
            "energy_stat": self.energy_stat,
            "null_q95": self.null_q95,
            "passed": bool(self.passed),
            "mode_counts": [int(c) for c in self.modes.counts],
            "mode_frequencies": [float(f) for f in self.modes.frequencies],
            "mode_dev": [float(v) for v in self.mode_dev],
            "mode_bound": [float(v) for v in self.mode_bound],
            "modes_in_ci": bool(self.modes_in_ci),
        }


def fidelity(
    run,
    gmm: GaussianMixture,
    resamples: int = 200,
    seed: int = 0,
    null: np.ndarray | None = None,
) -> FidelityReport:
    """Terminal-law test: energy distance vs resampled null, plus mode CIs.

    :param null: precomputed fidelity_null output; lets one null serve many
        runs against the same target and sample size.
    """
    terminal = run.terminal if isinstance(run, EnsembleRun) else np.asarray(run)
    m = terminal.shape[0]
    if m < 100:
        raise DiagnosticError("fidelity needs at least 100 terminal samples")
    if null is None:
        null = fidelity_null(gmm, m, resamples=resamples, seed=seed)
    fresh = gmm.sample(m, rng_lane(seed, 2))
    stat = energy_distance(terminal, fresh)
    q95 = float(np.quantile(null, 0.95))
    modes = mode_assignment(terminal, gmm)
    dev = np.abs(modes.frequencies - gmm.weights)
    bound = 3.0 * np.sqrt(gmm.weights * (1.0 - gmm.weights) / m)
    return FidelityReport(
        energy_stat=float(stat),
        null_q95=q95,
        passed=bool(stat <= q95),
        modes=modes,
        mode_dev=dev,
        mode_bound=bound,
        modes_in_ci=bool(np.all(dev <= bound)),
    )


@dataclass
class DiagnosticReport:
    j_guide: float
    drift_effort: float
    pid_cost: float
    cross_entropy: float
    adherence_times: np.ndarray
    adherence_values: np.ndarray
    fidelity: FidelityReport | None = None

    def to_dict(self) -> dict:
        out = {
            "j_guide": self.j_guide,
            "drift_effort": self.drift_effort,
            "pid_cost": self.pid_cost,
            "cross_entropy": self.cross_entropy,
        }
        if self.fidelity is not None:
            out["fidelity"] = self.fidelity.to_dict()
        return out


def report(
    run: EnsembleRun,
    gmm: GaussianMixture,
    reference: PwcProtocol | None = None,
    resamples: int = 200,
    seed: int = 0,
    null: np.ndarray | None = None,
    with_fidelity: bool = True,
) -> DiagnosticReport:
    """Full diagnostic sweep for one run; reference defaults to its own protocol."""
    ref = reference if reference is not None else run.protocol
    times, values = adherence_curve(run, ref)
    fid = fidelity(run, gmm, resamples=resamples, seed=seed, null=null) if with_fidelity else None
    return DiagnosticReport(
        j_guide=float(np.trapezoid(values, times)),
        drift_effort=drift_effort(run),
        pid_cost=pid_cost(run),
        cross_entropy=cross_entropy(run, gmm),
        adherence_times=times,
        adherence_values=values,
        fidelity=fid,
    )
