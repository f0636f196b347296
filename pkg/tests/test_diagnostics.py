"""Diagnostics checks: costs, adherence, cross entropy, fidelity gate.

Reference numbers:
  * N(0, I_2) has differential entropy 1 + log(2 pi) = 2.8378770664093453,
    which equals the cross entropy of the law against itself; shifting the
    samples by m adds |m|^2 / 2.
  * All other assertions are identities (trapezoid consistency, pinned
    ensembles, nonnegativity) or calibration properties of the energy test.
"""

import numpy as np
import pytest

from ghpid.diagnostics import (
    DiagnosticError,
    adherence_curve,
    cross_entropy,
    drift_effort,
    energy_distance,
    fidelity,
    fidelity_null,
    guide_cost,
    mean_sq_deviation,
    pid_cost,
    report,
)
from ghpid.greens import build_table
from ghpid.protocol import PwcProtocol
from ghpid.sampler import EnsembleRun, SimConfig, rng_lane, simulate
from ghpid.target import GaussianMixture

STD_NORMAL_H = 1.0 + np.log(2.0 * np.pi)

PROTO = PwcProtocol.uniform([6.0, 2.5, 9.0], [[0.0, 0.0], [1.5, -1.0], [3.0, 0.5]])
TARGET = GaussianMixture(
    weights=np.array([0.5, 0.5]),
    means=np.array([[3.0, 1.0], [3.0, -1.0]]),
    covs=np.array([0.09 * np.eye(2), 0.09 * np.eye(2)]),
)


@pytest.fixture(scope="module")
def run():
    cfg = SimConfig(steps=300, particles=1000, seed=13)
    return simulate(build_table(PROTO), TARGET, cfg)


def _pinned_run(reference: PwcProtocol, steps: int = 200, particles: int = 7):
    """Synthetic ensemble whose particles all sit exactly on the guide."""
    cfg = SimConfig(steps=steps, particles=particles, seed=0)
    times = (np.arange(steps) + 0.5) * cfg.dt
    nu = reference.nu[reference.piece_index(times)]
    return EnsembleRun(
        protocol=reference,
        config=cfg,
        times=times,
        sum_x=particles * nu,
        sum_sq=particles * np.einsum("td,td->t", nu, nu),
        sum_u_sq=np.zeros(steps),
        snapshots=[],
        terminal=np.tile(nu[-1], (particles, 1)),
    )


def test_guide_cost_is_adherence_trapezoid(run):
    times, values = adherence_curve(run, PROTO)
    want = np.trapezoid(values, times)
    got = guide_cost(run, PROTO)
    assert abs(got - want) <= 1e-10 * abs(want)


def test_pinned_ensemble_costs_nothing():
    pinned = _pinned_run(PROTO)
    times, values = adherence_curve(pinned, PROTO)
    assert np.abs(values).max() < 1e-12
    assert guide_cost(pinned, PROTO) < 1e-12
    assert drift_effort(pinned) == 0.0


def test_pid_dominates_guide_cost(run):
    assert drift_effort(run) > 0.0
    assert pid_cost(run) >= guide_cost(run, PROTO)


def test_guide_cost_against_other_reference(run):
    # same sums, different centers: displaced reference must cost more
    shifted = PwcProtocol.uniform(PROTO.beta, PROTO.nu + np.array([0.0, 5.0]))
    assert guide_cost(run, shifted) > guide_cost(run, PROTO)
    msd = mean_sq_deviation(run.times, run.sum_x, run.sum_sq, run.particles, shifted)
    assert msd.shape == run.times.shape
    assert np.all(msd >= 0.0)


def test_msd_batch_axes_and_dim_guard(run):
    stacked_x = np.stack([run.sum_x, run.sum_x])
    stacked_sq = np.stack([run.sum_sq, run.sum_sq])
    both = mean_sq_deviation(run.times, stacked_x, stacked_sq, run.particles, PROTO)
    one = mean_sq_deviation(run.times, run.sum_x, run.sum_sq, run.particles, PROTO)
    assert both.shape == (2,) + run.times.shape
    np.testing.assert_array_equal(both[0], one)
    wide = PwcProtocol.uniform(PROTO.beta, np.zeros((3, 4)))
    with pytest.raises(DiagnosticError, match="dimension"):
        mean_sq_deviation(run.times, run.sum_x, run.sum_sq, run.particles, wide)


def test_cross_entropy_standard_normal():
    gmm = GaussianMixture(
        weights=np.array([1.0]), means=np.zeros((1, 2)), covs=np.eye(2)[None]
    )
    draws = rng_lane(123, 0).standard_normal((20000, 2))
    se = 1.0 / np.sqrt(draws.shape[0])
    assert abs(cross_entropy(draws, gmm) - STD_NORMAL_H) < 5.0 * se
    # shift by m: cross entropy grows by |m|^2 / 2
    shift = cross_entropy(draws + np.array([1.0, 0.0]), gmm)
    assert abs(shift - STD_NORMAL_H - 0.5) < 10.0 * se


def test_energy_distance_separates():
    rng = rng_lane(7, 0)
    a = rng.standard_normal((800, 2))
    b = rng.standard_normal((800, 2))
    c = rng.standard_normal((800, 2)) + np.array([1.0, 0.0])
    near = energy_distance(a, b)
    far = energy_distance(a, c)
    assert abs(near) < 0.05
    assert far > 10.0 * abs(near)
    with pytest.raises(DiagnosticError, match="two samples"):
        energy_distance(a[:1], b)


def test_fidelity_calibration_and_power():
    m = 1200
    null = fidelity_null(TARGET, m, resamples=40, seed=5)
    assert null.shape == (40,)
    assert np.all(np.diff(null) >= 0.0)  # sorted
    exact = TARGET.sample(m, rng_lane(31, 0))
    rep = fidelity(exact, TARGET, null=null, seed=6)
    assert rep.passed and rep.modes_in_ci
    shifted = exact + np.array([0.3, 0.0])  # one sigma along the axis
    rep_bad = fidelity(shifted, TARGET, null=null, seed=6)
    assert not rep_bad.passed
    with pytest.raises(DiagnosticError, match="resamples"):
        fidelity_null(TARGET, m, resamples=10, seed=0)


def test_report_round_trip(run):
    null = fidelity_null(TARGET, run.particles, resamples=25, seed=17)
    rep = report(run, TARGET, null=null, seed=17)
    data = rep.to_dict()
    assert data["pid_cost"] == pytest.approx(pid_cost(run))
    assert data["cross_entropy"] == pytest.approx(cross_entropy(run, TARGET))
    assert rep.adherence_times.shape == run.times.shape
    assert rep.j_guide == pytest.approx(guide_cost(run, PROTO))
    assert "fidelity" in data and "energy_stat" in data["fidelity"]
    bare = report(run, TARGET, with_fidelity=False)
    assert bare.fidelity is None
