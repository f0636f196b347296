"""Protocol learning: desiderata following and multi-expert consensus.

The decision variable is the stack of guide centers; the stiffness backbone
stays fixed. Objectives are Monte-Carlo estimates from ensemble runs, so
gradients use common random numbers: every probe protocol in one estimate
is advanced under the same pre-drawn noise tensor, and because probes share
the stiffness backbone they all ride through simulate_batch in a single
vectorized pass. Central differences over the free coordinates are the
default; SPSA is the two-evaluation alternative for large parameter counts.

The optimizer is Adam with a plateau rule: when the best objective seen so
far fails to improve for `patience` consecutive iterations, the learning
rate is multiplied by `decay`. Each iteration draws a fresh noise seed from
a master stream, so the whole trajectory is reproducible from one seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagnostics import cross_entropy, mean_sq_deviation
from .greens import build_table
from .protocol import PwcProtocol
from .sampler import BatchResult, SimConfig, particle_noise, rng_lane, simulate_batch
from .target import GaussianMixture, TrustWeights, poe_fuse

__all__ = [
    "LearnError",
    "OptimizeAborted",
    "LearnConfig",
    "DesiderataTask",
    "ConsensusTask",
    "OptimizeResult",
    "gradient",
    "optimize",
    "history_to_rows",
]

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8

_HISTORY_COLUMNS = ("iteration", "J", "J_des", "J_CE", "J_reg", "lr")


class LearnError(ValueError):
    """Invalid learning configuration or task."""


class OptimizeAborted(RuntimeError):
    """Optimization stopped early; carries the history up to the failure."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class LearnConfig:
    """Optimization budget, regularizer weights, and gradient method."""

    iterations: int = 200
    particles: int = 4000
    steps: int = 1000
    seed: int = 0
    lr: float = 0.05
    patience: int = 10
    decay: float = 0.5
    lambda_ce: float = 0.0
    lambda_nu: float = 0.0
    lambda_smooth: float = 0.0
    lambda_drift: float = 0.0
    method: str = "fd_crn"
    fd_step: float = 0.02

    def __post_init__(self):
        if self.iterations < 1:
            raise LearnError("iterations must be positive")
        if min(self.lambda_ce, self.lambda_nu, self.lambda_smooth, self.lambda_drift) < 0:
            raise LearnError("regularizer weights must be nonnegative")
        if self.patience < 1:
            raise LearnError("patience must be at least 1")
        if not 0.0 < self.decay < 1.0:
            raise LearnError("decay must lie in (0, 1)")
        if self.method not in ("fd_crn", "spsa"):
            raise LearnError(f"unknown gradient method {self.method!r}")
        if self.fd_step <= 0.0:
            raise LearnError("fd step must be positive")

    def sim_config(self) -> SimConfig:
        return SimConfig(steps=self.steps, particles=self.particles, seed=self.seed)


@dataclass
class DesiderataTask:
    """Follow an expert guide while sampling the expert's own target."""

    expert: PwcProtocol
    target: GaussianMixture

    def __post_init__(self):
        if self.expert.dim != self.target.dim:
            raise LearnError("expert and target dimensions differ")

    def init_theta(self) -> np.ndarray:
        return self.expert.nu.copy()

    def make_protocol(self, theta: np.ndarray) -> PwcProtocol:
        return PwcProtocol.uniform(self.expert.beta, np.asarray(theta, dtype=float))

    def objective_batch(self, config: LearnConfig):
        expert, target = self.expert, self.target
        lam_ce, lam_nu = config.lambda_ce, config.lambda_nu
        sim = config.sim_config()

        def evaluate(thetas: np.ndarray, noise: np.ndarray | None) -> dict:
            tables = [build_table(self.make_protocol(th)) for th in thetas]
            batch = simulate_batch(tables, target, sim, noise=noise)
            j_des = _guide_cost_batch(batch, expert)
            j_ce = np.array([cross_entropy(term, target) for term in batch.terminal])
            j_reg = np.einsum("pkd,pkd->p", thetas - expert.nu, thetas - expert.nu)
            return {
                "j": j_des + lam_ce * j_ce + lam_nu * j_reg,
                "j_des": j_des,
                "j_ce": j_ce,
                "j_reg": j_reg,
            }

        return evaluate


@dataclass
class ConsensusTask:
    """One protocol serving two experts' guides and their fused target.

    Each expert contributes its guide potential weighted by the trust it is
    granted; sampling targets the product-of-experts fusion under the same
    trust pair.
    """

    experts: tuple[tuple[PwcProtocol, GaussianMixture], ...]
    trust: TrustWeights
    beta: np.ndarray | None = None
    fused: GaussianMixture = field(init=False)

    def __post_init__(self):
        if len(self.experts) != 2:
            raise LearnError("consensus task takes exactly two experts")
        (p1, g1), (p2, g2) = self.experts
        if not (p1.dim == p2.dim == g1.dim == g2.dim):
            raise LearnError("expert dimensions differ")
        if p1.pieces != p2.pieces:
            raise LearnError("expert protocols must share the partition")
        if self.beta is None:
            self.beta = 0.5 * (p1.beta + p2.beta)
        else:
            self.beta = np.asarray(self.beta, dtype=float)
            if self.beta.shape != p1.beta.shape:
                raise LearnError("beta backbone length does not match the partition")
        self.fused = poe_fuse(g1, g2, self.trust)

    def init_theta(self) -> np.ndarray:
        (p1, _), (p2, _) = self.experts
        k1, k2 = self.trust.k1, self.trust.k2
        return (k1 * p1.nu + k2 * p2.nu) / (k1 + k2)

    def make_protocol(self, theta: np.ndarray) -> PwcProtocol:
        return PwcProtocol.uniform(self.beta, np.asarray(theta, dtype=float))

    def objective_batch(self, config: LearnConfig):
        (p1, _), (p2, _) = self.experts
        k1, k2 = self.trust.k1, self.trust.k2
        lam_ce, lam_smooth, lam_drift = (
            config.lambda_ce,
            config.lambda_smooth,
            config.lambda_drift,
        )
        fused = self.fused
        sim = config.sim_config()

        def evaluate(thetas: np.ndarray, noise: np.ndarray | None) -> dict:
            tables = [build_table(self.make_protocol(th)) for th in thetas]
            batch = simulate_batch(tables, fused, sim, noise=noise)
            j_pot = k1 * _guide_cost_batch(batch, p1) + k2 * _guide_cost_batch(batch, p2)
            j_ce = np.array([cross_entropy(term, fused) for term in batch.terminal])
            second = thetas[:, 2:] - 2.0 * thetas[:, 1:-1] + thetas[:, :-2]
            j_smooth = np.einsum("pkd,pkd->p", second, second)
            j_drift = np.trapezoid(batch.sum_u_sq / batch.particles, batch.times, axis=-1)
            return {
                "j": j_pot + lam_ce * j_ce + lam_smooth * j_smooth + lam_drift * j_drift,
                "j_des": j_pot,
                "j_ce": j_ce,
                "j_reg": lam_smooth * j_smooth + lam_drift * j_drift,
            }

        return evaluate


def _guide_cost_batch(batch: BatchResult, reference: PwcProtocol) -> np.ndarray:
    msd = mean_sq_deviation(
        batch.times, batch.sum_x, batch.sum_sq, batch.particles, reference
    )
    beta = reference.beta[reference.piece_index(batch.times)]
    return np.trapezoid(0.5 * beta * msd, batch.times, axis=-1)


def _free_indices(theta: np.ndarray, free_mask: np.ndarray | None) -> np.ndarray:
    if free_mask is None:
        return np.arange(theta.size)
    mask = np.asarray(free_mask, dtype=bool)
    if mask.shape != theta.shape:
        raise LearnError("free mask shape does not match theta")
    return np.flatnonzero(mask.ravel())


def gradient(
    objective_batch,
    theta: np.ndarray,
    config: LearnConfig,
    free_mask: np.ndarray | None = None,
    noise: np.ndarray | None = None,
    direction_rng: np.random.Generator | None = None,
):
    """Objective value at theta and a CRN derivative estimate over free coords.

    :param objective_batch: callable (thetas (P, K, d), noise) -> dict with a
        "j" vector of length P; probe 0 is always theta itself.
    :param noise: shared increment tensor; drawn from config.seed when omitted.
    :returns: (components dict at theta, grad (K, d) with anchored zeros)
    """
    theta = np.asarray(theta, dtype=float)
    free = _free_indices(theta, free_mask)
    h = config.fd_step
    if noise is None:
        noise = particle_noise(config.seed, config.particles, config.steps, theta.shape[-1])
    flat = theta.ravel()
    if config.method == "fd_crn":
        probes = [flat]
        for idx in free:
            for sign in (h, -h):
                probe = flat.copy()
                probe[idx] += sign
                probes.append(probe)
        stack = np.asarray(probes).reshape(-1, *theta.shape)
        vals = objective_batch(stack, noise)
        j = np.asarray(vals["j"], dtype=float)
        if not np.isfinite(j).all():
            raise LearnError("objective is not finite at a probe point")
        grad_flat = np.zeros(theta.size)
        grad_flat[free] = (j[1::2] - j[2::2]) / (2.0 * h)
    else:  # spsa
        rng = direction_rng if direction_rng is not None else rng_lane(config.seed, 1)
        delta = np.zeros(theta.size)
        delta[free] = rng.choice([-1.0, 1.0], size=free.size)
        stack = np.stack([flat, flat + h * delta, flat - h * delta]).reshape(
            -1, *theta.shape
        )
        vals = objective_batch(stack, noise)
        j = np.asarray(vals["j"], dtype=float)
        if not np.isfinite(j).all():
            raise LearnError("objective is not finite at a probe point")
        grad_flat = (j[1] - j[2]) / (2.0 * h) * delta
    components = {key: float(np.asarray(val)[0]) for key, val in vals.items()}
    return components, grad_flat.reshape(theta.shape)


@dataclass
class OptimizeResult:
    theta: np.ndarray
    best_j: float
    history: list[dict]
    protocol: PwcProtocol | None


def optimize(
    task,
    config: LearnConfig,
    theta0: np.ndarray | None = None,
    free_mask: np.ndarray | None = None,
) -> OptimizeResult:
    """Adam loop with plateau-halved learning rate; returns the best theta.

    :param task: DesiderataTask, ConsensusTask, or a bare objective_batch
        callable (thetas, noise) -> {"j": (P,), ...} for surrogate tests.
    :param theta0: start point; defaults to the task's init_theta().
    :param free_mask: boolean (K, d) of trainable coordinates. For task
        objects the default anchors the first center at its start value;
        bare callables default to all coordinates free.
    """
    if callable(task) and not hasattr(task, "objective_batch"):
        objective_batch = task
        if theta0 is None:
            raise LearnError("theta0 is required for a bare objective")
        theta = np.asarray(theta0, dtype=float).copy()
        make_protocol = None
        if free_mask is None:
            free_mask = np.ones(theta.shape, dtype=bool)
    else:
        objective_batch = task.objective_batch(config)
        theta = np.asarray(theta0 if theta0 is not None else task.init_theta(), dtype=float).copy()
        make_protocol = task.make_protocol
    if theta.ndim != 2:
        raise LearnError("theta must be a (pieces, dim) stack of centers")
    if free_mask is None:
        free_mask = np.ones(theta.shape, dtype=bool)
        free_mask[0] = False
    free = _free_indices(theta, free_mask)
    if free.size == 0:
        raise LearnError("no trainable coordinates")

    master = rng_lane(config.seed, 0)
    spsa_rng = rng_lane(config.seed, 1)
    lr = config.lr
    m_acc = np.zeros(theta.size)
    v_acc = np.zeros(theta.size)
    best_j = np.inf
    best_theta = theta.copy()
    stall = 0
    history: list[dict] = []

    for it in range(config.iterations):
        iter_seed = int(master.integers(0, 2**63))
        noise = particle_noise(iter_seed, config.particles, config.steps, theta.shape[-1])
        try:
            components, grad = gradient(
                objective_batch,
                theta,
                config,
                free_mask=free_mask,
                noise=noise,
                direction_rng=spsa_rng,
            )
        except Exception as exc:
            raise OptimizeAborted(f"iteration {it}: {exc}", history) from exc

        j = components["j"]
        if j < best_j:
            best_j = j
            best_theta = theta.copy()
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                lr *= config.decay
                stall = 0

        history.append(
            {
                "iteration": it,
                "J": j,
                "J_des": components.get("j_des", 0.0),
                "J_CE": components.get("j_ce", 0.0),
                "J_reg": components.get("j_reg", 0.0),
                "lr": lr,
            }
        )

        g = grad.ravel()
        m_acc = _ADAM_B1 * m_acc + (1.0 - _ADAM_B1) * g
        v_acc = _ADAM_B2 * v_acc + (1.0 - _ADAM_B2) * g * g
        m_hat = m_acc / (1.0 - _ADAM_B1 ** (it + 1))
        v_hat = v_acc / (1.0 - _ADAM_B2 ** (it + 1))
        step = lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        flat = theta.ravel()
        flat[free] -= step[free]
        theta = flat.reshape(theta.shape)

    return OptimizeResult(
        theta=best_theta,
        best_j=float(best_j),
        history=history,
        protocol=make_protocol(best_theta) if make_protocol is not None else None,
    )


def history_to_rows(history: list[dict]) -> tuple[tuple[str, ...], list[tuple]]:
    """History as (header, rows) ready for CSV export."""
    rows = [tuple(entry[col] for col in _HISTORY_COLUMNS) for entry in history]
    return _HISTORY_COLUMNS, rows
