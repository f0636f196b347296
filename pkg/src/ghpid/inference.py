"""Reweighted-target inference: probe posterior, denoiser, optimal drift.

Conditioning the guided bridge on its terminal law tilts the target by the
ratio of Green kernels,

    q_t(y | x) ~ p_tar(y) * G_t^-(x | y) / G_1^+(y | 0),

and for the Gaussian kernel family that ratio collapses to one isotropic
Gaussian factor N(y; mu_rho(x), I / K_t): the "reweighting" Gaussian. Its
precision is K_t = c_t - a_1^+ and its mean is affine in the probe point,

    mu_rho(x) = nu_t + (b_t (x - nu_t) + psi_t) / K_t,
    psi_t = s_t - s_1^+ - a_1^+ (nu_last - nu_t),

where the last term re-centers the terminal forward coefficients from the
final piece's guide center onto nu_t; without it the two linear terms live
in different frames and every protocol with a center jump would be biased.

Against a Gaussian-mixture target the tilted posterior stays a mixture:
component n keeps its index with weight ~ w_n N(mu_rho; mu_n, Sigma_n + I/K)
and is sharpened to mean (I + K Sigma_n)^{-1} (mu_n + K Sigma_n mu_rho) and
covariance Sigma_n (I + K Sigma_n)^{-1}. All solves go through Cholesky
factors; no matrix is inverted explicitly.

The optimal drift is the gradient of the conditioned log-normalizer,

    u(t, x) = -a_t (x - nu_t) + b_t (yhat(x) - nu_t) + r_t,

with yhat the posterior mean of the terminal point. The same vector can be
written b_t (yhat(x) - anchor(x)) around the drift's zero anchor
anchor(x) = nu_t + (a_t (x - nu_t) - r_t) / b_t; drift_compact computes that
route for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .greens import BackwardCoeffs, GreensTable, backward_at, terminal_forward
from .target import GaussianMixture

__all__ = [
    "ReweightError",
    "ReweightState",
    "ProbePosterior",
    "reweight",
    "denoise_mean",
    "posterior",
    "yhat",
    "drift",
    "drift_anchor",
    "drift_compact",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ReweightError(RuntimeError):
    """Reweighting precision K_t is not positive."""


@dataclass
class ReweightState:
    """Affine description of the reweighting Gaussian at one time.

    mean(x) = offset + gain * (x - nu); covariance = I / k_precision.
    """

    t: float
    k_precision: float
    gain: float
    offset: np.ndarray  # shape (d,)
    psi: np.ndarray  # shape (d,)
    bw: BackwardCoeffs

    @property
    def nu(self) -> np.ndarray:
        return self.bw.nu

    def mean(self, x) -> np.ndarray:
        """Reweighting mean mu_rho at probe point(s) x, shape (..., d)."""
        x = np.asarray(x, dtype=float)
        return self.offset + self.gain * (x - self.nu)


def reweight(table: GreensTable, t: float) -> ReweightState:
    """Reweighting Gaussian at time t; raises ReweightError if K_t <= 0.

    K_t = integral of b^2 from 0 to t, so it is positive for every t inside
    the band; a nonpositive value signals a corrupted table.
    """
    bw = backward_at(table, t)
    a_one, s_one = terminal_forward(table)
    k_prec = bw.c - a_one
    if not k_prec > 0.0:
        raise ReweightError(f"reweighting precision {k_prec} at t={t}; table is inconsistent")
    nu_last = table.protocol.nu[-1]
    psi = bw.s - s_one - a_one * (nu_last - bw.nu)
    return ReweightState(
        t=float(t),
        k_precision=float(k_prec),
        gain=float(bw.b / k_prec),
        offset=bw.nu + psi / k_prec,
        psi=psi,
        bw=bw,
    )


@dataclass
class ProbePosterior:
    """Tilted mixture over the terminal point for a batch of probe points."""

    state: ReweightState
    gmm: GaussianMixture
    log_weights: np.ndarray  # shape (m, N)
    mu_tilde: np.ndarray  # shape (m, N, d)
    scalar: bool  # single probe point supplied

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        return w[0] if self.scalar else w

    @cached_property
    def cov_tilde(self) -> np.ndarray:
        """Sharpened component covariances Sigma_n (I + K Sigma_n)^{-1}, (N, d, d)."""
        gmm = self.gmm
        k = self.state.k_precision
        out = np.empty_like(gmm.covs)
        eye = np.eye(gmm.dim)
        for n in range(gmm.n_components):
            chol_a = np.linalg.cholesky(eye + k * gmm.covs[n])
            sig = cho_solve((chol_a, True), gmm.covs[n])
            out[n] = 0.5 * (sig + sig.T)
        return out

    def yhat(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        vals = np.einsum("mn,mnd->md", w, self.mu_tilde)
        return vals[0] if self.scalar else vals


def _as_batch(x, dim: int):
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[-1] != dim:
        raise ValueError(f"probe points have dimension {pts.shape[-1]}, expected {dim}")
    return pts, scalar


def _mixture_posterior(k_prec: float, mu_rho: np.ndarray, gmm: GaussianMixture):
    """Shared core: tilt gmm by N(y; mu_rho_i, I/k) for a batch of means.

    Returns (log_weights (m, N), mu_tilde (m, N, d)). One Cholesky per
    component serves the whole batch.
    """
    m = mu_rho.shape[0]
    n_comp, d = gmm.n_components, gmm.dim
    eye = np.eye(d)
    log_w = np.empty((m, n_comp))
    mu_t = np.empty((m, n_comp, d))
    for n in range(n_comp):
        chol_s = np.linalg.cholesky(gmm.covs[n] + eye / k_prec)
        diff = mu_rho - gmm.means[n]
        sol = solve_triangular(chol_s, diff.T, lower=True)
        log_w[:, n] = (
            math.log(gmm.weights[n])
            - 0.5 * np.sum(sol * sol, axis=0)
            - np.sum(np.log(np.diag(chol_s)))
            - 0.5 * d * _LOG_2PI
        )
        chol_a = np.linalg.cholesky(eye + k_prec * gmm.covs[n])
        # einsum keeps the contraction off BLAS so results cannot depend on
        # the thread count
        rhs = gmm.means[n][None, :] + k_prec * np.einsum(
            "mi,ji->mj", mu_rho, gmm.covs[n]
        )
        mu_t[:, n, :] = cho_solve((chol_a, True), rhs.T).T
    log_w -= logsumexp(log_w, axis=1, keepdims=True)
    return log_w, mu_t


def denoise_mean(k_prec: float, mu_rho: np.ndarray, gmm: GaussianMixture) -> np.ndarray:
    """Posterior terminal mean for a flat batch of reweighting means.

    Hot-loop entry point: callers that already know (K_t, mu_rho) skip the
    ReweightState plumbing. mu_rho must be (m, d); returns (m, d).
    """
    log_w, mu_t = _mixture_posterior(k_prec, mu_rho, gmm)
    return np.einsum("mn,mnd->md", np.exp(log_w), mu_t)


def posterior(state: ReweightState, gmm: GaussianMixture, x) -> ProbePosterior:
    """Tilted terminal mixture at probe point(s) x, shape (d,) or (m, d)."""
    pts, scalar = _as_batch(x, gmm.dim)
    mu_rho = state.mean(pts)
    log_w, mu_t = _mixture_posterior(state.k_precision, mu_rho, gmm)
    return ProbePosterior(state=state, gmm=gmm, log_weights=log_w, mu_tilde=mu_t, scalar=scalar)


def yhat(state: ReweightState, gmm: GaussianMixture, x) -> np.ndarray:
    """Posterior mean of the terminal point: the denoised estimate at x."""
    return posterior(state, gmm, x).yhat()


def drift(state: ReweightState, gmm: GaussianMixture, x) -> np.ndarray:
    """Optimal drift at probe point(s) x (gradient of the log-normalizer)."""
    pts, scalar = _as_batch(x, gmm.dim)
    bw = state.bw
    yh = posterior(state, gmm, pts).yhat()
    u = bw.b * (yh - bw.nu) - bw.a * (pts - bw.nu) + bw.r
    return u[0] if scalar else u


def drift_anchor(state: ReweightState, x) -> np.ndarray:
    """Zero anchor of the drift: u = b (yhat - anchor) vanishes iff yhat hits it."""
    x = np.asarray(x, dtype=float)
    bw = state.bw
    return bw.nu + (bw.a * (x - bw.nu) - bw.r) / bw.b


def drift_compact(state: ReweightState, gmm: GaussianMixture, x) -> np.ndarray:
    """Drift via the anchor route; equal to drift() up to rounding."""
    pts, scalar = _as_batch(x, gmm.dim)
    yh = posterior(state, gmm, pts).yhat()
    u = state.bw.b * (yh - drift_anchor(state, pts))
    return u[0] if scalar else u
