"""Gaussian mixture targets and product-of-experts fusion."""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

__all__ = ["GmmError", "GaussianMixture", "TrustWeights", "poe_fuse"]

_LOG_2PI = math.log(2.0 * math.pi)
_PRUNE_REL = 1e-12
_MAX_FUSED = 20000


class GmmError(ValueError):
    """Invalid mixture data or fusion request."""


@dataclass
class GaussianMixture:
    """Finite Gaussian mixture sum_n w_n N(mu_n, Sigma_n).

    :param weights: shape (N,), positive, summing to 1 (renormalized on
        construction if the sum is off by float noise)
    :param means: shape (N, d)
    :param covs: shape (N, d, d), symmetric positive definite

    Cholesky factors are computed once; all densities go through triangular
    solves.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    chols: np.ndarray = field(init=False, repr=False)  # lower, shape (N, d, d)

    def __post_init__(self) -> None:
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        if self.covs.ndim == 2:
            self.covs = self.covs[None, :, :]
        n, d = self.means.shape
        if self.weights.shape != (n,) or self.covs.shape != (n, d, d):
            raise GmmError("weights, means, covs have inconsistent shapes")
        if np.any(self.weights <= 0.0) or not np.all(np.isfinite(self.weights)):
            raise GmmError("mixture weights must be positive and finite")
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-6:
            raise GmmError(f"mixture weights sum to {total}, expected 1")
        self.weights = self.weights / total
        if not np.allclose(self.covs, np.swapaxes(self.covs, 1, 2), atol=1e-12):
            raise GmmError("covariances must be symmetric")
        try:
            self.chols = np.linalg.cholesky(self.covs)
        except np.linalg.LinAlgError as exc:
            raise GmmError("covariances must be positive definite") from exc

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_densities(self, x) -> np.ndarray:
        """Per-component log N(x; mu_n, Sigma_n).

        :param x: shape (d,) or (m, d)
        :returns: shape (N,) or (m, N)
        """
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        m = pts.shape[0]
        out = np.empty((m, self.n_components))
        for n in range(self.n_components):
            ell = self.chols[n]
            diff = pts - self.means[n]
            sol = solve_triangular(ell, diff.T, lower=True)
            out[:, n] = (
                -0.5 * np.sum(sol * sol, axis=0)
                - np.sum(np.log(np.diag(ell)))
                - 0.5 * self.dim * _LOG_2PI
            )
        return out if np.asarray(x).ndim > 1 else out[0]

    def log_density(self, x) -> np.ndarray:
        """Mixture log-density at x, shape () for a single point else (m,)."""
        comp = np.atleast_2d(self.component_log_densities(x))
        vals = logsumexp(comp + np.log(self.weights), axis=1)
        return vals if np.asarray(x).ndim > 1 else float(vals[0])

    def log_responsibilities(self, x) -> np.ndarray:
        """log p(component | x), same leading shape as component_log_densities."""
        comp = np.atleast_2d(self.component_log_densities(x)) + np.log(self.weights)
        out = comp - logsumexp(comp, axis=1, keepdims=True)
        return out if np.asarray(x).ndim > 1 else out[0]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw count points; component choice then affine push of normals."""
        idx = rng.choice(self.n_components, size=count, p=self.weights)
        z = rng.standard_normal((count, self.dim))
        return self.means[idx] + np.einsum("nij,nj->ni", self.chols[idx], z)

    def mean_and_cov(self):
        """Mixture mean and covariance (moment-matched single Gaussian)."""
        mean = self.weights @ self.means
        cov = np.zeros((self.dim, self.dim))
        for n in range(self.n_components):
            dm = self.means[n] - mean
            cov += self.weights[n] * (self.covs[n] + np.outer(dm, dm))
        return mean, cov

    def to_json(self) -> str:
        payload = {
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covs.tolist(),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GaussianMixture":
        payload = json.loads(text)
        try:
            gmm = cls(
                np.asarray(payload["weights"], dtype=float),
                np.asarray(payload["means"], dtype=float),
                np.asarray(payload["covariances"], dtype=float),
            )
        except KeyError as exc:
            raise GmmError(f"mixture JSON missing key {exc}") from exc
        if gmm.dim != int(payload["dim"]):
            raise GmmError("mixture JSON dim does not match means shape")
        return gmm


@dataclass(frozen=True)
class TrustWeights:
    """Integer trust exponents for two-expert fusion; not both zero."""

    k1: int
    k2: int

    def __post_init__(self) -> None:
        if self.k1 < 0 or self.k2 < 0 or (self.k1 == 0 and self.k2 == 0):
            raise GmmError("trust weights must be nonnegative and not both zero")


def _precisions(gmm: GaussianMixture) -> np.ndarray:
    eye = np.eye(gmm.dim)
    return np.stack(
        [cho_solve((gmm.chols[n], True), eye) for n in range(gmm.n_components)]
    )


def _log_det_2pi_cov(chol: np.ndarray, d: int) -> float:
    return d * _LOG_2PI + 2.0 * float(np.sum(np.log(np.diag(chol))))


def _log_multinomial(combo) -> float:
    counts = Counter(combo)
    out = math.lgamma(len(combo) + 1)
    for c in counts.values():
        out -= math.lgamma(c + 1)
    return out


def poe_fuse(g1: GaussianMixture, g2: GaussianMixture, trust: TrustWeights) -> GaussianMixture:
    """Fuse two mixtures as the normalized product p1^k1 * p2^k2.

    Expanding the integer powers of each mixture sum gives one Gaussian
    product per multiset of component picks; each product collapses to a
    single Gaussian by the standard identities (precisions add, means are
    precision-weighted, and the scalar mass of the product contributes to
    the fused weight). Components are enumerated as multisets with
    multinomial multiplicity, so permutations of the same picks are merged
    exactly rather than summed after the fact. Fused components with
    relative weight below 1e-12 are pruned and the rest renormalized.
    """
    if g1.dim != g2.dim:
        raise GmmError("experts must share a dimension")
    d = g1.dim
    n_tuples = math.comb(g1.n_components + trust.k1 - 1, trust.k1) * math.comb(
        g2.n_components + trust.k2 - 1, trust.k2
    )
    if n_tuples > _MAX_FUSED:
        raise GmmError(f"fusion would expand to {n_tuples} components")

    prec1 = _precisions(g1)
    prec2 = _precisions(g2)
    logdet1 = [_log_det_2pi_cov(g1.chols[n], d) for n in range(g1.n_components)]
    logdet2 = [_log_det_2pi_cov(g2.chols[n], d) for n in range(g2.n_components)]
    logw1 = np.log(g1.weights)
    logw2 = np.log(g2.weights)

    combos1 = list(itertools.combinations_with_replacement(range(g1.n_components), trust.k1))
    combos2 = list(itertools.combinations_with_replacement(range(g2.n_components), trust.k2))

    log_w = []
    means = []
    covs = []
    for c1 in combos1:
        for c2 in combos2:
            lam = np.zeros((d, d))
            h = np.zeros(d)
            log_mass = _log_multinomial(c1) + _log_multinomial(c2)
            for i in c1:
                lam += prec1[i]
                h += prec1[i] @ g1.means[i]
                log_mass += logw1[i] - 0.5 * (g1.means[i] @ prec1[i] @ g1.means[i]) - 0.5 * logdet1[i]
            for j in c2:
                lam += prec2[j]
                h += prec2[j] @ g2.means[j]
                log_mass += logw2[j] - 0.5 * (g2.means[j] @ prec2[j] @ g2.means[j]) - 0.5 * logdet2[j]
            chol_lam = np.linalg.cholesky(lam)
            half = solve_triangular(chol_lam, h, lower=True)
            mu = solve_triangular(chol_lam.T, half, lower=False)
            # log normalizer of exp(-x'Lam x/2 + h'x): 0.5 h'mu + 0.5 logdet(2pi Lam^-1)
            log_mass += 0.5 * float(h @ mu)
            log_mass += 0.5 * (d * _LOG_2PI) - float(np.sum(np.log(np.diag(chol_lam))))
            cov = cho_solve((chol_lam, True), np.eye(d))
            log_w.append(log_mass)
            means.append(mu)
            covs.append(0.5 * (cov + cov.T))

    log_w = np.asarray(log_w)
    log_w -= logsumexp(log_w)
    w = np.exp(log_w)
    keep = w >= _PRUNE_REL
    w = w[keep]
    w /= w.sum()
    return GaussianMixture(w, np.asarray(means)[keep], np.asarray(covs)[keep])
