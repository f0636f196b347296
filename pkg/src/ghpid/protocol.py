"""Piecewise-constant guide protocols and corridor geometry.

A protocol is a uniform partition of [0, 1] into K pieces, each carrying a
stiffness beta_k > 0 and a guide center nu_k in R^d. Pieces are half-open
[t_k, t_{k+1}); t = 1 belongs to the last piece. Protocols are built by
discretizing a continuous corridor description: a centerline s -> nu(s), a
stiffness profile t -> beta(t), and a time warp t -> s(t) that reparametrizes
progress along the centerline.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ProtocolError",
    "CorridorFrame",
    "TimeWarp",
    "PwcProtocol",
    "centerline_eval",
    "stiffness_eval",
    "make_centerline",
    "make_stiffness",
    "discretize",
    "corridor_walls",
]

CENTERLINE_KINDS = ("straight", "v_neck", "s_tunnel", "tanh_s")
STIFFNESS_KINDS = ("constant", "scaled", "sigmoid")


class ProtocolError(ValueError):
    """Invalid protocol data or corridor parameters."""


# ---------------------------------------------------------------------------
# corridor frame and templates
# ---------------------------------------------------------------------------


@dataclass
class CorridorFrame:
    """Endpoints and the axis/normal frame of a planar corridor.

    :param x_in: entry point, shape (d,)
    :param x_out: exit point, shape (d,)

    The unit axis e points from x_in to x_out; the unit normal n is e rotated
    by +90 degrees (d = 2 only; transverse templates need a distinguished
    normal). Endpoints must be distinct.
    """

    x_in: np.ndarray  # shape (d,)
    x_out: np.ndarray  # shape (d,)
    e: np.ndarray = field(init=False)  # unit axis, shape (d,)
    n: np.ndarray = field(init=False)  # unit normal, shape (d,)

    def __post_init__(self) -> None:
        self.x_in = np.asarray(self.x_in, dtype=float)
        self.x_out = np.asarray(self.x_out, dtype=float)
        if self.x_in.shape != self.x_out.shape or self.x_in.ndim != 1:
            raise ProtocolError("x_in and x_out must be 1-d arrays of equal shape")
        v = self.x_out - self.x_in
        length = float(np.linalg.norm(v))
        if length == 0.0:
            raise ProtocolError("corridor endpoints coincide")
        self.e = v / length
        if self.dim == 2:
            self.n = np.array([-self.e[1], self.e[0]])
        else:
            self.n = np.zeros_like(self.e)  # transverse templates are planar

    @property
    def dim(self) -> int:
        return self.x_in.shape[0]

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.x_out - self.x_in))

    def axis_point(self, s):
        """Point on the straight chord at arc fraction s (scalar or array)."""
        s = np.asarray(s, dtype=float)
        return self.x_in + np.multiply.outer(s, self.x_out - self.x_in)


def centerline_eval(frame: CorridorFrame, kind: str, s, params: dict | None = None) -> np.ndarray:
    """Evaluate a template centerline at arc fraction(s) s in [0, 1].

    Kinds (offsets are along frame.n, on top of the straight chord):
      straight   no offset
      v_neck     offset -A_V * (1 - |2s - 1|), a tent dip, depth A_V at s=1/2
      s_tunnel   offset  A_S * sin(2 pi s), one full S swing
      tanh_s     raw curve x_axis(s) + A_swing * tanh(kappa (2s - 1)) n, then a
                 linear correction pinning both endpoints back to x_in/x_out

    :param params: template constants; recognized keys A_V, A_S, A_swing,
        kappa. Defaults: amplitudes 1.5, kappa 2.5.
    :returns: points, shape (d,) for scalar s, else s.shape + (d,)
    """
    params = params or {}
    if kind not in CENTERLINE_KINDS:
        raise ProtocolError(f"unknown centerline kind {kind!r}")
    s_arr = np.asarray(s, dtype=float)
    base = frame.axis_point(s_arr)
    if kind == "straight":
        return base
    if kind == "v_neck":
        amp = float(params.get("A_V", 1.5))
        delta = -amp * (1.0 - np.abs(2.0 * s_arr - 1.0))
    elif kind == "s_tunnel":
        amp = float(params.get("A_S", 1.5))
        delta = amp * np.sin(2.0 * np.pi * s_arr)
    else:  # tanh_s
        amp = float(params.get("A_swing", 1.5))
        kappa = float(params.get("kappa", 2.5))
        raw = np.tanh(kappa * (2.0 * s_arr - 1.0))
        # endpoint correction: subtract the line through the raw endpoints' error
        off0 = amp * math.tanh(-kappa)
        off1 = amp * math.tanh(kappa)
        delta = amp * raw - (1.0 - s_arr) * off0 - s_arr * off1
    return base + np.multiply.outer(delta, frame.n)


def stiffness_eval(kind: str, t, params: dict | None = None):
    """Evaluate a stiffness profile beta(t) > 0 at time(s) t.

    Kinds:
      constant  beta0
      scaled    gamma * beta_base
      sigmoid   beta_min + (beta_max - beta_min) / (1 + exp(-a_beta (t - t0)))
    """
    params = params or {}
    if kind not in STIFFNESS_KINDS:
        raise ProtocolError(f"unknown stiffness kind {kind!r}")
    t_arr = np.asarray(t, dtype=float)
    if kind == "constant":
        val = float(params.get("beta0", 1.0))
        out = np.full_like(t_arr, val)
    elif kind == "scaled":
        val = float(params.get("gamma", 1.0)) * float(params.get("beta_base", 1.0))
        out = np.full_like(t_arr, val)
    else:
        lo = float(params.get("beta_min", 1.0))
        hi = float(params.get("beta_max", 10.0))
        rate = float(params.get("a_beta", 10.0))
        t0 = float(params.get("t0", 0.5))
        out = lo + (hi - lo) / (1.0 + np.exp(-rate * (t_arr - t0)))
    if np.any(out <= 0.0):
        raise ProtocolError("stiffness profile must be positive")
    return out if out.shape else float(out)


def make_centerline(frame: CorridorFrame, kind: str, params: dict | None = None) -> Callable:
    """Bind a template into a callable s -> point."""
    return lambda s: centerline_eval(frame, kind, s, params)


def make_stiffness(kind: str, params: dict | None = None) -> Callable:
    """Bind a stiffness profile into a callable t -> beta."""
    return lambda t: stiffness_eval(kind, t, params)


@dataclass
class TimeWarp:
    """Progress reparametrization s(t) = min(t + alpha t (1 - t), s_max).

    alpha in [-1, 1] keeps s nondecreasing (s'(t) = 1 + alpha(1 - 2t) >= 0);
    s_max in [0, 1] truncates progress, s_max = 0 freezing the centerline
    argument at 0 for all t.
    """

    alpha: float = 0.0
    s_max: float = 1.0

    def __post_init__(self) -> None:
        if not -1.0 <= self.alpha <= 1.0:
            raise ProtocolError("warp alpha must lie in [-1, 1]")
        if not 0.0 <= self.s_max <= 1.0:
            raise ProtocolError("warp s_max must lie in [0, 1]")

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        s = t_arr + self.alpha * t_arr * (1.0 - t_arr)
        return np.minimum(s, self.s_max)


# ---------------------------------------------------------------------------
# the protocol container
# ---------------------------------------------------------------------------


@dataclass
class PwcProtocol:
    """Piecewise-constant protocol on a uniform partition of [0, 1].

    :param breakpoints: shape (K+1,), 0 = t_0 < ... < t_K = 1, uniform
    :param beta: shape (K,), positive stiffness per piece
    :param nu: shape (K, d), guide center per piece

    Pieces are half-open [t_k, t_{k+1}); queries at t = 1 resolve to the
    last piece.
    """

    breakpoints: np.ndarray  # shape (K+1,)
    beta: np.ndarray  # shape (K,)
    nu: np.ndarray  # shape (K, d)

    def __post_init__(self) -> None:
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.nu.ndim == 1:
            self.nu = self.nu[:, None]
        k = self.beta.shape[0]
        if self.breakpoints.shape != (k + 1,):
            raise ProtocolError("breakpoints must have length len(beta) + 1")
        if self.nu.shape[0] != k:
            raise ProtocolError("nu must have one row per piece")
        if self.breakpoints[0] != 0.0 or self.breakpoints[-1] != 1.0:
            raise ProtocolError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(self.breakpoints) <= 0.0):
            raise ProtocolError("breakpoints must be strictly increasing")
        widths = np.diff(self.breakpoints)
        if not np.allclose(widths, widths[0], rtol=0.0, atol=1e-12):
            raise ProtocolError("partition must be uniform")
        if np.any(self.beta <= 0.0) or not np.all(np.isfinite(self.beta)):
            raise ProtocolError("beta must be finite and positive")
        if not np.all(np.isfinite(self.nu)):
            raise ProtocolError("nu must be finite")

    @property
    def pieces(self) -> int:
        return self.beta.shape[0]

    @property
    def dim(self) -> int:
        return self.nu.shape[1]

    def piece_index(self, t):
        """Index of the piece containing t (half-open; t=1 -> last piece)."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise ProtocolError("time outside [0, 1]")
        idx = np.searchsorted(self.breakpoints, t_arr, side="right") - 1
        idx = np.minimum(idx, self.pieces - 1)
        return idx if t_arr.shape else int(idx)

    def beta_at(self, t):
        return self.beta[self.piece_index(t)]

    def nu_at(self, t) -> np.ndarray:
        return self.nu[self.piece_index(t)]

    @classmethod
    def uniform(cls, beta, nu) -> "PwcProtocol":
        """Build from per-piece values alone, with the uniform partition implied."""
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        k = beta.shape[0]
        return cls(np.linspace(0.0, 1.0, k + 1), beta, np.asarray(nu, dtype=float))

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        """Serialize; float repr round-trips doubles bit-exactly."""
        payload = {
            "dim": self.dim,
            "breakpoints": self.breakpoints.tolist(),
            "beta": self.beta.tolist(),
            "nu": self.nu.tolist(),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PwcProtocol":
        payload = json.loads(text)
        try:
            proto = cls(
                np.asarray(payload["breakpoints"], dtype=float),
                np.asarray(payload["beta"], dtype=float),
                np.asarray(payload["nu"], dtype=float),
            )
        except KeyError as exc:
            raise ProtocolError(f"protocol JSON missing key {exc}") from exc
        if proto.dim != int(payload["dim"]):
            raise ProtocolError("protocol JSON dim does not match nu shape")
        return proto

    def content_hash(self) -> str:
        """SHA-256 over the exact double bits; keys accumulator registries."""
        h = hashlib.sha256()
        for arr in (self.breakpoints, self.beta, self.nu):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


def discretize(
    centerline: Callable,
    stiffness: Callable,
    warp: TimeWarp,
    K: int,
    anchor_endpoints: bool = True,
) -> PwcProtocol:
    """Sample a continuous corridor onto a K-piece protocol.

    beta_k is the stiffness at the plain piece midpoint t_k* = (k + 1/2)/K;
    nu_k is the centerline at the warped midpoint s(t_k*). With
    anchor_endpoints, the first and last centers are overridden by the warped
    endpoint values centerline(s(0)) and centerline(s(1)) so the protocol
    pins the corridor mouth and exit exactly.
    """
    if K < 1:
        raise ProtocolError("need at least one piece")
    mids = (np.arange(K) + 0.5) / K
    beta = np.asarray([float(stiffness(t)) for t in mids])
    nu = np.asarray([np.asarray(centerline(float(warp(t))), dtype=float) for t in mids])
    if nu.ndim == 1:
        nu = nu[:, None]
    if anchor_endpoints:
        nu[0] = np.asarray(centerline(float(warp(0.0))), dtype=float)
        nu[-1] = np.asarray(centerline(float(warp(1.0))), dtype=float)
    return PwcProtocol.uniform(beta, nu)


def corridor_walls(
    frame: CorridorFrame,
    centerline: Callable,
    width: Callable | float,
    grid: Sequence[float] | np.ndarray,
):
    """Left/right wall polylines: centerline(s) +/- width(s) * n.

    :param width: half-width profile, a callable of s or a constant
    :returns: (left, right), each shape (len(grid), d)
    """
    grid = np.asarray(grid, dtype=float)
    pts = np.asarray([np.asarray(centerline(float(s)), dtype=float) for s in grid])
    if callable(width):
        w = np.asarray([float(width(float(s))) for s in grid])
    else:
        w = np.full(grid.shape, float(width))
    if np.any(w < 0.0):
        raise ProtocolError("corridor width must be nonnegative")
    offset = w[:, None] * frame.n[None, :]
    return pts + offset, pts - offset
