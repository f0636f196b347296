"""Two-sided Green coefficient tables for harmonically guided bridges.

For a piecewise-constant protocol the backward kernel G_t^-(x | y) and the
forward kernel G_t^+(y | x0), x0 = 0, stay Gaussian in the exponent

    log G_t^-(x|y) = -a/2 |x-nu|^2 + b (x-nu).(y-nu) - c/2 |y-nu|^2
                     + r.(x-nu) + s.(y-nu) + const
    log G_t^+(y|0) = -a_fwd/2 |y-nu|^2 + s_fwd.(y-nu) + const

with nu the guide center of the piece containing t. Coefficients follow a
Riccati system inside a piece (da/dt = a^2 - beta backward, da_fwd/dt =
beta - a_fwd^2 forward; the linear terms follow dr/dt = a r, ds/dt = -b r,
ds_fwd/dt = -a_fwd s_fwd) and jump at interfaces only through the linear
terms, because the exponent must be re-centered from one piece's nu to the
next. build_table sweeps both directions once, records the edge values on
both sides of every interface, and the *_at evaluators propagate within a
piece in closed form.

Numerics: in-piece propagation is expressed through the scaled quantities
w_hat = (1 + E) + a_edge * Delta * (1 - E)/z and v_hat = Delta * (1 - E)/z,
where z = sqrt(beta) * Delta and E = exp(-2z). These stay finite for any
z >= 0 and for edge gains on either side of sqrt(beta), including the
relaxed regime a_edge ~ sqrt(beta) where naive expressions divide by
beta - a_edge^2.

Time bands: the backward coefficients diverge at t = 1 and the forward ones
at t = 0, so queries are restricted to [eps_start, 1 - eps_end] (backward)
and [eps_start, 1] (forward). Out-of-band queries raise TimeBandError.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .protocol import PwcProtocol

__all__ = [
    "TimeBandError",
    "BackwardCoeffs",
    "ForwardCoeffs",
    "GreensTable",
    "build_table",
    "backward_at",
    "forward_at",
    "terminal_forward",
    "coefficient_trace",
]

DEFAULT_EPS = 1e-4


class TimeBandError(ValueError):
    """Query time outside the validity band of a coefficient table."""


# -- stable hyperbolic kernels ----------------------------------------------


def _coth(z: float) -> float:
    # (1+e^{-2z}) / (1-e^{-2z}); expm1 keeps the 1/z pole accurate as z -> 0
    return (1.0 + math.exp(-2.0 * z)) / (-math.expm1(-2.0 * z))


def _csch(z: float) -> float:
    return 2.0 * math.exp(-z) / (-math.expm1(-2.0 * z))


def _piece_kernel(beta: float, delta: float, a_edge: float):
    """Scaled in-piece propagation weights over a gap delta >= 0.

    Returns (w_hat, v_hat, one_plus_E, decay) with decay = 2 e^{-z} / w_hat;
    every coefficient update is a ratio of these, so the e^z growth of the
    underlying cosh/sinh never materializes.
    """
    z = math.sqrt(beta) * delta
    if z > 0.0:
        E = math.exp(-2.0 * z)
        ratio = -math.expm1(-2.0 * z) / z  # (1 - E)/z, -> 2 as z -> 0
    else:
        E = 1.0
        ratio = 2.0
    one_plus = 1.0 + E
    v_hat = delta * ratio
    w_hat = one_plus + a_edge * v_hat
    decay = 2.0 * math.exp(-z) / w_hat
    return w_hat, v_hat, one_plus, decay


def _bw_step(beta, delta, a_e, b_e, c_e, r_e, s_e):
    """Backward coefficients a gap delta to the *left* of an edge."""
    w_hat, v_hat, one_plus, decay = _piece_kernel(beta, delta, a_e)
    a = (beta * v_hat + a_e * one_plus) / w_hat
    b = b_e * decay
    vw = v_hat / w_hat
    c = c_e - b_e * b_e * vw
    r = r_e * decay
    s = s_e + (r_e * b_e) * vw
    return a, b, c, r, s


def _fw_step(beta, delta, a_e, s_e):
    """Forward coefficients a gap delta to the *right* of an edge."""
    w_hat, v_hat, one_plus, decay = _piece_kernel(beta, delta, a_e)
    a = (beta * v_hat + a_e * one_plus) / w_hat
    s = s_e * decay
    return a, s


# -- table -------------------------------------------------------------------


@dataclass
class BackwardCoeffs:
    """Backward kernel coefficients at one time, in the frame of nu(t)."""

    t: float
    a: float
    b: float
    c: float
    r: np.ndarray  # shape (d,)
    s: np.ndarray  # shape (d,)
    nu: np.ndarray  # shape (d,)
    beta: float
    piece: int


@dataclass
class ForwardCoeffs:
    """Forward kernel coefficients at one time, in the frame of nu(t)."""

    t: float
    a: float
    s: np.ndarray  # shape (d,)
    nu: np.ndarray  # shape (d,)
    beta: float
    piece: int


@dataclass
class GreensTable:
    """Interface-edge coefficient values for one protocol.

    Interface j (j = 1..K-1, array index j-1) sits at t_j. The quadratic
    coefficients are continuous there; linear coefficients are stored for
    both sides because the re-centering jump makes them two-valued.
    """

    protocol: PwcProtocol
    eps_start: float
    eps_end: float
    # backward, interface-indexed, shape (K-1,) / (K-1, d)
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_c: np.ndarray
    edge_r_right: np.ndarray  # value inside piece j (right of t_j)
    edge_s_right: np.ndarray
    edge_r_left: np.ndarray  # value inside piece j-1 (left of t_j)
    edge_s_left: np.ndarray
    # forward, interface-indexed
    edge_a_fwd: np.ndarray
    edge_s_fwd_left: np.ndarray  # value inside piece j-1
    edge_s_fwd_right: np.ndarray  # value inside piece j
    # forward at t = 1
    a_terminal: float
    s_terminal: np.ndarray  # shape (d,)

    def _check(self, t: float, upper: float, kind: str) -> None:
        if not self.eps_start <= t <= upper:
            raise TimeBandError(
                f"{kind} coefficients requested at t={t!r}, valid band "
                f"[{self.eps_start!r}, {upper!r}]"
            )


def build_table(
    protocol: PwcProtocol,
    eps_start: float = DEFAULT_EPS,
    eps_end: float = DEFAULT_EPS,
) -> GreensTable:
    """Sweep both kernel recursions across all interfaces of a protocol.

    The backward sweep starts from the closed form on the last piece (where
    r = s = 0 by the terminal delta condition) and walks left, applying at
    each interface the re-centering jump

        r_left = r_right - (a - b) (nu_left - nu_right)
        s_left = s_right - (c - b) (nu_left - nu_right)

    The forward sweep mirrors it from the first piece with
    s_right = s_left - a_fwd (nu_right - nu_left).
    """
    if eps_start <= 0.0 or eps_end <= 0.0:
        raise ValueError("epsilon bands must be positive")
    k_pieces = protocol.pieces
    d = protocol.dim
    bp = protocol.breakpoints
    beta = protocol.beta
    nu = protocol.nu
    n_int = k_pieces - 1

    edge_a = np.empty(n_int)
    edge_b = np.empty(n_int)
    edge_c = np.empty(n_int)
    edge_r_right = np.zeros((n_int, d))
    edge_s_right = np.zeros((n_int, d))
    edge_r_left = np.zeros((n_int, d))
    edge_s_left = np.zeros((n_int, d))
    edge_a_fwd = np.empty(n_int)
    edge_s_fwd_left = np.zeros((n_int, d))
    edge_s_fwd_right = np.zeros((n_int, d))

    # backward sweep, interfaces right to left
    r_cur = np.zeros(d)
    s_cur = np.zeros(d)
    a_cur = b_cur = c_cur = math.nan
    for j in range(n_int, 0, -1):
        width = bp[j + 1] - bp[j]
        if j == k_pieces - 1:
            sq = math.sqrt(beta[j])
            z = sq * width
            a_cur = c_cur = sq * _coth(z)
            b_cur = sq * _csch(z)
            r_cur = np.zeros(d)
            s_cur = np.zeros(d)
        else:
            a_cur, b_cur, c_cur, r_cur, s_cur = _bw_step(
                beta[j], width, a_cur, b_cur, c_cur, r_cur, s_cur
            )
        edge_a[j - 1] = a_cur
        edge_b[j - 1] = b_cur
        edge_c[j - 1] = c_cur
        edge_r_right[j - 1] = r_cur
        edge_s_right[j - 1] = s_cur
        dnu = nu[j - 1] - nu[j]
        r_cur = r_cur - (a_cur - b_cur) * dnu
        s_cur = s_cur - (c_cur - b_cur) * dnu
        edge_r_left[j - 1] = r_cur
        edge_s_left[j - 1] = s_cur

    # forward sweep, interfaces left to right; the kernel is pinned at the
    # origin, so a nonzero first-piece center displaces the linear term by
    # -sqrt(beta) csch(sqrt(beta) t) nu_0
    s_fwd = np.zeros(d)
    a_fwd = math.nan
    for j in range(1, k_pieces):
        width = bp[j] - bp[j - 1]
        if j == 1:
            sq = math.sqrt(beta[0])
            a_fwd = sq * _coth(sq * width)
            s_fwd = -sq * _csch(sq * width) * nu[0]
        else:
            a_fwd, s_fwd = _fw_step(beta[j - 1], width, a_fwd, s_fwd)
        edge_a_fwd[j - 1] = a_fwd
        edge_s_fwd_left[j - 1] = s_fwd
        s_fwd = s_fwd - a_fwd * (nu[j] - nu[j - 1])
        edge_s_fwd_right[j - 1] = s_fwd

    # push the forward state through the last piece to t = 1
    last_width = bp[k_pieces] - bp[k_pieces - 1]
    if k_pieces == 1:
        sq = math.sqrt(beta[0])
        a_term = sq * _coth(sq)
        s_term = -sq * _csch(sq) * nu[0]
    else:
        a_term, s_term = _fw_step(beta[k_pieces - 1], last_width, a_fwd, s_fwd)

    return GreensTable(
        protocol=protocol,
        eps_start=float(eps_start),
        eps_end=float(eps_end),
        edge_a=edge_a,
        edge_b=edge_b,
        edge_c=edge_c,
        edge_r_right=edge_r_right,
        edge_s_right=edge_s_right,
        edge_r_left=edge_r_left,
        edge_s_left=edge_s_left,
        edge_a_fwd=edge_a_fwd,
        edge_s_fwd_left=edge_s_fwd_left,
        edge_s_fwd_right=edge_s_fwd_right,
        a_terminal=float(a_term),
        s_terminal=s_term,
    )


def backward_at(table: GreensTable, t: float) -> BackwardCoeffs:
    """Backward coefficients at t in [eps_start, 1 - eps_end].

    At an exact interface time the returned values are those of the piece
    containing t under the half-open convention, i.e. the right side.
    """
    t = float(t)
    table._check(t, 1.0 - table.eps_end, "backward")
    proto = table.protocol
    j = proto.piece_index(t)
    t_right = proto.breakpoints[j + 1]
    delta = t_right - t
    if j == proto.pieces - 1:
        sq = math.sqrt(proto.beta[j])
        z = sq * (1.0 - t)
        a = c = sq * _coth(z)
        b = sq * _csch(z)
        r = np.zeros(proto.dim)
        s = np.zeros(proto.dim)
    else:
        a, b, c, r, s = _bw_step(
            proto.beta[j],
            delta,
            table.edge_a[j],
            table.edge_b[j],
            table.edge_c[j],
            table.edge_r_left[j],
            table.edge_s_left[j],
        )
    return BackwardCoeffs(
        t=t, a=a, b=b, c=c, r=r, s=s, nu=proto.nu[j], beta=proto.beta[j], piece=j
    )


def forward_at(table: GreensTable, t: float) -> ForwardCoeffs:
    """Forward coefficients at t in [eps_start, 1]."""
    t = float(t)
    table._check(t, 1.0, "forward")
    proto = table.protocol
    j = proto.piece_index(t)
    if j == 0:
        sq = math.sqrt(proto.beta[0])
        a = sq * _coth(sq * t)
        s = -sq * _csch(sq * t) * proto.nu[0]
    else:
        delta = t - proto.breakpoints[j]
        a, s = _fw_step(
            proto.beta[j],
            delta,
            table.edge_a_fwd[j - 1],
            table.edge_s_fwd_right[j - 1],
        )
    return ForwardCoeffs(t=t, a=a, s=s, nu=proto.nu[j], beta=proto.beta[j], piece=j)


def terminal_forward(table: GreensTable):
    """Forward coefficients at t = 1, in the frame of the last piece's nu."""
    return table.a_terminal, table.s_terminal


def coefficient_trace(table: GreensTable, ts) -> dict:
    """Sample both kernels on a time grid, for export and plotting.

    Linear (vector) coefficients are reported by Euclidean norm. Times must
    lie in the backward band.
    """
    ts = np.asarray(ts, dtype=float)
    rows = {
        "t": ts,
        "a_minus": np.empty_like(ts),
        "b_minus": np.empty_like(ts),
        "c_minus": np.empty_like(ts),
        "r_minus_norm": np.empty_like(ts),
        "s_minus_norm": np.empty_like(ts),
        "a_plus": np.empty_like(ts),
        "s_plus_norm": np.empty_like(ts),
    }
    for i, t in enumerate(ts):
        bw = backward_at(table, t)
        fw = forward_at(table, t)
        rows["a_minus"][i] = bw.a
        rows["b_minus"][i] = bw.b
        rows["c_minus"][i] = bw.c
        rows["r_minus_norm"][i] = float(np.linalg.norm(bw.r))
        rows["s_minus_norm"][i] = float(np.linalg.norm(bw.s))
        rows["a_plus"][i] = fw.a
        rows["s_plus_norm"][i] = float(np.linalg.norm(fw.s))
    return rows
