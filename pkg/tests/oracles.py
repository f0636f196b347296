"""Independent numerical oracles for the test suite.

Two routes that share no algebra with the library:

1. rk4_greens integrates the coefficient ODE system directly, in the fixed
   (non-recentered) frame where the linear coefficients are continuous and
   guide-center jumps enter only through the forcing beta(t) * nu(t). Kicks
   can be mollified into C^1 ramps of width delta to check convergence of
   the exact-jump algebra, or left sharp (delta = 0) since the fixed-frame
   system has no jumps at all.

   Backward (in t):  da/dt = a^2 - beta        forward:  da/dt = beta - a^2
                     db/dt = a b                         ds~/dt = -a s~ + beta nu
                     dc/dt = b^2
                     dr~/dt = a r~ - beta nu
                     ds~/dt = -b r~

   Moving-frame values follow from r = r~ - (a - b) nu, s = s~ - (c - b) nu,
   s_fwd = s~_fwd - a_fwd nu.

2. probe_quadrature evaluates the reweighted-target functionals (normalizer,
   posterior mean, drift as a finite difference of log Z) by trapezoid
   quadrature of the raw Green-exponent ratio on a 2-d grid.

Both integrators seed at tau0 = 1e-6 from the divergence with the series
a = 1/tau + beta tau / 3, b = 1/tau - beta tau / 6 (error O(beta^2 tau^3)),
then use a geometrically graded mesh while a ~ 1/tau is steep.
"""

from __future__ import annotations

import math

import numpy as np


# -- mollified guide center ----------------------------------------------------


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def make_nu_delta(protocol, delta: float):
    """nu(t) with each interface jump replaced by a C^1 ramp of width delta.

    delta = 0 reproduces the sharp piecewise-constant centers.
    """
    bp = protocol.breakpoints
    nu = protocol.nu

    def nu_of_t(t: float) -> np.ndarray:
        j = protocol.piece_index(min(max(t, 0.0), 1.0))
        if delta <= 0.0:
            return nu[j]
        val = nu[j].astype(float).copy()
        # ramp around the left interface of piece j
        if j > 0 and t < bp[j] + delta / 2.0:
            u = (t - (bp[j] - delta / 2.0)) / delta
            return nu[j - 1] + (nu[j] - nu[j - 1]) * _smoothstep(np.array(u))
        # ramp around the right interface of piece j
        if j < protocol.pieces - 1 and t > bp[j + 1] - delta / 2.0:
            u = (t - (bp[j + 1] - delta / 2.0)) / delta
            return nu[j] + (nu[j + 1] - nu[j]) * _smoothstep(np.array(u))
        return val

    return nu_of_t


# -- generic RK4 sweep over a prescribed grid ---------------------------------


def _rk4_sweep(rhs, y0: np.ndarray, grid: np.ndarray, capture: dict) -> None:
    """Classic RK4 from grid[0] to grid[-1]; stores y at times in capture.

    rhs(t, y, t_ref) gets the step midpoint as t_ref so piecewise-constant
    data is looked up on the correct side when a stage lands exactly on an
    interface (the grid never straddles one).
    """
    y = np.array(y0, dtype=float)
    t = grid[0]
    if t in capture:
        capture[t] = y.copy()
    for t_next in grid[1:]:
        h = t_next - t
        t_ref = t + h / 2.0
        k1 = rhs(t, y, t_ref)
        k2 = rhs(t + h / 2.0, y + h / 2.0 * k1, t_ref)
        k3 = rhs(t + h / 2.0, y + h / 2.0 * k2, t_ref)
        k4 = rhs(t + h, y + h * k3, t_ref)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_next
        if t in capture:
            capture[t] = y.copy()


def _graded_taus(tau0: float, tau1: float, ratio: float = 1.01) -> np.ndarray:
    """Geometric mesh from tau0 to tau1, step growth bounded by ratio."""
    taus = [tau0]
    while taus[-1] * ratio < tau1:
        taus.append(taus[-1] * ratio)
    taus.append(tau1)
    return np.asarray(taus)


def _piece_grid(lo: float, hi: float, n: int, refine: list) -> np.ndarray:
    pts = set(np.linspace(lo, hi, n + 1).tolist())
    for center, width, m in refine:
        a = max(lo, center - width)
        b = min(hi, center + width)
        if b > a:
            pts.update(np.linspace(a, b, m).tolist())
    return np.asarray(sorted(pts))


def rk4_greens(
    protocol,
    queries,
    delta: float = 0.0,
    n_per_piece: int = 1500,
    ramp_steps: int = 300,
    tau0: float = 1e-6,
):
    """Integrate both coefficient systems; return per-query coefficient dicts.

    :param queries: times where coefficients are wanted (each in (0, 1))
    :returns: dict t -> dict with keys a, b, c, r, s (moving frame, backward),
        a_fwd, s_fwd (moving frame, forward), plus fixed-frame r_fix, s_fix,
        s_fwd_fix; and key 1.0 -> terminal forward values.
    """
    queries = sorted(float(t) for t in queries)
    bp = protocol.breakpoints
    beta = protocol.beta
    nu_fn = make_nu_delta(protocol, delta)
    d = protocol.dim
    k_pieces = protocol.pieces

    def beta_of(t: float) -> float:
        return float(beta[protocol.piece_index(min(max(t, 0.0), 1.0 - 1e-15))])

    ramps = []
    if delta > 0.0:
        ramps = [(bp[j], delta, ramp_steps) for j in range(1, k_pieces)]

    # ---------------- backward sweep (t from 1-tau0 down to min query)
    t_seed = 1.0 - tau0
    beta_last = beta[-1]
    a0 = 1.0 / tau0 + beta_last * tau0 / 3.0
    b0 = 1.0 / tau0 - beta_last * tau0 / 6.0
    nu_seed = nu_fn(t_seed)
    y0 = np.concatenate([[a0, b0, a0], (a0 - b0) * nu_seed, (a0 - b0) * nu_seed])

    grid_pts = {t_seed}
    grid_pts.update(queries)
    t_min = queries[0]
    # graded mesh near the singular end
    grid_pts.update((1.0 - _graded_taus(tau0, min(1.0 - t_min, bp[-1] - bp[-2]))).tolist())
    for j in range(k_pieces):
        lo, hi = max(bp[j], t_min), min(bp[j + 1], t_seed)
        if hi > lo:
            grid_pts.update(_piece_grid(lo, hi, n_per_piece, ramps).tolist())
    grid = np.asarray(sorted(p for p in grid_pts if t_min <= p <= t_seed))[::-1]

    def rhs_bw(t, y, t_ref):
        a, b, c = y[0], y[1], y[2]
        r_fix = y[3 : 3 + d]
        bt = beta_of(t_ref)
        nut = nu_fn(t) if delta > 0.0 else nu_fn(t_ref)
        out = np.empty_like(y)
        out[0] = a * a - bt
        out[1] = a * b
        out[2] = b * b
        out[3 : 3 + d] = a * r_fix - bt * nut
        out[3 + d :] = -b * r_fix
        return out

    capture_bw = {t: None for t in queries}
    capture_bw[t_seed] = None
    _rk4_sweep(rhs_bw, y0, grid, capture_bw)

    # ---------------- forward sweep (t from tau0 up to 1), pinned at x0 = 0:
    # fixed-frame seed s~ = sqrt(beta) nu_0 tanh(sqrt(beta) tau0 / 2) + O(tau0^2)
    beta_first = beta[0]
    af0 = 1.0 / tau0 + beta_first * tau0 / 3.0
    sf0 = 0.5 * beta_first * tau0 * nu_fn(tau0)
    yf0 = np.concatenate([[af0], sf0])

    grid_pts = {tau0, 1.0}
    grid_pts.update(queries)
    grid_pts.update(_graded_taus(tau0, bp[1]).tolist())
    for j in range(k_pieces):
        lo, hi = max(bp[j], tau0), bp[j + 1]
        if hi > lo:
            grid_pts.update(_piece_grid(lo, hi, n_per_piece, ramps).tolist())
    gridf = np.asarray(sorted(p for p in grid_pts if tau0 <= p <= 1.0))

    def rhs_fw(t, y, t_ref):
        a = y[0]
        s_fix = y[1:]
        bt = beta_of(t_ref)
        nut = nu_fn(t) if delta > 0.0 else nu_fn(t_ref)
        out = np.empty_like(y)
        out[0] = bt - a * a
        out[1:] = -a * s_fix + bt * nut
        return out

    capture_fw = {t: None for t in queries}
    capture_fw[1.0] = None
    _rk4_sweep(rhs_fw, yf0, gridf, capture_fw)

    # ---------------- assemble moving-frame values
    out = {}
    for t in queries:
        yb = capture_bw[t]
        yf = capture_fw[t]
        a, b, c = yb[0], yb[1], yb[2]
        r_fix = yb[3 : 3 + d]
        s_fix = yb[3 + d :]
        a_fwd = yf[0]
        s_fwd_fix = yf[1:]
        nut = protocol.nu[protocol.piece_index(t)]
        out[t] = {
            "a": a,
            "b": b,
            "c": c,
            "r": r_fix - (a - b) * nut,
            "s": s_fix - (c - b) * nut,
            "r_fix": r_fix,
            "s_fix": s_fix,
            "a_fwd": a_fwd,
            "s_fwd": s_fwd_fix - a_fwd * nut,
            "s_fwd_fix": s_fwd_fix,
        }
    yf1 = capture_fw[1.0]
    nu_last = protocol.nu[-1]
    out[1.0] = {
        "a_fwd": yf1[0],
        "s_fwd_fix": yf1[1:],
        "s_fwd": yf1[1:] - yf1[0] * nu_last,
    }
    return out


# -- brute-force probe functionals --------------------------------------------


def _grid_box(gmm, mu_extra, sigma_extra, span):
    los, his = [], []
    for n in range(gmm.n_components):
        sig = math.sqrt(max(np.linalg.eigvalsh(gmm.covs[n])))
        los.append(gmm.means[n] - span * sig)
        his.append(gmm.means[n] + span * sig)
    if mu_extra is not None:
        los.append(mu_extra - span * sigma_extra)
        his.append(mu_extra + span * sigma_extra)
    return np.min(los, axis=0), np.max(his, axis=0)


def probe_quadrature(coeffs_t, coeffs_one, gmm, x, n=600, span=8.5, fd_step=1e-4):
    """Quadrature values of the reweighted-target functionals at (t, x).

    :param coeffs_t: fixed-frame backward coefficients at t (keys a, b, c,
        r_fix, s_fix), e.g. one entry of rk4_greens output
    :param coeffs_one: terminal forward coefficients (keys a_fwd, s_fwd_fix)
    :param x: probe location, shape (d,) with d = 2
    :returns: dict with yhat (d,), k_precision, lin (d,), drift (d,)

    log q(y) = log p_tar(y) - (c - a1)/2 |y|^2 + (b x + s~ - s~1) . y, and
    log Z(x) = -a/2 |x|^2 + r~ . x + log integral; the drift is the central
    finite difference of log Z over x on one shared grid.
    """
    x = np.asarray(x, dtype=float)
    a = coeffs_t["a"]
    b = coeffs_t["b"]
    c = coeffs_t["c"]
    r_fix = coeffs_t["r_fix"]
    s_fix = coeffs_t["s_fix"]
    a1 = coeffs_one["a_fwd"]
    s1_fix = coeffs_one["s_fwd_fix"]

    k_prec = c - a1
    lin0 = s_fix - s1_fix  # x-independent part of the y-linear coefficient

    if k_prec > 1e-12:
        mu_rough = (b * x + lin0) / k_prec
        sig_rough = 1.0 / math.sqrt(k_prec)
    else:
        mu_rough, sig_rough = None, 1.0
    lo, hi = _grid_box(gmm, mu_rough, sig_rough, span)
    axes = [np.linspace(lo[i], hi[i], n) for i in range(2)]
    yy0, yy1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.stack([yy0.ravel(), yy1.ravel()], axis=1)
    log_p = gmm.log_density(pts)
    quad_part = log_p - 0.5 * k_prec * np.sum(pts * pts, axis=1) + pts @ lin0

    w0 = np.ones(n)
    w0[0] = w0[-1] = 0.5
    log_w = np.log(np.outer(w0, w0)).ravel()

    def log_integral(xq):
        expo = quad_part + b * (pts @ xq) + log_w
        m = expo.max()
        return m + math.log(np.sum(np.exp(expo - m)))

    # posterior mean at x
    expo = quad_part + b * (pts @ x)
    expo -= expo.max()
    qw = np.exp(expo + log_w)
    z = qw.sum()
    yhat = (pts * qw[:, None]).sum(axis=0) / z

    # drift = grad_x [ -a/2 |x|^2 + r~.x + log integral ]
    grad_log = np.empty(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = fd_step
        grad_log[i] = (log_integral(x + e) - log_integral(x - e)) / (2.0 * fd_step)
    drift = -a * x + r_fix + grad_log

    return {
        "yhat": yhat,
        "k_precision": k_prec,
        "lin": b * x + lin0,
        "drift": drift,
        "log_z_grad": grad_log,
    }
