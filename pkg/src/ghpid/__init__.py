"""Guided harmonic path-integral diffusion.

Pin a diffusion to a target law at t = 1 while steering it through a
corridor with a piecewise-constant harmonic guide. The pieces:

- protocol: corridor templates, stiffness profiles, time warps, and the
  piecewise-constant protocol container
- greens: two-sided Green coefficient tables and in-piece evaluators
- target: Gaussian mixture targets and product-of-experts fusion
- inference: reweighting state, probe posterior, denoiser, optimal drift
- sampler: Euler-Maruyama ensemble integration with counter-based noise
- diagnostics: guide cost, adherence, cross-entropy, fidelity checks
- learn: finite-difference / SPSA protocol optimization
- cli: scenario runner with manifests
"""

from .protocol import (
    CorridorFrame,
    PwcProtocol,
    TimeWarp,
    centerline_eval,
    corridor_walls,
    discretize,
    make_centerline,
    make_stiffness,
    stiffness_eval,
)
from .greens import (
    GreensTable,
    backward_at,
    build_table,
    coefficient_trace,
    forward_at,
    terminal_forward,
)
from .target import GaussianMixture, TrustWeights, poe_fuse

__version__ = "0.1.0"
