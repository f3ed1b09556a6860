"""On-the-job search with endogenous effort and a training shifter.

Search effort solves an integral fixed-point equation on a wage grid:
marginal cost equals the arrival-rate-weighted integral of future
surplus, discounted by the effective exit rate.  With quadratic cost
c0*s^2 the first-order condition is

    2*c0*s(w) = (lam + theta*omega) * integral_w^{w_bar}
                (1 - F(x)) / (r + delta + (lam + theta*omega)*s(x)*(1-F(x))) dx

with s(w_bar) = 0 at the top of the offer support.  The job hazard is
d(w) = delta + (lam + theta*omega)*s(w)*(1-F(w)); the unemployment exit
hazard evaluates effort at the reservation wage R = b without the
separation term.  The training effect theta is recovered from observed
unemployment hazards by a nested inversion: the control hazard pins the
base arrival rate, the treated hazard then pins theta.  theta is
treated as time-constant; a period-varying variant is not implemented.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.stats import beta as beta_dist

FIXED_POINT_TOL = 1e-10
FIXED_POINT_ITERS = 100


class NonConvergence(Exception):
    def __init__(self, node: int, residual: float):
        super().__init__(f"effort fixed point stalled at grid node {node} "
                         f"(residual {residual:.3e})")
        self.node = node
        self.residual = residual


class ROffGrid(Exception):
    pass


class NoRoot(Exception):
    """Root finding for a structural parameter failed.

    Carries the residual curve (parameter, residual) actually evaluated,
    so the caller can see which side of zero the objective stayed on.
    """

    def __init__(self, message: str, residuals: Tuple[Tuple[float, float], ...]):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class JobSearchModel:
    w_low: float
    w_bar: float
    m: int
    r: float
    delta: float
    lam: float
    theta: float = 0.0
    omega: int = 0
    c0: float = 1.0
    b: float = 0.0
    beta_a: float = 2.0
    beta_b: float = 3.0
    f_values: Optional[Tuple[float, ...]] = None   # tabulated cdf on the grid

    def __post_init__(self):
        if not self.w_low < self.w_bar:
            raise ValueError("need w_low < w_bar")
        if self.m < 50:
            raise ValueError("need at least 50 grid points")
        if min(self.r, self.delta, self.lam, self.c0) <= 0:
            raise ValueError("r, delta, lam, c0 must be positive")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.omega not in (0, 1):
            raise ValueError("omega is a binary training indicator")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.w_low, self.w_bar, self.m)

    @property
    def cdf(self) -> np.ndarray:
        if self.f_values is not None:
            f = np.asarray(self.f_values, dtype=float)
            if f.shape != (self.m,):
                raise ValueError("tabulated cdf length must match the grid")
            if np.any(np.diff(f) < -1e-12) or abs(f[-1] - 1.0) > 1e-9:
                raise ValueError("cdf must be non-decreasing with F(w_bar)=1")
            return f
        u = (self.grid - self.w_low) / (self.w_bar - self.w_low)
        return beta_dist.cdf(u, self.beta_a, self.beta_b)

    @property
    def arrival(self) -> float:
        return self.lam + self.theta * self.omega


def solve_effort(model: JobSearchModel) -> np.ndarray:
    """Backward trapezoid recursion for the effort curve.

    Each step refines the current node by fixed-point iteration because
    the integrand at the node depends on the node's own effort.
    """
    m = model.m
    grid = model.grid
    fbar = 1.0 - model.cdf
    rate = model.arrival
    rd = model.r + model.delta

    s = np.zeros(m)
    integral = np.zeros(m)          # accumulated integral from node i to the top
    g = np.zeros(m)                 # integrand values
    g[m - 1] = fbar[m - 1] / rd     # fbar is 0 there, kept for clarity
    for i in range(m - 2, -1, -1):
        h = grid[i + 1] - grid[i]
        s_i = s[i + 1]
        converged = False
        resid = np.inf
        for _ in range(FIXED_POINT_ITERS):
            g_i = fbar[i] / (rd + rate * s_i * fbar[i])
            total = integral[i + 1] + 0.5 * h * (g[i + 1] + g_i)
            s_new = total * rate / (2.0 * model.c0)
            resid = abs(s_new - s_i)
            s_i = s_new
            if resid <= FIXED_POINT_TOL:
                converged = True
                break
        if not converged:
            raise NonConvergence(i, resid)
        s[i] = s_i
        g[i] = fbar[i] / (rd + rate * s_i * fbar[i])
        integral[i] = integral[i + 1] + 0.5 * h * (g[i + 1] + g[i])
    return s


def foc_residuals(model: JobSearchModel, s: np.ndarray) -> np.ndarray:
    """First-order-condition residuals by independent quadrature.

    Recomputes the surplus integral with a vectorized cumulative
    trapezoid over the final effort curve (no fixed-point structure)
    and returns 2*c0*s - rate*integral at every node.
    """
    grid = model.grid
    fbar = 1.0 - model.cdf
    rate = model.arrival
    g = fbar / (model.r + model.delta + rate * s * fbar)
    h = np.diff(grid)
    segments = 0.5 * h * (g[1:] + g[:-1])
    tail = np.concatenate([segments[::-1].cumsum()[::-1], [0.0]])
    return 2.0 * model.c0 * s - rate * tail


def hazards(model: JobSearchModel, s: np.ndarray):
    """Job-exit hazard curve and the unemployment-exit hazard.

    d(w) = delta + rate*s(w)*(1-F(w)); the unemployed search from the
    reservation wage R = b, which must lie on the grid span.
    """
    grid = model.grid
    fbar = 1.0 - model.cdf
    rate = model.arrival
    d = model.delta + rate * s * fbar
    r_wage = model.b
    if not grid[0] - 1e-12 <= r_wage <= grid[-1] + 1e-12:
        raise ROffGrid(f"reservation wage {r_wage} outside [{grid[0]}, {grid[-1]}]")
    s0 = float(np.interp(r_wage, grid, s))
    f0 = float(np.interp(r_wage, grid, model.cdf))
    d_u = rate * s0 * (1.0 - f0)
    return d, d_u


def _d_u(model: JobSearchModel) -> float:
    return hazards(model, solve_effort(model))[1]


def _invert_monotone(fn, target, lo, hi, iters=80):
    """Bisection for an increasing map; returns None if the bracket fails."""
    f_lo = fn(lo) - target
    f_hi = fn(hi) - target
    if f_lo > 0 or f_hi < 0:
        return None, ((lo, f_lo), (hi, f_hi))
    trace = [(lo, f_lo), (hi, f_hi)]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid) - target
        trace.append((mid, f_mid))
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), tuple(trace)


def recover_theta(d_u_control: float, d_u_treated: float,
                  model_without_theta: JobSearchModel,
                  theta_max: float = 5.0) -> float:
    """Recover the training effect from the two unemployment hazards.

    The control hazard identifies the base arrival rate (training off);
    given that rate, the treated hazard identifies theta on
    [0, theta_max].  Both inversions are bisections against the full
    model solve, so the recovery is the numerical inverse of the
    forward map.
    """
    if d_u_control <= 0 or d_u_treated <= 0:
        raise ValueError("hazards must be positive")
    base = replace(model_without_theta, theta=0.0, omega=0)

    def du_of_lam(lam):
        return _d_u(replace(base, lam=lam))

    lam_hi = max(base.lam, 1e-3)
    for _ in range(60):
        if du_of_lam(lam_hi) >= d_u_control:
            break
        lam_hi *= 2.0
    lam_hat, trace = _invert_monotone(du_of_lam, d_u_control, 1e-9, lam_hi)
    if lam_hat is None:
        raise NoRoot("control hazard outside the model's range", trace)

    if d_u_treated < d_u_control - 1e-10:
        curve = tuple((t, _d_u(replace(base, lam=lam_hat, theta=t, omega=1))
                       - d_u_treated) for t in np.linspace(0, theta_max, 9))
        raise NoRoot("treated hazard below control: no theta >= 0 can match", curve)

    def du_of_theta(theta):
        return _d_u(replace(base, lam=lam_hat, theta=theta, omega=1))

    theta_hat, trace = _invert_monotone(du_of_theta, d_u_treated, 0.0, theta_max)
    if theta_hat is None:
        raise NoRoot("treated hazard outside [0, theta_max] range", trace)
    return float(theta_hat)
