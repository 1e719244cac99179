"""Linear-quadratic mean-field control comparison under a supplied feedback.

Two systems share drift, control and common noise; they differ only in
the idiosyncratic diffusion, a constant bound for the first and a
state/law-dependent function dominated by that bound for the second.
Evaluating the quadratic cost of the *same* feedback on both coupled
systems bounds the corresponding value functions.  The feedback gains
are tabulated inputs (they solve Riccati equations that are outside this
toolkit's scope); the toolkit never optimizes controls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet, MeasureHandle
from .grid import TimeGrid
from .noise import NoisePlan
from . import sde


@dataclass
class LqSpec:
    """Dynamics and cost weights of the linear-quadratic comparison.

    ``theta`` is the second system's diffusion, a callable (t, x, mu) ->
    value that must stay inside [0, sigma_bar]; None means theta ==
    sigma_bar (identical systems).  The range condition is checked by
    probing a (t, x) grid at construction, not proven.
    """

    grid: TimeGrid
    sigma_bar: float
    b0: float = 0.0
    b: float = 0.0
    b_bar: float = 0.0
    c: float = 0.0
    theta: object = None
    sigma0: float = 0.0
    q2: float = 0.0
    q2_bar: float = 0.0
    r2: float = 1.0
    p2: float = 0.0
    p2_bar: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if self.sigma_bar < 0 or self.sigma0 < 0:
            raise ValueError("diffusion loadings must be nonnegative")
        for name in ("q2", "q2_bar", "r2", "p2", "p2_bar"):
            if getattr(self, name) < 0:
                raise ValueError(f"cost weight {name} must be nonnegative")
        if self.r2 <= 0:
            raise ValueError("control weight r2 must be positive")
        if self.theta is not None:
            self._probe_theta_range()

    def _probe_theta_range(self):
        spread = 10.0 * max(self.sigma_bar + self.sigma0, 1.0) * np.sqrt(self.grid.horizon)
        xs = self.x0 + np.linspace(-spread, spread, 41)
        ts = self.grid.nodes[:: max(1, self.grid.steps // 20)]
        mu = MeasureHandle(xs)
        for t in ts:
            vals = np.broadcast_to(np.asarray(self.theta(float(t), xs, mu), dtype=float), xs.shape)
            if np.any(vals < -1e-12) or np.any(vals > self.sigma_bar + 1e-12):
                raise ValueError(
                    f"theta leaves [0, sigma_bar={self.sigma_bar:g}] near t={t:g} "
                    f"(range [{vals.min():g}, {vals.max():g}] on the probe grid)"
                )


@dataclass
class FeedbackControl:
    """Linear feedback alpha(t, x, mean) = -2*G(t)*(x - (1+c)*mean) - c*g(t).

    The gain tables G and g are given on the grid nodes (scalars are
    broadcast); they are inputs, not computed here.
    """

    gain: np.ndarray        # G at the grid nodes, (M+1,)
    shift: np.ndarray       # g at the grid nodes, (M+1,)

    @classmethod
    def from_tables(cls, gain, shift, grid: TimeGrid) -> "FeedbackControl":
        gain = np.broadcast_to(np.asarray(gain, dtype=float), (grid.steps + 1,)).copy()
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (grid.steps + 1,)).copy()
        if not (np.all(np.isfinite(gain)) and np.all(np.isfinite(shift))):
            raise ValueError("gain tables must be finite")
        return cls(gain=gain, shift=shift)

    @classmethod
    def zero(cls, grid: TimeGrid) -> "FeedbackControl":
        return cls.from_tables(0.0, 0.0, grid)

    def alpha(self, node: int, x, mean, c: float):
        return -2.0 * self.gain[node] * (x - (1.0 + c) * mean) - c * self.shift[node]


def _controlled_coefficients(spec: LqSpec, ctrl: FeedbackControl, system: str) -> CoefficientSet:
    if system not in ("X", "Y"):
        raise ValueError(f"system must be 'X' or 'Y', got {system!r}")
    grid = spec.grid
    h = grid.h

    def drift(t, x, mu):
        node = int(round(t / h))
        mean = mu.mean()
        a = ctrl.alpha(node, x, mean, spec.c)
        return spec.b0 + spec.b * x + spec.b_bar * mean + spec.c * a

    if system == "X" or spec.theta is None:
        diffusion = lambda t, x, mu: spec.sigma_bar
    else:
        diffusion = spec.theta
    return CoefficientSet(
        dim_state=1, dim_noise=1, drift=drift, diffusion=diffusion,
        common_diffusion=lambda t, mu: spec.sigma0,
        label=f"lq_{system}",
    )


def _replication_costs(spec: LqSpec, ctrl: FeedbackControl, system: str,
                       n_particles: int, n_mc: int, noise: NoisePlan,
                       quadrature: str) -> np.ndarray:
    if quadrature not in ("left", "trapezoid"):
        raise ValueError("quadrature must be 'left' or 'trapezoid'")
    coeffs = _controlled_coefficients(spec, ctrl, system)
    grid = spec.grid
    h = grid.h
    m_steps = grid.steps
    costs = np.empty(n_mc)
    for rep in range(n_mc):
        ens = sde.simulate_particle_system(coeffs, grid, spec.x0, n_particles, noise, rep)
        x = ens.states[:, :, 0]                       # (N, M+1)
        means = np.mean(x, axis=0)                    # (M+1,)
        alphas = ctrl.alpha(np.arange(m_steps + 1), x, means, spec.c)
        running = (spec.q2 * np.mean(x * x, axis=0)
                   + spec.q2_bar * means**2
                   + spec.r2 * np.mean(alphas * alphas, axis=0))
        if quadrature == "left":
            integral = h * np.sum(running[:-1])
        else:
            integral = h * (np.sum(running[1:-1]) + 0.5 * (running[0] + running[-1]))
        terminal = (spec.p2 * np.mean(x[:, -1] ** 2)
                    + spec.p2_bar * means[-1] ** 2)
        costs[rep] = integral + terminal
    return costs


def evaluate_cost(spec: LqSpec, ctrl: FeedbackControl, system: str,
                  n_particles: int, n_mc: int, noise: NoisePlan | None = None,
                  *, master_seed: int = 0, quadrature: str = "left"):
    """Monte-Carlo cost of the supplied feedback on one system.

    The mean-field term is the particle average; the running cost is
    integrated with left-endpoint quadrature (matching the scheme's
    filtration; trapezoid available).  Returns (cost, stderr) with the
    standard error taken across common-noise replications.
    """
    if noise is None:
        noise = NoisePlan(master_seed, n_particles, spec.grid.steps, 1)
    costs = _replication_costs(spec, ctrl, system, n_particles, n_mc, noise, quadrature)
    stderr = float(np.std(costs, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
    return float(np.mean(costs)), stderr


def compare_values(spec: LqSpec, ctrl: FeedbackControl, n_particles: int, n_mc: int,
                   noise: NoisePlan | None = None, *, master_seed: int = 0,
                   z: float = 3.0, quadrature: str = "left") -> dict:
    """Coupled cost comparison; the dominated-diffusion system costs less.

    Both systems consume the same noise plan, so the gap estimate is
    paired.  Verdict is "consistent" iff gap >= -z * stderr.
    """
    if noise is None:
        noise = NoisePlan(master_seed, n_particles, spec.grid.steps, 1)
    costs_x = _replication_costs(spec, ctrl, "X", n_particles, n_mc, noise, quadrature)
    costs_y = _replication_costs(spec, ctrl, "Y", n_particles, n_mc, noise, quadrature)
    gaps = costs_x - costs_y
    gap = float(np.mean(gaps))
    stderr = float(np.std(gaps, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
    return {
        "cost_x": float(np.mean(costs_x)),
        "cost_y": float(np.mean(costs_y)),
        "gap": gap,
        "stderr": stderr,
        "verdict": "consistent" if gap >= -z * stderr else "violated",
    }
