"""Empirical strong-rate study: coarse schemes coupled to a fine reference.

Both resolutions consume the same Brownian paths: a coarse increment is
the normalized sum of the fine increments in its window, so the observed
difference isolates the time-discretization error.  For Lipschitz
coefficients the fitted log-log slope of error against step size should
sit near 1/2 (and near 1 when the noise is switched off).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet
from .grid import TimeGrid
from .noise import NoisePlan
from .sde import simulate_with_increments


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def aggregate_increments(fine: np.ndarray, m_coarse: int) -> np.ndarray:
    """Coarse N(0,1) increments as normalized sums of fine ones.

    ``fine`` has the step axis first; the ratio of resolutions must be an
    integer, and each coarse draw is sum(fine window)/sqrt(ratio), which
    is again standard normal and reproduces the same Brownian path at
    the coarse nodes.
    """
    m_fine = fine.shape[0]
    if m_fine % m_coarse != 0:
        raise ValueError(f"cannot aggregate {m_fine} steps into {m_coarse}")
    ratio = m_fine // m_coarse
    shaped = fine.reshape((m_coarse, ratio) + fine.shape[1:])
    return shaped.sum(axis=1) / np.sqrt(ratio)


@dataclass
class StrongRateResult:
    m_values: list
    errors: list           # same order as m_values
    slope: float
    intercept: float
    p: float

    def rows(self) -> list[dict]:
        return [
            {"M": m, "strong_error": e, "fitted_slope": self.slope}
            for m, e in zip(self.m_values, self.errors)
        ]


def strong_rate_study(coeffs: CoefficientSet, horizon: float, m_values, m_ref: int,
                      n_particles: int, n_replications: int, *, p: float = 2.0,
                      init_sampler=None, master_seed: int = 0) -> StrongRateResult:
    """Fit the strong convergence rate of the scheme against itself refined.

    For every replication the reference scheme runs at ``m_ref`` steps;
    each coarse level reuses its aggregated increments.  The error at
    level M is E[sup over coarse nodes |X^M - X^ref|^p]^(1/p), averaged
    over particles and replications, and the slope comes from a
    least-squares fit of log error against log h.
    """
    m_values = sorted(int(m) for m in m_values)
    if len(set(m_values)) < 2:
        raise ValueError("need at least two distinct coarse levels to fit a slope")
    if not _is_power_of_two(m_ref):
        raise ValueError(f"reference level {m_ref} is not a power of two")
    for m in m_values:
        if not _is_power_of_two(m):
            raise ValueError(f"non-dyadic level {m} rejected")
        if m >= m_ref:
            raise ValueError(f"coarse level {m} must be below the reference {m_ref}")
    if not coeffs.scalar:
        raise ValueError("the rate study drives scalar (d = q = 1) benchmarks")

    grid_ref = TimeGrid(horizon, m_ref)
    plan = NoisePlan(master_seed, n_particles, m_ref, 1)
    acc = {m: 0.0 for m in m_values}
    count = 0
    for rep in range(n_replications):
        fine_idio = plan.idiosyncratic_block(rep, n_particles)    # (m_ref, N, 1)
        fine_common = plan.common_increments(rep)                 # (m_ref, 1)
        x0 = _initial_states(init_sampler, plan, rep, n_particles)
        ref = simulate_with_increments(coeffs, grid_ref, x0, fine_idio, fine_common,
                                       replication=rep)
        ref_states = ref.states[:, :, 0]                          # (N, m_ref+1)
        for m in m_values:
            grid_m = TimeGrid(horizon, m)
            coarse = simulate_with_increments(
                coeffs, grid_m, x0,
                aggregate_increments(fine_idio, m),
                aggregate_increments(fine_common, m),
                replication=rep,
            )
            stride = m_ref // m
            diff = np.abs(coarse.states[:, :, 0] - ref_states[:, ::stride])
            acc[m] += float(np.sum(diff.max(axis=1) ** p))
        count += n_particles

    errors = [(acc[m] / count) ** (1.0 / p) for m in m_values]
    hs = np.array([horizon / m for m in m_values])
    slope, intercept = np.polyfit(np.log(hs), np.log(errors), 1)
    return StrongRateResult(m_values=m_values, errors=errors,
                            slope=float(slope), intercept=float(intercept), p=p)


def _initial_states(init_sampler, plan: NoisePlan, rep: int, n: int) -> np.ndarray:
    if init_sampler is None:
        return np.zeros(n)
    if not callable(init_sampler):
        return np.full(n, float(init_sampler))
    return np.array([float(init_sampler(plan.init_rng(rep, i))) for i in range(n)])
