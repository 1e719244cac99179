"""Uniform time grids and piecewise-affine path interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_m = m*T/M on [0, T] with M steps of size h = T/M."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0.0):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def nodes(self) -> np.ndarray:
        # linspace pins nodes[0] = 0 and nodes[M] = horizon exactly
        nodes = np.linspace(0.0, self.horizon, self.steps + 1)
        nodes.flags.writeable = False
        return nodes

    def node_index(self, t: float) -> int:
        """Index m with nodes[m] == t, or raise if t is not a grid node."""
        m = int(round(t / self.h))
        if not (0 <= m <= self.steps) or self.nodes[m] != t:
            raise ValueError(f"t={t} is not a node of this grid")
        return m


class AffinePath:
    """Piecewise-affine path on a uniform grid, exact at every node.

    Between nodes the value is the convex combination
    x_m + ((t - t_m)/h) * (x_{m+1} - x_m), which agrees with the node
    values without rounding.  The sup-norm of such a path equals the
    largest node norm.
    """

    def __init__(self, grid: TimeGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != grid.steps + 1:
            raise ValueError(
                f"need {grid.steps + 1} node values for this grid, got {values.shape[0]}"
            )
        if values.ndim not in (1, 2):
            raise ValueError("node values must be (M+1,) or (M+1, d)")
        self.grid = grid
        self.values = values

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        nodes = self.grid.nodes
        if np.any(t_arr < 0.0) or np.any(t_arr > self.grid.horizon):
            raise ValueError("query time outside [0, T]")
        idx = np.searchsorted(nodes, t_arr, side="right") - 1
        at_end = idx >= self.grid.steps
        idx = np.clip(idx, 0, self.grid.steps - 1)
        w = (t_arr - nodes[idx]) / self.grid.h
        left = self.values[idx]
        right = self.values[idx + 1]
        if self.values.ndim == 2:
            w = w[..., None]
        out = left + w * (right - left)
        if np.ndim(t) == 0:
            return self.values[-1] if at_end else out
        out = np.asarray(out)
        if np.any(at_end):
            out[at_end] = self.values[-1]
        return out

    def sup_norm(self) -> float:
        if self.values.ndim == 1:
            return float(np.max(np.abs(self.values)))
        return float(np.max(np.linalg.norm(self.values, axis=1)))


def interpolate_affine(values, grid: TimeGrid) -> AffinePath:
    """Piecewise-affine interpolant of node values x_0, ..., x_M."""
    return AffinePath(grid, values)


def interpolate_functional(path, grid: TimeGrid) -> AffinePath:
    """Re-interpolate a continuous path through its values at the grid nodes.

    The result agrees with ``path`` at every node, its sup-norm never
    exceeds the sup-norm of ``path``, and the sup-distance to ``path`` is
    bounded by the modulus of continuity of ``path`` at scale T/M.
    """
    samples = [np.asarray(path(float(t)), dtype=float) for t in grid.nodes]
    return AffinePath(grid, np.stack(samples) if samples[0].ndim else np.asarray(samples))
