"""Empirical measures on the line: quantiles, TVaR, stop-loss, Wasserstein."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import TimeGrid


class EmpiricalMeasure1D:
    """Equal-weight empirical measure on R, stored as a sorted sample vector.

    The quantile function is the left-continuous generalized inverse of
    the empirical CDF, Q(p) = inf{x : F(x) >= p}.
    """

    __slots__ = ("samples",)

    def __init__(self, samples, *, assume_sorted: bool = False):
        arr = np.asarray(samples, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("empirical measure needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        # own a private copy so freezing it cannot touch the caller's array
        arr = arr.copy() if assume_sorted else np.sort(arr)
        arr.flags.writeable = False
        self.samples = arr

    @property
    def n(self) -> int:
        return self.samples.size

    def mean(self) -> float:
        return float(np.mean(self.samples))

    def quantile(self, p):
        p_arr = np.asarray(p, dtype=float)
        if np.any(p_arr <= 0.0) or np.any(p_arr > 1.0):
            raise ValueError("quantile level must lie in (0, 1]")
        t = self.n * p_arr
        # guard against n*p landing an ulp above an integer
        k = np.ceil(t - 1e-12 * np.maximum(1.0, t)).astype(int)
        out = self.samples[np.clip(k, 1, self.n) - 1]
        return float(out) if np.ndim(p) == 0 else out

    def tvar(self, p: float) -> float:
        """Exact integral of the step quantile function over (p, 1], / (1-p).

        The quantile is constant, equal to the k-th order statistic, on
        ((k-1)/n, k/n]; the integral is the weighted sum of upper order
        statistics with a fractional weight on the atom straddling p.
        """
        return float(self.samples @ _tvar_weights(self.n, p))

    def stop_loss(self, strike: float) -> float:
        """Empirical expected shortfall above a strike, mean of (x - K)+."""
        return float(np.mean(np.maximum(self.samples - strike, 0.0)))

    def translated(self, c: float) -> "EmpiricalMeasure1D":
        return EmpiricalMeasure1D(self.samples + c, assume_sorted=True)

    def __repr__(self):
        return f"EmpiricalMeasure1D(n={self.n}, mean={self.mean():.6g})"


def _tvar_weights(n: int, p: float) -> np.ndarray:
    """Weights w with tvar = sorted_samples @ w, exact for the step quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError("TVaR level must lie in (0, 1)")
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    lengths = np.maximum(0.0, upper - np.maximum(lower, p))
    return lengths / (1.0 - p)


def as_measure(samples) -> EmpiricalMeasure1D:
    if isinstance(samples, EmpiricalMeasure1D):
        return samples
    return EmpiricalMeasure1D(samples)


def tvar(mu, p: float) -> float:
    return as_measure(mu).tvar(p)


def stop_loss(mu, strike: float) -> float:
    return as_measure(mu).stop_loss(strike)


def wasserstein_p_1d(mu, nu, p: float = 1.0) -> float:
    """Exact W_p between equal-weight empirical measures with equal n.

    For equal-weight atoms on the line the optimal coupling is the sorted
    (comonotone) matching, so the distance is the l^p average of sorted
    sample differences.
    """
    mu, nu = as_measure(mu), as_measure(nu)
    if mu.n != nu.n:
        raise ValueError(f"sample counts differ: {mu.n} vs {nu.n}")
    if p < 1.0:
        raise ValueError("order p must be >= 1")
    diffs = np.abs(mu.samples - nu.samples)
    return float(np.mean(diffs**p) ** (1.0 / p))


def wp_to_dirac0(mu, p: float = 2.0) -> float:
    """W_p distance to the Dirac mass at zero, ((1/n) sum |x_i|^p)^(1/p)."""
    mu = as_measure(mu)
    if p < 1.0:
        raise ValueError("order p must be >= 1")
    return float(np.mean(np.abs(mu.samples) ** p) ** (1.0 / p))


@dataclass
class MeasurePath:
    """One empirical measure per grid node, all with the same sample count."""

    grid: TimeGrid
    measures: list

    def __post_init__(self):
        if len(self.measures) != self.grid.steps + 1:
            raise ValueError(
                f"need {self.grid.steps + 1} measures for this grid, got {len(self.measures)}"
            )
        self.measures = [as_measure(m) for m in self.measures]
        counts = {m.n for m in self.measures}
        if len(counts) != 1:
            raise ValueError(f"all node measures must share one sample count, got {counts}")


def sup_wasserstein(a: MeasurePath, b: MeasurePath, p: float = 1.0) -> float:
    """Path distance sup over nodes of the nodewise W_p."""
    if a.grid != b.grid:
        raise ValueError("measure paths live on different grids")
    return max(wasserstein_p_1d(m, n, p) for m, n in zip(a.measures, b.measures))


class EmpiricalMeasureND:
    """Raw d-dimensional sample matrix with per-coordinate 1-d marginals."""

    def __init__(self, samples):
        arr = np.asarray(samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("need a nonempty (n, d) sample matrix")
        self.samples = arr

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def marginal(self, coord: int) -> EmpiricalMeasure1D:
        return EmpiricalMeasure1D(self.samples[:, coord])


def load_samples_csv(path) -> np.ndarray:
    """Read raw samples from CSV, one column per coordinate; returns (n, d)."""
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    if arr.size == 0:
        raise ValueError(f"no samples found in {path}")
    return arr
