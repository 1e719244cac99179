"""Coefficient sets for mean-field dynamics and the built-in model registry.

A coefficient callable receives ``(t, x, mu)`` where ``mu`` is a
read-only handle on the current particle cloud.  In the scalar fast path
(d = q = 1, which covers every built-in model) ``x`` is the (N,) state
vector and drift/diffusion return arrays broadcastable against it; in
the general case ``x`` is (N, d), drift returns (N, d), diffusion
returns (N, d, q) and the common diffusion returns (d, q).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit


class MeasureHandle:
    """Read-only view of the particle cloud backing the empirical measure."""

    __slots__ = ("samples",)

    def __init__(self, samples: np.ndarray):
        view = samples.view()
        view.flags.writeable = False
        self.samples = view

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def mean(self):
        """Cross-particle average, scalar for 1-d clouds, (d,) otherwise."""
        return np.mean(self.samples, axis=0)


@dataclass(frozen=True)
class CoefficientSet:
    """Drift, diffusion and common-noise diffusion of one system.

    ``lip_x_diffusion`` is the Lipschitz constant of the diffusion in the
    state variable; it is required (> 0) by the truncated scheme, whose
    truncation threshold is 1/(2*sqrt(h)*lip).  ``exchange_drift`` marks
    pairwise-difference drifts, whose cross-particle sum vanishes so the
    empirical mean evolves by the noise terms alone.
    """

    dim_state: int
    dim_noise: int
    drift: Callable
    diffusion: Callable
    common_diffusion: Callable
    lip_x_diffusion: float = 0.0
    lip_x_drift: float = 0.0
    exchange_drift: bool = False
    label: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ValueError("dim_state and dim_noise must be >= 1")
        if self.lip_x_diffusion < 0 or self.lip_x_drift < 0:
            raise ValueError("Lipschitz constants must be nonnegative")

    @property
    def scalar(self) -> bool:
        return self.dim_state == 1 and self.dim_noise == 1


def cfs_loadings(sigma: float, rho: float, convention: str = "figure") -> tuple[float, float]:
    """(idiosyncratic, common) volatility loadings of the interbank model.

    ``figure`` follows the displayed benchmark equation literally, which
    for sigma=5, rho=0.8 puts 4 on the idiosyncratic noise and 3 on the
    common one; ``generic`` applies the generic form sigma*(rho dB0 +
    sqrt(1-rho^2) dB), i.e. the two loadings swapped.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    tail = sigma * np.sqrt(max(0.0, 1.0 - rho * rho))
    if convention == "figure":
        return sigma * rho, tail
    if convention == "generic":
        return tail, sigma * rho
    raise ValueError(f"unknown loading convention {convention!r}")


def _exchange_drift(a: float):
    def drift(t, x, mu):
        return a * (mu.mean() - x)

    return drift


def cfs(a: float, sigma: float = 5.0, rho: float = 0.8,
        loading_convention: str = "figure") -> CoefficientSet:
    """Constant-volatility interbank model: mean-reverting exchange drift."""
    if a < 0:
        raise ValueError("exchange rate a must be >= 0")
    idio, common = cfs_loadings(sigma, rho, loading_convention)
    return CoefficientSet(
        dim_state=1,
        dim_noise=1,
        drift=_exchange_drift(a),
        diffusion=lambda t, x, mu: idio,
        common_diffusion=lambda t, mu: common,
        lip_x_diffusion=0.0,
        exchange_drift=True,
        label="cfs",
        params={"a": a, "sigma": sigma, "rho": rho,
                "loading_convention": loading_convention},
    )


def cfs_sigmoid(a: float, sigma: float = 5.0, rho: float = 0.8, sigma0: float = 2.0,
                idio_scale: float = 4.0, sigmoid_slope: float = 0.1,
                loading_convention: str = "figure") -> CoefficientSet:
    """Variable-volatility interbank model: sigmoid idiosyncratic loading."""
    if a < 0:
        raise ValueError("exchange rate a must be >= 0")
    if idio_scale <= 0:
        raise ValueError("idio_scale must be positive")

    def diffusion(t, x, mu):
        return idio_scale * expit(sigmoid_slope * x)

    # d/dx [scale * S(slope*x)] peaks at scale*slope/4
    lip = idio_scale * abs(sigmoid_slope) / 4.0
    return CoefficientSet(
        dim_state=1,
        dim_noise=1,
        drift=_exchange_drift(a),
        diffusion=diffusion,
        common_diffusion=lambda t, mu: sigma0,
        lip_x_diffusion=lip,
        exchange_drift=True,
        label="cfs_sigmoid",
        params={"a": a, "sigma": sigma, "rho": rho, "sigma0": sigma0,
                "idio_scale": idio_scale, "sigmoid_slope": sigmoid_slope,
                "loading_convention": loading_convention},
    )


def linear_meanfield(kappa: float = 1.0, sigma_scale: float = 0.8,
                     sigma0: float = 0.3) -> CoefficientSet:
    """Lipschitz benchmark: b = kappa*(mean - x), sigma = s*sqrt(1+x^2)."""
    return CoefficientSet(
        dim_state=1,
        dim_noise=1,
        drift=lambda t, x, mu: kappa * (mu.mean() - x),
        diffusion=lambda t, x, mu: sigma_scale * np.sqrt(1.0 + x * x),
        common_diffusion=lambda t, mu: sigma0,
        lip_x_diffusion=abs(sigma_scale),
        lip_x_drift=abs(kappa),
        exchange_drift=True,
        label="linear_meanfield",
        params={"kappa": kappa, "sigma_scale": sigma_scale, "sigma0": sigma0},
    )


def gbm(mu_drift: float = 0.05, sigma: float = 0.2) -> CoefficientSet:
    """Geometric Brownian motion, no measure dependence, no common noise."""
    return CoefficientSet(
        dim_state=1,
        dim_noise=1,
        drift=lambda t, x, mu: mu_drift * x,
        diffusion=lambda t, x, mu: sigma * x,
        common_diffusion=lambda t, mu: 0.0,
        lip_x_diffusion=abs(sigma),
        lip_x_drift=abs(mu_drift),
        label="gbm",
        params={"mu_drift": mu_drift, "sigma": sigma},
    )


def custom_affine(b0: float = 0.0, b1: float = 0.0, b_mean: float = 0.0,
                  s0: float = 1.0, s1: float = 0.0, s_mean: float = 0.0,
                  c0: float = 0.0) -> CoefficientSet:
    """Affine drift and diffusion in (x, mean), constant common loading."""
    return CoefficientSet(
        dim_state=1,
        dim_noise=1,
        drift=lambda t, x, mu: b0 + b1 * x + b_mean * mu.mean(),
        diffusion=lambda t, x, mu: s0 + s1 * x + s_mean * mu.mean(),
        common_diffusion=lambda t, mu: c0,
        lip_x_diffusion=abs(s1),
        lip_x_drift=abs(b1),
        label="custom_affine",
        params={"b0": b0, "b1": b1, "b_mean": b_mean,
                "s0": s0, "s1": s1, "s_mean": s_mean, "c0": c0},
    )


MODEL_BUILDERS: dict[str, Callable[..., CoefficientSet]] = {
    "cfs": cfs,
    "cfs_sigmoid": cfs_sigmoid,
    "linear_meanfield": linear_meanfield,
    "gbm": gbm,
    "custom_affine": custom_affine,
}


def make_coefficients(name: str, **params) -> CoefficientSet:
    """Build a registered model by name; raises KeyError for unknown names."""
    try:
        builder = MODEL_BUILDERS[name]
    except KeyError:
        known = ", ".join(sorted(MODEL_BUILDERS))
        raise KeyError(f"unknown model {name!r}; registered models: {known}") from None
    return builder(**params)
