import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240911)


def normal_tvar(mean: float, sd: float, p: float) -> float:
    """TVaR of N(mean, sd^2): mean + sd * phi(Phi^-1(p)) / (1 - p)."""
    from scipy.stats import norm
    q = norm.ppf(p)
    return mean + sd * norm.pdf(q) / (1.0 - p)


def normal_stop_loss(mean: float, sd: float, strike: float) -> float:
    """E(X - K)+ for X ~ N(mean, sd^2): sd*phi(d) + (mean-K)*Phi(d)."""
    from scipy.stats import norm
    d = (mean - strike) / sd
    return sd * norm.pdf(d) + (mean - strike) * norm.cdf(d)
