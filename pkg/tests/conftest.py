"""Shared fixtures: flat market curves and an analytic log-normal market."""

import numpy as np
import pytest
from scipy import integrate, stats

from pgpricing import (
    DemandModel,
    LogNormalParams,
    MarketCurves,
    PricingProblem,
    RlwrCurve,
    expected_second_price,
)


def flat_curve(value, kind, lo=2.0, hi=12.0, n=25, span=0.5):
    xs = np.linspace(lo, hi, n)
    return RlwrCurve(xs, np.full(n, float(value)), span=span, degree=2, kind=kind)


def flat_curves(phi=1.0, psi=0.25, pi=2.0, lo=2.0, hi=12.0):
    """Constant phi/psi/pi curves over [lo, hi], handy for closed-form checks."""
    return MarketCurves(
        phi=flat_curve(phi, "phi", lo, hi),
        psi=flat_curve(psi, "psi", lo, hi),
        pi=flat_curve(pi, "pi", lo, hi),
        span=0.5,
        degree=2,
    )


def expected_first_price(params: LogNormalParams, xi: float) -> float:
    """Mean winning bid among xi i.i.d. log-normal bidders, by quadrature."""
    ln = stats.lognorm(s=params.sigma, scale=np.exp(params.mu))

    def integrand(x):
        return x * xi * ln.pdf(x) * ln.cdf(x) ** (xi - 1.0)

    upper = np.exp(params.mu + 8.0 * params.sigma)
    val, _ = integrate.quad(integrand, 0.0, upper, limit=200)
    return float(val)


@pytest.fixture(scope="session")
def lognormal_curves() -> MarketCurves:
    """Curves evaluated from the LN(0, 0.5) auction model rather than from data.

    phi and pi come from the payment-model quadratures on a dense xi
    grid; psi is held at a constant 0.25 so terminal prices stay
    predictable.
    """
    params = LogNormalParams(0.0, 0.5)
    xis = np.linspace(2.0, 30.0, 60)
    phi = np.array([expected_second_price(params, x) for x in xis])
    pi = np.array([expected_first_price(params, x) for x in xis])
    psi = np.full(xis.size, 0.25)

    def mk(ys, kind):
        return RlwrCurve(xis, ys, span=0.2, degree=2, kind=kind)

    return MarketCurves(
        phi=mk(phi, "phi"), psi=mk(psi, "psi"), pi=mk(pi, "pi"), span=0.2, degree=2
    )


@pytest.fixture(scope="session")
def base_problem(lognormal_curves) -> PricingProblem:
    demand = DemandModel(alpha=1.5, zeta=500.0, beta=0.2, eta=0.2, T=30.0)
    return PricingProblem(
        demand=demand, curves=lognormal_curves, S=2000.0, Q=8000.0, seed=11
    )
