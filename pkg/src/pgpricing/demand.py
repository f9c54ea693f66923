"""Forward-purchase demand model and its calibration from bid data.

theta(tau, p) is the fraction of arriving advertisers who accept
guaranteed price p with tau days left to delivery; f(tau) is their
arrival density, peaking on the delivery day.  Expected forward sales
under a price schedule integrate theta * f over the selling window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DEFAULT_BETA",
    "DEFAULT_ETA",
    "DemandModel",
    "theta",
    "arrival_density",
    "sold_quantity",
    "adaptive_simpson",
    "calibrate_alpha",
    "calibrate_zeta",
]

DEFAULT_BETA = 0.2
DEFAULT_ETA = 0.2
ALPHA_SEARCH_RANGE = (0.01, 50.0)


@dataclass(frozen=True)
class DemandModel:
    """Parameters of the forward demand surface.

    alpha scales price sensitivity, beta its growth with lead time,
    zeta is the peak arrival density on the delivery day (advertisers
    per day), eta the decay of arrivals with lead time, and T the
    length of the selling window in days.
    """

    alpha: float
    zeta: float
    beta: float = DEFAULT_BETA
    eta: float = DEFAULT_ETA
    T: float = 30.0

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.zeta <= 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if self.beta < 0 or self.eta < 0:
            raise ValueError("beta and eta must be non-negative")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "zeta": self.zeta,
                "eta": self.eta, "T": self.T}

    @classmethod
    def from_dict(cls, payload: dict) -> "DemandModel":
        return cls(
            alpha=float(payload["alpha"]),
            zeta=float(payload["zeta"]),
            beta=float(payload.get("beta", DEFAULT_BETA)),
            eta=float(payload.get("eta", DEFAULT_ETA)),
            T=float(payload["T"]),
        )


def _check_tau(model: DemandModel, tau: float) -> None:
    if tau < 0 or tau > model.T * (1 + 1e-12):
        raise ValueError(f"tau = {tau} outside the selling window [0, {model.T}]")


def theta(model: DemandModel, tau: float, p: float) -> float:
    """Fraction of arrivals willing to buy forward at price p, tau days out.

    exp(-alpha * p * (1 + beta * tau)): equal to 1 at p = 0, strictly
    decreasing in p, and non-increasing in tau.
    """
    _check_tau(model, tau)
    if p < 0:
        raise ValueError(f"price must be non-negative, got {p}")
    return math.exp(-model.alpha * p * (1.0 + model.beta * tau))


def arrival_density(model: DemandModel, tau: float) -> float:
    """Arrival density zeta * exp(-eta * tau) of potential forward buyers."""
    _check_tau(model, tau)
    return model.zeta * math.exp(-model.eta * tau)


def adaptive_simpson(
    func: Callable[[float], float],
    a: float,
    b: float,
    rel_tol: float = 1e-6,
    knots: Sequence[float] | None = None,
    max_depth: int = 40,
) -> float:
    """Composite Simpson quadrature, refined adaptively per panel.

    Initial panels follow ``knots`` when given (a grid over [a, b]),
    otherwise a single panel; each panel bisects until its Richardson
    error estimate clears its share of the tolerance, which is set
    relative to a first composite pass over the panels.
    """
    if b == a:
        return 0.0
    if b < a:
        raise ValueError(f"integration bounds reversed: [{a}, {b}]")
    if knots is None:
        pts = [float(a), float(b)]
    else:
        interior = {float(k) for k in knots if a < float(k) < b}
        pts = sorted(interior | {float(a), float(b)})
    panels = []
    rough = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        flo, fhi = func(lo), func(hi)
        fmid = func(0.5 * (lo + hi))
        estimate = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
        panels.append((lo, hi, flo, fmid, fhi, estimate))
        rough += estimate
    budget = rel_tol * max(abs(rough), 1e-300)
    total = 0.0
    for lo, hi, flo, fmid, fhi, estimate in panels:
        share = budget * (hi - lo) / (b - a)
        total += _refine_panel(func, lo, hi, flo, fmid, fhi, estimate, share, max_depth)
    return total


def _refine_panel(func, a, b, fa, fm, fb, whole, tol, depth):
    mid = 0.5 * (a + b)
    lm = 0.5 * (a + mid)
    rm = 0.5 * (mid + b)
    flm, frm = func(lm), func(rm)
    left = (mid - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - mid) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return _refine_panel(func, a, mid, fa, flm, fm, left, tol / 2.0, depth - 1) + _refine_panel(
        func, mid, b, fm, frm, fb, right, tol / 2.0, depth - 1
    )


def _schedule_callable(schedule) -> tuple[Callable[[float], float], np.ndarray | None]:
    if callable(schedule):
        return schedule, None
    if hasattr(schedule, "taus") and hasattr(schedule, "prices"):
        taus = np.asarray(schedule.taus, dtype=float)
        prices = np.asarray(schedule.prices, dtype=float)
    else:
        taus, prices = schedule
        taus = np.asarray(taus, dtype=float)
        prices = np.asarray(prices, dtype=float)
    if taus.ndim != 1 or taus.shape != prices.shape or taus.size < 2:
        raise ValueError("a grid schedule needs matching 1-D taus and prices with >= 2 points")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("schedule grid must be strictly increasing in tau")

    def price(t: float) -> float:
        return float(np.interp(t, taus, prices))

    return price, taus


def sold_quantity(
    model: DemandModel,
    schedule,
    lo: float = 0.0,
    hi: float | None = None,
    rel_tol: float = 1e-6,
) -> float:
    """Expected impressions sold forward under a price schedule.

    Integrates theta(tau, p(tau)) * f(tau) over [lo, hi] (the full
    selling window by default).  ``schedule`` is either a callable
    p(tau) or a (taus, prices) grid, interpolated linearly; a grid must
    cover the integration range.  Composite Simpson on day-sized
    panels (or the grid's own panels), refined adaptively to
    ``rel_tol``.
    """
    hi = float(model.T) if hi is None else float(hi)
    if lo < 0 or hi > model.T * (1 + 1e-12):
        raise ValueError(f"integration range [{lo}, {hi}] outside the window [0, {model.T}]")
    price, grid = _schedule_callable(schedule)
    if grid is not None:
        if grid[0] > lo + 1e-9 or grid[-1] < hi - 1e-9:
            raise ValueError(
                f"schedule grid [{grid[0]}, {grid[-1]}] does not cover [{lo}, {hi}]"
            )
        knots: Sequence[float] | None = grid
    else:
        knots = np.arange(math.floor(lo), hi + 1.0, 1.0)

    def integrand(t: float) -> float:
        return theta(model, t, price(t)) * arrival_density(model, t)

    return adaptive_simpson(integrand, lo, hi, rel_tol=rel_tol, knots=knots)


def _golden_min(func: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Golden-section minimum of a unimodal function on [lo, hi]."""
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = func(d)
    return 0.5 * (a + b)


def calibrate_alpha(
    bids: Sequence[float],
    grid: Sequence[float] | None = None,
    tol: float = 1e-4,
) -> float:
    """Price sensitivity matching exp(-alpha*p) to the bid survival curve.

    Minimizes the root mean square error between the model acceptance
    curve exp(-alpha * p) and the empirical fraction of bids at or
    above each grid price, by golden-section search over alpha in
    [0.01, 50].  The default grid spans the observed bid range.
    """
    x = np.asarray(bids, dtype=float)
    if x.size < 100:
        raise ValueError(f"need at least 100 bids to calibrate alpha, got {x.size}")
    if np.any(x < 0):
        raise ValueError("bids must be non-negative")
    if float(np.ptp(x)) == 0.0:
        raise ValueError(
            "degenerate bid sample (all values equal); the survival curve carries no "
            "price information, set alpha manually"
        )
    if grid is None:
        grid = np.linspace(float(x.min()), float(x.max()), 256)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2 or np.any(grid < 0):
        raise ValueError("grid must hold at least 2 non-negative prices")
    xs = np.sort(x)
    survival = 1.0 - np.searchsorted(xs, grid, side="left") / x.size

    def rmse(alpha: float) -> float:
        return float(np.sqrt(np.mean((np.exp(-alpha * grid) - survival) ** 2)))

    lo, hi = ALPHA_SEARCH_RANGE
    return _golden_min(rmse, lo, hi, tol)


def calibrate_zeta(Q: float, bids: Sequence[float], p: float, alpha: float) -> float:
    """Peak arrival density implied by demand at a reference price.

    Takes the fraction of observed bids at or above p as the share of
    the Q demanded impressions that would move to forward buying, and
    divides by the acceptance probability exp(-alpha*p), so that one
    unit time step of forward selling at p absorbs exactly that
    demand.
    """
    if Q <= 0:
        raise ValueError(f"Q must be positive, got {Q}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if p < 0:
        raise ValueError(f"reference price must be non-negative, got {p}")
    x = np.asarray(bids, dtype=float)
    if x.size == 0:
        raise ValueError("no bids supplied")
    share = float(np.mean(x >= p))
    if share == 0.0:
        warnings.warn(
            "no bids at or above the reference price; calibrated zeta is 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return float(Q) * share / math.exp(-alpha * p)
