"""Revenue-optimal forward pricing and allocation.

Given market curves (expected RTB payment phi, its dispersion psi, the
winning-bid level pi) and a forward demand model, this module prices a
guaranteed-delivery campaign: the terminal price p(0) is pinned to the
buyer's indifference level, prices at longer lead times follow the
variational optimality condition

    p(tau) = lambda_tilde / (1 - omega*kappa) + 1 / (alpha * (1 + beta*tau))

and the multiplier lambda_tilde is solved so the schedule sells exactly
the targeted fraction gamma of supply.  The outer search samples gamma
candidates and keeps the revenue argmax.

Expected forward sales under the schedule have a closed form.  With
a = alpha * lambda_tilde / (1 - omega*kappa) and k = a*beta + eta,

    integral over (dtau, T] of theta(tau, p(tau)) f(tau) dtau
        = zeta * exp(-(a+1)) * E(k),
    E(k) = exp(-k*dtau) * (T - dtau) * phi1(k*(T - dtau)),
    phi1(z) = (1 - exp(-z)) / z,

plus the pinned first step exp(-alpha*p0) * zeta * dtau.  Both the
root finder and its derivative use this form; independent quadrature
over the schedule is left to callers as a cross-check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .demand import DemandModel, adaptive_simpson, arrival_density, theta
from .rlwr import MarketCurves

__all__ = [
    "DEFAULT_OMEGA",
    "DEFAULT_KAPPA",
    "DEFAULT_RISK_AVERSION",
    "DEFAULT_SAMPLE_COUNT",
    "DEFAULT_GAMMA_MAX",
    "InfeasibleError",
    "PricingProblem",
    "PGSolution",
    "InnerSolution",
    "terminal_price",
    "price_schedule",
    "solve_multiplier",
    "inner_solve",
    "pg_solve",
]

DEFAULT_OMEGA = 0.05
DEFAULT_KAPPA = 1.0
DEFAULT_RISK_AVERSION = 1.0
DEFAULT_SAMPLE_COUNT = 500
DEFAULT_GAMMA_MAX = 0.99
DEFAULT_DTAU = 1.0


class InfeasibleError(ValueError):
    """Raised when a sales target exceeds what any price schedule can sell."""


@dataclass(frozen=True)
class PricingProblem:
    """Complete input of one allocation-and-pricing decision.

    Q is total demanded impressions over the horizon, S total supply,
    omega the probability a guaranteed impression fails to deliver,
    kappa the penalty paid per failed impression as a multiple of its
    price, and risk_aversion the weight on payment dispersion in the
    terminal price (the buyer's premium for certainty).  m uniform
    gamma candidates are drawn with the given seed.  T defaults to the
    demand model's horizon and must match it when given explicitly.
    """

    demand: DemandModel
    curves: MarketCurves
    S: float
    Q: float
    T: float | None = None
    omega: float = DEFAULT_OMEGA
    kappa: float = DEFAULT_KAPPA
    risk_aversion: float = DEFAULT_RISK_AVERSION
    m: int = DEFAULT_SAMPLE_COUNT
    seed: int = 0
    dtau: float = DEFAULT_DTAU
    gamma_max: float = DEFAULT_GAMMA_MAX

    def __post_init__(self) -> None:
        if self.S <= 0 or self.Q <= 0:
            raise ValueError(f"S and Q must be positive, got S={self.S}, Q={self.Q}")
        if self.omega < 0 or self.omega >= 1:
            raise ValueError(f"omega must lie in [0, 1), got {self.omega}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        if self.omega * self.kappa >= 1:
            raise ValueError(
                f"omega*kappa = {self.omega * self.kappa} >= 1; the net guaranteed "
                "revenue factor (1 - omega*kappa) must stay positive"
            )
        if self.risk_aversion < 0:
            raise ValueError(f"risk_aversion must be non-negative, got {self.risk_aversion}")
        if self.m < 1:
            raise ValueError(f"m must be at least 1, got {self.m}")
        if self.T is None:
            object.__setattr__(self, "T", float(self.demand.T))
        elif abs(self.T - self.demand.T) > 1e-9 * max(1.0, self.demand.T):
            raise ValueError(
                f"horizon mismatch: problem T={self.T} vs demand model T={self.demand.T}"
            )
        if not 0 < self.dtau <= self.demand.T:
            raise ValueError(f"dtau must lie in (0, T], got {self.dtau}")
        if not 0 <= self.gamma_max < 1:
            raise ValueError(f"gamma_max must lie in [0, 1), got {self.gamma_max}")

    def replace(self, **changes) -> "PricingProblem":
        fields = {
            "demand": self.demand, "curves": self.curves, "S": self.S, "Q": self.Q,
            "T": self.T, "omega": self.omega, "kappa": self.kappa,
            "risk_aversion": self.risk_aversion, "m": self.m, "seed": self.seed,
            "dtau": self.dtau, "gamma_max": self.gamma_max,
        }
        if "demand" in changes and "T" not in changes:
            fields["T"] = None
        fields.update(changes)
        return PricingProblem(**fields)


class InnerSolution(NamedTuple):
    """Fixed-gamma solve result: (schedule, lambda_tilde, G, H, R).

    schedule is a tuple of (tau, price) pairs on the day grid, empty
    for gamma = 0 and for infeasible candidates; infeasible candidates
    carry R = -inf so an outer argmax skips them.
    """

    schedule: tuple[tuple[float, float], ...]
    lambda_tilde: float
    G: float
    H: float
    R: float


@dataclass(frozen=True)
class PGSolution:
    """Optimal allocation fraction with its price schedule and revenue split.

    G is expected guaranteed revenue net of the delivery penalty, H
    expected RTB revenue on the retained (1 - gamma_star) share, and
    R = G + H.  xi_remaining is the per-impression competition left in
    the RTB channel after forward demand is removed.
    """

    gamma_star: float
    lambda_tilde: float
    p0: float
    schedule: tuple[tuple[float, float], ...]
    G: float
    H: float
    R: float
    xi_remaining: float
    diagnostics: dict = field(default_factory=dict)

    def price_at(self, tau: float) -> float:
        """Schedule price at lead time tau, interpolating between grid days."""
        if not self.schedule:
            raise ValueError("solution has an empty schedule (gamma_star = 0)")
        taus = np.array([t for t, _ in self.schedule])
        prices = np.array([p for _, p in self.schedule])
        if tau < taus[0] or tau > taus[-1]:
            raise ValueError(f"tau = {tau} outside the schedule range [{taus[0]}, {taus[-1]}]")
        return float(np.interp(tau, taus, prices))

    def to_dict(self) -> dict:
        lam = self.lambda_tilde
        return {
            "gamma_star": self.gamma_star,
            "lambda_tilde": None if math.isnan(lam) else lam,
            "p0": self.p0,
            "schedule": [{"tau": t, "price": p} for t, p in self.schedule],
            "G": self.G,
            "H": self.H,
            "R": self.R,
            "xi_remaining": self.xi_remaining,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PGSolution":
        lam = payload.get("lambda_tilde")
        return cls(
            gamma_star=float(payload["gamma_star"]),
            lambda_tilde=math.nan if lam is None else float(lam),
            p0=float(payload["p0"]),
            schedule=tuple((float(r["tau"]), float(r["price"])) for r in payload["schedule"]),
            G=float(payload["G"]),
            H=float(payload["H"]),
            R=float(payload["R"]),
            xi_remaining=float(payload["xi_remaining"]),
            diagnostics=dict(payload.get("diagnostics", {})),
        )


def terminal_price(curves: MarketCurves, xi: float, risk_aversion: float) -> float:
    """Delivery-day price p(0) a rational buyer accepts over bidding.

    phi(xi) + risk_aversion * psi(xi), capped at the winning-bid level
    pi(xi): above pi the buyer would simply outbid everyone instead.
    Falls back to pi(xi) outright when the dispersion estimate at xi is
    low-confidence (nearest training point below two bidders, where a
    second-price spread is not identified).  Negative dispersion
    estimates, an artifact of smoothing, are clipped to zero.
    """
    if risk_aversion < 0:
        raise ValueError(f"risk_aversion must be non-negative, got {risk_aversion}")
    pi = float(curves.pi(xi))
    if curves.psi_low_confidence(xi):
        price = pi
    else:
        base = float(curves.phi(xi)) + risk_aversion * max(float(curves.psi(xi)), 0.0)
        price = min(base, pi)
    if price < 0:
        raise ValueError(f"market curves produced a negative terminal price at xi = {xi}")
    return price


def _eq_price(demand: DemandModel, lagrange: float, omega: float, kappa: float,
              tau: float) -> float:
    return lagrange / (1.0 - omega * kappa) + 1.0 / (demand.alpha * (1.0 + demand.beta * tau))


def price_schedule(
    demand: DemandModel,
    lagrange: float,
    omega: float,
    kappa: float,
    grid: Sequence[float],
    p0: float | None = None,
) -> list[tuple[float, float]]:
    """Optimal price at each grid lead time, as (tau, price) pairs.

    Prices at tau > 0 follow the optimality condition
    lambda_tilde/(1-omega*kappa) + 1/(alpha*(1+beta*tau)); the tau = 0
    point takes the pinned terminal price, which must be supplied when
    the grid contains it.  The tau > 0 part is non-increasing in tau by
    construction; the pinned point may sit above or below it.
    """
    if omega * kappa >= 1:
        raise ValueError(f"omega*kappa = {omega * kappa} must be < 1")
    if lagrange < 0:
        raise ValueError(f"lagrange multiplier must be non-negative, got {lagrange}")
    taus = np.asarray(grid, dtype=float)
    if taus.ndim != 1 or taus.size == 0:
        raise ValueError("grid must be a non-empty 1-D sequence of lead times")
    if np.any(taus < 0) or np.any(np.diff(taus) <= 0):
        raise ValueError("grid must be non-negative and strictly increasing")
    out: list[tuple[float, float]] = []
    for t in taus:
        if t == 0.0:
            if p0 is None:
                raise ValueError("grid contains tau = 0 but no pinned terminal price given")
            out.append((0.0, float(p0)))
        else:
            out.append((float(t), _eq_price(demand, lagrange, omega, kappa, float(t))))
    tail = [p for t, p in out if t > 0]
    assert all(a >= b - 1e-12 for a, b in zip(tail, tail[1:]))
    return out


def _phi1(z: float) -> float:
    """(1 - exp(-z))/z, stable near 0."""
    if abs(z) < 1e-5:
        return 1.0 - z / 2.0 + z * z / 6.0 - z ** 3 / 24.0
    return -math.expm1(-z) / z


def _phi1_prime(z: float) -> float:
    """Derivative of (1 - exp(-z))/z, stable near 0."""
    if abs(z) < 1e-5:
        return -0.5 + z / 3.0 - z * z / 8.0 + z ** 3 / 30.0
    return (math.exp(-z) * (1.0 + z) - 1.0) / (z * z)


def _first_step_sales(demand: DemandModel, p0: float, dtau: float) -> float:
    # Eq. separates the delivery-day step: theta(0, p0) * f(0) * dtau.
    return demand.zeta * math.exp(-demand.alpha * p0) * dtau


def _tail_sales(demand: DemandModel, omega: float, kappa: float, dtau: float,
                lagrange: float) -> tuple[float, float]:
    """Closed-form tail sales over (dtau, T] and d(sales)/d(lagrange)."""
    c = demand.alpha / (1.0 - omega * kappa)
    a = c * lagrange
    k = a * demand.beta + demand.eta
    L = demand.T - dtau
    if L <= 0:
        return 0.0, 0.0
    amp = demand.zeta * math.exp(-(a + 1.0))
    decay = math.exp(-k * dtau)
    E = decay * L * _phi1(k * L)
    dE_dk = -dtau * E + decay * L * L * _phi1_prime(k * L)
    sales = amp * E
    derivative = amp * c * (demand.beta * dE_dk - E)
    return sales, derivative


def solve_multiplier(
    demand: DemandModel,
    omega: float,
    kappa: float,
    target: float,
    p0: float,
    dtau: float = DEFAULT_DTAU,
    method: str = "newton",
    tol: float | None = None,
    max_iter: int = 100,
) -> float:
    """Multiplier making the schedule sell exactly ``target`` impressions.

    Expected sales, pinned first step plus the closed-form tail, are
    strictly decreasing in the multiplier, so the root is unique.
    Newton steps use the analytic derivative and are safeguarded by a
    maintained bracket; ``method="bisect"`` forces pure bisection.
    Convergence is |sales - target| <= tol, default 1e-6 * max(target, 1).

    A target above the lambda_tilde = 0 maximum raises InfeasibleError.
    A target at or below the pinned first step alone cannot be met by
    any finite multiplier (the tail only adds sales); the multiplier is
    clamped at a level making tail sales negligible, with a warning.
    """
    if method not in ("newton", "bisect"):
        raise ValueError(f"method must be 'newton' or 'bisect', got {method!r}")
    if target <= 0:
        raise ValueError(f"target must be positive, got {target}")
    if p0 < 0:
        raise ValueError(f"p0 must be non-negative, got {p0}")
    if omega * kappa >= 1:
        raise ValueError(f"omega*kappa = {omega * kappa} must be < 1")
    if not 0 < dtau <= demand.T:
        raise ValueError(f"dtau must lie in (0, T], got {dtau}")
    if tol is None:
        tol = 1e-6 * max(target, 1.0)

    first = _first_step_sales(demand, p0, dtau)
    tail0, _ = _tail_sales(demand, omega, kappa, dtau, 0.0)
    maximum = first + tail0
    if target > maximum:
        raise InfeasibleError(
            f"target {target:.6g} exceeds the maximum achievable forward sale "
            f"{maximum:.6g} (first step {first:.6g} + free-multiplier tail {tail0:.6g})"
        )

    c = demand.alpha / (1.0 - omega * kappa)
    L = max(demand.T - dtau, 1.0)
    a_hi = max(1.0, math.log(max(demand.zeta, 1.0) * L / max(tol, 1e-12)))
    clamp = a_hi / c
    if target <= first:
        warnings.warn(
            f"target {target:.6g} does not exceed the pinned first-step sale "
            f"{first:.6g}; returning the multiplier at its upper clamp",
            RuntimeWarning,
            stacklevel=2,
        )
        return clamp

    def g(lam: float) -> tuple[float, float]:
        sales, dsales = _tail_sales(demand, omega, kappa, dtau, lam)
        return first + sales - target, dsales

    lo, g_lo = 0.0, maximum - target
    hi = clamp
    g_hi, _ = g(hi)
    expansions = 0
    while g_hi > 0.0:
        hi *= 2.0
        g_hi, _ = g(hi)
        expansions += 1
        if expansions > 200:
            raise ArithmeticError("failed to bracket the multiplier root")

    if method == "bisect":
        for _ in range(max_iter * 10):
            mid = 0.5 * (lo + hi)
            g_mid, _ = g(mid)
            if abs(g_mid) <= tol:
                return mid
            if g_mid > 0.0:
                lo = mid
            else:
                hi = mid
        raise ArithmeticError(
            f"bisection did not reach tolerance {tol:.3g} in {max_iter * 10} steps"
        )

    lam = 0.5 * (lo + hi)
    for _ in range(max_iter):
        g_val, g_prime = g(lam)
        if abs(g_val) <= tol:
            return lam
        if g_val > 0.0:
            lo = lam
        else:
            hi = lam
        if g_prime < 0.0 and math.isfinite(g_prime):
            step = lam - g_val / g_prime
        else:
            step = 0.5 * (lo + hi)
        # Reject steps leaving the bracket; bisect instead.
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        lam = step
    raise ArithmeticError(f"Newton did not reach tolerance {tol:.3g} in {max_iter} steps")


def _day_grid(T: float) -> np.ndarray:
    grid = np.arange(0.0, T, 1.0)
    if grid.size == 0 or grid[-1] < T:
        grid = np.append(grid, T)
    return grid


def _infeasible() -> InnerSolution:
    return InnerSolution((), math.nan, math.nan, math.nan, float("-inf"))


def inner_solve(problem: PricingProblem, gamma: float) -> InnerSolution:
    """Revenue of one allocation candidate at its optimal schedule.

    Prices the remaining RTB competition xi = (Q - gamma*S)/(S - gamma*S),
    pins p(0) there, solves the multiplier selling exactly gamma*S, and
    integrates net guaranteed revenue (1 - omega*kappa) * p * theta * f
    over the window.  Candidates whose target is unreachable, below the
    pinned first step, or exceeding remaining demand come back with
    R = -inf so an outer search can discard them without aborting.
    """
    if not 0 <= gamma <= problem.gamma_max:
        raise ValueError(f"gamma = {gamma} outside [0, {problem.gamma_max}]")
    d = problem.demand
    S, Q = problem.S, problem.Q
    net = 1.0 - problem.omega * problem.kappa
    if gamma == 0.0:
        xi = Q / S
        H = S * float(problem.curves.phi(xi))
        return InnerSolution((), math.nan, 0.0, H, H)
    remaining = Q - gamma * S
    if remaining <= 0:
        return _infeasible()
    xi = remaining / (S - gamma * S)
    p0 = terminal_price(problem.curves, xi, problem.risk_aversion)
    target = gamma * S
    first = _first_step_sales(d, p0, problem.dtau)
    if target <= first:
        # No finite multiplier sells this little once p(0) is pinned.
        return _infeasible()
    try:
        lam = solve_multiplier(
            d, problem.omega, problem.kappa, target, p0,
            dtau=problem.dtau, tol=1e-6 * S,
        )
    except InfeasibleError:
        return _infeasible()

    def revenue_density(tau: float) -> float:
        p = _eq_price(d, lam, problem.omega, problem.kappa, tau)
        return p * theta(d, tau, p) * arrival_density(d, tau)

    knots = _day_grid(float(d.T))
    tail_revenue = adaptive_simpson(
        revenue_density, problem.dtau, float(d.T), rel_tol=1e-9,
        knots=knots[knots >= problem.dtau],
    )
    G = net * (p0 * first + tail_revenue)
    H = (1.0 - gamma) * S * float(problem.curves.phi(xi))
    schedule = tuple(
        price_schedule(d, lam, problem.omega, problem.kappa, _day_grid(float(d.T)), p0=p0)
    )
    return InnerSolution(schedule, lam, G, H, G + H)


def pg_solve(problem: PricingProblem, stratified: bool = False) -> PGSolution:
    """Optimal forward allocation by sampled search over gamma.

    Draws m uniform gamma candidates from the problem seed (clamped to
    gamma_max), always adds gamma = 0, prices each independently, and
    keeps the highest revenue; ties go to the smallest gamma.  With
    ``stratified=True`` the candidates form an equispaced grid instead,
    for reproducible sweeps.  Deterministic for a fixed seed.
    """
    if stratified:
        gammas = np.linspace(0.0, problem.gamma_max, problem.m)
    else:
        rng = np.random.default_rng(problem.seed)
        gammas = np.minimum(rng.uniform(0.0, 1.0, problem.m), problem.gamma_max)
    candidates = [0.0] + [float(x) for x in gammas]
    best_gamma = None
    best: InnerSolution | None = None
    infeasible = 0
    for gamma in candidates:
        sol = inner_solve(problem, gamma)
        if sol.R == float("-inf"):
            infeasible += 1
            continue
        if best is None or sol.R > best.R or (sol.R == best.R and gamma < best_gamma):
            best, best_gamma = sol, gamma
    if best is None:
        raise InfeasibleError("no feasible allocation candidate (gamma = 0 rejected)")

    gamma_star = best_gamma
    if gamma_star == 0.0:
        xi = problem.Q / problem.S
        p0 = terminal_price(problem.curves, xi, problem.risk_aversion)
        sold_gap = 0.0
    else:
        xi = (problem.Q - gamma_star * problem.S) / (problem.S - gamma_star * problem.S)
        p0 = best.schedule[0][1]
        first = _first_step_sales(problem.demand, p0, problem.dtau)
        tail, _ = _tail_sales(problem.demand, problem.omega, problem.kappa,
                              problem.dtau, best.lambda_tilde)
        sold_gap = abs(first + tail - gamma_star * problem.S)
    diagnostics = {
        "m": problem.m,
        "seed": problem.seed,
        "stratified": bool(stratified),
        "candidates_evaluated": len(candidates),
        "candidates_infeasible": infeasible,
        "sold_gap": sold_gap,
    }
    return PGSolution(
        gamma_star=gamma_star,
        lambda_tilde=best.lambda_tilde,
        p0=p0,
        schedule=best.schedule,
        G=best.G,
        H=best.H,
        R=best.R,
        xi_remaining=xi,
        diagnostics=diagnostics,
    )
