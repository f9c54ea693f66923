"""Held-out evaluation of a forward-selling solution.

Replays a solved price schedule against actual bids from a test
window, re-resolves the thinned RTB auctions, and reports the revenue
of the combined channel next to the pure-auction baselines.  Also
hosts slot clustering by competition level and parameter sensitivity
sweeps.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.cluster import hierarchy

from .bidlog import AuctionOutcome, BidRecord, SlotStats
from .demand import DemandModel, arrival_density, theta
from .pricing import PGSolution, PricingProblem, inner_solve, pg_solve

__all__ = [
    "ReplayResult",
    "RevenueReport",
    "SlotCluster",
    "cluster_slots",
    "dendrogram_json",
    "replay_guaranteed_sale",
    "compute_revenues",
    "sensitivity_sweep",
    "SWEEPABLE_PARAMETERS",
]

SWEEPABLE_PARAMETERS = ("alpha", "beta", "zeta", "eta", "omega_kappa", "gamma", "T")


class ReplayResult(NamedTuple):
    """Forward-sale replay outcome: (sold count, revenue, residual pool)."""

    sold: int
    revenue: float
    residual: list[BidRecord]


@dataclass(frozen=True)
class RevenueReport:
    """Five revenue figures for one slot and delivery window.

    r1 is the model's own estimate of optimal total revenue and r2 the
    same policy replayed against actual held-out bids; b1 and b2 are
    the actual first-price and second-price auction revenues of the
    untouched pool, and b3 the curve-estimated auction revenue for it.
    """

    r1: float
    r2: float
    b1: float
    b2: float
    b3: float

    def __post_init__(self) -> None:
        if self.b2 > self.b1 + 1e-9 * max(1.0, abs(self.b1)):
            raise ValueError(
                f"second-price revenue b2 = {self.b2} exceeds first-price b1 = {self.b1}"
            )

    def to_dict(self) -> dict:
        return {"r1": self.r1, "r2": self.r2, "b1": self.b1, "b2": self.b2, "b3": self.b3}

    @classmethod
    def from_dict(cls, payload: dict) -> "RevenueReport":
        return cls(*(float(payload[k]) for k in ("r1", "r2", "b1", "b2", "b3")))


@dataclass(frozen=True)
class SlotCluster:
    """One competition-level cluster of ad slots."""

    cluster_id: int
    member_slots: tuple[str, ...]
    mean_xi: float


def _stats_list(stats) -> list[SlotStats]:
    items = list(stats.values()) if isinstance(stats, Mapping) else list(stats)
    if not items:
        raise ValueError("no slot statistics supplied")
    for s in items:
        if s.xi is None:
            raise ValueError(f"slot {s.slot_id!r} has no per-impression demand estimate")
    return sorted(items, key=lambda s: s.slot_id)


def cluster_slots(stats, k: int) -> list[SlotCluster]:
    """Group slots by per-impression demand, average-linkage, cut at k.

    Accepts a mapping or sequence of per-slot statistics.  Clusters
    come back ordered by ascending mean demand, members sorted, ids
    0..k-1; together they partition the slot set.  Invariant under
    permutation of the input.
    """
    items = _stats_list(stats)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if k > len(items):
        raise ValueError(f"k = {k} exceeds the number of slots ({len(items)})")
    if len(items) == 1:
        return [SlotCluster(0, (items[0].slot_id,), float(items[0].xi))]
    xs = np.array([[float(s.xi)] for s in items])
    Z = hierarchy.linkage(xs, method="average")
    labels = hierarchy.fcluster(Z, t=k, criterion="maxclust")
    groups: dict[int, list[SlotStats]] = {}
    for s, lab in zip(items, labels):
        groups.setdefault(int(lab), []).append(s)
    raw = [
        (float(np.mean([float(s.xi) for s in members])),
         tuple(sorted(s.slot_id for s in members)))
        for members in groups.values()
    ]
    raw.sort()
    return [SlotCluster(i, slots, mean) for i, (mean, slots) in enumerate(raw)]


def dendrogram_json(stats) -> dict:
    """Full merge tree over slots as nested {slot} / {distance, children}."""
    items = _stats_list(stats)
    if len(items) == 1:
        return {"slot": items[0].slot_id, "xi": float(items[0].xi)}
    xs = np.array([[float(s.xi)] for s in items])
    Z = hierarchy.linkage(xs, method="average")
    root = hierarchy.to_tree(Z)

    def walk(node) -> dict:
        if node.is_leaf():
            s = items[node.id]
            return {"slot": s.slot_id, "xi": float(s.xi)}
        return {"distance": float(node.dist),
                "children": [walk(node.left), walk(node.right)]}

    return walk(root)


def _default_policy(bid: float, price: float) -> bool:
    return bid >= price


def replay_guaranteed_sale(
    solution: PGSolution,
    test_bids: Sequence[BidRecord],
    demand: DemandModel,
    policy: Callable[[float, float], bool] | None = None,
    dtau: float = 1.0,
    supply: float | None = None,
) -> ReplayResult:
    """Sell the schedule against observed bids, highest bidders first.

    Walks the schedule chronologically (longest lead time first).  On
    each day the policy decides which still-unsold bidders accept the
    day's price, treating the observed bid as the bidder's value; the
    default accepts when bid >= price.  Acceptances fill from the
    highest bid down, capped by the day's modeled demand
    theta(tau, p) * f(tau) * dtau and, when ``supply`` is given, by the
    total commitment gamma_star * supply.  Each unit sold removes that
    bid from the returned residual pool, which keeps the input order.
    """
    if policy is None:
        policy = _default_policy
    pool = list(test_bids)
    slots = {b.slot_id for b in pool}
    if len(slots) > 1:
        raise ValueError(f"test bids span multiple slots: {sorted(slots)}")
    if not solution.schedule or not pool:
        return ReplayResult(0, 0.0, pool)

    heap = [(-b.bid, b.impression_id, b.advertiser_id, i) for i, b in enumerate(pool)]
    heapq.heapify(heap)
    remaining = solution.gamma_star * supply if supply is not None else math.inf
    sold = 0
    revenue = 0.0
    removed: set[int] = set()
    for tau, price in sorted(solution.schedule, key=lambda tp: -tp[0]):
        cap = theta(demand, tau, price) * arrival_density(demand, tau) * dtau
        quota = int(math.floor(min(cap, remaining)))
        while quota > 0 and heap:
            neg_bid, _, _, idx = heap[0]
            if not policy(-neg_bid, price):
                break
            heapq.heappop(heap)
            removed.add(idx)
            sold += 1
            revenue += price
            quota -= 1
            remaining -= 1.0
    residual = [b for i, b in enumerate(pool) if i not in removed]
    return ReplayResult(sold, revenue, residual)


def _single_slot(outcomes: Iterable[AuctionOutcome], label: str) -> str | None:
    slots = {o.slot_id for o in outcomes}
    if len(slots) > 1:
        raise ValueError(f"{label} outcomes span multiple slots: {sorted(slots)}")
    return next(iter(slots)) if slots else None


def compute_revenues(
    solution: PGSolution,
    test_outcomes: Sequence[AuctionOutcome],
    residual_outcomes: Sequence[AuctionOutcome],
    curves,
    forward_revenue: float = 0.0,
) -> RevenueReport:
    """Revenue figures from resolved test auctions and the thinned pool.

    b1 and b2 sum first and second prices over the untouched test
    auctions; b3 is the curve estimate for the same pool, impression
    count times expected payment at the pool's mean bidder count.  r1
    is the solution's own revenue estimate and r2 the replayed figure:
    forward revenue plus second prices of the residual auctions.
    """
    slot_a = _single_slot(test_outcomes, "test")
    slot_b = _single_slot(residual_outcomes, "residual")
    if slot_a is not None and slot_b is not None and slot_a != slot_b:
        raise ValueError(f"slot mismatch: test {slot_a!r} vs residual {slot_b!r}")
    if forward_revenue < 0:
        raise ValueError(f"forward revenue must be non-negative, got {forward_revenue}")
    b1 = float(sum(o.first_price for o in test_outcomes))
    b2 = float(sum(o.second_price for o in test_outcomes))
    if test_outcomes:
        mean_xi = float(np.mean([o.n_bidders for o in test_outcomes]))
        b3 = len(test_outcomes) * float(curves.phi(mean_xi))
    else:
        b3 = 0.0
    r2 = forward_revenue + float(sum(o.second_price for o in residual_outcomes))
    return RevenueReport(r1=solution.R, r2=r2, b1=b1, b2=b2, b3=b3)


def _sweep_row(parameter: str, value: float, gamma: float, schedule,
               lambda_tilde: float, p0: float, R: float) -> dict:
    tail = [p for t, p in schedule if t > 0]
    return {
        "parameter": parameter,
        "value": float(value),
        "gamma_star": float(gamma),
        "lambda_tilde": float(lambda_tilde),
        "p0": float(p0),
        "mean_price": float(np.mean(tail)) if tail else math.nan,
        "R": float(R),
    }


def _row_from_inner(parameter: str, value: float, gamma: float, sol) -> dict:
    p0 = sol.schedule[0][1] if sol.schedule and sol.schedule[0][0] == 0.0 else math.nan
    return _sweep_row(parameter, value, gamma, sol.schedule, sol.lambda_tilde, p0, sol.R)


def sensitivity_sweep(
    problem: PricingProblem,
    parameter: str,
    values: Sequence[float],
    fixed_gamma: float | None = None,
) -> list[dict]:
    """Solution summary per grid value of one model parameter.

    For "gamma" the grid IS the allocation fraction and each value is
    re-priced at that fixed fraction; every other parameter rebuilds
    the problem and re-solves the allocation on a stratified candidate
    grid so rows are comparable.  Passing fixed_gamma re-prices at that
    fraction for any parameter instead of re-solving, isolating the
    schedule's own response.  Rows carry R = -inf where the value makes
    the allocation infeasible.
    """
    if parameter not in SWEEPABLE_PARAMETERS:
        raise ValueError(
            f"unknown parameter {parameter!r}; expected one of {SWEEPABLE_PARAMETERS}"
        )
    if len(values) == 0:
        raise ValueError("empty value grid")
    rows = []
    for v in values:
        v = float(v)
        if parameter == "gamma":
            sol = inner_solve(problem, v)
            rows.append(_row_from_inner(parameter, v, v, sol))
            continue
        d = problem.demand
        if parameter == "omega_kappa":
            if not 0 <= v < 1:
                raise ValueError(f"omega*kappa grid value {v} outside [0, 1)")
            modified = problem.replace(omega=v, kappa=1.0)
        elif parameter == "T":
            modified = problem.replace(demand=DemandModel(
                alpha=d.alpha, zeta=d.zeta, beta=d.beta, eta=d.eta, T=v))
        else:
            kwargs = {"alpha": d.alpha, "zeta": d.zeta, "beta": d.beta,
                      "eta": d.eta, "T": d.T}
            kwargs[parameter] = v
            modified = problem.replace(demand=DemandModel(**kwargs))
        if fixed_gamma is not None:
            sol = inner_solve(modified, fixed_gamma)
            rows.append(_row_from_inner(parameter, v, fixed_gamma, sol))
        else:
            full = pg_solve(modified, stratified=True)
            rows.append(_sweep_row(parameter, v, full.gamma_star, full.schedule,
                                   full.lambda_tilde, full.p0, full.R))
    return rows
