"""Forward-contract pricing and allocation for display ad inventory.

The package decides what fraction of estimated future impressions a
publisher should sell in advance as guaranteed contracts, and at what
dynamically updated prices, with the remainder auctioned in real-time
bidding.  The pipeline runs: synthesize or ingest a bid log, estimate
market price curves, calibrate the forward demand model, solve the
allocation and price schedule, then evaluate revenue against held-out
bids.
"""

from .auction_model import (
    DistTestReport,
    LogNormalParams,
    expected_second_price,
    fit_lognormal,
    jb_test,
    ks_test,
    mc_second_price,
)
from .bidlog import (
    AuctionOutcome,
    BidRecord,
    SlotStats,
    aggregate,
    ingest,
    resolve_auctions,
    synthesize,
)
from .demand import (
    DemandModel,
    adaptive_simpson,
    arrival_density,
    calibrate_alpha,
    calibrate_zeta,
    sold_quantity,
    theta,
)
from .evaluation import (
    ReplayResult,
    RevenueReport,
    SlotCluster,
    cluster_slots,
    compute_revenues,
    dendrogram_json,
    replay_guaranteed_sale,
    sensitivity_sweep,
)
from .pricing import (
    InfeasibleError,
    PGSolution,
    PricingProblem,
    inner_solve,
    pg_solve,
    price_schedule,
    solve_multiplier,
    terminal_price,
)
from .rlwr import (
    CurvePoint,
    MarketCurves,
    RlwrCurve,
    RlwrSmoother,
    build_market_curves,
    rlwr_fit,
)

__version__ = "0.1.0"

__all__ = [
    "AuctionOutcome",
    "BidRecord",
    "CurvePoint",
    "DemandModel",
    "DistTestReport",
    "InfeasibleError",
    "LogNormalParams",
    "MarketCurves",
    "PGSolution",
    "PricingProblem",
    "ReplayResult",
    "RevenueReport",
    "RlwrCurve",
    "RlwrSmoother",
    "SlotCluster",
    "SlotStats",
    "adaptive_simpson",
    "aggregate",
    "arrival_density",
    "build_market_curves",
    "calibrate_alpha",
    "calibrate_zeta",
    "cluster_slots",
    "compute_revenues",
    "dendrogram_json",
    "expected_second_price",
    "fit_lognormal",
    "ingest",
    "inner_solve",
    "jb_test",
    "ks_test",
    "mc_second_price",
    "pg_solve",
    "price_schedule",
    "replay_guaranteed_sale",
    "resolve_auctions",
    "rlwr_fit",
    "sensitivity_sweep",
    "sold_quantity",
    "solve_multiplier",
    "synthesize",
    "terminal_price",
    "theta",
]
