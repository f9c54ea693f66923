"""Acceptance gate: eight headline guarantees, one verdict line each.

Every test measures its figure against the stated tolerance and prints
a single ``[acceptance N] PASS/FAIL`` line before asserting, so a full
run reads as a checklist.
"""

import json
import time
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from pgpricing import (
    DemandModel,
    LogNormalParams,
    PGSolution,
    PricingProblem,
    RlwrCurve,
    aggregate,
    arrival_density,
    build_market_curves,
    calibrate_alpha,
    calibrate_zeta,
    compute_revenues,
    expected_second_price,
    fit_lognormal,
    inner_solve,
    jb_test,
    ks_test,
    mc_second_price,
    pg_solve,
    replay_guaranteed_sale,
    resolve_auctions,
    sensitivity_sweep,
    solve_multiplier,
    synthesize,
    terminal_price,
    theta,
)

DAY = 86400.0


def _verdict(capsys, idx, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {idx}] {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def _non_increasing(seq, tol=1e-12):
    return all(a >= b - tol for a, b in zip(seq, seq[1:]))


def _non_decreasing(seq, tol=1e-12):
    return all(b >= a - tol for a, b in zip(seq, seq[1:]))


def _tail(schedule):
    return [p for t, p in schedule if t > 0]


# ---- 1: payment quadrature vs Monte Carlo ----------------------------------


def test_second_price_quadrature_agrees_with_monte_carlo(capsys):
    """Quadrature within 3 MC standard errors on 15 (sigma, xi) combos;
    the sigma=0 case equals e^mu to 1e-9; all of it under a minute."""
    t0 = time.monotonic()
    worst = 0.0
    for si, sigma in enumerate((0.3, 0.5, 1.0)):
        for ni, n in enumerate((2, 3, 5, 10, 30)):
            params = LogNormalParams(0.0, sigma)
            exact = expected_second_price(params, float(n))
            est, se = mc_second_price(params, n, draws=10**6,
                                      seed=1000 + 10 * si + ni, with_se=True)
            worst = max(worst, abs(exact - est) / se)
    degenerate = max(
        abs(expected_second_price(LogNormalParams(0.7, 0.0), float(n)) - np.exp(0.7))
        for n in (2, 3, 5, 10, 30)
    )
    elapsed = time.monotonic() - t0
    ok = worst <= 3.0 and degenerate <= 1e-9 and elapsed < 60.0
    assert _verdict(
        capsys, 1, ok,
        f"quadrature vs 1e6-draw MC: worst {worst:.2f} SE (tol 3 SE); "
        f"sigma=0 err {degenerate:.1e} (tol 1e-9); {elapsed:.1f}s (limit 60s)",
    )


# ---- 2: smoother exactness and robustness ----------------------------------


def test_robust_smoother_is_exact_on_polynomials_and_resists_outliers(capsys):
    """Zero error (<= 1e-9) on clean degree <= 2 data; with one 20x
    outlier the robust fit beats the 0-iteration fit at the outlier's
    abscissa on all 50 seeds."""
    grid = np.linspace(0.0, 10.0, 40)
    poly_err = 0.0
    for coeffs in ((0.3, 1.7), (1.5, 0.4, -0.02)):
        y = np.polynomial.polynomial.polyval(grid, coeffs)
        curve = RlwrCurve(grid, y, span=0.4, degree=2)
        poly_err = max(poly_err, float(np.max(np.abs(curve(grid) - y))))

    wins = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(0.0, 10.0, 60))
        y = 1.5 + 0.4 * x - 0.02 * x**2
        k = int(rng.integers(5, 55))
        clean = y[k]
        y[k] *= 20.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            robust = RlwrCurve(x, y, span=0.3, degree=2)
            raw = RlwrCurve(x, y, span=0.3, degree=2, iterations=0)
            if abs(float(robust(x[k])) - clean) < abs(float(raw(x[k])) - clean):
                wins += 1

    ok = poly_err <= 1e-9 and wins == 50
    assert _verdict(
        capsys, 2, ok,
        f"polynomial max err {poly_err:.1e} (tol 1e-9); "
        f"robust beats raw at the outlier {wins}/50 seeds (need 50/50)",
    )


# ---- 3: multiplier solver consistency ---------------------------------------


def test_multiplier_solver_hits_its_sales_target(capsys):
    """100 random feasible targets: quadrature-measured sales within
    0.5% of gamma*S; Newton vs bisection within 1e-6*S; separable
    closed form matched to 1e-6."""
    rng = np.random.default_rng(303)
    worst_rel = worst_gap = 0.0
    for _ in range(100):
        alpha = rng.uniform(0.5, 2.5)
        beta = rng.uniform(0.0, 0.5)
        eta = rng.uniform(0.0, 0.4)
        zeta = rng.uniform(100.0, 2000.0)
        T = rng.uniform(10.0, 40.0)
        omega = rng.uniform(0.0, 0.3)
        kappa = rng.uniform(0.5, 1.5)
        p0 = rng.uniform(0.1, 2.0)
        d = DemandModel(alpha=alpha, zeta=zeta, beta=beta, eta=eta, T=T)

        first = theta(d, 0.0, p0) * arrival_density(d, 0.0)
        free = quad(lambda t: theta(d, t, 1.0 / (alpha * (1.0 + beta * t)))
                    * arrival_density(d, t), 1.0, T, limit=200)[0]
        target = first + rng.uniform(0.05, 0.95) * free
        gamma = rng.uniform(0.05, 0.9)
        S = target / gamma

        lam = solve_multiplier(d, omega, kappa, target, p0)
        lam_b = solve_multiplier(d, omega, kappa, target, p0, method="bisect")
        okk = 1.0 - omega * kappa
        sold = first + quad(
            lambda t: theta(d, t, lam / okk + 1.0 / (alpha * (1.0 + beta * t)))
            * arrival_density(d, t), 1.0, T, limit=200)[0]
        worst_rel = max(worst_rel, abs(sold - gamma * S) / (gamma * S))
        worst_gap = max(worst_gap, abs(lam - lam_b) / S)

    alpha, omega, kappa, zeta, T, target = 1.1, 0.1, 1.0, 300.0, 20.0, 900.0
    okk = 1.0 - omega * kappa
    lam_hand = okk * (np.log(zeta * T / target) - 1.0) / alpha
    d = DemandModel(alpha=alpha, zeta=zeta, beta=0.0, eta=0.0, T=T)
    lam = solve_multiplier(d, omega, kappa, target, lam_hand / okk + 1.0 / alpha)
    sep_err = abs(lam - lam_hand)

    ok = worst_rel <= 5e-3 and worst_gap <= 1e-6 and sep_err <= 1e-6
    assert _verdict(
        capsys, 3, ok,
        f"100 instances: worst sales err {worst_rel:.1e} (tol 5e-3); "
        f"newton-bisect gap {worst_gap:.1e}xS (tol 1e-6); "
        f"separable err {sep_err:.1e} (tol 1e-6)",
    )


# ---- 4: schedule shape and sensitivity signs --------------------------------


def test_price_schedules_fall_with_lead_time_and_track_parameter_shifts(capsys):
    """Solved schedules are non-increasing in lead time on (0, T], and
    all seven sensitivity directions hold: mean price falls in alpha,
    beta, eta and rises in zeta and omega*kappa; p0 rises in gamma;
    lambda and the fixed-lead-time price rise in T."""
    demand = DemandModel(alpha=1.5, zeta=500.0, beta=0.2, eta=0.2, T=30.0)
    curves = _analytic_curves()
    prob = PricingProblem(demand=demand, curves=curves, S=2000.0, Q=8000.0,
                          seed=11, m=60)

    def means(rows):
        return [r["mean_price"] for r in rows]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        down_a = means(sensitivity_sweep(prob, "alpha", [1.0, 1.3, 1.6, 2.0], fixed_gamma=0.2))
        down_b = means(sensitivity_sweep(prob, "beta", [0.05, 0.15, 0.3, 0.5], fixed_gamma=0.2))
        down_e = means(sensitivity_sweep(prob, "eta", [0.05, 0.15, 0.25, 0.3], fixed_gamma=0.2))
        up_z = means(sensitivity_sweep(prob, "zeta", [300.0, 450.0, 600.0, 800.0], fixed_gamma=0.2))
        up_g = [r["p0"] for r in sensitivity_sweep(prob, "gamma", [0.05, 0.15, 0.25, 0.35])]
        wk = sensitivity_sweep(prob.replace(m=200), "omega_kappa", [0.0, 0.1, 0.2, 0.35])
        t_rows = sensitivity_sweep(prob, "T", [10.0, 15.0, 20.0, 30.0], fixed_gamma=0.2)

        shapes_ok = True
        p1 = []
        for T in (10.0, 15.0, 20.0, 30.0):
            d2 = DemandModel(alpha=1.5, zeta=500.0, beta=0.2, eta=0.2, T=T)
            inner = inner_solve(prob.replace(demand=d2), 0.2)
            p1.append(dict(inner.schedule)[1.0])
            shapes_ok &= _non_increasing(_tail(inner.schedule))
        shapes_ok &= _non_increasing(_tail(inner_solve(prob, 0.2).schedule))

    up_wk = means(wk)
    signs = {
        "alpha v": _non_increasing(down_a) and down_a[-1] < down_a[0],
        "beta v": _non_increasing(down_b) and down_b[-1] < down_b[0],
        "eta v": _non_increasing(down_e) and down_e[-1] < down_e[0],
        "zeta ^": _non_decreasing(up_z) and up_z[-1] > up_z[0],
        "omega*kappa ^": _non_decreasing(up_wk) and up_wk[-1] > up_wk[0],
        "gamma ^": _non_decreasing(up_g) and up_g[-1] > up_g[0],
        "T ^": (_non_decreasing([r["lambda_tilde"] for r in t_rows])
                and _non_decreasing(p1) and p1[-1] > p1[0]),
    }
    ok = shapes_ok and all(signs.values())
    failed = [k for k, v in signs.items() if not v]
    assert _verdict(
        capsys, 4, ok,
        "schedules non-increasing on (0,T]: "
        f"{shapes_ok}; directions "
        + (f"all seven hold ({' '.join(signs)})" if not failed else f"FAILED {failed}"),
    )


def _analytic_curves():
    from scipy import stats as sps

    params = LogNormalParams(0.0, 0.5)
    xis = np.linspace(2.0, 30.0, 60)
    ln = sps.lognorm(s=0.5, scale=1.0)

    def first_price(x):
        val, _ = quad(lambda v: v * x * ln.pdf(v) * ln.cdf(v) ** (x - 1.0),
                      0.0, np.exp(4.0), limit=200)
        return val

    from pgpricing import MarketCurves

    def mk(ys, kind):
        return RlwrCurve(xis, ys, span=0.2, degree=2, kind=kind)

    phi = np.array([expected_second_price(params, x) for x in xis])
    pi = np.array([first_price(x) for x in xis])
    return MarketCurves(phi=mk(phi, "phi"), psi=mk(np.full(60, 0.25), "psi"),
                        pi=mk(pi, "pi"), span=0.2, degree=2)


def _instance_set():
    curves = _analytic_curves()
    base = PricingProblem(
        demand=DemandModel(alpha=1.5, zeta=500.0, beta=0.2, eta=0.2, T=30.0),
        curves=curves, S=2000.0, Q=8000.0, seed=11, m=60,
    )
    return [
        base,
        base.replace(omega=0.3, kappa=1.0),
        base.replace(m=40, seed=5),
        base.replace(demand=DemandModel(alpha=40.0, zeta=500.0, beta=0.2, eta=0.2, T=30.0)),
        base.replace(demand=DemandModel(alpha=1.5, zeta=900.0, beta=0.2, eta=0.2, T=30.0),
                     Q=3000.0),
    ]


# ---- 5: optimizer dominance and determinism ---------------------------------


def test_allocation_search_dominates_the_spot_baseline_deterministically(capsys):
    """pg_solve's R >= R(gamma=0) on every tested instance, and two
    solves under one seed serialize byte-identically."""
    dominated = deterministic = 0
    gammas = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        instances = _instance_set()
        for p in instances:
            sol = pg_solve(p)
            spot = inner_solve(p, 0.0).R
            dominated += sol.R >= spot - 1e-9 * max(1.0, abs(spot))
            again = pg_solve(p)
            deterministic += (json.dumps(sol.to_dict(), sort_keys=True)
                              == json.dumps(again.to_dict(), sort_keys=True))
            gammas.append(sol.gamma_star)
    n = len(instances)
    ok = dominated == n and deterministic == n
    assert _verdict(
        capsys, 5, ok,
        f"R >= spot baseline on {dominated}/{n} instances; "
        f"byte-identical re-solves {deterministic}/{n}; "
        f"gamma* = {[round(g, 4) for g in gammas]}",
    )


# ---- 6: competition raises forward allocation and prices --------------------


def _market_experiment(mean_bidders, market_seed):
    spec = {"slots": [{
        "slot_id": "s", "impressions": 16 * 1200, "bidders_mean": mean_bidders,
        "bid_dist": {"type": "lognormal", "mu": 0.0, "sigma": 0.3},
        "start": 0, "end": int(16 * DAY),
    }]}
    records = synthesize(spec, market_seed)
    train = [r for r in records if r.timestamp < 14 * DAY]
    dev = [r for r in records if 14 * DAY <= r.timestamp < 15 * DAY]
    test = [r for r in records if 15 * DAY <= r.timestamp]
    train_bids = [r.bid for r in train]

    curves = build_market_curves(resolve_auctions(train), span=0.10,
                                 window_seconds=3600)
    alpha = calibrate_alpha(train_bids)
    reference = float(np.quantile(train_bids, 0.95))
    stats = aggregate(dev, (14 * DAY, 15 * DAY))
    S = float(sum(s.S for s in stats.values()))
    Q = float(sum(s.Q for s in stats.values()))
    zeta = calibrate_zeta(Q, train_bids, reference, alpha)
    demand = DemandModel(alpha=alpha, zeta=zeta, beta=0.2, eta=0.2, T=14.0)
    problem = PricingProblem(demand=demand, curves=curves, S=S, Q=Q, seed=99, m=60)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sol = pg_solve(problem)
        replay = replay_guaranteed_sale(sol, test, demand, supply=S)
    report = compute_revenues(sol, resolve_auctions(test),
                              resolve_auctions(replay.residual), curves,
                              forward_revenue=replay.revenue)
    return sol, report


def test_high_competition_market_sells_more_forward_at_higher_prices(capsys):
    """Two markets differing only in mean per-impression demand (3 vs
    10): the tighter market allocates a larger forward fraction, posts
    a higher initial price, and its replayed revenue beats the pure
    auction take. End to end under 5 minutes."""
    t0 = time.monotonic()
    sol_lo, rep_lo = _market_experiment(3.0, 401)
    sol_hi, rep_hi = _market_experiment(10.0, 402)
    elapsed = time.monotonic() - t0

    p_start_lo = dict(sol_lo.schedule)[14.0]
    p_start_hi = dict(sol_hi.schedule)[14.0]
    ok = (sol_hi.gamma_star > sol_lo.gamma_star
          and p_start_hi > p_start_lo
          and rep_hi.r2 > rep_hi.b2
          and elapsed < 300.0)
    assert _verdict(
        capsys, 6, ok,
        f"gamma* {sol_hi.gamma_star:.4f} > {sol_lo.gamma_star:.4f}; "
        f"initial price {p_start_hi:.4f} > {p_start_lo:.4f}; "
        f"replayed r2 {rep_hi.r2:.0f} > b2 {rep_hi.b2:.0f}; "
        f"{elapsed:.0f}s (limit 300s)",
    )


# ---- 7: distribution-test calibration ---------------------------------------


def test_distribution_tests_are_calibrated_on_lognormal_truth(capsys):
    """On true log-normal samples (n=1000, 200 seeds) both tests pass
    90-99% of the time at the 5% level, and both reject an exponential
    sample at p < 0.01."""
    params = LogNormalParams(0.0, 1.0)
    ks_pass = jb_pass = 0
    for seed in range(200):
        sample = np.random.default_rng(seed).lognormal(0.0, 1.0, 1000)
        ks_pass += ks_test(sample, params).passed
        jb_pass += jb_test(sample).passed

    expo = np.random.default_rng(42).exponential(1.0, 1000)
    ks_p = ks_test(expo, fit_lognormal(expo)).p_value
    jb_p = jb_test(expo).p_value

    ok = (180 <= ks_pass <= 198 and 180 <= jb_pass <= 198
          and ks_p < 0.01 and jb_p < 0.01)
    assert _verdict(
        capsys, 7, ok,
        f"pass rates KS {ks_pass / 2:.1f}% JB {jb_pass / 2:.1f}% "
        f"(need 90-99%); exponential rejected at KS p={ks_p:.1e}, "
        f"JB p={jb_p:.1e} (need < 0.01)",
    )


# ---- 8: revenue accounting identities ----------------------------------------


def test_revenue_accounting_identities_hold(capsys):
    """b2 <= b1 on every dataset; a gamma=0 replay reproduces the
    auction baseline exactly; contracted plus auctioned supply is
    exactly S, and no replayed bid is created or lost."""
    markets = [
        {"slot_id": "a", "impressions": 2000, "bidders_mean": 4.0,
         "bid_dist": {"type": "lognormal", "mu": 0.0, "sigma": 0.6},
         "start": 0, "end": int(2 * DAY)},
        {"slot_id": "b", "impressions": 2000, "bidders_mean": 2.5,
         "bid_dist": {"type": "exponential", "scale": 2.0},
         "start": 0, "end": int(2 * DAY)},
        {"slot_id": "c", "impressions": 1500, "bidders_mean": [2.0, 8.0],
         "bidders_dist": "fixed",
         "bid_dist": {"type": "lognormal", "mu": 0.2, "sigma": 0.4},
         "start": 0, "end": int(2 * DAY)},
    ]
    ordered = True
    pools = {}
    for seed, slot in enumerate(markets, start=21):
        records = synthesize({"slots": [slot]}, seed)
        outcomes = resolve_auctions(records)
        ordered &= all(o.second_price <= o.first_price for o in outcomes)
        ordered &= (sum(o.second_price for o in outcomes)
                    <= sum(o.first_price for o in outcomes))
        pools[slot["slot_id"]] = records

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        instances = _instance_set()
        split_exact = conserved = capped = 0
        for p in instances:
            sol = pg_solve(p)
            contracted = sol.gamma_star * p.S
            split_exact += contracted + (p.S - contracted) == p.S
            replay = replay_guaranteed_sale(sol, pools["a"], p.demand, supply=p.S)
            conserved += replay.sold + len(replay.residual) == len(pools["a"])
            capped += replay.sold <= sol.gamma_star * p.S + 1e-9

        # gamma = 0: the replay must not touch the pool at all
        base = instances[0]
        inner = inner_solve(base, 0.0)
        sol0 = PGSolution(
            gamma_star=0.0, lambda_tilde=inner.lambda_tilde,
            p0=terminal_price(base.curves, base.Q / base.S, base.risk_aversion),
            schedule=inner.schedule, G=inner.G, H=inner.H, R=inner.R,
            xi_remaining=base.Q / base.S, diagnostics={},
        )
        replay0 = replay_guaranteed_sale(sol0, pools["a"], base.demand, supply=base.S)
        outcomes_a = resolve_auctions(pools["a"])
        report0 = compute_revenues(sol0, outcomes_a,
                                   resolve_auctions(replay0.residual),
                                   base.curves, forward_revenue=replay0.revenue)
    null_exact = report0.r2 == report0.b2 and replay0.sold == 0

    n = len(instances)
    ok = (ordered and null_exact and split_exact == n
          and conserved == n and capped == n)
    assert _verdict(
        capsys, 8, ok,
        f"b2 <= b1 on all 3 datasets: {ordered}; gamma=0 replay r2 == b2 "
        f"exactly: {null_exact}; supply split exact and bids conserved on "
        f"{min(split_exact, conserved, capped)}/{n} instances (== required)",
    )
