"""Command-line pipeline runner.

Subcommands cover the full experiment in file-passing steps:
generate -> estimate -> calibrate -> solve -> evaluate, plus sweep.
Each step reads the artifacts of earlier steps from the output
directory (paths overridable in the config) and writes its own
atomically.  Exit codes: 0 success, 2 invalid config or inputs,
3 infeasible problem, 4 I/O failure; failures print a one-line error
JSON to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .auction_model import fit_lognormal, jb_test, ks_test
from .bidlog import CSV_HEADER, BidRecord, aggregate, ingest, resolve_auctions, synthesize
from .demand import DEFAULT_BETA, DEFAULT_ETA, DemandModel, calibrate_alpha, calibrate_zeta
from .evaluation import compute_revenues, replay_guaranteed_sale, sensitivity_sweep
from .pricing import (
    DEFAULT_GAMMA_MAX,
    DEFAULT_KAPPA,
    DEFAULT_OMEGA,
    DEFAULT_RISK_AVERSION,
    DEFAULT_SAMPLE_COUNT,
    InfeasibleError,
    PGSolution,
    PricingProblem,
    inner_solve,
    pg_solve,
    terminal_price,
)
from .rlwr import DEFAULT_SPAN, MarketCurves, build_market_curves

__all__ = ["main", "ConfigError", "EXIT_CONFIG", "EXIT_INFEASIBLE", "EXIT_IO"]

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

DAY_SECONDS = 86400.0
COMMANDS = ("generate", "estimate", "calibrate", "solve", "evaluate", "sweep")


class ConfigError(ValueError):
    """Configuration file missing, unparseable, or inconsistent."""


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, payload) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"missing artifact {path}; run the producing step first")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}")


def _write_csv(path: Path, header, rows) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write(path, buffer.getvalue())


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            config = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def _model_cfg(config: dict, seed_override: int | None) -> dict:
    model = dict(config.get("model", {}))
    defaults = {
        "beta": DEFAULT_BETA, "eta": DEFAULT_ETA, "omega": DEFAULT_OMEGA,
        "kappa": DEFAULT_KAPPA, "lambda": DEFAULT_RISK_AVERSION, "T": 30.0,
        "m": DEFAULT_SAMPLE_COUNT, "seed": 0, "span": DEFAULT_SPAN,
        "dtau": 1.0, "gamma_max": DEFAULT_GAMMA_MAX,
    }
    for key, value in defaults.items():
        model.setdefault(key, value)
    if seed_override is not None:
        model["seed"] = seed_override
    return model


def _out_dir(config: dict, args) -> Path:
    return Path(args.out or config.get("out_dir", "."))


def _artifact(config: dict, args, key: str, default_name: str) -> Path:
    if key in config:
        return Path(config[key])
    return _out_dir(config, args) / default_name


def _load_records(config: dict, args) -> list[BidRecord]:
    path = _artifact(config, args, "bid_log", "bidlog.csv")
    if not Path(path).exists():
        raise ConfigError(f"bid log not found: {path}")
    records, errors = ingest(path)
    if errors:
        print(f"note: skipped {len(errors)} malformed bid-log lines", file=sys.stderr)
    if args.slots:
        keep = set(args.slots.split(","))
        records = [r for r in records if r.slot_id in keep]
    if not records:
        raise ConfigError("no bid records after slot filtering")
    return records


def _window(config: dict, name: str, records) -> tuple[float, float]:
    split = config.get("split", {})
    if name in split:
        window = split[name]
        if len(window) != 2 or not window[1] > window[0]:
            raise ConfigError(f"split window {name!r} must be [start, end) with end > start")
        return float(window[0]), float(window[1])
    lo = min(r.timestamp for r in records)
    hi = max(r.timestamp for r in records)
    return float(lo), float(hi) + 1.0


def _in_window(records, window) -> list[BidRecord]:
    lo, hi = window
    out = [r for r in records if lo <= r.timestamp < hi]
    if not out:
        raise ConfigError(f"no bid records in window [{lo}, {hi})")
    return out


def cmd_generate(config: dict, args) -> None:
    market = config.get("market")
    if not market:
        raise ConfigError("generate needs a 'market' section in the config")
    model = _model_cfg(config, args.seed)
    records = synthesize(market, int(model["seed"]))
    rows = [
        (r.timestamp, r.slot_id, r.advertiser_id, r.impression_id, repr(r.bid))
        for r in records
    ]
    path = _artifact(config, args, "bid_log", "bidlog.csv")
    _write_csv(path, CSV_HEADER, rows)
    print(f"wrote {len(rows)} bids to {path}")


def cmd_estimate(config: dict, args) -> None:
    model = _model_cfg(config, args.seed)
    records = _load_records(config, args)
    train = _in_window(records, _window(config, "train", records))
    outcomes = resolve_auctions(train)
    curves = build_market_curves(
        outcomes,
        span=float(model["span"]),
        window_seconds=float(config.get("window_seconds", 3600.0)),
    )
    curves_path = _artifact(config, args, "curves", "curves.json")
    _write_json(curves_path, curves.to_dict())

    reports = []
    by_slot: dict[str, list[float]] = {}
    for r in train:
        by_slot.setdefault(r.slot_id, []).append(r.bid)
    for slot in sorted(by_slot):
        bids = by_slot[slot]
        entry: dict = {"slot_id": slot, "n": len(bids)}
        try:
            params = fit_lognormal(bids)
            entry["lognormal"] = params.to_dict()
            entry["ks"] = ks_test(bids, params).to_dict()
            entry["jb"] = jb_test(bids).to_dict()
        except ValueError as exc:
            entry["skipped"] = str(exc)
        reports.append(entry)
    tests_path = _artifact(config, args, "dist_tests", "dist_tests.json")
    _write_json(tests_path, reports)
    print(f"wrote {curves_path} and {tests_path}")


def cmd_calibrate(config: dict, args) -> None:
    model = _model_cfg(config, args.seed)
    records = _load_records(config, args)
    train = _in_window(records, _window(config, "train", records))
    train_bids = [r.bid for r in train]
    if model.get("alpha") is not None:
        alpha = float(model["alpha"])
    else:
        alpha = calibrate_alpha(train_bids)
    if model.get("zeta") is not None:
        zeta = float(model["zeta"])
    else:
        dev_window = _window(config, "dev", records)
        dev = _in_window(records, dev_window)
        days = max((dev_window[1] - dev_window[0]) / DAY_SECONDS, 1e-9)
        q_day = len(dev) / days
        reference = model.get("reference_price")
        if reference is None:
            reference = float(np.median(train_bids))
        zeta = calibrate_zeta(q_day, train_bids, float(reference), alpha)
        if zeta <= 0:
            raise ConfigError(
                "zeta calibrated to zero (no bids at or above the reference price); "
                "set model.zeta or model.reference_price explicitly"
            )
    demand = DemandModel(
        alpha=alpha, zeta=zeta, beta=float(model["beta"]),
        eta=float(model["eta"]), T=float(model["T"]),
    )
    path = _artifact(config, args, "demand", "demand.json")
    _write_json(path, demand.to_dict())
    print(f"wrote {path}")


def _supply_demand(config: dict, args, records) -> tuple[float, float]:
    overrides = config.get("overrides", {})
    S, Q = overrides.get("S"), overrides.get("Q")
    if S is not None and Q is not None:
        return float(S), float(Q)
    dev_window = _window(config, "dev", records)
    dev = _in_window(records, dev_window)
    days = max((dev_window[1] - dev_window[0]) / DAY_SECONDS, 1e-9)
    stats = aggregate(dev, dev_window)
    total_S = sum(s.S for s in stats.values()) / days
    total_Q = sum(s.Q for s in stats.values()) / days
    return (float(S) if S is not None else total_S,
            float(Q) if Q is not None else total_Q)


def _build_problem(config: dict, args) -> PricingProblem:
    model = _model_cfg(config, args.seed)
    demand = DemandModel.from_dict(_read_json(_artifact(config, args, "demand", "demand.json")))
    curves = MarketCurves.from_dict(_read_json(_artifact(config, args, "curves", "curves.json")))
    overrides = config.get("overrides", {})
    if overrides.get("S") is not None and overrides.get("Q") is not None:
        S, Q = float(overrides["S"]), float(overrides["Q"])
    else:
        records = _load_records(config, args)
        S, Q = _supply_demand(config, args, records)
    return PricingProblem(
        demand=demand, curves=curves, S=S, Q=Q,
        omega=float(model["omega"]), kappa=float(model["kappa"]),
        risk_aversion=float(model["lambda"]), m=int(model["m"]),
        seed=int(model["seed"]), dtau=float(model["dtau"]),
        gamma_max=float(model["gamma_max"]),
    )


def cmd_solve(config: dict, args) -> None:
    model = _model_cfg(config, args.seed)
    problem = _build_problem(config, args)
    forced = model.get("gamma")
    if forced is not None:
        gamma = float(forced)
        inner = inner_solve(problem, gamma)
        if inner.R == float("-inf"):
            raise InfeasibleError(f"forced gamma = {gamma} is infeasible for this problem")
        if gamma == 0.0:
            xi = problem.Q / problem.S
            p0 = terminal_price(problem.curves, xi, problem.risk_aversion)
        else:
            xi = (problem.Q - gamma * problem.S) / (problem.S - gamma * problem.S)
            p0 = inner.schedule[0][1]
        solution = PGSolution(
            gamma_star=gamma, lambda_tilde=inner.lambda_tilde, p0=p0,
            schedule=inner.schedule, G=inner.G, H=inner.H, R=inner.R,
            xi_remaining=xi, diagnostics={"forced_gamma": True, "seed": int(model["seed"])},
        )
    else:
        solution = pg_solve(problem, stratified=bool(config.get("stratified", False)))
    solution.diagnostics.update({"S": problem.S, "Q": problem.Q})
    sol_path = _artifact(config, args, "solution", "solution.json")
    _write_json(sol_path, solution.to_dict())
    sched_path = _artifact(config, args, "schedule", "schedule.csv")
    _write_csv(sched_path, ("tau", "price"),
               [(t, repr(p)) for t, p in solution.schedule])
    print(f"wrote {sol_path} and {sched_path}")


def cmd_evaluate(config: dict, args) -> None:
    model = _model_cfg(config, args.seed)
    solution = PGSolution.from_dict(
        _read_json(_artifact(config, args, "solution", "solution.json")))
    demand = DemandModel.from_dict(
        _read_json(_artifact(config, args, "demand", "demand.json")))
    curves = MarketCurves.from_dict(
        _read_json(_artifact(config, args, "curves", "curves.json")))
    records = _load_records(config, args)
    test = _in_window(records, _window(config, "test", records))
    supply = solution.diagnostics.get("S")
    replay = replay_guaranteed_sale(
        solution, test, demand, dtau=float(model["dtau"]),
        supply=float(supply) if supply is not None else None,
    )
    test_outcomes = resolve_auctions(test)
    residual_outcomes = resolve_auctions(replay.residual)
    report = compute_revenues(
        solution, test_outcomes, residual_outcomes, curves,
        forward_revenue=replay.revenue,
    )
    payload = report.to_dict()
    payload["forward_sold"] = replay.sold
    payload["forward_revenue"] = replay.revenue
    path = _artifact(config, args, "report", "report.json")
    _write_json(path, payload)
    print(f"wrote {path}")


def cmd_sweep(config: dict, args) -> None:
    sweep = config.get("sweep")
    if not sweep or "parameter" not in sweep or "values" not in sweep:
        raise ConfigError("sweep needs a 'sweep' section with 'parameter' and 'values'")
    problem = _build_problem(config, args)
    fixed = sweep.get("fixed_gamma")
    rows = sensitivity_sweep(
        problem, str(sweep["parameter"]), [float(v) for v in sweep["values"]],
        fixed_gamma=float(fixed) if fixed is not None else None,
    )
    path = _artifact(config, args, "sweep_out", "sweep.csv")
    header = ("parameter", "value", "gamma_star", "lambda_tilde", "p0", "mean_price", "R")
    _write_csv(path, header, [[row[k] for k in header] for row in rows])
    print(f"wrote {path}")


HANDLERS = {
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "calibrate": cmd_calibrate,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgpricing",
        description="Forward-contract pricing pipeline for display ad inventory.",
    )
    parser.add_argument("command", choices=COMMANDS, help="pipeline step to run")
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--slots", default=None,
                        help="comma-separated slot ids to keep (default: all)")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        HANDLERS[args.command](config, args)
    except InfeasibleError as exc:
        _fail(exc, EXIT_INFEASIBLE)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        _fail(exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except OSError as exc:
        _fail(exc, EXIT_IO)
        return EXIT_IO
    return 0


def _fail(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
