"""Bid-log data model, ingestion, synthesis, and supply/demand aggregation.

A bid log is a flat record of sealed bids: one row per advertiser bid,
grouped into auctions by impression id.  Everything downstream (market
curves, demand calibration, revenue replay) consumes either these raw
records or the per-impression auction outcomes resolved from them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CSV_HEADER",
    "DEFAULT_SCHEMA",
    "BidRecord",
    "AuctionOutcome",
    "SlotStats",
    "ingest",
    "resolve_auctions",
    "aggregate",
    "synthesize",
]

CSV_HEADER = ("timestamp", "slot_id", "advertiser_id", "impression_id", "bid_cpm")

DEFAULT_SCHEMA: Mapping[str, str] = {
    "timestamp": "timestamp",
    "slot_id": "slot_id",
    "advertiser_id": "advertiser_id",
    "impression_id": "impression_id",
    "bid": "bid_cpm",
}


@dataclass(frozen=True)
class BidRecord:
    """One sealed bid on one impression, in CPM units.

    Parameters
    ----------
    timestamp : int
        Seconds since the epoch.
    slot_id, advertiser_id, impression_id : str
        Opaque identifiers; records sharing an impression_id belong to
        the same auction and must share slot_id and timestamp.
    bid : float
        Non-negative price per impression, CPM.
    """

    timestamp: int
    slot_id: str
    advertiser_id: str
    impression_id: str
    bid: float

    def __post_init__(self) -> None:
        if self.bid < 0:
            raise ValueError(f"bid must be non-negative, got {self.bid}")


@dataclass(frozen=True)
class AuctionOutcome:
    """Result of one sealed second-price auction.

    The highest bidder wins the impression and pays the bid next to
    theirs; slot_id and timestamp are carried over from the underlying
    bids so outcomes can be windowed without going back to the raw log.
    """

    impression_id: str
    winner_id: str
    first_price: float
    second_price: float
    n_bidders: int
    slot_id: str
    timestamp: int

    def __post_init__(self) -> None:
        if self.n_bidders < 1:
            raise ValueError("an auction needs at least one bidder")
        if self.second_price > self.first_price:
            raise ValueError(
                f"second price {self.second_price} exceeds first price {self.first_price}"
            )


@dataclass(frozen=True)
class SlotStats:
    """Supply and demand totals for one ad slot in one window.

    S counts supplied impressions, Q counts demanded impressions (one
    bid = one demanded impression), and xi = Q/S is the per-impression
    demand; xi is None when the slot supplied nothing.
    """

    slot_id: str
    S: int
    Q: int
    xi: float | None

    def __post_init__(self) -> None:
        if self.S < 0 or self.Q < 0:
            raise ValueError("S and Q must be non-negative")


def ingest(
    path, schema: Mapping[str, str] | None = None
) -> tuple[list[BidRecord], list[tuple[int, str]]]:
    """Read bid records from a CSV log.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row; the default layout is
        ``timestamp,slot_id,advertiser_id,impression_id,bid_cpm``.
    schema : mapping, optional
        Maps record fields (timestamp, slot_id, advertiser_id,
        impression_id, bid) to column names, for logs with different
        headers.

    Returns
    -------
    (records, errors)
        Well-formed records in file order, and one ``(line_number,
        message)`` diagnostic per rejected row.  A missing file or a
        missing column raises instead.
    """
    colmap = dict(DEFAULT_SCHEMA if schema is None else schema)
    records: list[BidRecord] = []
    errors: list[tuple[int, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return records, errors
        missing = [c for c in colmap.values() if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"bid log is missing columns {missing}")
        for row in reader:
            line = reader.line_num
            ts_raw = row.get(colmap["timestamp"])
            bid_raw = row.get(colmap["bid"])
            try:
                ts = int(ts_raw)
                bid = float(bid_raw)
            except (TypeError, ValueError):
                errors.append(
                    (line, f"unparseable numeric field (timestamp={ts_raw!r}, bid={bid_raw!r})")
                )
                continue
            if not math.isfinite(bid) or bid < 0:
                errors.append((line, f"rejected bid {bid_raw!r}: bids must be finite and >= 0"))
                continue
            records.append(
                BidRecord(
                    timestamp=ts,
                    slot_id=row[colmap["slot_id"]],
                    advertiser_id=row[colmap["advertiser_id"]],
                    impression_id=row[colmap["impression_id"]],
                    bid=bid,
                )
            )
    return records, errors


def resolve_auctions(
    records: Iterable[BidRecord], floor: float = 0.0
) -> list[AuctionOutcome]:
    """Run one sealed second-price auction per impression.

    The highest bid wins and pays the second-highest bid; a lone bidder
    pays ``floor``.  Ties on the top bid go to the lexicographically
    smallest advertiser_id, which leaves the payment unchanged.
    Outcomes come back in order of each impression's first appearance.
    """
    if floor < 0:
        raise ValueError("floor must be non-negative")
    groups: dict[str, list[BidRecord]] = {}
    for rec in records:
        groups.setdefault(rec.impression_id, []).append(rec)
    outcomes: list[AuctionOutcome] = []
    for imp_id, bids in groups.items():
        if not bids:
            continue
        if len({b.slot_id for b in bids}) > 1 or len({b.timestamp for b in bids}) > 1:
            raise ValueError(f"impression {imp_id!r} spans multiple slots or timestamps")
        ranked = sorted(bids, key=lambda b: (-b.bid, b.advertiser_id))
        second = ranked[1].bid if len(ranked) >= 2 else floor
        outcomes.append(
            AuctionOutcome(
                impression_id=imp_id,
                winner_id=ranked[0].advertiser_id,
                first_price=ranked[0].bid,
                second_price=second,
                n_bidders=len(ranked),
                slot_id=bids[0].slot_id,
                timestamp=bids[0].timestamp,
            )
        )
    return outcomes


def aggregate(
    records: Iterable[BidRecord], window: tuple[float, float]
) -> dict[str, SlotStats]:
    """Per-slot supply and demand inside a half-open time window.

    S counts distinct impression ids with timestamps in
    ``[window[0], window[1])``, Q counts bids, xi = Q/S.  Half-open
    windows make the counts additive over adjacent windows.  Slots with
    no records in the window do not appear in the result.
    """
    start, end = window
    if not end > start:
        raise ValueError(f"window [{start}, {end}) is empty")
    imps: dict[str, set[str]] = {}
    bid_counts: dict[str, int] = {}
    for rec in records:
        if start <= rec.timestamp < end:
            imps.setdefault(rec.slot_id, set()).add(rec.impression_id)
            bid_counts[rec.slot_id] = bid_counts.get(rec.slot_id, 0) + 1
    stats: dict[str, SlotStats] = {}
    for slot in sorted(imps):
        S = len(imps[slot])
        Q = bid_counts[slot]
        stats[slot] = SlotStats(slot_id=slot, S=S, Q=Q, xi=Q / S if S > 0 else None)
    return stats


def synthesize(spec: Mapping, seed: int) -> list[BidRecord]:
    """Generate a deterministic synthetic bid log from a market spec.

    ``spec`` mirrors the JSON market format::

        {"slots": [{"slot_id": ..., "impressions": ..., "bidders_mean": ...,
                    "bid_dist": {"type": "lognormal", "mu": ..., "sigma": ...},
                    "start": ..., "end": ...}, ...]}

    Per-impression bidder counts are Poisson around ``bidders_mean``
    with a floor of one bidder; set ``"bidders_dist": "fixed"`` on a
    slot for exact counts.  ``bidders_mean`` may also be a ``[lo, hi]``
    pair, ramping linearly across the slot's impressions so one log
    spans a range of competition levels.  Bids are i.i.d. from
    ``bid_dist`` ("lognormal" with mu/sigma, where sigma = 0 degenerates
    to a point mass at exp(mu), or "exponential" with scale).
    Impressions are spread evenly over ``[start, end)`` seconds.
    """
    slots = spec.get("slots")
    if not slots:
        raise ValueError("market spec has no slots")
    rng = np.random.default_rng(seed)
    records: list[BidRecord] = []
    for slot in slots:
        slot_id = str(slot["slot_id"])
        n_imp = int(slot["impressions"])
        if n_imp <= 0:
            raise ValueError(f"slot {slot_id!r}: impressions must be positive")
        start, end = int(slot["start"]), int(slot["end"])
        if not end > start:
            raise ValueError(f"slot {slot_id!r}: time span [{start}, {end}) is empty")
        mean = slot["bidders_mean"]
        if isinstance(mean, (list, tuple)):
            means = np.linspace(float(mean[0]), float(mean[1]), n_imp)
        else:
            means = np.full(n_imp, float(mean))
        if np.any(means < 1):
            raise ValueError(f"slot {slot_id!r}: bidders_mean must be >= 1")
        bidders_dist = slot.get("bidders_dist", "poisson")
        if bidders_dist == "poisson":
            counts = np.maximum(1, rng.poisson(means))
        elif bidders_dist == "fixed":
            counts = np.maximum(1, np.rint(means).astype(np.int64))
        else:
            raise ValueError(f"unknown bidders_dist {bidders_dist!r}")
        bid_dist = slot["bid_dist"]
        kind = bid_dist.get("type", "lognormal")
        total = int(counts.sum())
        if kind == "lognormal":
            mu = float(bid_dist["mu"])
            sigma = float(bid_dist["sigma"])
            if sigma < 0:
                raise ValueError(f"slot {slot_id!r}: sigma must be non-negative")
            if sigma == 0:
                values = np.full(total, math.exp(mu))
            else:
                values = np.exp(mu + sigma * rng.standard_normal(total))
        elif kind == "exponential":
            values = rng.exponential(float(bid_dist["scale"]), total)
        else:
            raise ValueError(f"unknown bid distribution {kind!r}")
        times = start + (np.arange(n_imp, dtype=np.int64) * (end - start)) // n_imp
        pos = 0
        for i in range(n_imp):
            c = int(counts[i])
            imp_id = f"{slot_id}:{i:07d}"
            ts = int(times[i])
            for j in range(c):
                records.append(
                    BidRecord(
                        timestamp=ts,
                        slot_id=slot_id,
                        advertiser_id=f"a{j:03d}",
                        impression_id=imp_id,
                        bid=float(values[pos + j]),
                    )
                )
            pos += c
    return records
