"""Robust locally weighted regression and the market curves built with it.

At each query point the smoother fits a low-degree polynomial by
weighted least squares over the span-fraction nearest neighbors, with
tricube locality weights.  A few bisquare reweighting passes over the
training set then harden the fit against outliers.  The three market
curves (expected clearing price, its dispersion, expected winning bid,
each against per-impression demand) are fitted this way from windowed
auction outcomes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

__all__ = [
    "DEFAULT_SPAN",
    "DEFAULT_DEGREE",
    "ROBUST_ITERATIONS",
    "CurvePoint",
    "RlwrCurve",
    "RlwrSmoother",
    "MarketCurves",
    "tricube",
    "rlwr_fit",
    "build_market_curves",
]

DEFAULT_SPAN = 0.10
DEFAULT_DEGREE = 2
ROBUST_ITERATIONS = 5


@dataclass(frozen=True)
class CurvePoint:
    """One training observation: response y at per-impression demand xi."""

    xi: float
    y: float


def tricube(u) -> np.ndarray:
    """Tricube kernel (1 - |u|^3)^3 on |u| < 1, zero outside."""
    u = np.abs(np.asarray(u, dtype=float))
    w = (1.0 - np.minimum(u, 1.0) ** 3) ** 3
    return np.where(u < 1.0, w, 0.0)


def _bisquare(u) -> np.ndarray:
    """Bisquare kernel (1 - u^2)^2 on |u| < 1, zero outside."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, (1.0 - u**2) ** 2, 0.0)


class RlwrCurve:
    """A fitted robust locally weighted regression curve.

    Callable at scalar or array query points.  Queries outside the
    training range are clamped to the nearest endpoint (with a
    warning); evaluation is deterministic for fixed data, span, and
    query.
    """

    def __init__(
        self,
        x: Sequence[float],
        y: Sequence[float],
        span: float = DEFAULT_SPAN,
        degree: int = DEFAULT_DEGREE,
        iterations: int = ROBUST_ITERATIONS,
        kind: str = "",
    ):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("x and y must be 1-D arrays of equal length")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("training data must be finite")
        if not 0.0 < span <= 1.0:
            raise ValueError(f"span must be in (0, 1], got {span}")
        if degree < 0 or iterations < 0:
            raise ValueError("degree and iterations must be non-negative")
        if np.unique(x).size < degree + 1:
            raise ValueError(f"need at least {degree + 1} distinct x values for degree {degree}")
        order = np.argsort(x, kind="stable")
        self.x = x[order]
        self.y = y[order]
        self.span = float(span)
        self.degree = int(degree)
        self.iterations = int(iterations)
        self.kind = kind
        self._neighbors = max(self.degree + 1, math.ceil(self.span * self.x.size))
        self._global_coef: np.ndarray | None = None
        self._delta = self._robustness_weights()

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    def nearest_training_x(self, query: float) -> float:
        """Training abscissa closest to the query point."""
        return float(self.x[int(np.argmin(np.abs(self.x - float(query))))])

    def __call__(self, query):
        q = np.asarray(query, dtype=float)
        scalar = q.ndim == 0
        arr = np.atleast_1d(q)
        if np.any(arr < self.x_min) or np.any(arr > self.x_max):
            warnings.warn(
                "query outside the training range; clamping to the nearest endpoint",
                RuntimeWarning,
                stacklevel=2,
            )
            arr = np.clip(arr, self.x_min, self.x_max)
        out = np.array([self._fit_at(float(v), self._delta) for v in arr])
        return float(out[0]) if scalar else out

    # -- fitting internals -------------------------------------------------

    def _tricube_at(self, x0: float) -> np.ndarray:
        dist = np.abs(self.x - x0)
        r = min(self._neighbors, dist.size)
        h = float(np.partition(dist, r - 1)[r - 1])
        if h == 0.0:
            # every in-span neighbor sits on the query point
            return np.where(dist == 0.0, 1.0, 0.0)
        return tricube(dist / h)

    def _fit_at(self, x0: float, delta: np.ndarray) -> float:
        w = self._tricube_at(x0) * delta
        if not np.any(w > 0):
            warnings.warn(
                "all local weights vanished at a query point; using a global polynomial fit",
                RuntimeWarning,
                stacklevel=3,
            )
            return self._global_fit(x0)
        mask = w > 0
        dx = self.x[mask] - x0
        ys = self.y[mask]
        sw = np.sqrt(w[mask])
        for deg in range(min(self.degree, np.unique(dx).size - 1), -1, -1):
            design = np.vander(dx, deg + 1, increasing=True) * sw[:, None]
            coef, _, rank, _ = np.linalg.lstsq(design, ys * sw, rcond=None)
            if rank == deg + 1:
                return float(coef[0])
        return float(np.average(ys, weights=w[mask]))

    def _robustness_weights(self) -> np.ndarray:
        delta = np.ones_like(self.x)
        if self.iterations == 0:
            return delta
        scale = float(np.max(np.abs(self.y)))
        for _ in range(self.iterations):
            fitted = np.array([self._fit_at(float(x0), delta) for x0 in self.x])
            resid = np.abs(self.y - fitted)
            if float(resid.max()) <= 1e-12 * scale:
                # perfect fit: every residual is numerically zero, nothing to downweight
                return np.ones_like(self.x)
            # floor the median so exact residuals cannot zero-weight clean points
            s = max(float(np.median(resid)), 1e-12 * scale)
            delta = _bisquare((self.y - fitted) / (6.0 * s))
        return delta

    def _global_fit(self, x0: float) -> float:
        if self._global_coef is None:
            deg = min(self.degree, np.unique(self.x).size - 1)
            self._global_coef = np.polyfit(self.x, self.y, deg)
        return float(np.polyval(self._global_coef, x0))

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "span": self.span,
            "degree": self.degree,
            "points": [{"xi": float(a), "y": float(b)} for a, b in zip(self.x, self.y)],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RlwrCurve":
        pts = payload["points"]
        return cls(
            [p["xi"] for p in pts],
            [p["y"] for p in pts],
            span=payload["span"],
            degree=payload["degree"],
            kind=payload.get("kind", ""),
        )


def rlwr_fit(
    data: Iterable,
    span: float = DEFAULT_SPAN,
    degree: int = DEFAULT_DEGREE,
    iterations: int = ROBUST_ITERATIONS,
) -> RlwrCurve:
    """Fit a robust locally weighted regression curve.

    ``data`` is a sequence of CurvePoint or (x, y) pairs.  The returned
    curve is callable; see RlwrCurve.
    """
    xs: list[float] = []
    ys: list[float] = []
    for p in data:
        if isinstance(p, CurvePoint):
            xs.append(p.xi)
            ys.append(p.y)
        else:
            a, b = p
            xs.append(float(a))
            ys.append(float(b))
    if not xs:
        raise ValueError("no training data")
    return RlwrCurve(xs, ys, span=span, degree=degree, iterations=iterations)


class RlwrSmoother(BaseEstimator, RegressorMixin):
    """Scikit-learn style estimator wrapping the robust smoother.

    Parameters
    ----------
    span : float
        Fraction of the training set used as the local neighborhood.
    degree : int
        Local polynomial degree.
    iterations : int
        Bisquare robustness passes; 0 disables robustness.
    """

    def __init__(
        self,
        span: float = DEFAULT_SPAN,
        degree: int = DEFAULT_DEGREE,
        iterations: int = ROBUST_ITERATIONS,
    ):
        self.span = span
        self.degree = degree
        self.iterations = iterations

    @staticmethod
    def _as_column(X, name: str) -> np.ndarray:
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        if arr.ndim != 1:
            raise ValueError(f"{name} must be 1-D or a single 2-D column, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite values")
        return arr

    def fit(self, X, y) -> "RlwrSmoother":
        x = self._as_column(X, "X")
        yv = np.asarray(y, dtype=float).ravel()
        if x.shape != yv.shape:
            raise ValueError(f"X and y lengths differ: {x.shape[0]} vs {yv.shape[0]}")
        self.curve_ = RlwrCurve(
            x, yv, span=self.span, degree=self.degree, iterations=self.iterations
        )
        self.n_features_in_ = 1
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "curve_"):
            raise NotFittedError("this RlwrSmoother instance is not fitted yet; call fit first")
        x = self._as_column(X, "X")
        return np.asarray(self.curve_(x), dtype=float)


@dataclass
class MarketCurves:
    """The three market price curves against per-impression demand xi.

    phi is the expected clearing (second) price, psi the standard
    deviation of clearing prices, and pi the expected winning (first)
    bid, each an evaluable fitted curve.
    """

    phi: RlwrCurve
    psi: RlwrCurve
    pi: RlwrCurve
    span: float = DEFAULT_SPAN
    degree: int = DEFAULT_DEGREE

    def psi_low_confidence(self, xi: float) -> bool:
        """True when the dispersion estimate at xi leans on training
        windows with fewer than two bidders per impression; such
        windows are dominated by single-bid auctions and their price
        dispersion is not trusted."""
        return self.psi.nearest_training_x(xi) < 2.0

    def to_dict(self) -> dict:
        return {
            "span": self.span,
            "degree": self.degree,
            "phi": self.phi.to_dict(),
            "psi": self.psi.to_dict(),
            "pi": self.pi.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MarketCurves":
        return cls(
            phi=RlwrCurve.from_dict(payload["phi"]),
            psi=RlwrCurve.from_dict(payload["psi"]),
            pi=RlwrCurve.from_dict(payload["pi"]),
            span=payload.get("span", DEFAULT_SPAN),
            degree=payload.get("degree", DEFAULT_DEGREE),
        )


def build_market_curves(
    outcomes: Iterable, span: float = DEFAULT_SPAN, window_seconds: int = 3600
) -> MarketCurves:
    """Fit the market curves from auction outcomes bucketed into time windows.

    Outcomes are grouped per (slot, window); each non-empty bucket
    contributes one training point per curve: xi = bids per impression
    in the bucket, phi = mean clearing price, pi = mean winning bid,
    and psi = the bucket's clearing-price standard deviation.  At least
    3 usable buckets are required.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    buckets: dict[tuple[str, int], list] = {}
    for o in outcomes:
        buckets.setdefault((o.slot_id, o.timestamp // window_seconds), []).append(o)
    xi: list[float] = []
    phi: list[float] = []
    psi: list[float] = []
    pi: list[float] = []
    for key in sorted(buckets):
        rows = buckets[key]
        if not rows:
            continue
        seconds = np.array([r.second_price for r in rows])
        firsts = np.array([r.first_price for r in rows])
        xi.append(sum(r.n_bidders for r in rows) / len(rows))
        phi.append(float(seconds.mean()))
        pi.append(float(firsts.mean()))
        psi.append(float(seconds.std()))
    if len(xi) < 3:
        raise ValueError(f"need at least 3 usable windows to fit curves, got {len(xi)}")
    return MarketCurves(
        phi=RlwrCurve(xi, phi, span=span, kind="phi"),
        psi=RlwrCurve(xi, psi, span=span, kind="psi"),
        pi=RlwrCurve(xi, pi, span=span, kind="pi"),
        span=span,
        degree=DEFAULT_DEGREE,
    )
