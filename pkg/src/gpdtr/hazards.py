"""Piecewise-constant proportional hazards with Gamma Process priors.

A baseline hazard is constant on ``[u_j, u_{j+1})``.  Covariates act
multiplicatively through ``exp(h @ beta)``.  Beyond the last knot the model
either keeps the last rate (``tail="extend"``) or has zero hazard
(``tail="truncate"``), in which case sampled waiting times may come back as
:data:`BEYOND_HORIZON`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BEYOND_HORIZON = np.inf
TAIL_POLICIES = ("extend", "truncate")
# Gamma draws with shape << 1 underflow to exactly 0; keep rates strictly positive.
RATE_FLOOR = 1e-300


@dataclass(frozen=True)
class TimePartition:
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a partition needs at least two knots")
        if knots[0] != 0.0:
            raise ValueError("first knot must be 0")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly ascending")
        object.__setattr__(self, "knots", knots)

    @property
    def J(self) -> int:
        return self.knots.size

    @property
    def n_intervals(self) -> int:
        return self.knots.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    def halved(self) -> "TimePartition":
        """Coarser partition keeping every other knot (and always the last one)."""
        keep = self.knots[::2]
        if keep[-1] != self.knots[-1]:
            keep = np.append(keep, self.knots[-1])
        return TimePartition(keep)

    def overlaps(self, w: np.ndarray, tail: str = "extend") -> np.ndarray:
        """Exposure of ``[0, w_i)`` in each interval, shape (n, J-1)."""
        w = np.asarray(w, dtype=float)
        lo, hi = self.knots[:-1], self.knots[1:].copy()
        if tail == "extend":
            hi[-1] = np.inf
        return np.clip(np.minimum(w[:, None], hi) - lo, 0.0, None)

    def interval_index(self, w: np.ndarray) -> np.ndarray:
        """Index of the interval containing each ``w`` (left-closed); tail maps to the last interval."""
        idx = np.searchsorted(self.knots, np.asarray(w, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_intervals - 1)


def default_n_intervals(n: int) -> int:
    return 20 if n >= 1000 else 10


def quantile_partition(waits: Sequence[float], n_intervals: int) -> TimePartition:
    """Knots at empirical quantiles of observed waiting times, last knot at the maximum."""
    waits = np.asarray(waits, dtype=float)
    if waits.size == 0:
        raise ValueError("no waiting times to build a partition from")
    probs = np.arange(1, n_intervals) / n_intervals
    inner = np.quantile(waits, probs) if n_intervals > 1 else np.empty(0)
    knots = np.unique(np.concatenate([[0.0], inner, [waits.max()]]))
    if knots.size < 2:
        knots = np.array([0.0, waits.max()])
    return TimePartition(knots)


@dataclass(frozen=True)
class GammaProcessPrior:
    """GP(alpha * Lambda*) with a linear prior cumulative hazard ``star_rate * w``."""

    alpha: float
    star_rate: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.star_rate > 0):
            raise ValueError("alpha and star_rate must be positive")

    def increment_shapes(self, partition: TimePartition) -> np.ndarray:
        return self.alpha * self.star_rate * partition.widths


def _lp(h, beta) -> np.ndarray | float:
    if h is None:
        return 0.0
    h = np.asarray(h, dtype=float)
    if h.shape[-1] == 0:
        return np.zeros(h.shape[:-1]) if h.ndim > 1 else 0.0
    return h @ np.asarray(beta, dtype=float)


@dataclass(frozen=True)
class PiecewiseHazardModel:
    partition: TimePartition
    rates: np.ndarray
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prior: GammaProcessPrior | None = None
    beta_prior_sd: float = 1.0
    tail: str = "extend"

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if rates.shape != (self.partition.n_intervals,):
            raise ValueError("need one rate per partition interval")
        if np.any(~(rates > 0)):
            raise ValueError("baseline rates must be strictly positive")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if self.tail not in TAIL_POLICIES:
            raise ValueError(f"unknown tail policy {self.tail!r}")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "beta", beta)

    kind = "piecewise"

    @property
    def cum_at_knots(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.rates * self.partition.widths)])

    def baseline_hazard(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        out = self.rates[self.partition.interval_index(w)]
        if self.tail == "truncate":
            out = np.where(w >= self.partition.horizon, 0.0, out)
        return out

    def baseline_cumhaz(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        knots = self.partition.knots
        idx = self.partition.interval_index(w)
        cum = self.cum_at_knots
        span = w - knots[idx]
        if self.tail == "truncate":
            span = np.minimum(span, knots[idx + 1] - knots[idx])
        return cum[idx] + self.rates[idx] * span

    def linear_predictor(self, h) -> np.ndarray | float:
        return _lp(h, self.beta)

    def sample(self, lp, u) -> np.ndarray:
        """Inverse-CDF waiting times for linear predictors ``lp`` and uniforms ``u``."""
        u = np.asarray(u, dtype=float)
        target = -np.log(u) * np.exp(-np.asarray(lp, dtype=float))
        cum = self.cum_at_knots
        idx = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, self.partition.n_intervals - 1)
        with np.errstate(over="ignore", divide="ignore"):
            w = self.partition.knots[idx] + (target - cum[idx]) / self.rates[idx]
        if self.tail == "truncate":
            w = np.where(target > cum[-1], BEYOND_HORIZON, w)
        return w

    def with_params(self, rates=None, beta=None) -> "PiecewiseHazardModel":
        return PiecewiseHazardModel(
            self.partition,
            self.rates if rates is None else rates,
            self.beta if beta is None else beta,
            self.prior,
            self.beta_prior_sd,
            self.tail,
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "knots": self.partition.knots.tolist(),
            "rates": self.rates.tolist(),
            "beta": self.beta.tolist(),
            "tail": self.tail,
        }


@dataclass(frozen=True)
class WeibullHazardModel:
    """Parametric comparator: baseline hazard ``(a / s**a) * w**(a-1)``."""

    shape: float
    scale: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_prior_sd: float = 1.0

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull shape and scale must be positive")
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))

    kind = "weibull"

    def baseline_hazard(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        a, s = self.shape, self.scale
        with np.errstate(divide="ignore"):
            return (a / s) * (w / s) ** (a - 1.0)

    def baseline_cumhaz(self, w) -> np.ndarray:
        return (np.asarray(w, dtype=float) / self.scale) ** self.shape

    def linear_predictor(self, h) -> np.ndarray | float:
        return _lp(h, self.beta)

    def sample(self, lp, u) -> np.ndarray:
        target = -np.log(np.asarray(u, dtype=float)) * np.exp(-np.asarray(lp, dtype=float))
        return self.scale * target ** (1.0 / self.shape)

    def with_params(self, shape=None, scale=None, beta=None) -> "WeibullHazardModel":
        return WeibullHazardModel(
            self.shape if shape is None else shape,
            self.scale if scale is None else scale,
            self.beta if beta is None else beta,
            self.beta_prior_sd,
        )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shape": self.shape, "scale": self.scale, "beta": self.beta.tolist()}


HazardModel = PiecewiseHazardModel | WeibullHazardModel


def hazard_from_dict(d: dict) -> HazardModel:
    if d["kind"] == "weibull":
        return WeibullHazardModel(d["shape"], d["scale"], np.asarray(d["beta"]))
    return PiecewiseHazardModel(
        TimePartition(np.asarray(d["knots"])), np.asarray(d["rates"]), np.asarray(d["beta"]), tail=d.get("tail", "extend")
    )


# -- functional surface -------------------------------------------------------


def hazard_at(model: HazardModel, w, h=None):
    if np.any(np.asarray(w) < 0):
        raise ValueError("w must be nonnegative")
    return model.baseline_hazard(w) * np.exp(model.linear_predictor(h))


def cumulative_hazard(model: HazardModel, w, h=None):
    if np.any(np.asarray(w) < 0):
        raise ValueError("w must be nonnegative")
    return model.baseline_cumhaz(w) * np.exp(model.linear_predictor(h))


def survival(model: HazardModel, w, h=None):
    return np.exp(-cumulative_hazard(model, w, h))


def survival_both(model_y: HazardModel, model_t: HazardModel, w, h=None):
    """Probability of no next-treatment and no death by ``w``."""
    return np.exp(-cumulative_hazard(model_y, w, h) - cumulative_hazard(model_t, w, h))


def sample_waiting_time(model: HazardModel, h, u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie in (0, 1)")
    return model.sample(model.linear_predictor(h), u)


def sample_gp_prior(prior: GammaProcessPrior, partition: TimePartition, rng: np.random.Generator, size=None):
    """Rates whose scaled increments ``width * rate`` are independent Gamma(alpha*star*width, alpha)."""
    shapes = prior.increment_shapes(partition)
    shape_out = shapes.shape if size is None else (size,) + shapes.shape
    theta = rng.gamma(np.broadcast_to(shapes, shape_out), 1.0 / prior.alpha)
    return np.maximum(theta / partition.widths, RATE_FLOOR)
