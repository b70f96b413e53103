"""Sequential confounder models f_k(l_k | history).

Time-varying covariates at course k >= 2 get one regression each on the
pre-decision history (with an intercept), assumed conditionally independent
given that history.  Course-1 covariates come from a Bayesian bootstrap over
the observed course-1 rows.

Every simulator has a ``*_from_uniforms`` form so that g-computation can
drive it with common random numbers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

PROPORTION_EPS = 1e-6
LOG_2PI = float(np.log(2 * np.pi))


def with_intercept(h) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=float))
    return np.column_stack([np.ones(h.shape[0]), h])


def _clamp_proportion(l):
    l = np.asarray(l, dtype=float)
    if np.any((l <= 0) | (l >= 1)):
        warnings.warn(f"proportion at boundary clamped to [{PROPORTION_EPS}, 1-{PROPORTION_EPS}]", stacklevel=3)
        l = np.clip(l, PROPORTION_EPS, 1 - PROPORTION_EPS)
    return l


@dataclass(frozen=True)
class BetaRegression:
    """Beta(mu*phi, (1-mu)*phi) with logit(mu) = z @ eta."""

    eta: np.ndarray
    phi: float
    family = "beta"

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))

    def mean(self, z):
        return special.expit(z @ self.eta)

    def from_uniforms(self, z, u):
        mu = self.mean(z)
        draw = special.betaincinv(mu * self.phi, (1 - mu) * self.phi, u)
        return np.clip(draw, PROPORTION_EPS, 1 - PROPORTION_EPS)

    def logpdf(self, z, l):
        l = _clamp_proportion(l)
        return beta_logpdf(l, self.mean(z), self.phi)

    def to_dict(self):
        return {"family": self.family, "eta": self.eta.tolist(), "phi": self.phi}


def beta_logpdf(l, mu, phi):
    a, b = mu * phi, (1 - mu) * phi
    return special.gammaln(phi) - special.gammaln(a) - special.gammaln(b) + (a - 1) * np.log(l) + (b - 1) * np.log1p(-l)


@dataclass(frozen=True)
class LogisticRegression:
    eta: np.ndarray
    family = "logistic"

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))

    def mean(self, z):
        return special.expit(z @ self.eta)

    def from_uniforms(self, z, u):
        return (np.asarray(u) < self.mean(z)).astype(float)

    def logpdf(self, z, l):
        lin = z @ self.eta
        return np.asarray(l, dtype=float) * lin - np.logaddexp(0.0, lin)

    def to_dict(self):
        return {"family": self.family, "eta": self.eta.tolist()}


@dataclass(frozen=True)
class GaussianRegression:
    eta: np.ndarray
    sigma: float
    family = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))

    def mean(self, z):
        return z @ self.eta

    def from_uniforms(self, z, u):
        return self.mean(z) + self.sigma * special.ndtri(u)

    def logpdf(self, z, l):
        r = (np.asarray(l, dtype=float) - self.mean(z)) / self.sigma
        return -0.5 * LOG_2PI - np.log(self.sigma) - 0.5 * r * r

    def to_dict(self):
        return {"family": self.family, "eta": self.eta.tolist(), "sigma": self.sigma}


@dataclass(frozen=True)
class BayesianBootstrap:
    """Dirichlet-weighted empirical distribution over observed course-1 rows."""

    rows: np.ndarray
    weights: np.ndarray
    family = "bootstrap"

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (rows.shape[0],):
            raise ValueError("one weight per row required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "weights", w)

    def indices_from_uniforms(self, u):
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        return np.minimum(np.searchsorted(cdf, np.asarray(u), side="right"), len(cdf) - 1)

    def from_uniforms(self, u):
        return self.rows[self.indices_from_uniforms(u)]

    def to_dict(self):
        return {"family": self.family, "weights": self.weights.tolist()}


Submodel = BetaRegression | LogisticRegression | GaussianRegression

FAMILY_FOR_KIND = {"proportion": "beta", "binary": "logistic", "continuous": "gaussian"}


def submodel_from_dict(d: dict) -> Submodel:
    fam = d["family"]
    if fam == "beta":
        return BetaRegression(np.asarray(d["eta"]), d["phi"])
    if fam == "logistic":
        return LogisticRegression(np.asarray(d["eta"]))
    if fam == "gaussian":
        return GaussianRegression(np.asarray(d["eta"]), d["sigma"])
    raise ValueError(f"unknown confounder family {fam!r}")


@dataclass(frozen=True)
class ConfounderModel:
    """Course-k confounder model: a bootstrap at k=1, per-covariate regressions after."""

    k: int
    submodels: dict[str, Submodel] = field(default_factory=dict)
    bootstrap: BayesianBootstrap | None = None

    def __post_init__(self):
        if self.k == 1 and self.bootstrap is None:
            raise ValueError("course-1 model needs a bootstrap component")

    def simulate_from_uniforms(self, h, u) -> np.ndarray:
        """h: (B, q) pre-decision history; u: (B, n_cols) uniforms.

        Returns full course-1 rows at k=1, else the time-varying values in
        submodel order.
        """
        u = np.atleast_2d(u)
        if self.k == 1:
            return self.bootstrap.from_uniforms(u[:, 0])
        z = with_intercept(h)
        cols = [m.from_uniforms(z, u[:, j]) for j, m in enumerate(self.submodels.values())]
        return np.column_stack(cols) if cols else np.zeros((z.shape[0], 0))

    @property
    def n_uniforms(self) -> int:
        return 1 if self.k == 1 else len(self.submodels)


def simulate_confounders(model: ConfounderModel, h, rng: np.random.Generator) -> np.ndarray:
    if model.k == 1:
        B = 1 if h is None or np.ndim(h) < 2 else np.asarray(h).shape[0]
    else:
        B = np.atleast_2d(h).shape[0]
    u = rng.random((B, model.n_uniforms))
    return model.simulate_from_uniforms(h, u)


def loglik_confounders(model: ConfounderModel, h, l) -> np.ndarray:
    """Sum of per-covariate conditional log-densities, one value per row of ``h``."""
    if model.k == 1:
        raise ValueError("the course-1 bootstrap has no parametric density")
    z = with_intercept(h)
    l = np.atleast_2d(np.asarray(l, dtype=float))
    total = np.zeros(z.shape[0])
    for j, m in enumerate(model.submodels.values()):
        total = total + m.logpdf(z, l[:, j])
    return total


def bayesian_bootstrap_draw(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return np.ones(1)
    w = rng.dirichlet(np.ones(n))
    return w / w.sum()
