"""Blocked Metropolis-in-Gibbs sampler for the course-specific hazard and
confounder models.

Sweep order within an iteration is course 1..K and, within a course, death
rates, death coefficients, next-treatment rates, next-treatment coefficients,
then the confounder regressions.  Baseline rates get conjugate Gamma draws;
everything else gets Gaussian random-walk Metropolis whose proposal
covariance is re-estimated once, at the end of burn-in, and frozen.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import confounders as cf
from .data_model import DEATH, NEXT, Cohort, CourseData, Schema
from .hazards import (
    RATE_FLOOR,
    GammaProcessPrior,
    PiecewiseHazardModel,
    TimePartition,
    WeibullHazardModel,
    default_n_intervals,
    hazard_from_dict,
    quantile_partition,
)

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    M: int = 4000
    M_star: int = 2000
    thin: int = 1
    seed: int = 0
    hazard: str = "piecewise"  # or "weibull"
    alpha: float = 0.01
    beta_prior_var: float = 1.0
    eta_prior_sd: float = 1.0
    n_intervals: int | None = None
    halve_partition: bool = False
    tail: str = "extend"
    initial_sd: float | None = None  # None: curvature-based diagonal
    s_d: float | None = None  # None: 2.38**2 / d
    jitter: float = 1e-6
    adapt_window: float = 0.5  # trailing fraction of burn-in used for the covariance

    def __post_init__(self):
        if not 0 < self.M_star < self.M:
            raise ValueError("need 0 < M_star < M")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.s_d is not None and self.s_d <= 0:
            raise ValueError("s_d must be positive")
        if self.hazard not in ("piecewise", "weibull"):
            raise ValueError(f"unknown hazard kind {self.hazard!r}")
        if not 0 < self.adapt_window <= 1:
            raise ValueError("adapt_window must lie in (0, 1]")

    @property
    def n_kept(self) -> int:
        return len(range(self.M_star + 1, self.M + 1, self.thin))

    @classmethod
    def from_kv(cls, kv: dict[str, str], **overrides) -> "SamplerConfig":
        types = {f: t for f, t in cls.__annotations__.items()}
        args = {}
        for key, raw in kv.items():
            if key not in types:
                continue
            t = types[key]
            if raw.lower() in ("none", ""):
                args[key] = None
            elif "bool" in t:
                args[key] = raw.lower() in ("1", "true", "yes")
            elif "int" in t and "float" not in t:
                args[key] = int(raw)
            elif "float" in t:
                args[key] = float(raw)
            else:
                args[key] = raw
        args.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**args)


# -- exposures ----------------------------------------------------------------


@dataclass
class Exposures:
    subject_index: np.ndarray
    exposure: np.ndarray  # (n, J-1)
    death_events: np.ndarray  # (n, J-1) 0/1
    next_events: np.ndarray  # (n, J-1) 0/1

    @property
    def death_counts(self) -> np.ndarray:
        return self.death_events.sum(axis=0)

    @property
    def next_counts(self) -> np.ndarray:
        return self.next_events.sum(axis=0)


def _exposures(w, delta, partition: TimePartition, tail: str):
    E = partition.overlaps(w, tail)
    idx = partition.interval_index(w)
    onehot = np.zeros_like(E)
    onehot[np.arange(len(w)), idx] = 1.0
    if tail == "truncate":
        onehot[w > partition.horizon] = 0.0
    death = onehot * (delta == DEATH)[:, None]
    nxt = onehot * (delta == NEXT)[:, None]
    return E, death, nxt


def risk_set_exposures(cohort: Cohort, k: int, partition: TimePartition, tail: str = "extend") -> Exposures:
    """Per-subject interval exposures and cause-split event indicators at course ``k``."""
    cd = cohort.course_data(k)
    E, death, nxt = _exposures(cd.w, cd.delta, partition, tail)
    return Exposures(cd.subject_index, E, death, nxt)


# -- elementary updates ---------------------------------------------------------


def gibbs_update_rates(
    exposure: np.ndarray,
    event_counts: np.ndarray,
    lp,
    prior: GammaProcessPrior,
    partition: TimePartition,
    rng: np.random.Generator,
) -> np.ndarray:
    """Conjugate draw of the baseline rates given coefficients.

    With theta_j = width_j * rate_j ~ Gamma(alpha*star*width_j, alpha) a priori
    and a piecewise-exponential likelihood, theta_j | data is
    Gamma(alpha*star*width_j + D_j, alpha + R_j / width_j) with R_j the
    risk-weighted exposure in interval j.
    """
    widths = partition.widths
    exposure = np.asarray(exposure, dtype=float).reshape(-1, widths.size)
    R = exposure.T @ np.exp(np.broadcast_to(lp, exposure.shape[:1]))
    shape = prior.increment_shapes(partition) + np.asarray(event_counts, dtype=float)
    rate = prior.alpha + R / widths
    theta = rng.gamma(shape, 1.0 / rate)
    return np.maximum(theta / widths, RATE_FLOOR)


def mh_step(x, logpost: Callable[[np.ndarray], float], current: float, chol: np.ndarray, rng: np.random.Generator):
    """One Gaussian random-walk Metropolis step. Returns (x, logpost, accepted)."""
    prop = x + chol @ rng.standard_normal(x.size)
    lp_new = logpost(prop)
    log_u = np.log(rng.random())
    if np.isfinite(lp_new) and log_u < lp_new - current:
        return prop, lp_new, True
    return x, current, False


def mh_update_beta(loglik: Callable[[np.ndarray], float], beta, proposal_cov, prior_sd: float, rng):
    """Random-walk Metropolis update of a coefficient vector under a N(0, prior_sd^2 I) prior."""
    beta = np.asarray(beta, dtype=float)

    def logpost(b):
        return loglik(b) - 0.5 * float(b @ b) / prior_sd**2

    chol = np.linalg.cholesky(np.atleast_2d(proposal_cov))
    new, _, acc = mh_step(beta, logpost, logpost(beta), chol, rng)
    return new, acc


def adapt_covariance(draws, s_d: float, jitter: float = 1e-6, fallback=None):
    """Scaled empirical covariance of burn-in draws plus ``jitter * I``.

    Returns ``(cov, adapted)``; ``adapted`` is False when the draws are
    degenerate and the fallback (initial diagonal) was returned instead.
    """
    X = np.asarray(draws, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    d = X.shape[1]
    if fallback is None:
        fallback = np.eye(d)
    if X.shape[0] < 2:
        raise ValueError("need at least two burn-in draws")
    S = np.atleast_2d(np.cov(X, rowvar=False))
    if np.any(np.diag(S) <= 0) or np.linalg.matrix_rank(S) < d:
        warnings.warn("degenerate burn-in covariance; keeping the initial proposal", stacklevel=2)
        return np.asarray(fallback, dtype=float), False
    cov = s_d * S + jitter * np.eye(d)
    return 0.5 * (cov + cov.T), True


class AdaptiveProposal:
    """Diagonal proposal during burn-in, one covariance re-estimate at ``M_star``."""

    def __init__(self, init_sd, M_star: int, s_d: float | None, jitter: float, window: float):
        init_sd = np.atleast_1d(np.asarray(init_sd, dtype=float))
        self.d = init_sd.size
        self.initial_cov = np.diag(init_sd**2)
        self.cov = self.initial_cov
        self.chol = np.diag(init_sd)
        self.M_star = M_star
        self.start = M_star - max(2, int(round(window * M_star))) + 1
        self.s_d = s_d if s_d is not None else 2.38**2 / self.d
        self.jitter = jitter
        self.history: list[np.ndarray] = []
        self.frozen = False
        self.accepted = 0
        self.tried = 0

    def after_step(self, m: int, x: np.ndarray, accepted: bool) -> None:
        if m > self.M_star:
            self.tried += 1
            self.accepted += accepted
            return
        if m >= self.start:
            self.history.append(np.array(x, copy=True))
        if m == self.M_star:
            self.cov, _ = adapt_covariance(np.array(self.history), self.s_d, self.jitter, self.initial_cov)
            self.chol = np.linalg.cholesky(self.cov)
            self.history = []
            self.frozen = True

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.tried if self.tried else float("nan")


def curvature_sd(logpost: Callable[[np.ndarray], float], x0, default: float = 0.1) -> np.ndarray:
    """Diagonal proposal scale 2.38/sqrt(d) * (-d2 logpost / dx_j^2)^(-1/2) by central differences."""
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    f0 = logpost(x0)
    out = np.full(d, default)
    for j in range(d):
        h = 1e-3 * max(1.0, abs(x0[j]))
        e = np.zeros(d)
        e[j] = h
        curv = -(logpost(x0 + e) - 2 * f0 + logpost(x0 - e)) / h**2
        if np.isfinite(curv) and curv > 0:
            out[j] = 1.0 / np.sqrt(curv)
    return out * 2.38 / np.sqrt(d)


# -- likelihoods ------------------------------------------------------------------


def piecewise_loglik(model, w, event, X) -> float:
    """sum_i event_i * log lambda(w_i | x_i) - Lambda(w_i | x_i) for one cause."""
    lp = model.linear_predictor(X) if X is not None else np.zeros_like(w)
    lp = np.broadcast_to(lp, np.shape(w))
    with np.errstate(divide="ignore"):
        log_h = np.log(model.baseline_hazard(w)) + lp
    log_h = np.where(event > 0, log_h, 0.0)
    return float(np.sum(log_h) - np.sum(np.exp(lp) * model.baseline_cumhaz(w)))


def course_loglik(death_model, next_model, w, delta, X) -> float:
    """Competing-risks log-likelihood of course records; ``next_model`` is None at the last course."""
    ll = piecewise_loglik(death_model, w, (delta == DEATH).astype(float), X)
    if next_model is not None:
        ll += piecewise_loglik(next_model, w, (delta == NEXT).astype(float), X)
    return ll


# -- parameter draws ----------------------------------------------------------------


@dataclass
class CourseParams:
    k: int
    death: PiecewiseHazardModel | WeibullHazardModel
    next: PiecewiseHazardModel | WeibullHazardModel | None
    confounders: cf.ConfounderModel

    def to_dict(self) -> dict:
        d = {
            "k": self.k,
            "death": self.death.to_dict(),
            "next": None if self.next is None else self.next.to_dict(),
        }
        if self.k > 1:
            d["confounders"] = {n: m.to_dict() for n, m in self.confounders.submodels.items()}
        return d


@dataclass
class ParameterDraw:
    m: int
    schema: Schema
    courses: list[CourseParams]

    def __post_init__(self):
        K = self.schema.K
        if len(self.courses) != K:
            raise ValueError("one CourseParams per course required")
        if self.courses[-1].next is not None:
            raise ValueError("the last course has no next-treatment hazard")
        if any(c.next is None for c in self.courses[:-1]):
            raise ValueError("courses before K need a next-treatment hazard")

    @property
    def K(self) -> int:
        return self.schema.K

    @property
    def bootstrap(self) -> cf.BayesianBootstrap:
        return self.courses[0].confounders.bootstrap

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "bootstrap_weights": self.bootstrap.weights.tolist(),
            "courses": [c.to_dict() for c in self.courses],
        }

    @classmethod
    def from_dict(cls, d: dict, schema: Schema, baseline_rows: np.ndarray) -> "ParameterDraw":
        courses = []
        for c in d["courses"]:
            k = c["k"]
            if k == 1:
                conf = cf.ConfounderModel(1, bootstrap=cf.BayesianBootstrap(baseline_rows, np.asarray(d["bootstrap_weights"])))
            else:
                conf = cf.ConfounderModel(k, {n: cf.submodel_from_dict(s) for n, s in c["confounders"].items()})
            courses.append(
                CourseParams(
                    k,
                    hazard_from_dict(c["death"]),
                    None if c["next"] is None else hazard_from_dict(c["next"]),
                    conf,
                )
            )
        return cls(d["m"], schema, courses)


# -- blocks -----------------------------------------------------------------------


class _HazardBlock:
    """One cause-specific hazard at one course (rates or Weibull pair, plus coefficients)."""

    def __init__(self, cd: CourseData, cause: int, partition, star_rate: float, cfg: SamplerConfig, waits_all):
        self.cfg = cfg
        self.X = cd.hazard_design
        self.w = cd.w
        self.event = (cd.delta == cause).astype(float)
        self.n_events = float(self.event.sum())
        self.p = self.X.shape[1]
        self.beta = np.zeros(self.p)
        self.prior_sd = float(np.sqrt(cfg.beta_prior_var))
        self.lp = np.zeros(cd.n)
        self.xty = self.event @ self.X if cd.n else np.zeros(self.p)
        self.kind = cfg.hazard
        if self.kind == "piecewise":
            self.partition = partition
            self.prior = GammaProcessPrior(cfg.alpha, star_rate)
            self.rates = np.full(partition.n_intervals, star_rate)
            E, death, nxt = _exposures(cd.w, cd.delta, partition, cfg.tail)
            self.E = E
            self.counts = (death if cause == DEATH else nxt).sum(axis=0)
            self.cumbase = E @ self.rates
        else:
            self.log_w = np.log(cd.w) if cd.n else np.zeros(0)
            self.sum_log_w_events = float(self.event @ self.log_w) if cd.n else 0.0
            mean_w = float(np.mean(waits_all))
            self.scale_prior = (0.0, 1.0, np.log(mean_w), 2.0)  # (mu log a, sd, mu log s, sd)
            self.theta = np.array([0.0, np.log(1.0 / star_rate)])
            self._set_weibull_cumbase()
            self.theta_prop = AdaptiveProposal(
                self._theta_init_sd(), cfg.M_star, cfg.s_d, cfg.jitter, cfg.adapt_window
            )
        self.beta_prop = None
        if self.p:
            sd = cfg.initial_sd if cfg.initial_sd is not None else curvature_sd(self._beta_logpost, self.beta)
            self.beta_prop = AdaptiveProposal(
                np.broadcast_to(sd, (self.p,)), cfg.M_star, cfg.s_d, cfg.jitter, cfg.adapt_window
            )

    # Weibull helpers
    def _set_weibull_cumbase(self):
        a, s = np.exp(self.theta)
        self.cumbase = (self.w / s) ** a

    def _theta_logpost(self, theta):
        la, ls = theta
        a, s = np.exp(la), np.exp(ls)
        ll = self.n_events * (la - a * ls) + (a - 1) * self.sum_log_w_events + float(self.event @ self.lp)
        ll -= float(np.exp(self.lp) @ ((self.w / s) ** a))
        mu_a, sd_a, mu_s, sd_s = self.scale_prior
        return ll - 0.5 * ((la - mu_a) / sd_a) ** 2 - 0.5 * ((ls - mu_s) / sd_s) ** 2

    def _theta_init_sd(self):
        if self.cfg.initial_sd is not None:
            return np.full(2, self.cfg.initial_sd)
        return curvature_sd(self._theta_logpost, self.theta)

    def _beta_logpost(self, beta):
        lp = self.X @ beta
        return float(self.xty @ beta - np.exp(lp) @ self.cumbase) - 0.5 * float(beta @ beta) / self.prior_sd**2

    def update(self, m: int, rng: np.random.Generator) -> None:
        if self.kind == "piecewise":
            self.rates = gibbs_update_rates(self.E, self.counts, self.lp, self.prior, self.partition, rng)
            self.cumbase = self.E @ self.rates
        else:
            self.theta, _, acc = mh_step(
                self.theta, self._theta_logpost, self._theta_logpost(self.theta), self.theta_prop.chol, rng
            )
            self.theta_prop.after_step(m, self.theta, acc)
            self._set_weibull_cumbase()
        if self.p:
            self.beta, _, acc = mh_step(
                self.beta, self._beta_logpost, self._beta_logpost(self.beta), self.beta_prop.chol, rng
            )
            self.beta_prop.after_step(m, self.beta, acc)
            self.lp = self.X @ self.beta

    def model(self):
        if self.kind == "piecewise":
            return PiecewiseHazardModel(
                self.partition, self.rates.copy(), self.beta.copy(), self.prior, self.prior_sd, self.cfg.tail
            )
        a, s = np.exp(self.theta)
        return WeibullHazardModel(float(a), float(s), self.beta.copy(), self.prior_sd)

    def proposals(self):
        out = {}
        if self.beta_prop is not None:
            out["beta"] = self.beta_prop
        if self.kind == "weibull":
            out["weibull"] = self.theta_prop
        return out


class _ConfounderBlock:
    """Regression for one time-varying covariate at one course."""

    def __init__(self, family: str, Z: np.ndarray, y: np.ndarray, cfg: SamplerConfig):
        self.family = family
        self.Z = Z
        self.y = y
        if family == "beta":
            self.y = np.clip(y, cf.PROPORTION_EPS, 1 - cf.PROPORTION_EPS)
            self.log_y = np.log(self.y)
            self.log_1my = np.log1p(-self.y)
        self.eta = np.zeros(Z.shape[1])
        self.prior_sd = cfg.eta_prior_sd
        self.log_scale = 0.0
        if family == "beta":
            m, v = (float(self.y.mean()), float(self.y.var())) if y.size > 1 else (0.5, 0.02)
            phi0 = m * (1 - m) / v - 1 if v > 0 else 10.0
            self.log_scale = float(np.log(np.clip(phi0, 0.5, 1e4)))
        elif family == "gaussian":
            self.log_scale = float(np.log(np.sqrt(np.mean(y**2)))) if y.size and np.any(y != 0) else 0.0
        self.has_scale = family in ("beta", "gaussian")
        sd = cfg.initial_sd if cfg.initial_sd is not None else curvature_sd(self._eta_logpost, self.eta)
        self.eta_prop = AdaptiveProposal(
            np.broadcast_to(sd, self.eta.shape), cfg.M_star, cfg.s_d, cfg.jitter, cfg.adapt_window
        )
        if self.has_scale:
            sd = cfg.initial_sd if cfg.initial_sd is not None else curvature_sd(self._scale_logpost, [self.log_scale])
            self.scale_prop = AdaptiveProposal(sd, cfg.M_star, cfg.s_d, cfg.jitter, cfg.adapt_window)

    def _loglik(self, eta, log_scale) -> float:
        lin = self.Z @ eta
        if self.family == "logistic":
            return float(self.y @ lin - np.sum(np.logaddexp(0.0, lin)))
        s = np.exp(log_scale)
        if self.family == "gaussian":
            r = (self.y - lin) / s
            return float(-self.y.size * (0.5 * cf.LOG_2PI + log_scale) - 0.5 * r @ r)
        mu = cf.special.expit(lin)
        a, b = mu * s, (1 - mu) * s
        return float(
            np.sum(
                cf.special.gammaln(s) - cf.special.gammaln(a) - cf.special.gammaln(b)
                + (a - 1) * self.log_y + (b - 1) * self.log_1my
            )
        )

    def _eta_logpost(self, eta):
        return self._loglik(eta, self.log_scale) - 0.5 * float(eta @ eta) / self.prior_sd**2

    def _scale_logpost(self, ls):
        ls = float(np.asarray(ls).reshape(-1)[0])
        s = np.exp(ls)
        # Gamma(2, rate 0.1) prior on phi or sigma, with the log-scale Jacobian
        return self._loglik(self.eta, ls) + 2.0 * ls - 0.1 * s

    def update(self, m: int, rng: np.random.Generator) -> None:
        self.eta, _, acc = mh_step(self.eta, self._eta_logpost, self._eta_logpost(self.eta), self.eta_prop.chol, rng)
        self.eta_prop.after_step(m, self.eta, acc)
        if self.has_scale:
            x = np.array([self.log_scale])
            x, _, acc = mh_step(x, self._scale_logpost, self._scale_logpost(x), self.scale_prop.chol, rng)
            self.log_scale = float(x[0])
            self.scale_prop.after_step(m, x, acc)

    def submodel(self) -> cf.Submodel:
        if self.family == "beta":
            return cf.BetaRegression(self.eta.copy(), float(np.exp(self.log_scale)))
        if self.family == "gaussian":
            return cf.GaussianRegression(self.eta.copy(), float(np.exp(self.log_scale)))
        return cf.LogisticRegression(self.eta.copy())

    def proposals(self):
        out = {"eta": self.eta_prop}
        if self.has_scale:
            out["scale"] = self.scale_prop
        return out


def course_partition(cohort: Cohort, k: int, cfg: SamplerConfig) -> TimePartition:
    cd = cohort.course_data(k)
    waits = cd.w if cd.n else np.array([s.total_time for s in cohort.subjects])
    J1 = cfg.n_intervals or default_n_intervals(cohort.n)
    part = quantile_partition(waits, J1)
    return part.halved() if cfg.halve_partition else part


class Sampler:
    """Holds block state for one chain; :meth:`run` streams post-burn-in draws."""

    def __init__(self, cohort: Cohort, config: SamplerConfig):
        cohort = cohort.finalized()
        self.cohort = cohort
        self.config = config
        self.schema = cohort.schema
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        self.rows = cohort.baseline_rows()
        all_waits = np.array([c.waiting_time for s in cohort.subjects for c in s.courses])
        self.courses = []
        for k in range(1, cohort.K + 1):
            cd = cohort.course_data(k)
            waits = cd.w if cd.n else all_waits
            star = 1.0 / float(np.mean(waits))
            part = course_partition(cohort, k, config) if config.hazard == "piecewise" else None
            death = _HazardBlock(cd, DEATH, part, star, config, all_waits)
            nxt = _HazardBlock(cd, NEXT, part, star, config, all_waits) if k < cohort.K else None
            conf = {}
            if k > 1:
                Z = cf.with_intercept(cd.pre_history) if cd.n else np.zeros((0, 1 + cd.pre_history.shape[1]))
                for j, cov in enumerate(self.schema.varying):
                    fam = cf.FAMILY_FOR_KIND[cov.kind]
                    conf[cov.name] = _ConfounderBlock(fam, Z, cd.varying[:, j], config)
            self.courses.append((k, death, nxt, conf))
        for k, death, nxt, _ in self.courses:
            ll = course_loglik(death.model(), None if nxt is None else nxt.model(), death.w, cohort.course_data(k).delta, death.X)
            if not np.isfinite(ll):
                raise InitializationError(f"non-finite likelihood at initialization (course {k})")

    def sweep(self, m: int) -> None:
        for _, death, nxt, conf in self.courses:
            death.update(m, self.rng)
            if nxt is not None:
                nxt.update(m, self.rng)
            for block in conf.values():
                block.update(m, self.rng)

    def snapshot(self, m: int) -> ParameterDraw:
        weights = cf.bayesian_bootstrap_draw(self.cohort.n, self.rng)
        courses = []
        for k, death, nxt, conf in self.courses:
            if k == 1:
                cm = cf.ConfounderModel(1, bootstrap=cf.BayesianBootstrap(self.rows, weights))
            else:
                cm = cf.ConfounderModel(k, {n: b.submodel() for n, b in conf.items()})
            courses.append(CourseParams(k, death.model(), None if nxt is None else nxt.model(), cm))
        return ParameterDraw(m, self.schema, courses)

    def run(self) -> Iterator[ParameterDraw]:
        cfg = self.config
        for m in range(1, cfg.M + 1):
            self.sweep(m)
            if m > cfg.M_star and (m - cfg.M_star - 1) % cfg.thin == 0:
                yield self.snapshot(m)

    def proposals(self) -> dict[str, AdaptiveProposal]:
        out = {}
        for k, death, nxt, conf in self.courses:
            for name, p in death.proposals().items():
                out[f"course{k}.death.{name}"] = p
            if nxt is not None:
                for name, p in nxt.proposals().items():
                    out[f"course{k}.next.{name}"] = p
            for cov, b in conf.items():
                for name, p in b.proposals().items():
                    out[f"course{k}.{cov}.{name}"] = p
        return out

    def acceptance_rates(self) -> dict[str, float]:
        return {k: p.acceptance_rate for k, p in self.proposals().items()}


def run_sampler(cohort: Cohort, config: SamplerConfig, sink: Callable[[ParameterDraw], None] | None = None):
    """Run one chain. With ``sink`` the draws are streamed to it and None is returned."""
    sampler = Sampler(cohort, config)
    if sink is None:
        return list(sampler.run())
    for draw in sampler.run():
        sink(draw)
    return None


# -- draw files -----------------------------------------------------------------------


def meta_path(draws_path: str | os.PathLike) -> Path:
    return Path(str(draws_path) + ".meta.json")


def draws_meta(cohort: Cohort, config: SamplerConfig) -> dict:
    cohort = cohort.finalized()
    return {
        "schema": cohort.schema.to_kv(),
        "baseline_rows": cohort.baseline_rows().tolist(),
        "max_death_time": cohort.max_death_time(),
        "max_observed_time": max(s.total_time for s in cohort.subjects),
        "sampler": asdict(config),
    }


def draw_to_line(draw: ParameterDraw) -> str:
    return json.dumps(draw.to_dict(), separators=(",", ":")) + "\n"


def read_draws(path: str | os.PathLike) -> tuple[list[ParameterDraw], dict]:
    meta = json.loads(meta_path(path).read_text())
    schema = Schema.from_kv(meta["schema"])
    rows = np.asarray(meta["baseline_rows"], dtype=float).reshape(len(meta["baseline_rows"]), len(schema.covariates))
    draws = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                draws.append(ParameterDraw.from_dict(json.loads(line), schema, rows))
    return draws, meta
