"""Posterior g-computation of potential survival under treatment rules.

For every posterior draw, B trajectories are pushed through the course
sequence: confounders, decision, latent next-treatment and death times,
whichever comes first.  Uniform variates for a draw come from a stream keyed
on ``(seed, m)``, row b of which belongs to trajectory b; the same matrix is
reused for every rule evaluated on that draw.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mcmc import ParameterDraw
from .rules import DecisionRule, FeasibleSet, HistoryView, ThresholdRuleParams, apply_rule, threshold_rule

U_EPS = 1e-16


@dataclass
class GCompConfig:
    B: int = 10_000
    grid: np.ndarray = field(default_factory=lambda: np.arange(0.0, 1461.0, 30.0))
    s: float | None = None
    t_ref: float | None = None
    phi_covariate: str = "ef"
    phi_min_course: int = 2
    seed: int = 0
    feasible: FeasibleSet = field(default_factory=FeasibleSet)
    identifiable_horizon: float = np.inf
    workers: int = 1

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("time grid must be strictly ascending")


@dataclass
class Trajectories:
    death_time: np.ndarray  # (B,), inf when surviving past the model horizon
    kappa: np.ndarray  # courses initiated
    varying: np.ndarray  # (B, K, n_varying), NaN for courses not initiated
    treatments: np.ndarray  # (B, K), -1 for courses not initiated


@dataclass
class DrawEstimate:
    psi: np.ndarray
    phi: float
    utility: float


@dataclass
class GCompResult:
    rule: str
    grid: np.ndarray
    draw_ids: np.ndarray
    psi: np.ndarray  # (M, G)
    phi: np.ndarray  # (M,)
    utility: np.ndarray  # (M,)
    extrapolated: np.ndarray  # (G,) bool

    @property
    def n_draws(self) -> int:
        return self.psi.shape[0]


@dataclass
class Summary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray


@dataclass
class Contrast:
    kind: str
    values: np.ndarray  # (M, G), NaN where undefined
    undefined: np.ndarray  # (M, G) bool
    summary: Summary


@dataclass
class OptimalRulePosterior:
    cells: list
    values: np.ndarray  # (M, n_cells) objective per draw and cell
    argmax: np.ndarray  # (M,) cell index per draw
    n_ties: int  # draws whose maximum was shared by more than one cell
    pmf: np.ndarray
    mode: int
    credible_set: np.ndarray  # cell indices
    level: float


# -- simulation ---------------------------------------------------------------------


def n_uniforms(draw: ParameterDraw) -> int:
    n = 0
    for c in draw.courses:
        n += c.confounders.n_uniforms + 2
    return n


def draw_uniforms(draw: ParameterDraw, B: int, seed: int, m: int | None = None) -> np.ndarray:
    m = draw.m if m is None else m
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(m),))))
    return np.clip(rng.random((B, n_uniforms(draw))), U_EPS, 1 - U_EPS)


def simulate_from_uniforms(
    draw: ParameterDraw, rule: DecisionRule, u: np.ndarray, feasible: FeasibleSet | None = None
) -> Trajectories:
    feasible = feasible or FeasibleSet()
    schema = draw.schema
    K = schema.K
    B = u.shape[0]
    names = schema.names
    bidx = [names.index(c.name) for c in schema.baseline]
    vidx = [names.index(c.name) for c in schema.varying]
    nv = len(vidx)
    baseline = np.zeros((B, len(bidx)))
    varying = np.full((B, K, nv), np.nan)
    a = np.full((B, K), -1.0)
    w = np.full((B, K), np.nan)
    T = np.zeros(B)
    kappa = np.ones(B, dtype=int)
    elapsed = np.zeros(B)
    idx = np.arange(B)
    col = 0
    for k, course in enumerate(draw.courses, start=1):
        cm = course.confounders
        nu = cm.n_uniforms
        uk = u[idx, col : col + nu]
        u_next, u_death = u[idx, col + nu], u[idx, col + nu + 1]
        col += nu + 2
        if idx.size == 0:
            continue
        if k == 1:
            rows = cm.simulate_from_uniforms(None, uk)
            baseline[:] = rows[:, bidx]
            varying[:, 0, :] = rows[:, vidx]
        else:
            pre = schema.encode(k, baseline[idx], varying[idx], a[idx], w[idx], include_current=False)
            varying[idx, k - 1, :] = cm.simulate_from_uniforms(pre, uk)
        view_cov = {c.name: baseline[idx, j] for j, c in enumerate(schema.baseline)}
        view_cov.update({c.name: varying[idx, :k, j] for j, c in enumerate(schema.varying)})
        view = HistoryView(k, view_cov, a[idx, : k - 1], w[idx, : k - 1])
        d = apply_rule(rule, view, feasible, k)
        a[idx, k - 1] = d
        X = np.column_stack([schema.encode(k, baseline[idx], varying[idx], a[idx], w[idx]), d])
        w_death = course.death.sample(course.death.linear_predictor(X), u_death)
        if course.next is None:
            T[idx] = elapsed[idx] + w_death
            break
        w_next = course.next.sample(course.next.linear_predictor(X), u_next)
        dies = w_death < w_next
        T[idx[dies]] = elapsed[idx[dies]] + w_death[dies]
        go = idx[~dies]
        elapsed[go] += w_next[~dies]
        w[go, k - 1] = w_next[~dies]
        kappa[go] = k + 1
        idx = go
    return Trajectories(T, kappa, varying, a.astype(int))


def simulate_trajectory(draw: ParameterDraw, rule: DecisionRule, rng: np.random.Generator, B: int = 1, feasible=None):
    u = np.clip(rng.random((B, n_uniforms(draw))), U_EPS, 1 - U_EPS)
    return simulate_from_uniforms(draw, rule, u, feasible)


def _summaries(traj: Trajectories, draw: ParameterDraw, config: GCompConfig) -> DrawEstimate:
    psi = (traj.death_time[:, None] > config.grid[None, :]).mean(axis=0)
    phi = np.nan
    util = np.nan
    if config.s is not None:
        names = [c.name for c in draw.schema.varying]
        if config.phi_covariate not in names:
            raise ValueError(f"phi covariate {config.phi_covariate!r} is not time-varying in the schema")
        j = names.index(config.phi_covariate)
        vals = traj.varying[:, config.phi_min_course - 1 :, j]
        with np.errstate(invalid="ignore"):
            phi = float(np.any(vals < config.s, axis=1).mean())
    if config.t_ref is not None:
        surv_ref = float((traj.death_time > config.t_ref).mean())
        util = surv_ref - (phi if config.s is not None else 0.0)
    return DrawEstimate(psi, phi, util)


def estimate_survival(draw: ParameterDraw, rule: DecisionRule, config: GCompConfig, u: np.ndarray | None = None) -> DrawEstimate:
    if u is None:
        u = draw_uniforms(draw, config.B, config.seed)
    traj = simulate_from_uniforms(draw, rule, u, config.feasible)
    return _summaries(traj, draw, config)


def _one_draw(args):
    draw, rule, config = args
    return estimate_survival(draw, rule, config)


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def gcompute(draws: list[ParameterDraw], rule: DecisionRule, config: GCompConfig) -> GCompResult:
    ests = _map(_one_draw, [(d, rule, config) for d in draws], config.workers)
    return GCompResult(
        rule=rule.name,
        grid=config.grid.copy(),
        draw_ids=np.array([d.m for d in draws]),
        psi=np.array([e.psi for e in ests]).reshape(len(draws), config.grid.size),
        phi=np.array([e.phi for e in ests]),
        utility=np.array([e.utility for e in ests]),
        extrapolated=config.grid > config.identifiable_horizon,
    )


# -- posterior summaries -----------------------------------------------------------------


def posterior_summary(values, alpha: float = 0.05) -> Summary:
    """Pointwise mean and equal-tailed percentile interval (linear interpolation)."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] < 2:
        raise ValueError("need at least two draws")
    with warnings.catch_warnings():
        # columns that are undefined for every draw (ratio with zero denominators) stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        lo, hi = np.nanquantile(v, [alpha / 2, 1 - alpha / 2], axis=0, method="linear")
        return Summary(np.nanmean(v, axis=0), lo, hi, np.nanmedian(v, axis=0))


def contrast(res_r: GCompResult, res_r2: GCompResult, kind: str = "ratio", alpha: float = 0.05) -> Contrast:
    if res_r.psi.shape != res_r2.psi.shape or not np.array_equal(res_r.grid, res_r2.grid):
        raise ValueError("contrasted results must share draws and grid")
    if kind == "ratio":
        undefined = res_r2.psi == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(undefined, np.nan, res_r.psi / np.where(undefined, 1.0, res_r2.psi))
    elif kind == "difference":
        undefined = np.zeros(res_r.psi.shape, dtype=bool)
        vals = res_r.psi - res_r2.psi
    else:
        raise ValueError(f"unknown contrast {kind!r}")
    return Contrast(kind, vals, undefined, posterior_summary(vals, alpha))


def hdi_set(pmf, level: float) -> np.ndarray:
    """Cells above a plane lowered onto the pmf until ``level`` mass lies above it.

    Cells tied with the last included mass are all included.
    """
    pmf = np.asarray(pmf, dtype=float)
    if abs(pmf.sum() - 1.0) > 1e-9:
        raise ValueError("pmf must sum to 1")
    order = np.argsort(-pmf, kind="stable")
    cum = np.cumsum(pmf[order])
    n_in = int(np.searchsorted(cum, level - 1e-12, side="left")) + 1
    n_in = min(n_in, pmf.size)
    cut = pmf[order[n_in - 1]]
    chosen = np.flatnonzero(pmf >= cut) if cut > 0 else order[:n_in]
    return np.sort(chosen)


def _optimize_one(args):
    draw, rules, config, objective = args
    u = draw_uniforms(draw, config.B, config.seed)
    out = np.empty(len(rules))
    for i, rule in enumerate(rules):
        est = estimate_survival(draw, rule, config, u)
        out[i] = est.utility if objective == "utility" else est.psi[0]
    return out


def optimize_rule(
    draws: list[ParameterDraw],
    grid: list,
    config: GCompConfig,
    objective: str = "survival",
    level: float = 0.9,
    covariate: str = "ef",
) -> OptimalRulePosterior:
    """Per-draw exhaustive search over a rule grid with common random numbers."""
    if not grid:
        raise ValueError("empty rule grid")
    if objective not in ("survival", "utility"):
        raise ValueError(f"unknown objective {objective!r}")
    if config.t_ref is None:
        raise ValueError("t_ref is required for optimization")
    if objective == "utility" and config.s is None:
        raise ValueError("utility objective needs s")
    rules = [threshold_rule(g, covariate) if isinstance(g, ThresholdRuleParams) else g for g in grid]
    if objective == "survival":
        config = GCompConfig(**{**config.__dict__, "grid": np.array([config.t_ref])})
    values = np.array(_map(_optimize_one, [(d, rules, config, objective) for d in draws], config.workers))
    values = values.reshape(len(draws), len(rules))
    best = values.max(axis=1, keepdims=True)
    argmax = np.argmax(values, axis=1)  # first maximum: lowest grid index
    n_ties = int(np.sum((values == best).sum(axis=1) > 1))
    pmf = np.bincount(argmax, minlength=len(rules)) / len(draws)
    return OptimalRulePosterior(
        cells=list(grid),
        values=values,
        argmax=argmax,
        n_ties=n_ties,
        pmf=pmf,
        mode=int(np.argmax(pmf)),
        credible_set=hdi_set(pmf, level),
        level=level,
    )
