"""Synthetic multi-course cohorts with Weibull transition hazards, and a
replication harness that scores posterior estimates of potential survival
(bias, interval coverage, interval width) against Monte Carlo truth.

Generated cohorts carry two time-varying confounders (``l1`` continuous,
``l2`` binary) and four baseline confounders (``x1``, ``x2`` continuous,
``x3``, ``x4`` binary).  Every hazard multiplies a Weibull baseline by
``exp(x @ beta)`` on the same design the estimator uses: baseline, current
and previous time-varying values, previous treatment, previous waiting-time
category, current treatment.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import special

from . import gcomp, mcmc
from ._io import ConfigError, atomic_open, format_kv, parse_floats, read_kv_file
from .data_model import CENSORED, DEATH, NEXT, Cohort, CourseRecord, Covariate, Schema, SubjectRecord
from .rules import BelowRule, DecisionRule, FeasibleSet, HistoryView, apply_rule

log = logging.getLogger(__name__)

COVARIATES = (
    Covariate("l1", "continuous", True),
    Covariate("l2", "binary", True),
    Covariate("x1", "continuous", False),
    Covariate("x2", "continuous", False),
    Covariate("x3", "binary", False),
    Covariate("x4", "binary", False),
)
# hazard design: x1..x4, l1_k, l2_k, l1_{k-1}, l2_{k-1}, a_{k-1}, wcat2..4_{k-1}, a_k
N_HAZARD = 13
# confounder design: 1, x1..x4, l1_{k-1}, l2_{k-1}, a_{k-1}, wcat2..4_{k-1}
N_CONF = 11
# treatment design: 1, x1..x4, l1_k, l2_k, l1_{k-1}, l2_{k-1}, a_{k-1}
N_TREAT = 10


def _arr(*v):
    return field(default_factory=lambda: np.array(v, dtype=float))


@dataclass
class SimDesign:
    """All generating constants. Defaults are calibration targets chosen to
    mimic the cohort composition described for the application, not
    published constants."""

    n: int = 300
    K: int = 4
    seed: int = 0
    wait_cutpoints: np.ndarray = _arr(4.0, 4.4, 4.8)
    baseline_binary_p: np.ndarray = _arr(0.5, 0.3)
    # course-1 time-varying confounders: 1, x1..x4
    l1_init: np.ndarray = _arr(0.0, 0.3, -0.2, 0.2, 0.0)
    l2_init: np.ndarray = _arr(-1.5, 0.2, 0.0, 0.3, 0.2)
    l1_sigma: float = 0.8
    l1_coef: np.ndarray = _arr(0.0, 0.2, -0.1, 0.1, 0.0, 0.5, 0.2, 0.3, 0.0, 0.1, 0.2)
    l2_coef: np.ndarray = _arr(-1.8, 0.1, 0.0, 0.2, 0.1, 0.3, 0.8, -0.3, 0.0, 0.1, 0.2)
    treat_coef: np.ndarray = _arr(0.2, 0.2, 0.1, -0.2, 0.0, -0.6, -0.4, -0.2, 0.0, 0.8)
    beta_next: np.ndarray = _arr(0.05, 0.0, -0.1, 0.0, -0.1, -0.1, 0.0, 0.0, 0.1, -0.4, -0.8, -1.2, 0.1)
    beta_death: np.ndarray = _arr(0.2, 0.1, 0.2, 0.1, 0.3, 0.3, 0.1, 0.0, 0.0, 0.2, 0.4, 0.6, -0.4)
    shape_next: np.ndarray = _arr(8.0, 8.0, 8.0)
    scale_next: np.ndarray = _arr(4.6, 4.6, 4.6)
    shape_death: np.ndarray = _arr(1.0, 1.0, 3.0, 5.0)
    scale_death: np.ndarray = _arr(300.0, 110.0, 11.0, 5.4)
    censor_shape: np.ndarray = _arr(1.0, 1.0, 3.0, 5.0)
    censor_scale: np.ndarray = _arr(250.0, 150.0, 9.0, 4.0)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (list, tuple)):
                setattr(self, f.name, np.asarray(v, dtype=float))
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        for name in ("shape_next", "scale_next"):
            if self.K > 1 and len(getattr(self, name)) < self.K - 1:
                raise ConfigError(f"{name} needs {self.K - 1} values")
        for name in ("shape_death", "scale_death", "censor_shape", "censor_scale"):
            if len(getattr(self, name)) < self.K:
                raise ConfigError(f"{name} needs {self.K} values")
        positive = np.concatenate(
            [self.shape_next, self.scale_next, self.shape_death, self.scale_death, self.censor_shape, self.censor_scale]
        )
        if np.any(~(positive > 0)):
            raise ConfigError("Weibull shapes and scales must be positive (scale may be inf)")
        lengths = {
            "l1_init": 5, "l2_init": 5, "l1_coef": N_CONF, "l2_coef": N_CONF,
            "treat_coef": N_TREAT, "beta_next": N_HAZARD, "beta_death": N_HAZARD,
        }
        for name, size in lengths.items():
            if len(getattr(self, name)) != size:
                raise ConfigError(f"{name} needs {size} values")

    @property
    def schema(self) -> Schema:
        """Estimation schema; cutpoints fixed to the generating ones."""
        return Schema(COVARIATES, self.K, "previous", tuple(float(v) for v in self.wait_cutpoints))

    @property
    def raw_schema(self) -> Schema:
        cont = tuple((c.name, 0.0, 1.0) for c in COVARIATES if c.kind == "continuous")
        return replace(self.schema, standardize=cont)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ", ".join(repr(float(x)) for x in v) if isinstance(v, np.ndarray) else repr(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "SimDesign":
        kinds = {f.name: f for f in fields(cls)}
        args = {}
        for key, raw in kv.items():
            if key not in kinds:
                raise ConfigError(f"unknown design key {key!r}")
            t = str(kinds[key].type)
            if "ndarray" in t:
                args[key] = np.array(parse_floats(raw))
            elif t == "int":
                args[key] = int(raw)
            else:
                args[key] = float(raw)
        return cls(**args)

    @classmethod
    def read(cls, path) -> "SimDesign":
        return cls.from_kv(read_kv_file(path))

    def write(self, path) -> None:
        with atomic_open(path) as fh:
            fh.write("# synthetic cohort design; see gpdtr.simgen.SimDesign\n")
            fh.write(format_kv(self.to_kv()))


def _weibull(rng, lp, shape, scale, size):
    if not np.isfinite(scale):
        return np.full(size, np.inf)
    e = rng.standard_exponential(size)
    return scale * (e * np.exp(-lp)) ** (1.0 / shape)


@dataclass
class _Paths:
    baseline: np.ndarray
    varying: np.ndarray
    a: np.ndarray
    w: np.ndarray
    delta: np.ndarray
    kappa: np.ndarray
    death_time: np.ndarray


def _simulate(design: SimDesign, n: int, rng: np.random.Generator, rule: DecisionRule | None, censor: bool) -> _Paths:
    """Vectorized forward simulation. With ``rule`` treatment follows the rule
    (potential-outcome world); otherwise the logistic assignment model."""
    K = design.K
    raw = design.raw_schema
    x12 = rng.standard_normal((n, 2))
    x34 = (rng.random((n, 2)) < design.baseline_binary_p).astype(float)
    base = np.column_stack([x12, x34])
    varying = np.full((n, K, 2), np.nan)
    a = np.full((n, K), -1.0)
    w = np.full((n, K), np.nan)
    delta = np.full((n, K), 99, dtype=int)
    T = np.full(n, np.inf)
    kappa = np.ones(n, dtype=int)
    elapsed = np.zeros(n)
    idx = np.arange(n)
    feasible = FeasibleSet()
    for k in range(1, K + 1):
        m = idx.size
        if m == 0:
            break
        if k == 1:
            z = np.column_stack([np.ones(m), base[idx]])
            l1 = z @ design.l1_init + design.l1_sigma * rng.standard_normal(m)
            l2 = (rng.random(m) < special.expit(z @ design.l2_init)).astype(float)
        else:
            z = np.column_stack([np.ones(m), raw.encode(k, base[idx], varying[idx], a[idx], w[idx], include_current=False)])
            l1 = z @ design.l1_coef + design.l1_sigma * rng.standard_normal(m)
            l2 = (rng.random(m) < special.expit(z @ design.l2_coef)).astype(float)
        varying[idx, k - 1, 0] = l1
        varying[idx, k - 1, 1] = l2
        if rule is None:
            prev = varying[idx, k - 2] if k > 1 else np.zeros((m, 2))
            aprev = a[idx, k - 2] if k > 1 else np.zeros(m)
            zt = np.column_stack([np.ones(m), base[idx], l1, l2, prev, aprev])
            d = (rng.random(m) < special.expit(zt @ design.treat_coef)).astype(float)
        else:
            cov = {"x1": base[idx, 0], "x2": base[idx, 1], "x3": base[idx, 2], "x4": base[idx, 3]}
            cov.update({"l1": varying[idx, :k, 0], "l2": varying[idx, :k, 1]})
            d = apply_rule(rule, HistoryView(k, cov, a[idx, : k - 1], w[idx, : k - 1]), feasible, k).astype(float)
        a[idx, k - 1] = d
        H = raw.encode(k, base[idx], varying[idx], a[idx], w[idx])
        X = _pad_design(H, d, k)
        w_death = _weibull(rng, X @ design.beta_death, design.shape_death[k - 1], design.scale_death[k - 1], m)
        w_next = (
            _weibull(rng, X @ design.beta_next, design.shape_next[k - 1], design.scale_next[k - 1], m)
            if k < K
            else np.full(m, np.inf)
        )
        w_cens = (
            _weibull(rng, 0.0, design.censor_shape[k - 1], design.censor_scale[k - 1], m) if censor else np.full(m, np.inf)
        )
        wk = np.minimum(np.minimum(w_death, w_next), w_cens)
        dk = np.where(w_death == wk, DEATH, np.where(w_next == wk, NEXT, CENSORED))
        w[idx, k - 1] = wk
        delta[idx, k - 1] = dk
        died = dk == DEATH
        T[idx[died]] = elapsed[idx[died]] + wk[died]
        go = dk == NEXT
        elapsed[idx] += wk
        kappa[idx[go]] = k + 1
        idx = idx[go]
    return _Paths(base, varying, a, w, delta, kappa, T)


def _pad_design(H: np.ndarray, d: np.ndarray, k: int) -> np.ndarray:
    """Course-1 history lacks lagged terms; zero-fill them so one beta fits all courses."""
    m = H.shape[0]
    if k == 1:
        H = np.column_stack([H, np.zeros((m, N_HAZARD - 1 - H.shape[1]))])
    return np.column_stack([H, d])


def generate_cohort(design: SimDesign, seed: int | None = None, n: int | None = None) -> Cohort:
    n = design.n if n is None else n
    rng = np.random.Generator(np.random.PCG64(design.seed if seed is None else seed))
    p = _simulate(design, n, rng, rule=None, censor=True)
    subjects = []
    width = len(str(n))
    for i in range(n):
        sid = f"s{i + 1:0{width}d}"
        courses = []
        for k in range(1, p.kappa[i] + 1):
            covs = (p.varying[i, k - 1, 0], p.varying[i, k - 1, 1], *p.baseline[i])
            courses.append(
                CourseRecord(sid, k, tuple(float(c) for c in covs), int(p.a[i, k - 1]), float(p.w[i, k - 1]), int(p.delta[i, k - 1]))
            )
        subjects.append(SubjectRecord(sid, tuple(courses)))
    return Cohort(tuple(subjects), design.schema)


@dataclass
class TruthCurve:
    grid: np.ndarray
    psi: np.ndarray
    se: np.ndarray
    n_mc: int


def true_survival(design: SimDesign, rule: DecisionRule, grid, n_mc: int = 1_000_000, seed: int = 12345, chunk: int = 200_000) -> TruthCurve:
    """Potential survival under ``rule`` by direct simulation of the design, censoring off."""
    grid = np.asarray(grid, dtype=float)
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = np.zeros(grid.size)
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        p = _simulate(design, m, rng, rule=rule, censor=False)
        counts += (p.death_time[:, None] > grid[None, :]).sum(axis=0)
        done += m
    psi = counts / n_mc
    return TruthCurve(grid, psi, np.sqrt(psi * (1 - psi) / n_mc), n_mc)


def cohort_composition(cohort: Cohort, times=(5.0, 10.0, 15.0, 20.0)) -> dict:
    total = np.array([s.total_time for s in cohort.subjects])
    return {
        "complete": float(np.mean([s.kappa == cohort.K for s in cohort.subjects])),
        "death": float(np.mean([s.died for s in cohort.subjects])),
        "at_risk": {t: float(np.mean(total > t)) for t in times},
    }


# -- calibration -------------------------------------------------------------------------

MODELS = {
    "gp": dict(hazard="piecewise"),
    "gp_half": dict(hazard="piecewise", halve_partition=True),
    "weibull": dict(hazard="weibull"),
}


@dataclass
class CalibrationSettings:
    reps: int = 100
    t_points: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)
    models: tuple[str, ...] = ("gp", "weibull")
    M: int = 4000
    M_star: int = 2000
    thin: int = 10
    B: int = 5000
    level: float = 0.95
    n_truth: int = 1_000_000
    seed: int = 2024
    workers: int = 1


@dataclass
class CalibrationReport:
    rows: list[dict]
    replicates: list[dict]
    truth: dict[float, float]
    truth_se: dict[float, float]
    truth_method: str
    n_reps: int
    failures: dict[str, int]

    def row(self, model: str, t: float) -> dict:
        for r in self.rows:
            if r["model"] == model and r["t"] == t:
                return r
        raise KeyError((model, t))


def _calibration_rule() -> DecisionRule:
    return BelowRule("l1", 0.0)


def _one_replicate(args) -> list[dict]:
    design, settings, r = args
    seed_seq = np.random.SeedSequence(settings.seed, spawn_key=(r,))
    cohort_seed, fit_seed, g_seed = (int(s.generate_state(1)[0]) for s in seed_seq.spawn(3))
    cohort = generate_cohort(design, seed=cohort_seed).finalized()
    rule = _calibration_rule()
    grid = np.asarray(settings.t_points, dtype=float)
    out = []
    for model in settings.models:
        cfg = mcmc.SamplerConfig(M=settings.M, M_star=settings.M_star, thin=settings.thin, seed=fit_seed, **MODELS[model])
        row = {"rep": r, "model": model}
        try:
            draws = mcmc.run_sampler(cohort, cfg)
            res = gcomp.gcompute(draws, rule, gcomp.GCompConfig(B=settings.B, grid=grid, seed=g_seed))
            summ = gcomp.posterior_summary(res.psi, 1 - settings.level)
            for j, t in enumerate(grid):
                row[f"mean_{t:g}"] = float(summ.mean[j])
                row[f"lower_{t:g}"] = float(summ.lower[j])
                row[f"upper_{t:g}"] = float(summ.upper[j])
            row["ok"] = True
        except Exception as exc:  # replicate failures are counted, not fatal
            log.warning("replicate %d model %s failed: %s", r, model, exc)
            row["ok"] = False
            row["error"] = str(exc)
        out.append(row)
    return out


def calibrate(design: SimDesign, settings: CalibrationSettings, truth: TruthCurve | None = None, progress=None) -> CalibrationReport:
    """Replicate generate -> fit -> g-compute and score against Monte Carlo truth."""
    if settings.reps < 1:
        raise ValueError("reps must be >= 1")
    unknown = set(settings.models) - set(MODELS)
    if unknown:
        raise ConfigError(f"unknown models {sorted(unknown)}")
    grid = np.asarray(settings.t_points, dtype=float)
    if truth is None:
        truth = true_survival(design, _calibration_rule(), grid, settings.n_truth, seed=settings.seed)
    jobs = [(design, settings, r) for r in range(settings.reps)]
    reps: list[dict] = []
    if settings.workers <= 1:
        for i, job in enumerate(jobs):
            reps.extend(_one_replicate(job))
            if progress:
                progress(i + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=settings.workers) as ex:
            for i, res in enumerate(ex.map(_one_replicate, jobs)):
                reps.extend(res)
                if progress:
                    progress(i + 1, len(jobs))
    rows = []
    failures = {}
    for model in settings.models:
        ok = [r for r in reps if r["model"] == model and r["ok"]]
        failures[model] = sum(1 for r in reps if r["model"] == model and not r["ok"])
        for j, t in enumerate(grid):
            tv = float(truth.psi[j])
            if not ok:
                rows.append({"model": model, "t": float(t), "truth": tv, "bias_pct": math.nan, "coverage_pct": math.nan, "width": math.nan, "n_ok": 0})
                continue
            means = np.array([r[f"mean_{t:g}"] for r in ok])
            lo = np.array([r[f"lower_{t:g}"] for r in ok])
            hi = np.array([r[f"upper_{t:g}"] for r in ok])
            rows.append(
                {
                    "model": model,
                    "t": float(t),
                    "truth": tv,
                    "bias_pct": float(abs(means.mean() - tv) / tv * 100) if tv > 0 else math.nan,
                    "coverage_pct": float(np.mean((lo <= tv) & (tv <= hi)) * 100),
                    "width": float(np.mean(hi - lo)),
                    "n_ok": len(ok),
                }
            )
    return CalibrationReport(
        rows=rows,
        replicates=reps,
        truth={float(t): float(v) for t, v in zip(grid, truth.psi)},
        truth_se={float(t): float(v) for t, v in zip(grid, truth.se)},
        truth_method=f"direct simulation of the design under the rule without censoring, n_mc={truth.n_mc}",
        n_reps=settings.reps,
        failures=failures,
    )


REPORT_FIELDS = ("model", "t", "truth", "bias_pct", "coverage_pct", "width", "n_ok")


def write_report(report: CalibrationReport, path) -> None:
    with atomic_open(path) as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in report.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_replicates(report: CalibrationReport, path) -> None:
    keys = []
    for r in report.replicates:
        for k in r:
            if k not in keys:
                keys.append(k)
    with atomic_open(path) as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in report.replicates:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("t", "truth", "bias_pct", "coverage_pct", "width"):
            r[k] = float(r[k])
        r["n_ok"] = int(r["n_ok"])
    return rows
