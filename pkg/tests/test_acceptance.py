"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed at the end of the pytest
session (and when this file is run directly with python). Criteria 5 and 6
read the recorded calibration table in results/ produced by
scripts/run_calibration.py; set GPDTR_FULL_ACCEPTANCE=1 to recompute it live
(about 40 minutes on one core).
"""

import hashlib
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent))

from gpdtr import cli, gcomp, mcmc, simgen
from gpdtr.hazards import GammaProcessPrior, PiecewiseHazardModel, TimePartition, quantile_partition, sample_waiting_time, survival
from gpdtr.rules import fixed_rule
from oracles import (
    batch_means_se,
    conjugate_rate_posterior,
    constant_hazard_draw,
    exponential_cohort,
    gamma_increment_logpdf,
    rw_metropolis,
    two_course_survival,
)

ROOT = Path(__file__).resolve().parents[1]
CALIBRATION = ROOT / "results" / "calibration.csv"
TAIL_T = 20.0
RESULTS: dict[int, str] = {}


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    return ok


def test_criterion_1_conjugate_rate_posterior():
    start = time.time()
    cohort = exponential_cohort(20, 0.7, seed=11)
    cfg = mcmc.SamplerConfig(M=22000, M_star=2000, n_intervals=1, seed=1)
    rates = np.array([d.courses[0].death.rates[0] for d in mcmc.run_sampler(cohort, cfg)])
    w = np.array([s.total_time for s in cohort.subjects])
    d = np.array([s.died for s in cohort.subjects], dtype=float)
    shape, rate = conjugate_rate_posterior(w, d, cfg.alpha, 1 / w.mean(), w.max())
    mean_ref, var_ref = shape / rate, shape / rate**2
    mean_err = abs(rates.mean() - mean_ref) / batch_means_se(rates)
    var_err = abs(rates.var() - var_ref) / batch_means_se((rates - rates.mean()) ** 2)
    elapsed = time.time() - start
    ok = mean_err < 3 and var_err < 3 and elapsed < 60
    assert record(1, ok, f"mean off by {mean_err:.2f} SE, variance off by {var_err:.2f} SE, {elapsed:.1f} s")


def _three_interval_data():
    cohort = exponential_cohort(20, 0.5, seed=21).finalized()
    waits = np.array([s.total_time for s in cohort.subjects])
    part = quantile_partition(waits, 3)
    ex = mcmc.risk_set_exposures(cohort, 1, part)
    return part, ex, GammaProcessPrior(0.01, 1 / waits.mean())


def test_criterion_2_gibbs_matches_all_mh():
    start = time.time()
    part, ex, prior = _three_interval_data()
    n = 10_000
    rng = np.random.default_rng(5)
    R = ex.exposure.sum(axis=0)
    D = ex.death_counts.astype(float)
    gibbs = np.array([mcmc.gibbs_update_rates(ex.exposure, D, 0.0, prior, part, rng) for _ in range(n)])

    shapes = prior.alpha * prior.star_rate * part.widths

    def logpost(log_rate):
        lam = np.exp(log_rate)
        theta = lam * part.widths
        prior_term = gamma_increment_logpdf(theta, shapes, prior.alpha).sum() + log_rate.sum()
        return prior_term + float(D @ log_rate - lam @ R)

    thin = 25
    cov = 2.38**2 / 3 * np.diag(1 / np.maximum(D, 1))
    chain = rw_metropolis(logpost, np.log(np.maximum(D, 1) / R), cov, 2000 + n * thin, rng)
    mh = np.exp(chain[2000::thin])
    ks = [stats.ks_2samp(gibbs[:, j], mh[:, j]).statistic for j in range(3)]
    elapsed = time.time() - start
    ok = max(ks) < 0.05 and elapsed < 300
    assert record(2, ok, f"KS per rate {', '.join(f'{v:.3f}' for v in ks)}, {elapsed:.1f} s")


def test_criterion_3_inverse_cdf_sampler():
    start = time.time()
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(5):
        J = int(rng.integers(2, 8))
        knots = np.concatenate([[0.0], np.cumsum(rng.uniform(0.2, 2.0, J - 1))])
        m = PiecewiseHazardModel(TimePartition(knots), rng.uniform(0.1, 2.0, J - 1), rng.normal(size=2))
        h = rng.normal(size=2)
        w = sample_waiting_time(m, h, rng.uniform(size=100_000))
        grid = np.linspace(0, knots[-1] * 1.5, 500)
        emp = (w[None, :] > grid[:, None]).mean(axis=1)
        worst = max(worst, float(np.max(np.abs(emp - survival(m, grid, h)))))
    elapsed = time.time() - start
    assert record(3, worst < 0.01 and elapsed < 60, f"max sup-norm {worst:.4f} over 5 models, {elapsed:.1f} s")


def test_criterion_4_gcomputation_vs_quadrature():
    start = time.time()
    lam = (0.9, 0.3, 0.5)
    draw = constant_hazard_draw(2, [lam[1], lam[2]], [lam[0]])
    grid = np.linspace(0.5, 9.0, 10)
    est = gcomp.estimate_survival(draw, fixed_rule([1, 1]), gcomp.GCompConfig(B=100_000, grid=grid, seed=41))
    ref = np.array([two_course_survival(t, *lam) for t in grid])
    err = float(np.max(np.abs(est.psi - ref)))
    elapsed = time.time() - start
    assert record(4, err < 0.01 and elapsed < 120, f"max |error| {err:.4f} at 10 points, {elapsed:.1f} s")


@pytest.fixture(scope="module")
def calibration_rows(tmp_path_factory):
    if os.environ.get("GPDTR_FULL_ACCEPTANCE") == "1":
        out = tmp_path_factory.mktemp("cal") / "calibration.csv"
        sys.path.insert(0, str(ROOT / "scripts"))
        import run_calibration

        assert run_calibration.main(["--out", str(out)]) == 0
        return simgen.read_report(out)
    if not CALIBRATION.exists():
        pytest.fail(f"missing {CALIBRATION}; run scripts/run_calibration.py")
    return simgen.read_report(CALIBRATION)


def _row(rows, model, t):
    return next(r for r in rows if r["model"] == model and r["t"] == t)


def test_criterion_5_calibration(calibration_rows):
    parts, ok = [], True
    for t in (5.0, 10.0):
        r = _row(calibration_rows, "gp", t)
        good = r["bias_pct"] < 2 and 88 <= r["coverage_pct"] <= 99 and r["n_ok"] == 100
        ok &= good
        parts.append(f"t={t:g} bias {r['bias_pct']:.2f}% cov {r['coverage_pct']:.0f}%")
    tail = _row(calibration_rows, "gp", TAIL_T)
    ok &= tail["coverage_pct"] < 60
    parts.append(f"tail t={TAIL_T:g} cov {tail['coverage_pct']:.0f}% (needs < 60)")
    assert record(5, ok, "; ".join(parts))


def test_criterion_6_partition_sensitivity(calibration_rows):
    parts, ok = [], True
    for t in (5.0, 10.0):
        full, half = _row(calibration_rows, "gp", t), _row(calibration_rows, "gp_half", t)
        shift = abs(half["bias_pct"] - full["bias_pct"])
        ok &= shift < 1.5 and half["coverage_pct"] >= 88
        parts.append(f"t={t:g} bias shift {shift:.2f} pts, halved cov {half['coverage_pct']:.0f}%")
    assert record(6, ok, "; ".join(parts))


def _digest(paths):
    return {Path(p).name: hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in paths}


def test_criterion_7_determinism_across_workers(tmp_path):
    start = time.time()
    digests = []
    for threads in (1, 3):
        d = tmp_path / f"w{threads}"
        d.mkdir()
        common = ["--seed", "13", "--threads", str(threads)]
        runs = [
            ["simulate", "--n", "60", "--out", str(d / "c.csv")],
            ["fit", "--cohort", str(d / "c.csv"), "--schema", str(d / "c.csv.schema"), "--M", "300", "--M-star", "150",
             "--thin", "15", "--out", str(d / "draws.ndjson")],
            ["gcompute", "--draws", str(d / "draws.ndjson"), "--rule", "below(l1,0)", "--versus", "fixed(1,1,1,1)",
             "--grid-t", "0:20:5", "--B", "300", "--out", str(d / "g.csv")],
            ["optimize", "--draws", str(d / "draws.ndjson"), "--t-ref", "10", "--covariate", "l1", "--tau1", "0,-0.5",
             "--tau2", "0.4,0.8", "--B", "200", "--out", str(d / "o.csv")],
            ["calibrate", "--reps", "2", "--n", "60", "--models", "gp,weibull", "--t", "5,10", "--M", "120",
             "--M-star", "60", "--thin", "6", "--B", "200", "--n-truth", "20000", "--out", str(d / "cal.csv")],
        ]
        for args in runs:
            assert cli.main(args + common, env={}) == 0
        digests.append(_digest(p for p in d.iterdir() if not p.name.endswith(".manifest.json")))
    same = digests[0] == digests[1]
    elapsed = time.time() - start
    assert record(7, same, f"{len(digests[0])} output files byte-identical with 1 and 3 workers, {elapsed:.1f} s")


def test_criterion_8_real_cohort_not_reproducible():
    record(8, True, "documented only: the clinical cohort is not available, so its figures are not tested")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
