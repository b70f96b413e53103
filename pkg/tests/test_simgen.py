import numpy as np
import pytest
from scipy import stats

from gpdtr import simgen
from gpdtr.data_model import export
from gpdtr.rules import BelowRule, fixed_rule
from oracles import two_course_survival


def null_design(K=1, **kw):
    zeros = {name: np.zeros(len(getattr(simgen.SimDesign(), name))) for name in
             ("l1_init", "l2_init", "l1_coef", "l2_coef", "treat_coef", "beta_next", "beta_death")}
    inf = np.full(4, np.inf)
    return simgen.SimDesign(K=K, censor_scale=inf, censor_shape=np.ones(4), **{**zeros, **kw})


def test_default_composition_targets():
    d = simgen.SimDesign()
    comps = [simgen.cohort_composition(simgen.generate_cohort(d, seed=s, n=1000)) for s in range(50)]
    assert np.mean([c["complete"] for c in comps]) == pytest.approx(0.60, abs=0.05)
    assert np.mean([c["death"] for c in comps]) == pytest.approx(0.40, abs=0.05)
    for t, target in zip((5.0, 10.0, 15.0, 20.0), (0.95, 0.85, 0.60, 0.02)):
        assert np.mean([c["at_risk"][t] for c in comps]) == pytest.approx(target, abs=0.05)


def test_consecutive_waits_positively_correlated():
    c = simgen.generate_cohort(simgen.SimDesign(), seed=3, n=1000)
    pairs = np.array([(s.courses[0].waiting_time, s.courses[1].waiting_time) for s in c.subjects if s.kappa >= 2])
    r, p = stats.pearsonr(pairs[:, 0], pairs[:, 1])
    assert r > 0 and p < 0.01


def test_null_design_gives_iid_weibull_deaths():
    d = null_design(K=1, shape_death=np.array([1.7, 1, 1, 1]), scale_death=np.array([3.0, 1, 1, 1]))
    c = simgen.generate_cohort(d, seed=4, n=100_000)
    w = np.array([s.total_time for s in c.subjects])
    assert all(s.died for s in c.subjects)
    shape, _, scale = stats.weibull_min.fit(w, floc=0)
    assert shape == pytest.approx(1.7, rel=0.02) and scale == pytest.approx(3.0, rel=0.02)


def test_seeded_cohort_bytes_identical(tmp_path):
    d = simgen.SimDesign()
    export(simgen.generate_cohort(d, seed=9, n=50), tmp_path / "a.csv")
    export(simgen.generate_cohort(d, seed=9, n=50), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_cohort_schema_carries_design_cutpoints():
    d = simgen.SimDesign()
    c = simgen.generate_cohort(d, seed=1, n=20)
    assert c.schema.wait_cutpoints == tuple(d.wait_cutpoints)
    assert c.schema.names == ["l1", "l2", "x1", "x2", "x3", "x4"]


def test_truth_examples():
    d = null_design(K=2, shape_next=np.ones(3), scale_next=np.array([1 / 0.9, 1, 1]),
                    shape_death=np.ones(4), scale_death=np.array([1 / 0.3, 1 / 0.5, 1, 1]))
    grid = np.array([0.0, 1.0, 2.5, 5.0])
    tr = simgen.true_survival(d, fixed_rule([1, 1]), grid, n_mc=1_000_000, seed=1)
    assert tr.psi[0] == 1.0
    ref = np.array([two_course_survival(t, 0.9, 0.3, 0.5) for t in grid])
    assert np.all(np.abs(tr.psi - ref) <= 3 * tr.se + 1e-12)


def test_truth_ignores_censoring():
    d = simgen.SimDesign()
    other = simgen.SimDesign(censor_scale=np.array([1.0, 2.0, 3.0, 4.0]), censor_shape=np.ones(4))
    rule = BelowRule("l1", 0.0)
    a = simgen.true_survival(d, rule, [5.0, 10.0], n_mc=20_000, seed=3)
    b = simgen.true_survival(other, rule, [5.0, 10.0], n_mc=20_000, seed=3)
    np.testing.assert_array_equal(a.psi, b.psi)


def test_design_file_round_trip(tmp_path):
    d = simgen.SimDesign(n=123, seed=5)
    d.write(tmp_path / "d.txt")
    again = simgen.SimDesign.read(tmp_path / "d.txt")
    assert again.to_kv() == d.to_kv()


def test_design_validation():
    from gpdtr._io import ConfigError

    with pytest.raises(ConfigError):
        simgen.SimDesign(n=0)
    with pytest.raises(ConfigError):
        simgen.SimDesign(shape_death=np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(ConfigError):
        simgen.SimDesign(beta_next=np.zeros(3))
    with pytest.raises(ConfigError):
        simgen.SimDesign.from_kv({"bogus": "1"})


def test_calibrate_near_time_zero_and_failure_count(monkeypatch):
    settings = simgen.CalibrationSettings(reps=2, t_points=(1e-6, 5.0), models=("gp", "weibull"), M=60, M_star=30,
                                          thin=3, B=300, n_truth=20_000, seed=1)
    real = simgen.mcmc.run_sampler

    def flaky(cohort, cfg, sink=None):
        if cfg.hazard == "weibull":
            raise RuntimeError("boom")
        return real(cohort, cfg, sink)

    monkeypatch.setattr(simgen.mcmc, "run_sampler", flaky)
    rep = simgen.calibrate(simgen.SimDesign(n=80), settings)
    assert rep.failures == {"gp": 0, "weibull": 2}
    gp0 = rep.row("gp", 1e-6)
    assert gp0["truth"] == 1.0 and gp0["bias_pct"] == pytest.approx(0.0, abs=1e-9)
    for row in rep.rows:
        if row["n_ok"]:
            assert 0 <= row["coverage_pct"] <= 100 and row["width"] >= 0
    assert np.isnan(rep.row("weibull", 5.0)["coverage_pct"])


def test_report_files_round_trip(tmp_path):
    settings = simgen.CalibrationSettings(reps=1, t_points=(5.0,), models=("gp",), M=40, M_star=20, thin=2, B=200,
                                          n_truth=10_000, seed=2)
    rep = simgen.calibrate(simgen.SimDesign(n=60), settings)
    simgen.write_report(rep, tmp_path / "t.csv")
    simgen.write_replicates(rep, tmp_path / "r.csv")
    rows = simgen.read_report(tmp_path / "t.csv")
    assert rows[0]["model"] == "gp" and rows[0]["t"] == 5.0 and rows[0]["n_ok"] == 1
