import sys

import numpy as np
import pytest
from hypothesis import settings

from gpdtr.data_model import Cohort, CourseRecord, Covariate, Schema, SubjectRecord

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def small_schema(K=4, lag="previous"):
    return Schema(
        (
            Covariate("ef", "proportion", True),
            Covariate("v", "binary", True),
            Covariate("age", "continuous", False),
        ),
        K,
        lag,
    )


def make_subject(sid, waits, deltas, efs=None, treatments=None, age=10.0, v=0.0):
    n = len(waits)
    efs = efs if efs is not None else [0.6] * n
    treatments = treatments if treatments is not None else [1] * n
    return SubjectRecord(
        sid,
        tuple(
            CourseRecord(sid, k + 1, (float(efs[k]), float(v), float(age)), int(treatments[k]), float(waits[k]), int(deltas[k]))
            for k in range(n)
        ),
    )


def random_cohort(rng, n=40, K=4, schema=None):
    """Valid random cohort over the small schema."""
    schema = schema or small_schema(K)
    subjects = []
    for i in range(n):
        kappa = int(rng.integers(1, K + 1))
        deltas = [-1] * (kappa - 1) + [int(rng.integers(0, 2))]
        waits = rng.gamma(2.0, 2.0, kappa) + 0.01
        efs = rng.uniform(0.3, 0.8, kappa)
        subjects.append(
            make_subject(f"p{i:03d}", waits, deltas, efs, rng.integers(0, 2, kappa), age=float(rng.normal(10, 3)), v=float(rng.integers(0, 2)))
        )
    return Cohort(tuple(subjects), schema)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
