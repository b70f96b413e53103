import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_subject, random_cohort, small_schema
from gpdtr.data_model import (
    Cohort,
    ParseError,
    Schema,
    ValidationError,
    encode_waiting_time,
    export,
    history,
    ingest,
)

HEADER = "subject_id,k,a,w,delta,ef,v,age\n"


def write(tmp_path, body, header=HEADER):
    p = tmp_path / "c.csv"
    p.write_text(header + body)
    return p


def test_ingest_three_courses(tmp_path):
    p = write(tmp_path, "s1,1,1,10,-1,0.6,0,5\ns1,2,0,12,-1,0.55,1,5\ns1,3,0,3.5,1,0.5,0,5\n")
    c = ingest(p, small_schema())
    assert len(c.subjects) == 1
    assert c.subjects[0].kappa == 3
    assert c.subjects[0].died


def test_trailing_next_treatment_is_invalid(tmp_path):
    p = write(tmp_path, "s1,1,1,10,-1,0.6,0,5\ns1,2,0,12,-1,0.55,1,5\n")
    with pytest.raises(ValidationError, match="delta=-1"):
        ingest(p, small_schema())


def test_zero_wait_rejected(tmp_path):
    p = write(tmp_path, "s1,1,1,0,1,0.6,0,5\n")
    with pytest.raises(ValidationError, match="nonpositive waiting time"):
        ingest(p, small_schema())


def test_duplicate_course_rejected(tmp_path):
    p = write(tmp_path, "s1,1,1,1,-1,0.6,0,5\ns1,1,1,1,1,0.6,0,5\n")
    with pytest.raises(ValidationError, match="duplicate"):
        ingest(p, small_schema())


def test_malformed_row_names_line(tmp_path):
    p = write(tmp_path, "s1,1,1,1,-1,0.6,0,5\ns1,2,1,abc,1,0.6,0,5\n")
    with pytest.raises(ParseError, match=":3:"):
        ingest(p, small_schema())


def test_header_mismatch(tmp_path):
    p = write(tmp_path, "s1,1,1,1,1,0.6,0,5\n", header="subject_id,k,a,w,delta,ef,age,v\n")
    with pytest.raises(ParseError, match="header"):
        ingest(p, small_schema())


@pytest.mark.parametrize(
    "body, msg",
    [
        ("s1,2,1,1,1,0.6,0,5\n", "contiguous"),
        ("s1,1,2,1,1,0.6,0,5\n", "treatment"),
        ("s1,1,1,1,1,1.6,0,5\n", "proportion"),
        ("s1,1,1,1,1,0.6,0.5,5\n", "binary"),
        ("s1,1,1,1,-1,0.6,0,5\ns1,2,1,1,1,0.6,0,6\n", "baseline covariate"),
        ("s1,1,1,1,1,0.6,0,5\ns1,2,1,1,1,0.6,0,5\n", "non-final"),
    ],
)
def test_validation_rules(tmp_path, body, msg):
    with pytest.raises(ValidationError, match=msg):
        ingest(write(tmp_path, body), small_schema())


def test_more_courses_than_K(tmp_path):
    body = "".join(f"s1,{k},1,1,-1,0.6,0,5\n" for k in (1, 2)) + "s1,3,1,1,1,0.6,0,5\n"
    with pytest.raises(ValidationError, match="exceeds K"):
        ingest(write(tmp_path, body), small_schema(K=2))


@pytest.mark.parametrize("w, level", [(10, 1), (35, 2), (100, 4), (20, 1), (20.0001, 2), (50, 3)])
def test_encode_waiting_time(w, level):
    assert encode_waiting_time(w, (20, 35, 50)) == level


def test_encode_waiting_time_needs_ascending():
    with pytest.raises(ValueError):
        encode_waiting_time(1.0, (3, 2, 4))


def test_history_course1_has_no_lags():
    schema = Schema(small_schema().covariates, 4, wait_cutpoints=(1, 2, 3))
    s = make_subject("a", [1.5, 2.5, 1.0], [-1, -1, 0], efs=[0.6, 0.5, 0.4], treatments=[1, 0, 1], age=7)
    assert schema.history_names(1) == ["age", "ef_1", "v_1"]
    np.testing.assert_array_equal(history(s, 1, schema), [7, 0.6, 0])


def test_history_course2_current_and_previous():
    schema = Schema(small_schema().covariates, 4, wait_cutpoints=(1, 2, 3))
    s = make_subject("a", [2.5, 2.5, 1.0], [-1, -1, 0], efs=[0.6, 0.5, 0.4], treatments=[1, 0, 1], age=7)
    assert schema.history_names(2) == ["age", "ef_2", "v_2", "ef_1", "v_1", "a_1", "wcat2_1", "wcat3_1", "wcat4_1"]
    # w_1 = 2.5 lies in (2, 3] -> level 3
    np.testing.assert_array_equal(history(s, 2, schema), [7, 0.5, 0, 0.6, 0, 1, 0, 1, 0])


def test_history_full_lag():
    schema = Schema(small_schema().covariates, 4, lag="full", wait_cutpoints=(1, 2, 3))
    assert schema.history_length(3) == 1 + 2 + 4 + 2 + 6


def test_history_out_of_range():
    s = make_subject("a", [1.0, 1.0], [-1, 1])
    with pytest.raises(IndexError):
        history(s, 3, small_schema())


def test_standardization_recorded_and_applied(rng):
    c = random_cohort(rng).finalized()
    std = {n: (m, s) for n, m, s in c.schema.standardize}
    ages = np.array([s.courses[0].covariates[2] for s in c.subjects])
    assert std["age"][0] == pytest.approx(ages.mean())
    h = c.course_data(1).history
    assert h[:, 0].mean() == pytest.approx(0.0, abs=1e-12)
    assert set(std) == {"age"}  # proportions and binaries stay raw


def test_schema_file_round_trip(tmp_path, rng):
    schema = random_cohort(rng).finalized().schema
    schema.write(tmp_path / "s.txt")
    assert Schema.read(tmp_path / "s.txt") == schema


def test_schema_rejects_bad_cutpoints():
    from gpdtr._io import ConfigError

    with pytest.raises(ConfigError):
        Schema(small_schema().covariates, 4, wait_cutpoints=(1, 1, 2))


@given(st.integers(0, 2**32 - 1), st.sampled_from(["previous", "full"]))
def test_round_trip_and_history_length(tmp_path_factory, seed, lag):
    rng = np.random.default_rng(seed)
    cohort = random_cohort(rng, n=12, schema=small_schema(lag=lag))
    path = tmp_path_factory.mktemp("rt") / "c.csv"
    export(cohort, path)
    again = ingest(path, cohort.schema)
    assert {s.subject_id: s for s in again.subjects} == {s.subject_id: s for s in cohort.subjects}
    export(again, path.with_name("d.csv"))
    assert path.read_bytes() == path.with_name("d.csv").read_bytes()
    fin = cohort.finalized()
    for k in range(1, 5):
        lens = {len(history(s, k, fin.schema)) for s in fin.subjects if s.kappa >= k}
        assert len(lens) <= 1
        if lens:
            assert lens == {fin.schema.history_length(k)}


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=4))
def test_total_time_matches_absolute_times(waits):
    s = make_subject("x", waits, [-1] * (len(waits) - 1) + [1])
    starts = np.concatenate([[0.0], np.cumsum(waits)])
    assert abs(s.total_time - starts[-1]) < 1e-9
    assert math.isclose(s.total_time, math.fsum(waits))


def test_cohort_needs_subjects():
    with pytest.raises(ValidationError):
        Cohort((), small_schema())
