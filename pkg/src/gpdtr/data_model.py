"""Cohort schema, long-format ingestion and history encoding.

One CSV row per (subject, course) with columns ``subject_id, k, a, w, delta``
followed by one column per covariate in schema order.  ``delta`` is +1 for
death, 0 for censoring and -1 for a transition to the next course.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import ConfigError, atomic_open, format_kv, parse_floats, read_kv_file

KINDS = ("continuous", "binary", "proportion")
LAG_POLICIES = ("previous", "full")
N_WAIT_LEVELS = 4
FIXED_COLUMNS = ("subject_id", "k", "a", "w", "delta")

DEATH, CENSORED, NEXT = 1, 0, -1


class ParseError(ValueError):
    """Malformed input file (bad header, unparsable field)."""


class ValidationError(ValueError):
    """Input parsed but violates a cohort invariant."""


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str
    varying: bool

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"covariate {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Schema:
    """Covariate schema plus the encoding state shared by fitting and g-computation.

    ``wait_cutpoints`` and ``standardize`` may be left empty and are then
    filled from a training cohort by :meth:`finalized`.
    """

    covariates: tuple[Covariate, ...]
    K: int
    lag: str = "previous"
    wait_cutpoints: tuple[float, ...] | None = None
    standardize: tuple[tuple[str, float, float], ...] = ()

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.lag not in LAG_POLICIES:
            raise ConfigError(f"unknown lag policy {self.lag!r}")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate covariate names")
        bad = set(names) & set(FIXED_COLUMNS)
        if bad:
            raise ConfigError(f"covariate names clash with fixed columns: {sorted(bad)}")
        if self.wait_cutpoints is not None:
            cp = self.wait_cutpoints
            if len(cp) != N_WAIT_LEVELS - 1 or any(b <= a for a, b in zip(cp, cp[1:])):
                raise ConfigError("wait_cutpoints must be 3 strictly ascending values")

    # -- structure -----------------------------------------------------
    @property
    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    @property
    def baseline(self) -> list[Covariate]:
        return [c for c in self.covariates if not c.varying]

    @property
    def varying(self) -> list[Covariate]:
        return [c for c in self.covariates if c.varying]

    @property
    def is_finalized(self) -> bool:
        std_names = {s[0] for s in self.standardize}
        need = {c.name for c in self.covariates if c.kind == "continuous"}
        return (self.K == 1 or self.wait_cutpoints is not None) and need <= std_names

    def _scales(self, covs: Sequence[Covariate]) -> tuple[np.ndarray, np.ndarray]:
        lookup = {n: (c, s) for n, c, s in self.standardize}
        center = np.array([lookup.get(c.name, (0.0, 1.0))[0] for c in covs], dtype=float)
        scale = np.array([lookup.get(c.name, (0.0, 1.0))[1] for c in covs], dtype=float)
        return center, scale

    def lagged_courses(self, k: int) -> list[int]:
        """Earlier courses whose values enter the course-``k`` history, most recent first."""
        if k <= 1:
            return []
        if self.lag == "previous":
            return [k - 1]
        return list(range(k - 1, 0, -1))

    def history_names(self, k: int, include_current: bool = True) -> list[str]:
        names = [c.name for c in self.baseline]
        if include_current:
            names += [f"{c.name}_{k}" for c in self.varying]
        lags = self.lagged_courses(k)
        for j in lags:
            names += [f"{c.name}_{j}" for c in self.varying]
        names += [f"a_{j}" for j in lags]
        for j in lags:
            names += [f"wcat{lvl}_{j}" for lvl in range(2, N_WAIT_LEVELS + 1)]
        return names

    def history_length(self, k: int, include_current: bool = True) -> int:
        return len(self.history_names(k, include_current))

    # -- encoding ------------------------------------------------------
    def encode(
        self,
        k: int,
        baseline: np.ndarray,
        varying: np.ndarray,
        a_prev: np.ndarray,
        w_prev: np.ndarray,
        include_current: bool = True,
    ) -> np.ndarray:
        """Vectorized history encoding for a batch of trajectories.

        baseline: (B, n_baseline) raw values; varying: (B, >=k, n_varying) raw
        values for courses 1..k; a_prev, w_prev: (B, >=k-1) treatments and
        waiting times of courses 1..k-1.
        """
        baseline = np.asarray(baseline, dtype=float)
        varying = np.asarray(varying, dtype=float)
        B = baseline.shape[0]
        parts = []
        c, s = self._scales(self.baseline)
        parts.append((baseline - c) / s)
        cv, sv = self._scales(self.varying)
        if include_current:
            parts.append((varying[:, k - 1, :] - cv) / sv)
        lags = self.lagged_courses(k)
        for j in lags:
            parts.append((varying[:, j - 1, :] - cv) / sv)
        if lags:
            a_prev = np.asarray(a_prev, dtype=float)
            w_prev = np.asarray(w_prev, dtype=float)
            parts.append(a_prev[:, [j - 1 for j in lags]])
            if self.wait_cutpoints is None:
                raise ValidationError("schema has no waiting-time cutpoints; finalize it first")
            for j in lags:
                lvl = encode_waiting_time(w_prev[:, j - 1], self.wait_cutpoints)
                parts.append((lvl[:, None] == np.arange(2, N_WAIT_LEVELS + 1)).astype(float))
        if not parts:
            return np.zeros((B, 0))
        return np.concatenate([np.asarray(p).reshape(B, np.shape(p)[-1]) for p in parts], axis=1)

    # -- persistence ---------------------------------------------------
    def finalized(self, subjects: Sequence["SubjectRecord"]) -> "Schema":
        """Fill cutpoints and standardization from a training cohort when absent."""
        schema = self
        if schema.wait_cutpoints is None and schema.K > 1:
            waits = [c.waiting_time for s in subjects for c in s.courses if c.indicator == NEXT]
            if len(waits) < 1:
                waits = [c.waiting_time for s in subjects for c in s.courses]
            q = np.quantile(np.asarray(waits), [0.25, 0.5, 0.75])
            # ties in small samples would break strict ordering
            q = np.maximum.accumulate(q + np.arange(3) * 1e-9)
            schema = replace(schema, wait_cutpoints=tuple(float(v) for v in q))
        have = {s[0] for s in schema.standardize}
        extra = []
        for cov in schema.covariates:
            if cov.kind != "continuous" or cov.name in have:
                continue
            idx = schema.names.index(cov.name)
            if cov.varying:
                vals = [c.covariates[idx] for s in subjects for c in s.courses]
            else:
                vals = [s.courses[0].covariates[idx] for s in subjects]
            vals = np.asarray(vals, dtype=float)
            sd = float(vals.std()) if vals.size > 1 else 1.0
            extra.append((cov.name, float(vals.mean()), sd if sd > 0 else 1.0))
        if extra:
            schema = replace(schema, standardize=tuple(schema.standardize) + tuple(extra))
        return schema

    def to_kv(self) -> dict[str, str]:
        out = {
            "K": str(self.K),
            "covariates": ", ".join(
                f"{c.name}:{c.kind}:{'varying' if c.varying else 'baseline'}" for c in self.covariates
            ),
            "lag": self.lag,
        }
        if self.wait_cutpoints is not None:
            out["wait_cutpoints"] = ", ".join(repr(v) for v in self.wait_cutpoints)
        if self.standardize:
            out["standardize"] = ", ".join(f"{n}:{c!r}:{s!r}" for n, c, s in self.standardize)
        return out

    def to_dict(self) -> dict:
        return self.to_kv()

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "Schema":
        try:
            K = int(kv["K"])
        except KeyError:
            raise ConfigError("schema: missing key 'K'") from None
        covs = []
        for item in kv.get("covariates", "").split(","):
            item = item.strip()
            if not item:
                continue
            parts = [p.strip() for p in item.split(":")]
            if len(parts) != 3 or parts[2] not in ("varying", "baseline"):
                raise ConfigError(f"schema: bad covariate spec {item!r} (want name:kind:varying|baseline)")
            covs.append(Covariate(parts[0], parts[1], parts[2] == "varying"))
        cut = kv.get("wait_cutpoints")
        std = []
        for item in kv.get("standardize", "").split(","):
            item = item.strip()
            if item:
                n, c, s = item.split(":")
                std.append((n.strip(), float(c), float(s)))
        return cls(
            covariates=tuple(covs),
            K=K,
            lag=kv.get("lag", "previous"),
            wait_cutpoints=tuple(parse_floats(cut)) if cut else None,
            standardize=tuple(std),
        )

    from_dict = from_kv

    @classmethod
    def read(cls, path: str | os.PathLike) -> "Schema":
        return cls.from_kv(read_kv_file(path))

    def write(self, path: str | os.PathLike) -> None:
        with atomic_open(path) as fh:
            fh.write(format_kv(self.to_kv()))


@dataclass(frozen=True)
class CourseRecord:
    subject_id: str
    k: int
    covariates: tuple[float, ...]
    treatment: int
    waiting_time: float
    indicator: int


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    courses: tuple[CourseRecord, ...]

    @property
    def kappa(self) -> int:
        return len(self.courses)

    @property
    def total_time(self) -> float:
        return math.fsum(c.waiting_time for c in self.courses)

    @property
    def died(self) -> bool:
        return self.courses[-1].indicator == DEATH


@dataclass
class CourseData:
    """Arrays for all subjects that initiated course ``k``."""

    k: int
    subject_index: np.ndarray
    w: np.ndarray
    delta: np.ndarray
    a: np.ndarray
    history: np.ndarray  # H_k (no current treatment)
    pre_history: np.ndarray  # H_k without current time-varying values
    varying: np.ndarray  # observed L_k, time-varying part, (n_k, n_varying)

    @property
    def n(self) -> int:
        return len(self.w)

    @property
    def hazard_design(self) -> np.ndarray:
        return np.column_stack([self.history, self.a])


@dataclass(frozen=True)
class Cohort:
    subjects: tuple[SubjectRecord, ...]
    schema: Schema

    def __post_init__(self):
        if not self.subjects:
            raise ValidationError("cohort has no subjects")
        for s in self.subjects:
            validate_subject(s, self.schema)

    @property
    def K(self) -> int:
        return self.schema.K

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def _arrays(self):
        schema = self.schema
        n, K = self.n, schema.K
        bidx = [schema.names.index(c.name) for c in schema.baseline]
        vidx = [schema.names.index(c.name) for c in schema.varying]
        kappa = np.array([s.kappa for s in self.subjects])
        base = np.array([[s.courses[0].covariates[i] for i in bidx] for s in self.subjects], dtype=float)
        base = base.reshape(n, len(bidx))
        var = np.full((n, K, len(vidx)), np.nan)
        a = np.full((n, K), -1.0)
        w = np.full((n, K), np.nan)
        d = np.full((n, K), 99, dtype=int)
        for i, s in enumerate(self.subjects):
            for c in s.courses:
                var[i, c.k - 1] = [c.covariates[j] for j in vidx]
                a[i, c.k - 1] = c.treatment
                w[i, c.k - 1] = c.waiting_time
                d[i, c.k - 1] = c.indicator
        return kappa, base, var, a, w, d

    def course_data(self, k: int) -> CourseData:
        return self._course_cache[k]

    @cached_property
    def _course_cache(self) -> dict[int, CourseData]:
        if not self.schema.is_finalized:
            raise ValidationError("schema must be finalized before building course data")
        kappa, base, var, a, w, d = self._arrays
        out = {}
        for k in range(1, self.K + 1):
            idx = np.flatnonzero(kappa >= k)
            out[k] = CourseData(
                k=k,
                subject_index=idx,
                w=w[idx, k - 1],
                delta=d[idx, k - 1],
                a=a[idx, k - 1],
                history=self.schema.encode(k, base[idx], var[idx], a[idx], w[idx]),
                pre_history=self.schema.encode(k, base[idx], var[idx], a[idx], w[idx], include_current=False),
                varying=var[idx, k - 1, :],
            )
        return out

    def baseline_rows(self) -> np.ndarray:
        """Course-1 covariate rows in schema order; the support of the bootstrap."""
        return np.array([s.courses[0].covariates for s in self.subjects], dtype=float).reshape(
            self.n, len(self.schema.covariates)
        )

    def max_death_time(self) -> float:
        times = [s.total_time for s in self.subjects if s.died]
        return max(times) if times else 0.0

    def with_schema(self, schema: Schema) -> "Cohort":
        return Cohort(self.subjects, schema)

    def finalized(self) -> "Cohort":
        if self.schema.is_finalized:
            return self
        return Cohort(self.subjects, self.schema.finalized(self.subjects))


def validate_subject(subject: SubjectRecord, schema: Schema) -> None:
    sid = subject.subject_id
    if not subject.courses:
        raise ValidationError(f"subject {sid}: no course records")
    ks = [c.k for c in subject.courses]
    if ks != list(range(1, len(ks) + 1)):
        raise ValidationError(f"subject {sid}: course indices must be contiguous from 1, got {ks}")
    if len(ks) > schema.K:
        raise ValidationError(f"subject {sid}: {len(ks)} courses exceeds K={schema.K}")
    P = len(schema.covariates)
    for c in subject.courses:
        if not (math.isfinite(c.waiting_time) and c.waiting_time > 0):
            raise ValidationError(f"subject {sid}, course {c.k}: nonpositive waiting time {c.waiting_time}")
        if c.treatment not in (0, 1):
            raise ValidationError(f"subject {sid}, course {c.k}: treatment must be 0 or 1")
        if c.indicator not in (DEATH, CENSORED, NEXT):
            raise ValidationError(f"subject {sid}, course {c.k}: indicator must be -1, 0 or 1")
        if len(c.covariates) != P:
            raise ValidationError(f"subject {sid}, course {c.k}: expected {P} covariates")
        for cov, v in zip(schema.covariates, c.covariates):
            if not math.isfinite(v):
                raise ValidationError(f"subject {sid}, course {c.k}: {cov.name} not finite")
            if cov.kind == "binary" and v not in (0.0, 1.0):
                raise ValidationError(f"subject {sid}, course {c.k}: binary {cov.name}={v}")
            if cov.kind == "proportion" and not 0.0 <= v <= 1.0:
                raise ValidationError(f"subject {sid}, course {c.k}: proportion {cov.name}={v} outside [0,1]")
    for c in subject.courses[:-1]:
        if c.indicator != NEXT:
            raise ValidationError(
                f"subject {sid}, course {c.k}: non-final course must have delta=-1 (got {c.indicator})"
            )
    last = subject.courses[-1]
    if last.indicator == NEXT:
        raise ValidationError(
            f"subject {sid}, course {last.k}: final observed course has delta=-1 but no next course"
        )
    first = subject.courses[0].covariates
    for j, cov in enumerate(schema.covariates):
        if cov.varying:
            continue
        if any(c.covariates[j] != first[j] for c in subject.courses[1:]):
            raise ValidationError(f"subject {sid}: baseline covariate {cov.name} changes across courses")


def encode_waiting_time(w, cutpoints: Sequence[float]):
    """Four-level category of a waiting time; a value equal to a cutpoint takes the lower level."""
    cp = np.asarray(cutpoints, dtype=float)
    if cp.ndim != 1 or np.any(np.diff(cp) <= 0):
        raise ValueError("cutpoints must be strictly ascending")
    lvl = np.searchsorted(cp, np.asarray(w, dtype=float), side="left") + 1
    return int(lvl) if np.ndim(lvl) == 0 else lvl


def history(subject: SubjectRecord, k: int, schema: Schema) -> np.ndarray:
    """Course-``k`` history vector H_k for one subject (current treatment excluded)."""
    if not 1 <= k <= subject.kappa:
        raise IndexError(f"course {k} not observed for subject {subject.subject_id} (kappa={subject.kappa})")
    names = schema.names
    bidx = [names.index(c.name) for c in schema.baseline]
    vidx = [names.index(c.name) for c in schema.varying]
    base = np.array([[subject.courses[0].covariates[i] for i in bidx]], dtype=float).reshape(1, len(bidx))
    var = np.array([[[c.covariates[i] for i in vidx] for c in subject.courses[:k]]], dtype=float)
    var = var.reshape(1, k, len(vidx))
    a = np.array([[c.treatment for c in subject.courses[: k - 1]]], dtype=float).reshape(1, k - 1)
    w = np.array([[c.waiting_time for c in subject.courses[: k - 1]]], dtype=float).reshape(1, k - 1)
    return schema.encode(k, base, var, a, w)[0]


def _subjects_from_rows(rows: dict[str, list[CourseRecord]]) -> tuple[SubjectRecord, ...]:
    return tuple(SubjectRecord(sid, tuple(sorted(recs, key=lambda c: c.k))) for sid, recs in rows.items())


def ingest(path: str | os.PathLike, schema: Schema) -> Cohort:
    """Read a long-format CSV into a validated :class:`Cohort`."""
    path = Path(path)
    expected = list(FIXED_COLUMNS) + schema.names
    rows: dict[str, list[CourseRecord]] = {}
    seen: set[tuple[str, int]] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != expected:
            raise ParseError(f"{path}:1: header {header} does not match schema {expected}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(expected):
                raise ParseError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(rec)}")
            try:
                sid = rec[0].strip()
                k = int(rec[1])
                a = int(float(rec[2]))
                w = float(rec[3])
                delta = int(rec[4])
                covs = tuple(float(v) for v in rec[5:])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if (sid, k) in seen:
                raise ValidationError(f"subject {sid}: duplicate record for course {k} (line {lineno})")
            seen.add((sid, k))
            rows.setdefault(sid, []).append(CourseRecord(sid, k, covs, a, w, delta))
    if not rows:
        raise ValidationError(f"{path}: no subjects")
    return Cohort(_subjects_from_rows(rows), schema)


def export(cohort: Cohort, path: str | os.PathLike) -> None:
    with atomic_open(path) as fh:
        write_rows(cohort.subjects, cohort.schema, fh)


def write_rows(subjects: Iterable[SubjectRecord], schema: Schema, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(list(FIXED_COLUMNS) + schema.names)
    for s in subjects:
        for c in s.courses:
            writer.writerow(
                [s.subject_id, c.k, c.treatment, repr(float(c.waiting_time)), c.indicator]
                + [repr(float(v)) for v in c.covariates]
            )
