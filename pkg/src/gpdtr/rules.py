"""Dynamic treatment rules and feasible sets.

Rules see a batch of raw (unstandardized) histories through
:class:`HistoryView` and return one treatment per trajectory.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class RuleConfigError(ValueError):
    pass


@dataclass
class HistoryView:
    """Raw history just before decision ``k`` for B trajectories.

    ``covariates[name]`` is (B, k) for time-varying covariates (courses 1..k)
    and (B,) for baseline ones.
    """

    k: int
    covariates: dict[str, np.ndarray]
    a_prev: np.ndarray
    w_prev: np.ndarray

    @property
    def size(self) -> int:
        return self.a_prev.shape[0]


@dataclass(frozen=True)
class FeasibleSet:
    """Allowed treatments per course; courses not listed allow {0, 1}."""

    overrides: tuple[tuple[int, tuple[int, ...]], ...] = ()

    def __post_init__(self):
        for k, allowed in self.overrides:
            if not allowed:
                raise RuleConfigError(f"empty feasible set at course {k}")

    def allowed(self, k: int) -> tuple[int, ...]:
        for kk, allowed in self.overrides:
            if kk == k:
                return allowed
        return (0, 1)

    @classmethod
    def unrestricted(cls) -> "FeasibleSet":
        return cls()

    @classmethod
    def no_act_at_course3(cls) -> "FeasibleSet":
        return cls(((3, (0,)),))

    @classmethod
    def parse(cls, text: str) -> "FeasibleSet":
        """``"3:0; 5:0|1"`` -> course 3 allows {0}, course 5 allows {0,1}."""
        items = []
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            k, vals = part.split(":")
            items.append((int(k), tuple(int(v) for v in vals.split("|") if v.strip())))
        return cls(tuple(items))


class DecisionRule:
    """Base class: ``decide`` maps a batch history to raw treatments."""

    name = "rule"

    def decide(self, view: HistoryView) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, view: HistoryView) -> np.ndarray:
        return np.asarray(self.decide(view))


@dataclass(frozen=True, order=True)
class ThresholdRuleParams:
    tau1: float
    tau2: float

    def __post_init__(self):
        if self.tau1 > 0:
            raise RuleConfigError("tau1 is a relative decline threshold and must be <= 0")
        if not 0 < self.tau2 < 1:
            raise RuleConfigError("tau2 must lie in (0, 1)")


def apply_rule(rule: DecisionRule, view: HistoryView, feasible: FeasibleSet, k: int, return_flags: bool = False):
    """Decision at course ``k``; infeasible outputs are coerced when only one option exists."""
    allowed = feasible.allowed(k)
    if not allowed:
        raise RuleConfigError(f"empty feasible set at course {k}")
    raw = np.broadcast_to(rule(view), (view.size,)).astype(int)
    bad = ~np.isin(raw, allowed)
    if np.any(bad):
        if len(allowed) != 1:
            raise RuleConfigError(f"rule {rule.name!r} produced an infeasible treatment at course {k}")
        raw = np.where(bad, allowed[0], raw)
    return (raw, bad) if return_flags else raw


@dataclass(frozen=True)
class ThresholdRule(DecisionRule):
    """Withhold treatment when the covariate fell by more than ``-tau1`` relative
    to course 1 *and* sits below ``tau2``.  Course 1 withholds when below
    ``tau2``; ``no_act_courses`` always withhold.
    """

    params: ThresholdRuleParams
    covariate: str = "ef"
    no_act_courses: tuple[int, ...] = (3,)

    @property
    def name(self) -> str:
        return f"threshold({self.params.tau1!r},{self.params.tau2!r})"

    def decide(self, view: HistoryView) -> np.ndarray:
        tau1, tau2 = self.params.tau1, self.params.tau2
        k = view.k
        if k in self.no_act_courses:
            return np.zeros(view.size, dtype=int)
        x = view.covariates[self.covariate]
        current = x[:, k - 1]
        if k == 1:
            return 1 - (current < tau2).astype(int)
        rel = current / x[:, 0] - 1.0
        return 1 - ((rel < tau1) & (current < tau2)).astype(int)


@dataclass(frozen=True)
class FixedRule(DecisionRule):
    treatments: tuple[int, ...]

    @property
    def name(self) -> str:
        return f"fixed({','.join(map(str, self.treatments))})"

    def decide(self, view: HistoryView) -> np.ndarray:
        if view.k > len(self.treatments):
            raise RuleConfigError(f"fixed rule has no entry for course {view.k}")
        return np.full(view.size, self.treatments[view.k - 1], dtype=int)


@dataclass(frozen=True)
class BelowRule(DecisionRule):
    """Treat when the current value of a time-varying covariate is below ``cut``."""

    covariate: str
    cut: float = 0.0

    @property
    def name(self) -> str:
        return f"below({self.covariate},{self.cut!r})"

    def decide(self, view: HistoryView) -> np.ndarray:
        return (view.covariates[self.covariate][:, view.k - 1] < self.cut).astype(int)


def threshold_rule(params: ThresholdRuleParams, covariate: str = "ef", no_act_courses: Sequence[int] = (3,)) -> ThresholdRule:
    return ThresholdRule(params, covariate, tuple(no_act_courses))


def fixed_rule(treatments: Sequence[int]) -> FixedRule:
    return FixedRule(tuple(int(a) for a in treatments))


def below_rule(covariate: str, cut: float = 0.0) -> BelowRule:
    return BelowRule(covariate, float(cut))


def rule_grid(tau1_values: Sequence[float], tau2_values: Sequence[float]) -> list[ThresholdRuleParams]:
    if not tau1_values or not tau2_values:
        raise RuleConfigError("grid value lists must be nonempty")
    return [ThresholdRuleParams(float(a), float(b)) for a, b in itertools.product(tau1_values, tau2_values)]


DEFAULT_TAU1 = (0.0, -0.1, -0.2, -0.3, -0.4, -0.5)
DEFAULT_TAU2 = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

_RULE_RE = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


def parse_rule(text: str, covariate: str = "ef") -> DecisionRule:
    """Parse ``threshold(t1,t2)``, ``fixed(a1,...,aK)`` or ``below(name,cut)``."""
    m = _RULE_RE.match(text)
    if not m:
        raise RuleConfigError(f"cannot parse rule {text!r}")
    kind, args = m.group(1), [a.strip() for a in m.group(2).split(",") if a.strip()]
    try:
        if kind == "threshold":
            t1, t2 = (float(a) for a in args)
            return threshold_rule(ThresholdRuleParams(t1, t2), covariate)
        if kind == "fixed":
            return fixed_rule([int(a) for a in args])
        if kind == "below":
            name = args[0]
            return below_rule(name, float(args[1]) if len(args) > 1 else 0.0)
    except (ValueError, IndexError) as exc:
        raise RuleConfigError(f"bad arguments in rule {text!r}: {exc}") from None
    raise RuleConfigError(f"unknown rule kind {kind!r}")


def parse_value_list(text: str, default_step: float = 0.1) -> list[float]:
    """Comma list of numbers.

    ``a,b,...,c`` expands the arithmetic sequence a, b, ... up to c; ``a,...,c``
    uses a step of ``default_step`` toward c.
    """
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." not in parts:
        return [float(p) for p in parts]
    i = parts.index("...")
    if i < 1 or i != len(parts) - 2:
        raise RuleConfigError(f"bad sequence {text!r}")
    end = float(parts[-1])
    if i >= 2:
        a, b = float(parts[i - 2]), float(parts[i - 1])
        head = [float(p) for p in parts[: i - 2]]
    else:
        a = float(parts[0])
        b = a + (default_step if end >= a else -default_step)
        head = []
    step = b - a
    if step == 0 or (end - a) / step < 0:
        raise RuleConfigError(f"bad step in {text!r}")
    n = int(round((end - a) / step))
    return head + [round(a + j * step, 12) for j in range(n + 1)]
