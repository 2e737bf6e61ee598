"""Repeated-measures two-way ANOVA and Bonferroni-corrected paired t-tests.

The F and t tail probabilities come from a continued-fraction evaluation of
the regularized incomplete beta function, so the module needs nothing beyond
numpy and the standard library.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import IncompleteDesign, InputError

_TINY = 1e-300
_EPS = 1e-16
_MAX_ITER = 10000


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise InputError("betainc requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise InputError("betainc requires 0 <= x <= 1")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_sf(f: float, dfn: float, dfd: float) -> float:
    """Upper tail P(F > f) of the F distribution."""
    if math.isnan(f):
        return float("nan")
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(dfd / 2.0, dfn / 2.0, dfd / (dfd + dfn * f))


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail P(|T| > |t|) of Student's t distribution."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


# ------------------------------------------------------------------ designs


@dataclass(frozen=True)
class RmDesign:
    """Complete within-subject design, ``values[subject, a_level, b_level]``."""

    values: np.ndarray
    subjects: tuple[str, ...]
    a_levels: tuple[str, ...]
    b_levels: tuple[str, ...]
    a_name: str = "paradigm"
    b_name: str = "feature_set"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise IncompleteDesign("values must be (subjects, a levels, b levels)")
        if v.shape != (len(self.subjects), len(self.a_levels), len(self.b_levels)):
            raise IncompleteDesign("level labels do not match the value array")
        if v.shape[0] < 2 or v.shape[1] < 2 or v.shape[2] < 2:
            raise IncompleteDesign("need at least 2 subjects and 2 levels per factor")
        if not np.all(np.isfinite(v)):
            raise IncompleteDesign("missing (non-finite) cell values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, str, float]],
                     a_name="paradigm", b_name="feature_set") -> "RmDesign":
        """Build from ``(subject, a_level, b_level, value)`` tuples.

        Level order follows first appearance.
        """
        cells = {}
        subjects, a_levels, b_levels = [], [], []
        for s, a, b, v in records:
            for lst, item in ((subjects, s), (a_levels, a), (b_levels, b)):
                if item not in lst:
                    lst.append(item)
            if (s, a, b) in cells:
                raise IncompleteDesign(f"duplicate cell {(s, a, b)}")
            cells[(s, a, b)] = float(v)
        arr = np.full((len(subjects), len(a_levels), len(b_levels)), np.nan)
        for (s, a, b), v in cells.items():
            arr[subjects.index(s), a_levels.index(a), b_levels.index(b)] = v
        if np.isnan(arr).any():
            i, j, k = np.argwhere(np.isnan(arr))[0]
            raise IncompleteDesign(f"missing cell {(subjects[i], a_levels[j], b_levels[k])}")
        return cls(arr, tuple(subjects), tuple(a_levels), tuple(b_levels), a_name, b_name)

    @property
    def conditions(self) -> list[tuple[str, str]]:
        return list(itertools.product(self.a_levels, self.b_levels))

    def condition_values(self, cond: tuple[str, str]) -> np.ndarray:
        a, b = cond
        try:
            return self.values[:, self.a_levels.index(a), self.b_levels.index(b)]
        except ValueError:
            raise InputError(f"unknown condition {cond}") from None


@dataclass(frozen=True)
class AnovaEffect:
    name: str
    ss: float
    dof: int
    ms: float
    error_ss: float
    error_dof: int
    F: float
    p: float
    degenerate: bool = False


@dataclass(frozen=True)
class AnovaTable:
    effects: tuple[AnovaEffect, ...]
    ss_subjects: float
    ss_total: float

    def __getitem__(self, name: str) -> AnovaEffect:
        for e in self.effects:
            if e.name == name:
                return e
        raise KeyError(name)


def _effect(name, ss, dof, err_ss, err_dof, zero_ss) -> AnovaEffect:
    ms = ss / dof
    if err_ss <= zero_ss:
        # no within-subject error variance: F is undefined or infinite
        if ss > zero_ss:
            return AnovaEffect(name, ss, dof, ms, err_ss, err_dof, math.inf, 0.0, True)
        return AnovaEffect(name, ss, dof, ms, err_ss, err_dof, math.nan, 1.0, True)
    f = ms / (err_ss / err_dof)
    return AnovaEffect(name, ss, dof, ms, err_ss, err_dof, f, f_sf(f, dof, err_dof))


def rm_two_way_anova(design: RmDesign) -> AnovaTable:
    """Univariate two-way within-subject ANOVA, one error term per effect."""
    y = design.values
    s, a, b = y.shape
    grand = y.mean()
    m_s = y.mean(axis=(1, 2))
    m_a = y.mean(axis=(0, 2))
    m_b = y.mean(axis=(0, 1))
    m_sa = y.mean(axis=2)
    m_sb = y.mean(axis=1)
    m_ab = y.mean(axis=0)

    ss_s = a * b * np.sum((m_s - grand) ** 2)
    ss_a = s * b * np.sum((m_a - grand) ** 2)
    ss_b = s * a * np.sum((m_b - grand) ** 2)
    ss_as = b * np.sum((m_sa - m_a[None, :] - m_s[:, None] + grand) ** 2)
    ss_bs = a * np.sum((m_sb - m_b[None, :] - m_s[:, None] + grand) ** 2)
    ss_ab = s * np.sum((m_ab - m_a[:, None] - m_b[None, :] + grand) ** 2)
    resid = (y - m_sa[:, :, None] - m_sb[:, None, :] - m_ab[None, :, :]
             + m_s[:, None, None] + m_a[None, :, None] + m_b[None, None, :] - grand)
    ss_abs = np.sum(resid ** 2)
    ss_total = np.sum((y - grand) ** 2)

    # sums of squares below round-off of the data scale count as zero
    zero_ss = 1e-20 * float(np.sum(y ** 2))
    da, db, ds = a - 1, b - 1, s - 1
    effects = (
        _effect(design.a_name, ss_a, da, ss_as, da * ds, zero_ss),
        _effect(design.b_name, ss_b, db, ss_bs, db * ds, zero_ss),
        _effect(f"{design.a_name}:{design.b_name}", ss_ab, da * db, ss_abs, da * db * ds, zero_ss),
    )
    return AnovaTable(effects, float(ss_s), float(ss_total))


# ----------------------------------------------------------------- posthoc


@dataclass(frozen=True)
class PosthocResult:
    pair: tuple[tuple[str, str], tuple[str, str]]
    t: float
    p_raw: float
    p_adj: float
    tier: str  # "", "a" (p < 0.05) or "b" (p < 0.01)
    zero_variance: bool = False

    @property
    def label(self) -> str:
        (a1, b1), (a2, b2) = self.pair
        return f"{a1}/{b1} vs {a2}/{b2}"


def significance_tier(p: float, alpha: float = 0.05, strict: float = 0.01) -> str:
    if p < strict:
        return "b"
    if p < alpha:
        return "a"
    return ""


def paired_t(x: np.ndarray, y: np.ndarray) -> tuple[float, float, bool]:
    """Paired t statistic, two-sided p and a zero-variance flag."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0 or np.ptp(d) == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, False
        return math.copysign(math.inf, mean), 0.0, True
    t = mean / (sd / math.sqrt(n))
    return t, t_sf_two_sided(t, n - 1), False


def bonferroni_posthoc(design: RmDesign, pairs: Sequence | None = None,
                       family_size: int | None = None, alpha: float = 0.05,
                       strict: float = 0.01) -> list[PosthocResult]:
    """Paired t-tests between conditions with Bonferroni adjustment.

    ``pairs`` defaults to all pairwise condition comparisons; the family size
    ``m`` defaults to the number of pairs tested.
    """
    conds = design.conditions
    if pairs is None:
        pairs = list(itertools.combinations(conds, 2))
    m = family_size if family_size is not None else len(pairs)
    if m < 1:
        raise InputError("family size must be >= 1")
    out = []
    for c1, c2 in pairs:
        c1, c2 = tuple(c1), tuple(c2)
        t, p, flag = paired_t(design.condition_values(c1), design.condition_values(c2))
        p_adj = min(1.0, m * p)
        out.append(PosthocResult((c1, c2), t, p, p_adj, significance_tier(p_adj, alpha, strict), flag))
    return out


# --------------------------------------------------------------------- CSV

DESIGN_HEADER = ("subject", "paradigm", "feature_set", "value")


def read_design_csv(path) -> RmDesign:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != DESIGN_HEADER:
            raise InputError(f"{path}:1: expected header {','.join(DESIGN_HEADER)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 fields")
            try:
                records.append((row[0], row[1], row[2], float(row[3])))
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad value {row[3]!r}") from None
    return RmDesign.from_records(records)


def write_design_csv(path, design: RmDesign) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESIGN_HEADER)
        for i, s in enumerate(design.subjects):
            for j, a in enumerate(design.a_levels):
                for k, b in enumerate(design.b_levels):
                    w.writerow([s, a, b, repr(float(design.values[i, j, k]))])


def write_anova_csv(path, table: AnovaTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["effect", "ss", "dof", "F", "p"])
        for e in table.effects:
            w.writerow([e.name, f"{e.ss:.10g}", e.dof, f"{e.F:.10g}", f"{e.p:.10g}"])


def write_posthoc_csv(path, results: Sequence[PosthocResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "t", "p_raw", "p_adj", "tier"])
        for r in results:
            w.writerow([r.label, f"{r.t:.10g}", f"{r.p_raw:.10g}", f"{r.p_adj:.10g}", r.tier])
