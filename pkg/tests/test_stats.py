import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings, strategies as st

from usgait.errors import IncompleteDesign
from usgait.stats import (
    RmDesign,
    betainc,
    bonferroni_posthoc,
    f_sf,
    paired_t,
    read_design_csv,
    rm_two_way_anova,
    significance_tier,
    t_sf_two_sided,
    write_design_csv,
)

LEVELS_A = ("task_specific", "task_invariant")
LEVELS_B = ("intensity", "intensity_plus_temporal")

# rows: subjects; columns: (ts,int), (ts,tmp), (ti,int), (ti,tmp)
FIXTURE = np.array([[4.9, 4.0, 5.2, 4.7],
                    [3.8, 2.7, 4.0, 3.5],
                    [4.6, 3.8, 5.4, 4.4]])

# frozen from statsmodels AnovaRM on FIXTURE, computed before the implementation
EXPECTED = {
    "paradigm": (72.249999999998, 0.013559949584),
    "feature_set": (191.999999999998, 0.005167993252),
    "paradigm:feature_set": (1.230769230769, 0.382786600152),
}


def _design(flat):
    return RmDesign(np.asarray(flat, dtype=float).reshape(-1, 2, 2),
                    tuple(f"s{i}" for i in range(len(flat))), LEVELS_A, LEVELS_B)


def test_anova_fixture_matches_reference():
    table = rm_two_way_anova(_design(FIXTURE))
    for name, (f, p) in EXPECTED.items():
        assert table[name].F == pytest.approx(f, abs=1e-6)
        assert table[name].p == pytest.approx(p, abs=1e-4)
        assert table[name].dof == 1 and table[name].error_dof == 2


def test_anova_matches_statsmodels_live():
    pd = pytest.importorskip("pandas")
    anova_rm = pytest.importorskip("statsmodels.stats.anova").AnovaRM
    rng = np.random.default_rng(12)
    vals = rng.normal(5, 1, size=(6, 4))
    rows = [(f"s{i}", LEVELS_A[j // 2], LEVELS_B[j % 2], vals[i, j]) for i in range(6) for j in range(4)]
    df = pd.DataFrame(rows, columns=["subject", "paradigm", "feature_set", "value"])
    ref = anova_rm(df, "value", "subject", within=["paradigm", "feature_set"]).fit().anova_table
    table = rm_two_way_anova(_design(vals))
    for name in EXPECTED:
        assert table[name].F == pytest.approx(ref.loc[name, "F Value"], rel=1e-9)
        assert table[name].p == pytest.approx(ref.loc[name, "Pr > F"], abs=1e-10)


def test_anova_all_equal_is_degenerate():
    table = rm_two_way_anova(_design(np.full((3, 4), 2.5)))
    for e in table.effects:
        assert e.ss == 0.0 and e.degenerate


def test_incomplete_design():
    with pytest.raises(IncompleteDesign):
        RmDesign.from_records([("s1", "a", "x", 1.0), ("s1", "b", "x", 1.0),
                               ("s1", "a", "y", 1.0), ("s2", "a", "x", 1.0)])
    with pytest.raises(IncompleteDesign):
        RmDesign(np.zeros((1, 2, 2)), ("s",), LEVELS_A, LEVELS_B)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.floats(-100, 100), st.floats(0.1, 50))
def test_anova_invariances(seed, subjects, shift, scale):
    vals = np.random.default_rng(seed).normal(size=(subjects, 4))
    base = rm_two_way_anova(_design(vals))
    moved = rm_two_way_anova(_design(vals + shift))
    scaled = rm_two_way_anova(_design(vals * scale))
    for e0, e1, e2 in zip(base.effects, moved.effects, scaled.effects):
        assert e1.F == pytest.approx(e0.F, rel=1e-9)
        assert e2.F == pytest.approx(e0.F, rel=1e-9)
        assert e2.p == pytest.approx(e0.p, rel=1e-9, abs=1e-12)
        assert e0.ss >= 0 and 0 <= e0.p <= 1
    parts = base.ss_subjects + sum(e.ss + e.error_ss for e in base.effects[:2]) + \
        base.effects[2].ss + base.effects[2].error_ss
    assert parts == pytest.approx(base.ss_total, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 50), st.floats(0.05, 50), st.integers(0, 2 ** 40))
def test_betainc_symmetry_and_reference(a, b, k):
    x = k / 2 ** 40  # dyadic, so 1 - x is exact
    assert betainc(a, b, x) + betainc(b, a, 1 - x) == pytest.approx(1.0, abs=1e-12)
    assert betainc(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), abs=1e-12)


def test_f_and_t_tails():
    assert f_sf(0.0, 1, 2) == 1.0
    assert f_sf(1e-12, 3, 10) == pytest.approx(1.0, abs=1e-5)
    assert f_sf(1e12, 3, 10) < 1e-12
    assert t_sf_two_sided(0.0, 5) == 1.0


def test_posthoc_fixture_differences():
    # differences [2, 1, 3] between two conditions; oracle from scipy.stats.ttest_1samp
    t, p, flag = paired_t(np.array([5.0, 4.0, 6.0]), np.array([3.0, 3.0, 3.0]))
    assert t == pytest.approx(3.464101615137755, rel=1e-12)
    assert p == pytest.approx(0.07417990022744853, abs=1e-10)
    assert not flag
    vals = np.array([[5.0, 0.0, 3.0, 0.0], [4.0, 0.0, 3.0, 0.0], [6.0, 0.0, 3.0, 0.0]])
    pair = ((LEVELS_A[0], LEVELS_B[0]), (LEVELS_A[1], LEVELS_B[0]))
    (res,) = bonferroni_posthoc(_design(vals), [pair], family_size=6)
    assert res.p_adj == pytest.approx(0.44507940136469115, abs=1e-10)
    assert res.tier == ""


def test_posthoc_default_family_is_all_pairs():
    results = bonferroni_posthoc(_design(FIXTURE))
    assert len(results) == 6
    for r in results:
        assert r.p_adj == pytest.approx(min(1.0, 6 * r.p_raw)) and r.p_adj >= r.p_raw


def test_posthoc_degenerate_pairs():
    t, p, flag = paired_t(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
    assert (t, p, flag) == (0.0, 1.0, False)
    vals = np.array([[2.0, 0.0, 1.0, 0.0], [3.0, 0.0, 2.0, 0.0], [4.0, 0.0, 3.0, 0.0]])
    pair = ((LEVELS_A[0], LEVELS_B[0]), (LEVELS_A[1], LEVELS_B[0]))
    (res,) = bonferroni_posthoc(_design(vals), [pair])
    assert res.zero_variance and math.isinf(res.t) and res.p_raw == 0.0


def test_tier_boundaries():
    assert significance_tier(0.049) == "a"
    assert significance_tier(0.009) == "b"
    assert significance_tier(0.051) == ""


def test_design_csv_round_trip(tmp_path):
    d = _design(FIXTURE)
    write_design_csv(tmp_path / "d.csv", d)
    back = read_design_csv(tmp_path / "d.csv")
    assert np.array_equal(back.values, d.values)
    assert back.a_levels == LEVELS_A and back.b_levels == LEVELS_B
