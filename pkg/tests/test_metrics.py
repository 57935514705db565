import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from silicotrial.errors import UndefinedMetricError
from silicotrial.metrics import (
    BreakdownDimension,
    MetricsReport,
    accuracy_breakdown,
    auc,
    band_rate,
    bootstrap_ci,
    compare_record_sets,
    evaluate,
    mae,
    rouge,
    time_reduction,
)
from silicotrial.surrogates import ModelContext
from silicotrial.trial import DiagnosisRecord


def brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    diff = pos[:, None] - neg[None, :]
    return (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (len(pos) * len(neg))


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def test_auc_brute_force(rng):
    s = np.round(rng.normal(size=200), 1)  # plenty of ties
    y = (rng.random(200) < 0.4).astype(int)
    assert abs(auc(s, y) - brute_auc(s, y)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.booleans()), min_size=2, max_size=60))
def test_auc_monotone_invariance(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=int)
    if y.min() == y.max():
        return
    assert abs(auc(s, y) - auc(s**3 + 7 * s, y)) <= 1e-12
    assert abs(auc(s, y) + auc(-s, y) - 1.0) <= 1e-12


def test_bootstrap_constant():
    ci = bootstrap_ci(lambda r: 3.0, list(range(20)), n_boot=200)
    assert ci.lo == ci.hi == ci.point == 3.0


def test_bootstrap_width_scales(rng):
    def width(n):
        x = rng.normal(size=n)
        lo, hi = bootstrap_ci(np.mean, x, n_boot=1000, seed=n)
        return hi - lo

    ratio = width(400) / width(1600)
    assert 1.6 <= ratio <= 2.4


def test_bootstrap_coverage():
    rng = np.random.default_rng(2)
    hits = 0
    for rep in range(500):
        x = rng.normal(1.0, 1.0, size=60)
        lo, hi = bootstrap_ci(np.mean, x, n_boot=300, seed=rep)
        hits += lo <= 1.0 <= hi
    assert 0.92 <= hits / 500 <= 0.97


def test_bootstrap_redraws_undefined(rng):
    s = rng.normal(size=12)
    y = np.array([1] + [0] * 11)
    data = np.column_stack([s, y])
    ci = bootstrap_ci(lambda d: auc(d[:, 0], d[:, 1]), data, n_boot=200)
    assert ci.redrawn > 0 and ci.lo <= ci.hi


def test_bootstrap_cluster(rng):
    data = np.repeat(rng.normal(size=30), 5)
    ci = bootstrap_ci(np.mean, data, n_boot=500, cluster=lambda v: v)
    plain = bootstrap_ci(np.mean, data, n_boot=500)
    # clustered resampling respects the 30 independent units, so it is wider
    assert (ci.hi - ci.lo) > (plain.hi - plain.lo)


def test_mae_band(rng):
    t = rng.uniform(1, 5, 50)
    assert mae(t, t) == 0 and band_rate(t, t) == 1.0
    assert band_rate(1.2 * t, t) == 1.0
    p = t * rng.uniform(0.5, 1.5, 50)
    assert mae(p, t) == np.mean(np.abs(p - t))
    assert band_rate(p, t) == np.mean(np.abs(p - t) <= 0.2 * t * (1 + 1e-12))


def test_rouge_hand_values():
    assert rouge("ABC", "ABC") == (1.0, 1.0, 1.0)
    r, p, f = rouge(["A", "C"], ["A", "B", "C"])
    assert (r, p) == (2 / 3, 1.0) and f == pytest.approx(0.8)
    r, p, _ = rouge(["B", "A", "C"], ["A", "B", "C"], "L")
    assert r == pytest.approx(2 / 3) and p == pytest.approx(2 / 3)
    assert rouge([], []) == (1.0, 1.0, 1.0)
    assert rouge([], ["A"]) == (0.0, 0.0, 0.0)


# --------------------------------------------------------------------------
# record-level helpers


class Clin:
    def __init__(self, dept):
        self.department = dept
        self.sex = "male"
        self.age = 30
        self.institution_level = "grade-A tertiary"
        self.years_working = 4
        self.class_of_position = "junior"


@dataclasses.dataclass
class Case:
    id: str
    septic: bool
    onset_time: float | None = None
    query_time: float = 10.0
    patient_type: str = "x"


def rec(i, clin, case, decision, setting="s", prelim=60.0, final=0.0, ctx=None):
    return DiagnosisRecord(f"r{i}", clin, case, setting, 1, "", ctx or ModelContext.none(), decision, prelim, None, None, decision, final)


def test_breakdown_aggregation():
    clins = {"a": Clin("ICU"), "b": Clin("Surgery")}
    cases = {"p": Case("p", True)}
    recs = [rec(i, "a", "p", "septic" if i < 4 else "non-septic") for i in range(10)]
    recs += [rec(10 + i, "b", "p", "septic" if i < 8 else "non-septic") for i in range(10)]
    dims = [BreakdownDimension("O", lambda r, c, p: "all"), BreakdownDimension("D", lambda r, c, p: c.department)]
    table = accuracy_breakdown(recs, cases, clins, dims)
    assert table["D"]["ICU"].value == pytest.approx(0.4)
    assert table["D"]["Surgery"].value == pytest.approx(0.8)
    assert table["O"]["all"].value == pytest.approx(0.6)


def test_planted_department_accuracy():
    rng = np.random.default_rng(0)
    planted = {"ICU": 0.9, "Surgery": 0.6, "Emergency": 0.75}
    clins = {d: Clin(d) for d in planted}
    cases = {"p": Case("p", True)}
    recs = []
    for d, acc in planted.items():
        recs += [rec(f"{d}{i}", d, "p", "septic" if rng.random() < acc else "non-septic") for i in range(20_000)]
    dims = [BreakdownDimension("D", lambda r, c, p: c.department)]
    table = accuracy_breakdown(recs, cases, clins, dims)
    for d, acc in planted.items():
        assert abs(table["D"][d].value - acc) <= 0.01


def test_time_reduction_sign():
    cases = {"a": Case("a", True, onset_time=11.0), "b": Case("b", True, onset_time=10.0), "n": Case("n", False)}
    recs = [rec(0, "c", "a", "septic", prelim=0.0), rec(1, "c", "b", "septic", setting="t", prelim=0.0), rec(2, "c", "n", "septic")]
    tr = time_reduction(recs, cases, "preliminary")
    assert tr.mean("s") == pytest.approx(1.0)
    assert tr.mean("t") == pytest.approx(0.0)
    assert tr.excluded_non_septic == 1


def test_time_reduction_planted_shift():
    rng = np.random.default_rng(4)
    cases, recs = {}, []
    for i in range(2000):
        arm = "treated" if i % 2 else "control"
        onset = 20.0 + rng.normal()
        cases[f"p{i}"] = Case(f"p{i}", True, onset_time=onset, query_time=onset - 1.0)
        minutes = 60 * (0.5 if arm == "control" else -0.25) + 60  # treated decides 0.75 h earlier
        recs.append(rec(i, "c", f"p{i}", "septic", setting=arm, prelim=minutes))
    tr = time_reduction(recs, cases, "preliminary")
    assert abs(tr.mean("treated") - tr.mean("control") - 0.75) <= 0.05


def test_compare_identical_and_shift():
    clins = {"a": Clin("ICU")}
    cases = {"p": Case("p", True)}
    ref = [rec(i, "a", "p", "septic", setting=f"s{i % 4}") for i in range(100)]
    cand = [dataclasses.replace(r, final_decision="non-septic") if i % 20 == 0 else r for i, r in enumerate(ref)]
    dims = [BreakdownDimension("O", lambda r, c, p: "all")]
    assert compare_record_sets(ref, ref, cases, clins, dims).mean_deviation == 0.0
    # deviations are in percentage points: a 0.05 accuracy shift reads 5
    assert compare_record_sets(ref, cand, cases, clins, dims).mean_deviation == pytest.approx(5.0)


def test_evaluate_writes(world, tmp_path):
    rep = evaluate(world.records[:1500], world.cases, world.clin_by_id, n_boot=50, seed=1, reference=world.records[1500:3000])
    assert isinstance(rep, MetricsReport)
    rep.write(tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"summary.json", "breakdown.csv", "time_reduction.csv"} <= names
