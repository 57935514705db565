import numpy as np
import pytest

from silicotrial.errors import DomainError
from silicotrial.metrics import auc
from silicotrial.surrogates import (
    ModelContext,
    default_surrogates,
    make_calibrated_surrogate,
    make_random_model,
    predict,
    predict_many,
    quality_bucket,
)
from silicotrial.synth import WorldParams, generate_cohort


def labeled_ids(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    return [f"c{i}" for i in range(n)], (rng.random(n) < 0.5).astype(int)


@pytest.mark.parametrize("auc_value, bucket", [(0.95, 5), (0.5, 1), (0.6, 2), (0.7, 3), (0.85, 4), (1.0, 5)])
def test_quality_bucket(auc_value, bucket):
    assert quality_bucket(auc_value) == bucket


@pytest.mark.parametrize("target", [0.5, 0.75, 0.85, 0.95])
def test_calibration(target):
    ids, y = labeled_ids()
    m = make_calibrated_surrogate(target, seed=4)
    assert abs(auc(m.scores(ids, y), y) - target) <= 0.02


def test_perfect_model():
    ids, y = labeled_ids(2000)
    m = make_calibrated_surrogate(1.0)
    cats, _, _, s = predict_many(m, ids, y)
    assert auc(s, y) == 1.0
    assert np.all(cats[y == 0] == "NS")


def test_random_model():
    ids, y = labeled_ids()
    a, b = make_random_model(1), make_random_model(2)
    assert abs(auc(a.scores(ids, y), y) - 0.5) <= 0.03
    assert not np.allclose(a.scores(ids, y), b.scores(ids, y))
    # same distribution: both standard normal
    assert abs(a.scores(ids, y).std() - b.scores(ids, y).std()) < 0.05


def test_category_masses_match_binormal():
    ids, y = labeled_ids()
    m = make_calibrated_surrogate(0.85, seed=8)
    cats = predict_many(m, ids, y)[0]
    expected = m.category_masses()
    for k, v in expected.items():
        assert abs(np.mean(cats == k) - v) <= 0.03


def test_random_category_frequencies():
    ids, y = labeled_ids()
    m = make_random_model(5)
    cats = predict_many(m, ids, y)[0]
    for k, v in m.category_masses().items():
        assert abs(np.mean(cats == k) - v) <= 0.02


def test_threshold_consistency():
    ids, y = labeled_ids(3000)
    m = make_calibrated_surrogate(0.75, seed=2)
    cats, _, _, s = predict_many(m, ids, y)
    assert np.all((s >= m.theta_ys) == (cats == "YS"))
    assert np.all(((s >= m.theta_ew) & (s < m.theta_ys)) == (cats == "EW"))


def test_per_case_order_independence():
    cases = generate_cohort(WorldParams(cohort_size=50), seed=1)
    m = make_calibrated_surrogate(0.85, seed=3)
    forward = [predict(m, c) for c in cases]
    backward = [predict(m, c) for c in reversed(cases)][::-1]
    assert forward == backward
    batch = predict_many(m, [c.id for c in cases], [int(c.septic) for c in cases])
    assert [p.category for p in forward] == list(batch[0])


def test_higher_auc_larger_gap():
    ids, y = labeled_ids()
    gaps = []
    for target in (0.6, 0.75, 0.85, 0.95):
        s = make_calibrated_surrogate(target, seed=1).scores(ids, y)
        gaps.append(s[y == 1].mean() - s[y == 0].mean())
    assert np.all(np.diff(gaps) > 0)


def test_p3h_dominates_p0h():
    ids, y = labeled_ids(500)
    _, p0, p3, _ = predict_many(make_calibrated_surrogate(0.85), ids, y)
    assert np.all(p3 >= p0)


def test_out_of_range_target():
    with pytest.raises(DomainError):
        make_calibrated_surrogate(0.3)


def test_default_set_and_context():
    models = default_surrogates(0)
    assert set(models) == {"random", "lstm75", "lstm85", "lstm95", "coxphm95"}
    assert models["coxphm95"].model_type == "traditional-ml"
    ctx = ModelContext.from_model(models["lstm95"], "YS", 0.9, 0.95, visible=False)
    assert ctx.present and not ctx.visible and ctx.quality_bucket == 5
    assert not ModelContext.none().present
