"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary ends with one
PASS/FAIL line per criterion. Running this file as a script does the same.
"""

import dataclasses
import time

import numpy as np
import pytest

from silicotrial.behavior import SimulatorConfig, simulate_batch, train_simulator
from silicotrial.features import METADATA_SLOTS, NOT_SHOWN, encode_model
from silicotrial.gbt import fit_gbt
from silicotrial.io import write_records
from silicotrial.metrics import arm_accuracy, auc, band_rate, mae, rouge, time_reduction
from silicotrial.pca import fit_pca
from silicotrial.population import REFERENCE_COUNTS, age_bucket, default_spec, generate_population, years_bucket
from silicotrial.surrogates import ModelContext, default_surrogates, make_calibrated_surrogate, make_random_model
from silicotrial.synth import WorldParams, generate_group_cohorts, generate_oracle_records, inject_corruption, oracle_expected
from silicotrial.trial import build_default_plan, run_trial, setting_contexts, validate_records


def tally(profiles):
    out = {k: {} for k in REFERENCE_COUNTS}
    for p in profiles:
        for name, v in (
            ("sex", p.sex),
            ("age", age_bucket(p.age)),
            ("years", years_bucket(p.years_working)),
            ("position", p.class_of_position),
            ("institution", p.institution_level),
            ("department", p.department),
        ):
            out[name][v] = out[name].get(v, 0) + 1
    return out


def test_criterion_1_demographics(record_property):
    started = time.perf_counter()
    small = generate_population(125, seed=7)
    elapsed = time.perf_counter() - started
    got = tally(small)
    worst = max(abs(got[n].get(v, 0) - c) for n, t in REFERENCE_COUNTS.items() for v, c in t.items())
    big = tally(generate_population(100_000, seed=7))
    frac_err = max(
        abs(big[n].get(v, 0) / 100_000 - f) for n, t in default_spec().categories().items() for v, f in t.items()
    )
    record_property("detail", f"max count error {worst} (<=8), max fraction error {frac_err:.4f} (<=0.01), n=125 in {elapsed:.3f}s")
    assert worst <= 8 and frac_err <= 0.01 and elapsed < 1.0


def test_criterion_2_surrogate_calibration(record_property):
    started = time.perf_counter()
    rng = np.random.default_rng(2)
    ids = [f"case{i}" for i in range(10_000)]
    y = (rng.random(10_000) < 0.5).astype(int)
    errors = {}
    for target in (0.5, 0.75, 0.85, 0.95):
        m = make_calibrated_surrogate(target, seed=int(target * 100))
        errors[target] = abs(auc(m.scores(ids, y), y) - target)
    rand_err = abs(auc(make_random_model(3).scores(ids, y), y) - 0.5)
    elapsed = time.perf_counter() - started
    record_property("detail", f"max |AUC-target| {max(errors.values()):.4f} (<=0.02), random {rand_err:.4f} (<=0.03), {elapsed:.2f}s")
    assert max(errors.values()) <= 0.02 and rand_err <= 0.03 and elapsed < 5.0


def brute_auc(s, y):
    d = s[y == 1][:, None] - s[y == 0][None, :]
    return (np.sum(d > 0) + 0.5 * np.sum(d == 0)) / d.size


# ten hand-counted ROUGE cases: (candidate, reference, variant, recall, precision)
ROUGE_FIXTURE = [
    ("ABC", "ABC", "1", 1, 1),
    ("AC", "ABC", "1", 2 / 3, 1),
    ("BAC", "ABC", "L", 2 / 3, 2 / 3),
    ("BAC", "ABC", "1", 1, 1),
    ("A", "ABCD", "1", 1 / 4, 1),
    ("ABCD", "A", "L", 1, 1 / 4),
    ("XY", "ABC", "1", 0, 0),
    ("DCBA", "ABCD", "L", 1 / 4, 1 / 4),
    ("AAB", "AB", "1", 1, 2 / 3),
    ("ACBD", "ABCD", "L", 3 / 4, 3 / 4),
]


def test_criterion_3_metric_oracles(record_property):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 501))
        s = np.round(rng.normal(size=n), int(rng.integers(0, 4)))
        y = rng.random(n) < rng.uniform(0.1, 0.9)
        y[:2] = [True, False]
        worst = max(worst, abs(auc(s, y) - brute_auc(s, y.astype(int))))
    rouge_ok = True
    for cand, ref, variant, r, p in ROUGE_FIXTURE:
        got = rouge(list(cand), list(ref), variant)
        f = 0.0 if r + p == 0 else 2 * r * p / (r + p)
        rouge_ok &= bool(np.allclose(got, (r, p, f), atol=1e-12))
    t = rng.uniform(0.5, 10, 400)
    pred = t * rng.uniform(0.6, 1.4, 400)
    exact = mae(pred, t) == np.mean(np.abs(pred - t)) and band_rate(pred, t) == np.mean(np.abs(pred - t) <= 0.2 * t * (1 + 1e-12))
    record_property("detail", f"AUC max error {worst:.1e} (<=1e-12), ROUGE fixture {'ok' if rouge_ok else 'mismatch'}, MAE/band {'exact' if exact else 'mismatch'}")
    assert worst <= 1e-12 and rouge_ok and exact


def test_criterion_4_pca(record_property):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(400, 2474)) * np.linspace(3, 0.5, 2474)
    pca = fit_pca(x, k=17)
    ortho = np.max(np.abs(pca.components @ pca.components.T - np.eye(17)))
    ordered = bool(np.all(np.diff(pca.explained_variance_ratio) <= 0))
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0].T
    plane = rng.normal(size=(200, 2)) @ basis + rng.normal(size=10)
    vsum = fit_pca(plane, k=2).explained_variance_ratio.sum()
    record_property("detail", f"orthonormality {ortho:.1e} (<=1e-9), ordered {ordered}, plane variance sum {vsum:.12f}")
    assert ortho <= 1e-9 and ordered and abs(vsum - 1) <= 1e-6


def test_criterion_5_learner(record_property):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4000, 6))
    y = ((x[:, 1] > 0.2) ^ (x[:, 3] < -0.5)).astype(float)
    m = fit_gbt(x[:2000], y[:2000], "logistic")
    held = auc(m.predict(x[2000:]), y[2000:])
    fixtures = [m.train_loss]
    z = np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2]
    fixtures.append(fit_gbt(x, z + rng.normal(size=4000), "squared").train_loss)
    noisy = (rng.random(4000) < 1 / (1 + np.exp(-z))).astype(float)
    fixtures.append(fit_gbt(x, noisy, "logistic", {"learning_rate": 0.8, "max_depth": 6, "min_leaf": 1}).train_loss)
    mono = all(np.all(np.diff(f) <= 1e-12) for f in fixtures)
    record_property("detail", f"held-out AUC {held:.4f} (>=0.99), training loss non-increasing on {len(fixtures)} fixtures: {mono}")
    assert held >= 0.99 and mono


def test_criterion_6_trial_shape(record_property, tmp_path):
    started = time.perf_counter()
    params = WorldParams(cohort_size=120)
    plan = build_default_plan(default_surrogates(0))
    clin = generate_population(125, seed=6)
    cohorts = generate_group_cohorts(params, plan.groups, 6)
    oracle = [o.record for o in generate_oracle_records(clin, cohorts, plan, params, 6)]
    cases = {c.id: c for g in cohorts.values() for c in g}
    cfg = SimulatorConfig(search_budget=0, base_params={"max_depth": 4, "n_rounds": 100})
    sim = train_simulator(oracle, {c.id: c for c in clin}, cases, "specialized", 6, cfg)
    rs = run_trial(plan, sim, clin, cohorts, 6)
    elapsed = time.perf_counter() - started
    write_records(tmp_path / "a.csv", rs.records, 6)
    write_records(tmp_path / "b.csv", run_trial(plan, sim, clin, cohorts, 6).records, 6)
    perm = np.random.default_rng(6).permutation(len(rs))
    write_records(tmp_path / "c.csv", run_trial(plan, sim, clin, cohorts, 6, order=perm, n_jobs=4).records, 6)
    a, b, c = ((tmp_path / f).read_bytes() for f in ("a.csv", "b.csv", "c.csv"))
    record_property("detail", f"{len(rs)} records, rerun identical {a == b}, permuted identical {a == c}, train+simulate {elapsed:.1f}s (<300)")
    assert len(rs) == 7500 and a == b and a == c and elapsed < 300


# --------------------------------------------------------------------------
# planted effects

TRAIN_PARAMS = {"max_depth": 6, "n_rounds": 300, "learning_rate": 0.05, "min_leaf": 50}
LSTM = ("lstm75", "lstm85", "lstm95")


@pytest.fixture(scope="module")
def recovery():
    params = WorldParams()
    plan = build_default_plan(default_surrogates(0))
    clin = generate_population(2000, seed=11)
    cohorts = generate_group_cohorts(params, plan.groups, 13)
    oracle = [o.record for o in generate_oracle_records(clin, cohorts, plan, params, 17)]
    cases = {c.id: c for g in cohorts.values() for c in g}
    cfg = SimulatorConfig(search_budget=0, cv_folds=3, base_params=TRAIN_PARAMS)
    sim = train_simulator(oracle, {c.id: c for c in clin}, cases, "specialized", 1, cfg)
    # a fresh trial: new clinicians and new cases
    test_clin = generate_population(500, seed=21)
    test_cohorts = generate_group_cohorts(params, plan.groups, 23)
    test_cases = {c.id: c for g in test_cohorts.values() for c in g}
    rs = run_trial(plan, sim, test_clin, test_cohorts, 29)
    truth = oracle_expected(rs.records, {c.id: c for c in test_clin}, test_cases, params)
    return rs.records, truth, test_cases


def effects(acc):
    """Planted contrasts in accuracy points."""
    return {
        "quality (lstm95 - random, blinded)": 100 * (acc["lstm95-invisible"] - acc["random-invisible"]),
        "random-arm uplift (random - no model)": 100 * (acc["random-invisible"] - acc["no-model"]),
        "visibility (visible - blinded, mean over lstm)": 100 * np.mean([acc[f"{m}-visible"] - acc[f"{m}-invisible"] for m in LSTM]),
    }


@pytest.mark.slow
def test_criterion_7_planted_effects(record_property, recovery):
    records, truth, cases = recovery
    lines, ok = [], True
    per_arm = min(sum(r.setting_id == s for r in records) for s in {r.setting_id for r in records})
    ok &= per_arm >= 1000
    for stage in ("preliminary", "final"):
        sim_acc = arm_accuracy(records, cases, stage, expected=True)
        ora_acc = arm_accuracy(truth, cases, stage, expected=True)
        order = [sim_acc[f"{m}-invisible"] for m in ("random",) + LSTM]
        ok &= bool(np.all(np.diff(order) > 0))
        for name, planted in effects(ora_acc).items():
            got = effects(sim_acc)[name]
            ok &= planted > 0 and got > 0 and abs(got - planted) <= 1.5
            lines.append(f"{stage} {name}: {got:+.2f} vs {planted:+.2f}")
        sim_tr = time_reduction(records, cases, stage, expected=True)
        ora_tr = time_reduction(truth, cases, stage, expected=True)
        worst_h = max(
            abs((sim_tr.mean(a) - sim_tr.mean("no-model")) - (ora_tr.mean(a) - ora_tr.mean("no-model")))
            for a in sim_tr.table
        )
        ok &= worst_h <= 0.05
        lines.append(f"{stage} time-reduction contrast error {worst_h:.3f} h")
    # sampled decisions follow the planted quality ordering too
    sampled = arm_accuracy(records, cases, "final")
    ok &= sampled["random-invisible"] < sampled["lstm95-invisible"]
    record_property("detail", f"{per_arm} records/arm; " + "; ".join(lines))
    assert ok, lines


# --------------------------------------------------------------------------
# invariants over randomized probes


def probe_rows(world, n, rng):
    ctx = setting_contexts(world.plan, world.cohorts)
    picks = rng.choice(len(world.records), n, replace=False)
    recs = [world.records[i] for i in picks]
    clin = [world.clin_by_id[r.clinician_id].with_order(r.diagnosis_order) for r in recs]
    return recs, clin, [world.cases[r.case_id] for r in recs], [ctx[r.setting_id, r.case_id] for r in recs]


def test_criterion_8_invariants(record_property, world, specialized, generalized):
    rng = np.random.default_rng(8)
    n = 1000
    recs, clin, cases, ctxs = probe_rows(world, n, rng)
    seeds = rng.integers(0, 2**63, n).tolist()

    # stage: advanced panels perturbed
    perturbed = []
    for c in cases:
        ts = c.timeseries_embedding.copy()
        ts[110:] = rng.normal(scale=5.0, size=550)
        perturbed.append(dataclasses.replace(c, timeseries_embedding=ts, advanced={k: v + 3 for k, v in c.advanced.items()}))
    a = simulate_batch(specialized, clin, cases, ctxs, seeds)
    b = simulate_batch(specialized, clin, perturbed, ctxs, seeds)
    keys = ("prelim_decision", "prelim_time", "prelim_p")
    stage_bad = sum(any(x[k] != y[k] for k in keys) for x, y in zip(a, b))
    final_moved = sum(x["final_p"] != y["final_p"] for x, y in zip(a, b))

    # generalized: the whole patient block replaced
    others = [cases[i] for i in rng.permutation(n)]
    scrambled = [
        dataclasses.replace(
            o,
            id=c.id,
            timeseries_embedding=rng.normal(size=660),
            text_embedding=rng.normal(size=768),
            image_embedding=rng.normal(size=1042),
        )
        for c, o in zip(cases, others)
    ]
    g1 = simulate_batch(generalized, clin, cases, ctxs, seeds)
    g2 = simulate_batch(generalized, clin, scrambled, ctxs, seeds)
    gen_bad = sum(x != y for x, y in zip(g1, g2))

    # blinding: invisible contexts from arbitrary models encode identically
    blind_bad = 0
    swapped = []
    for ctx in ctxs:
        if not ctx.present or ctx.visible:
            swapped.append(ctx)
            continue
        other = make_calibrated_surrogate(float(rng.uniform(0.5, 1.0)), model_type=str(rng.choice(["deep-learning", "traditional-ml"])))
        alt = ModelContext.from_model(other, ctx.prediction, ctx.p0h, ctx.p3h, visible=False)
        enc, alt_enc = encode_model(ctx), encode_model(alt)
        blind_bad += int(not np.all(enc[METADATA_SLOTS] == NOT_SHOWN) or not np.array_equal(enc, alt_enc))
        swapped.append(alt)
    n_blind = sum(c.present and not c.visible for c in ctxs)
    s2 = simulate_batch(specialized, clin, cases, swapped, seeds)
    blind_bad += sum(x != y for x, y in zip(a, s2))

    record_property(
        "detail",
        f"{n} probes each: stage violations {stage_bad}, generalized violations {gen_bad}, "
        f"blinding violations {blind_bad} ({n_blind} blinded contexts); final outputs moved on {final_moved} probes",
    )
    assert stage_bad == 0 and gen_bad == 0 and blind_bad == 0 and n_blind > 0


def test_criterion_9_validation_filter(record_property, world):
    clean = validate_records(world.records, world.clin_by_id)
    bad, corrupted = inject_corruption(world.records, 0.1, seed=9)
    res = validate_records(bad, world.clin_by_id)
    rejected = {r.record_id for r, _ in res.rejected}
    tp = len(rejected & corrupted)
    precision = tp / len(rejected) if rejected else 0.0
    recall = tp / len(corrupted)
    reasons = sorted({reason for _, reason in res.rejected})
    record_property("detail", f"{len(corrupted)} injected, precision {precision:.3f}, recall {recall:.3f}, reasons {reasons}")
    assert not clean.rejected and precision == 1.0 and recall == 1.0


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
