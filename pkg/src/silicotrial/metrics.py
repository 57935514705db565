"""Evaluation quantities: AUC, bootstrap CIs, time errors, ROUGE, breakdown
tables, early-detection time reduction and record-set deviation reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import SCHEMA_VERSION
from ._seeding import derive_seed
from .errors import DataError, UndefinedMetricError
from .population import age_bucket, years_bucket

STAGES = ("preliminary", "final")
CATEGORIES = ("YS", "EW", "NS")


# --------------------------------------------------------------------------
# scalar metrics


def auc(scores, labels) -> float:
    """Mann-Whitney AUC by the rank method (ties count one half)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    point: float
    redrawn: int = 0  # resamples on which the statistic was undefined

    def __iter__(self):
        return iter((self.lo, self.hi))


def _take(records, idx):
    if isinstance(records, np.ndarray):
        return records[idx]
    return [records[i] for i in idx]


def bootstrap_ci(
    statistic: Callable,
    records,
    n_boot: int = 2000,
    level: float = 0.95,
    seed: int = 0,
    cluster: Callable | None = None,
) -> Interval:
    """Percentile bootstrap over records (or over clusters of records).

    Resamples on which ``statistic`` is undefined (raises
    UndefinedMetricError or returns NaN) are redrawn and counted.
    """
    n = len(records)
    if n == 0:
        raise DataError("bootstrap needs at least one record")
    point = float(statistic(records))
    rng = np.random.default_rng(derive_seed("bootstrap", seed))
    if cluster is not None:
        keys = [cluster(r) for r in records]
        groups: dict = {}
        for i, k in enumerate(keys):
            groups.setdefault(k, []).append(i)
        members = [np.array(v) for v in groups.values()]

        def draw():
            picks = rng.integers(0, len(members), len(members))
            return np.concatenate([members[p] for p in picks])
    else:
        def draw():
            return rng.integers(0, n, n)

    values = []
    redrawn = 0
    limit = 100 * n_boot
    while len(values) < n_boot:
        try:
            v = float(statistic(_take(records, draw())))
        except UndefinedMetricError:
            v = math.nan
        if math.isnan(v):
            redrawn += 1
            if redrawn > limit:
                raise UndefinedMetricError("statistic undefined on nearly every resample")
            continue
        values.append(v)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(values, [alpha, 1 - alpha])
    return Interval(float(lo), float(hi), point, redrawn)


def _pair(pred, truth):
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise DataError("pred and truth differ in length")
    return p, t


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def band_rate(pred, truth, band: float = 0.20) -> float:
    """Share of predictions within ``band`` x truth of the truth (inclusive)."""
    p, t = _pair(pred, truth)
    # the tiny slack keeps exact band edges (1.2 x truth) inside despite rounding
    return float(np.mean(np.abs(p - t) <= band * t * (1 + 1e-12)))


def _lcs(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge(candidate: Sequence, reference: Sequence, variant="1") -> tuple:
    """(recall, precision, f) for ROUGE-1 (clipped unigram overlap) or ROUGE-L."""
    cand, ref = list(candidate), list(reference)
    if not cand and not ref:
        return (1.0, 1.0, 1.0)
    if not cand or not ref:
        return (0.0, 0.0, 0.0)
    variant = str(variant).upper()
    if variant == "1":
        counts: dict = {}
        for tok in ref:
            counts[tok] = counts.get(tok, 0) + 1
        hit = 0
        for tok in cand:
            if counts.get(tok, 0) > 0:
                counts[tok] -= 1
                hit += 1
    elif variant == "L":
        hit = _lcs(cand, ref)
    else:
        raise DataError(f"unknown ROUGE variant {variant!r}")
    r, p = hit / len(ref), hit / len(cand)
    f = 2 * r * p / (r + p) if r + p > 0 else 0.0
    return (r, p, f)


def mean_rouge(candidates, references, variant="1") -> tuple:
    triples = np.array([rouge(c, r, variant) for c, r in zip(candidates, references)])
    return tuple(float(v) for v in triples.mean(axis=0))


def sequence_length_stats(sequences) -> dict:
    lengths = np.array([len(s) for s in sequences], dtype=float)
    if lengths.size == 0:
        return {"n": 0, "mean": None, "sd": None, "median": None}
    return {
        "n": int(lengths.size),
        "mean": float(lengths.mean()),
        "sd": float(lengths.std(ddof=1)) if lengths.size > 1 else 0.0,
        "median": float(np.median(lengths)),
    }


# --------------------------------------------------------------------------
# breakdowns


@dataclass(frozen=True)
class BreakdownDimension:
    name: str
    extractor: Callable  # (record, clinician, case) -> value


def _arm(rec, clin, case):
    return rec.setting_id


def default_dimensions() -> list:
    """O, AI, S, A, I, W, P, D, PT."""
    return [
        BreakdownDimension("O", lambda r, c, p: "overall"),
        BreakdownDimension("AI", _arm),
        BreakdownDimension("S", lambda r, c, p: c.sex),
        BreakdownDimension("A", lambda r, c, p: age_bucket(c.age)),
        BreakdownDimension("I", lambda r, c, p: c.institution_level),
        BreakdownDimension("W", lambda r, c, p: years_bucket(c.years_working)),
        BreakdownDimension("P", lambda r, c, p: c.class_of_position),
        BreakdownDimension("D", lambda r, c, p: c.department),
        BreakdownDimension("PT", lambda r, c, p: p.patient_type),
    ]


@dataclass(frozen=True)
class Cell:
    n: float  # record count, or weight sum for weighted cells
    value: float


def _decision(rec, stage):
    return rec.prelim_decision if stage == "preliminary" else rec.final_decision


def _prob(rec, stage):
    return rec.prelim_p if stage == "preliminary" else rec.final_p


def correctness(rec, case, stage, expected=False) -> float:
    """1/0 decision correctness, or P(correct) from the record's probability."""
    if expected:
        p = _prob(rec, stage)
        if p is None:
            raise DataError(f"record {rec.record_id} has no {stage} probability")
        return p if case.septic else 1.0 - p
    return float((_decision(rec, stage) == "septic") == case.septic)


def breakdown(records, cases: dict, clinicians: dict, dims, value_fn: Callable, weight_fn: Callable | None = None) -> dict:
    """Weighted mean of ``value_fn(record, case)`` per dimension value.

    Values that are None are skipped. Cells with no contributing records are
    simply absent from the table.
    """
    dims = dims or default_dimensions()
    sums = {d.name: {} for d in dims}
    for rec in records:
        case = cases[rec.case_id]
        v = value_fn(rec, case)
        if v is None:
            continue
        w = 1.0 if weight_fn is None else weight_fn(rec, case)
        if w == 0:
            continue
        clin = clinicians[rec.clinician_id]
        for d in dims:
            key = d.extractor(rec, clin, case)
            acc = sums[d.name].setdefault(key, [0.0, 0.0])
            acc[0] += w
            acc[1] += w * v
    return {name: {k: Cell(s[0], s[1] / s[0]) for k, s in sorted(cells.items(), key=lambda kv: str(kv[0]))} for name, cells in sums.items()}


def accuracy_breakdown(records, cases, clinicians, dims=None, stage="final", expected=False) -> dict:
    """Decision accuracy per dimension value (clinician decisions are binary)."""
    if stage not in STAGES:
        raise DataError(f"unknown stage {stage!r}")
    return breakdown(records, cases, clinicians, dims, lambda r, c: correctness(r, c, stage, expected))


def time_breakdown(records, cases, clinicians, dims=None, stage="final") -> dict:
    attr = "prelim_time" if stage == "preliminary" else "final_time"
    return breakdown(records, cases, clinicians, dims, lambda r, c: getattr(r, attr))


def ratio_breakdown(records, cases, clinicians, dims=None) -> dict:
    from .behavior import record_item_ratio

    def value(r, c):
        if r.item_ratio is None and r.click_sequence is None:
            return None
        return record_item_ratio(r)

    return breakdown(records, cases, clinicians, dims, value)


def arm_accuracy(records, cases, stage="final", expected=False) -> dict:
    """Accuracy per setting id."""
    out: dict = {}
    for rec in records:
        acc = out.setdefault(rec.setting_id, [0, 0.0])
        acc[0] += 1
        acc[1] += correctness(rec, cases[rec.case_id], stage, expected)
    return {k: v[1] / v[0] for k, v in sorted(out.items())}


# --------------------------------------------------------------------------
# time reduction


def detection_time(rec, case, stage) -> float:
    """Hours since admission at which the stage's decision is made."""
    minutes = rec.prelim_time if stage == "preliminary" else rec.prelim_time + rec.final_time
    return case.query_time + minutes / 60.0


@dataclass
class TimeReduction:
    stage: str
    table: dict  # arm -> {"YS"|"EW"|"NS"|"all": Cell}
    excluded_non_septic: int
    excluded_undetected: float

    def mean(self, arm, category="all"):
        cell = self.table.get(arm, {}).get(category)
        return None if cell is None else cell.value


def time_reduction(records, cases: dict, stage="final", expected=False) -> TimeReduction:
    """Onset minus detection time (hours; positive = earlier) per arm and model category.

    Only septic cases count. A record contributes when its decision is
    septic, or with weight P(septic) when ``expected`` is set.
    """
    sums: dict = {}
    non_septic = 0
    undetected = 0.0
    for rec in records:
        case = cases[rec.case_id]
        if not case.septic:
            non_septic += 1
            continue
        if case.onset_time is None:
            raise DataError(f"septic case {case.id} lacks onset_time")
        w = _prob(rec, stage) if expected else float(_decision(rec, stage) == "septic")
        if w is None:
            raise DataError(f"record {rec.record_id} has no {stage} probability")
        undetected += 1.0 - w
        if w == 0:
            continue
        red = case.onset_time - detection_time(rec, case, stage)
        keys = ["all"] + ([rec.context.prediction] if rec.context.present else [])
        arm = sums.setdefault(rec.setting_id, {})
        for k in keys:
            acc = arm.setdefault(k, [0.0, 0.0])
            acc[0] += w
            acc[1] += w * red
    table = {a: {k: Cell(s[0], s[1] / s[0]) for k, s in cells.items()} for a, cells in sorted(sums.items())}
    return TimeReduction(stage, table, non_septic, undetected)


# --------------------------------------------------------------------------
# deviation reports


@dataclass
class DeviationRow:
    category: str
    characteristic: str
    reference: float | None
    candidate: float | None

    @property
    def deviation(self):
        if self.reference is None or self.candidate is None:
            return None
        return abs(self.candidate - self.reference)


@dataclass
class DeviationReport:
    quantity: str
    stage: str
    rows: list

    @property
    def mean_deviation(self) -> float:
        devs = [r.deviation for r in self.rows if r.deviation is not None]
        return float(np.mean(devs)) if devs else math.nan

    @property
    def flagged(self) -> list:
        return [r for r in self.rows if r.deviation is None]


def _rows_from(ref_table, cand_table, scale=1.0):
    rows = []
    for dim in ref_table.keys() | cand_table.keys():
        ref, cand = ref_table.get(dim, {}), cand_table.get(dim, {})
        for key in sorted(ref.keys() | cand.keys(), key=str):
            rows.append(
                DeviationRow(
                    dim,
                    str(key),
                    ref[key].value * scale if key in ref else None,
                    cand[key].value * scale if key in cand else None,
                )
            )
    order = {d.name: i for i, d in enumerate(default_dimensions())}
    rows.sort(key=lambda r: (order.get(r.category, 99), r.category, r.characteristic))
    return rows


def compare_record_sets(reference, candidate, cases, clinicians, dims=None, stage="final", quantity="accuracy") -> DeviationReport:
    """Per-cell absolute differences; accuracies in percentage points."""
    if quantity == "accuracy":
        ref = accuracy_breakdown(reference, cases, clinicians, dims, stage)
        cand = accuracy_breakdown(candidate, cases, clinicians, dims, stage)
        scale = 100.0
    elif quantity == "time":
        ref = time_breakdown(reference, cases, clinicians, dims, stage)
        cand = time_breakdown(candidate, cases, clinicians, dims, stage)
        scale = 1.0
    elif quantity == "ratio":
        ref = ratio_breakdown(reference, cases, clinicians, dims)
        cand = ratio_breakdown(candidate, cases, clinicians, dims)
        scale = 100.0
    else:
        raise DataError(f"unknown quantity {quantity!r}")
    return DeviationReport(quantity, stage, _rows_from(ref, cand, scale))


# --------------------------------------------------------------------------
# report


@dataclass
class MetricsReport:
    accuracy: dict = field(default_factory=dict)  # stage -> breakdown
    time: dict = field(default_factory=dict)
    ratio: dict = field(default_factory=dict)
    aucs: dict = field(default_factory=dict)  # stage -> Interval over P(septic) vs truth
    time_reduction: dict = field(default_factory=dict)  # stage -> TimeReduction
    sequence_lengths: dict = field(default_factory=dict)
    deviations: list = field(default_factory=list)
    seed: int = 0

    def summary(self) -> dict:
        def cells(table):
            return {dim: {str(k): {"n": c.n, "value": c.value} for k, c in vals.items()} for dim, vals in table.items()}

        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "accuracy": {s: cells(t) for s, t in self.accuracy.items()},
            "time_minutes": {s: cells(t) for s, t in self.time.items()},
            "item_ratio": cells(self.ratio),
            "auc": {s: {"point": i.point, "lo": i.lo, "hi": i.hi, "redrawn": i.redrawn} for s, i in self.aucs.items()},
            "time_reduction_hours": {
                s: {arm: {k: {"n": c.n, "value": c.value} for k, c in row.items()} for arm, row in tr.table.items()}
                for s, tr in self.time_reduction.items()
            },
            "sequence_lengths": self.sequence_lengths,
            "deviations": [
                {"quantity": d.quantity, "stage": d.stage, "mean_deviation": d.mean_deviation, "flagged": len(d.flagged)}
                for d in self.deviations
            ],
        }

    def write(self, directory) -> None:
        """One JSON summary plus CSV tables."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        header = f"#schema_version={SCHEMA_VERSION} seed={self.seed}"
        with open(d / "breakdown.csv", "w", newline="") as fh:
            fh.write(header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "stage", "dimension", "value", "n", "mean"])
            for quantity, tables in (("accuracy", self.accuracy), ("time_minutes", self.time)):
                for stage, table in tables.items():
                    for dim, vals in table.items():
                        for k, c in vals.items():
                            w.writerow([quantity, stage, dim, k, repr(c.n), repr(c.value)])
            for dim, vals in self.ratio.items():
                for k, c in vals.items():
                    w.writerow(["item_ratio", "final", dim, k, repr(c.n), repr(c.value)])
        with open(d / "time_reduction.csv", "w", newline="") as fh:
            fh.write(header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "arm", "category", "n", "hours"])
            for stage, tr in self.time_reduction.items():
                for arm, row in tr.table.items():
                    for k, c in row.items():
                        w.writerow([stage, arm, k, repr(c.n), repr(c.value)])
        for dev in self.deviations:
            write_deviation_csv(dev, d / f"deviation_{dev.quantity}_{dev.stage}.csv", self.seed)


def write_deviation_csv(report: DeviationReport, path, seed: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"#schema_version={SCHEMA_VERSION} seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "characteristic", "reference", "candidate", "deviation"])
        for r in report.rows:
            w.writerow([r.category, r.characteristic, _fmt(r.reference), _fmt(r.candidate), _fmt(r.deviation)])


def _fmt(v):
    return "" if v is None else repr(float(v))


def evaluate(records, cases: dict, clinicians: dict, dims=None, n_boot: int = 500, seed: int = 0, reference=None) -> MetricsReport:
    """Every table the pipeline reports for one record set."""
    records = list(records)
    rep = MetricsReport(seed=seed)
    for stage in STAGES:
        rep.accuracy[stage] = accuracy_breakdown(records, cases, clinicians, dims, stage)
        rep.time[stage] = time_breakdown(records, cases, clinicians, dims, stage)
        rep.time_reduction[stage] = time_reduction(records, cases, stage)
        probs = [(_prob(r, stage), cases[r.case_id].septic) for r in records if _prob(r, stage) is not None]
        if probs and len({y for _, y in probs}) == 2:
            arr = np.array(probs, dtype=float)
            rep.aucs[stage] = bootstrap_ci(lambda a: auc(a[:, 0], a[:, 1]), arr, n_boot=n_boot, seed=derive_seed("auc", seed, stage))
    rep.ratio = ratio_breakdown(records, cases, clinicians, dims)
    seqs = [r.click_sequence for r in records if r.click_sequence is not None]
    if seqs:
        rep.sequence_lengths = sequence_length_stats(seqs)
    if reference is not None:
        reference = list(reference)
        for stage in STAGES:
            rep.deviations.append(compare_record_sets(reference, records, cases, clinicians, dims, stage, "accuracy"))
            rep.deviations.append(compare_record_sets(reference, records, cases, clinicians, dims, stage, "time"))
    return rep
