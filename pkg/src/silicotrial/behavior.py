"""Two-stage clinician-behavior simulator.

A trained simulator maps (clinician, AI-model context, patient) to a
preliminary decision and time, an examination click sequence (specialized
variant) or advanced-item ratio (generalized variants), and a final decision
and time. Decisions are logistic boosted trees, times are squared-loss
boosted trees on log(minutes).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import SCHEMA_VERSION
from ._seeding import derive_seed, rng_for
from .errors import ConfigurationError, MissingInputError, SchemaError, TrainingError
from .features import CLINICIAN_WIDTH, MODEL_WIDTH, REDUCED_WIDTH, encode_clinicians, encode_models, encode_patients
from .gbt import GbtModel, fit_gbt, train_gbt
from .pca import PcaModel, fit_pca, load_pca, project, save_pca
from .population import largest_remainder

VARIANTS = ("specialized", "generalized-0h", "generalized-3h")
VOCABULARY = (
    "history-fundamental",
    "complete-blood-count",
    "arterial-blood-gas",
    "haemostatic-function",
    "ct-note",
    "mri-note",
    "ultrasound-note",
    "xray-note",
    "chest-xray-image",
)
ADVANCED_ITEMS = VOCABULARY[1:]
END = "<end>"
RATIO_BIN = 0.05
N_RATIO_BINS = int(round(1 / RATIO_BIN)) + 1


@dataclass
class SimulatorConfig:
    search_budget: int = 30
    cv_folds: int = 5
    search_rows: int | None = None  # subsample for the hyperparameter search
    base_params: dict = field(default_factory=dict)  # starting point / fixed params when budget is 0
    split: tuple = (7, 2, 1)
    pca_components: int = REDUCED_WIDTH
    # sub-models of the sequence and ratio heads use fixed hyperparameters
    aux_params: dict = field(default_factory=lambda: {"max_depth": 3, "n_rounds": 80, "learning_rate": 0.15, "min_leaf": 10})
    sequence_max_records: int | None = 20000
    time_floor: float = 0.1  # minutes
    decision_mode: str = "sample"  # or "argmax"

    def validate(self):
        if self.decision_mode not in ("sample", "argmax"):
            raise ConfigurationError(f"unknown decision_mode {self.decision_mode!r}")
        if self.time_floor <= 0:
            raise ConfigurationError("time_floor must be > 0")
        if len(self.split) != 3 or min(self.split) < 0 or sum(self.split) <= 0:
            raise ConfigurationError("split needs three non-negative ratios")


def _horizon(variant):
    return "3h" if variant == "generalized-3h" else "0h"


# --------------------------------------------------------------------------
# multiclass heads


@dataclass
class OneVsRest:
    """Independent logistic GBTs per class, renormalized at prediction."""

    classes: tuple
    models: list  # GbtModel or None for a class never observed

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cols = [np.zeros(len(x)) if m is None else m.predict(x) for m in self.models]
        p = np.column_stack(cols) + 1e-12
        return p / p.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {"classes": list(self.classes), "models": [None if m is None else m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["classes"]), [None if m is None else GbtModel.from_dict(m) for m in d["models"]])


def fit_one_vs_rest(x, y, classes, params) -> OneVsRest:
    y = np.asarray(y)
    models = []
    for k in classes:
        target = (y == k).astype(float)
        models.append(fit_gbt(x, target, "logistic", params) if target.any() else None)
    return OneVsRest(tuple(classes), models)


def _sample_rows(p, u) -> np.ndarray:
    """Inverse-CDF draw of one column index per row."""
    c = np.cumsum(p, axis=1)
    c /= c[:, -1:]
    return np.minimum((u[:, None] > c).sum(axis=1), p.shape[1] - 1)


@dataclass
class SequenceModel:
    """Autoregressive next-item model over ``VOCABULARY + (END,)``.

    Input at step t: context (clinician + model blocks) ⊕ t ⊕ bag of items
    already clicked ⊕ index of the last item (-1 at the start).
    """

    head: OneVsRest
    context_width: int

    @staticmethod
    def step_features(context, t, bag, last):
        n = len(context)
        return np.hstack([context, np.full((n, 1), float(t)), bag, last[:, None].astype(float)])

    def generate(self, context, uniforms, mode="sample") -> list:
        context = np.asarray(context, dtype=float)
        n, v = len(context), len(VOCABULARY)
        bag = np.zeros((n, v))
        last = np.full(n, -1)
        alive = np.ones(n, dtype=bool)
        seqs = [[] for _ in range(n)]
        for t in range(v):
            rows = np.flatnonzero(alive)
            if rows.size == 0:
                break
            p = self.head.predict_proba(self.step_features(context[rows], t, bag[rows], last[rows]))
            p[:, :v] *= 1.0 - bag[rows]  # no repeats
            if mode == "argmax":
                pick = np.argmax(p, axis=1)
            else:
                pick = _sample_rows(p, uniforms[rows, t])
            for r, k in zip(rows, pick):
                if k == v:
                    alive[r] = False
                else:
                    seqs[r].append(VOCABULARY[k])
                    bag[r, k] = 1.0
                    last[r] = k
        return [tuple(s) for s in seqs]

    def to_dict(self):
        return {"context_width": self.context_width, "head": self.head.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(OneVsRest.from_dict(d["head"]), int(d["context_width"]))


def train_sequence_model(contexts, sequences, seed: int = 0, params: dict | None = None, vocabulary=VOCABULARY) -> SequenceModel:
    """Fit the next-item model on (context row, click sequence) pairs."""
    if not vocabulary:
        raise ConfigurationError("empty examination-item vocabulary")
    if tuple(vocabulary) != VOCABULARY:
        raise ConfigurationError("sequence model is defined over the fixed examination-item vocabulary")
    contexts = np.asarray(contexts, dtype=float)
    v = len(VOCABULARY)
    index = {tok: i for i, tok in enumerate(VOCABULARY)}
    feats, targets = [], []
    for ctx, seq in zip(contexts, sequences):
        bag = np.zeros(v)
        last = -1
        for t in range(min(len(seq), v) + 1):
            if t == v:
                break  # vocabulary exhausted: no terminator step
            target = index[seq[t]] if t < len(seq) else v
            feats.append(np.concatenate([ctx, [t], bag, [last]]))
            targets.append(target)
            if t < len(seq):
                bag[target] = 1.0
                last = target
    if not feats:
        raise TrainingError("no click sequences to train on")
    p = {**SimulatorConfig().aux_params, **(params or {})}
    head = fit_one_vs_rest(np.vstack(feats), np.array(targets), list(range(v + 1)), p)
    return SequenceModel(head, contexts.shape[1])


# --------------------------------------------------------------------------
# simulator


@dataclass
class TrainedSimulator:
    variant: str
    prelim_decision: GbtModel
    prelim_time: GbtModel
    final_decision: GbtModel
    final_time: GbtModel
    sequence_model: SequenceModel | None = None
    item_ratio: OneVsRest | None = None
    pca: PcaModel | None = None
    config: SimulatorConfig = field(default_factory=SimulatorConfig)
    seed: int = 0
    report: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    @property
    def uses_patient(self) -> bool:
        return self.variant == "specialized"

    @property
    def input_width(self) -> int:
        return CLINICIAN_WIDTH + MODEL_WIDTH + (REDUCED_WIDTH if self.uses_patient else 0)


def _patient_block(pca, cases, stage, cache=None):
    """Reduced patient rows, computed once per distinct case."""
    cache = {} if cache is None else cache
    todo = {}
    for c in cases:
        if (c.id, stage) not in cache:
            todo.setdefault(c.id, c)
    todo = list(todo.values())
    if todo:
        rows = project(pca, encode_patients(todo, stage))
        for c, r in zip(todo, rows):
            cache[c.id, stage] = r
    return np.vstack([cache[c.id, stage] for c in cases])


def build_matrix(variant, pca, clinicians, contexts, cases, stage, cache=None) -> np.ndarray:
    """Model inputs: clinician (8) ⊕ model (9) [⊕ reduced patient (17)]."""
    blocks = [encode_clinicians(clinicians), encode_models(contexts, _horizon(variant))]
    if variant == "specialized":
        blocks.append(_patient_block(pca, cases, stage, cache))
    return np.hstack(blocks)


def split_records(records, ratios=(7, 2, 1), seed: int = 0, key=None):
    """Stratified train/valid/test split.

    Strata default to (final decision, setting). Global split sizes follow
    largest-remainder rounding exactly; each stratum is within one record of
    its exact share.
    """
    records = list(records)
    n = len(records)
    if n < 10:
        raise TrainingError(f"need at least 10 records to split, got {n}")
    key = key or (lambda r: (r.final_decision, r.setting_id))
    ratios = np.asarray(ratios, dtype=float) / float(np.sum(ratios))
    target = largest_remainder(n, ratios)

    strata: dict = {}
    for i, r in enumerate(records):
        strata.setdefault(key(r), []).append(i)
    names = sorted(strata, key=repr)
    small = [s for s in names if len(strata[s]) < 10]
    if small:
        warnings.warn(f"{len(small)} strata have fewer than 10 records; their split ratios are approximate", RuntimeWarning, stacklevel=2)

    alloc = {}
    remainders = {}
    for s in names:
        exact = len(strata[s]) * ratios
        alloc[s] = np.floor(exact).astype(int)
        remainders[s] = exact - alloc[s]
    deficit = target - sum(alloc.values())
    # hand leftover units to strata/splits by largest remainder, respecting global targets
    units = sorted(
        ((remainders[s][k], si, k) for si, s in enumerate(names) for k in range(3)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    left = {s: len(strata[s]) - alloc[s].sum() for s in names}
    for _, si, k in units:
        s = names[si]
        if left[s] > 0 and deficit[k] > 0:
            alloc[s][k] += 1
            left[s] -= 1
            deficit[k] -= 1
    for s in names:  # anything unplaced goes wherever global room remains
        while left[s] > 0:
            k = int(np.argmax(deficit))
            alloc[s][k] += 1
            left[s] -= 1
            deficit[k] -= 1

    parts = ([], [], [])
    for s in names:
        idx = np.array(strata[s])
        rng_for("split", seed, repr(s)).shuffle(idx)
        cuts = np.cumsum(alloc[s])[:-1]
        for k, chunk in enumerate(np.split(idx, cuts)):
            parts[k].extend(int(i) for i in chunk)
    return tuple([records[i] for i in sorted(p)] for p in parts)


def _decision_auc(model, x, y):
    from .metrics import auc

    if len(y) == 0 or y.min() == y.max():
        return None
    return auc(model.predict(x), y)


def train_simulator(
    records,
    clinicians: dict,
    cases: dict,
    variant: str = "specialized",
    seed: int = 0,
    config: SimulatorConfig | None = None,
) -> TrainedSimulator:
    """Fit every sub-model of ``variant`` on validated records.

    ``clinicians`` and ``cases`` map ids to profiles and PatientCase objects.
    """
    config = config or SimulatorConfig()
    config.validate()
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    records = list(records)
    if not records:
        raise TrainingError("no records left to train on")
    train, valid, test = split_records(records, config.split, derive_seed("split", seed))

    pca = None
    if variant == "specialized":
        seen = sorted({r.case_id for r in train})
        pca = fit_pca(encode_patients([cases[c] for c in seen], "final"), k=config.pca_components, seed=seed)

    cache: dict = {}

    def design(recs, stage):
        profs = [clinicians[r.clinician_id].with_order(r.diagnosis_order) for r in recs]
        return build_matrix(variant, pca, profs, [r.context for r in recs], [cases[r.case_id] for r in recs], stage, cache)

    def targets(recs):
        return (
            np.array([r.prelim_decision == "septic" for r in recs], dtype=float),
            np.log(np.array([r.prelim_time for r in recs], dtype=float)),
            np.array([r.final_decision == "septic" for r in recs], dtype=float),
            np.log(np.array([r.final_time for r in recs], dtype=float)),
        )

    xp, xf = design(train, "preliminary"), design(train, "final")
    yp, tp, yf, tf = targets(train)

    def fit(x, y, loss, name):
        return train_gbt(
            x, y, loss,
            hp_search_budget=config.search_budget,
            cv_folds=config.cv_folds,
            seed=derive_seed(name, seed),
            search_rows=config.search_rows,
            base_params=config.base_params,
        )

    sim = TrainedSimulator(
        variant=variant,
        prelim_decision=fit(xp, yp, "logistic", "prelim-decision"),
        prelim_time=fit(xp, tp, "squared", "prelim-time"),
        final_decision=fit(xf, yf, "logistic", "final-decision"),
        final_time=fit(xf, tf, "squared", "final-time"),
        pca=pca,
        config=config,
        seed=seed,
    )

    ctx_width = CLINICIAN_WIDTH + MODEL_WIDTH
    if variant == "specialized":
        seq_recs = [r for r in train if r.click_sequence is not None]
        if config.sequence_max_records and len(seq_recs) > config.sequence_max_records:
            keep = np.sort(rng_for("seq-rows", seed).choice(len(seq_recs), config.sequence_max_records, replace=False))
            seq_recs = [seq_recs[i] for i in keep]
        if not seq_recs:
            raise TrainingError("specialized variant needs click sequences")
        sim.sequence_model = train_sequence_model(
            design(seq_recs, "final")[:, :ctx_width], [r.click_sequence for r in seq_recs], seed, config.aux_params
        )
    else:
        ratio_recs = [r for r in train if r.item_ratio is not None or r.click_sequence is not None]
        if not ratio_recs:
            raise TrainingError("generalized variants need item ratios or click sequences")
        bins = [ratio_bin(record_item_ratio(r)) for r in ratio_recs]
        sim.item_ratio = fit_one_vs_rest(design(ratio_recs, "final"), bins, list(range(N_RATIO_BINS)), config.aux_params)

    sim.report = _training_report(sim, train, valid, test, design, targets)
    return sim


def record_item_ratio(rec) -> float:
    """Fraction of advanced items clicked; taken from the sequence when present."""
    if rec.click_sequence is not None:
        return sum(tok in ADVANCED_ITEMS for tok in rec.click_sequence) / len(ADVANCED_ITEMS)
    return float(rec.item_ratio)


def ratio_bin(ratio: float) -> int:
    return int(np.clip(round(ratio / RATIO_BIN), 0, N_RATIO_BINS - 1))


def _training_report(sim, train, valid, test, design, targets) -> dict:
    rep = {
        "variant": sim.variant,
        "seed": sim.seed,
        "n_train": len(train),
        "n_valid": len(valid),
        "n_test": len(test),
        "sub_models": {},
    }
    for name, model in (
        ("prelim_decision", sim.prelim_decision),
        ("prelim_time", sim.prelim_time),
        ("final_decision", sim.final_decision),
        ("final_time", sim.final_time),
    ):
        rep["sub_models"][name] = {
            "best_params": model.report.get("best_params"),
            "best_cv_score": model.report.get("best_cv_score"),
            "n_trials": model.report.get("n_trials"),
            "n_rounds": model.n_rounds,
        }
    for split_name, recs in (("valid", valid), ("test", test)):
        if not recs:
            continue
        yp, tp, yf, tf = targets(recs)
        xp, xf = design(recs, "preliminary"), design(recs, "final")
        rep[split_name] = {
            "prelim_auc": _decision_auc(sim.prelim_decision, xp, yp),
            "final_auc": _decision_auc(sim.final_decision, xf, yf),
            "prelim_time_mae": float(np.mean(np.abs(np.exp(sim.prelim_time.predict(xp)) - np.exp(tp)))),
            "final_time_mae": float(np.mean(np.abs(np.exp(sim.final_time.predict(xf)) - np.exp(tf)))),
        }
    return rep


# --------------------------------------------------------------------------
# simulation

_N_UNIFORMS = 3 + len(VOCABULARY)


def _uniforms(seeds) -> np.ndarray:
    return np.vstack([np.random.default_rng(int(s)).random(_N_UNIFORMS) for s in seeds]) if len(seeds) else np.zeros((0, _N_UNIFORMS))


def simulate_batch(sim: TrainedSimulator, clinicians, cases, contexts, seeds, mode: str | None = None) -> list:
    """Simulate one diagnosis per row; each row depends only on its own seed.

    ``clinicians`` must already carry their diagnosis_order. Returns a list of
    dicts with the DiagnosisRecord output fields.
    """
    if sim.schema_version != SCHEMA_VERSION:
        raise SchemaError(f"simulator schema {sim.schema_version} != {SCHEMA_VERSION}")
    mode = mode or sim.config.decision_mode
    n = len(seeds)
    if n == 0:
        return []
    u = _uniforms(seeds)
    xp = build_matrix(sim.variant, sim.pca, clinicians, contexts, cases, "preliminary")
    xf = build_matrix(sim.variant, sim.pca, clinicians, contexts, cases, "final")
    pp = sim.prelim_decision.predict(xp)
    pf = sim.final_decision.predict(xf)
    if mode == "argmax":
        dp, df = pp >= 0.5, pf >= 0.5
    else:
        dp, df = u[:, 0] < pp, u[:, 1] < pf
    floor = sim.config.time_floor
    tp = np.maximum(np.exp(sim.prelim_time.predict(xp)), floor)
    tf = np.maximum(np.exp(sim.final_time.predict(xf)), floor)

    seqs = [None] * n
    ratios = [None] * n
    if sim.sequence_model is not None:
        seqs = sim.sequence_model.generate(xf[:, : CLINICIAN_WIDTH + MODEL_WIDTH], u[:, 3:], mode)
        ratios = [sum(t in ADVANCED_ITEMS for t in s) / len(ADVANCED_ITEMS) for s in seqs]
    elif sim.item_ratio is not None:
        proba = sim.item_ratio.predict_proba(xf)
        pick = np.argmax(proba, axis=1) if mode == "argmax" else _sample_rows(proba, u[:, 2])
        ratios = [float(np.asarray(sim.item_ratio.classes)[k] * RATIO_BIN) for k in pick]

    return [
        {
            "prelim_decision": "septic" if dp[i] else "non-septic",
            "prelim_time": float(tp[i]),
            "click_sequence": seqs[i],
            "item_ratio": ratios[i],
            "final_decision": "septic" if df[i] else "non-septic",
            "final_time": float(tf[i]),
            "prelim_p": float(pp[i]),
            "final_p": float(pf[i]),
            "seed": int(seeds[i]),
        }
        for i in range(n)
    ]


def simulate_diagnosis(sim: TrainedSimulator, clinician, case, ctx, seed: int, setting_id: str = "", mode: str | None = None):
    """One simulated DiagnosisRecord."""
    from .trial import DiagnosisRecord

    out = simulate_batch(sim, [clinician], [case], [ctx], [seed], mode)[0]
    return DiagnosisRecord(
        record_id=f"{setting_id}/{clinician.id}/{clinician.diagnosis_order}",
        clinician_id=clinician.id,
        case_id=case.id,
        setting_id=setting_id,
        diagnosis_order=clinician.diagnosis_order,
        model_name="",
        context=ctx,
        **out,
    )


# --------------------------------------------------------------------------
# bundle persistence

_SUBMODELS = ("prelim_decision", "prelim_time", "final_decision", "final_time")


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def save_simulator(sim: TrainedSimulator, directory) -> None:
    """Versioned directory: manifest.json plus one file per sub-model."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in _SUBMODELS:
        files[name] = f"{name}.json"
        _dump(getattr(sim, name).to_dict(), d / files[name])
    if sim.sequence_model is not None:
        files["sequence_model"] = "sequence_model.json"
        _dump(sim.sequence_model.to_dict(), d / files["sequence_model"])
    if sim.item_ratio is not None:
        files["item_ratio"] = "item_ratio.json"
        _dump(sim.item_ratio.to_dict(), d / files["item_ratio"])
    if sim.pca is not None:
        files["pca"] = "pca.npz"
        save_pca(sim.pca, d / files["pca"])
    cfg = asdict(sim.config)
    cfg["split"] = list(cfg["split"])
    manifest = {
        "schema_version": sim.schema_version,
        "variant": sim.variant,
        "seed": sim.seed,
        "config": cfg,
        "files": files,
        "report": sim.report,
    }
    _dump(manifest, d / "manifest.json")


def load_simulator(directory) -> TrainedSimulator:
    d = Path(directory)
    if not (d / "manifest.json").is_file():
        raise MissingInputError(f"no simulator bundle at {d}")
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"bundle schema {manifest.get('schema_version')} != {SCHEMA_VERSION}")
    files = manifest["files"]

    def read(name):
        path = d / files[name]
        if not path.is_file():
            raise MissingInputError(f"bundle file {path} missing")
        return json.loads(path.read_text())

    cfg = dict(manifest["config"])
    cfg["split"] = tuple(cfg["split"])
    return TrainedSimulator(
        variant=manifest["variant"],
        **{name: GbtModel.from_dict(read(name)) for name in _SUBMODELS},
        sequence_model=SequenceModel.from_dict(read("sequence_model")) if "sequence_model" in files else None,
        item_ratio=OneVsRest.from_dict(read("item_ratio")) if "item_ratio" in files else None,
        pca=load_pca(d / files["pca"]) if "pca" in files else None,
        config=SimulatorConfig(**cfg),
        seed=int(manifest["seed"]),
        report=manifest.get("report", {}),
    )
