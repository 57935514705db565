"""CSV and INI persistence.

Every CSV starts with one comment line ``#schema_version=<v> seed=<s>``
followed by a header row. Floats are written with ``repr`` so they parse
back bit-for-bit. Missing values are ``NA``; click sequences are ``|``-joined
tokens (an empty sequence is an empty cell).
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION
from .behavior import SimulatorConfig
from .errors import ConfigurationError, MissingInputError, SchemaError
from .features import PatientCase
from .population import (
    AGE_BUCKETS,
    YEARS_BUCKETS,
    BucketStat,
    ClinicianProfile,
    DemographicSpec,
    default_spec,
)
from .surrogates import ModelContext, ThresholdPolicy, default_surrogates
from .synth import WorldParams
from .trial import DEFAULT_SETTINGS, DiagnosisRecord, Setting, TrialPlan, build_default_plan

NA = "NA"


# --------------------------------------------------------------------------
# low-level CSV helpers


def _header(seed) -> str:
    return f"#schema_version={SCHEMA_VERSION} seed={seed}"


def write_table(path, columns, rows, seed=0) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(_header(seed) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def read_table(path):
    """(meta dict, header, rows as dicts); checks the schema version."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"{path} not found")
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise SchemaError(f"{path}: missing schema header line")
        meta = dict(part.split("=", 1) for part in first[1:].split() if "=" in part)
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"{path}: schema version {meta.get('schema_version')} != {SCHEMA_VERSION}")
        reader = csv.DictReader(fh)
        return meta, reader.fieldnames, list(reader)


def _f(v) -> str:
    if v is None:
        return NA
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _opt_float(s):
    return None if s in (NA, "") else float(s)


def _opt_str(s):
    return None if s == NA else s


# --------------------------------------------------------------------------
# population

POPULATION_COLUMNS = (
    "id",
    "institution_level",
    "sex",
    "age",
    "years_working",
    "department",
    "class_of_position",
    "area_of_expertise",
)


def write_population(path, profiles, seed=0) -> None:
    write_table(path, POPULATION_COLUMNS, ([_f(getattr(p, c)) for c in POPULATION_COLUMNS] for p in profiles), seed)


def read_population(path) -> list:
    _, header, rows = read_table(path)
    missing = set(POPULATION_COLUMNS) - set(header or ())
    if missing:
        raise SchemaError(f"{path}: missing columns {sorted(missing)}")
    return [
        ClinicianProfile(
            id=r["id"],
            institution_level=r["institution_level"],
            sex=r["sex"],
            age=int(r["age"]),
            years_working=int(r["years_working"]),
            department=r["department"],
            class_of_position=r["class_of_position"],
            area_of_expertise=r["area_of_expertise"],
        )
        for r in rows
    ]


# --------------------------------------------------------------------------
# cohort: scalar fields in CSV, arrays in a sidecar .npz

COHORT_COLUMNS = (
    "id",
    "group",
    "sex",
    "age",
    "marital_status",
    "race",
    "label",
    "onset_time",
    "admission_time",
    "query_time",
)


def _arrays_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".arrays.npz")


def write_cohort(path, cases, seed=0) -> None:
    cases = list(cases)
    latent_keys = sorted({k for c in cases for k in c.latent})
    cols = COHORT_COLUMNS + tuple(f"latent_{k}" for k in latent_keys)
    rows = (
        [_f(getattr(c, k)) for k in COHORT_COLUMNS] + [_f(c.latent.get(k)) for k in latent_keys]
        for c in cases
    )
    write_table(path, cols, rows, seed)
    arrays = {
        "schema_version": np.array(SCHEMA_VERSION),
        "timeseries": np.vstack([c.timeseries_embedding for c in cases]),
        "text": np.vstack([c.text_embedding for c in cases]),
        "image": np.vstack([c.image_embedding for c in cases]),
        "fundamental": np.stack([c.fundamental for c in cases]),
    }
    for name in sorted({k for c in cases for k in c.advanced}):
        arrays["advanced:" + name] = np.stack([c.advanced[name] for c in cases])
    with open(_arrays_path(path), "wb") as fh:
        np.savez(fh, **arrays)


def read_cohort(path) -> list:
    _, header, rows = read_table(path)
    apath = _arrays_path(path)
    if not apath.is_file():
        raise MissingInputError(f"{apath} not found")
    with np.load(apath, allow_pickle=False) as data:
        if str(data["schema_version"]) != SCHEMA_VERSION:
            raise SchemaError(f"{apath}: schema version mismatch")
        arrays = {k: data[k] for k in data.files}
    if len(arrays["timeseries"]) != len(rows):
        raise SchemaError(f"{apath}: {len(arrays['timeseries'])} rows, CSV has {len(rows)}")
    latent_cols = [c for c in header if c.startswith("latent_")]
    panels = [k.split(":", 1)[1] for k in arrays if k.startswith("advanced:")]
    cases = []
    for i, r in enumerate(rows):
        case = PatientCase(
            id=r["id"],
            sex=r["sex"],
            age=float(r["age"]),
            marital_status=r["marital_status"],
            race=r["race"],
            fundamental=arrays["fundamental"][i],
            advanced={p: arrays["advanced:" + p][i] for p in panels},
            text_embedding=arrays["text"][i],
            image_embedding=arrays["image"][i],
            timeseries_embedding=arrays["timeseries"][i],
            label=r["label"],
            onset_time=_opt_float(r["onset_time"]),
            admission_time=float(r["admission_time"]),
            query_time=float(r["query_time"]),
            group=r["group"],
            latent={c[len("latent_"):]: float(r[c]) for c in latent_cols if r[c] != NA},
        )
        case.validate()
        cases.append(case)
    return cases


def group_cases(cases) -> dict:
    out: dict = {}
    for c in cases:
        out.setdefault(c.group, []).append(c)
    return out


# --------------------------------------------------------------------------
# records

RECORD_COLUMNS = (
    "record_id",
    "clinician_id",
    "case_id",
    "setting_id",
    "diagnosis_order",
    "model_name",
    "model_present",
    "model_type",
    "model_quality_bucket",
    "model_sensitivity",
    "model_specificity",
    "model_accuracy",
    "model_auc",
    "model_visible",
    "model_prediction",
    "model_p0h",
    "model_p3h",
    "prelim_decision",
    "prelim_time",
    "click_sequence",
    "item_ratio",
    "final_decision",
    "final_time",
    "prelim_p",
    "final_p",
    "seed",
)


def _record_row(r: DiagnosisRecord) -> list:
    c = r.context
    seq = NA if r.click_sequence is None else "|".join(r.click_sequence)
    return [
        r.record_id,
        _f(r.clinician_id),
        r.case_id,
        r.setting_id,
        str(r.diagnosis_order),
        r.model_name,
        _f(c.present),
        c.model_type,
        str(c.quality_bucket),
        _f(c.sensitivity),
        _f(c.specificity),
        _f(c.accuracy),
        _f(c.auc),
        _f(c.visible),
        c.prediction,
        _f(c.p0h),
        _f(c.p3h),
        _f(r.prelim_decision),
        _f(r.prelim_time),
        seq,
        _f(r.item_ratio),
        _f(r.final_decision),
        _f(r.final_time),
        _f(r.prelim_p),
        _f(r.final_p),
        str(r.seed),
    ]


def write_records(path, records, seed=0, latents=None) -> None:
    """Trial or oracle records; ``latents`` adds ``latent_*`` columns."""
    records = list(records)
    cols = list(RECORD_COLUMNS)
    keys = sorted(latents[0]) if latents else []
    cols += [f"latent_{k}" for k in keys]
    rows = (
        _record_row(r) + ([_f(latents[i][k]) for k in keys] if latents else [])
        for i, r in enumerate(records)
    )
    write_table(path, cols, rows, seed)


def _record_from_row(r) -> DiagnosisRecord:
    present = r["model_present"] == "1"
    ctx = ModelContext(
        present=present,
        model_type=r["model_type"],
        quality_bucket=int(r["model_quality_bucket"]),
        sensitivity=float(r["model_sensitivity"]),
        specificity=float(r["model_specificity"]),
        accuracy=float(r["model_accuracy"]),
        auc=float(r["model_auc"]),
        visible=r["model_visible"] == "1",
        prediction=r["model_prediction"],
        p0h=float(r["model_p0h"]),
        p3h=float(r["model_p3h"]),
    )
    seq = r["click_sequence"]
    return DiagnosisRecord(
        record_id=r["record_id"],
        clinician_id=_opt_str(r["clinician_id"]),
        case_id=r["case_id"],
        setting_id=r["setting_id"],
        diagnosis_order=int(r["diagnosis_order"]),
        model_name=r["model_name"],
        context=ctx,
        prelim_decision=_opt_str(r["prelim_decision"]),
        prelim_time=_opt_float(r["prelim_time"]),
        click_sequence=None if seq == NA else (tuple(seq.split("|")) if seq else ()),
        item_ratio=_opt_float(r["item_ratio"]),
        final_decision=_opt_str(r["final_decision"]),
        final_time=_opt_float(r["final_time"]),
        prelim_p=_opt_float(r["prelim_p"]),
        final_p=_opt_float(r["final_p"]),
        seed=int(r["seed"]),
    )


def read_records(path) -> list:
    _, header, rows = read_table(path)
    missing = set(RECORD_COLUMNS) - set(header or ())
    if missing:
        raise SchemaError(f"{path}: missing columns {sorted(missing)}")
    return [_record_from_row(r) for r in rows]


def write_rejections(path, rejected, seed=0) -> None:
    write_table(path, ("record_id", "reason"), ([r.record_id, reason] for r, reason in rejected), seed)


def write_matrix(path, x, columns=None, seed=0) -> None:
    x = np.asarray(x, dtype=float)
    columns = columns or [f"x{j}" for j in range(x.shape[1])]
    write_table(path, columns, ([repr(float(v)) for v in row] for row in x), seed)


def read_matrix(path) -> np.ndarray:
    _, header, rows = read_table(path)
    return np.array([[float(r[c]) for c in header] for r in rows]).reshape(len(rows), len(header))


# --------------------------------------------------------------------------
# INI configuration


def read_config(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"config {path} not found")
    cfg = configparser.ConfigParser()
    cfg.optionxform = str  # keep category names case-sensitive
    try:
        cfg.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return cfg


def _coerce(template, raw: str, name: str):
    try:
        if isinstance(template, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            return tuple(float(v) for v in raw.split(","))
        if isinstance(template, dict):
            return json.loads(raw)
        if template is None:
            return None if raw.strip().lower() in ("", "none") else int(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None
    return raw


def _apply(obj, section, name):
    """Override dataclass fields of ``obj`` from an INI section."""
    fields = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigurationError(f"[{name}] unknown key {key!r}")
        updates[key] = _coerce(getattr(obj, key), raw, f"{name}.{key}")
    return dataclasses.replace(obj, **updates)


def world_from_config(cfg) -> WorldParams:
    params = WorldParams()
    if cfg is not None and cfg.has_section("world"):
        params = _apply(params, cfg["world"], "world")
    params.validate()
    return params


def simulator_config_from_config(cfg) -> SimulatorConfig:
    sc = SimulatorConfig()
    if cfg is not None and cfg.has_section("simulator"):
        sc = _apply(sc, cfg["simulator"], "simulator")
    sc.split = tuple(sc.split)
    sc.validate()
    return sc


def spec_from_config(cfg) -> DemographicSpec:
    """Reference demographics with optional ``[spec.<field>]`` overrides.

    Categorical sections map value -> fraction; ``[spec.age]`` and
    ``[spec.years]`` map bucket -> ``fraction, mean, sd``.
    """
    spec = default_spec()
    if cfg is None:
        return spec
    updates = {}
    for field in ("sex", "position", "institution", "department", "age", "years"):
        name = f"spec.{field}"
        if not cfg.has_section(name):
            continue
        sec = cfg[name]
        if field in ("age", "years"):
            valid = AGE_BUCKETS if field == "age" else YEARS_BUCKETS
            vals = {}
            for k, raw in sec.items():
                if k not in valid:
                    raise ConfigurationError(f"[{name}] unknown bucket {k!r}")
                parts = [float(v) for v in raw.split(",")]
                if len(parts) != 3:
                    raise ConfigurationError(f"[{name}] {k} needs 'fraction, mean, sd'")
                vals[k] = BucketStat(*parts)
        else:
            vals = {k: float(v) for k, v in sec.items()}
        updates[field] = vals
    spec = dataclasses.replace(spec, **updates)
    spec.validate()
    return spec


def plan_from_config(cfg, seed: int = 0) -> TrialPlan:
    """Default plan, or custom ``[setting.<id>]`` sections, with surrogate policy overrides."""
    policy = ThresholdPolicy()
    cases_per = 6
    surrogate_seed = seed
    if cfg is not None and cfg.has_section("surrogates"):
        sec = dict(cfg["surrogates"])
        surrogate_seed = int(sec.pop("seed", seed))
        policy = _apply(policy, sec, "surrogates")
    if cfg is not None and cfg.has_section("plan"):
        cases_per = int(cfg["plan"].get("cases_per_setting", cases_per))
        seed = int(cfg["plan"].get("seed", seed))
    surrogates = default_surrogates(surrogate_seed, policy)
    custom = [s for s in (cfg.sections() if cfg is not None else []) if s.startswith("setting.")]
    if not custom:
        return build_default_plan(surrogates, seed, cases_per)
    settings = []
    for name in custom:
        sec = cfg[name]
        model = sec.get("model", "none")
        settings.append(
            Setting(
                name.split(".", 1)[1],
                sec.get("group", "G1"),
                None if model in ("", "none") else model,
                sec.getboolean("visible", False),
                sec.get("step", "step1"),
            )
        )
    plan = TrialPlan(tuple(settings), surrogates, cases_per, seed)
    plan.validate()
    return plan


def write_plan_config(path, plan: TrialPlan) -> None:
    cfg = configparser.ConfigParser()
    cfg["plan"] = {"cases_per_setting": str(plan.cases_per_setting), "seed": str(plan.seed)}
    for s in plan.settings:
        cfg[f"setting.{s.id}"] = {
            "group": s.group,
            "model": s.model or "none",
            "visible": "true" if s.visible else "false",
            "step": s.step,
        }
    with open(path, "w") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        cfg.write(fh)


EXAMPLE_CONFIG = """\
# silicotrial run configuration
[plan]
cases_per_setting = 6
seed = 0

[surrogates]
seed = 0
ew_width = 0.5

[world]
cohort_size = 120

[simulator]
search_budget = 0
cv_folds = 3
base_params = {"max_depth": 4, "n_rounds": 100, "learning_rate": 0.1, "min_leaf": 20}
"""
