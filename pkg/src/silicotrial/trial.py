"""Trial plans, randomized allocation, in-silico runs, and record filtering."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import SCHEMA_VERSION
from ._seeding import derive_seed, rng_for
from .errors import AllocationError, ConfigurationError
from .population import ClinicianProfile, coherence_check
from .surrogates import ModelContext, SurrogateModel, predict_many

GROUPS = ("G1", "G2", "G3", "G4", "G5")
REQUIRED_SURROGATES = ("random", "lstm75", "lstm85", "lstm95", "coxphm95")
DECISIONS = ("septic", "non-septic")
STEPS = ("step1", "step2")


@dataclass(frozen=True)
class Setting:
    id: str
    group: str
    model: str | None  # surrogate name, None for the no-model control
    visible: bool
    step: str = "step1"


DEFAULT_SETTINGS = (
    Setting("no-model", "G1", None, False, "step1"),
    Setting("random-invisible", "G1", "random", False, "step1"),
    Setting("lstm75-invisible", "G1", "lstm75", False, "step1"),
    Setting("lstm85-invisible", "G1", "lstm85", False, "step1"),
    Setting("lstm95-invisible", "G1", "lstm95", False, "step1"),
    Setting("coxphm95-invisible", "G1", "coxphm95", False, "step2"),
    Setting("lstm75-visible", "G2", "lstm75", True, "step1"),
    Setting("lstm85-visible", "G3", "lstm85", True, "step1"),
    Setting("lstm95-visible", "G4", "lstm95", True, "step1"),
    Setting("coxphm95-visible", "G5", "coxphm95", True, "step2"),
)


@dataclass(frozen=True)
class TrialPlan:
    settings: tuple
    surrogates: dict
    cases_per_setting: int = 6
    seed: int = 0

    @property
    def groups(self) -> tuple:
        return tuple(dict.fromkeys(s.group for s in self.settings))

    def setting(self, setting_id: str) -> Setting:
        for s in self.settings:
            if s.id == setting_id:
                return s
        raise KeyError(setting_id)

    def capacity(self, n_clinicians: int) -> int:
        return n_clinicians * self.cases_per_setting * len(self.settings)

    def restrict(self, step: str) -> "TrialPlan":
        """Plan with only the settings of one step (e.g. a step-2 holdout)."""
        return replace(self, settings=tuple(s for s in self.settings if s.step == step))

    def validate(self) -> None:
        if self.cases_per_setting < 1:
            raise ConfigurationError("cases_per_setting must be >= 1")
        ids = [s.id for s in self.settings]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate setting ids")
        for s in self.settings:
            if s.step not in STEPS:
                raise ConfigurationError(f"{s.id}: unknown step {s.step!r}")
            if s.model is None:
                if s.visible:
                    raise ConfigurationError(f"{s.id}: a no-model setting cannot be visible")
                continue
            if s.model not in self.surrogates:
                raise ConfigurationError(f"{s.id}: unknown surrogate {s.model!r}")
            if s.group == "G1" and s.visible:
                raise ConfigurationError(f"{s.id}: group G1 settings are blinded")
            if self.surrogates[s.model].model_type == "random" and s.visible:
                raise ConfigurationError(f"{s.id}: the random model is never shown")


def build_default_plan(surrogates: dict, seed: int = 0, cases_per_setting: int = 6) -> TrialPlan:
    """The ten-setting plan: six blinded settings on G1, four visible on G2-G5."""
    missing = [name for name in REQUIRED_SURROGATES if name not in surrogates]
    if missing:
        raise ConfigurationError(f"surrogate set lacks {missing}")
    plan = TrialPlan(DEFAULT_SETTINGS, dict(surrogates), cases_per_setting, seed)
    plan.validate()
    return plan


# --------------------------------------------------------------------------
# allocation


@dataclass(frozen=True)
class Assignment:
    clinician_id: str
    setting_id: str
    case_id: str
    diagnosis_order: int

    @property
    def record_id(self) -> str:
        return f"{self.setting_id}/{self.clinician_id}/{self.diagnosis_order}"


def _case_ids(cohort) -> list:
    return sorted(c if isinstance(c, str) else c.id for c in cohort)


def allocate(plan: TrialPlan, clinicians: Sequence[ClinicianProfile], cohorts: dict, seed: int) -> list:
    """Draw ``cases_per_setting`` distinct cases per (clinician, setting).

    Each pair has its own generator keyed by (seed, clinician, setting), so
    the table does not depend on the order clinicians are listed in.
    """
    if not clinicians:
        raise AllocationError("no clinicians to allocate")
    k = plan.cases_per_setting
    ids_by_group = {}
    for group in plan.groups:
        if group not in cohorts:
            raise AllocationError(f"no cohort for group {group}")
        ids = _case_ids(cohorts[group])
        if len(ids) < k:
            raise AllocationError(f"cohort {group} has {len(ids)} cases, need >= {k}")
        ids_by_group[group] = ids
    out = []
    for setting in plan.settings:
        ids = ids_by_group[setting.group]
        for clin in sorted(clinicians, key=lambda c: c.id):
            picks = rng_for("allocate", seed, clin.id, setting.id).choice(len(ids), size=k, replace=False)
            out.extend(Assignment(clin.id, setting.id, ids[j], order) for order, j in enumerate(picks, start=1))
    return out


# --------------------------------------------------------------------------
# records


@dataclass
class DiagnosisRecord:
    record_id: str
    clinician_id: str
    case_id: str
    setting_id: str
    diagnosis_order: int
    model_name: str
    context: ModelContext
    prelim_decision: str | None
    prelim_time: float | None  # minutes
    click_sequence: tuple | None
    item_ratio: float | None
    final_decision: str | None
    final_time: float | None
    prelim_p: float | None = None  # simulator's P(septic), when simulated
    final_p: float | None = None
    seed: int = 0


@dataclass
class RecordSet:
    records: list
    summary: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def setting_contexts(plan: TrialPlan, cohorts: dict) -> dict:
    """ModelContext for every (setting id, case id) the plan can produce."""
    out = {}
    for setting in plan.settings:
        cases = sorted(cohorts[setting.group], key=lambda c: c.id)
        if setting.model is None:
            for c in cases:
                out[setting.id, c.id] = ModelContext.none()
            continue
        model: SurrogateModel = plan.surrogates[setting.model]
        cats, p0h, p3h, _ = predict_many(model, [c.id for c in cases], [int(c.septic) for c in cases])
        for c, cat, a, b in zip(cases, cats, p0h, p3h):
            out[setting.id, c.id] = ModelContext.from_model(model, str(cat), float(a), float(b), setting.visible)
    return out


def record_seed(seed: int, clinician_id: str, case_id: str, setting_id: str) -> int:
    return derive_seed("record", seed, clinician_id, case_id, setting_id)


def run_trial(
    plan: TrialPlan,
    simulator,
    clinicians: Sequence[ClinicianProfile],
    cohorts: dict,
    seed: int,
    order: Sequence[int] | None = None,
    chunk_size: int = 2048,
    n_jobs: int = 1,
) -> RecordSet:
    """Simulate one record per assignment of ``plan``.

    ``order`` permutes the execution order of assignments (the output is
    unchanged; records always come back in canonical assignment order).
    """
    from .behavior import simulate_batch

    plan.validate()
    started = time.perf_counter()
    assignments = allocate(plan, clinicians, cohorts, seed)
    profiles = {c.id: c for c in clinicians}
    cases = {c.id: c for group in plan.groups for c in cohorts[group]}
    contexts = setting_contexts(plan, cohorts)
    model_names = {s.id: (s.model or "") for s in plan.settings}

    idx = np.arange(len(assignments)) if order is None else np.asarray(order)
    if sorted(idx.tolist()) != list(range(len(assignments))):
        raise ConfigurationError("order must be a permutation of the assignments")
    chunks = [idx[i : i + chunk_size] for i in range(0, len(idx), chunk_size)]

    def work(chunk):
        batch = [assignments[i] for i in chunk]
        return simulate_batch(
            simulator,
            [profiles[a.clinician_id].with_order(a.diagnosis_order) for a in batch],
            [cases[a.case_id] for a in batch],
            [contexts[a.setting_id, a.case_id] for a in batch],
            [record_seed(seed, a.clinician_id, a.case_id, a.setting_id) for a in batch],
        )

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    records: list = [None] * len(assignments)
    for chunk, outputs in zip(chunks, results):
        for i, out in zip(chunk, outputs):
            a = assignments[i]
            records[i] = DiagnosisRecord(
                record_id=a.record_id,
                clinician_id=a.clinician_id,
                case_id=a.case_id,
                setting_id=a.setting_id,
                diagnosis_order=a.diagnosis_order,
                model_name=model_names[a.setting_id],
                context=contexts[a.setting_id, a.case_id],
                **out,
            )
    elapsed = time.perf_counter() - started
    summary = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "n_records": len(records),
        "n_clinicians": len(clinicians),
        "n_settings": len(plan.settings),
        "variant": getattr(simulator, "variant", ""),
        "wall_time_seconds": elapsed,
    }
    return RecordSet(records, summary)


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationResult:
    valid: list
    rejected: list  # (record, reason)
    prelim_valid: list
    final_valid: list

    def __iter__(self):
        # unpack as (valid, rejected)
        return iter((self.valid, self.rejected))

    @property
    def retention(self) -> dict:
        total = len(self.valid) + len(self.rejected)
        return {
            "total": total,
            "valid": len(self.valid),
            "preliminary": len(self.prelim_valid),
            "final": len(self.final_valid),
        }


def _missing(v) -> bool:
    return v is None or v == "" or (isinstance(v, float) and math.isnan(v))


def _time_reason(t, bounds):
    lo, hi = bounds
    if t < lo:
        return "time-too-short"
    if t > hi:
        return "time-too-long"
    return None


def validate_records(records, clinicians: dict | None = None, time_bounds=(0.1, 60.0)) -> ValidationResult:
    """Split records into valid and rejected-with-reason.

    Completeness failures reject a record outright; the time filter is also
    applied per stage so preliminary and final retention can differ.
    """
    valid, rejected, prelim_ok, final_ok = [], [], [], []
    for rec in records:
        reason = None
        if any(_missing(v) for v in (rec.prelim_decision, rec.final_decision, rec.prelim_time, rec.final_time)):
            reason = "incomplete-diagnosis"
        elif rec.prelim_decision not in DECISIONS or rec.final_decision not in DECISIONS:
            reason = "invalid-decision"
        elif _missing(rec.clinician_id) or (
            clinicians is not None
            and (rec.clinician_id not in clinicians or coherence_check(clinicians[rec.clinician_id]))
        ):
            reason = "incomplete-clinician"
        if reason is not None:
            rejected.append((rec, reason))
            continue
        pr = _time_reason(rec.prelim_time, time_bounds)
        fr = _time_reason(rec.final_time, time_bounds)
        if pr is None:
            prelim_ok.append(rec)
        if fr is None:
            final_ok.append(rec)
        if pr is None and fr is None:
            valid.append(rec)
        else:
            rejected.append((rec, pr or fr))
    return ValidationResult(valid, rejected, prelim_ok, final_ok)
