"""Encoders for clinician, AI-model, and patient inputs.

Patient vector layout (2474 slots)::

    [0, 4)        demographics: sex, age / 100, marital status, race
    [4, 664)      time-series embedding (660)
                    [4, 114)    fundamental panel            (110)
                    [114, 374)  complete blood count         (260)
                    [374, 614)  arterial blood gas           (240)
                    [614, 664)  haemostatic function          (50)
    [664, 1432)   text-note embedding (768)
    [1432, 2474)  chest X-ray image embedding (1042)

The three advanced panels (55 items, 10 embedding slots each) are the
current-visit advanced examination data and are zero-masked for the
preliminary stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import SchemaError
from .population import DEPARTMENTS, GENERAL_EXPERTISE, INSTITUTIONS, POSITIONS, SEXES, ClinicianProfile
from .surrogates import CATEGORIES, MODEL_TYPES, ModelContext

STAGES = ("preliminary", "final")

FUNDAMENTAL_ITEMS = (
    "body temperature",
    "systolic blood pressure",
    "diastolic blood pressure",
    "heart rate",
    "respiratory rate",
    "consciousness level",
    "qSOFA",
)
ADVANCED_PANELS = {"complete blood count": 26, "arterial blood gas": 24, "haemostatic function": 5}
MARITAL_STATUSES = ("single", "married", "divorced", "widowed", "unknown")
RACES = ("white", "black", "asian", "hispanic", "other", "unknown")

DEMOGRAPHIC_WIDTH = 4
TIMESERIES_WIDTH = 660
TEXT_WIDTH = 768
IMAGE_WIDTH = 1042
PATIENT_WIDTH = DEMOGRAPHIC_WIDTH + TIMESERIES_WIDTH + TEXT_WIDTH + IMAGE_WIDTH
FUNDAMENTAL_EMBED_WIDTH = 110
ADVANCED_EMBED_PER_ITEM = 10

CLINICIAN_WIDTH = 8
MODEL_WIDTH = 9
REDUCED_WIDTH = CLINICIAN_WIDTH + MODEL_WIDTH
FEATURE_WIDTH = CLINICIAN_WIDTH + MODEL_WIDTH + REDUCED_WIDTH

TS_START = DEMOGRAPHIC_WIDTH
ADVANCED_SLOTS = slice(TS_START + FUNDAMENTAL_EMBED_WIDTH, TS_START + TIMESERIES_WIDTH)
TEXT_SLOTS = slice(TS_START + TIMESERIES_WIDTH, TS_START + TIMESERIES_WIDTH + TEXT_WIDTH)
IMAGE_SLOTS = slice(TEXT_SLOTS.stop, PATIENT_WIDTH)

CLINICIAN_SLOTS = (
    "institution_level",
    "sex",
    "age",
    "years_working",
    "department",
    "class_of_position",
    "area_of_expertise",
    "diagnosis_order",
)
MODEL_SLOTS = (
    "model_type",
    "quality_bucket",
    "sensitivity",
    "specificity",
    "accuracy",
    "auc",
    "visibility",
    "prediction",
    "probability",
)
METADATA_SLOTS = slice(0, 6)
NOT_SHOWN = -1.0
PREDICTION_CODES = {"NS": 0.0, "EW": 1.0, "YS": 2.0}
EXPERTISE = DEPARTMENTS + (GENERAL_EXPERTISE,)

assert PATIENT_WIDTH == 2474
assert ADVANCED_SLOTS.stop - ADVANCED_SLOTS.start == ADVANCED_EMBED_PER_ITEM * sum(ADVANCED_PANELS.values())


@dataclass
class PatientCase:
    id: str
    sex: str
    age: float
    marital_status: str
    race: str
    fundamental: np.ndarray  # (T, 7)
    advanced: dict  # panel name -> (T, dims)
    text_embedding: np.ndarray
    image_embedding: np.ndarray
    timeseries_embedding: np.ndarray
    label: str  # "septic" | "non-septic"
    onset_time: float | None = None  # hours since admission
    admission_time: float = 0.0
    query_time: float = 0.0  # hours since admission when the case is read
    group: str = ""
    latent: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.label not in ("septic", "non-septic"):
            raise SchemaError(f"case {self.id}: unknown label {self.label!r}")
        if (self.onset_time is not None) != (self.label == "septic"):
            raise SchemaError(f"case {self.id}: onset_time must be present iff septic")
        widths = (
            ("timeseries_embedding", self.timeseries_embedding, TIMESERIES_WIDTH),
            ("text_embedding", self.text_embedding, TEXT_WIDTH),
            ("image_embedding", self.image_embedding, IMAGE_WIDTH),
        )
        for name, vec, width in widths:
            if np.shape(vec) != (width,):
                raise SchemaError(f"case {self.id}: {name} has shape {np.shape(vec)}, expected ({width},)")
        if not np.all(np.isfinite(self.fundamental)):
            raise SchemaError(f"case {self.id}: non-finite vitals")

    @property
    def septic(self) -> bool:
        return self.label == "septic"

    @property
    def pre_onset(self) -> bool:
        """Septic, but onset has not yet happened when the case is read."""
        return self.septic and self.onset_time > self.query_time

    @property
    def patient_type(self) -> str:
        if not self.septic:
            return "non-septic"
        return "septic pre-onset" if self.pre_onset else "septic post-onset"


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    stage: str

    @property
    def clinician(self):
        return self.values[:CLINICIAN_WIDTH]

    @property
    def model(self):
        return self.values[CLINICIAN_WIDTH : CLINICIAN_WIDTH + MODEL_WIDTH]

    @property
    def patient(self):
        return self.values[CLINICIAN_WIDTH + MODEL_WIDTH :]


def _index(vocab, value, name) -> float:
    try:
        return float(vocab.index(value))
    except ValueError:
        raise SchemaError(f"unknown {name} value {value!r}") from None


# --------------------------------------------------------------------------
# clinician


def encode_clinician(profile: ClinicianProfile, cases_per_setting: int = 6) -> np.ndarray:
    """Eight numeric slots in ``CLINICIAN_SLOTS`` order."""
    return np.array(
        [
            _index(INSTITUTIONS, profile.institution_level, "institution_level"),
            _index(SEXES, profile.sex, "sex"),
            float(profile.age),
            float(profile.years_working),
            _index(DEPARTMENTS, profile.department, "department"),
            _index(POSITIONS, profile.class_of_position, "class_of_position"),
            _index(EXPERTISE, profile.area_of_expertise, "area_of_expertise"),
            profile.diagnosis_order / cases_per_setting,
        ]
    )


def encode_clinicians(profiles: Sequence[ClinicianProfile], cases_per_setting: int = 6) -> np.ndarray:
    if not profiles:
        return np.zeros((0, CLINICIAN_WIDTH))
    return np.vstack([encode_clinician(p, cases_per_setting) for p in profiles])


# --------------------------------------------------------------------------
# AI model


def encode_model(ctx: ModelContext, horizon: str = "0h") -> np.ndarray:
    """Nine slots in ``MODEL_SLOTS`` order.

    Metadata slots read ``NOT_SHOWN`` when the model is invisible; a
    no-model context is ``NOT_SHOWN`` everywhere. ``horizon`` picks the
    probability carried in the last slot (the 3h probability is a monotone
    function of the 0h one, so a single slot loses nothing).
    """
    if not ctx.present:
        return np.full(MODEL_WIDTH, NOT_SHOWN)
    if horizon not in ("0h", "3h"):
        raise SchemaError(f"unknown horizon {horizon!r}")
    if ctx.prediction not in CATEGORIES:
        raise SchemaError(f"unknown prediction {ctx.prediction!r}")
    vec = np.empty(MODEL_WIDTH)
    if ctx.visible:
        vec[METADATA_SLOTS] = [
            _index(MODEL_TYPES, ctx.model_type, "model_type"),
            float(ctx.quality_bucket),
            ctx.sensitivity,
            ctx.specificity,
            ctx.accuracy,
            ctx.auc,
        ]
    else:
        vec[METADATA_SLOTS] = NOT_SHOWN
    vec[6] = 1.0 if ctx.visible else 0.0
    vec[7] = PREDICTION_CODES[ctx.prediction]
    vec[8] = ctx.p0h if horizon == "0h" else ctx.p3h
    return vec


def encode_models(contexts: Sequence[ModelContext], horizon: str = "0h") -> np.ndarray:
    if not contexts:
        return np.zeros((0, MODEL_WIDTH))
    return np.vstack([encode_model(c, horizon) for c in contexts])


# --------------------------------------------------------------------------
# patient


def encode_patient(case: PatientCase, stage: str) -> np.ndarray:
    """Full-width patient vector; advanced panels masked at the preliminary stage."""
    if stage not in STAGES:
        raise SchemaError(f"unknown stage {stage!r}")
    for name, vec, width in (
        ("timeseries_embedding", case.timeseries_embedding, TIMESERIES_WIDTH),
        ("text_embedding", case.text_embedding, TEXT_WIDTH),
        ("image_embedding", case.image_embedding, IMAGE_WIDTH),
    ):
        if np.shape(vec) != (width,):
            raise SchemaError(f"case {case.id}: {name} has shape {np.shape(vec)}, expected ({width},)")
    out = np.empty(PATIENT_WIDTH)
    out[0] = _index(SEXES, case.sex, "patient sex")
    out[1] = float(case.age) / 100.0
    out[2] = _index(MARITAL_STATUSES, case.marital_status, "marital_status")
    out[3] = _index(RACES, case.race, "race")
    out[TS_START : TS_START + TIMESERIES_WIDTH] = case.timeseries_embedding
    out[TEXT_SLOTS] = case.text_embedding
    out[IMAGE_SLOTS] = case.image_embedding
    # missing embedding values are imputed at the (zero) centre
    np.nan_to_num(out, copy=False, nan=0.0, posinf=0.0, neginf=0.0)
    if stage == "preliminary":
        out[ADVANCED_SLOTS] = 0.0
    return out


def encode_patients(cases: Sequence[PatientCase], stage: str) -> np.ndarray:
    if not cases:
        return np.zeros((0, PATIENT_WIDTH))
    return np.vstack([encode_patient(c, stage) for c in cases])


# --------------------------------------------------------------------------
# assembly


def assemble(clinician_vec, model_vec, patient_reduced, stage: str) -> FeatureVector:
    """Concatenate the three blocks into one 34-slot, stage-tagged vector."""
    if stage not in STAGES:
        raise SchemaError(f"unknown stage {stage!r}")
    blocks = (
        ("clinician", clinician_vec, CLINICIAN_WIDTH),
        ("model", model_vec, MODEL_WIDTH),
        ("patient", patient_reduced, REDUCED_WIDTH),
    )
    for name, vec, width in blocks:
        if np.shape(vec) != (width,):
            raise SchemaError(f"{name} block has shape {np.shape(vec)}, expected ({width},)")
    return FeatureVector(np.concatenate([np.asarray(b[1], dtype=float) for b in blocks]), stage)
