"""AI-model surrogates with calibrated discrimination.

A surrogate scores a case as ``d * y + z`` where ``y`` is the septic
indicator and ``z`` is standard normal noise keyed by (model seed, case id).
Under that binormal law the AUC is ``Phi(d / sqrt(2))``, so
``d = sqrt(2) * Phi^-1(auc)`` hits any target exactly in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, logit, ndtr, ndtri

from ._seeding import derive_seed
from .errors import DomainError

MODEL_TYPES = ("random", "deep-learning", "traditional-ml")
CATEGORIES = ("YS", "EW", "NS")

# stands in for infinite separation at AUC 1.0
MAX_SEPARATION = 12.0


def quality_bucket(auc: float) -> int:
    """Quality level 1-5 over half-open AUC bands, top band closed at 1.0."""
    if not 0.0 <= auc <= 1.0 or math.isnan(auc):
        raise DomainError(f"auc must be in [0, 1], got {auc!r}")
    for bucket, upper in enumerate((0.6, 0.7, 0.8, 0.9), start=1):
        if auc < upper:
            return bucket
    return 5


def separation_for_auc(auc: float) -> float:
    if auc >= 1.0:
        return MAX_SEPARATION
    return min(math.sqrt(2.0) * float(ndtri(auc)), MAX_SEPARATION)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Where the YS / EW / NS cutoffs sit on the score axis.

    ``theta_ys`` sits at the binormal equal-error point ``d / 2`` plus
    ``ys_offset``; the EW band spans ``ew_width`` score units below it.
    """

    ys_offset: float = 0.0
    ew_width: float = 0.5
    prevalence: float = 0.5
    horizon_log_odds: float = math.log(2.0)


DEFAULT_POLICY = ThresholdPolicy()


@dataclass(frozen=True)
class ModelPrediction:
    category: str
    p0h: float
    p3h: float
    score: float


@dataclass(frozen=True)
class SurrogateModel:
    name: str
    model_type: str
    target_auc: float
    separation: float
    sensitivity: float
    specificity: float
    accuracy: float
    quality_bucket: int
    theta_ys: float
    theta_ew: float
    prevalence: float
    horizon_log_odds: float
    seed: int

    def __post_init__(self):
        if self.model_type not in MODEL_TYPES:
            raise DomainError(f"unknown model_type {self.model_type!r}")
        if self.theta_ys < self.theta_ew:
            raise DomainError("theta_ys must be >= theta_ew")
        if self.quality_bucket != quality_bucket(self.target_auc):
            raise DomainError("quality_bucket inconsistent with target_auc")

    def noise(self, case_ids: Iterable[str]) -> np.ndarray:
        """Per-case standard normal draws, independent of call order."""
        u = np.array(
            [((derive_seed("surrogate", self.seed, cid) >> 11) + 0.5) / 2.0**53 for cid in case_ids],
            dtype=float,
        )
        return ndtri(u)

    def scores(self, case_ids: Sequence[str], labels: Sequence[int]) -> np.ndarray:
        y = np.asarray(labels, dtype=float)
        return self.separation * y + self.noise(case_ids)

    def categorize(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=float)
        return np.where(s >= self.theta_ys, "YS", np.where(s >= self.theta_ew, "EW", "NS"))

    def posterior(self, scores):
        """(p0h, p3h): binormal posterior of onset now, and within the horizon."""
        d = self.separation
        z = d * np.asarray(scores, dtype=float) - 0.5 * d * d + logit(self.prevalence)
        return expit(z), expit(z + self.horizon_log_odds)

    def category_masses(self, label: int | None = None) -> dict:
        """Binormal-predicted probability of each category (mixture if label is None)."""
        def masses(shift):
            ys = 1.0 - ndtr(self.theta_ys - shift)
            ns = ndtr(self.theta_ew - shift)
            return {"YS": ys, "EW": 1.0 - ys - ns, "NS": ns}

        if label is not None:
            return masses(self.separation * label)
        pos, neg = masses(self.separation), masses(0.0)
        pi = self.prevalence
        return {k: pi * pos[k] + (1 - pi) * neg[k] for k in CATEGORIES}


def make_calibrated_surrogate(
    target_auc: float,
    policy: ThresholdPolicy = DEFAULT_POLICY,
    seed: int = 0,
    model_type: str = "deep-learning",
    name: str | None = None,
) -> SurrogateModel:
    if not 0.5 <= target_auc <= 1.0:
        raise DomainError(f"target_auc must be in [0.5, 1.0], got {target_auc!r}")
    d = separation_for_auc(target_auc)
    theta_ys = d / 2.0 + policy.ys_offset
    theta_ew = theta_ys - policy.ew_width
    sens = float(ndtr(d - theta_ys))
    spec = float(ndtr(theta_ys))
    pi = policy.prevalence
    return SurrogateModel(
        name=name or f"{model_type}-{round(target_auc * 100)}",
        model_type=model_type,
        target_auc=float(target_auc),
        separation=d,
        sensitivity=sens,
        specificity=spec,
        accuracy=pi * sens + (1 - pi) * spec,
        quality_bucket=quality_bucket(target_auc),
        theta_ys=theta_ys,
        theta_ew=theta_ew,
        prevalence=pi,
        horizon_log_odds=policy.horizon_log_odds,
        seed=int(seed),
    )


def make_random_model(seed: int = 0, policy: ThresholdPolicy = DEFAULT_POLICY, name: str = "random") -> SurrogateModel:
    """Control model: scores carry no label information (AUC 0.5)."""
    return make_calibrated_surrogate(0.5, policy, seed=seed, model_type="random", name=name)


def predict(model: SurrogateModel, case) -> ModelPrediction:
    """One prediction for a case with ``id`` and ``label`` attributes."""
    score = float(model.scores([case.id], [int(case.label == "septic")])[0])
    p0h, p3h = model.posterior(score)
    return ModelPrediction(str(model.categorize(score)), float(p0h), float(p3h), score)


def predict_many(model: SurrogateModel, case_ids: Sequence[str], labels: Sequence[int]):
    """Vectorized predictions: (categories, p0h, p3h, scores)."""
    s = model.scores(case_ids, labels)
    p0h, p3h = model.posterior(s)
    return model.categorize(s), p0h, p3h, s


@dataclass(frozen=True)
class ModelContext:
    """The AI model as a clinician encounters it in one setting."""

    present: bool
    model_type: str = ""
    quality_bucket: int = 0
    sensitivity: float = 0.0
    specificity: float = 0.0
    accuracy: float = 0.0
    auc: float = 0.0
    visible: bool = False
    prediction: str = ""
    p0h: float = 0.0
    p3h: float = 0.0

    @classmethod
    def none(cls) -> "ModelContext":
        return cls(present=False)

    @classmethod
    def from_model(cls, model: SurrogateModel, prediction: ModelPrediction | str, p0h=None, p3h=None, visible=False):
        if isinstance(prediction, ModelPrediction):
            category, p0h, p3h = prediction.category, prediction.p0h, prediction.p3h
        else:
            category = prediction
        return cls(
            present=True,
            model_type=model.model_type,
            quality_bucket=model.quality_bucket,
            sensitivity=model.sensitivity,
            specificity=model.specificity,
            accuracy=model.accuracy,
            auc=model.target_auc,
            visible=bool(visible),
            prediction=category,
            p0h=float(p0h),
            p3h=float(p3h),
        )


def default_surrogates(seed: int = 0, policy: ThresholdPolicy = DEFAULT_POLICY) -> dict:
    """The five models of the reference trial, keyed by plan name."""
    return {
        "random": make_random_model(derive_seed(seed, "random") & 0xFFFFFFFF, policy),
        "lstm75": make_calibrated_surrogate(0.75, policy, derive_seed(seed, "lstm75") & 0xFFFFFFFF, "deep-learning", "lstm75"),
        "lstm85": make_calibrated_surrogate(0.85, policy, derive_seed(seed, "lstm85") & 0xFFFFFFFF, "deep-learning", "lstm85"),
        "lstm95": make_calibrated_surrogate(0.95, policy, derive_seed(seed, "lstm95") & 0xFFFFFFFF, "deep-learning", "lstm95"),
        "coxphm95": make_calibrated_surrogate(0.95, policy, derive_seed(seed, "coxphm95") & 0xFFFFFFFF, "traditional-ml", "coxphm95"),
    }
