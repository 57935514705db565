"""Synthetic patient cohorts and an oracle clinician world with planted effects.

Each case carries two latent evidence scores: ``e_fund`` (visible from the
fundamental panel and notes) and ``e_adv`` (visible only in the advanced
panels). Embeddings encode them along fixed random unit directions plus
isotropic noise, so a linear reduction of the patient vector recovers them.

The oracle decision law is logistic::

    logit P(septic) = bias + skill * caution * k_stage * evidence_stage + influence

with ``influence`` = acceptance x visibility x quality x category sign. The
clinician-side inputs are all observable by the simulator, so a well-fitted
simulator can recover every planted effect.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._seeding import derive_seed, rng_for
from .behavior import ADVANCED_ITEMS, VOCABULARY
from .errors import ConfigurationError
from .features import (
    ADVANCED_EMBED_PER_ITEM,
    ADVANCED_PANELS,
    FUNDAMENTAL_EMBED_WIDTH,
    IMAGE_WIDTH,
    MARITAL_STATUSES,
    RACES,
    TEXT_WIDTH,
    TIMESERIES_WIDTH,
    PatientCase,
)
from .population import POSITIONS, SEXES
from .trial import Assignment, DiagnosisRecord, TrialPlan, allocate, setting_contexts

ADVANCED_WIDTH = TIMESERIES_WIDTH - FUNDAMENTAL_EMBED_WIDTH
N_TIMEPOINTS = 6


@dataclass(frozen=True)
class WorldParams:
    # cohort
    cohort_size: int = 600  # cases per patient group
    septic_fraction: float = 0.5
    pre_onset_fraction: float = 0.5  # of septic cases, onset still ahead at query time
    signal_strength: float = 0.6  # label shift of the fundamental evidence
    advanced_signal_strength: float = 0.8
    pre_onset_attenuation: float = 0.5  # pre-onset cases show weaker evidence
    embedding_amplitude: float = 1.0
    embedding_noise: float = 0.1
    # decisions
    bias: float = 0.0
    position_skill: tuple = (0.7, 0.85, 1.0, 1.1)  # by POSITIONS
    years_skill: float = 0.2  # added at 30+ years, linear below
    prelim_weight: float = 1.0
    final_weight: float = 0.65
    caution_uplift: float = 0.45  # skill boost whenever a model is in the loop
    acceptance_weight: float = 0.6
    position_acceptance: tuple = (1.2, 1.1, 1.0, 0.8)
    order_trust: float = 0.1  # acceptance growth from first to last case
    visibility_effect: float = 1.8
    quality_effect: float = 0.25  # per quality bucket above 3, visible only
    ew_strength: float = 0.6
    final_influence: float = 0.8
    # times, minutes, log-normal
    prelim_log_mean: float = math.log(1.7)
    final_log_mean: float = math.log(2.9)
    time_sigma: float = 0.4
    position_time: tuple = (0.15, 0.05, 0.0, -0.1)
    model_time: float = -0.05
    visible_time: float = -0.05
    click_time: float = 0.08  # per advanced item clicked, final stage
    # clicks
    fundamental_click: float = 0.97
    click_propensity: tuple = (0.55, 0.35, 0.3, 0.25, 0.1, 0.2, 0.2, 0.3)  # by ADVANCED_ITEMS
    position_clicks: tuple = (0.3, 0.2, 0.0, -0.2)  # logit shift
    model_clicks: float = -0.2
    seed: int = 0

    def validate(self) -> None:
        for name in ("septic_fraction", "pre_onset_fraction", "fundamental_click", "pre_onset_attenuation"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        if any(not 0.0 < p < 1.0 for p in self.click_propensity):
            raise ConfigurationError("click propensities must be in (0, 1)")
        if len(self.click_propensity) != len(ADVANCED_ITEMS):
            raise ConfigurationError(f"need {len(ADVANCED_ITEMS)} click propensities")
        for name in ("position_skill", "position_acceptance", "position_time", "position_clicks"):
            if len(getattr(self, name)) != len(POSITIONS):
                raise ConfigurationError(f"{name} needs one value per position")
        if self.time_sigma <= 0 or self.embedding_noise <= 0:
            raise ConfigurationError("sigmas must be > 0")
        if self.cohort_size < 1:
            raise ConfigurationError("cohort_size must be >= 1")

    def replace(self, **kw) -> "WorldParams":
        return dataclasses.replace(self, **kw)

    def provenance(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def planted_directions(params: WorldParams) -> dict:
    """Unit directions carrying the evidence in each embedding block."""
    rng = rng_for("directions", params.seed)

    def unit(d):
        v = rng.standard_normal(d)
        return v / np.linalg.norm(v)

    return {
        "fundamental": unit(FUNDAMENTAL_EMBED_WIDTH),
        "advanced": unit(ADVANCED_WIDTH),
        "text": unit(TEXT_WIDTH),
        "image": unit(IMAGE_WIDTH),
    }


# --------------------------------------------------------------------------
# cohort


def _vitals(rng, sev, t):
    """Label-conditioned vitals over t time points; ``sev`` in [0, 1]."""
    base = np.array([37.0, 122.0, 76.0, 82.0, 16.0, 15.0])
    shift = np.array([1.5, -25.0, -12.0, 30.0, 8.0, -3.0])
    noise = np.array([0.3, 8.0, 6.0, 8.0, 2.0, 0.5])
    ramp = np.linspace(0.6, 1.0, t)[:, None]
    v = base + shift * sev * ramp + noise * rng.standard_normal((t, 6))
    v[:, 5] = np.clip(np.round(v[:, 5]), 3, 15)
    qsofa = (v[:, 4] >= 22).astype(float) + (v[:, 1] <= 100).astype(float) + (v[:, 5] < 15).astype(float)
    return np.column_stack([v, qsofa])


def generate_cohort(params: WorldParams, seed: int, group: str = "", n: int | None = None) -> list:
    """``n`` (default ``params.cohort_size``) labeled cases for one patient group."""
    params.validate()
    n = params.cohort_size if n is None else n
    rng = rng_for("cohort", params.seed, seed, group)
    dirs = planted_directions(params)
    amp, sig = params.embedding_amplitude, params.embedding_noise
    septic = rng.random(n) < params.septic_fraction
    pre = septic & (rng.random(n) < params.pre_onset_fraction)
    y = np.where(septic, 1.0, -1.0)
    strength = np.where(pre, params.pre_onset_attenuation, 1.0)
    e_fund = params.signal_strength * strength * y + rng.standard_normal(n)
    e_adv = params.advanced_signal_strength * strength * y + rng.standard_normal(n)
    query = rng.uniform(6.0, 48.0, n)
    ahead = rng.uniform(0.25, 3.0, n)
    behind = rng.uniform(0.25, 2.5, n)
    prefix = f"{group}-" if group else "P-"
    cases = []
    for i in range(n):
        ts = np.empty(TIMESERIES_WIDTH)
        ts[:FUNDAMENTAL_EMBED_WIDTH] = amp * e_fund[i] * dirs["fundamental"] + sig * rng.standard_normal(FUNDAMENTAL_EMBED_WIDTH)
        ts[FUNDAMENTAL_EMBED_WIDTH:] = amp * e_adv[i] * dirs["advanced"] + sig * rng.standard_normal(ADVANCED_WIDTH)
        text = 0.5 * amp * e_fund[i] * dirs["text"] + sig * rng.standard_normal(TEXT_WIDTH)
        image = 0.3 * amp * e_fund[i] * dirs["image"] + sig * rng.standard_normal(IMAGE_WIDTH)
        sev = float(expit(1.5 * e_fund[i] - 1.0))
        advanced = {
            name: e_adv[i] * 0.5 + rng.standard_normal((2, dims)) for name, dims in ADVANCED_PANELS.items()
        }
        onset = None
        if septic[i]:
            onset = float(query[i] + (ahead[i] if pre[i] else -behind[i]))
        cases.append(
            PatientCase(
                id=f"{prefix}{i + 1:05d}",
                sex=SEXES[int(rng.integers(2))],
                age=float(np.clip(round(rng.normal(64, 15)), 18, 95)),
                marital_status=MARITAL_STATUSES[int(rng.integers(len(MARITAL_STATUSES)))],
                race=RACES[int(rng.integers(len(RACES)))],
                fundamental=_vitals(rng, sev, N_TIMEPOINTS),
                advanced=advanced,
                text_embedding=text,
                image_embedding=image,
                timeseries_embedding=ts,
                label="septic" if septic[i] else "non-septic",
                onset_time=onset,
                admission_time=0.0,
                query_time=float(query[i]),
                group=group,
                latent={"e_fund": float(e_fund[i]), "e_adv": float(e_adv[i])},
            )
        )
    return cases


def generate_group_cohorts(params: WorldParams, groups, seed: int) -> dict:
    return {g: generate_cohort(params, seed, g) for g in groups}


# --------------------------------------------------------------------------
# oracle behaviour

_SIGNS = {"YS": 1.0, "NS": -1.0}


def _clinician_arrays(params, clinicians):
    pos = np.array([POSITIONS.index(c.class_of_position) for c in clinicians])
    years = np.array([c.years_working for c in clinicians], dtype=float)
    order = np.array([c.diagnosis_order for c in clinicians], dtype=float)
    return pos, years, order


def _context_arrays(params, contexts):
    present = np.array([c.present for c in contexts])
    visible = np.array([c.present and c.visible for c in contexts])
    bucket = np.array([c.quality_bucket for c in contexts], dtype=float)
    sign = np.array([_SIGNS.get(c.prediction, params.ew_strength) if c.present else 0.0 for c in contexts])
    return present, visible, bucket, sign


def oracle_logits(params: WorldParams, clinicians, cases, contexts):
    """(prelim, final) decision logits for aligned rows.

    ``clinicians`` must carry their diagnosis_order.
    """
    pos, years, order = _clinician_arrays(params, clinicians)
    present, visible, bucket, sign = _context_arrays(params, contexts)
    e_fund = np.array([c.latent["e_fund"] for c in cases])
    e_adv = np.array([c.latent["e_adv"] for c in cases])

    skill = np.asarray(params.position_skill)[pos] + params.years_skill * np.minimum(years, 30.0) / 30.0
    skill = skill * np.where(present, 1.0 + params.caution_uplift, 1.0)
    accept = (
        params.acceptance_weight
        * np.asarray(params.position_acceptance)[pos]
        * (1.0 + params.order_trust * np.clip(order - 1.0, 0.0, None) / 5.0)
    )
    accept = accept * np.where(visible, params.visibility_effect * (1.0 + params.quality_effect * (bucket - 3.0)), 1.0)
    influence = accept * sign
    z_p = params.bias + skill * params.prelim_weight * e_fund + influence
    z_f = params.bias + skill * params.final_weight * (e_fund + e_adv) + params.final_influence * influence
    return z_p, z_f


def oracle_probabilities(params: WorldParams, clinicians, cases, contexts):
    z_p, z_f = oracle_logits(params, clinicians, cases, contexts)
    return expit(z_p), expit(z_f)


def oracle_log_time_means(params: WorldParams, clinicians, contexts, n_advanced_clicks=None):
    pos, _, _ = _clinician_arrays(params, clinicians)
    present, visible, _, _ = _context_arrays(params, contexts)
    shift = np.asarray(params.position_time)[pos] + params.model_time * present + params.visible_time * visible
    clicks = 0.0 if n_advanced_clicks is None else np.asarray(n_advanced_clicks, dtype=float)
    return params.prelim_log_mean + shift, params.final_log_mean + shift + params.click_time * clicks


def _click_sequences(params, rng, pos, present):
    n = len(pos)
    base = np.log(np.asarray(params.click_propensity) / (1 - np.asarray(params.click_propensity)))
    shift = np.asarray(params.position_clicks)[pos] + params.model_clicks * present
    p_item = expit(base[None, :] + shift[:, None])
    clicked = rng.random((n, len(ADVANCED_ITEMS))) < p_item
    # Plackett-Luce order over clicked items via Gumbel keys
    keys = np.log(p_item) + rng.gumbel(size=p_item.shape)
    fund = rng.random(n) < params.fundamental_click
    seqs = []
    for i in range(n):
        items = [j for j in np.argsort(-keys[i]) if clicked[i, j]]
        seq = ([VOCABULARY[0]] if fund[i] else []) + [ADVANCED_ITEMS[j] for j in items]
        seqs.append(tuple(seq))
    return seqs


@dataclass
class OracleRecord:
    record: DiagnosisRecord
    latent: dict
    provenance: dict = field(default_factory=dict, repr=False)


def simulate_oracle(params: WorldParams, clinicians, cases, contexts, seed: int):
    """Oracle behaviour for aligned rows: decisions, times, clicks and latents."""
    rng = rng_for("oracle", params.seed, seed)
    n = len(cases)
    p_p, p_f = oracle_probabilities(params, clinicians, cases, contexts)
    pos, _, _ = _clinician_arrays(params, clinicians)
    present = np.array([c.present for c in contexts])
    seqs = _click_sequences(params, rng, pos, present)
    n_adv = np.array([sum(t in ADVANCED_ITEMS for t in s) for s in seqs])
    mu_p, mu_f = oracle_log_time_means(params, clinicians, contexts, n_adv)
    t_p = np.exp(mu_p + params.time_sigma * rng.standard_normal(n))
    t_f = np.exp(mu_f + params.time_sigma * rng.standard_normal(n))
    d_p = rng.random(n) < p_p
    d_f = rng.random(n) < p_f
    return {
        "p_prelim": p_p,
        "p_final": p_f,
        "prelim_decision": np.where(d_p, "septic", "non-septic"),
        "final_decision": np.where(d_f, "septic", "non-septic"),
        "prelim_time": t_p,
        "final_time": t_f,
        "click_sequence": seqs,
        "log_time_means": (mu_p, mu_f),
    }


def generate_oracle_records(clinicians, cohorts: dict, plan: TrialPlan, params: WorldParams, seed: int) -> list:
    """One OracleRecord per plan assignment."""
    params.validate()
    plan.validate()
    assignments: list[Assignment] = allocate(plan, clinicians, cohorts, seed)
    profiles = {c.id: c for c in clinicians}
    cases = {c.id: c for g in plan.groups for c in cohorts[g]}
    contexts = setting_contexts(plan, cohorts)
    rows_clin = [profiles[a.clinician_id].with_order(a.diagnosis_order) for a in assignments]
    rows_case = [cases[a.case_id] for a in assignments]
    rows_ctx = [contexts[a.setting_id, a.case_id] for a in assignments]
    out = simulate_oracle(params, rows_clin, rows_case, rows_ctx, seed)
    prov = params.provenance()
    models = {s.id: s.model or "" for s in plan.settings}
    records = []
    for i, a in enumerate(assignments):
        seq = out["click_sequence"][i]
        rec = DiagnosisRecord(
            record_id=a.record_id,
            clinician_id=a.clinician_id,
            case_id=a.case_id,
            setting_id=a.setting_id,
            diagnosis_order=a.diagnosis_order,
            model_name=models[a.setting_id],
            context=rows_ctx[i],
            prelim_decision=str(out["prelim_decision"][i]),
            prelim_time=float(out["prelim_time"][i]),
            click_sequence=seq,
            item_ratio=sum(t in ADVANCED_ITEMS for t in seq) / len(ADVANCED_ITEMS),
            final_decision=str(out["final_decision"][i]),
            final_time=float(out["final_time"][i]),
            seed=derive_seed("oracle-record", params.seed, seed, a.record_id),
        )
        latent = {
            "p_prelim": float(out["p_prelim"][i]),
            "p_final": float(out["p_final"][i]),
            "log_time_prelim": float(out["log_time_means"][0][i]),
            "log_time_final": float(out["log_time_means"][1][i]),
        }
        records.append(OracleRecord(rec, latent, prov))
    return records


def oracle_expected(records, clinicians: dict, cases: dict, params: WorldParams) -> list:
    """Copies of ``records`` carrying the oracle's probabilities and median times.

    Feeding these to the metrics' expected-value mode gives the planted
    effect sizes on exactly the same (clinician, case, setting) triples.
    """
    records = list(records)
    clin = [clinicians[r.clinician_id].with_order(r.diagnosis_order) for r in records]
    rows = [cases[r.case_id] for r in records]
    ctx = [r.context for r in records]
    p_p, p_f = oracle_probabilities(params, clin, rows, ctx)
    n_adv = [
        0 if r.click_sequence is None and r.item_ratio is None
        else (sum(t in ADVANCED_ITEMS for t in r.click_sequence) if r.click_sequence is not None else round(r.item_ratio * len(ADVANCED_ITEMS)))
        for r in records
    ]
    mu_p, mu_f = oracle_log_time_means(params, clin, ctx, n_adv)
    return [
        dataclasses.replace(
            r,
            prelim_p=float(p_p[i]),
            final_p=float(p_f[i]),
            prelim_time=float(np.exp(mu_p[i])),
            final_time=float(np.exp(mu_f[i])),
        )
        for i, r in enumerate(records)
    ]


# --------------------------------------------------------------------------
# corruption, for exercising the validation filter

CORRUPTIONS = ("missing-prelim", "missing-final", "missing-time", "short-time", "long-time", "unknown-clinician")


def inject_corruption(records, rate: float, seed: int, time_bounds=(0.1, 60.0)):
    """Corrupt a ``rate`` share of records; returns (records, corrupted ids)."""
    records = list(records)
    rng = rng_for("corrupt", seed)
    n_bad = int(round(rate * len(records)))
    picks = rng.choice(len(records), size=n_bad, replace=False)
    kinds = rng.integers(0, len(CORRUPTIONS), size=n_bad)
    out = list(records)
    for i, k in zip(picks, kinds):
        kind = CORRUPTIONS[k]
        r = records[i]
        if kind == "missing-prelim":
            out[i] = dataclasses.replace(r, prelim_decision=None)
        elif kind == "missing-final":
            out[i] = dataclasses.replace(r, final_decision=None)
        elif kind == "missing-time":
            out[i] = dataclasses.replace(r, final_time=None)
        elif kind == "short-time":
            out[i] = dataclasses.replace(r, prelim_time=time_bounds[0] / 10)
        elif kind == "long-time":
            out[i] = dataclasses.replace(r, final_time=time_bounds[1] * 10)
        else:
            out[i] = dataclasses.replace(r, clinician_id="VC-UNKNOWN")
    return out, {records[i].record_id for i in picks}
