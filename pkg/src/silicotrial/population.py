"""Virtual clinician generator.

Sampling runs in two stages. Stage 1 fixes the class-of-position strata
with largest-remainder rounding, so the stratum sizes are exact. Stage 2
fills each stratum's population list: years-of-working and age buckets come
from a joint table that honors both the demographic marginals and the
position/experience coherence rules, then the remaining categorical features
are drawn with randomized (systematic) rounding.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

from ._seeding import derive_seed
from .errors import ConfigurationError

SEXES = ("male", "female")
POSITIONS = ("none", "junior", "intermediate", "senior")
INSTITUTIONS = ("grade-A tertiary", "grade-A secondary", "medical university")
DEPARTMENTS = (
    "Emergency",
    "ICU",
    "Internal Medicine",
    "Surgery",
    "Orthopedics",
    "Pediatrics",
    "Ophthalmology",
    "Gynaecology",
    "Traditional Chinese Medicine",
    "Infectious Diseases",
    "Rheumatology and Immunology",
    "Neurology",
    "Gastroenterology",
    "Anesthesia",
)
GENERAL_EXPERTISE = "general"

AGE_BUCKETS = ("≤30", "(30,40]", "(40,50]", "(50,60]")
YEARS_BUCKETS = ("(0,5]", "(5,10]", "(10,15]", "(15,20]", ">20")

# Inclusive integer supports. A first-year resident (0 completed years)
# falls in the first years bucket.
AGE_BUCKET_RANGES = {"≤30": (22, 30), "(30,40]": (31, 40), "(40,50]": (41, 50), "(50,60]": (51, 60)}
YEARS_BUCKET_RANGES = {"(0,5]": (0, 5), "(5,10]": (6, 10), "(10,15]": (11, 15), "(15,20]": (16, 20), ">20": (21, 45)}


def age_bucket(age: int) -> str:
    for name, (lo, hi) in AGE_BUCKET_RANGES.items():
        if age <= hi:
            return name
    return AGE_BUCKETS[-1]


def years_bucket(years: int) -> str:
    for name, (lo, hi) in YEARS_BUCKET_RANGES.items():
        if years <= hi:
            return name
    return YEARS_BUCKETS[-1]


class BucketStat(NamedTuple):
    fraction: float
    mean: float
    sd: float


@dataclass(frozen=True)
class CoherenceRules:
    """Cross-field rules every generated profile satisfies."""

    position_years: dict = field(
        default_factory=lambda: {
            "none": (0, 3),
            "junior": (1, 6),
            "intermediate": (4, 16),
            "senior": (8, 45),
        }
    )
    min_qualification_age: int = 22
    age_range: tuple = (22, 70)


DEFAULT_RULES = CoherenceRules()


@dataclass
class DemographicSpec:
    """Target distributions for the virtual population."""

    sex: dict
    age: dict  # bucket -> BucketStat
    years: dict  # bucket -> BucketStat
    position: dict
    institution: dict
    department: dict

    def categories(self) -> dict:
        """Fractions per category, keyed by category name."""
        return {
            "sex": dict(self.sex),
            "age": {k: v.fraction for k, v in self.age.items()},
            "years": {k: v.fraction for k, v in self.years.items()},
            "position": dict(self.position),
            "institution": dict(self.institution),
            "department": dict(self.department),
        }

    def validate(self) -> None:
        vocab = {
            "sex": SEXES,
            "age": AGE_BUCKETS,
            "years": YEARS_BUCKETS,
            "position": POSITIONS,
            "institution": INSTITUTIONS,
            "department": None,
        }
        for name, fractions in self.categories().items():
            if not fractions:
                raise ConfigurationError(f"{name}: empty distribution")
            allowed = vocab[name]
            if allowed is not None and set(fractions) != set(allowed):
                raise ConfigurationError(f"{name}: keys {sorted(fractions)} != {sorted(allowed)}")
            values = np.array(list(fractions.values()), dtype=float)
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise ConfigurationError(f"{name}: fractions must be finite and >= 0")
            if abs(values.sum() - 1.0) > 1e-9:
                raise ConfigurationError(f"{name}: fractions sum to {values.sum()!r}, not 1")
        for name, stats in (("age", self.age), ("years", self.years)):
            for bucket, stat in stats.items():
                if not stat.sd >= 0:
                    raise ConfigurationError(f"{name}[{bucket}]: sd must be >= 0")
        unknown = set(self.department) - set(DEPARTMENTS)
        if unknown:
            raise ConfigurationError(f"department: unknown names {sorted(unknown)}")


# Counts observed for the 125-clinician population.
REFERENCE_COUNTS = {
    "sex": {"male": 65, "female": 60},
    "age": {"≤30": 35, "(30,40]": 42, "(40,50]": 36, "(50,60]": 12},
    "years": {"(0,5]": 39, "(5,10]": 21, "(10,15]": 18, "(15,20]": 27, ">20": 20},
    "position": {"none": 21, "junior": 16, "intermediate": 42, "senior": 46},
    "institution": {"grade-A tertiary": 35, "grade-A secondary": 88, "medical university": 2},
    "department": {
        "Emergency": 32,
        "ICU": 48,
        "Internal Medicine": 14,
        "Surgery": 7,
        "Orthopedics": 1,
        "Pediatrics": 8,
        "Ophthalmology": 1,
        "Gynaecology": 5,
        "Traditional Chinese Medicine": 6,
        "Infectious Diseases": 1,
        "Rheumatology and Immunology": 1,
        "Neurology": 1,
        "Gastroenterology": 0,
        "Anesthesia": 0,
    },
}
_AGE_STATS = {"≤30": (26.2, 3.2), "(30,40]": (35.4, 2.8), "(40,50]": (43.5, 2.0), "(50,60]": (54.8, 2.9)}
_YEARS_STATS = {"(0,5]": (3.4, 1.5), "(5,10]": (9.1, 1.5), "(10,15]": (13.1, 1.1), "(15,20]": (18.5, 1.7), ">20": (28.6, 5.3)}


def default_spec() -> DemographicSpec:
    """Demographics of the 125-clinician reference population."""
    total = 125

    def frac(counts):
        return {k: v / total for k, v in counts.items()}

    return DemographicSpec(
        sex=frac(REFERENCE_COUNTS["sex"]),
        age={k: BucketStat(c / total, *_AGE_STATS[k]) for k, c in REFERENCE_COUNTS["age"].items()},
        years={k: BucketStat(c / total, *_YEARS_STATS[k]) for k, c in REFERENCE_COUNTS["years"].items()},
        position=frac(REFERENCE_COUNTS["position"]),
        institution=frac(REFERENCE_COUNTS["institution"]),
        department=frac(REFERENCE_COUNTS["department"]),
    )


@dataclass(frozen=True)
class ClinicianProfile:
    id: str
    institution_level: str
    sex: str
    age: int
    years_working: int
    department: str
    class_of_position: str
    area_of_expertise: str
    diagnosis_order: int = 0

    def with_order(self, order: int) -> "ClinicianProfile":
        return dataclasses.replace(self, diagnosis_order=order)


# --------------------------------------------------------------------------
# rounding helpers


def largest_remainder(n: int, fractions: Sequence[float]) -> np.ndarray:
    """Integer counts summing to ``n``; ties go to the earlier category."""
    expected = n * np.asarray(fractions, dtype=float)
    counts = np.floor(expected).astype(int)
    short = n - counts.sum()
    if short > 0:
        remainder = expected - counts
        order = np.argsort(-remainder, kind="stable")
        counts[order[:short]] += 1
    return counts


def systematic_round(rng: np.random.Generator, n: int, fractions: Sequence[float]) -> np.ndarray:
    """Randomized rounding: counts sum to ``n`` and have expectation ``n * p``."""
    expected = n * np.asarray(fractions, dtype=float)
    counts = np.floor(expected).astype(int)
    remainder = expected - counts
    short = n - counts.sum()
    if short > 0:
        points = rng.random() + np.arange(short)
        edges = np.cumsum(remainder)
        idx = np.searchsorted(edges, points, side="right")
        np.add.at(counts, np.minimum(idx, len(counts) - 1), 1)
    return counts


def _shuffled_labels(rng, n, fractions: dict) -> np.ndarray:
    names = list(fractions)
    counts = systematic_round(rng, n, [fractions[k] for k in names])
    labels = np.repeat(np.array(names, dtype=object), counts)
    rng.shuffle(labels)
    return labels


def discrete_normal(rng, mean, sd, lo, hi, size) -> np.ndarray:
    """Integers in [lo, hi] distributed as a rounded normal truncated to the range.

    Identical in law to drawing N(mean, sd), rounding, and rejecting draws
    outside [lo, hi], but without the rejection loop.
    """
    support = np.arange(lo, hi + 1)
    if sd <= 0:
        return np.full(size, int(np.clip(round(mean), lo, hi)))
    mass = ndtr((support + 0.5 - mean) / sd) - ndtr((support - 0.5 - mean) / sd)
    if mass.sum() <= 0:
        # whole support deep in one tail: fall back to the nearest end
        mass = np.zeros(len(support))
        mass[0 if mean < lo else -1] = 1.0
    cdf = np.cumsum(mass / mass.sum())
    return support[np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(support) - 1)]


# --------------------------------------------------------------------------
# joint (position, years bucket, age bucket) table


def _cell_ranges(rules: CoherenceRules, position: str, ybucket: str, abucket: str):
    """Effective integer ranges for (years, age) in one cell, or None if infeasible."""
    band_lo, band_hi = rules.position_years[position]
    y_lo, y_hi = YEARS_BUCKET_RANGES[ybucket]
    a_lo, a_hi = AGE_BUCKET_RANGES[abucket]
    a_lo = max(a_lo, rules.age_range[0], rules.min_qualification_age + band_lo)
    a_hi = min(a_hi, rules.age_range[1])
    y_lo = max(y_lo, band_lo)
    y_hi = min(y_hi, band_hi, a_hi - rules.min_qualification_age)
    if y_lo > y_hi or a_lo > a_hi:
        return None
    return (y_lo, y_hi), (a_lo, a_hi)


def joint_table(spec: DemographicSpec, rules: CoherenceRules = DEFAULT_RULES, tol=1e-12, max_iter=20000):
    """Maximum-entropy joint over (position, years bucket, age bucket).

    Iterative proportional fitting with structural zeros on cells that
    violate the coherence rules.
    """
    pos = np.array([spec.position[p] for p in POSITIONS])
    yrs = np.array([spec.years[y].fraction for y in YEARS_BUCKETS])
    age = np.array([spec.age[a].fraction for a in AGE_BUCKETS])
    mask = np.zeros((len(POSITIONS), len(YEARS_BUCKETS), len(AGE_BUCKETS)), dtype=bool)
    for i, p in enumerate(POSITIONS):
        for j, y in enumerate(YEARS_BUCKETS):
            for k, a in enumerate(AGE_BUCKETS):
                mask[i, j, k] = _cell_ranges(rules, p, y, a) is not None
    table = mask.astype(float)

    def _scale(current, target):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(current > 0, target / current, 0.0)

    err = np.inf
    for _ in range(max_iter):
        table *= _scale(table.sum(axis=(1, 2)), pos)[:, None, None]
        table *= _scale(table.sum(axis=(0, 2)), yrs)[None, :, None]
        table *= _scale(table.sum(axis=(0, 1)), age)[None, None, :]
        err = max(
            np.abs(table.sum(axis=(1, 2)) - pos).max(),
            np.abs(table.sum(axis=(0, 2)) - yrs).max(),
        )
        if err < tol:
            break
    if err > 1e-6:
        raise ConfigurationError(
            f"demographic marginals are incompatible with the coherence rules (residual {err:.3g})"
        )
    return table


# --------------------------------------------------------------------------
# generation


def generate_population(
    n: int,
    spec: DemographicSpec | None = None,
    seed: int = 0,
    rules: CoherenceRules = DEFAULT_RULES,
    general_expertise_mass: float = 0.1,
) -> list[ClinicianProfile]:
    """Generate ``n`` coherent virtual clinicians.

    Deterministic in ``(n, spec, seed)``.
    """
    if n < 0:
        raise ConfigurationError("n must be >= 0")
    spec = default_spec() if spec is None else spec
    spec.validate()
    if n == 0:
        return []
    rng = np.random.default_rng(derive_seed("population", seed))
    table = joint_table(spec, rules)

    # stage 1: exact position strata
    pos_counts = largest_remainder(n, [spec.position[p] for p in POSITIONS])

    positions, years, ages = [], [], []
    for i, position in enumerate(POSITIONS):
        n_pos = int(pos_counts[i])
        if n_pos == 0:
            continue
        cells = table[i].ravel()
        if cells.sum() <= 0:
            raise ConfigurationError(f"no coherent cell for position {position!r}")
        cell_counts = systematic_round(rng, n_pos, cells / cells.sum())
        for flat, count in enumerate(cell_counts):
            if count == 0:
                continue
            j, k = divmod(flat, len(AGE_BUCKETS))
            ybucket, abucket = YEARS_BUCKETS[j], AGE_BUCKETS[k]
            (y_lo, y_hi), (a_lo, a_hi) = _cell_ranges(rules, position, ybucket, abucket)
            ystat, astat = spec.years[ybucket], spec.age[abucket]
            y = discrete_normal(rng, ystat.mean, ystat.sd, y_lo, y_hi, count)
            a = np.empty(count, dtype=int)
            for yv in np.unique(y):
                sel = y == yv
                a[sel] = discrete_normal(
                    rng, astat.mean, astat.sd, max(a_lo, yv + rules.min_qualification_age), a_hi, sel.sum()
                )
            positions.extend([position] * count)
            years.extend(y.tolist())
            ages.extend(a.tolist())

    sexes = _shuffled_labels(rng, n, spec.sex)
    institutions = _shuffled_labels(rng, n, spec.institution)
    departments = _shuffled_labels(rng, n, spec.department)
    general = rng.random(n) < general_expertise_mass
    order = rng.permutation(n)

    profiles = []
    for idx, src in enumerate(order):
        dept = departments[idx]
        profiles.append(
            ClinicianProfile(
                id=f"VC{idx + 1:06d}",
                institution_level=str(institutions[idx]),
                sex=str(sexes[idx]),
                age=int(ages[src]),
                years_working=int(years[src]),
                department=str(dept),
                class_of_position=positions[src],
                area_of_expertise=GENERAL_EXPERTISE if general[idx] else str(dept),
            )
        )
    return profiles


def coherence_check(profile: ClinicianProfile, rules: CoherenceRules = DEFAULT_RULES) -> list[str]:
    """Names of the coherence rules ``profile`` breaks; empty when coherent."""
    violations = []
    enums = (
        ("sex", profile.sex, SEXES),
        ("institution", profile.institution_level, INSTITUTIONS),
        ("department", profile.department, DEPARTMENTS),
        ("position", profile.class_of_position, POSITIONS),
        ("expertise", profile.area_of_expertise, DEPARTMENTS + (GENERAL_EXPERTISE,)),
    )
    for name, value, allowed in enums:
        if value not in allowed:
            violations.append(f"enum:{name}")
    if not rules.age_range[0] <= profile.age <= rules.age_range[1]:
        violations.append("age-range")
    if profile.age - profile.years_working < rules.min_qualification_age:
        violations.append("age-experience")
    band = rules.position_years.get(profile.class_of_position)
    if band is not None:
        lo, hi = band
        # a position implies at least `lo` years of practice after qualifying
        if not lo <= profile.years_working <= hi or profile.age < rules.min_qualification_age + lo:
            violations.append("position-experience")
    if profile.diagnosis_order < 0:
        violations.append("diagnosis-order")
    return violations
