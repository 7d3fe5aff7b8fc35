"""Realism scoring: Jensen-Shannon divergence, component scores, cohort matching.

Each synthetic diary is scored against the survey-weighted pooled behaviour
of its demographically matched survey peers (one-to-cohort), and the whole
generated set is scored against the whole survey (aggregate).
"""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats

from .core import (
    INTERVAL_LABELS,
    CategorySchema,
    Diary,
    Distribution,
    Persona,
    diary_intervals,
    distribution_from_counts,
)
from .ingestion import PersonRecord

DIVERGENCE = "divergence"
DISTANCE = "distance"
COMPONENTS = ("trip_count_score", "purpose_score", "interval_score", "mode_score")
TRIP_COUNT_LABELS = tuple(str(i) for i in range(10)) + ("10+",)


# --- divergences ------------------------------------------------------------

def _aligned(a: Distribution, b: Distribution) -> tuple[np.ndarray, np.ndarray]:
    """Mass vectors over the union of both category lists (zero-filled)."""
    cats = list(a.categories)
    cats += [c for c in b.categories if c not in set(a.categories)]
    pa = np.array([a.prob(c) for c in cats])
    pb = np.array([b.prob(c) for c in cats])
    return pa, pb


def kl_divergence(a: Distribution, b: Distribution) -> float:
    """Base-2 Kullback-Leibler divergence D(a || b)."""
    if a.categories != b.categories:
        raise ValueError("distributions must share the same category list")
    pa = np.asarray(a.mass)
    pb = np.asarray(b.mass)
    support = pa > 0
    if np.any(pb[support] == 0):
        raise ValueError("b has zero mass where a is positive")
    return float(np.sum(pa[support] * np.log2(pa[support] / pb[support])))


def _kl_to_mixture(p: np.ndarray, q: np.ndarray) -> float:
    """D(p || (p+q)/2), written so tiny masses cannot underflow the midpoint."""
    s = p > 0
    return float(np.sum(p[s] * np.log2(2.0 * p[s] / (p[s] + q[s]))))


def jsd(p: Distribution, q: Distribution, variant: str = DIVERGENCE) -> float:
    """Jensen-Shannon divergence in bits, within [0, 1].

    ``variant="distance"`` returns its square root instead.
    """
    if p.is_empty or q.is_empty:
        raise ValueError("JSD is undefined for an empty distribution")
    pa, pb = _aligned(p, q)
    value = 0.5 * _kl_to_mixture(pa, pb) + 0.5 * _kl_to_mixture(pb, pa)
    value = min(max(value, 0.0), 1.0)
    if variant == DISTANCE:
        return math.sqrt(value)
    if variant != DIVERGENCE:
        raise ValueError(f"unknown JSD variant {variant!r}")
    return value


def _distribution_score(q: Distribution, p: Distribution, variant: str) -> float:
    if q.is_empty and p.is_empty:
        return 1.0
    if q.is_empty or p.is_empty:
        return 0.0
    return 1.0 - jsd(q, p, variant)


def trip_count_score(n_generated: int, mu_cohort: float) -> float:
    if n_generated < 0:
        raise ValueError("trip count must be non-negative")
    if mu_cohort == 0:
        return 1.0 if n_generated == 0 else 0.0
    return 1.0 - min(1.0, abs(n_generated - mu_cohort) / mu_cohort)


# --- cohorts ------------------------------------------------------------------

class CohortLevel(str, Enum):
    HYPER_STRICT_6 = "HyperStrict6"
    ULTRA_STRICT_5 = "UltraStrict5"
    STRICT_4 = "Strict4"
    BROAD_2 = "Broad2"
    FULL_DATASET = "FullDataset"


LADDER = (
    (CohortLevel.HYPER_STRICT_6, ("age_bracket", "employment_status", "household_vehicles",
                                  "income_level", "geoid", "household_size")),
    (CohortLevel.ULTRA_STRICT_5, ("age_bracket", "employment_status", "household_vehicles",
                                  "income_level", "household_size")),
    (CohortLevel.STRICT_4, ("age_bracket", "employment_status", "household_vehicles",
                            "income_level")),
    (CohortLevel.BROAD_2, ("age_bracket", "employment_status")),
    (CohortLevel.FULL_DATASET, ()),
)
LEVEL_ORDER = tuple(level for level, _ in LADDER)


def cohort_key(persona: Persona, fields: Sequence[str]) -> tuple:
    key = []
    for name in fields:
        value = getattr(persona, name)
        if name == "household_vehicles":
            value = min(int(value), 3)
        key.append(value)
    return tuple(key)


@dataclass(frozen=True)
class CohortStats:
    members: tuple[PersonRecord, ...]
    level: CohortLevel
    mean_trip_count: float
    purpose_dist: Distribution
    mode_dist: Distribution
    interval_dist: Distribution

    @property
    def size(self) -> int:
        return len({m.person_id for m in self.members})


def pooled_distributions(
    records: Sequence[PersonRecord], schema: CategorySchema
) -> tuple[Distribution, Distribution, Distribution]:
    """Survey-weighted purpose, mode and interval pools over ``records``."""
    purposes: dict[str, float] = defaultdict(float)
    modes: dict[str, float] = defaultdict(float)
    intervals: dict[str, float] = defaultdict(float)
    for rec in records:
        w = rec.survey_weight
        diary = rec.diary()
        for trip in diary.trips:
            purposes[trip.purpose] += w
            modes[trip.mode] += w
        for label in diary_intervals(diary):
            intervals[label] += w
    return (
        distribution_from_counts(purposes, schema.purposes),
        distribution_from_counts(modes, schema.modes),
        distribution_from_counts(intervals, INTERVAL_LABELS),
    )


def build_cohort_stats(members: Sequence[PersonRecord], level: CohortLevel,
                       schema: CategorySchema) -> CohortStats:
    if not members:
        raise ValueError("cohort has no members")
    weights = np.array([m.survey_weight for m in members])
    counts = np.array([len(m.trips) for m in members], dtype=float)
    mean = float(np.dot(weights, counts) / weights.sum())
    purpose, mode, interval = pooled_distributions(members, schema)
    return CohortStats(tuple(members), level, mean, purpose, mode, interval)


class CohortIndex:
    """Read-only lookup of survey cohorts; cohort statistics are cached per key."""

    def __init__(self, hts: Sequence[PersonRecord], schema: CategorySchema | None = None,
                 min_size: int = 10):
        if not hts:
            raise ValueError("survey dataset is empty")
        self.schema = schema or CategorySchema()
        self.min_size = min_size
        self.hts = tuple(hts)
        self._groups: dict[CohortLevel, dict[tuple, list[PersonRecord]]] = {}
        for level, fields in LADDER:
            groups: dict[tuple, list[PersonRecord]] = defaultdict(list)
            for rec in self.hts:
                groups[cohort_key(rec.demographics, fields)].append(rec)
            self._groups[level] = dict(groups)
        self._stats: dict[tuple, CohortStats] = {}

    def members(self, persona: Persona, level: CohortLevel) -> list[PersonRecord]:
        fields = dict(LADDER)[level]
        return self._groups[level].get(cohort_key(persona, fields), [])

    def match(self, persona: Persona) -> CohortStats:
        for level, fields in LADDER:
            key = cohort_key(persona, fields)
            members = self._groups[level].get(key, [])
            unique = len({m.person_id for m in members})
            if unique >= self.min_size or level is CohortLevel.FULL_DATASET:
                cache_key = (level, key)
                if cache_key not in self._stats:
                    self._stats[cache_key] = build_cohort_stats(members, level, self.schema)
                return self._stats[cache_key]
        raise AssertionError("unreachable: the full dataset always matches")


def match_cohort(persona: Persona, hts: Sequence[PersonRecord], min_size: int = 10,
                 schema: CategorySchema | None = None) -> CohortStats:
    return CohortIndex(hts, schema, min_size).match(persona)


# --- one-to-cohort scores -------------------------------------------------------

def diary_distributions(diary: Diary, schema: CategorySchema) -> tuple[Distribution, Distribution, Distribution]:
    purposes: dict[str, int] = defaultdict(int)
    modes: dict[str, int] = defaultdict(int)
    intervals: dict[str, int] = defaultdict(int)
    for trip in diary.trips:
        purposes[trip.purpose] += 1
        modes[trip.mode] += 1
    for label in diary_intervals(diary):
        intervals[label] += 1
    return (
        distribution_from_counts(purposes, schema.purposes),
        distribution_from_counts(modes, schema.modes),
        distribution_from_counts(intervals, INTERVAL_LABELS),
    )


def purpose_score(diary: Diary, cohort: CohortStats, schema: CategorySchema | None = None,
                  variant: str = DIVERGENCE) -> float:
    q, _, _ = diary_distributions(diary, schema or CategorySchema())
    return _distribution_score(q, cohort.purpose_dist, variant)


def mode_score(diary: Diary, cohort: CohortStats, schema: CategorySchema | None = None,
               variant: str = DIVERGENCE) -> float:
    _, q, _ = diary_distributions(diary, schema or CategorySchema())
    return _distribution_score(q, cohort.mode_dist, variant)


def interval_score(diary: Diary, cohort: CohortStats, schema: CategorySchema | None = None,
                   variant: str = DIVERGENCE) -> float:
    _, _, q = diary_distributions(diary, schema or CategorySchema())
    return _distribution_score(q, cohort.interval_dist, variant)


@dataclass(frozen=True)
class RealismScore:
    trip_count_score: float
    purpose_score: float
    interval_score: float
    mode_score: float
    overall: float
    cohort_level: CohortLevel
    cohort_size: int

    @classmethod
    def from_components(cls, trip, purpose, interval, mode, level, size) -> RealismScore:
        return cls(trip, purpose, interval, mode, (trip + purpose + interval + mode) / 4.0, level, size)


def overall_realism(diary: Diary, cohort: CohortStats, schema: CategorySchema | None = None,
                    variant: str = DIVERGENCE) -> RealismScore:
    schema = schema or CategorySchema()
    q_purpose, q_mode, q_interval = diary_distributions(diary, schema)
    return RealismScore.from_components(
        trip_count_score(diary.n_trips, cohort.mean_trip_count),
        _distribution_score(q_purpose, cohort.purpose_dist, variant),
        _distribution_score(q_interval, cohort.interval_dist, variant),
        _distribution_score(q_mode, cohort.mode_dist, variant),
        cohort.level,
        cohort.size,
    )


def score_diaries(
    diaries: Sequence[Diary],
    personas: Mapping[str, Persona],
    index: CohortIndex,
    variant: str = DIVERGENCE,
) -> list[RealismScore]:
    out = []
    for diary in diaries:
        cohort = index.match(personas[diary.persona_id])
        out.append(overall_realism(diary, cohort, index.schema, variant))
    return out


# --- aggregate ----------------------------------------------------------------------

@dataclass(frozen=True)
class AggregateScore:
    trip_count_score_agg: float
    purpose_score_agg: float
    interval_score_agg: float
    mode_score_agg: float
    overall_agg: float

    def to_dict(self) -> dict:
        return {
            "trip_count_score_agg": self.trip_count_score_agg,
            "purpose_score_agg": self.purpose_score_agg,
            "interval_score_agg": self.interval_score_agg,
            "mode_score_agg": self.mode_score_agg,
            "overall_agg": self.overall_agg,
        }


def trip_count_label(n: int) -> str:
    return "10+" if n >= 10 else str(n)


def aggregate_scores(
    generated: Sequence[Diary],
    hts: Sequence[PersonRecord],
    schema: CategorySchema | None = None,
    variant: str = DIVERGENCE,
) -> AggregateScore:
    if not generated:
        raise ValueError("no generated diaries to score")
    if not hts:
        raise ValueError("survey dataset is empty")
    schema = schema or CategorySchema()

    q_counts: dict[str, float] = defaultdict(float)
    q_purpose: dict[str, float] = defaultdict(float)
    q_mode: dict[str, float] = defaultdict(float)
    q_interval: dict[str, float] = defaultdict(float)
    for diary in generated:
        q_counts[trip_count_label(diary.n_trips)] += 1
        for trip in diary.trips:
            q_purpose[trip.purpose] += 1
            q_mode[trip.mode] += 1
        for label in diary_intervals(diary):
            q_interval[label] += 1

    p_counts: dict[str, float] = defaultdict(float)
    for rec in hts:
        p_counts[trip_count_label(len(rec.trips))] += rec.survey_weight
    p_purpose, p_mode, p_interval = pooled_distributions(hts, schema)

    trip = _distribution_score(distribution_from_counts(q_counts, TRIP_COUNT_LABELS),
                               distribution_from_counts(p_counts, TRIP_COUNT_LABELS), variant)
    purpose = _distribution_score(distribution_from_counts(q_purpose, schema.purposes), p_purpose, variant)
    interval = _distribution_score(distribution_from_counts(q_interval, INTERVAL_LABELS), p_interval, variant)
    mode = _distribution_score(distribution_from_counts(q_mode, schema.modes), p_mode, variant)
    return AggregateScore(trip, purpose, interval, mode, (trip + purpose + interval + mode) / 4.0)


# --- Welch's t-test -------------------------------------------------------------------

@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_two_sided: float

    def __iter__(self):
        return iter((self.t, self.df, self.p_two_sided))


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> WelchResult:
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    if va == 0 or vb == 0:
        raise ValueError("a sample has zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return WelchResult(float(t), float(df), float(min(p, 1.0)))
