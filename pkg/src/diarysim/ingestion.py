"""Block-group profiles, household-travel-survey person records, and survey statistics.

File formats
------------
``blockgroups.json`` is a JSON array of profile objects::

    {"geoid": "090010101001", "employment_rate": 0.62,
     "age_distribution_by_employment": {"employed": {"25-34": 0.4, ...},
                                        "unemployed": {...}},
     "income_level": "$50k-$74,999", "intersection_density": 120.0,
     "vehicle_count_distribution": {"$50k-$74,999": {"medium": {"0": 0.05, "1": 0.3,
                                                               "2": 0.45, "3+": 0.2}}},
     "mean_household_size": 2.47, "population_density": 5000.0,
     "employment_mix": 0.45, "employment_density": 1200.0, "transit_access": 0.3}

``hts.jsonl`` holds one person per line::

    {"person_id": "p1", "survey_weight": 1.2,
     "demographics": {"geoid": ..., "employment_status": ..., "age_bracket": ...,
                      "household_vehicles": 2, "income_level": ..., "household_size": 3},
     "events": [{"kind": "Activity", "start_time": "00:00", "end_time": "08:00",
                 "purpose": "Home"},
                {"kind": "Trip", "start_time": "08:00", "end_time": "08:25",
                 "purpose": "Work", "mode": "Walk", "distance_miles": 1.1,
                 "travelers": 1}]}
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    Diary,
    Distribution,
    Persona,
    SchemaError,
    TripRecord,
    format_time,
    parse_time,
)

VEHICLE_LABELS = ("0", "1", "2", "3+")
DENSITY_TIERS = ("low", "medium", "high")
# intersections per square mile; low < 50 <= medium < 150 <= high
DEFAULT_DENSITY_THRESHOLDS = (50.0, 150.0)


class DataError(ValueError):
    """Raised for unreadable or invalid input files; the message carries location."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.detail = message
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def density_tier(density: float, thresholds: Sequence[float] = DEFAULT_DENSITY_THRESHOLDS) -> str:
    low, high = thresholds
    if density < low:
        return "low"
    if density < high:
        return "medium"
    return "high"


@dataclass(frozen=True)
class BlockGroupProfile:
    geoid: str
    employment_rate: float
    age_distribution_by_employment: Mapping[str, Distribution]
    income_level: str
    intersection_density: float
    vehicle_count_distribution: Mapping[tuple[str, str], Distribution]
    mean_household_size: float
    population_density: float
    employment_mix: float | str
    transit_access: float
    employment_density: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.employment_rate <= 1.0:
            raise SchemaError(f"employment_rate {self.employment_rate} outside [0, 1]")
        if not self.mean_household_size >= 1:
            raise SchemaError(f"mean_household_size {self.mean_household_size} < 1")
        for key, dist in self.vehicle_count_distribution.items():
            extra = set(dist.categories) - set(VEHICLE_LABELS)
            if extra:
                raise SchemaError(f"vehicle distribution {key} has labels {sorted(extra)}")
            if key[1] not in DENSITY_TIERS:
                raise SchemaError(f"unknown density tier {key[1]!r}")
        for status in self.age_distribution_by_employment:
            if status not in ("employed", "unemployed"):
                raise SchemaError(f"unknown employment status {status!r}")
        for name in ("intersection_density", "population_density", "transit_access",
                     "employment_density"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise SchemaError(f"{name} must be finite and non-negative")

    def to_dict(self) -> dict:
        vehicles: dict[str, dict[str, dict[str, float]]] = {}
        for (income, tier), dist in self.vehicle_count_distribution.items():
            vehicles.setdefault(income, {})[tier] = dist.as_dict()
        return {
            "geoid": self.geoid,
            "employment_rate": self.employment_rate,
            "age_distribution_by_employment": {
                k: d.as_dict() for k, d in self.age_distribution_by_employment.items()
            },
            "income_level": self.income_level,
            "intersection_density": self.intersection_density,
            "vehicle_count_distribution": vehicles,
            "mean_household_size": self.mean_household_size,
            "population_density": self.population_density,
            "employment_mix": self.employment_mix,
            "employment_density": self.employment_density,
            "transit_access": self.transit_access,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> BlockGroupProfile:
        vehicles = {}
        for income, by_tier in data["vehicle_count_distribution"].items():
            for tier, probs in by_tier.items():
                vehicles[(income, tier)] = Distribution.from_mapping(probs)
        return cls(
            geoid=str(data["geoid"]),
            employment_rate=float(data["employment_rate"]),
            age_distribution_by_employment={
                k: Distribution.from_mapping(v)
                for k, v in data["age_distribution_by_employment"].items()
            },
            income_level=data["income_level"],
            intersection_density=float(data["intersection_density"]),
            vehicle_count_distribution=vehicles,
            mean_household_size=float(data["mean_household_size"]),
            population_density=float(data["population_density"]),
            employment_mix=data["employment_mix"],
            transit_access=float(data["transit_access"]),
            employment_density=float(data.get("employment_density", 0.0)),
        )


def _iter_json_array(text: str, path) -> Iterator[tuple[int, object]]:
    """Yield (line number, element) for each element of a top-level JSON array."""
    decoder = json.JSONDecoder()

    def skip(pos):
        while pos < len(text) and text[pos] in " \t\r\n":
            pos += 1
        return pos

    def lineno(pos):
        return text.count("\n", 0, pos) + 1

    pos = skip(0)
    if pos >= len(text) or text[pos] != "[":
        raise DataError(path, lineno(pos), "expected a JSON array of profiles")
    pos = skip(pos + 1)
    if pos < len(text) and text[pos] == "]":
        return
    while True:
        try:
            obj, end = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            raise DataError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
        yield lineno(pos), obj
        pos = skip(end)
        if pos < len(text) and text[pos] == ",":
            pos = skip(pos + 1)
            continue
        if pos < len(text) and text[pos] == "]":
            if skip(pos + 1) != len(text):
                raise DataError(path, lineno(pos), "trailing content after array")
            return
        raise DataError(path, lineno(pos), "expected ',' or ']'")


def load_block_groups(path) -> dict[str, BlockGroupProfile]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(path, None, f"cannot read block-group file: {exc.strerror}") from None
    profiles: dict[str, BlockGroupProfile] = {}
    first_seen: dict[str, int] = {}
    for line, obj in _iter_json_array(text, path):
        if not isinstance(obj, dict):
            raise DataError(path, line, "profile must be a JSON object")
        try:
            profile = BlockGroupProfile.from_dict(obj)
        except KeyError as exc:
            raise DataError(path, line, f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError, AttributeError) as exc:
            raise DataError(path, line, str(exc)) from None
        if profile.geoid in profiles:
            raise DataError(
                path, line,
                f"duplicate GEOID {profile.geoid!r} (first at line {first_seen[profile.geoid]})",
            )
        profiles[profile.geoid] = profile
        first_seen[profile.geoid] = line
    return profiles


def save_block_groups(profiles: Iterable[BlockGroupProfile], path) -> None:
    data = [p.to_dict() for p in profiles]
    Path(path).write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# --- survey records ---------------------------------------------------------

@dataclass(frozen=True)
class Event:
    kind: str
    start_time: int
    end_time: int
    purpose: str | None = None
    mode: str | None = None
    distance_miles: float | None = None
    travelers: int | None = None

    @property
    def duration(self) -> int:
        return self.end_time - self.start_time

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "start_time": format_time(self.start_time),
            "end_time": format_time(self.end_time),
        }
        for name in ("purpose", "mode", "distance_miles", "travelers"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> Event:
        kind = data["kind"]
        if kind not in ("Activity", "Trip"):
            raise SchemaError(f"unknown event kind {kind!r}")
        ev = cls(
            kind=kind,
            start_time=parse_time(data["start_time"]),
            end_time=parse_time(data["end_time"]),
            purpose=data.get("purpose"),
            mode=data.get("mode"),
            distance_miles=None if data.get("distance_miles") is None else float(data["distance_miles"]),
            travelers=None if data.get("travelers") is None else int(data["travelers"]),
        )
        if ev.end_time < ev.start_time:
            raise SchemaError("event ends before it starts")
        if kind == "Trip":
            for name in ("purpose", "mode", "distance_miles"):
                if getattr(ev, name) is None:
                    raise SchemaError(f"Trip event missing {name}")
            if ev.end_time == ev.start_time:
                raise SchemaError("Trip event has zero duration")
            if ev.distance_miles < 0:
                raise SchemaError("Trip event has negative distance")
        return ev


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    survey_weight: float
    demographics: Persona
    events: tuple[Event, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not (math.isfinite(self.survey_weight) and self.survey_weight > 0):
            raise SchemaError("survey_weight must be positive")
        for i in range(1, len(self.events)):
            if self.events[i].start_time < self.events[i - 1].end_time:
                raise SchemaError(
                    f"events out of chronological order at event {i} "
                    f"({format_time(self.events[i].start_time)} before "
                    f"{format_time(self.events[i - 1].end_time)})"
                )

    @property
    def trips(self) -> tuple[TripRecord, ...]:
        return tuple(
            TripRecord(e.start_time, e.end_time, e.purpose, e.mode, e.distance_miles)
            for e in self.events
            if e.kind == "Trip"
        )

    def diary(self) -> Diary:
        return Diary(self.person_id, self.trips, "hts")

    def to_dict(self) -> dict:
        demo = self.demographics.to_dict()
        demo.pop("persona_id")
        return {
            "person_id": self.person_id,
            "survey_weight": self.survey_weight,
            "demographics": demo,
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> PersonRecord:
        pid = str(data["person_id"])
        demo = dict(data["demographics"])
        demo["persona_id"] = pid
        return cls(
            person_id=pid,
            survey_weight=float(data["survey_weight"]),
            demographics=Persona.from_dict(demo),
            events=tuple(Event.from_dict(e) for e in data.get("events", [])),
        )


def load_hts(path) -> list[PersonRecord]:
    path = Path(path)
    records = []
    seen: set[str] = set()
    try:
        handle = path.open(encoding="utf-8")
    except OSError as exc:
        raise DataError(path, None, f"cannot read survey file: {exc.strerror}") from None
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(path, lineno, f"invalid JSON: {exc.msg}") from None
            try:
                record = PersonRecord.from_dict(obj)
            except KeyError as exc:
                raise DataError(path, lineno, f"missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError, AttributeError) as exc:
                raise DataError(path, lineno, str(exc)) from None
            if record.person_id in seen:
                raise DataError(path, lineno, f"duplicate person_id {record.person_id!r}")
            seen.add(record.person_id)
            records.append(record)
    return records


def save_hts(records: Iterable[PersonRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


# --- outlier filter -----------------------------------------------------------

OUTLIER_FIELDS = ("distance_miles", "duration", "travelers")


@dataclass(frozen=True)
class OutlierFilterResult:
    kept: list
    removed: list
    applied: bool = True
    bounds: dict = field(default_factory=dict)

    def __iter__(self):
        # allows ``kept, removed = filter_outlier_trips(...)``
        return iter((self.kept, self.removed))


def quartiles(values) -> tuple[float, float]:
    q1, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.75], method="linear")
    return float(q1), float(q3)


def _trip_value(trip, name):
    if name == "travelers":
        return 1 if trip.travelers is None else trip.travelers
    if name == "duration":
        return trip.end_time - trip.start_time
    return getattr(trip, name)


def filter_outlier_trips(trips: Sequence, k: float = 3.0) -> OutlierFilterResult:
    """Drop trips whose distance, duration or traveler count is an extreme outlier.

    A trip is removed when any field lies strictly above Q3 + k*IQR or below
    Q1 - k*IQR, with quartiles taken once over the whole input. Fewer than
    four trips leaves the input untouched (``applied`` is False).
    """
    trips = list(trips)
    if len(trips) < 4:
        return OutlierFilterResult(trips, [], applied=False)
    bounds = {}
    outlier = np.zeros(len(trips), dtype=bool)
    for name in OUTLIER_FIELDS:
        vals = np.array([_trip_value(t, name) for t in trips], dtype=float)
        q1, q3 = quartiles(vals)
        iqr = q3 - q1
        lo, hi = q1 - k * iqr, q3 + k * iqr
        bounds[name] = (lo, hi)
        outlier |= (vals > hi) | (vals < lo)
    kept = [t for t, o in zip(trips, outlier) if not o]
    removed = [t for t, o in zip(trips, outlier) if o]
    return OutlierFilterResult(kept, removed, applied=True, bounds=bounds)


def filter_hts(records: Sequence[PersonRecord], k: float = 3.0) -> tuple[list[PersonRecord], OutlierFilterResult]:
    """Apply the outlier filter to every Trip event across the survey."""
    all_trips = [(i, e) for i, rec in enumerate(records) for e in rec.events if e.kind == "Trip"]
    result = filter_outlier_trips([e for _, e in all_trips], k=k)
    removed_ids = {id(e) for e in result.removed}
    out = []
    for rec in records:
        events = tuple(e for e in rec.events if id(e) not in removed_ids)
        out.append(rec if len(events) == len(rec.events) else replace(rec, events=events))
    return out, result


# --- weighted statistics ------------------------------------------------------

def _check_weights(values, weights):
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ValueError(f"values and weights differ in length ({values.size} vs {weights.size})")
    if values.size == 0:
        raise ValueError("empty input")
    if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
        raise ValueError("weights must be positive and finite")
    return values, weights


def weighted_mean(values, weights) -> float:
    values, weights = _check_weights(values, weights)
    return float(np.dot(values, weights) / weights.sum())


def weighted_share(indicator, weights) -> float:
    """Weighted fraction of rows where ``indicator`` is true."""
    indicator = np.asarray(indicator, dtype=bool).astype(float)
    return weighted_mean(indicator, weights)
