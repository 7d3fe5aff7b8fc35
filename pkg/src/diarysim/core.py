"""Shared data types: category schema, personas, diaries, distributions.

Times are integer minutes from midnight on a single day (0..1439). Diaries
never wrap past midnight.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

DEFAULT_PURPOSES = (
    "Home",
    "Work",
    "School",
    "Shopping",
    "Social/Recreation",
    "Errands",
    "Meal",
    "Medical",
    "Other",
)

DEFAULT_MODES = (
    "Household Vehicle Driver",
    "Household Vehicle Passenger",
    "Walk",
    "Bicycle",
    "Public Transit",
    "Ride-hail/Taxi",
    "School Bus",
    "Other",
)

DEFAULT_AGE_BRACKETS = ("18-24", "25-34", "35-54", "55-64", "65+")

DEFAULT_INCOME_LEVELS = (
    "Less than $25k",
    "$25k-$49,999",
    "$50k-$74,999",
    "$75k-$99,999",
    "$100k or more",
    "Prefer not to answer",
)

EMPLOYMENT_STATUSES = ("employed", "unemployed")
DIARY_SOURCES = ("llm", "classical", "hts")

# (label, lower bound inclusive, upper bound exclusive), minutes
INTERVAL_BINS = (
    ("<15 min", 0.0, 15.0),
    ("15-30 min", 15.0, 30.0),
    ("30-60 min", 30.0, 60.0),
    ("1-2 hrs", 60.0, 120.0),
    ("2-4 hrs", 120.0, 240.0),
    (">4 hrs", 240.0, math.inf),
)
INTERVAL_LABELS = tuple(label for label, _, _ in INTERVAL_BINS)

MINUTES_PER_DAY = 1440
DIARY_CSV_COLUMNS = ("start_time", "end_time", "purpose", "mode", "distance_miles")


class SchemaError(ValueError):
    """A label or record does not conform to the configured category schema."""


def _check_labels(name: str, labels: Sequence[str]) -> None:
    if not labels:
        raise SchemaError(f"{name} must not be empty")
    if any(not isinstance(lab, str) or not lab.strip() for lab in labels):
        raise SchemaError(f"{name} contains an empty label")
    if len(set(labels)) != len(labels):
        raise SchemaError(f"{name} contains duplicate labels")


@dataclass(frozen=True)
class CategorySchema:
    purposes: tuple[str, ...] = DEFAULT_PURPOSES
    modes: tuple[str, ...] = DEFAULT_MODES
    interval_bins: tuple[str, ...] = INTERVAL_LABELS

    def __post_init__(self):
        object.__setattr__(self, "purposes", tuple(self.purposes))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "interval_bins", tuple(self.interval_bins))
        _check_labels("purposes", self.purposes)
        _check_labels("modes", self.modes)
        if self.interval_bins != INTERVAL_LABELS:
            raise SchemaError(f"interval_bins must be {INTERVAL_LABELS}")

    def canonical_purpose(self, label: str) -> str | None:
        return _canonical(label, self.purposes)

    def canonical_mode(self, label: str) -> str | None:
        return _canonical(label, self.modes)

    @classmethod
    def from_dict(cls, data: Mapping) -> CategorySchema:
        return cls(
            purposes=tuple(data.get("purposes", DEFAULT_PURPOSES)),
            modes=tuple(data.get("modes", DEFAULT_MODES)),
        )

    def to_dict(self) -> dict:
        return {"purposes": list(self.purposes), "modes": list(self.modes)}


def _canonical(label: str, allowed: Sequence[str]) -> str | None:
    key = " ".join(str(label).split()).casefold()
    for candidate in allowed:
        if candidate.casefold() == key:
            return candidate
    return None


@dataclass(frozen=True)
class Persona:
    persona_id: str
    geoid: str
    employment_status: str
    age_bracket: str
    household_vehicles: int
    income_level: str
    household_size: int

    def __post_init__(self):
        if self.employment_status not in EMPLOYMENT_STATUSES:
            raise SchemaError(f"unknown employment status {self.employment_status!r}")
        if isinstance(self.household_vehicles, bool) or int(self.household_vehicles) != self.household_vehicles:
            raise SchemaError("household_vehicles must be an integer")
        if self.household_vehicles < 0:
            raise SchemaError("household_vehicles must be >= 0")
        if int(self.household_size) != self.household_size or self.household_size < 1:
            raise SchemaError("household_size must be a positive integer")

    @property
    def employed(self) -> bool:
        return self.employment_status == "employed"

    def check_lists(
        self,
        age_brackets: Sequence[str] = DEFAULT_AGE_BRACKETS,
        income_levels: Sequence[str] = DEFAULT_INCOME_LEVELS,
    ) -> None:
        if self.age_bracket not in age_brackets:
            raise SchemaError(f"age bracket {self.age_bracket!r} is not configured")
        if self.income_level not in income_levels:
            raise SchemaError(f"income level {self.income_level!r} is not configured")

    def to_dict(self) -> dict:
        return {
            "persona_id": self.persona_id,
            "geoid": self.geoid,
            "employment_status": self.employment_status,
            "age_bracket": self.age_bracket,
            "household_vehicles": self.household_vehicles,
            "income_level": self.income_level,
            "household_size": self.household_size,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Persona:
        return cls(
            persona_id=str(data["persona_id"]),
            geoid=str(data["geoid"]),
            employment_status=data["employment_status"],
            age_bracket=data["age_bracket"],
            household_vehicles=int(data["household_vehicles"]),
            income_level=data["income_level"],
            household_size=int(data["household_size"]),
        )


@dataclass(frozen=True)
class TripRecord:
    start_time: int
    end_time: int
    purpose: str
    mode: str
    distance_miles: float = 0.0

    @property
    def duration(self) -> int:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class Diary:
    persona_id: str
    trips: tuple[TripRecord, ...] = ()
    source: str = "llm"

    def __post_init__(self):
        object.__setattr__(self, "trips", tuple(self.trips))
        if self.source not in DIARY_SOURCES:
            raise SchemaError(f"unknown diary source {self.source!r}")

    @property
    def n_trips(self) -> int:
        return len(self.trips)


@dataclass(frozen=True)
class Distribution:
    """Probability mass over an ordered label list.

    ``is_empty`` marks the zero-observation case; its mass is all zeros and
    scorers decide how to treat it.
    """

    categories: tuple[str, ...]
    mass: tuple[float, ...]
    is_empty: bool = False

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "mass", tuple(float(m) for m in self.mass))
        if len(self.categories) != len(self.mass):
            raise SchemaError("categories and mass differ in length")
        if len(set(self.categories)) != len(self.categories):
            raise SchemaError("duplicate category labels")
        if any(not math.isfinite(m) or m < 0 for m in self.mass):
            raise SchemaError("mass must be finite and non-negative")
        total = math.fsum(self.mass)
        if self.is_empty:
            if total != 0:
                raise SchemaError("empty distribution carries mass")
        elif abs(total - 1.0) > 1e-9:
            raise SchemaError(f"mass sums to {total!r}, not 1")

    @classmethod
    def empty(cls, categories: Sequence[str]) -> Distribution:
        return cls(tuple(categories), (0.0,) * len(categories), is_empty=True)

    @classmethod
    def from_mapping(cls, probs: Mapping[str, float], normalize: bool = False) -> Distribution:
        cats = tuple(probs)
        vals = [float(probs[c]) for c in cats]
        if normalize:
            total = math.fsum(vals)
            if total <= 0:
                return cls.empty(cats)
            vals = [v / total for v in vals]
        return cls(cats, tuple(vals))

    def prob(self, label: str) -> float:
        try:
            return self.mass[self.categories.index(label)]
        except ValueError:
            return 0.0

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.categories, self.mass))


def distribution_from_counts(
    counts: Mapping[str, float], categories: Sequence[str]
) -> Distribution:
    """Normalize (possibly weighted) counts over ``categories``."""
    categories = tuple(categories)
    index = {c: i for i, c in enumerate(categories)}
    totals = [0.0] * len(categories)
    for label, count in counts.items():
        if label not in index:
            raise SchemaError(f"label {label!r} is not among the categories")
        if count < 0 or not math.isfinite(count):
            raise SchemaError(f"count for {label!r} must be finite and non-negative")
        totals[index[label]] += float(count)
    grand = math.fsum(totals)
    if grand == 0:
        return Distribution.empty(categories)
    return Distribution(categories, tuple(t / grand for t in totals))


def bin_interval(duration_minutes: float) -> str:
    if not duration_minutes > 0:
        raise ValueError(f"duration must be positive, got {duration_minutes!r}")
    for label, lo, hi in INTERVAL_BINS:
        if lo <= duration_minutes < hi:
            return label
    raise ValueError(f"duration {duration_minutes!r} is not binnable")  # inf / nan


def diary_intervals(diary: Diary) -> list[str]:
    """Bin the gaps between consecutive trips; back-to-back trips are skipped."""
    labels = []
    for prev, nxt in zip(diary.trips, diary.trips[1:]):
        gap = nxt.start_time - prev.end_time
        if gap > 0:
            labels.append(bin_interval(gap))
    return labels


@dataclass(frozen=True)
class Violation:
    trip_index: int | None
    kind: str
    message: str


def validate_diary(diary: Diary, schema: CategorySchema) -> list[Violation]:
    """Return all invariant violations; an empty list means the diary is valid."""
    found = []
    for i, trip in enumerate(diary.trips):
        if not isinstance(trip.start_time, int) or not 0 <= trip.start_time < MINUTES_PER_DAY:
            found.append(Violation(i, "start_time", f"start_time {trip.start_time!r} outside [0, 1440)"))
        if not isinstance(trip.end_time, int) or not 0 <= trip.end_time < MINUTES_PER_DAY:
            found.append(Violation(i, "end_time", f"end_time {trip.end_time!r} outside [0, 1440)"))
        if trip.end_time <= trip.start_time:
            found.append(Violation(i, "duration", "end_time must be after start_time"))
        if trip.purpose not in schema.purposes:
            found.append(Violation(i, "purpose", f"unknown purpose {trip.purpose!r}"))
        if trip.mode not in schema.modes:
            found.append(Violation(i, "mode", f"unknown mode {trip.mode!r}"))
        if not (isinstance(trip.distance_miles, (int, float)) and math.isfinite(trip.distance_miles)
                and trip.distance_miles >= 0):
            found.append(Violation(i, "distance_miles", f"bad distance {trip.distance_miles!r}"))
        if i > 0:
            prev = diary.trips[i - 1]
            if trip.start_time < prev.start_time:
                found.append(Violation(i, "order", "trips not sorted by start_time"))
            elif trip.start_time < prev.end_time:
                found.append(Violation(i, "overlap", f"trip {i} starts before trip {i - 1} ends"))
    return found


# --- diary CSV -------------------------------------------------------------

def format_time(minutes: int) -> str:
    if not 0 <= minutes < MINUTES_PER_DAY:
        raise ValueError(f"time {minutes!r} outside the day")
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def parse_time(text: str) -> int:
    """Parse strict ``HH:MM`` (24-hour)."""
    hh, sep, mm = text.strip().partition(":")
    if not sep or not hh.isdigit() or not mm.isdigit() or len(mm) != 2 or len(hh) > 2:
        raise ValueError(f"malformed time {text!r}")
    hours, minutes = int(hh), int(mm)
    if hours > 23 or minutes > 59:
        raise ValueError(f"time out of range {text!r}")
    return hours * 60 + minutes


def format_distance(miles: float) -> str:
    return f"{miles:.2f}"


def _trip_row(trip: TripRecord) -> list[str]:
    return [
        format_time(trip.start_time),
        format_time(trip.end_time),
        trip.purpose,
        trip.mode,
        format_distance(trip.distance_miles),
    ]


def diary_to_csv(diary: Diary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DIARY_CSV_COLUMNS)
    for trip in diary.trips:
        writer.writerow(_trip_row(trip))
    return buf.getvalue()


def diaries_to_csv(diaries: Iterable[Diary]) -> str:
    """Batch form: a leading ``persona_id`` column, one trip per row.

    Zero-trip diaries are invisible in this format; callers that need them
    keep the persona list alongside (see ``read_diaries_csv``).
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("persona_id",) + DIARY_CSV_COLUMNS)
    for diary in diaries:
        for trip in diary.trips:
            writer.writerow([diary.persona_id] + _trip_row(trip))
    return buf.getvalue()


def read_diaries_csv(
    text: str,
    source: str,
    persona_ids: Sequence[str] | None = None,
) -> list[Diary]:
    """Inverse of ``diaries_to_csv``.

    With ``persona_ids`` given, every listed persona gets a diary (empty if it
    has no rows) and the output follows that order.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != ("persona_id",) + DIARY_CSV_COLUMNS:
        raise SchemaError(f"unexpected diary CSV header {header!r}")
    trips: dict[str, list[TripRecord]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 6:
            raise SchemaError(f"line {lineno}: expected 6 fields, got {len(row)}")
        pid, start, end, purpose, mode, dist = row
        try:
            trip = TripRecord(parse_time(start), parse_time(end), purpose, mode, float(dist))
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        trips.setdefault(pid, []).append(trip)
    order = list(persona_ids) if persona_ids is not None else list(trips)
    return [Diary(pid, tuple(trips.get(pid, ())), source) for pid in order]
