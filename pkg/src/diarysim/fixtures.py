"""Deterministic synthetic inputs: block groups, a small travel survey, mock LLM replies.

The files under ``diarysim/data`` are produced by ``write_fixture`` and double
as documented examples of every input schema. Nothing here resembles a real
survey beyond broad shape (commute peaks, car-dominant modes).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_AGE_BRACKETS,
    DEFAULT_INCOME_LEVELS,
    Diary,
    Distribution,
    Persona,
    TripRecord,
    diary_to_csv,
)
from .ingestion import (
    DENSITY_TIERS,
    BlockGroupProfile,
    Event,
    PersonRecord,
    save_block_groups,
    save_hts,
)
from .personas import SeededSampler, synthesize_persona

DATA_DIR = Path(__file__).parent / "data"

_SPEED_MPH = {
    "Household Vehicle Driver": 28.0,
    "Household Vehicle Passenger": 28.0,
    "Walk": 3.0,
    "Bicycle": 10.0,
    "Public Transit": 14.0,
    "Ride-hail/Taxi": 22.0,
}


def _vehicle_dist(income_rank: int) -> dict[str, float]:
    # richer areas own more cars
    base = np.array([0.25, 0.40, 0.25, 0.10])
    shift = np.array([-0.05, -0.04, 0.04, 0.05]) * income_rank
    probs = np.clip(base + shift, 0.02, None)
    probs = probs / probs.sum()
    return {lab: round(float(p), 4) for lab, p in zip(("0", "1", "2", "3+"), _fix_sum(probs))}


def _fix_sum(probs: np.ndarray) -> np.ndarray:
    probs = np.round(probs, 4)
    probs[-1] = round(1.0 - probs[:-1].sum(), 4)
    return probs


def _age_dist(weights) -> dict[str, float]:
    probs = _fix_sum(np.asarray(weights, dtype=float) / np.sum(weights))
    return {b: float(p) for b, p in zip(DEFAULT_AGE_BRACKETS, probs)}


def fixture_profiles() -> list[BlockGroupProfile]:
    specs = [
        # geoid, employment rate, income index, intersections, hh size, pop density, mix, emp density, transit
        ("090010101001", 0.68, 4, 180.0, 2.47, 8200.0, 0.62, 5400.0, 0.2),
        ("090010102002", 0.55, 1, 95.0, 2.10, 4100.0, 0.48, 1900.0, 0.6),
        ("090030201001", 0.72, 3, 40.0, 2.85, 1200.0, 0.21, 300.0, 3.5),
        ("090090301003", 0.48, 0, 210.0, 1.70, 11500.0, 0.71, 7800.0, 0.1),
        ("091100401002", 0.63, 2, 120.0, 2.50, 3500.0, 0.39, 1500.0, 1.2),
    ]
    out = []
    for geoid, rate, inc, inter, hh, pop, mix, emp, transit in specs:
        income = DEFAULT_INCOME_LEVELS[inc]
        vehicles = {}
        for tier in DENSITY_TIERS:
            d = _vehicle_dist(inc + {"low": 1, "medium": 0, "high": -1}[tier])
            vehicles[(income, tier)] = Distribution.from_mapping(d)
        out.append(BlockGroupProfile(
            geoid=geoid,
            employment_rate=rate,
            age_distribution_by_employment={
                "employed": Distribution.from_mapping(_age_dist([10, 25, 40, 20, 5])),
                "unemployed": Distribution.from_mapping(_age_dist([20, 10, 15, 15, 40])),
            },
            income_level=income,
            intersection_density=inter,
            vehicle_count_distribution=vehicles,
            mean_household_size=hh,
            population_density=pop,
            employment_mix=mix,
            transit_access=transit,
            employment_density=emp,
        ))
    return out


def _pick(rng, labels, probs):
    probs = np.asarray(probs, dtype=float)
    return labels[int(rng.choice(len(labels), p=probs / probs.sum()))]


def _mode_for(rng, persona: Persona) -> str:
    if persona.household_vehicles == 0:
        return _pick(rng, ["Walk", "Public Transit", "Bicycle", "Ride-hail/Taxi",
                           "Household Vehicle Passenger"], [4, 4, 1, 1, 1])
    return _pick(rng, ["Household Vehicle Driver", "Household Vehicle Passenger", "Walk",
                       "Public Transit", "Bicycle"], [14, 3, 2, 1, 0.5])


def _outing_purpose(rng, employed: bool) -> str:
    labels = ["Shopping", "Errands", "Social/Recreation", "Meal", "Medical", "Other"]
    probs = [4, 3, 3, 2, 0.7, 0.5] if employed else [4, 3, 3, 2, 1.5, 0.5]
    return _pick(rng, labels, probs)


def synthetic_day(rng: np.random.Generator, persona: Persona) -> list[TripRecord]:
    """A plausible home-based weekday for one person."""
    legs: list[tuple[int, str]] = []  # (earliest departure minute, destination purpose)
    if persona.employed:
        if rng.random() < 0.06:
            return []
        leave = int(rng.normal(7.8 * 60, 40))
        back = int(rng.normal(17.1 * 60, 50))
        legs.append((leave, "Work"))
        if rng.random() < 0.3:
            lunch = int(rng.normal(12.1 * 60, 20))
            legs += [(lunch, "Meal"), (lunch + int(rng.integers(25, 55)), "Work")]
        legs.append((back, "Home"))
        if rng.random() < 0.35:
            out = back + int(rng.integers(45, 150))
            legs += [(out, _outing_purpose(rng, True)), (out + int(rng.integers(20, 120)), "Home")]
    else:
        outings = int(rng.choice([0, 1, 2, 3], p=[0.2, 0.45, 0.25, 0.1]))
        t = int(rng.normal(9.8 * 60, 60))
        for _ in range(outings):
            legs.append((t, _outing_purpose(rng, False)))
            if rng.random() < 0.3:
                t += int(rng.integers(20, 90))
                legs.append((t, _outing_purpose(rng, False)))
            t += int(rng.integers(30, 180))
            legs.append((t, "Home"))
            t += int(rng.integers(60, 240))

    trips: list[TripRecord] = []
    prev_end = 0
    for depart, purpose in legs:
        mode = _mode_for(rng, persona)
        duration = int(np.clip(rng.gamma(3.0, 5.5), 4, 70))
        start = max(depart, prev_end + 5, 0)
        end = start + duration
        if end > 1430:
            break
        miles = round(_SPEED_MPH.get(mode, 15.0) * duration / 60.0 * float(rng.uniform(0.6, 1.1)), 2)
        trips.append(TripRecord(start, end, purpose, mode, miles))
        prev_end = end
    return trips


def _travelers(rng, mode: str) -> int:
    if mode == "Household Vehicle Passenger":
        return int(rng.integers(2, 4))
    if mode == "Household Vehicle Driver":
        return 1 if rng.random() < 0.6 else 2
    return 1


def _events(rng, trips: list[TripRecord]) -> list[Event]:
    events = []
    cursor, place = 0, "Home"
    for trip in trips:
        events.append(Event("Activity", cursor, trip.start_time, purpose=place))
        travelers = _travelers(rng, trip.mode)
        events.append(Event("Trip", trip.start_time, trip.end_time, purpose=trip.purpose,
                            mode=trip.mode, distance_miles=trip.distance_miles, travelers=travelers))
        cursor, place = trip.end_time, trip.purpose
    events.append(Event("Activity", cursor, 1439, purpose=place))
    return events


def fixture_hts(profiles, n_persons: int = 600, seed: int = 20170101) -> list[PersonRecord]:
    rng = np.random.default_rng(seed)
    ordered = sorted(profiles, key=lambda p: p.geoid)
    records = []
    for i in range(n_persons):
        profile = ordered[i % len(ordered)]
        base = synthesize_persona(profile, f"H{i:05d}", SeededSampler(seed, i, tag=9))
        hh = max(1, base.household_size + int(rng.choice([-1, 0, 0, 1])))
        persona = Persona(base.persona_id, base.geoid, base.employment_status, base.age_bracket,
                          base.household_vehicles, base.income_level, hh)
        trips = synthetic_day(rng, persona)
        weight = round(float(rng.uniform(0.4, 3.0)), 3)
        records.append(PersonRecord(persona.persona_id, weight, persona, tuple(_events(rng, trips))))
    return records


def _mock_text(trips: list[TripRecord], style: int) -> str:
    csv_text = diary_to_csv(Diary("x", tuple(trips), "llm"))
    if style == 0:
        return csv_text
    if style == 1:
        return "Here is my travel diary for a typical weekday:\n\n```csv\n" + csv_text + "```\n"
    if style == 2:
        lines = csv_text.splitlines()
        return "\n".join([lines[0]] + [ln.lower() for ln in lines[1:]]) + "\n"
    return "Sure! As this person, my day looks like this.\n" + csv_text + "\nLet me know if you need changes."


def fixture_mock_responses(n_scripts: int = 40, seed: int = 31) -> dict:
    """Scripts of attempt texts; a few begin with unusable output to exercise retries."""
    rng = np.random.default_rng(seed)
    template = Persona("m", "0", "employed", "35-54", 1, DEFAULT_INCOME_LEVELS[2], 2)
    scripts = []
    for k in range(n_scripts):
        employed = k % 3 != 2
        persona = Persona("m", "0", "employed" if employed else "unemployed",
                          template.age_bracket, int(rng.integers(0, 3)), template.income_level, 2)
        trips = synthetic_day(rng, persona)
        text = _mock_text(trips, k % 4)
        if k % 10 == 7:
            scripts.append(["I'm sorry, I can't produce a diary right now.", text])
        elif k % 10 == 9:
            scripts.append(["start_time,end_time,purpose,mode,distance_miles\n08:00,08:30,Work,Teleport,3\n", text])
        else:
            scripts.append([text])
    return {"responses": {}, "default": scripts}


def fixture_config() -> dict:
    return {
        "seed": 7,
        "paths": {
            "block_groups": "blockgroups.json",
            "hts": "hts.jsonl",
            "output_dir": "out",
        },
        "persona_count": 200,
        "engine": "both",
        "generation": {
            "model_name": "llama3",
            "endpoint_url": "http://localhost:11434/api/generate",
            "max_retries": 2,
            "request_timeout": 120.0,
            "employed_params": {"temperature": 0.5, "top_p": 0.9},
            "unemployed_params": {"temperature": 0.3, "top_p": 0.8},
            "max_in_flight": 4,
        },
        "backend": {"kind": "mock", "mock_responses": "mock_responses.json"},
        "classical_covariates": [
            "age_bracket", "employed", "household_vehicles", "household_size",
            "population_density", "employment_density", "intersection_density",
        ],
        "min_cohort_size": 10,
        "score_variant": "divergence",
        "workers": 1,
    }


def write_fixture(out_dir=DATA_DIR) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = fixture_profiles()
    save_block_groups(profiles, out_dir / "blockgroups.json")
    save_hts(fixture_hts(profiles), out_dir / "hts.jsonl")
    (out_dir / "mock_responses.json").write_text(
        json.dumps(fixture_mock_responses(), indent=1) + "\n", encoding="utf-8")
    (out_dir / "config.json").write_text(json.dumps(fixture_config(), indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    write_fixture()
