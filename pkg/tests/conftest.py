from __future__ import annotations

import sys
from pathlib import Path

import pytest

from diarysim.core import Diary, Persona, TripRecord
from diarysim.fixtures import DATA_DIR
from diarysim.ingestion import Event, PersonRecord, load_block_groups, load_hts

INCOME = "$50k-$74,999"


def persona(pid="x", geoid="G1", employment="employed", age="35-54", vehicles=1,
            income=INCOME, hh=2) -> Persona:
    return Persona(pid, geoid, employment, age, vehicles, income, hh)


def trip(start, end, purpose="Work", mode="Walk", miles=1.0) -> TripRecord:
    return TripRecord(start, end, purpose, mode, miles)


def diary(*trips, pid="x", source="llm") -> Diary:
    return Diary(pid, tuple(trips), source)


def record(pid, demo: Persona | None = None, trips=(), weight=1.0, **attrs) -> PersonRecord:
    """Survey person whose events are the given trips separated by activities."""
    demo = demo or persona(pid, **attrs)
    demo = Persona(pid, demo.geoid, demo.employment_status, demo.age_bracket,
                   demo.household_vehicles, demo.income_level, demo.household_size)
    events = []
    cursor = 0
    for t in trips:
        if t.start_time > cursor:
            events.append(Event("Activity", cursor, t.start_time, purpose="Home"))
        events.append(Event("Trip", t.start_time, t.end_time, t.purpose, t.mode, t.distance_miles, 1))
        cursor = t.end_time
    return PersonRecord(pid, weight, demo, tuple(events))


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def profiles(data_dir):
    return load_block_groups(data_dir / "blockgroups.json")


@pytest.fixture(scope="session")
def hts(data_dir):
    return load_hts(data_dir / "hts.jsonl")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
