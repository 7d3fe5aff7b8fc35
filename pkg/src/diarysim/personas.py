"""Stochastic persona synthesis from block-group profiles."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .core import Distribution, Persona
from .ingestion import DEFAULT_DENSITY_THRESHOLDS, BlockGroupProfile, density_tier

# sub-stream tags so persona synthesis and diary generation never share draws
STREAM_PERSONA = 0
STREAM_LLM = 1
STREAM_CLASSICAL = 2


class ConfigurationError(LookupError):
    """A profile lacks the conditional distribution a draw needs."""


class SeededSampler:
    """Independent random stream keyed by (seed, stream_id[, tag]).

    Streams are derived with ``numpy.random.SeedSequence`` spawn keys, so the
    draws for one persona never depend on how many others were generated or
    in which order.
    """

    def __init__(self, seed: int, stream_id: int, tag: int = STREAM_PERSONA):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.tag = int(tag)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, self.tag))
        self.rng = np.random.Generator(np.random.PCG64(seq))

    def random(self) -> float:
        return float(self.rng.random())

    def categorical(self, dist: Distribution) -> str:
        if dist.is_empty:
            raise ConfigurationError("cannot sample from an empty distribution")
        u = self.random()
        cum = 0.0
        last_positive = None
        for label, p in zip(dist.categories, dist.mass):
            if p <= 0:
                continue
            last_positive = label
            cum += p
            if u < cum:
                return label
        return last_positive  # u landed in the rounding slack above the last cumsum

    def gamma(self, shape: float, scale: float) -> float:
        return float(self.rng.gamma(shape, scale))

    def poisson(self, lam: float) -> int:
        return int(self.rng.poisson(lam))

    def integers(self, high: int) -> int:
        return int(self.rng.integers(high))

    def __repr__(self):
        return f"SeededSampler(seed={self.seed}, stream_id={self.stream_id}, tag={self.tag})"


def sample_employment(profile: BlockGroupProfile, sampler: SeededSampler) -> str:
    return "employed" if sampler.random() < profile.employment_rate else "unemployed"


def sample_age_bracket(profile: BlockGroupProfile, employment_status: str, sampler: SeededSampler) -> str:
    try:
        dist = profile.age_distribution_by_employment[employment_status]
    except KeyError:
        raise ConfigurationError(
            f"block group {profile.geoid} has no age distribution for {employment_status!r}"
        ) from None
    return sampler.categorical(dist)


def vehicle_label_to_count(label: str) -> int:
    return 3 if label == "3+" else int(label)


def sample_vehicles(
    profile: BlockGroupProfile,
    sampler: SeededSampler,
    density_thresholds: Sequence[float] = DEFAULT_DENSITY_THRESHOLDS,
) -> int:
    key = (profile.income_level, density_tier(profile.intersection_density, density_thresholds))
    try:
        dist = profile.vehicle_count_distribution[key]
    except KeyError:
        raise ConfigurationError(
            f"block group {profile.geoid} has no vehicle distribution for {key}"
        ) from None
    return vehicle_label_to_count(sampler.categorical(dist))


def derive_household_size(profile: BlockGroupProfile) -> int:
    # round half up
    return max(1, math.floor(profile.mean_household_size + 0.5))


def synthesize_persona(
    profile: BlockGroupProfile,
    persona_id: str,
    sampler: SeededSampler,
    density_thresholds: Sequence[float] = DEFAULT_DENSITY_THRESHOLDS,
) -> Persona:
    employment = sample_employment(profile, sampler)
    age = sample_age_bracket(profile, employment, sampler)
    vehicles = sample_vehicles(profile, sampler, density_thresholds)
    return Persona(
        persona_id=persona_id,
        geoid=profile.geoid,
        employment_status=employment,
        age_bracket=age,
        household_vehicles=vehicles,
        income_level=profile.income_level,
        household_size=derive_household_size(profile),
    )


def persona_id_for(index: int) -> str:
    return f"P{index:06d}"


def synthesize_batch(
    profiles: Mapping[str, BlockGroupProfile],
    count: int,
    seed: int,
    workers: int = 1,
    density_thresholds: Sequence[float] = DEFAULT_DENSITY_THRESHOLDS,
) -> list[Persona]:
    """Persona ``i`` is drawn from the i-th profile in GEOID order, cycling."""
    if count < 1:
        raise ValueError("persona count must be >= 1")
    if not profiles:
        raise ValueError("no block-group profiles to sample from")
    ordered = [profiles[g] for g in sorted(profiles)]

    def one(i: int) -> Persona:
        profile = ordered[i % len(ordered)]
        return synthesize_persona(profile, persona_id_for(i), SeededSampler(seed, i), density_thresholds)

    if workers <= 1:
        return [one(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(count)))


def _fmt(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def land_use_context(profile: BlockGroupProfile) -> str:
    return (
        f"You live in census block group {profile.geoid}. "
        f"Population density: {_fmt(profile.population_density)} people per square mile. "
        f"Employment mix: {_fmt(profile.employment_mix)}. "
        f"Transit accessibility: {_fmt(profile.transit_access)} miles to the nearest transit stop."
    )


def write_personas(personas: Sequence[Persona], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in personas:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False) + "\n")


def read_personas(path) -> list[Persona]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Persona.from_dict(json.loads(line)))
    return out
