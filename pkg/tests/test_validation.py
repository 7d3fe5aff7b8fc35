import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from diarysim.core import CategorySchema, Distribution
from diarysim.validation import (
    DISTANCE,
    CohortIndex,
    CohortLevel,
    RealismScore,
    aggregate_scores,
    interval_score,
    jsd,
    kl_divergence,
    match_cohort,
    mode_score,
    overall_realism,
    purpose_score,
    trip_count_score,
    welch_t_test,
)

from .conftest import diary, persona, record, trip

# frozen with 50-digit arbitrary precision arithmetic
KL_HALF_VS_THREEQUARTER = 0.2075187496394219
JSD_POINT_VS_UNIFORM = 0.3112781244591329


def dist(*mass, labels="abcdefghijklmnop"):
    return Distribution(tuple(labels[: len(mass)]), tuple(mass))


def test_kl_reference_value():
    assert kl_divergence(dist(0.5, 0.5), dist(0.75, 0.25)) == pytest.approx(KL_HALF_VS_THREEQUARTER, abs=1e-12)
    with pytest.raises(ValueError):
        kl_divergence(dist(0.5, 0.5), Distribution(("a", "z"), (0.5, 0.5)))


def test_jsd_reference_values():
    assert jsd(dist(1.0, 0.0), dist(0.5, 0.5)) == pytest.approx(JSD_POINT_VS_UNIFORM, abs=1e-12)
    assert jsd(Distribution(("a",), (1.0,)), Distribution(("b",), (1.0,))) == pytest.approx(1.0, abs=1e-12)
    assert jsd(dist(0.2, 0.8), dist(0.2, 0.8)) == 0.0
    assert jsd(dist(1.0, 0.0), dist(0.5, 0.5), DISTANCE) == pytest.approx(math.sqrt(JSD_POINT_VS_UNIFORM))
    with pytest.raises(ValueError):
        jsd(Distribution.empty(("a",)), dist(1.0))


def test_jsd_aligns_mismatched_category_lists():
    p = Distribution(("Walk", "Bicycle"), (0.5, 0.5))
    q = Distribution(("Bicycle", "Walk", "Other"), (0.5, 0.5, 0.0))
    assert jsd(p, q) == pytest.approx(0.0, abs=1e-15)


masses = st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=8).filter(lambda m: sum(m) > 1e-6)


def _normalize(m):
    s = math.fsum(m)
    return tuple(x / s for x in m)


@settings(max_examples=300)
@given(masses, masses, st.randoms(use_true_random=False))
def test_jsd_properties(a, b, rnd):
    n = max(len(a), len(b))
    a = _normalize(a + [0.0] * (n - len(a)))
    b = _normalize(b + [0.0] * (n - len(b)))
    p, q = dist(*a), dist(*b)
    value = jsd(p, q)
    assert 0.0 <= value <= 1.0
    assert value == pytest.approx(jsd(q, p), abs=1e-12)
    order = list(range(n))
    rnd.shuffle(order)
    labels = "abcdefghijklmnop"
    pp = Distribution(tuple(labels[i] for i in order), tuple(a[i] for i in order))
    qq = Distribution(tuple(labels[i] for i in order), tuple(b[i] for i in order))
    assert jsd(pp, qq) == pytest.approx(value, abs=1e-12)
    if value < 1e-15:
        assert np.allclose(a, b, atol=1e-6)


@pytest.mark.parametrize("n, mu, want", [(4, 4, 1.0), (0, 4, 0.0), (6, 4, 0.5), (2, 4, 0.5),
                                         (12, 4, 0.0), (0, 0, 1.0), (3, 0, 0.0), (3, 2.5, 0.8)])
def test_trip_count_score(n, mu, want):
    assert trip_count_score(n, mu) == pytest.approx(want, abs=1e-15)


def _cohort_of(*trips_per_person, level_persona=None):
    hts = [record(f"h{i}", trips=t) for i, t in enumerate(trips_per_person)]
    return match_cohort(level_persona or persona(), hts, min_size=1)


def test_component_scores_identity_and_disjoint():
    trips = (trip(480, 500, "Work", "Walk"), trip(700, 720, "Meal", "Bicycle"), trip(1000, 1030, "Home", "Walk"))
    cohort = _cohort_of(trips)
    same = diary(*trips)
    assert purpose_score(same, cohort) == 1.0
    assert mode_score(same, cohort) == 1.0
    assert interval_score(same, cohort) == 1.0
    assert overall_realism(same, cohort).overall == 1.0

    other = diary(trip(480, 500, "Errands", "Ride-hail/Taxi"), trip(510, 530, "Medical", "Ride-hail/Taxi"),
                  trip(540, 560, "Other", "Other"))
    assert purpose_score(other, cohort) == 0.0
    assert mode_score(other, cohort) == 0.0
    assert interval_score(other, cohort) == 0.0  # <15 min vs 2-4 hrs/4 hrs+


def test_empty_distribution_rules():
    cohort = _cohort_of((trip(480, 500),))  # one trip: no intervals anywhere
    assert interval_score(diary(trip(600, 620)), cohort) == 1.0
    assert interval_score(diary(trip(600, 620), trip(700, 720)), cohort) == 0.0
    empty_diary = diary()
    score = overall_realism(empty_diary, cohort)
    assert (score.purpose_score, score.mode_score, score.interval_score) == (0.0, 0.0, 1.0)
    assert score.trip_count_score == 0.0


def test_overall_is_component_mean():
    rng = np.random.default_rng(0)
    for _ in range(200):
        parts = rng.uniform(0, 1, 4)
        s = RealismScore.from_components(*parts, CohortLevel.BROAD_2, 10)
        assert abs(s.overall - parts.mean()) <= 1e-12


def _ladder_hts(exact=10, no_geoid=0, no_hh=0, no_income=0, other_age=0):
    recs = []

    def add(n, **attrs):
        for _ in range(n):
            recs.append(record(f"r{len(recs)}", trips=(trip(480, 500),), **attrs))

    add(exact)
    add(no_geoid, geoid="G2")
    add(no_hh, geoid="G2", hh=4)
    add(no_income, income="$100k or more")
    add(other_age, age="65+", employment="unemployed")
    add(10, age="18-24", employment="unemployed")  # unrelated filler
    return recs


@pytest.mark.parametrize("counts, level, size", [
    (dict(exact=10), CohortLevel.HYPER_STRICT_6, 10),
    (dict(exact=9, no_geoid=1), CohortLevel.ULTRA_STRICT_5, 10),
    (dict(exact=3, no_geoid=3, no_hh=4), CohortLevel.STRICT_4, 10),
    (dict(exact=2, no_hh=2, no_income=7), CohortLevel.BROAD_2, 11),
    (dict(exact=1, no_income=3, other_age=30), CohortLevel.FULL_DATASET, 44),
])
def test_ladder_levels(counts, level, size):
    stats_ = match_cohort(persona(geoid="G1"), _ladder_hts(**counts), min_size=10)
    assert stats_.level is level
    assert stats_.size == size


def test_min_size_boundary():
    at = match_cohort(persona(), _ladder_hts(exact=10), min_size=10)
    below = match_cohort(persona(), _ladder_hts(exact=9), min_size=10)
    assert at.level is CohortLevel.HYPER_STRICT_6
    assert below.level is CohortLevel.FULL_DATASET


def test_cohort_size_counts_unique_people():
    recs = _ladder_hts(exact=5)
    # same person twice (e.g. duplicated diary days) counts once
    recs += [record("r0", trips=(trip(480, 500),)) for _ in range(5)]
    assert match_cohort(persona(), recs, min_size=10).level is CohortLevel.FULL_DATASET


def test_vehicle_counts_capped_at_three():
    recs = [record(f"r{i}", vehicles=3) for i in range(10)]
    assert match_cohort(persona(vehicles=5), recs).level is CohortLevel.HYPER_STRICT_6


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_ladder_monotone_in_min_size(m1, m2):
    lo, hi = sorted((m1, m2))
    recs = _ladder_hts(exact=3, no_geoid=4, no_hh=5, no_income=6, other_age=7)
    a = CohortIndex(recs, min_size=lo).match(persona())
    b = CohortIndex(recs, min_size=hi).match(persona())
    order = list(CohortLevel)
    assert order.index(a.level) <= order.index(b.level)


def test_cohort_statistics_are_weighted():
    recs = [record("a", trips=(trip(480, 500, "Work"),), weight=3.0),
            record("b", trips=(trip(480, 500, "Home"), trip(600, 620, "Home"), trip(700, 720, "Home")), weight=1.0)]
    c = match_cohort(persona(), recs, min_size=1)
    assert c.mean_trip_count == pytest.approx((3 * 1 + 1 * 3) / 4)
    assert c.purpose_dist.prob("Work") == pytest.approx(0.5)


# Independent scoring oracle: dictionaries and math.log2 only.
def _oracle_jsd(p, q):
    keys = set(p) | set(q)
    sp, sq = sum(p.values()), sum(q.values())
    p = {k: p.get(k, 0) / sp for k in keys}
    q = {k: q.get(k, 0) / sq for k in keys}
    m = {k: (p[k] + q[k]) / 2 for k in keys}
    kl = lambda a: sum(a[k] * math.log2(a[k] / m[k]) for k in keys if a[k] > 0)  # noqa: E731
    return 0.5 * kl(p) + 0.5 * kl(q)


def test_end_to_end_against_oracle():
    survey = [
        record("s1", trips=(trip(420, 450, "Work", "Household Vehicle Driver"),
                            trip(1020, 1050, "Home", "Household Vehicle Driver")), weight=2.0),
        record("s2", trips=(trip(600, 610, "Shopping", "Walk"), trip(640, 650, "Home", "Walk"),
                            trip(900, 960, "Social/Recreation", "Bicycle")), weight=1.0),
        record("s3", trips=(), weight=0.5),
    ]
    d = diary(trip(480, 500, "Work", "Walk"), trip(510, 520, "Meal", "Walk"),
              trip(1000, 1030, "Home", "Household Vehicle Driver"))
    score = overall_realism(d, match_cohort(persona(), survey, min_size=1))

    mu = (2 * 2 + 1 * 3 + 0.5 * 0) / 3.5
    want_trip = 1 - min(1, abs(3 - mu) / mu)
    want_purpose = 1 - _oracle_jsd({"Work": 1, "Meal": 1, "Home": 1},
                                   {"Work": 2, "Home": 3, "Shopping": 1, "Social/Recreation": 1})
    want_mode = 1 - _oracle_jsd({"Walk": 2, "Household Vehicle Driver": 1},
                                {"Household Vehicle Driver": 4, "Walk": 2, "Bicycle": 1})
    # survey gaps: s1 570 min, s2 30 and 250 min; diary gaps 10 and 480 min
    want_interval = 1 - _oracle_jsd({"<15 min": 1, ">4 hrs": 1}, {">4 hrs": 2 + 1, "30-60 min": 1})
    assert score.trip_count_score == pytest.approx(want_trip, abs=1e-9)
    assert score.purpose_score == pytest.approx(want_purpose, abs=1e-9)
    assert score.mode_score == pytest.approx(want_mode, abs=1e-9)
    assert score.interval_score == pytest.approx(want_interval, abs=1e-9)
    assert score.overall == pytest.approx((want_trip + want_purpose + want_mode + want_interval) / 4, abs=1e-9)


def test_aggregate_identity_and_disjoint():
    survey = [record(f"s{i}", trips=(trip(480, 500, "Work", "Walk"), trip(800, 820, "Home", "Walk")))
              for i in range(5)]
    same = [r.diary() for r in survey]
    agg = aggregate_scores(same, survey)
    assert agg.overall_agg == pytest.approx(1.0)

    other = [diary(*(trip(60 * k, 60 * k + 5, "Medical", "Other") for k in range(1, 13)), pid=f"g{i}")
             for i in range(5)]
    agg = aggregate_scores(other, survey)
    assert (agg.trip_count_score_agg, agg.purpose_score_agg, agg.mode_score_agg, agg.interval_score_agg) \
        == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        aggregate_scores([], survey)


def test_aggregate_survey_side_is_weighted():
    survey = [record("a", trips=(trip(480, 500),), weight=1.0),
              record("b", trips=(trip(480, 500), trip(600, 620)), weight=3.0)]
    gen = [diary(trip(480, 500), trip(600, 620), pid="g1")]
    agg = aggregate_scores(gen, survey)
    assert agg.trip_count_score_agg == pytest.approx(1 - _oracle_jsd({"2": 1}, {"1": 1, "2": 3}), abs=1e-12)


def test_welch_reference_values():
    t, df, p = welch_t_test([1, 2, 3], [4, 5, 6])
    assert t == pytest.approx(-3.674234614174767, abs=1e-12)
    assert df == pytest.approx(4.0, abs=1e-12)
    ref = stats.ttest_ind([1, 2, 3], [4, 5, 6], equal_var=False)
    assert p == pytest.approx(ref.pvalue, rel=1e-12)


def test_welch_identical_samples():
    t, _, p = welch_t_test([0.4, 0.5, 0.7], [0.4, 0.5, 0.7])
    assert (t, p) == (0.0, 1.0)


def test_welch_degenerate_inputs():
    with pytest.raises(ValueError):
        welch_t_test([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        welch_t_test([1.0, 1.0], [1.0, 2.0])


def test_jsd_runtime_budget():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for _ in range(1000):
        a, b = rng.dirichlet(np.ones(9)), rng.dirichlet(np.ones(9))
        jsd(dist(*a), dist(*b))
    assert time.perf_counter() - start < 1.0


def test_schema_labels_flow_through_scoring():
    schema = CategorySchema(purposes=("Home", "Work"), modes=("Foot", "Car"))
    survey = [record("s", trips=(trip(480, 500, "Work", "Foot"),))]
    d = diary(trip(480, 500, "Work", "Foot"))
    assert overall_realism(d, match_cohort(persona(), survey, 1, schema), schema).overall == 1.0


def test_ladder_reference_fixtures():
    twelve = match_cohort(persona(geoid="G1"), _ladder_hts(exact=12), min_size=10)
    assert (twelve.level, twelve.size) == (CohortLevel.HYPER_STRICT_6, 12)
    # 3 six-variable matches plus 12 that differ only in GEOID: 15 five-variable matches
    mixed = match_cohort(persona(geoid="G1"), _ladder_hts(exact=3, no_geoid=12), min_size=10)
    assert (mixed.level, mixed.size) == (CohortLevel.ULTRA_STRICT_5, 15)
    stranger = persona(age="55-64", employment="unemployed", vehicles=0, income="Less than $25k", hh=6, geoid="G9")
    assert match_cohort(stranger, _ladder_hts(exact=12), min_size=10).level is CohortLevel.FULL_DATASET


def test_aggregate_zero_trips_vs_two():
    survey = [record(f"s{i}", trips=(trip(480, 500), trip(900, 920))) for i in range(4)]
    agg = aggregate_scores([diary(pid=f"g{i}") for i in range(4)], survey)
    assert agg.trip_count_score_agg == 0.0
