import numpy as np
import pytest
from scipy import integrate, optimize, stats

from diarysim.classical import (
    CONVERGED,
    DEGENERATE,
    ClassicalModels,
    EmpiricalTable,
    FeatureBuilder,
    MNLModel,
    NBModel,
    TimeTables,
    calibrate,
    fit_mnl,
    fit_negative_binomial,
    generate_classical_diary,
    mnl_loglik,
    mnl_probabilities,
    nb_loglik,
    nb_sample_count,
    nb_trip_count_distribution,
)
from diarysim.core import CategorySchema, validate_diary
from diarysim.personas import STREAM_CLASSICAL, SeededSampler

from .conftest import persona


def _fd_gradient(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h * max(1.0, abs(theta[i]))
        g[i] = (f(theta + e) - f(theta - e)) / (2 * e[i])
    return g


def _close(a, b, rel=1e-5):
    # relative agreement, guarded for near-zero components
    scale = max(np.max(np.abs(b)), 1.0)
    return np.max(np.abs(a - b)) <= rel * scale


@pytest.fixture(scope="module")
def nb_data():
    rng = np.random.default_rng(0)
    n = 400
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, n)])
    mu = np.exp(X @ [0.6, 0.3, -0.4])
    y = rng.negative_binomial(1 / 0.7, (1 / 0.7) / (1 / 0.7 + mu))
    w = rng.uniform(0.5, 2.0, n)
    return X, y.astype(float), w / w.mean()


def test_nb_gradient_matches_finite_differences(nb_data):
    X, y, w = nb_data
    rng = np.random.default_rng(1)
    for _ in range(20):
        theta = np.append(rng.normal(0, 0.5, 3), rng.uniform(-3, 1.5))
        _, grad, _ = nb_loglik(theta, X, y, w)
        fd = _fd_gradient(lambda t: nb_loglik(t, X, y, w, False), theta)
        assert _close(grad, fd)


def test_nb_hessian_matches_finite_differences(nb_data):
    X, y, w = nb_data
    theta = np.array([0.4, 0.2, -0.1, -0.5])
    _, _, hess = nb_loglik(theta, X, y, w)
    cols = [_fd_gradient(lambda t, i=i: nb_loglik(t, X, y, w)[1][i], theta) for i in range(4)]
    assert _close(hess, np.array(cols), rel=1e-4)


def test_nb_loglik_matches_scipy(nb_data):
    X, y, w = nb_data
    theta = np.array([0.5, 0.2, -0.3, np.log(0.8)])
    mu = np.exp(X @ theta[:3])
    r = 1 / 0.8
    want = np.dot(w, stats.nbinom.logpmf(y, r, r / (r + mu)))
    assert nb_loglik(theta, X, y, w, False) == pytest.approx(want, rel=1e-10)


def test_nb_intercept_only_oracle():
    rng = np.random.default_rng(2)
    y = rng.negative_binomial(2, 0.4, 3000).astype(float)
    w = rng.uniform(0.2, 3.0, y.size)
    model = fit_negative_binomial(np.ones((y.size, 1)), y, w)
    assert model.status == CONVERGED
    m = np.dot(w, y) / w.sum()
    assert model.mean([1.0]) == pytest.approx(m, abs=1e-6)

    def neg_ll(log_alpha):
        r = np.exp(-log_alpha)
        return -np.dot(w, stats.nbinom.logpmf(y, r, r / (r + m)))

    best = optimize.minimize_scalar(neg_ll, bounds=(-6, 3), method="bounded",
                                    options={"xatol": 1e-10})
    assert np.log(model.alpha) == pytest.approx(best.x, abs=1e-4)


@pytest.mark.slow
def test_nb_recovers_simulated_parameters():
    rng = np.random.default_rng(3)
    n = 20_000
    x = rng.normal(size=n)
    X = np.column_stack([np.ones(n), x])
    mu = np.exp(0.5 + 0.3 * x)
    r = 1 / 1.2
    y = rng.negative_binomial(r, r / (r + mu)).astype(float)
    model = fit_negative_binomial(X, y, np.ones(n))
    assert model.status == CONVERGED
    assert np.all(np.abs(model.beta - [0.5, 0.3]) <= 0.05)
    assert abs(model.alpha - 1.2) <= 0.15


def test_nb_weight_scale_invariance(nb_data):
    X, y, w = nb_data
    a = fit_negative_binomial(X, y, w)
    b = fit_negative_binomial(X, y, w * 37.5)
    assert np.allclose(a.beta, b.beta, atol=1e-8) and a.alpha == pytest.approx(b.alpha, rel=1e-8)


def test_nb_trace_is_monotone(nb_data):
    X, y, w = nb_data
    _, trace = fit_negative_binomial(X, y, w, return_trace=True)
    assert all(b >= a for a, b in zip(trace, trace[1:]))


def test_nb_all_zero_counts_is_degenerate():
    model = fit_negative_binomial(np.ones((50, 1)), np.zeros(50), np.ones(50))
    assert model.status == DEGENERATE
    assert model.mean([1.0]) < 1e-12
    dist = nb_trip_count_distribution(model, [1.0])
    assert dist.prob("0") == pytest.approx(1.0)


def test_nb_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_negative_binomial(np.ones((3, 1)), [1, 2, -1], [1, 1, 1])
    with pytest.raises(ValueError):
        fit_negative_binomial(np.ones((3, 1)), [1, 2, 1.5], [1, 1, 1])
    with pytest.raises(ValueError):
        fit_negative_binomial(np.ones((3, 1)), [1, 2, 1], [1, 0, 1])


def _nb_model(mu, alpha):
    return NBModel(("intercept",), np.array([np.log(mu)]), alpha)


def test_trip_count_distribution_oracle():
    dist = nb_trip_count_distribution(_nb_model(2.0, 1.0), [1.0])
    assert abs(sum(dist.mass) - 1) <= 1e-12
    assert dist.categories[-1] == "10+"
    # NB as a gamma mixture of Poissons, integrated numerically
    for k in (0, 1, 4):
        want, _ = integrate.quad(lambda lam: stats.poisson.pmf(k, lam) * stats.gamma.pdf(lam, 1.0, scale=2.0),
                                 0, np.inf)
        assert dist.prob(str(k)) == pytest.approx(want, abs=1e-9)
    tiny = nb_trip_count_distribution(_nb_model(1e-9, 1.0), [1.0])
    assert tiny.prob("0") == pytest.approx(1.0, abs=1e-8)


def test_nb_sample_moments():
    model = _nb_model(3.0, 0.8)
    s = SeededSampler(9, 0, STREAM_CLASSICAL)
    draws = np.array([nb_sample_count(model, [1.0], s) for _ in range(50_000)])
    assert abs(draws.mean() - 3.0) <= 0.06
    assert draws.var() == pytest.approx(3.0 + 0.8 * 9.0, rel=0.05)


@pytest.fixture(scope="module")
def mnl_data():
    rng = np.random.default_rng(4)
    n = 600
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    B = np.array([[0, 0], [0.5, 1.0], [-0.3, -0.8]])
    U = X @ B.T + rng.gumbel(size=(n, 3))
    choice = U.argmax(axis=1)
    return X, choice, rng.uniform(0.5, 1.5, n)


def test_mnl_gradient_matches_finite_differences(mnl_data):
    X, choice, w = mnl_data
    rng = np.random.default_rng(5)
    for _ in range(20):
        flat = rng.normal(0, 1, 4)
        _, grad, hess = mnl_loglik(flat, X, choice, w, 3)
        fd = _fd_gradient(lambda t: mnl_loglik(t, X, choice, w, 3, False), flat)
        assert _close(grad, fd)
    cols = [_fd_gradient(lambda t, i=i: mnl_loglik(t, X, choice, w, 3)[1][i], flat) for i in range(4)]
    assert _close(hess, np.array(cols), rel=1e-4)


def test_mnl_intercept_only_shares():
    labels = ["a", "b", "c", "d"]
    choices = ["a"] * 5 + ["b"] * 3 + ["c"] * 7 + ["d"]
    w = np.linspace(0.5, 2.0, len(choices))
    model = fit_mnl(np.ones((len(choices), 1)), choices, w, labels)
    assert model.status == CONVERGED
    probs = mnl_probabilities(model, [1.0])
    for label in labels:
        share = sum(wi for wi, c in zip(w, choices) if c == label) / w.sum()
        assert probs.prob(label) == pytest.approx(share, abs=1e-6)


@pytest.mark.slow
def test_mnl_recovers_simulated_coefficients():
    rng = np.random.default_rng(6)
    n = 20_000
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    B = np.array([[0, 0], [0.5, 1.0], [-0.3, -0.8]])
    choice = (X @ B.T + rng.gumbel(size=(n, 3))).argmax(axis=1)
    model = fit_mnl(X, [str(c) for c in choice], np.ones(n), ["0", "1", "2"])
    assert np.max(np.abs(model.coefficients - B)) <= 0.07


def test_mnl_softmax_properties():
    zero = MNLModel(("a", "b", "c"), ("i", "x"), np.zeros((3, 2)))
    assert np.allclose(mnl_probabilities(zero, [1.0, 2.0]).mass, 1 / 3, atol=1e-12)
    coef = np.array([[0.0, 0.0], [1.2, -0.4], [-2.0, 3.0]])
    base = mnl_probabilities(MNLModel(("a", "b", "c"), ("i", "x"), coef), [1.0, 0.7])
    shifted = mnl_probabilities(MNLModel(("a", "b", "c"), ("i", "x"), coef + [5.0, -2.0]), [1.0, 0.7])
    assert np.allclose(base.mass, shifted.mass, atol=1e-9)
    assert abs(sum(base.mass) - 1) <= 1e-9
    huge = mnl_probabilities(MNLModel(("a", "b"), ("i",), np.array([[0.0], [800.0]])), [1.0])
    assert huge.prob("b") == pytest.approx(1.0)


def test_mnl_unobserved_and_degenerate():
    X = np.column_stack([np.ones(8), np.arange(8.0)])
    model = fit_mnl(X, ["a", "b"] * 4, np.ones(8), ["a", "b", "c"])
    assert model.unobserved == ("c",)
    assert mnl_probabilities(model, X[0]).prob("c") < 1e-12
    single = fit_mnl(X, ["b"] * 8, np.ones(8), ["a", "b", "c"])
    assert single.status == DEGENERATE
    assert mnl_probabilities(single, X[3]).prob("b") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fit_mnl(X, ["z"] * 8, np.ones(8), ["a", "b"])


def test_mnl_separation_stays_finite():
    x = np.arange(-5.0, 5.0)
    X = np.column_stack([np.ones(10), x])
    choices = ["a" if v < 0 else "b" for v in x]
    model = fit_mnl(X, choices, np.ones(10), ["a", "b"])
    assert model.status != CONVERGED or np.all(np.isfinite(model.coefficients))
    assert np.all(np.isfinite(mnl_probabilities(model, X[0]).mass))


def test_mnl_weight_scale_invariance(mnl_data):
    X, choice, w = mnl_data
    labels = [str(c) for c in choice]
    a = fit_mnl(X, labels, w, ["0", "1", "2"])
    b = fit_mnl(X, labels, w * 1000, ["0", "1", "2"])
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-8)


def _point_models(schema, n_mean=3.0, purpose="Shopping", mode="Walk"):
    features = FeatureBuilder(covariates=())
    def one_hot(cats, hit):
        coef = np.full((len(cats), 1), -40.0)
        coef[cats.index(hit)] = 0.0
        return MNLModel(tuple(cats), ("intercept",), coef - coef[0])
    tables = TimeTables(EmpiricalTable.point(540), EmpiricalTable.point(20), EmpiricalTable.point(1.5))
    return features, ClassicalModels(features, _nb_model(n_mean, 1e-6),
                                     one_hot(list(schema.purposes), purpose),
                                     one_hot(list(schema.modes), mode), tables)


def test_classical_diary_zero_trips():
    schema = CategorySchema()
    features, models = _point_models(schema, n_mean=1e-12)
    d = generate_classical_diary(persona(), [1.0], models, SeededSampler(0, 0, STREAM_CLASSICAL))
    assert d.trips == () and d.source == "classical"


def test_classical_diary_point_mass_and_overlap_resolution():
    schema = CategorySchema()
    features, models = _point_models(schema)
    a = generate_classical_diary(persona(), [1.0], models, SeededSampler(1, 0, STREAM_CLASSICAL))
    b = generate_classical_diary(persona(), [1.0], models, SeededSampler(1, 0, STREAM_CLASSICAL))
    assert a == b
    assert {t.purpose for t in a.trips} == {"Shopping"} and {t.mode for t in a.trips} == {"Walk"}
    # identical departures force the clamp path; the result is still a valid day
    assert validate_diary(a, schema) == []
    assert a.trips[0].start_time == 540


def test_classical_purpose_frequencies_track_model(hts, profiles):
    models = calibrate(hts, profiles)
    p = hts[0].demographics
    x = models.features.vector(p, profiles[p.geoid])
    want = mnl_probabilities(models.purpose, x)
    counts = {}
    total = 0
    for i in range(10_000):
        d = generate_classical_diary(p, x, models, SeededSampler(11, i, STREAM_CLASSICAL))
        for t in d.trips:
            counts[t.purpose] = counts.get(t.purpose, 0) + 1
            total += 1
    tv = 0.5 * sum(abs(counts.get(c, 0) / total - want.prob(c)) for c in want.categories)
    assert tv <= 0.03


def test_calibration_and_round_trip(hts, profiles, tmp_path):
    schema = CategorySchema()
    models = calibrate(hts, profiles)
    assert models.trip_count.status == CONVERGED
    assert models.purpose.status == CONVERGED and models.mode.status == CONVERGED
    path = tmp_path / "models.json"
    models.save(path)
    loaded = ClassicalModels.load(path)
    assert loaded.to_dict() == models.to_dict()
    for i, rec in enumerate(hts[:50]):
        x = models.features.vector(rec.demographics, profiles[rec.demographics.geoid])
        d = generate_classical_diary(rec.demographics, x, loaded, SeededSampler(3, i, STREAM_CLASSICAL))
        assert validate_diary(d, schema) == []


def test_feature_builder_layout(profiles):
    fb = FeatureBuilder()
    assert fb.names[:5] == ("intercept", "age[25-34]", "age[35-54]", "age[55-64]", "age[65+]")
    prof = next(iter(profiles.values()))
    x = fb.vector(persona(geoid=prof.geoid, age="18-24"), prof)
    assert list(x[:5]) == [1, 0, 0, 0, 0]
    assert len(x) == len(fb.names)
    with pytest.raises(ValueError):
        FeatureBuilder(covariates=("shoe_size",))
