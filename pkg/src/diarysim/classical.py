"""Classical benchmark: survey-weighted NB2 trip generation and MNL purpose/mode choice.

Both estimators maximise a weighted log-likelihood with damped Newton steps
and step-halving. Weights are rescaled to mean one before fitting, so the
coefficients do not depend on the overall scale of the survey weights and the
gradient tolerance means the same thing for any survey.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .core import (
    DEFAULT_AGE_BRACKETS,
    MINUTES_PER_DAY,
    CategorySchema,
    Diary,
    Distribution,
    Persona,
    TripRecord,
)
from .ingestion import BlockGroupProfile, PersonRecord
from .personas import SeededSampler

CONVERGED = "converged"
MAX_ITER = "max_iterations"
DEGENERATE = "degenerate"
DIVERGED = "diverged"
STALLED = "stalled"

DEFAULT_COVARIATES = (
    "age_bracket",
    "employed",
    "household_vehicles",
    "household_size",
    "population_density",
    "employment_density",
    "intersection_density",
)

# covariate -> divisor applied before fitting, keeps the Newton system well scaled
_SCALES = {
    "population_density": 1000.0,
    "employment_density": 1000.0,
    "intersection_density": 100.0,
}

_DIVERGENCE_NORM = 100.0
_ABSENT_UTILITY = -30.0
_LOG_ALPHA_BOUNDS = (-12.0, 8.0)


class FeatureBuilder:
    """Fixed, documented ordering of person-level covariates.

    ``age_bracket`` expands to one indicator per bracket after the first;
    land-use covariates come from the person's block group and are scaled
    to thousands (densities) or hundreds (intersections).
    """

    def __init__(self, covariates: Sequence[str] = DEFAULT_COVARIATES,
                 age_brackets: Sequence[str] = DEFAULT_AGE_BRACKETS):
        unknown = set(covariates) - set(DEFAULT_COVARIATES)
        if unknown:
            raise ValueError(f"unknown covariates {sorted(unknown)}")
        self.covariates = tuple(covariates)
        self.age_brackets = tuple(age_brackets)
        names = ["intercept"]
        for cov in self.covariates:
            if cov == "age_bracket":
                names += [f"age[{b}]" for b in self.age_brackets[1:]]
            else:
                names.append(cov)
        self.names = tuple(names)

    def vector(self, persona: Persona, profile: BlockGroupProfile | None) -> np.ndarray:
        x = [1.0]
        for cov in self.covariates:
            if cov == "age_bracket":
                x += [1.0 if persona.age_bracket == b else 0.0 for b in self.age_brackets[1:]]
            elif cov == "employed":
                x.append(1.0 if persona.employed else 0.0)
            elif cov == "household_vehicles":
                x.append(float(persona.household_vehicles))
            elif cov == "household_size":
                x.append(float(persona.household_size))
            else:
                if profile is None:
                    raise ValueError(f"no block-group profile for GEOID {persona.geoid!r}")
                x.append(float(getattr(profile, cov)) / _SCALES[cov])
        return np.array(x)

    def matrix(self, personas: Sequence[Persona],
               profiles: Mapping[str, BlockGroupProfile]) -> np.ndarray:
        return np.vstack([self.vector(p, profiles.get(p.geoid)) for p in personas])

    def to_dict(self) -> dict:
        return {"covariates": list(self.covariates), "age_brackets": list(self.age_brackets)}

    @classmethod
    def from_dict(cls, data: Mapping) -> FeatureBuilder:
        return cls(data["covariates"], data["age_brackets"])


def _normalized(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be a non-empty vector of positive values")
    return w / w.mean()


# --- negative binomial (NB2) --------------------------------------------------------

def _rising_sums(y: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For integer y: sums over j < y of log(r+j), 1/(r+j) and 1/(r+j)^2.

    These equal lgamma(y+r)-lgamma(r), digamma(y+r)-digamma(r) and
    trigamma(r)-trigamma(y+r), without cancellation when r is large.
    """
    lg = np.zeros_like(y, dtype=float)
    dg = np.zeros_like(y, dtype=float)
    tg = np.zeros_like(y, dtype=float)
    for j in range(int(y.max(initial=0))):
        active = y > j
        lg[active] += math.log(r + j)
        dg[active] += 1.0 / (r + j)
        tg[active] += 1.0 / (r + j) ** 2
    return lg, dg, tg


def nb_loglik(theta: np.ndarray, X: np.ndarray, y: np.ndarray, w: np.ndarray,
              derivatives: bool = True):
    """Weighted NB2 log-likelihood in ``theta = (beta, log alpha)``.

    Returns ``ll`` or ``(ll, gradient, hessian)``.
    """
    beta, log_alpha = theta[:-1], theta[-1]
    r = math.exp(-log_alpha)
    eta = X @ beta
    mu = np.exp(eta)
    lg, dg, tg = _rising_sums(y, r)
    with np.errstate(divide="ignore"):
        y_term = np.where(y > 0, y * np.log1p(r / mu), 0.0)
    terms = lg - gammaln(y + 1.0) - r * np.log1p(mu / r) - y_term
    ll = float(np.dot(w, terms))
    if not derivatives:
        return ll
    rm = r + mu
    # d ll_i / d eta_i and d ll_i / d r
    s_eta = r * (y - mu) / rm
    s_r = dg - np.log1p(mu / r) + (mu - y) / rm
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ (w * s_eta)
    grad[-1] = -r * np.dot(w, s_r)

    h_ee = -r * mu * (r + y) / rm ** 2
    h_er = (y - mu) * mu / rm ** 2
    h_rr = -tg + 1.0 / r - 1.0 / rm - (mu - y) / rm ** 2
    p = len(theta)
    hess = np.empty((p, p))
    hess[:-1, :-1] = (X * (w * h_ee)[:, None]).T @ X
    cross = -r * (X.T @ (w * h_er))
    hess[:-1, -1] = cross
    hess[-1, :-1] = cross
    hess[-1, -1] = r * np.dot(w, s_r) + r * r * np.dot(w, h_rr)
    return ll, grad, hess


@dataclass(frozen=True, eq=False)
class NBModel:
    feature_names: tuple[str, ...]
    beta: np.ndarray
    alpha: float
    status: str = CONVERGED
    iterations: int = 0
    loglik: float = float("nan")
    grad_norm: float = float("nan")

    def mean(self, features) -> float:
        return float(np.exp(np.dot(features, self.beta)))

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "beta": [float(b) for b in self.beta],
            "alpha": self.alpha,
            "status": self.status,
            "iterations": self.iterations,
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> NBModel:
        return cls(tuple(data["feature_names"]), np.array(data["beta"], dtype=float),
                   float(data["alpha"]), data["status"], int(data["iterations"]),
                   float(data["loglik"]), float(data["grad_norm"]))


def _newton_ascent(f, theta, tol, max_iter, bounds=None):
    """Damped Newton with step-halving; only objective-non-decreasing steps are taken.

    ``f(theta)`` returns (ll, grad, hess); ``f(theta, False)`` returns ll.
    ``bounds`` maps index -> (lo, hi); a coordinate pinned at a bound with the
    gradient pointing outward is held fixed for that iteration.
    Returns (theta, ll, grad, status, iterations, objective trace).
    """
    n = len(theta)
    free = np.ones(n, dtype=bool)
    bounds = bounds or {}
    ll, grad, hess = f(theta)
    trace = [ll]
    for it in range(1, max_iter + 1):
        # freeze bounded coordinates that sit on a bound and want to leave it
        active = free.copy()
        for i, (lo, hi) in bounds.items():
            if (theta[i] <= lo and grad[i] < 0) or (theta[i] >= hi and grad[i] > 0):
                active[i] = False
        g = grad[active]
        if np.max(np.abs(g), initial=0.0) < tol:
            return theta, ll, grad, CONVERGED, it - 1, trace
        neg_h = -hess[np.ix_(active, active)]
        step_a = None
        tau = 0.0
        for _ in range(60):
            try:
                chol = np.linalg.cholesky(neg_h + tau * np.eye(len(g)))
                step_a = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
                break
            except np.linalg.LinAlgError:
                tau = max(2 * tau, 1e-8 * max(1.0, np.abs(np.diag(neg_h)).max()))
        if step_a is None:
            step_a = g
        step = np.zeros(n)
        step[active] = step_a
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = theta + t * step
            for i, (lo, hi) in bounds.items():
                cand[i] = min(max(cand[i], lo), hi)
            ll_c = f(cand, False)
            if math.isfinite(ll_c) and ll_c >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return theta, ll, grad, STALLED, it, trace
        theta = cand
        ll, grad, hess = f(theta)
        trace.append(ll)
        if np.linalg.norm(theta[free]) > _DIVERGENCE_NORM:
            return theta, ll, grad, DIVERGED, it, trace
    active = free.copy()
    g = grad[active]
    status = CONVERGED if np.max(np.abs(g), initial=0.0) < tol else MAX_ITER
    return theta, ll, grad, status, max_iter, trace


def fit_negative_binomial(X, y, weights, tol: float = 1e-6, max_iter: int = 200,
                          feature_names: Sequence[str] | None = None,
                          return_trace: bool = False):
    """Weighted NB2 regression with jointly estimated dispersion (log scale).

    ``X`` must include the intercept column first.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X rows and counts differ in length")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("counts must be non-negative integers")
    w = _normalized(weights)
    if w.size != y.size:
        raise ValueError("weights and counts differ in length")
    if len(np.unique(X, axis=0)) < 2 and X.shape[1] > 1:
        raise ValueError("need at least two distinct feature rows")
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"x{i}" for i in range(X.shape[1]))

    m = float(np.dot(w, y) / w.sum())
    p = X.shape[1]
    if m == 0:
        beta = np.zeros(p)
        beta[0] = _ABSENT_UTILITY
        model = NBModel(names, beta, 1.0, DEGENERATE, 0, 0.0, 0.0)
        return (model, [0.0]) if return_trace else model

    var = float(np.dot(w, (y - m) ** 2) / w.sum())
    alpha0 = max((var - m) / m ** 2, 0.05)
    theta = np.zeros(p + 1)
    theta[0] = math.log(m)
    theta[-1] = math.log(alpha0)

    def f(th, derivatives=True):
        return nb_loglik(th, X, y, w, derivatives)

    bounds = {p: _LOG_ALPHA_BOUNDS}
    theta, ll, grad, status, iters, trace = _newton_ascent(f, theta, tol, max_iter, bounds=bounds)
    model = NBModel(names, theta[:-1].copy(), float(math.exp(theta[-1])), status, iters,
                    float(ll), float(np.max(np.abs(grad[:-1]), initial=0.0)))
    return (model, trace) if return_trace else model


def nb_pmf_params(mu: float, alpha: float) -> tuple[float, float]:
    """scipy ``nbinom`` (n, p) for an NB2 mean/dispersion pair."""
    r = 1.0 / alpha
    return r, r / (r + mu)


def nb_trip_count_distribution(model: NBModel, features, max_count: int = 10) -> Distribution:
    mu = model.mean(features)
    n, p = nb_pmf_params(mu, model.alpha)
    ks = np.arange(max_count)
    mass = stats.nbinom.pmf(ks, n, p)
    tail = stats.nbinom.sf(max_count - 1, n, p)
    mass = np.append(mass, tail)
    mass = mass / mass.sum()
    labels = tuple(str(k) for k in ks) + (f"{max_count}+",)
    return Distribution(labels, tuple(mass))


def nb_sample_count(model: NBModel, features, sampler: SeededSampler) -> int:
    """Gamma-Poisson draw with mean mu and variance mu + alpha mu^2."""
    mu = model.mean(features)
    if mu <= 0:
        return 0
    r = 1.0 / model.alpha
    lam = sampler.gamma(r, mu / r)
    return sampler.poisson(lam)


# --- multinomial logit ----------------------------------------------------------------

def mnl_loglik(flat: np.ndarray, X: np.ndarray, choice: np.ndarray, w: np.ndarray, k: int,
               derivatives: bool = True):
    """Weighted MNL log-likelihood; ``flat`` holds the (k-1, p) non-reference rows."""
    n, p = X.shape
    B = np.vstack([np.zeros(p), flat.reshape(k - 1, p)])
    U = X @ B.T
    logP = U - logsumexp(U, axis=1, keepdims=True)
    ll = float(np.dot(w, logP[np.arange(n), choice]))
    if not derivatives:
        return ll
    P = np.exp(logP)
    Y = np.zeros_like(P)
    Y[np.arange(n), choice] = 1.0
    grad = ((Y - P)[:, 1:] * w[:, None]).T @ X
    hess = np.empty(((k - 1) * p, (k - 1) * p))
    for c in range(1, k):
        for d in range(c, k):
            coef = w * P[:, c] * ((1.0 if c == d else 0.0) - P[:, d])
            block = -(X * coef[:, None]).T @ X
            hess[(c - 1) * p:c * p, (d - 1) * p:d * p] = block
            hess[(d - 1) * p:d * p, (c - 1) * p:c * p] = block.T
    return ll, grad.ravel(), hess


@dataclass(frozen=True, eq=False)
class MNLModel:
    categories: tuple[str, ...]
    feature_names: tuple[str, ...]
    coefficients: np.ndarray  # (categories, features); row 0 is the zero reference
    status: str = CONVERGED
    iterations: int = 0
    loglik: float = float("nan")
    grad_norm: float = float("nan")
    unobserved: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "feature_names": list(self.feature_names),
            "coefficients": [[float(v) for v in row] for row in self.coefficients],
            "status": self.status,
            "iterations": self.iterations,
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "unobserved": list(self.unobserved),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> MNLModel:
        return cls(tuple(data["categories"]), tuple(data["feature_names"]),
                   np.array(data["coefficients"], dtype=float), data["status"],
                   int(data["iterations"]), float(data["loglik"]), float(data["grad_norm"]),
                   tuple(data.get("unobserved", ())))


def mnl_probabilities(model: MNLModel, features) -> Distribution:
    u = model.coefficients @ np.asarray(features, dtype=float)
    logp = u - logsumexp(u)
    probs = np.exp(logp)
    probs = probs / probs.sum()
    return Distribution(model.categories, tuple(probs))


def fit_mnl(X, choices: Sequence[str], weights, categories: Sequence[str],
            tol: float = 1e-6, max_iter: int = 500,
            feature_names: Sequence[str] | None = None, return_trace: bool = False):
    """Weighted multinomial logit with the first category as the zero reference.

    Categories never chosen get utility -30 relative to the observed ones and
    are listed in ``unobserved``; fewer than two observed categories is a
    degenerate fit.
    """
    X = np.asarray(X, dtype=float)
    categories = tuple(categories)
    index = {c: i for i, c in enumerate(categories)}
    try:
        choice = np.array([index[c] for c in choices])
    except KeyError as exc:
        raise ValueError(f"choice {exc.args[0]!r} is not among the categories") from None
    w = _normalized(weights)
    if X.ndim != 2 or X.shape[0] != choice.size or w.size != choice.size:
        raise ValueError("X, choices and weights differ in length")
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"x{i}" for i in range(p))

    observed = sorted(set(choice.tolist()))
    unobserved = tuple(categories[i] for i in range(len(categories)) if i not in observed)
    coef = np.zeros((len(categories), p))
    if len(observed) < 2:
        for i in range(len(categories)):
            if i not in observed:
                coef[i, 0] = _ABSENT_UTILITY
        coef -= coef[0]
        model = MNLModel(categories, names, coef, DEGENERATE, 0, 0.0, 0.0, unobserved)
        return (model, [0.0]) if return_trace else model

    remap = {orig: j for j, orig in enumerate(observed)}
    local_choice = np.array([remap[c] for c in choice])
    k = len(observed)
    shares = np.bincount(local_choice, weights=w, minlength=k) / w.sum()
    theta = np.zeros((k - 1, p))
    theta[:, 0] = np.log(shares[1:] / shares[0])
    theta = theta.ravel()

    def f(th, derivatives=True):
        return mnl_loglik(th, X, local_choice, w, k, derivatives)

    theta, ll, grad, status, iters, trace = _newton_ascent(f, theta, tol, max_iter)
    local = np.vstack([np.zeros(p), theta.reshape(k - 1, p)])
    for j, orig in enumerate(observed):
        coef[orig] = local[j]
    for i in range(len(categories)):
        if i not in remap:
            coef[i] = 0.0
            coef[i, 0] = _ABSENT_UTILITY
    coef -= coef[0]  # re-express against the first category
    model = MNLModel(categories, names, coef, status, iters, float(ll),
                     float(np.max(np.abs(grad), initial=0.0)), unobserved)
    return (model, trace) if return_trace else model


# --- calibration and generation ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EmpiricalTable:
    """Weighted empirical distribution over observed values."""

    values: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_observations(cls, values, weights) -> EmpiricalTable:
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if values.size == 0:
            raise ValueError("cannot build an empirical table without observations")
        uniq, inverse = np.unique(values, return_inverse=True)
        mass = np.bincount(inverse, weights=weights)
        return cls(uniq, mass / mass.sum())

    @classmethod
    def point(cls, value: float) -> EmpiricalTable:
        return cls(np.array([float(value)]), np.array([1.0]))

    def sample(self, sampler: SeededSampler) -> float:
        u = sampler.random()
        idx = int(np.searchsorted(np.cumsum(self.probs), u, side="right"))
        return float(self.values[min(idx, len(self.values) - 1)])

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> EmpiricalTable:
        return cls(np.array(data["values"], dtype=float), np.array(data["probs"], dtype=float))


@dataclass(frozen=True, eq=False)
class TimeTables:
    departure: EmpiricalTable  # minutes from midnight
    duration: EmpiricalTable   # minutes
    distance: EmpiricalTable   # miles

    @classmethod
    def from_hts(cls, hts: Sequence[PersonRecord]) -> TimeTables:
        dep, dur, dist, wts = [], [], [], []
        for rec in hts:
            for trip in rec.trips:
                dep.append(trip.start_time)
                dur.append(trip.end_time - trip.start_time)
                dist.append(trip.distance_miles)
                wts.append(rec.survey_weight)
        return cls(EmpiricalTable.from_observations(dep, wts),
                   EmpiricalTable.from_observations(dur, wts),
                   EmpiricalTable.from_observations(dist, wts))

    def to_dict(self) -> dict:
        return {"departure": self.departure.to_dict(), "duration": self.duration.to_dict(),
                "distance": self.distance.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> TimeTables:
        return cls(EmpiricalTable.from_dict(data["departure"]),
                   EmpiricalTable.from_dict(data["duration"]),
                   EmpiricalTable.from_dict(data["distance"]))


@dataclass(frozen=True, eq=False)
class ClassicalModels:
    features: FeatureBuilder
    trip_count: NBModel
    purpose: MNLModel
    mode: MNLModel
    time_tables: TimeTables

    def to_dict(self) -> dict:
        return {
            "features": self.features.to_dict(),
            "feature_names": list(self.features.names),
            "trip_count": self.trip_count.to_dict(),
            "purpose": self.purpose.to_dict(),
            "mode": self.mode.to_dict(),
            "time_tables": self.time_tables.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ClassicalModels:
        return cls(FeatureBuilder.from_dict(data["features"]),
                   NBModel.from_dict(data["trip_count"]),
                   MNLModel.from_dict(data["purpose"]),
                   MNLModel.from_dict(data["mode"]),
                   TimeTables.from_dict(data["time_tables"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> ClassicalModels:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def calibrate(hts: Sequence[PersonRecord], profiles: Mapping[str, BlockGroupProfile],
              features: FeatureBuilder | None = None,
              schema: CategorySchema | None = None) -> ClassicalModels:
    features = features or FeatureBuilder()
    schema = schema or CategorySchema()
    X = features.matrix([r.demographics for r in hts], profiles)
    weights = np.array([r.survey_weight for r in hts])
    counts = np.array([len(r.trips) for r in hts], dtype=float)
    nb = fit_negative_binomial(X, counts, weights, feature_names=features.names)

    rows, purposes, modes, trip_w = [], [], [], []
    for i, rec in enumerate(hts):
        for trip in rec.trips:
            rows.append(i)
            purposes.append(trip.purpose)
            modes.append(trip.mode)
            trip_w.append(rec.survey_weight)
    if not rows:
        raise ValueError("survey contains no trips to calibrate choice models")
    Xt = X[rows]
    purpose = fit_mnl(Xt, purposes, trip_w, schema.purposes, feature_names=features.names)
    mode = fit_mnl(Xt, modes, trip_w, schema.modes, feature_names=features.names)
    return ClassicalModels(features, nb, purpose, mode, TimeTables.from_hts(hts))


def _resolve_overlaps(starts: list[int], durations: list[int]) -> list[tuple[int, int]]:
    """Clamp sorted (start, duration) pairs into a valid single-day sequence."""
    n = len(starts)
    s = list(starts)
    e = [0] * n
    prev_end = 0
    for i in range(n):
        s[i] = max(s[i], prev_end)
        e[i] = s[i] + max(durations[i], 1)
        prev_end = e[i]
    last = MINUTES_PER_DAY - 1
    for i in range(n - 1, -1, -1):
        e[i] = min(e[i], last)
        s[i] = min(s[i], e[i] - 1)
        last = s[i]
    return list(zip(s, e))


def _valid_times(pairs: list[tuple[int, int]]) -> bool:
    prev_end = 0
    for s, e in pairs:
        if s < prev_end or e <= s or e > MINUTES_PER_DAY - 1:
            return False
        prev_end = e
    return True


def generate_classical_diary(
    persona: Persona,
    features,
    models: ClassicalModels,
    sampler: SeededSampler,
    max_trips: int = 30,
    max_redraws: int = 20,
) -> Diary:
    n = min(nb_sample_count(models.trip_count, features, sampler), max_trips)
    if n == 0:
        return Diary(persona.persona_id, (), "classical")
    purpose_dist = mnl_probabilities(models.purpose, features)
    mode_dist = mnl_probabilities(models.mode, features)
    purposes = [sampler.categorical(purpose_dist) for _ in range(n)]
    modes = [sampler.categorical(mode_dist) for _ in range(n)]
    tables = models.time_tables

    pairs = None
    for _ in range(max_redraws):
        starts = [int(tables.departure.sample(sampler)) for _ in range(n)]
        durations = [max(int(round(tables.duration.sample(sampler))), 1) for _ in range(n)]
        order = np.argsort(starts, kind="stable")
        pairs = [(starts[i], starts[i] + durations[i]) for i in order]
        if _valid_times(pairs):
            break
    else:
        pairs = _resolve_overlaps([p[0] for p in pairs], [p[1] - p[0] for p in pairs])

    trips = []
    for (s, e), purpose, mode in zip(pairs, purposes, modes):
        distance = max(tables.distance.sample(sampler), 0.0)
        trips.append(TripRecord(int(s), int(e), purpose, mode, round(distance, 2)))
    return Diary(persona.persona_id, tuple(trips), "classical")
