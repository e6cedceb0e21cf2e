"""Genetic-algorithm feature subset selection scored by committee CV accuracy.

Each generation keeps the fittest ``elite_fraction`` of the population, keeps
every other individual independently with probability ``underdog_survival``,
then refills the population with children of the two fittest individuals
(single-point crossover followed by mutation). Evolution stops once the best
fitness improves on the previous generation's best by a relative amount below
``plateau_threshold``, or after ``max_generations`` evaluated generations.

Randomness comes from one stream per ``(seed, generation, slot, purpose)`` so
results do not depend on evaluation order or worker count.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from .committee import cross_val_predict
from .validation import check_class_support

_INIT, _SURVIVE, _BREED = 0, 1, 2


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    max_generations: int = 16
    mutation_rate: float = 0.2
    elite_fraction: float = 0.5
    underdog_survival: float = 0.2
    plateau_threshold: float = 0.10
    cv_folds: int = 10
    n_estimators: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("mutation_rate", "elite_fraction", "underdog_survival",
                     "plateau_threshold"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.population_size < 4 or self.population_size % 2:
            raise ValueError("population_size must be an even number >= 4")
        if not 1 <= self.max_generations:
            raise ValueError("max_generations must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class Chromosome:
    """A non-empty feature mask and, once evaluated, its fitness."""

    mask: np.ndarray
    cached_fitness: float | None = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 1 or not self.mask.any():
            raise ValueError("a chromosome needs a 1-D mask with at least one bit set")
        if self.cached_fitness is not None and not 0 <= self.cached_fitness <= 1:
            raise ValueError("fitness must lie in [0, 1]")

    @property
    def n_selected(self):
        return int(self.mask.sum())


@dataclass
class SelectionResult:
    best_mask: np.ndarray
    best_fitness: float
    history: list                  # [(best, mean), ...] per evaluated generation
    generations_run: int
    config: GaConfig = field(default_factory=GaConfig)

    @property
    def selected(self):
        return np.flatnonzero(self.best_mask)

    @property
    def best(self) -> Chromosome:
        return Chromosome(self.best_mask, self.best_fitness)

    def to_json(self) -> dict:
        return {"best_mask": [int(i) for i in self.selected],
                "n_features": int(len(self.best_mask)),
                "best_fitness": self.best_fitness,
                "history": [{"best": b, "mean": m} for b, m in self.history],
                "generations_run": self.generations_run,
                "config": self.config.to_dict()}

    @classmethod
    def from_json(cls, doc) -> "SelectionResult":
        mask = np.zeros(doc["n_features"], dtype=bool)
        mask[doc["best_mask"]] = True
        return cls(mask, doc["best_fitness"],
                   [(h["best"], h["mean"]) for h in doc["history"]],
                   doc["generations_run"], GaConfig(**doc["config"]))


def stream(seed, generation, slot, purpose):
    """Independent generator for one individual's random decisions."""
    return np.random.default_rng([int(seed), int(generation), int(slot), int(purpose)])


def random_mask(n_features, rng):
    """Bernoulli(0.5) bits, redrawn until at least one is set."""
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    while True:
        mask = rng.random(n_features) < 0.5
        if mask.any():
            return mask


def init_population(config: GaConfig, n_features, rng=None):
    """``population_size`` random non-empty masks.

    ``rng`` may be a Generator (drawn sequentially) or None, in which case
    every individual gets its own stream derived from ``config.rng_seed``.
    """
    if rng is None:
        return [random_mask(n_features, stream(config.rng_seed, 0, i, _INIT))
                for i in range(config.population_size)]
    return [random_mask(n_features, rng) for _ in range(config.population_size)]


def crossover(parent_a, parent_b, rng):
    """Single-point crossover ``a[:k] + b[k:]`` with ``k`` uniform in ``[1, L-1]``.

    Split points that would give an empty child are redrawn; if every split
    point does, a copy of ``parent_a`` is returned.
    """
    a = np.asarray(parent_a, dtype=bool)
    b = np.asarray(parent_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"parent lengths differ: {a.shape} vs {b.shape}")
    L = len(a)
    if L < 2:
        return a.copy()
    # child is empty iff prefix of a and suffix of b are both empty
    a_any = np.cumsum(a) > 0                          # a[:k] non-empty for k = i+1
    b_any = np.cumsum(b[::-1])[::-1] > 0              # b[k:] non-empty
    ks = np.arange(1, L)
    valid = ks[a_any[ks - 1] | b_any[ks]]
    if len(valid) == 0:
        return a.copy()
    while True:
        k = int(rng.integers(1, L))
        if k in valid:
            break
    return np.concatenate([a[:k], b[k:]])


def mutate(child, rate, rng):
    """With probability ``rate`` flip exactly one uniformly chosen bit.

    A flip that would empty the mask is undone and another bit is chosen.
    """
    if not 0 <= rate <= 1:
        raise ValueError("rate must lie in [0, 1]")
    child = np.array(child, dtype=bool, copy=True)
    if rng.random() >= rate:
        return child
    L = len(child)
    while True:
        k = int(rng.integers(L))
        child[k] = not child[k]
        if child.any():
            return child
        child[k] = not child[k]
        if L == 1:
            return child


def fitness(mask, X, y, config: GaConfig):
    """Stratified ``cv_folds``-fold accuracy of a committee on the masked columns."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty feature mask")
    pred, _ = cross_val_predict(X[:, mask], y, config.cv_folds, config.rng_seed,
                                config.n_estimators)
    return float(np.mean(pred == np.asarray(y)))


class _FitnessCache:
    def __init__(self, X, y, config, n_jobs):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.asarray(y)
        self.config = config
        self.n_jobs = n_jobs
        self.memo = {}

    def __call__(self, masks):
        todo = []
        for m in masks:
            key = np.packbits(m).tobytes()
            if key not in self.memo and key not in {k for k, _ in todo}:
                todo.append((key, m))
        if todo:
            if self.n_jobs in (None, 1) or len(todo) == 1:
                scores = [fitness(m, self.X, self.y, self.config) for _, m in todo]
            else:
                scores = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                    delayed(fitness)(m, self.X, self.y, self.config) for _, m in todo)
            for (key, _), s in zip(todo, scores):
                self.memo[key] = s
        return [self.memo[np.packbits(m).tobytes()] for m in masks]


def _rank(population, scores):
    """Indices sorted by fitness descending; ties keep population order."""
    return sorted(range(len(population)), key=lambda i: (-scores[i], i))


def evolve(X, y, config: GaConfig = GaConfig(), n_jobs=1) -> SelectionResult:
    """Run the GA on a feature table ``X`` with labels ``y``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    check_class_support(y, config.cv_folds)
    n_features = X.shape[1]
    score = _FitnessCache(X, y, config, n_jobs)
    N = config.population_size
    n_elite = max(2, int(round(config.elite_fraction * N)))
    seed = config.rng_seed

    population = init_population(config, n_features)
    scores = score(population)
    history = [(max(scores), float(np.mean(scores)))]

    for gen in range(1, config.max_generations):
        order = _rank(population, scores)
        keep = order[:n_elite]
        for slot in order[n_elite:]:
            if stream(seed, gen, slot, _SURVIVE).random() < config.underdog_survival:
                keep.append(slot)
        survivors = [population[i] for i in keep]
        parent_a, parent_b = population[order[0]], population[order[1]]
        children = []
        for slot in range(N - len(survivors)):
            rng = stream(seed, gen, slot, _BREED)
            child = crossover(parent_a, parent_b, rng)
            children.append(mutate(child, config.mutation_rate, rng))
        population = survivors + children
        scores = score(population)
        history.append((max(scores), float(np.mean(scores))))
        prev, best = history[-2][0], history[-1][0]
        gain = (best - prev) / prev if prev > 0 else (math.inf if best > 0 else 0.0)
        if gain < config.plateau_threshold:
            break

    best_i = _rank(population, scores)[0]
    return SelectionResult(population[best_i].copy(), scores[best_i], history,
                           len(history), config)


class GeneticSelector(SelectorMixin, BaseEstimator):
    """scikit-learn selector wrapping :func:`evolve`.

    After ``fit``, ``support_`` holds the selected mask, ``best_fitness_`` its
    cross-validated accuracy and ``history_`` the per-generation (best, mean)
    fitness.
    """

    def __init__(self, population_size=50, max_generations=16, mutation_rate=0.2,
                 elite_fraction=0.5, underdog_survival=0.2, plateau_threshold=0.10,
                 cv_folds=10, n_estimators=10, random_state=0, n_jobs=1):
        self.population_size = population_size
        self.max_generations = max_generations
        self.mutation_rate = mutation_rate
        self.elite_fraction = elite_fraction
        self.underdog_survival = underdog_survival
        self.plateau_threshold = plateau_threshold
        self.cv_folds = cv_folds
        self.n_estimators = n_estimators
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        config = GaConfig(self.population_size, self.max_generations,
                          self.mutation_rate, self.elite_fraction,
                          self.underdog_survival, self.plateau_threshold,
                          self.cv_folds, self.n_estimators, int(self.random_state or 0))
        result = evolve(X, y, config, n_jobs=self.n_jobs)
        self.result_ = result
        self.support_ = result.best_mask
        self.best_fitness_ = result.best_fitness
        self.history_ = result.history
        self.generations_run_ = result.generations_run
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_
