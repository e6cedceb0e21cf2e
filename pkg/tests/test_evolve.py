import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psiconn.evolve import (Chromosome, GaConfig, GeneticSelector, SelectionResult,
                            crossover, evolve, fitness, init_population, mutate,
                            random_mask)
from psiconn.exceptions import StratificationError
from psiconn.synthgen import planted_feature_table

SMALL = GaConfig(population_size=10, max_generations=4, cv_folds=5, n_estimators=5)


@pytest.fixture(scope="module")
def planted():
    return planted_feature_table(n_features=30, n_informative=6, n_per_class=40, rng=3)


class TestConfig:
    def test_defaults(self):
        cfg = GaConfig()
        assert (cfg.population_size, cfg.max_generations, cfg.mutation_rate,
                cfg.elite_fraction, cfg.underdog_survival,
                cfg.plateau_threshold, cfg.cv_folds) == (50, 16, 0.2, 0.5, 0.2, 0.1, 10)

    @pytest.mark.parametrize("kw", [dict(mutation_rate=1.5), dict(elite_fraction=-0.1),
                                    dict(population_size=5), dict(population_size=2)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GaConfig(**kw)

    def test_chromosome(self):
        assert Chromosome([0, 1, 1]).n_selected == 2
        with pytest.raises(ValueError):
            Chromosome([0, 0])
        with pytest.raises(ValueError):
            Chromosome([1], cached_fitness=1.5)


class TestInit:
    def test_popcount_bounds(self):
        pop = init_population(GaConfig(), 1830)
        assert len(pop) == 50
        assert all(700 <= m.sum() <= 1130 for m in pop)

    def test_deterministic(self):
        a = init_population(GaConfig(rng_seed=4), 200)
        b = init_population(GaConfig(rng_seed=4), 200)
        assert all((x == y).all() for x, y in zip(a, b))
        c = init_population(GaConfig(rng_seed=5), 200)
        assert any((x != y).any() for x, y in zip(a, c))

    def test_single_feature(self):
        assert all(m.tolist() == [True] for m in init_population(GaConfig(), 1))

    def test_generator_argument(self):
        pop = init_population(GaConfig(population_size=6), 10, np.random.default_rng(0))
        assert len(pop) == 6 and all(m.any() for m in pop)
        with pytest.raises(ValueError):
            random_mask(0, np.random.default_rng(0))


class TestCrossover:
    def test_identical_parents(self, rng):
        a = rng.random(40) < 0.5
        a[0] = True
        np.testing.assert_array_equal(crossover(a, a, rng), a)

    def test_ones_then_zeros(self, rng):
        for _ in range(50):
            child = crossover(np.ones(20, bool), np.zeros(20, bool), rng)
            k = child.sum()
            assert 1 <= k <= 19
            assert child[:k].all() and not child[k:].any()

    def test_closure_1000_trials(self, rng):
        for _ in range(1000):
            L = int(rng.integers(2, 50))
            a, b = rng.random(L) < 0.5, rng.random(L) < 0.5
            a[0] = True
            child = crossover(a, b, rng)
            assert ((child == a) | (child == b)).all()
            assert child.any()

    def test_empty_child_redrawn(self, rng):
        a = np.zeros(10, bool)
        a[9] = True
        b = np.zeros(10, bool)
        b[0] = True
        # only k = 1 or k >= ... : a[:k] empty for k <= 9, b[k:] empty for k >= 1
        np.testing.assert_array_equal(crossover(a, b, rng), a)

    def test_split_point_uniform(self):
        rng = np.random.default_rng(1)
        a, b = np.ones(5, bool), np.zeros(5, bool)
        ks = [crossover(a, b, rng).sum() for _ in range(4000)]
        counts = np.bincount(ks, minlength=5)[1:]
        assert counts.min() > 900 and counts.max() < 1100

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError):
            crossover(np.ones(3, bool), np.ones(4, bool), rng)


class TestMutate:
    def test_rate_zero_is_identity(self, rng):
        x = rng.random(30) < 0.5
        x[0] = True
        for _ in range(100):
            np.testing.assert_array_equal(mutate(x, 0.0, rng), x)

    def test_rate_one_flips_one_bit(self, rng):
        for _ in range(200):
            x = rng.random(25) < 0.5
            x[3] = True
            y = mutate(x, 1.0, rng)
            assert (x != y).sum() == 1 and y.any()

    def test_never_empties(self, rng):
        x = np.zeros(3, bool)
        x[1] = True
        for _ in range(100):
            y = mutate(x, 1.0, rng)
            assert y.any() and (x != y).sum() == 1
        assert mutate(np.ones(1, bool), 1.0, rng).tolist() == [True]

    def test_mutation_frequency(self):
        rng = np.random.default_rng(7)
        x = np.ones(50, bool)
        changed = sum((mutate(x, 0.2, rng) != x).any() for _ in range(10_000))
        assert 0.17 <= changed / 10_000 <= 0.23

    def test_input_untouched(self, rng):
        x = np.ones(5, bool)
        mutate(x, 1.0, rng)
        assert x.all()

    def test_bad_rate(self, rng):
        with pytest.raises(ValueError):
            mutate(np.ones(3, bool), 1.2, rng)


class TestFitness:
    def test_planted_vs_noise_connections(self, planted_theta):
        table, manifest = planted_theta
        planted = np.zeros(table.n_features, bool)
        planted[manifest["planted_features"]] = True
        assert fitness(planted, table.X, table.labels, GaConfig()) >= 0.95

    def test_pure_noise_columns_at_chance(self):
        # non-planted PSI pairs still carry class-dependent variance, so chance
        # level is checked on the plain table's N(0, 1) columns
        X, y, inf = planted_feature_table(rng=0)
        noise = np.ones(X.shape[1], bool)
        noise[inf] = False
        assert 0.15 <= fitness(noise, X, y, GaConfig()) <= 0.35

    def test_stratification_error(self):
        X = np.zeros((4, 3))
        y = np.array(["IN", "IH", "EX", "EH"])
        with pytest.raises(StratificationError):
            fitness(np.ones(3, bool), X, y, GaConfig())
        with pytest.raises(StratificationError):
            evolve(X, y, GaConfig())

    def test_empty_mask(self, planted):
        X, y, _ = planted
        with pytest.raises(ValueError):
            fitness(np.zeros(X.shape[1], bool), X, y, SMALL)


class TestEvolve:
    def test_history_and_termination(self, planted):
        X, y, _ = planted
        res = evolve(X, y, SMALL)
        bests = [b for b, _ in res.history]
        assert all(b1 >= b0 for b0, b1 in zip(bests, bests[1:]))
        assert res.generations_run == len(res.history) <= SMALL.max_generations
        assert res.best_fitness == bests[-1]
        if res.generations_run < SMALL.max_generations:
            assert (bests[-1] - bests[-2]) / bests[-2] < SMALL.plateau_threshold
        for b0, b1 in zip(bests[:-2], bests[1:-1]):
            assert (b1 - b0) / b0 >= SMALL.plateau_threshold

    def test_max_generations_reached_without_plateau(self, planted):
        X, y, _ = planted
        cfg = GaConfig(population_size=6, max_generations=3, plateau_threshold=0.0,
                       cv_folds=5, n_estimators=3)
        assert evolve(X, y, cfg).generations_run == 3

    def test_deterministic_and_worker_independent(self, planted):
        X, y, _ = planted
        a = evolve(X, y, SMALL)
        b = evolve(X, y, SMALL, n_jobs=2)
        assert a.to_json() == b.to_json()

    def test_json_round_trip(self, planted):
        X, y, _ = planted
        res = evolve(X, y, SMALL)
        back = SelectionResult.from_json(res.to_json())
        np.testing.assert_array_equal(back.best_mask, res.best_mask)
        assert back.to_json() == res.to_json()
        assert back.best.cached_fitness == res.best_fitness

    def test_selector_api(self, planted):
        X, y, _ = planted
        sel = GeneticSelector(population_size=10, max_generations=3, cv_folds=5,
                              n_estimators=5).fit(X, y)
        assert sel.transform(X).shape[1] == sel.support_.sum()
        assert sel.get_support().dtype == bool


@given(st.integers(2, 60), st.integers(0, 2 ** 20))
def test_crossover_mutation_keep_masks_valid(L, seed):
    rng = np.random.default_rng(seed)
    a, b = random_mask(L, rng), random_mask(L, rng)
    child = mutate(crossover(a, b, rng), 0.5, rng)
    assert child.shape == (L,) and child.any()
