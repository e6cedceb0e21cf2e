import numpy as np
import pytest
from scipy.signal import periodogram

from psiconn.committee import cross_validate
from psiconn.exceptions import PlanError
from psiconn.featureset import build_table, pair_to_feature
from psiconn.signal_io import PHASE_LABELS, epoch_stream
from psiconn.spectral import SpectralConfig, psi_all_bands
from psiconn.synthgen import (CouplingSpec, PlantedPlan, coupled_pair, delay_samples,
                              planted_dataset, planted_feature_table, planted_record,
                              round_robin_matchings)

CFG = SpectralConfig(rate=1000.0)


class TestCoupledPair:
    def test_shape_and_delay(self):
        rec, man = coupled_pair(CouplingSpec(tau_ms=20.0, snr=1e9), 1)
        assert rec.samples.shape == (2500, 2) and rec.rate == 1000.0
        assert man["delay_samples"] == 20 and "warning" not in man
        x, y = rec.samples.T
        # with no noise, channel 2 is channel 1 shifted by 20 samples
        np.testing.assert_allclose(y[20:], x[:-20], atol=1e-3 * np.std(x))

    def test_negative_delay(self):
        rec, _ = coupled_pair(CouplingSpec(tau_ms=-15.0, snr=1e9), 2)
        x, y = rec.samples.T
        np.testing.assert_allclose(x[15:], y[:-15], atol=1e-3 * np.std(x))

    def test_snr(self):
        rec, _ = coupled_pair(CouplingSpec(snr=2.0, duration_s=20.0), 3)
        x, y = rec.samples.T
        noise = y - np.concatenate([np.full(20, np.nan), x[:-20]])
        ratio = np.var(x) / np.nanvar(noise[20:])
        assert 1.8 < ratio < 2.2

    def test_rounding_warning(self):
        assert delay_samples(20.0, 1000.0) == (20, False)
        assert delay_samples(20.4, 1000.0) == (20, True)
        _, man = coupled_pair(CouplingSpec(tau_ms=20.4), 0)
        assert man["delay_samples"] == 20 and "rounded" in man["warning"]

    def test_source_power_in_band(self):
        for seed in range(5):
            rec, _ = coupled_pair(CouplingSpec(), seed)
            f, P = periodogram(rec.samples[:, 0], fs=1000.0)
            inside = P[(f >= 4) & (f <= 8)].sum()
            assert inside / P.sum() >= 0.8

    def test_deterministic(self):
        a, _ = coupled_pair(CouplingSpec(), 9)
        b, _ = coupled_pair(CouplingSpec(), 9)
        np.testing.assert_array_equal(a.samples, b.samples)

    @pytest.mark.parametrize("kw", [dict(snr=0), dict(tau_ms=300.0), dict(band=(8, 4))])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            CouplingSpec(**kw)

    def test_sign_flip_with_delay(self):
        rng = np.random.default_rng(4)
        agree = 0
        for _ in range(30):
            seed = int(rng.integers(2 ** 31))
            pos, _ = coupled_pair(CouplingSpec(tau_ms=20.0), seed)
            neg, _ = coupled_pair(CouplingSpec(tau_ms=-20.0), seed)
            a = psi_all_bands(pos.samples, CFG, ["theta"])[0].psi[0, 1]
            b = psi_all_bands(neg.samples, CFG, ["theta"])[0].psi[0, 1]
            agree += a > 0 > b
        assert agree >= 29


class TestPlan:
    def test_matchings(self):
        rounds = round_robin_matchings(8)
        assert len(rounds) == 7
        seen = set()
        for r in rounds:
            assert sorted(c for p in r for c in p) == list(range(8))
            seen.update(r)
        assert len(seen) == 28

    def test_default_plants_disjoint(self):
        plants = PlantedPlan().resolve()
        assert set(plants) == set(PHASE_LABELS)
        pairs = [tuple(sorted(p[:2])) for v in plants.values() for p in v]
        assert len(pairs) == len(set(pairs)) == 12

    def test_duplicate_pair_in_class(self):
        with pytest.raises(PlanError, match="twice"):
            PlantedPlan(plants={"IN": [(0, 1, 20), (1, 0, 10)]})

    def test_same_lag_across_classes(self):
        with pytest.raises(PlanError, match="same delay"):
            PlantedPlan(plants={"IN": [(0, 1, 20)], "EX": [(0, 1, 20)]})
        # same pair with the opposite lag is allowed
        PlantedPlan(plants={"IN": [(0, 1, 20)], "EX": [(1, 0, 20)]})

    def test_too_many_pairs(self):
        with pytest.raises(PlanError):
            PlantedPlan(n_channels=4, pairs_per_class=3)

    def test_dict_round_trip(self):
        plan = PlantedPlan(n_epochs_per_class=4)
        back = PlantedPlan.from_dict(plan.to_dict())
        assert back.resolve() == plan.resolve()


class TestPlantedData:
    def test_manifest(self):
        plan = PlantedPlan(n_epochs_per_class=2)
        epochs, man = planted_dataset(plan, 5)
        assert [e.label for e in epochs] == [lab for lab in PHASE_LABELS for _ in range(2)]
        assert man["seed"] == 5 and len(man["planted_features"]) == 12
        i, j, tau = plan.resolve()["IN"][0]
        fid = pair_to_feature(min(i, j), max(i, j), 8)
        assert fid in man["per_class"]["IN"]
        assert man["delays_ms"][str(fid)]["IN"] == (tau if i < j else -tau)

    def test_planted_pairs_have_expected_sign(self):
        plan = PlantedPlan(n_epochs_per_class=20)
        epochs, man = planted_dataset(plan, 1)
        for lab in PHASE_LABELS:
            rows = [psi_all_bands(e, CFG, ["theta"])[0].psi for e in epochs if e.label == lab]
            mean = np.mean(rows, axis=0)
            for i, j, tau in plan.resolve()[lab]:
                assert np.sign(mean[i, j]) == np.sign(tau)

    def test_order_independent_generation(self):
        small = planted_dataset(PlantedPlan(n_epochs_per_class=3), 8)[0]
        again = planted_dataset(PlantedPlan(n_epochs_per_class=3), 8)[0]
        for a, b in zip(small, again):
            np.testing.assert_array_equal(a.samples, b.samples)

    def test_record_epochs_back_to_dataset(self):
        plan = PlantedPlan(n_epochs_per_class=5, epochs_per_phase=2)
        record, schedule, _ = planted_record(plan, 3)
        epochs, _ = planted_dataset(plan, 3)
        cut = epoch_stream(record, schedule, plan.epoch_len_s)
        assert len(cut) == len(epochs)
        key = {(e.label, e.samples[0, 0]): e for e in epochs}
        for e in cut:
            np.testing.assert_array_equal(e.samples, key[(e.label, e.samples[0, 0])].samples)

    def test_separable_and_chance(self, planted_theta):
        table, _ = planted_theta
        assert cross_validate(table.X, table.labels, 10, 0).accuracy >= 0.95
        epochs, _ = planted_dataset(PlantedPlan(pairs_per_class=0), 7)
        mats = [psi_all_bands(e, CFG, ["theta"])[0] for e in epochs]
        null = build_table(mats, [e.label for e in epochs])
        assert 0.15 <= cross_validate(null.X, null.labels, 10, 0).accuracy <= 0.35


def test_feature_table_fixture():
    X, y, inf = planted_feature_table(rng=1)
    assert X.shape == (480, 100) and len(inf) == 10
    assert list(np.unique(y, return_counts=True)[1]) == [120] * 4
    noise = np.setdiff1d(np.arange(100), inf)
    means = np.array([X[y == c].mean(axis=0) for c in PHASE_LABELS])
    assert np.abs(means[:, noise]).max() < 0.4
    assert np.abs(means[:, inf]).min() > 0.5
    with pytest.raises(ValueError):
        planted_feature_table(n_informative=0)
