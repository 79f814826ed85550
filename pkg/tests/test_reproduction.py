"""Desk-scale reproduction runs. Slow: enabled with `STOCH_RNN_SLOW_TESTS=1`."""

import math
import os
import unittest

import numpy as np

from stoch_rnn.cache import MemoryFeatureCache
from stoch_rnn.evaluation import (
    accuracy_experiment,
    bound_check_experiment,
    robustness_experiment,
    sde_law_check,
)
from stoch_rnn.interface import TrainConfig
from stoch_rnn.learn import project_spectral_ball
from stoch_rnn.paths import (
    download_japanese_vowels,
    gen_trig_dataset,
    load_japanese_vowels,
    merge_datasets,
    train_test_split,
)
from stoch_rnn.reservoir import build_reservoir

SLOW = os.environ.get("STOCH_RNN_SLOW_TESTS") == "1"


@unittest.skipUnless(SLOW, "set STOCH_RNN_SLOW_TESTS=1 to run reproduction tests")
class TestSyntheticReproduction(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        dataset = gen_trig_dataset(seed=0, samples_per_class=70)
        cls.train, cls.test = train_test_split(dataset, test_fraction=0.3, seed=0)
        cls.cfg = TrainConfig(seed=0)
        cls.cache = MemoryFeatureCache()

    def reservoir(self, delta: float):
        return build_reservoir(
            n=50, r=self.train.r, T=self.train.T, delta=delta, connectivity_seed=0, noise_seed=1
        )

    def test_small_noise_accuracy(self):
        report = accuracy_experiment(
            self.train, self.test, self.reservoir(2.0), self.cfg, grid=[self.train.m], trials=5, cache=self.cache
        )
        record = report.records[0]
        self.assertGreaterEqual(record.noiseless_accuracy, 0.95)
        self.assertGreaterEqual(record.stochastic_avg, 0.95)

    def test_large_noise_accuracy(self):
        report = accuracy_experiment(
            self.train, self.test, self.reservoir(6.0), self.cfg, grid=[self.train.m], trials=5, cache=self.cache
        )
        self.assertTrue(0.70 <= report.records[0].stochastic_avg <= 0.90)

    def test_bound_holds(self):
        grid = [10, 40, self.train.m]
        report = bound_check_experiment(
            self.train, self.test, self.reservoir(2.0), self.cfg, grid=grid, runs=2, cache=self.cache
        )
        self.assertTrue(all(record.bound_holds for record in report.records))
        bounds = {record.training_size: record.pac_bound for record in report.records if record.run == 0}
        for size in grid[1:]:
            expected = bounds[grid[0]] * math.sqrt(grid[0] / size)
            self.assertAlmostEqual(bounds[size] / expected, 1.0, delta=0.05)

    def test_robustness(self):
        report = robustness_experiment(
            self.train, self.test, self.reservoir(2.0), self.cfg, fractions=(0.0, 0.15), trials=10, cache=self.cache
        )
        self.assertGreaterEqual(report.records[1].robustness_ratio, 0.95)


@unittest.skipUnless(SLOW, "set STOCH_RNN_SLOW_TESTS=1 to run reproduction tests")
class TestGaussianLaw(unittest.TestCase):
    def test_euler_maruyama_law(self):
        system = build_reservoir(n=6, r=5, T=2 * math.pi, delta=1.0, connectivity_seed=3, noise_seed=4)
        path = gen_trig_dataset(seed=3, samples_per_class=1).paths[0]
        u = project_spectral_ball(np.random.default_rng(3).standard_normal((6, 5)), 1.0)
        result = sde_law_check(path, u, system, dt=1e-3, num_paths=10_000, rng=3)
        self.assertTrue(result.mean_ok)
        self.assertTrue(result.covariance_ok)


@unittest.skipUnless(SLOW, "set STOCH_RNN_SLOW_TESTS=1 to run reproduction tests")
class TestJapaneseVowelsReproduction(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        try:
            train_file, test_file = download_japanese_vowels()
        except OSError as e:
            raise unittest.SkipTest(f"Japanese vowels data unavailable: {e}")
        train, test = load_japanese_vowels(train_file, test_file)
        cls.train, cls.test = train_test_split(merge_datasets(train, test), test_fraction=0.3, seed=0)
        cls.cfg = TrainConfig(seed=0)
        cls.cache = MemoryFeatureCache()

    def reservoir(self, delta: float):
        return build_reservoir(n=50, r=12, T=1.0, delta=delta, connectivity_seed=0, noise_seed=1)

    def test_small_noise_accuracy(self):
        report = accuracy_experiment(
            self.train, self.test, self.reservoir(1.0), self.cfg, grid=[self.train.m], trials=5, cache=self.cache
        )
        self.assertGreaterEqual(report.records[0].noiseless_accuracy, 0.97)
        self.assertGreaterEqual(report.records[0].stochastic_avg, 0.96)

    def test_large_noise_accuracy(self):
        report = accuracy_experiment(
            self.train, self.test, self.reservoir(2.5), self.cfg, grid=[self.train.m], trials=5, cache=self.cache
        )
        self.assertTrue(0.65 <= report.records[0].stochastic_avg <= 0.90)

    def test_robustness(self):
        report = robustness_experiment(
            self.train, self.test, self.reservoir(1.0), self.cfg, fractions=(0.0, 0.1), trials=10, cache=self.cache
        )
        self.assertGreaterEqual(report.records[1].robustness_ratio, 0.95)


if __name__ == "__main__":
    unittest.main()
