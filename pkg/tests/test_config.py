import json
import tempfile
import unittest
from pathlib import Path

from stoch_rnn.config import ExperimentConfig, load_config
from stoch_rnn.utils import DataParseError


def write_config(directory: str, payload: dict | str, name: str = "config.json") -> Path:
    file = Path(directory) / name
    file.write_text(payload if isinstance(payload, str) else json.dumps(payload, indent=2))
    return file


class TestLoadConfig(unittest.TestCase):
    def test_defaults_and_derived_seeds(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = load_config(write_config(tmp, {"seed": 7}))
        self.assertEqual(config.dataset.kind, "synthetic")
        self.assertEqual(config.reservoir.n, 50)
        self.assertEqual(config.dataset_seed, 7)
        self.assertEqual(config.connectivity_seed, 7)
        self.assertEqual(config.noise_seed, 8)
        self.assertEqual(config.split_seed, 7)
        self.assertEqual(config.train_config().seed, 7)

    def test_explicit_seeds(self):
        config = ExperimentConfig.model_validate(
            {"seed": 1, "reservoir": {"connectivity_seed": 10, "noise_seed": 20}, "train": {"seed": 30}}
        )
        self.assertEqual((config.connectivity_seed, config.noise_seed), (10, 20))
        self.assertEqual(config.train_config().seed, 30)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_config("/nonexistent/config.json")

    def test_missing_seed(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DataParseError):
                load_config(write_config(tmp, {"dataset": {"kind": "synthetic"}}))

    def test_invalid_json_reports_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            file = write_config(tmp, '{\n  "seed": 1,\n  "dataset": {\n}')
            with self.assertRaises(DataParseError) as ctx:
                load_config(file)
        self.assertEqual(ctx.exception.line, 4)

    def test_unknown_fields(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DataParseError):
                load_config(write_config(tmp, {"seed": 1, "reservoir": {"size": 10}}))
            with self.assertRaises(DataParseError):
                load_config(write_config(tmp, {"seed": 1, "train": {"learning_rate": 0.1}}))

    def test_dataset_files_required(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DataParseError):
                load_config(write_config(tmp, {"seed": 1, "dataset": {"kind": "csv"}}))
            with self.assertRaises(DataParseError):
                load_config(write_config(tmp, {"seed": 1, "dataset": {"kind": "vowels", "train_file": "ae.train"}}))
            config = load_config(write_config(tmp, {"seed": 1, "dataset": {"kind": "vowels", "download": True}}))
        self.assertTrue(config.dataset.download)


class TestShippedConfigs(unittest.TestCase):
    def test_configs_load(self):
        configs_dir = Path(__file__).resolve().parent.parent / "configs"
        for file in sorted(configs_dir.glob("*.json")):
            with self.subTest(file=file.name):
                config = load_config(file)
                self.assertEqual(config.train_config().restarts, 5)


class TestOverrides(unittest.TestCase):
    def setUp(self):
        self.config = ExperimentConfig.model_validate(
            {"seed": 3, "train": {"restarts": 2}, "experiment": {"trials": 4, "output_dir": "results"}}
        )

    def test_seed_override(self):
        config = self.config.apply_overrides(seed=11)
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.noise_seed, 12)
        self.assertEqual(config.train_config().seed, 11)
        self.assertEqual(config.train_config().restarts, 2)

    def test_other_overrides(self):
        config = self.config.apply_overrides(trials=9, out="elsewhere", truncated=3)
        self.assertEqual(config.experiment.trials, 9)
        self.assertEqual(config.experiment.table_trials, 9)
        self.assertEqual(config.experiment.output_dir, "elsewhere")
        self.assertEqual(config.train_config().truncation_order, 3)

    def test_no_overrides(self):
        self.assertEqual(self.config.apply_overrides(), self.config)

    def test_resolved(self):
        resolved = self.config.resolved()
        self.assertEqual(resolved["dataset"]["seed"], 3)
        self.assertEqual(resolved["reservoir"]["noise_seed"], 4)
        self.assertEqual(resolved["experiment"]["split_seed"], 3)
        self.assertEqual(resolved["train"]["seed"], 3)
        self.assertEqual(resolved["train"]["restarts"], 2)
        json.dumps(resolved)


if __name__ == "__main__":
    unittest.main()
