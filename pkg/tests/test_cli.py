import json
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from stoch_rnn.cli import EXIT_IO, EXIT_OK, EXIT_PARSE, EXIT_REGIME, build_parser, main

SMALL_CONFIG = {
    "seed": 5,
    "dataset": {"kind": "synthetic", "samples_per_class": 6, "num_samples_per_path": 32},
    "reservoir": {"n": 4, "delta": 1.0},
    "train": {"restarts": 1, "max_iters": 50},
    "experiment": {
        "grid": [4, 8],
        "trials": 2,
        "table_trials": 2,
        "fractions": [0.0, 0.25],
        "noise_scales": [0.5, 1.0],
        "sde_dt": 0.01,
        "sde_paths": 200,
    },
}


class TestCli(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.out = Path(self.temp_dir) / "out"

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def write_config(self, payload: dict | str) -> str:
        file = Path(self.temp_dir) / "config.json"
        file.write_text(payload if isinstance(payload, str) else json.dumps(payload))
        return str(file)

    def run_cli(self, *args: str, config: dict | str = SMALL_CONFIG) -> int:
        return main([args[0], "--config", self.write_config(config), "--out", str(self.out), *args[1:]])

    def test_parser(self):
        args = build_parser().parse_args(["train", "--config", "c.json", "--seed", "3", "--truncated", "4"])
        self.assertEqual((args.command, args.seed, args.truncated), ("train", 3, 4))
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["train"])

    def test_generate_is_reproducible(self):
        self.assertEqual(self.run_cli("generate"), EXIT_OK)
        first = {name: (self.out / name).read_bytes() for name in ("dataset.csv", "train.csv", "test.csv")}
        self.assertEqual(self.run_cli("generate"), EXIT_OK)
        for name, content in first.items():
            self.assertEqual((self.out / name).read_bytes(), content)
        self.assertTrue(first["dataset.csv"].startswith(b"# config: "))

    def test_train_outputs(self):
        self.assertEqual(self.run_cli("train"), EXIT_OK)
        trace = pd.read_csv(self.out / "trace.csv", comment="#")
        self.assertEqual(list(trace.columns), ["step", "risk"])
        self.assertTrue(np.all(np.diff(trace.risk.to_numpy()) <= 0.0))
        model = json.loads((self.out / "model.json").read_text())
        self.assertEqual(model["config"]["seed"], 5)
        self.assertIsNone(model["model"]["truncation_order"])
        self.assertTrue((self.out / "reservoir.json").is_file())

    def test_train_truncated(self):
        self.assertEqual(self.run_cli("train", "--truncated", "2", "--seed", "9"), EXIT_OK)
        model = json.loads((self.out / "model.json").read_text())
        self.assertEqual(model["model"]["truncation_order"], 2)
        self.assertEqual(model["config"]["train"]["seed"], 9)

    def test_evaluate_grid_and_model(self):
        self.assertEqual(self.run_cli("evaluate"), EXIT_OK)
        report = json.loads((self.out / "accuracy.json").read_text())
        self.assertEqual([record["training_size"] for record in report["records"]], [4, 8])
        self.assertEqual(report["summary"]["num_records"], 2)

        self.assertEqual(self.run_cli("train"), EXIT_OK)
        self.assertEqual(self.run_cli("evaluate", "--model", str(self.out / "model.json"), "--trials", "3"), EXIT_OK)
        evaluation = json.loads((self.out / "evaluate.json").read_text())
        self.assertEqual(len(evaluation["stochastic_accuracies"]), 3)
        self.assertLessEqual(evaluation["stochastic_min"], evaluation["stochastic_max"])

    def test_bound_check(self):
        self.assertEqual(self.run_cli("bound-check"), EXIT_OK)
        report = json.loads((self.out / "bound_check.json").read_text())
        self.assertEqual(len(report["records"]), 2)
        self.assertIn("bound_holds_everywhere", report["summary"])

    def test_robustness_and_table(self):
        self.assertEqual(self.run_cli("robustness"), EXIT_OK)
        robustness = pd.read_csv(self.out / "robustness.csv", comment="#")
        self.assertEqual(list(robustness.mislabel_fraction), [0.0, 0.25])
        self.assertEqual(robustness.robustness_ratio.iloc[0], 1.0)

        self.assertEqual(self.run_cli("table"), EXIT_OK)
        table = pd.read_csv(self.out / "table.csv", comment="#")
        self.assertEqual(list(table.noise_scale), [0.5, 0.5, 1.0, 1.0])

    def test_simulate_sde(self):
        self.assertEqual(self.run_cli("simulate-sde"), EXIT_OK)
        samples = pd.read_csv(self.out / "sde_samples.csv", comment="#")
        self.assertEqual(samples.shape, (200, 4))
        check = json.loads((self.out / "sde_law_check.json").read_text())
        self.assertEqual(check["law_check"]["num_paths"], 200)

    def test_missing_vowels_file(self):
        missing = str(Path(self.temp_dir) / "missing" / "ae.train")
        config = {**SMALL_CONFIG, "dataset": {"kind": "vowels", "train_file": missing, "test_file": missing}}
        with self.assertLogs("stoch_rnn", level="ERROR") as logs:
            self.assertEqual(self.run_cli("generate", config=config), EXIT_IO)
        self.assertIn(missing, "\n".join(logs.output))

    def test_missing_config(self):
        code = main(["train", "--config", str(Path(self.temp_dir) / "nothing.json")])
        self.assertEqual(code, EXIT_IO)

    def test_parse_errors(self):
        self.assertEqual(self.run_cli("train", config='{"seed": 1,'), EXIT_PARSE)
        self.assertEqual(self.run_cli("train", config={"dataset": {"kind": "synthetic"}}), EXIT_PARSE)
        self.assertEqual(self.run_cli("train", config={"seed": 1, "reservoir": {"n": 0}}), EXIT_PARSE)

    def test_noiseless_reservoir_is_rejected(self):
        config = {**SMALL_CONFIG, "reservoir": {"n": 4, "delta": 0.0}}
        self.assertEqual(self.run_cli("train", config=config), EXIT_REGIME)


if __name__ == "__main__":
    unittest.main()
