"""
**Module:** `stoch_rnn.cli`

The `stoch-rnn` command line. Every subcommand reads an `ExperimentConfig` from `--config`, applies the command-line
overrides and writes its outputs (CSV with a leading `# config:` line, JSON with a `config` field) to the output
directory:

- `generate`: the dataset and its train / test split as CSV.
- `train`: the reservoir, the trained model and its risk trace.
- `evaluate`: test accuracy versus training size, or the accuracy of a saved model (`--model`).
- `bound-check`: observed generalisation gap versus the bound along the training-size grid.
- `robustness`: test accuracy after training with mislabelled examples.
- `table`: clean and corrupted accuracy statistics, one pair of rows per noise scale.
- `simulate-sde`: Euler-Maruyama terminal states of one test path and their comparison with the exact law.

Exit codes: 0 on success, 2 for unparsable configurations or data, 3 for I/O errors, 4 when the covariance is not in
the required regime, 5 for numerical failures and 1 for any other error.
"""

import argparse
import json
import pathlib
import sys
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from stoch_rnn.cache import BaseFeatureCache, DiskFeatureCache, MemoryFeatureCache
from stoch_rnn.config import ExperimentConfig, load_config
from stoch_rnn.evaluation import (
    accuracy,
    accuracy_experiment,
    bound_check_experiment,
    merge_reports,
    reservoir_summary,
    robustness_experiment,
    sde_law_check,
    simulate_sde,
    table_experiment,
    write_report,
)
from stoch_rnn.interface import ExperimentReport, LabeledDataset, ReservoirSystem
from stoch_rnn.learn import load_model, project_spectral_ball, save_model, train_model
from stoch_rnn.paths import (
    download_japanese_vowels,
    gen_trig_dataset,
    load_dataset_csv,
    load_japanese_vowels,
    merge_datasets,
    save_dataset_csv,
    train_test_split,
)
from stoch_rnn.reservoir import build_reservoir, save_reservoir
from stoch_rnn.utils import DataParseError, NumericalError, RegimeError, logger

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_PARSE = 2
EXIT_IO = 3
EXIT_REGIME = 4
EXIT_NUMERICAL = 5

console = Console()


# Shared steps


def load_data(config: ExperimentConfig, verbose: bool = False) -> LabeledDataset:
    """Build or read the full dataset described by `config.dataset`."""
    section = config.dataset
    if section.kind == "synthetic":
        return gen_trig_dataset(
            config.dataset_seed,
            samples_per_class=section.samples_per_class,
            num_samples_per_path=section.num_samples_per_path,
        )
    if section.kind == "csv":
        return load_dataset_csv(section.file)
    if section.train_file is not None and section.test_file is not None:
        train_file, test_file = section.train_file, section.test_file
    else:
        train_file, test_file = download_japanese_vowels(verbose=verbose)
    train, test = load_japanese_vowels(train_file, test_file, speakers=section.speakers)
    return merge_datasets(train, test, name="japanese_vowels")


def split_data(config: ExperimentConfig, dataset: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    return train_test_split(dataset, test_fraction=config.experiment.test_fraction, seed=config.split_seed)


def make_reservoir(
    config: ExperimentConfig, dataset: LabeledDataset, delta: float | None = None, verbose: bool = False
) -> ReservoirSystem:
    section = config.reservoir
    return build_reservoir(
        n=section.n,
        r=dataset.r,
        T=section.T if section.T is not None else dataset.T,
        delta=section.delta if delta is None else delta,
        connectivity_seed=config.connectivity_seed,
        noise_seed=config.noise_seed,
        covariance_method=section.covariance_method,
        verbose=verbose,
    )


def make_cache(config: ExperimentConfig) -> BaseFeatureCache:
    if config.experiment.feature_cache == "disk":
        return DiskFeatureCache()
    return MemoryFeatureCache()


def output_dir(config: ExperimentConfig) -> pathlib.Path:
    out = pathlib.Path(config.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(file: pathlib.Path, payload: dict) -> None:
    file.write_text(json.dumps(payload, indent=2))


def _print_report(report: ExperimentReport, columns: Sequence[str]) -> None:
    table = Table(title=report.name)
    for column in columns:
        table.add_column(column, justify="right")
    for record in report.records:
        row = []
        for column in columns:
            value = getattr(record, column)
            if value is None:
                row.append("-")
            elif isinstance(value, float):
                row.append(f"{value:.4f}")
            else:
                row.append(str(value))
        table.add_row(*row)
    console.print(table)


# Subcommands


def cmd_generate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset = load_data(config, verbose=args.verbose)
    train, test = split_data(config, dataset)
    out = output_dir(config)
    resolved = config.resolved()
    for name, part in (("dataset", dataset), ("train", train), ("test", test)):
        save_dataset_csv(part, out / f"{name}.csv", config=resolved)
    console.print(
        f"Wrote {dataset.m} paths ({train.m} train / {test.m} test, r = {dataset.r}, T = {dataset.T:.4g}) to {out}"
    )
    return EXIT_OK


def cmd_train(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset = load_data(config, verbose=args.verbose)
    train, _ = split_data(config, dataset)
    system = make_reservoir(config, dataset, verbose=args.verbose)
    result = train_model(train, system, config.train_config(), cache=make_cache(config), verbose=args.verbose)
    out = output_dir(config)
    resolved = config.resolved()
    save_reservoir(system, out / "reservoir.json", config=resolved)
    save_model(result, out / "model.json", config=resolved)
    with (out / "trace.csv").open("w", newline="") as f:
        f.write(f"# config: {json.dumps(resolved, sort_keys=True)}\n")
        pd.DataFrame({"step": np.arange(result.risk_trace.size), "risk": result.risk_trace}).to_csv(
            f, index=False, float_format="%.17g"
        )
    objective = "direct" if result.truncation_order is None else f"truncated (N = {result.truncation_order})"
    console.print(
        f"Trained on {train.m} paths, {objective} objective: final risk {result.final_risk:.6f} "
        f"(restart {result.best_restart} of {result.restart_risks.size}), ||u|| = {result.params.u_norm:.4f}, "
        f"b = {result.params.b:.4f}"
    )
    return EXIT_OK


def cmd_evaluate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset = load_data(config, verbose=args.verbose)
    train, test = split_data(config, dataset)
    system = make_reservoir(config, dataset, verbose=args.verbose)
    out = output_dir(config)
    if args.model is not None:
        result = load_model(args.model)
        if result.reservoir_fingerprint is not None and result.reservoir_fingerprint != system.fingerprint:
            logger.warning("Model %s was trained on a different reservoir.", args.model)
        cache = make_cache(config)
        noiseless = accuracy(test, result.params, system, mode="noiseless", cache=cache)
        stochastic = accuracy(
            test,
            result.params,
            system,
            mode="stochastic",
            trials=config.experiment.trials,
            rng=config.seed,
            cache=cache,
        )
        payload = {
            "model": str(args.model),
            "noiseless_accuracy": noiseless.avg,
            "stochastic_accuracies": stochastic.per_trial.tolist(),
            "stochastic_min": stochastic.min,
            "stochastic_max": stochastic.max,
            "stochastic_avg": stochastic.avg,
            "config": config.resolved(),
            "reservoir": reservoir_summary(system),
        }
        _write_json(out / "evaluate.json", payload)
        console.print(
            f"Test accuracy: noiseless {noiseless.avg:.4f}, stochastic min {stochastic.min:.4f} / "
            f"max {stochastic.max:.4f} / avg {stochastic.avg:.4f}"
        )
        return EXIT_OK
    report = accuracy_experiment(
        train,
        test,
        system,
        config.train_config(),
        grid=config.experiment.grid,
        trials=config.experiment.trials,
        seed=config.seed,
        cache=make_cache(config),
        config=config.resolved(),
        verbose=args.verbose,
    )
    write_report(report, out)
    _print_report(report, ["training_size", "noiseless_accuracy", "stochastic_min", "stochastic_max", "stochastic_avg"])
    return EXIT_OK


def cmd_bound_check(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset = load_data(config, verbose=args.verbose)
    train, test = split_data(config, dataset)
    system = make_reservoir(config, dataset, verbose=args.verbose)
    report = bound_check_experiment(
        train,
        test,
        system,
        config.train_config(),
        grid=config.experiment.grid,
        delta=config.experiment.confidence,
        runs=config.experiment.runs,
        cache=make_cache(config),
        config=config.resolved(),
        verbose=args.verbose,
    )
    write_report(report, output_dir(config))
    _print_report(report, ["run", "training_size", "train_risk", "test_risk", "gap", "pac_bound", "bound_holds"])
    return EXIT_OK


def cmd_robustness(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset = load_data(config, verbose=args.verbose)
    train, test = split_data(config, dataset)
    system = make_reservoir(config, dataset, verbose=args.verbose)
    report = robustness_experiment(
        train,
        test,
        system,
        config.train_config(),
        fractions=config.experiment.fractions,
        trials=config.experiment.trials,
        seed=config.seed,
        cache=make_cache(config),
        config=config.resolved(),
        verbose=args.verbose,
    )
    write_report(report, output_dir(config))
    _print_report(report, ["mislabel_fraction", "noiseless_accuracy", "stochastic_avg", "robustness_ratio"])
    return EXIT_OK


def cmd_table(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset = load_data(config, verbose=args.verbose)
    train, test = split_data(config, dataset)
    cache = make_cache(config)
    resolved = config.resolved()
    reports = []
    for delta in config.experiment.noise_scales or [config.reservoir.delta]:
        system = make_reservoir(config, dataset, delta=delta, verbose=args.verbose)
        reports.append(
            table_experiment(
                train,
                test,
                system,
                config.train_config(),
                mislabel_fraction=config.experiment.mislabel_fraction,
                trials=config.experiment.table_trials,
                seed=config.seed,
                cache=cache,
                config=resolved,
                verbose=args.verbose,
            )
        )
    report = merge_reports("table", reports, config=resolved)
    write_report(report, output_dir(config))
    _print_report(
        report,
        [
            "noise_scale",
            "mislabel_fraction",
            "noiseless_accuracy",
            "stochastic_min",
            "stochastic_max",
            "stochastic_avg",
            "robustness_ratio",
        ],
    )
    return EXIT_OK


def cmd_simulate_sde(config: ExperimentConfig, args: argparse.Namespace) -> int:
    dataset = load_data(config, verbose=args.verbose)
    _, test = split_data(config, dataset)
    system = make_reservoir(config, dataset, verbose=args.verbose)
    index = config.experiment.sde_path_index
    if index >= test.m:
        raise IndexError(f"`experiment.sde_path_index` is {index} but the test set has {test.m} paths.")
    if args.model is not None:
        u = load_model(args.model).params.u
    else:
        rng = np.random.default_rng(config.seed)
        u = project_spectral_ball(rng.standard_normal((system.n, system.r)), config.train_config().Lambda)
    path = test.paths[index]
    section = config.experiment
    check = sde_law_check(path, u, system, dt=section.sde_dt, num_paths=section.sde_paths, rng=config.seed)
    samples = simulate_sde(path, u, system, section.sde_dt, config.seed, num_paths=section.sde_paths)
    out = output_dir(config)
    resolved = config.resolved()
    with (out / "sde_samples.csv").open("w", newline="") as f:
        f.write(f"# config: {json.dumps(resolved, sort_keys=True)}\n")
        pd.DataFrame(samples, columns=[f"y_{i + 1}" for i in range(system.n)]).to_csv(
            f, index=False, float_format="%.17g"
        )
    _write_json(
        out / "sde_law_check.json",
        {"law_check": json.loads(check.model_dump_json()), "config": resolved, "reservoir": reservoir_summary(system)},
    )
    console.print(
        f"Max mean error {check.mean_error.max():.3e} (mean check {'passed' if check.mean_ok else 'failed'}), "
        f"relative covariance error {check.covariance_relative_error:.3e} "
        f"(covariance check {'passed' if check.covariance_ok else 'failed'})"
    )
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable[[ExperimentConfig, argparse.Namespace], int], str]] = {
    "generate": (cmd_generate, "Write the dataset and its train / test split as CSV."),
    "train": (cmd_train, "Train a classifier and write the model, reservoir and risk trace."),
    "evaluate": (cmd_evaluate, "Test accuracy versus training size, or of a saved model."),
    "bound-check": (cmd_bound_check, "Compare the observed generalisation gap with the bound."),
    "robustness": (cmd_robustness, "Test accuracy after training on mislabelled data."),
    "table": (cmd_table, "Clean and corrupted accuracy statistics per noise scale."),
    "simulate-sde": (cmd_simulate_sde, "Simulate the network SDE and check its terminal law."),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stoch-rnn", description="Stochastic linear RNN path classification.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        sub.add_argument("--config", required=True, help="JSON experiment configuration.")
        sub.add_argument("--out", help="Output directory (overrides `experiment.output_dir`).")
        sub.add_argument("--seed", type=int, help="Overrides the top-level seed and `train.seed`.")
        sub.add_argument("--trials", type=int, help="Number of stochastic trials (overrides the configuration).")
        sub.add_argument(
            "--truncated", type=int, metavar="N", help="Train the objective truncated at partial-signature order N."
        )
        sub.add_argument("-v", "--verbose", action="store_true", help="Log progress.")
        if name in ("evaluate", "simulate-sde"):
            sub.add_argument("--model", help="Model file written by `train`.")
    return parser


def run(args: argparse.Namespace) -> int:
    config = load_config(args.config).apply_overrides(
        seed=args.seed, trials=args.trials, out=args.out, truncated=args.truncated
    )
    command, _ = COMMANDS[args.command]
    return command(config, args)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (DataParseError, ValidationError) as e:
        logger.error("Parse error: %s", e)
        return EXIT_PARSE
    except RegimeError as e:
        logger.error("Regime error: %s", e)
        return EXIT_REGIME
    except NumericalError as e:
        logger.error("Numerical error: %s", e)
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except Exception as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
