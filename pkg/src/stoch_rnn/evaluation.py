"""
**Module:** `stoch_rnn.evaluation`

This module evaluates trained stochastic RNN classifiers.

- Classification of paths by the noiseless network (sign of <nu, omega> + b) or by the stochastic one (sampling
  y(T) ~ N(nu, A)).
- An Euler-Maruyama simulator of the network's SDE, and a Monte-Carlo check of the exact Gaussian law.
- The generalisation bound, its sample complexity and the VC bound for hyperplanes.
- Experiment harnesses: accuracy versus training size, bound check, robustness to mislabelled training data and
  the clean/corrupted table, all producing `ExperimentReport`s written as CSV and JSON.
"""

import json
import math
import pathlib
from os import PathLike
from typing import Sequence

import numpy as np

from stoch_rnn.cache import BaseFeatureCache, MemoryFeatureCache
from stoch_rnn.features import compute_mean, dataset_basis_means
from stoch_rnn.interface import (
    AccuracyResult,
    BasisMeans,
    BoundInputs,
    ExperimentRecord,
    ExperimentReport,
    LabeledDataset,
    LawCheckResult,
    MeanVector,
    ModelParams,
    Path,
    ReservoirSystem,
    TrainConfig,
    TrainResult,
)
from stoch_rnn.learn import empirical_risk, train_model
from stoch_rnn.paths import corrupt_labels, dataset_radius, interpolate, merge_datasets, subset
from stoch_rnn.pool import pool_map
from stoch_rnn.utils import DomainError, logger, psd_sqrt

DEFAULT_CONFIDENCE = 0.01
DEFAULT_GRID_STEPS = 8
MIN_GRID_SIZE = 10


# Classification


def _mean_value(nu: MeanVector | np.ndarray) -> np.ndarray:
    return nu.value if isinstance(nu, MeanVector) else np.asarray(nu, dtype=float)


def classify_noiseless(nu: MeanVector | np.ndarray, params: ModelParams) -> int:
    """sign(<nu, omega> + b), with sign(0) = +1."""
    return 1 if float(_mean_value(nu) @ params.omega) + params.b >= 0 else -1


def classify_stochastic(
    nu: MeanVector | np.ndarray,
    params: ModelParams,
    A: np.ndarray,
    rng: np.random.Generator,
    A_sqrt: np.ndarray | None = None,
) -> int:
    """Sample y = nu + A^{1/2} z with z standard normal and return sign(<y, omega> + b).

    Pass `A_sqrt` (e.g. `ReservoirSystem.A_sqrt`) to avoid recomputing the square root.
    """
    root = psd_sqrt(np.asarray(A, dtype=float)) if A_sqrt is None else A_sqrt
    y = _mean_value(nu) + root @ rng.standard_normal(root.shape[0])
    return 1 if float(y @ params.omega) + params.b >= 0 else -1


def dataset_means(
    dataset: LabeledDataset,
    params: ModelParams,
    system: ReservoirSystem,
    basis: Sequence[BasisMeans] | None = None,
    cache: BaseFeatureCache | None = None,
) -> np.ndarray:
    """Means of every path of `dataset` under the input matrix `params.u`, shape (m, n)."""
    if basis is None:
        basis = dataset_basis_means(dataset, system, cache=cache)
    if not basis:
        return np.zeros((0, system.n))
    return np.stack([item.combine(params.u).value for item in basis])


def _as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise DomainError("Stochastic evaluation needs an explicit random generator or seed.")
    return np.random.default_rng(rng)


def accuracy(
    dataset: LabeledDataset,
    params: ModelParams,
    system: ReservoirSystem,
    mode: str = "noiseless",
    trials: int = 1,
    rng: np.random.Generator | int | None = None,
    means: np.ndarray | None = None,
    cache: BaseFeatureCache | None = None,
) -> AccuracyResult:
    """
    Fraction of correctly classified paths.

    Args:
        dataset: The paths and labels to classify.
        params: The trained classifier.
        system: The reservoir.
        mode: `noiseless` classifies the means; `stochastic` samples y(T) ~ N(nu, A) once per path and trial.
        trials: Number of stochastic trials.
        rng: Random generator (or seed) of the stochastic trials.
        means: Precomputed means of `dataset` under `params.u`, shape (m, n).
        cache: Feature cache used when computing means.

    Returns:
        Per-trial accuracies with their min / max / avg (a single entry in noiseless mode).
    """
    if dataset.m == 0:
        raise DomainError("Cannot compute the accuracy on an empty dataset.")
    nu = dataset_means(dataset, params, system, cache=cache) if means is None else np.asarray(means)
    labels = np.asarray(dataset.labels)
    if mode == "noiseless":
        predicted = np.where(nu @ params.omega + params.b >= 0, 1, -1)
        return AccuracyResult(mode="noiseless", per_trial=[float(np.mean(predicted == labels))])
    if mode != "stochastic":
        raise DomainError(f"Unknown accuracy mode `{mode}`.")
    if trials < 1:
        raise DomainError(f"`trials` must be at least 1, got {trials}.")
    generator = _as_rng(rng)
    root = system.A_sqrt
    per_trial = []
    for _ in range(trials):
        y = nu + generator.standard_normal(nu.shape) @ root.T
        predicted = np.where(y @ params.omega + params.b >= 0, 1, -1)
        per_trial.append(float(np.mean(predicted == labels)))
    return AccuracyResult(mode="stochastic", per_trial=per_trial)


# SDE oracle


def simulate_sde(
    path: Path,
    u: np.ndarray,
    system: ReservoirSystem,
    dt: float,
    rng: np.random.Generator | int,
    num_paths: int = 1,
) -> np.ndarray:
    """
    Euler-Maruyama simulation of dy = (W0 y + u x(t)) dt + Sigma dB from y(0) = 0 to the horizon.

    The horizon is split into ceil(T / dt) equal steps; the input is taken at the left end of every step and the
    Brownian increments are sqrt(step) N(0, I_d).

    Returns:
        The terminal state, shape (n,), or shape (num_paths, n) when `num_paths > 1`.
    """
    if dt <= 0:
        raise DomainError(f"`dt` must be positive, got {dt}.")
    generator = _as_rng(rng)
    num_steps = max(1, math.ceil(path.T / dt - 1e-12))
    h = path.T / num_steps
    drive = interpolate(path, np.arange(num_steps) * h) @ np.asarray(u, dtype=float).T
    W0, Sigma = system.W0, system.Sigma
    y = np.zeros((num_paths, system.n))
    sqrt_h = math.sqrt(h)
    for k in range(num_steps):
        noise = generator.standard_normal((num_paths, system.d)) @ Sigma.T
        y = y + (y @ W0.T + drive[k]) * h + sqrt_h * noise
    return y[0] if num_paths == 1 else y


def sde_law_check(
    path: Path,
    u: np.ndarray,
    system: ReservoirSystem,
    dt: float = 1e-3,
    num_paths: int = 10_000,
    rng: np.random.Generator | int = 0,
) -> LawCheckResult:
    """Compare Euler-Maruyama terminal states with the exact law N(nu, A).

    The mean passes when every coordinate is within 4 sqrt(A_ii / num_paths) + 5 dt of nu; the covariance passes when
    its Frobenius error is below 10% of ||A||_F.
    """
    samples = simulate_sde(path, u, system, dt, rng, num_paths=max(2, num_paths))
    nu = compute_mean(path, u, system, method="hold").value
    sample_mean = samples.mean(axis=0)
    sample_covariance = np.cov(samples, rowvar=False).reshape(system.n, system.n)
    mean_error = np.abs(sample_mean - nu)
    mean_tolerance = 4.0 * np.sqrt(np.diag(system.A) / samples.shape[0]) + 5.0 * dt
    A_norm = float(np.linalg.norm(system.A))
    covariance_error = float(np.linalg.norm(sample_covariance - system.A)) / A_norm if A_norm > 0 else 0.0
    return LawCheckResult(
        num_paths=samples.shape[0],
        dt=dt,
        nu=nu,
        A=system.A,
        sample_mean=sample_mean,
        sample_covariance=sample_covariance,
        mean_error=mean_error,
        mean_tolerance=mean_tolerance,
        covariance_relative_error=covariance_error,
        mean_ok=bool(np.all(mean_error <= mean_tolerance)),
        covariance_ok=covariance_error <= 0.1,
    )


# Bounds


def pac_bound(bi: BoundInputs) -> float:
    """Uniform bound on |R(H) - R_hat(H)| holding with probability 1 - delta:

        4 / sqrt(2 pi m lambda_min) (Theta + Lambda R sqrt(exp_norm_int)) + (2 + 5 sqrt(log(2 / delta) / 2)) / sqrt(m)
    """
    complexity = 4.0 / math.sqrt(2.0 * math.pi * bi.m * bi.lambda_min) * (
        bi.Theta + bi.Lambda * bi.R * math.sqrt(bi.exp_norm_int)
    )
    confidence = (2.0 + 5.0 * math.sqrt(math.log(2.0 / bi.delta) / 2.0)) / math.sqrt(bi.m)
    return complexity + confidence


def sample_complexity(
    epsilon: float,
    delta: float,
    Theta: float,
    Lambda: float,
    R: float,
    lambda_min: float,
    exp_norm_int: float,
) -> int:
    """Smallest integer m with m >= (4 / eps^2) (4 (Theta + Lambda R sqrt(I)) / sqrt(2 pi lambda_min) + 2 + 5 sqrt(log(2 / delta)))^2.

    At that size `pac_bound` is at most epsilon / 2.
    """
    if not (0.0 < epsilon < 1.0 and 0.0 < delta < 1.0):
        raise DomainError(f"`epsilon` and `delta` must lie in (0, 1), got {epsilon} and {delta}.")
    if lambda_min <= 0:
        raise DomainError(f"`lambda_min` must be positive, got {lambda_min}.")
    constant = (
        4.0 * (Theta + Lambda * R * math.sqrt(exp_norm_int)) / math.sqrt(2.0 * math.pi * lambda_min)
        + 2.0
        + 5.0 * math.sqrt(math.log(2.0 / delta))
    )
    return math.ceil(4.0 / epsilon**2 * constant**2)


def vc_bound(risk_hat: float, n: int, m: int, delta: float) -> float:
    """R_hat + sqrt(2 (n + 1) log(e m / (n + 1)) / m) + sqrt(log(1 / delta) / (2 m)) for hyperplanes in R^n."""
    if m <= n + 1:
        raise DomainError(f"The VC bound needs m > n + 1, got m = {m} and n = {n}.")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"`delta` must lie in (0, 1), got {delta}.")
    d = n + 1
    return risk_hat + math.sqrt(2.0 * d * math.log(math.e * m / d) / m) + math.sqrt(math.log(1.0 / delta) / (2.0 * m))


# Experiments


def default_grid(m: int, steps: int = DEFAULT_GRID_STEPS, smallest: int = MIN_GRID_SIZE) -> list[int]:
    """Training sizes from `smallest` to `m`, evenly spaced, without duplicates."""
    if m < 2:
        raise DomainError(f"Need at least two training examples, got {m}.")
    smallest = min(smallest, m)
    return sorted({int(round(size)) for size in np.linspace(smallest, m, steps)})


def reservoir_summary(system: ReservoirSystem) -> dict:
    return {
        "n": system.n,
        "r": system.r,
        "d": system.d,
        "T": system.T,
        "delta": system.delta,
        "connectivity_seed": system.connectivity_seed,
        "noise_seed": system.noise_seed,
        "covariance_method": system.covariance_method,
        "lambda_min": system.lambda_min,
        "exp_norm_int": system.exp_norm_int,
        "fingerprint": system.fingerprint,
    }


class _Evaluator:
    """Trains on subsets of a training set and evaluates on a fixed test set, sharing one feature cache."""

    def __init__(
        self,
        train: LabeledDataset,
        test: LabeledDataset,
        system: ReservoirSystem,
        cfg: TrainConfig,
        cache: BaseFeatureCache | None,
        verbose: bool,
    ):
        if test.m == 0:
            raise DomainError("The test set is empty.")
        self.train, self.test, self.system, self.cfg = train, test, system, cfg
        self.cache = cache if cache is not None else MemoryFeatureCache()
        self.verbose = verbose
        self.train_basis = dataset_basis_means(train, system, cache=self.cache, num_workers=cfg.num_workers)
        self.test_basis = dataset_basis_means(test, system, cache=self.cache, num_workers=cfg.num_workers)

    def fit(self, dataset: LabeledDataset, cfg: TrainConfig | None = None) -> TrainResult:
        return train_model(dataset, self.system, cfg or self.cfg, cache=self.cache, verbose=self.verbose)

    def risks(self, params: ModelParams, size: int, labels: np.ndarray) -> tuple[float, float]:
        train_means = np.stack([item.combine(params.u).value for item in self.train_basis[:size]])
        test_means = self._test_means(params)
        return (
            empirical_risk(train_means, labels, params, self.system.A),
            empirical_risk(test_means, self.test.labels, params, self.system.A),
        )

    def _test_means(self, params: ModelParams) -> np.ndarray:
        return np.stack([item.combine(params.u).value for item in self.test_basis])

    def test_accuracies(self, params: ModelParams, trials: int, seed: int) -> tuple[AccuracyResult, AccuracyResult]:
        means = self._test_means(params)
        noiseless = accuracy(self.test, params, self.system, mode="noiseless", means=means)
        stochastic = accuracy(self.test, params, self.system, mode="stochastic", trials=trials, rng=seed, means=means)
        return noiseless, stochastic


def _log_progress(verbose: bool, message: str, *args) -> None:
    if verbose:
        logger.info(message, *args)
    else:
        logger.debug(message, *args)


def accuracy_experiment(
    train: LabeledDataset,
    test: LabeledDataset,
    system: ReservoirSystem,
    cfg: TrainConfig,
    grid: Sequence[int] | None = None,
    trials: int = 5,
    seed: int = 0,
    cache: BaseFeatureCache | None = None,
    config: dict | None = None,
    verbose: bool = False,
) -> ExperimentReport:
    """Train on the first m training examples for every m in `grid` and record noiseless and stochastic test accuracy."""
    grid = list(grid) if grid is not None else default_grid(train.m)
    evaluator = _Evaluator(train, test, system, cfg, cache, verbose)

    def run(size: int) -> ExperimentRecord:
        part = subset(train, range(size))
        result = evaluator.fit(part)
        train_risk, test_risk = evaluator.risks(result.params, size, part.labels)
        noiseless, stochastic = evaluator.test_accuracies(result.params, trials, seed)
        _log_progress(verbose, "m=%d: noiseless %.4f, stochastic avg %.4f", size, noiseless.avg, stochastic.avg)
        return ExperimentRecord(
            experiment="accuracy",
            training_size=size,
            noise_scale=system.delta,
            noiseless_accuracy=noiseless.avg,
            stochastic_min=stochastic.min,
            stochastic_max=stochastic.max,
            stochastic_avg=stochastic.avg,
            train_risk=train_risk,
            test_risk=test_risk,
            gap=abs(test_risk - train_risk),
            Theta=abs(result.params.b),
        )

    records = pool_map(run, _check_grid(grid, train.m), num_workers=cfg.num_workers)
    return ExperimentReport(
        name="accuracy", records=records, config=config or {}, reservoir=reservoir_summary(system)
    )


def _check_grid(grid: Sequence[int], m: int) -> list[int]:
    for size in grid:
        if not 1 <= size <= m:
            raise DomainError(f"Training size {size} outside [1, {m}].")
    return list(grid)


def bound_check_experiment(
    train: LabeledDataset,
    test: LabeledDataset,
    system: ReservoirSystem,
    cfg: TrainConfig,
    grid: Sequence[int] | None = None,
    delta: float = DEFAULT_CONFIDENCE,
    runs: int = 1,
    R: float | None = None,
    cache: BaseFeatureCache | None = None,
    config: dict | None = None,
    verbose: bool = False,
) -> ExperimentReport:
    """
    Compare the observed gap |R_test - R_train| with the generalisation bound along a grid of training sizes.

    The test risk stands in for the true risk. The bound uses R = largest L2 norm over train and test paths (unless
    given), Lambda = `cfg.Lambda`, Theta = `cfg.Theta` if set and otherwise the largest |b| over all trainings of the
    experiment, and confidence `delta`.

    Args:
        runs: Number of repetitions; run k trains with a seed derived from `cfg.seed` and k.
    """
    grid = _check_grid(list(grid) if grid is not None else default_grid(train.m), train.m)
    evaluator = _Evaluator(train, test, system, cfg, cache, verbose)
    if R is None:
        R = dataset_radius(merge_datasets(train, test), norm="L2")
    run_seeds = [cfg.seed] + [
        int(sequence.generate_state(1)[0]) for sequence in np.random.SeedSequence(cfg.seed).spawn(runs)[1:]
    ]

    rows = []
    for run_index, run_seed in enumerate(run_seeds[:runs]):
        run_cfg = cfg.model_copy(update={"seed": run_seed})
        for size in grid:
            part = subset(train, range(size))
            result = evaluator.fit(part, run_cfg)
            train_risk, test_risk = evaluator.risks(result.params, size, part.labels)
            noiseless, _ = evaluator.test_accuracies(result.params, 1, run_seed)
            rows.append((run_index, size, result.params, train_risk, test_risk, noiseless.avg))
            _log_progress(
                verbose, "run %d, m=%d: train risk %.4f, test risk %.4f", run_index, size, train_risk, test_risk
            )

    Theta = cfg.Theta if cfg.Theta is not None else max(abs(params.b) for _, _, params, *_ in rows)
    records = []
    for run_index, size, params, train_risk, test_risk, noiseless in rows:
        bound = pac_bound(
            BoundInputs(
                Theta=Theta,
                Lambda=cfg.Lambda,
                R=R,
                m=size,
                delta=delta,
                lambda_min=system.lambda_min,
                exp_norm_int=system.exp_norm_int,
            )
        )
        gap = abs(test_risk - train_risk)
        records.append(
            ExperimentRecord(
                experiment="bound_check",
                training_size=size,
                noise_scale=system.delta,
                run=run_index,
                noiseless_accuracy=noiseless,
                train_risk=train_risk,
                test_risk=test_risk,
                gap=gap,
                pac_bound=bound,
                bound_holds=gap <= bound,
                Theta=Theta,
            )
        )
    violations = sum(not record.bound_holds for record in records)
    if violations:
        logger.warning("Generalisation bound violated at %d of %d grid points.", violations, len(records))
    return ExperimentReport(
        name="bound_check", records=records, config=config or {}, reservoir=reservoir_summary(system)
    )


def robustness_experiment(
    train: LabeledDataset,
    test: LabeledDataset,
    system: ReservoirSystem,
    cfg: TrainConfig,
    fractions: Sequence[float] = (0.0, 0.05, 0.1, 0.15),
    trials: int = 10,
    seed: int = 0,
    corruption_seed: int | None = None,
    cache: BaseFeatureCache | None = None,
    config: dict | None = None,
    experiment: str = "robustness",
    verbose: bool = False,
) -> ExperimentReport:
    """
    Retrain on training sets with a fraction of flipped labels and compare test accuracies with clean training.

    Every fraction is evaluated with the same training seed and the same stochastic trial seed, so fraction 0
    reproduces clean training exactly. The robustness ratio is the average stochastic accuracy divided by that of
    clean training.

    Args:
        fractions: Mislabelling fractions in [0, 1).
        trials: Stochastic trials per fraction.
        seed: Seed of the stochastic trials.
        corruption_seed: Seed choosing the flipped labels (default: `seed`).
    """
    for fraction in fractions:
        if not 0.0 <= fraction < 1.0:
            raise DomainError(f"Mislabelling fraction {fraction} outside [0, 1).")
    evaluator = _Evaluator(train, test, system, cfg, cache, verbose)
    corruption_seed = seed if corruption_seed is None else corruption_seed

    def evaluate(fraction: float) -> tuple[AccuracyResult, AccuracyResult, TrainResult]:
        corrupted = corrupt_labels(train, fraction, corruption_seed) if fraction > 0 else train
        result = evaluator.fit(corrupted)
        noiseless, stochastic = evaluator.test_accuracies(result.params, trials, seed)
        _log_progress(verbose, "mislabelled %.2f: stochastic avg %.4f", fraction, stochastic.avg)
        return noiseless, stochastic, result

    clean_noiseless, clean_stochastic, clean_result = evaluate(0.0)
    records = []
    for fraction in fractions:
        if fraction == 0.0:
            noiseless, stochastic, result = clean_noiseless, clean_stochastic, clean_result
        else:
            noiseless, stochastic, result = evaluate(fraction)
        ratio = stochastic.avg / clean_stochastic.avg if clean_stochastic.avg > 0 else math.nan
        records.append(
            ExperimentRecord(
                experiment=experiment,
                training_size=train.m,
                noise_scale=system.delta,
                mislabel_fraction=fraction,
                noiseless_accuracy=noiseless.avg,
                stochastic_min=stochastic.min,
                stochastic_max=stochastic.max,
                stochastic_avg=stochastic.avg,
                train_risk=result.final_risk,
                robustness_ratio=ratio,
                Theta=abs(result.params.b),
            )
        )
    return ExperimentReport(
        name=experiment, records=records, config=config or {}, reservoir=reservoir_summary(system)
    )


def table_experiment(
    train: LabeledDataset,
    test: LabeledDataset,
    system: ReservoirSystem,
    cfg: TrainConfig,
    mislabel_fraction: float,
    trials: int = 10,
    seed: int = 0,
    corruption_seed: int | None = None,
    cache: BaseFeatureCache | None = None,
    config: dict | None = None,
    verbose: bool = False,
) -> ExperimentReport:
    """One table row per noise scale: clean accuracies (noiseless, stochastic min / max / avg over `trials`) and the
    robustness ratio after training with `mislabel_fraction` of flipped labels. Produces a clean and a corrupted record.
    """
    return robustness_experiment(
        train,
        test,
        system,
        cfg,
        fractions=(0.0, mislabel_fraction),
        trials=trials,
        seed=seed,
        corruption_seed=corruption_seed,
        cache=cache,
        config=config,
        experiment="table",
        verbose=verbose,
    )


def merge_reports(name: str, reports: Sequence[ExperimentReport], config: dict | None = None) -> ExperimentReport:
    """Concatenate the records of several reports (e.g. one per noise scale)."""
    return ExperimentReport(
        name=name,
        records=[record for report in reports for record in report.records],
        config=config if config is not None else (reports[0].config if reports else {}),
        reservoir={"reservoirs": [report.reservoir for report in reports]},
    )


def write_report(
    report: ExperimentReport, out_dir: str | PathLike, stem: str | None = None
) -> tuple[pathlib.Path, pathlib.Path]:
    """Write `<stem>.csv` (one row per record, leading `# config:` line) and `<stem>.json` (full report + summary)."""
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or report.name
    csv_file, json_file = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    with csv_file.open("w", newline="") as f:
        f.write(f"# config: {json.dumps(report.config, sort_keys=True)}\n")
        report.to_frame().to_csv(f, index=False, float_format="%.10g")
    summary: dict = {"num_records": len(report.records)}
    bound_flags = [record.bound_holds for record in report.records if record.bound_holds is not None]
    if bound_flags:
        summary["bound_holds_everywhere"] = all(bound_flags)
    averages = [record.stochastic_avg for record in report.records if record.stochastic_avg is not None]
    if averages:
        summary["mean_stochastic_accuracy"] = float(np.mean(averages))
    payload = json.loads(report.model_dump_json())
    payload["summary"] = summary
    json_file.write_text(json.dumps(payload, indent=2))
    logger.debug("Wrote %s and %s", csv_file, json_file)
    return csv_file, json_file
