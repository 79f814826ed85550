"""
**Module:** `stoch_rnn.paths`

This module handles input paths: continuous evaluation of sampled signals, the path norms used by the generalisation
bounds, the synthetic trigonometric-polynomial dataset, the UCI Japanese Vowels loader, label corruption, splits and
the CSV dataset format.

Examples:
    ```python
    from stoch_rnn.paths import gen_trig_dataset, train_test_split, dataset_radius

    dataset = gen_trig_dataset(seed=0)
    train, test = train_test_split(dataset, test_fraction=0.3, seed=1)
    R = dataset_radius(dataset, norm="L2")
    ```
"""

import json
import math
import pathlib
from os import PathLike
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from stoch_rnn.interface import LabeledDataset, Path
from stoch_rnn.utils import (
    DEFAULT_CACHE_DIR,
    JAPANESE_VOWELS_FILES,
    JAPANESE_VOWELS_URL,
    DataParseError,
    DomainError,
    download_file,
    logger,
)

TRIG_DEGREE = 6
TRIG_DIM = 5
TRIG_POSITIVE_INTERVAL = (-0.2, 1.0)
TRIG_NEGATIVE_INTERVAL = (-1.0, 0.2)

VOWELS_NUM_COLUMNS = 12
VOWELS_TRAIN_BLOCKS = (30, 30, 30, 30, 30, 30, 30, 30, 30)
VOWELS_TEST_BLOCKS = (31, 35, 88, 44, 29, 24, 40, 50, 29)

MIN_NORM_GRID_POINTS = 1000


def eval_path(path: Path, t: float) -> np.ndarray:
    """Evaluate the piecewise-linear interpolant of `path` at time `t`.

    Raises:
        DomainError: If `t` lies outside [0, T].
    """
    if not 0.0 <= t <= path.T:
        raise DomainError(f"Time {t} lies outside [0, {path.T}].")
    return interpolate(path, np.array([t]))[0]


def interpolate(path: Path, times: np.ndarray) -> np.ndarray:
    """Vectorised piecewise-linear evaluation at `times` (assumed inside [0, T]). Returns shape (len(times), r)."""
    times = np.asarray(times, dtype=float)
    index = np.clip(np.searchsorted(path.times, times, side="right") - 1, 0, path.num_samples - 2)
    left, right = path.times[index], path.times[index + 1]
    weight = ((times - left) / (right - left))[:, None]
    return (1.0 - weight) * path.values[index] + weight * path.values[index + 1]


def path_l2_norm(path: Path) -> float:
    """L2 norm of the path on [0, T]: the square root of the integral of ||x(s)||_2^2.

    Each linear piece is integrated exactly (Simpson's rule is exact for the quadratic integrand).
    """
    left, right = path.values[:-1], path.values[1:]
    h = np.diff(path.times)
    squared = h / 3.0 * (np.sum(left * left, axis=1) + np.sum(left * right, axis=1) + np.sum(right * right, axis=1))
    return float(np.sqrt(max(0.0, float(np.sum(squared)))))


def path_l1_norm(path: Path) -> float:
    """L1 norm of the path on [0, T]: the integral of ||x(s)||_2.

    Composite trapezoid rule on the sample grid, every segment refined so that the grid holds at least 1000 points.
    """
    num_segments = path.num_samples - 1
    refine = max(1, math.ceil(MIN_NORM_GRID_POINTS / num_segments))
    fractions = np.linspace(0.0, 1.0, refine + 1)[:-1]
    h = np.diff(path.times)
    times = (path.times[:-1, None] + h[:, None] * fractions[None, :]).reshape(-1)
    increments = np.diff(path.values, axis=0)
    values = (path.values[:-1, None, :] + fractions[None, :, None] * increments[:, None, :]).reshape(-1, path.r)
    times = np.append(times, path.T)
    values = np.vstack([values, path.values[-1:]])
    return float(trapezoid(np.linalg.norm(values, axis=1), times))


def dataset_radius(dataset: LabeledDataset, norm: Literal["L1", "L2"] = "L2") -> float:
    """Largest L1 or L2 norm over the paths of `dataset`."""
    if not dataset.paths:
        raise DomainError("Cannot compute the radius of an empty dataset.")
    if norm == "L2":
        norm_fn = path_l2_norm
    elif norm == "L1":
        norm_fn = path_l1_norm
    else:
        raise DomainError(f"Unknown norm `{norm}`, expected `L1` or `L2`.")
    return max(norm_fn(path) for path in dataset.paths)


# Synthetic trigonometric dataset


def draw_trig_coefficients(
    rng: np.random.Generator, label: int, degree: int = TRIG_DEGREE, r: int = TRIG_DIM
) -> tuple[np.ndarray, np.ndarray]:
    """Draw the cosine coefficients `a` (shape (degree + 1, r)) and sine coefficients `b` (shape (degree, r)).

    For label +1, `a` is uniform on [-0.2, 1] and `b` uniform on [-1, 0.2]; label -1 swaps the two intervals.
    """
    a_interval, b_interval = (TRIG_POSITIVE_INTERVAL, TRIG_NEGATIVE_INTERVAL)
    if label != 1:
        a_interval, b_interval = b_interval, a_interval
    a = rng.uniform(*a_interval, size=(degree + 1, r))
    b = rng.uniform(*b_interval, size=(degree, r))
    return a, b


def trig_polynomial(a: np.ndarray, b: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Evaluate sum_k a_k cos(k t) + sum_k b_k sin(k t) at `times`. Returns shape (len(times), r)."""
    times = np.asarray(times, dtype=float)
    cos_k = np.cos(np.outer(times, np.arange(a.shape[0])))
    sin_k = np.sin(np.outer(times, np.arange(1, b.shape[0] + 1)))
    return cos_k @ a + sin_k @ b


def gen_trig_dataset(
    seed: int,
    samples_per_class: int = 70,
    num_samples_per_path: int = 256,
    degree: int = TRIG_DEGREE,
    r: int = TRIG_DIM,
) -> LabeledDataset:
    """Generate the synthetic dataset of random trigonometric polynomials on [0, 2 pi].

    Positive examples come first, then negative ones. The result only depends on the arguments.
    """
    if samples_per_class < 1:
        raise DomainError(f"`samples_per_class` must be at least 1, got {samples_per_class}.")
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, 2 * np.pi, num_samples_per_path)
    paths, labels = [], []
    for label in (1, -1):
        for _ in range(samples_per_class):
            a, b = draw_trig_coefficients(rng, label, degree=degree, r=r)
            paths.append(Path(times=times, values=trig_polynomial(a, b, times)))
            labels.append(label)
    return LabeledDataset(paths=paths, labels=labels, name=f"trig(seed={seed})")


# Japanese vowels


def _read_ae_blocks(file: str | PathLike) -> list[np.ndarray]:
    """Split a UCI `ae.*` file into utterances, one (L, 12) array per blank-line-separated block."""
    file = pathlib.Path(file)
    if not file.is_file():
        raise FileNotFoundError(f"Japanese vowels file `{file}` does not exist.")
    blocks: list[np.ndarray] = []
    current: list[list[float]] = []
    with file.open() as f:
        for line_number, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                if current:
                    blocks.append(np.array(current))
                    current = []
                continue
            if len(fields) != VOWELS_NUM_COLUMNS:
                raise DataParseError(
                    f"expected {VOWELS_NUM_COLUMNS} values, found {len(fields)}", path=file, line=line_number
                )
            try:
                row = [float(field) for field in fields]
            except ValueError as e:
                raise DataParseError(f"non-numeric value ({e})", path=file, line=line_number) from e
            if not all(math.isfinite(value) for value in row):
                raise DataParseError("non-finite value", path=file, line=line_number)
            current.append(row)
    if current:
        blocks.append(np.array(current))
    return blocks


def _speaker_blocks(
    file: str | PathLike, block_counts: Sequence[int], speakers: Sequence[int]
) -> tuple[list[Path], list[int]]:
    blocks = _read_ae_blocks(file)
    if len(blocks) != sum(block_counts):
        raise DataParseError(f"expected {sum(block_counts)} utterances, found {len(blocks)}", path=file)
    bounds = np.concatenate([[0], np.cumsum(block_counts)])
    paths, labels = [], []
    for label, speaker in zip((-1, 1), speakers):
        for block in blocks[bounds[speaker - 1] : bounds[speaker]]:
            if block.shape[0] < 2:
                raise DataParseError("utterance with fewer than two frames", path=file)
            times = np.arange(block.shape[0]) / (block.shape[0] - 1)
            paths.append(Path(times=times, values=block))
            labels.append(label)
    return paths, labels


def load_japanese_vowels(
    train_file: str | PathLike, test_file: str | PathLike, speakers: tuple[int, int] = (1, 2)
) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the UCI Japanese Vowels `ae.train` / `ae.test` files, keeping two speakers.

    Utterances of the first speaker are labelled -1, those of the second +1. Every utterance of L frames becomes a
    path with times k / (L - 1) on [0, 1] and r = 12.

    Raises:
        FileNotFoundError: If a file is missing.
        DataParseError: If a line does not hold 12 finite reals, or the block counts do not match the dataset layout.
    """
    if len(set(speakers)) != 2 or not all(1 <= s <= len(VOWELS_TRAIN_BLOCKS) for s in speakers):
        raise DomainError(f"`speakers` must be two distinct speakers in 1..{len(VOWELS_TRAIN_BLOCKS)}, got {speakers}.")
    datasets = []
    for split, file, counts in (("train", train_file, VOWELS_TRAIN_BLOCKS), ("test", test_file, VOWELS_TEST_BLOCKS)):
        paths, labels = _speaker_blocks(file, counts, speakers)
        datasets.append(LabeledDataset(paths=paths, labels=labels, name=f"japanese_vowels_{split}"))
        logger.debug("Loaded %d utterances from %s", len(paths), file)
    return datasets[0], datasets[1]


def download_japanese_vowels(
    cache_dir: str | PathLike | None = None, verbose: bool = False
) -> tuple[pathlib.Path, pathlib.Path]:
    """Download `ae.train` and `ae.test` into `cache_dir` (default: the package cache) and return their paths."""
    cache_dir = pathlib.Path(cache_dir) if cache_dir is not None else DEFAULT_CACHE_DIR / "japanese_vowels"
    train, test = (
        download_file(f"{JAPANESE_VOWELS_URL}/{name}", cache_dir / name, verbose=verbose)
        for name in JAPANESE_VOWELS_FILES
    )
    return train, test


# Dataset manipulation


def subset(dataset: LabeledDataset, indices: Sequence[int] | np.ndarray, name: str | None = None) -> LabeledDataset:
    indices = np.asarray(indices, dtype=int)
    return LabeledDataset(
        paths=[dataset.paths[i] for i in indices],
        labels=dataset.labels[indices],
        name=dataset.name if name is None else name,
    )


def merge_datasets(*datasets: LabeledDataset, name: str | None = None) -> LabeledDataset:
    paths = [path for dataset in datasets for path in dataset.paths]
    labels = np.concatenate([dataset.labels for dataset in datasets]) if datasets else np.array([], dtype=int)
    return LabeledDataset(
        paths=paths, labels=labels, name=name if name is not None else "+".join(d.name for d in datasets)
    )


def train_test_split(
    dataset: LabeledDataset, test_fraction: float = 0.3, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded split stratified by label: each class contributes `round(test_fraction * class_size)` test examples.

    Both parts are returned in random order, so any prefix of the training part is itself a random sample.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"`test_fraction` must lie in (0, 1), got {test_fraction}.")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in (-1, 1):
        members = rng.permutation(np.flatnonzero(dataset.labels == label))
        num_test = int(np.round(test_fraction * members.size))
        test_idx.append(members[:num_test])
        train_idx.append(members[num_test:])
    train_order = rng.permutation(np.concatenate(train_idx))
    test_order = rng.permutation(np.concatenate(test_idx))
    return (
        subset(dataset, train_order, name=f"{dataset.name}/train"),
        subset(dataset, test_order, name=f"{dataset.name}/test"),
    )


def flip_labels(dataset: LabeledDataset, indices: Sequence[int] | np.ndarray) -> LabeledDataset:
    """Negate the labels at `indices`. Applying the same flip twice restores the dataset."""
    labels = np.array(dataset.labels)
    labels[np.asarray(indices, dtype=int)] *= -1
    return LabeledDataset(paths=dataset.paths, labels=labels, name=dataset.name)


def corruption_indices(m: int, fraction: float, seed: int) -> np.ndarray:
    """The `floor(fraction * m)` indices, drawn uniformly without replacement, flipped by `corrupt_labels`.

    The product is nudged by 1e-9 before flooring so that fractions with no exact binary form count as written:
    `0.29 * 100` evaluates to 28.999999999999996 and still yields 29 indices.
    """
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"`fraction` must lie in [0, 1], got {fraction}.")
    count = min(m, math.floor(fraction * m + 1e-9))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(m, size=count, replace=False))


def corrupt_labels(dataset: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Flip exactly `floor(fraction * m)` labels chosen uniformly at random. Paths are left untouched."""
    indices = corruption_indices(dataset.m, fraction, seed)
    if indices.size:
        logger.debug("Flipping %d of %d labels of %s", indices.size, dataset.m, dataset.name)
    return flip_labels(dataset, indices)


# CSV format


def save_dataset_csv(dataset: LabeledDataset, file: str | PathLike, config: dict | None = None) -> None:
    """Write `dataset` with header `path_id,t,x_1..x_r,label`, one row per sample.

    If `config` is given it is embedded as a leading `# config: {...}` comment line.
    """
    frames = []
    for path_id, (path, label) in enumerate(zip(dataset.paths, dataset.labels)):
        frame = pd.DataFrame(path.values, columns=[f"x_{j + 1}" for j in range(path.r)])
        frame.insert(0, "t", path.times)
        frame.insert(0, "path_id", path_id)
        frame["label"] = int(label)
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["path_id", "t", "label"])
    file = pathlib.Path(file)
    file.parent.mkdir(parents=True, exist_ok=True)
    with file.open("w", newline="") as f:
        if config is not None:
            f.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        table.to_csv(f, index=False, float_format="%.17g")


def load_dataset_csv(file: str | PathLike, name: str | None = None) -> LabeledDataset:
    """Read a dataset written by `save_dataset_csv`. Comment lines starting with `#` are skipped."""
    file = pathlib.Path(file)
    if not file.is_file():
        raise FileNotFoundError(f"Dataset file `{file}` does not exist.")
    try:
        table = pd.read_csv(file, comment="#", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataParseError(str(e), path=file) from e
    value_columns = [column for column in table.columns if column.startswith("x_")]
    missing = {"path_id", "t", "label"} - set(table.columns)
    if missing or not value_columns:
        raise DataParseError(f"missing columns {sorted(missing) or ['x_1']}", path=file)
    paths, labels = [], []
    for path_id, group in table.groupby("path_id", sort=False):
        group_labels = group["label"].unique()
        if len(group_labels) != 1:
            raise DataParseError(f"path {path_id} has several labels {group_labels.tolist()}", path=file)
        try:
            paths.append(Path(times=group["t"].to_numpy(), values=group[value_columns].to_numpy()))
        except ValueError as e:
            raise DataParseError(f"invalid path {path_id}: {e}", path=file) from e
        labels.append(int(group_labels[0]))
    try:
        return LabeledDataset(paths=paths, labels=labels, name=name if name is not None else file.stem)
    except ValueError as e:
        raise DataParseError(str(e), path=file) from e
