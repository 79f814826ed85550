"""
**Module:** `stoch_rnn.config`

This module provides the `ExperimentConfig` class, the declarative description of an experiment run by the
`stoch-rnn` command line: which dataset to use, how to draw the reservoir, how to train and which experiment grid
to evaluate. Configurations are JSON files with the sections `dataset`, `reservoir`, `train` and `experiment` and
a mandatory top-level `seed`.

Every seed not given explicitly is derived from the top-level seed, so a configuration always describes a fully
reproducible run. `ExperimentConfig.resolved()` returns the configuration with every derived value filled in; it is
embedded in every output file.

Examples:
    ```json
    {
      "seed": 7,
      "dataset": {"kind": "synthetic", "samples_per_class": 70},
      "reservoir": {"n": 50, "delta": 2.0},
      "train": {"Lambda": 1.0, "restarts": 5},
      "experiment": {"trials": 5, "output_dir": "results/synthetic"}
    }
    ```
"""

import json
import pathlib
from os import PathLike
from typing import Annotated, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Self

from stoch_rnn.interface import TrainConfig
from stoch_rnn.reservoir import CovarianceMethod
from stoch_rnn.utils import DataParseError


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DatasetConfig(_Section):
    kind: Literal["synthetic", "vowels", "csv"] = "synthetic"
    """`synthetic` trigonometric polynomials, the UCI Japanese `vowels` files, or a `csv` file written by
    `save_dataset_csv`."""

    seed: int | None = None
    """Seed of the synthetic generator. Defaults to the top-level seed."""

    samples_per_class: Annotated[int, Field(ge=1)] = 70
    num_samples_per_path: Annotated[int, Field(ge=2)] = 256
    train_file: str | None = None
    """`ae.train` for the vowels dataset."""

    test_file: str | None = None
    """`ae.test` for the vowels dataset."""

    file: str | None = None
    """Dataset CSV for `kind = "csv"`."""

    download: bool = False
    """Download the vowels files into the cache when `train_file` / `test_file` are not given."""

    speakers: tuple[int, int] = (1, 2)

    @model_validator(mode="after")
    def _check_files(self) -> Self:
        if self.kind == "csv" and self.file is None:
            raise ValueError("`dataset.file` is required when `dataset.kind` is `csv`.")
        if self.kind == "vowels" and not self.download and (self.train_file is None or self.test_file is None):
            raise ValueError("The vowels dataset needs `train_file` and `test_file`, or `download: true`.")
        return self


class ReservoirConfig(_Section):
    n: Annotated[int, Field(ge=1)] = 50
    delta: Annotated[float, Field(ge=0)] = 2.0
    connectivity_seed: int | None = None
    """Seed of W. Defaults to the top-level seed."""

    noise_seed: int | None = None
    """Seed of Sigma. Defaults to the top-level seed plus one."""

    T: Annotated[float | None, Field(gt=0)] = None
    """Horizon. Defaults to the horizon of the dataset paths."""

    covariance_method: CovarianceMethod = "ode"


class ExperimentSection(_Section):
    grid: list[Annotated[int, Field(ge=1)]] | None = None
    """Training sizes of the accuracy and bound experiments. Defaults to 8 sizes from 10 to the full training set."""

    fractions: list[Annotated[float, Field(ge=0, lt=1)]] = [0.0, 0.05, 0.1, 0.15]
    """Mislabelling fractions of the robustness experiment."""

    mislabel_fraction: Annotated[float, Field(ge=0, lt=1)] = 0.15
    """Mislabelling fraction of the table experiment."""

    noise_scales: list[Annotated[float, Field(ge=0)]] | None = None
    """Noise scales (one table row each) of the table experiment. Defaults to `reservoir.delta`."""

    trials: Annotated[int, Field(ge=1)] = 5
    table_trials: Annotated[int, Field(ge=1)] = 10
    test_fraction: Annotated[float, Field(gt=0, lt=1)] = 0.3
    split_seed: int | None = None
    """Seed of the train / test split. Defaults to the top-level seed."""

    confidence: Annotated[float, Field(gt=0, lt=1)] = 0.01
    """delta of the generalisation bound."""

    runs: Annotated[int, Field(ge=1)] = 1
    output_dir: str = "results"
    feature_cache: Literal["memory", "disk"] = "memory"
    sde_dt: Annotated[float, Field(gt=0)] = 1e-3
    sde_paths: Annotated[int, Field(ge=2)] = 10_000
    sde_path_index: Annotated[int, Field(ge=0)] = 0
    """Index, in the test set, of the path driving `simulate-sde`."""


class ExperimentConfig(_Section):
    seed: int
    dataset: DatasetConfig = DatasetConfig()
    reservoir: ReservoirConfig = ReservoirConfig()
    train: dict[str, Any] = Field(default_factory=dict)
    """Fields of `TrainConfig`. `train.seed` defaults to the top-level seed."""

    experiment: ExperimentSection = ExperimentSection()

    @model_validator(mode="after")
    def _check_train(self) -> Self:
        self.train_config()
        return self

    @property
    def dataset_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    @property
    def connectivity_seed(self) -> int:
        return self.seed if self.reservoir.connectivity_seed is None else self.reservoir.connectivity_seed

    @property
    def noise_seed(self) -> int:
        return self.seed + 1 if self.reservoir.noise_seed is None else self.reservoir.noise_seed

    @property
    def split_seed(self) -> int:
        return self.seed if self.experiment.split_seed is None else self.experiment.split_seed

    def train_config(self) -> TrainConfig:
        return TrainConfig.model_validate({"seed": self.seed, **self.train})

    def apply_overrides(
        self,
        seed: int | None = None,
        trials: int | None = None,
        out: str | PathLike | None = None,
        truncated: int | None = None,
    ) -> "ExperimentConfig":
        """Return a copy with command-line overrides applied.

        `seed` replaces the top-level seed and `train.seed`; seeds derived from the top-level seed follow it.
        """
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
            data["train"] = {**data["train"], "seed": seed}
        if trials is not None:
            data["experiment"]["trials"] = trials
            data["experiment"]["table_trials"] = trials
        if out is not None:
            data["experiment"]["output_dir"] = str(out)
        if truncated is not None:
            data["train"] = {**data["train"], "truncation_order": truncated}
        return ExperimentConfig.model_validate(data)

    def resolved(self) -> dict[str, Any]:
        """The configuration as a plain dictionary, with every derived seed filled in."""
        data = self.model_dump(mode="json")
        data["dataset"]["seed"] = self.dataset_seed
        data["reservoir"]["connectivity_seed"] = self.connectivity_seed
        data["reservoir"]["noise_seed"] = self.noise_seed
        data["experiment"]["split_seed"] = self.split_seed
        data["train"] = self.train_config().model_dump(mode="json")
        return data


def load_config(file: str | PathLike) -> ExperimentConfig:
    """
    Read an experiment configuration from a JSON file.

    Raises:
        FileNotFoundError: If the file does not exist.
        DataParseError: If the file is not valid JSON or does not describe a valid configuration.
    """
    file = pathlib.Path(file)
    if not file.is_file():
        raise FileNotFoundError(f"Configuration file `{file}` does not exist.")
    text = file.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataParseError(e.msg, path=file, line=e.lineno) from e
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise DataParseError(f"invalid configuration\n{e}", path=file) from e
