"""
**Module:** `stoch_rnn.interface`

This module provides the data models shared by every other module: sampled input paths and labelled datasets,
the fixed random reservoir with the constants of its Gaussian hidden-state law, the deterministic features of a path
(means and partial signatures), trainable parameters, training and evaluation results.

All models are frozen pydantic models. Numpy arrays are stored read-only as float64 and serialised as nested lists, so
every model round-trips exactly through `model_dump_json` / `model_validate_json`.
Arrays make `==` on models ambiguous: compare fields with `numpy.array_equal` instead.
"""

from typing import Annotated, Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PlainSerializer, PlainValidator, PrivateAttr, model_validator
from typing_extensions import Self

from stoch_rnn.utils import fingerprint, psd_sqrt


def _as_float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    array.setflags(write=False)
    return array


def _as_label_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=np.int64).reshape(-1)
    if not np.all(np.isin(array, (-1, 1))):
        raise ValueError("Labels must take values in {-1, +1}.")
    array.setflags(write=False)
    return array


FloatArray = Annotated[
    np.ndarray,
    PlainValidator(_as_float_array),
    PlainSerializer(lambda array: array.tolist(), return_type=list),
]
"""A read-only float64 numpy array, serialised as nested lists."""

LabelArray = Annotated[
    np.ndarray,
    PlainValidator(_as_label_array),
    PlainSerializer(lambda array: array.tolist(), return_type=list),
]
"""A read-only int64 vector of labels in {-1, +1}."""


class StochRNNBaseModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def __repr__(self) -> str:
        """Return a representation showing array shapes instead of array contents."""
        attrs = []
        for name in type(self).model_fields:
            value = getattr(self, name)
            if isinstance(value, np.ndarray):
                attrs.append(f"{name}=array{value.shape}")
            elif isinstance(value, list) and len(value) > 3:
                attrs.append(f"{name}=[...{len(value)} items]")
            else:
                attrs.append(f"{name}={value!r}")
        return f"{self.__class__.__name__}({', '.join(attrs)})"

    def __str__(self) -> str:
        return self.__repr__()


# Paths


class Path(StochRNNBaseModel):
    """A sampled continuous input signal on [0, T] with values in R^r.

    Between samples the path is the piecewise-linear interpolant of its samples.
    """

    times: FloatArray
    """Strictly increasing sample instants, starting at 0 and ending at the horizon T."""

    values: FloatArray
    """Signal samples, one row per time instant, shape (num_samples, r)."""

    _fingerprint: str | None = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_samples(self) -> Self:
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("`times` must be a 1-D array with at least two instants.")
        if self.times[0] != 0.0:
            raise ValueError(f"`times` must start at 0, got {self.times[0]}.")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("`times` must be strictly increasing.")
        if self.values.ndim != 2 or self.values.shape[0] != self.times.size or self.values.shape[1] < 1:
            raise ValueError(
                f"`values` must have shape ({self.times.size}, r) with r >= 1, got {self.values.shape}."
            )
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.values))):
            raise ValueError("Path samples must be finite.")
        return self

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def r(self) -> int:
        return int(self.values.shape[1])

    @property
    def num_samples(self) -> int:
        return int(self.times.size)

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            self._fingerprint = fingerprint(self.times, self.values)
        return self._fingerprint


class LabeledDataset(StochRNNBaseModel):
    """Paths with binary labels, all sharing the same dimension r and horizon T."""

    paths: list[Path]
    labels: LabelArray
    name: str = ""

    @model_validator(mode="after")
    def _check_consistency(self) -> Self:
        if len(self.paths) != self.labels.size:
            raise ValueError(f"Got {len(self.paths)} paths but {self.labels.size} labels.")
        if self.paths:
            r, T = self.paths[0].r, self.paths[0].T
            for i, path in enumerate(self.paths):
                if path.r != r:
                    raise ValueError(f"Path {i} has dimension {path.r}, expected {r}.")
                if not np.isclose(path.T, T, rtol=1e-12, atol=0.0):
                    raise ValueError(f"Path {i} has horizon {path.T}, expected {T}.")
        return self

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def m(self) -> int:
        return len(self.paths)

    @property
    def r(self) -> int:
        if not self.paths:
            raise ValueError("Empty dataset has no dimension.")
        return self.paths[0].r

    @property
    def T(self) -> float:
        if not self.paths:
            raise ValueError("Empty dataset has no horizon.")
        return self.paths[0].T

    def class_counts(self) -> dict[int, int]:
        return {label: int(np.sum(self.labels == label)) for label in (-1, 1)}


# Reservoir


class ReservoirSystem(StochRNNBaseModel):
    """The fixed random network (W, Sigma) together with the constants of the Gaussian hidden-state law.

    The hidden state at the horizon is distributed as N(nu, A), where A depends only on the reservoir and nu on the
    input path and the input matrix u.
    """

    n: Annotated[int, Field(ge=1)]
    """Hidden dimension."""

    r: Annotated[int, Field(ge=1)]
    """Input dimension."""

    d: Annotated[int, Field(ge=1)]
    """Brownian dimension."""

    T: Annotated[float, Field(gt=0)]
    """Horizon."""

    W: FloatArray
    """Connectivity matrix, shape (n, n)."""

    Sigma: FloatArray
    """Noise matrix, shape (n, d)."""

    A: FloatArray
    """Covariance of the hidden state at the horizon, shape (n, n)."""

    lambda_min: float
    """Smallest eigenvalue of `A`."""

    exp_norm_int: Annotated[float, Field(ge=0)]
    """Integral over [0, T] of the squared spectral norm of exp(W0 (T - s))."""

    delta: float | None = None
    """Noise scale used to draw `Sigma`, if generated."""

    connectivity_seed: int | None = None
    noise_seed: int | None = None
    covariance_method: str = "ode"

    _W0: np.ndarray | None = PrivateAttr(default=None)
    _A_sqrt: np.ndarray | None = PrivateAttr(default=None)
    _fingerprint: str | None = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_shapes(self) -> Self:
        n, d = self.n, self.d
        if self.W.shape != (n, n):
            raise ValueError(f"`W` must have shape ({n}, {n}), got {self.W.shape}.")
        if self.Sigma.shape != (n, d):
            raise ValueError(f"`Sigma` must have shape ({n}, {d}), got {self.Sigma.shape}.")
        if self.A.shape != (n, n):
            raise ValueError(f"`A` must have shape ({n}, {n}), got {self.A.shape}.")
        scale = max(1.0, float(np.abs(self.A).max()))
        if not np.allclose(self.A, self.A.T, rtol=0.0, atol=1e-10 * scale):
            raise ValueError("`A` must be symmetric.")
        return self

    @property
    def W0(self) -> np.ndarray:
        """`W - I`, the drift matrix of the hidden state."""
        if self._W0 is None:
            W0 = self.W - np.eye(self.n)
            W0.setflags(write=False)
            self._W0 = W0
        return self._W0

    @property
    def A_sqrt(self) -> np.ndarray:
        """Symmetric positive semidefinite square root of `A`, computed once."""
        if self._A_sqrt is None:
            self._A_sqrt = psd_sqrt(self.A)
        return self._A_sqrt

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            self._fingerprint = fingerprint(self.W, self.Sigma, self.A, self.T)
        return self._fingerprint

    @property
    def is_definite(self) -> bool:
        return self.lambda_min > 0.0


# Features


class PartialSignature(StochRNNBaseModel):
    """The weighted time-moments of a path, level k being the integral of (T - s)^k / k! x(s) over [0, T]."""

    levels: FloatArray
    """Shape (N + 1, r), row k is level k."""

    T: Annotated[float, Field(gt=0)]

    @model_validator(mode="after")
    def _check_levels(self) -> Self:
        if self.levels.ndim != 2 or self.levels.shape[0] < 1:
            raise ValueError(f"`levels` must have shape (N + 1, r), got {self.levels.shape}.")
        if not np.all(np.isfinite(self.levels)):
            raise ValueError("Partial signature levels must be finite.")
        return self

    @property
    def order(self) -> int:
        return int(self.levels.shape[0] - 1)

    @property
    def r(self) -> int:
        return int(self.levels.shape[1])


class MeanVector(StochRNNBaseModel):
    """The mean of the hidden state at the horizon for one path and one input matrix."""

    value: FloatArray
    source: Literal["direct", "signature_truncation"] = "direct"
    method: str = "ode"
    """Integration method for direct means (`ode`, `quadrature`, `hold`), or `signature` for truncated ones."""

    truncation_order: int | None = None

    @model_validator(mode="after")
    def _check_value(self) -> Self:
        if self.value.ndim != 1:
            raise ValueError(f"`value` must be a vector, got shape {self.value.shape}.")
        if not np.all(np.isfinite(self.value)):
            raise ValueError("Mean vector has non-finite entries.")
        return self

    @property
    def tag(self) -> str:
        if self.source == "signature_truncation":
            return f"signature-truncation({self.truncation_order})"
        return f"direct-{self.method}"


class BasisMeans(StochRNNBaseModel):
    """The means of one path for every canonical basis matrix e_ij of the input weights.

    `value[:, i, j]` is the mean obtained with u = e_ij, so that the mean for any u is `combine(u)`.
    """

    value: FloatArray
    """Shape (n, n, r)."""

    source: Literal["direct", "signature_truncation"] = "direct"
    method: str = "hold"
    truncation_order: int | None = None

    @model_validator(mode="after")
    def _check_value(self) -> Self:
        if self.value.ndim != 3 or self.value.shape[0] != self.value.shape[1]:
            raise ValueError(f"`value` must have shape (n, n, r), got {self.value.shape}.")
        return self

    @property
    def n(self) -> int:
        return int(self.value.shape[0])

    @property
    def r(self) -> int:
        return int(self.value.shape[2])

    def __getitem__(self, index: tuple[int, int]) -> MeanVector:
        i, j = index
        return MeanVector(
            value=self.value[:, i, j],
            source=self.source,
            method=self.method,
            truncation_order=self.truncation_order,
        )

    def combine(self, u: np.ndarray) -> MeanVector:
        return MeanVector(
            value=np.einsum("aij,ij->a", self.value, u),
            source=self.source,
            method=self.method,
            truncation_order=self.truncation_order,
        )


# Learning


class ModelParams(StochRNNBaseModel):
    """The trainable triple (u, omega, b) of the classifier sign(<y(T), omega> + b)."""

    u: FloatArray
    """Input matrix, shape (n, r)."""

    omega: FloatArray
    """Read-out direction, shape (n,). Unit norm for trained models."""

    b: float
    """Read-out shift."""

    @model_validator(mode="after")
    def _check_shapes(self) -> Self:
        if self.u.ndim != 2:
            raise ValueError(f"`u` must be a matrix, got shape {self.u.shape}.")
        if self.omega.shape != (self.u.shape[0],):
            raise ValueError(f"`omega` must have shape ({self.u.shape[0]},), got {self.omega.shape}.")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.omega)) and np.isfinite(self.b)):
            raise ValueError("Model parameters must be finite.")
        return self

    @property
    def n(self) -> int:
        return int(self.u.shape[0])

    @property
    def r(self) -> int:
        return int(self.u.shape[1])

    @property
    def u_norm(self) -> float:
        return float(np.linalg.norm(self.u, 2))

    def is_feasible(self, Lambda: float, tol: float = 1e-9) -> bool:
        """Whether `||u|| <= Lambda` (spectral norm) and `||omega||_2 = 1`, up to `tol`."""
        return self.u_norm <= Lambda + tol and abs(float(np.linalg.norm(self.omega)) - 1.0) <= tol


class TrainConfig(StochRNNBaseModel):
    """Settings of the projected-gradient empirical risk minimiser."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    Lambda: Annotated[float, Field(gt=0)] = 1.0
    """Bound on the spectral norm of `u`."""

    Theta: Annotated[float | None, Field(gt=0)] = None
    """Bound on `|b|`. `None` leaves `b` unbounded; the observed `|b|` is then recorded after training."""

    restarts: Annotated[int, Field(ge=1)] = 5
    max_iters: Annotated[int, Field(ge=1)] = 500
    initial_step: Annotated[float, Field(gt=0)] = 1.0
    """Step size tried first at every iteration, before backtracking."""

    step_growth: Annotated[float, Field(ge=1)] = 2.0
    """Factor applied to the last accepted step to get the next trial step."""

    step_shrink: Annotated[float, Field(gt=0, lt=1)] = 0.5
    armijo: Annotated[float, Field(ge=0, lt=1)] = 1e-4
    """Sufficient-decrease constant of the backtracking line search."""

    max_backtracks: Annotated[int, Field(ge=1)] = 40
    tol: Annotated[float, Field(ge=0)] = 1e-10
    """Stop when an accepted step decreases the risk by less than `tol`."""

    truncation_order: Annotated[int | None, Field(ge=0)] = None
    """If set, train the truncated objective built from partial signatures of this order."""

    seed: int
    """Seed of the restart initialisations. Mandatory."""

    num_workers: Annotated[int | None, Field(ge=1)] = None


class TrainResult(StochRNNBaseModel):
    params: ModelParams
    risk_trace: FloatArray
    """Empirical risk after every accepted step of the winning restart, starting from its initial point."""

    restart_risks: FloatArray
    best_restart: int
    final_risk: float
    truncation_order: int | None = None
    config: TrainConfig
    reservoir_fingerprint: str | None = None


class SvmSolution(StochRNNBaseModel):
    """Soft-margin SVM solution on whitened means A^{-1/2} nu."""

    alpha: FloatArray
    b: float
    theta: FloatArray
    """Dual variables, one per example, in [0, lambda_reg]."""

    lambda_reg: float
    midpoint_bias: bool
    """True when no free support vector existed and `b` came from the midpoint rule."""

    iterations: int
    kkt_violation: float
    primal_objective: float
    dual_objective: float

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta > 0)


# Evaluation


class BoundInputs(StochRNNBaseModel):
    """Constants entering the generalisation bound."""

    Theta: Annotated[float, Field(ge=0)]
    Lambda: Annotated[float, Field(gt=0)]
    R: Annotated[float, Field(ge=0)]
    m: Annotated[int, Field(ge=1)]
    delta: Annotated[float, Field(gt=0, lt=1)]
    lambda_min: Annotated[float, Field(gt=0)]
    exp_norm_int: Annotated[float, Field(ge=0)]


class AccuracyResult(StochRNNBaseModel):
    mode: Literal["noiseless", "stochastic"]
    per_trial: FloatArray
    """Accuracy of every trial. A single entry in noiseless mode."""

    @property
    def min(self) -> float:
        return float(self.per_trial.min())

    @property
    def max(self) -> float:
        return float(self.per_trial.max())

    @property
    def avg(self) -> float:
        return float(self.per_trial.mean())


class ExperimentRecord(StochRNNBaseModel):
    """One row of an experiment report. Fields not produced by an experiment stay `None`."""

    experiment: str
    training_size: int
    noise_scale: float | None = None
    mislabel_fraction: float = 0.0
    run: int = 0
    noiseless_accuracy: float | None = None
    stochastic_min: float | None = None
    stochastic_max: float | None = None
    stochastic_avg: float | None = None
    train_risk: float | None = None
    test_risk: float | None = None
    gap: float | None = None
    pac_bound: float | None = None
    bound_holds: bool | None = None
    Theta: float | None = None
    robustness_ratio: float | None = None


class ExperimentReport(StochRNNBaseModel):
    name: str
    records: list[ExperimentRecord]
    config: dict[str, Any] = Field(default_factory=dict)
    """The fully resolved configuration (seeds included) that produced the report."""

    reservoir: dict[str, Any] = Field(default_factory=dict)
    """Reservoir summary: dimensions, seeds, noise scale and derived constants."""

    def to_frame(self) -> pd.DataFrame:
        rows = [record.model_dump() for record in self.records]
        return pd.DataFrame(rows, columns=list(ExperimentRecord.model_fields))


class LawCheckResult(StochRNNBaseModel):
    """Comparison of simulated terminal states of the SDE against the exact Gaussian law N(nu, A)."""

    num_paths: int
    dt: float
    nu: FloatArray
    A: FloatArray
    sample_mean: FloatArray
    sample_covariance: FloatArray
    mean_error: FloatArray
    """Absolute error of the sample mean, per coordinate."""

    mean_tolerance: FloatArray
    """Per-coordinate tolerance 4 sqrt(A_ii / num_paths) + 5 dt."""

    covariance_relative_error: float
    """Frobenius norm of the covariance error relative to that of A."""

    mean_ok: bool
    covariance_ok: bool
