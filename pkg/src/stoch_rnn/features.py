"""
**Module:** `stoch_rnn.features`

This module computes the deterministic part of the hidden-state law of the linear stochastic RNN.

For an input path x and input matrix u, the mean of y(T) is

    nu = int_0^T exp(W0 (T - s)) u x(s) ds,

the solution at t = T of the linear ODE dy/dt = W0 y + u x(t), y(0) = 0. The mean is linear in u, so training works
with the basis means (one per canonical matrix e_ij) computed once per path.

Expanding the exponential shows that the network only sees the partial signature of the path, the sequence of
weighted time-moments

    S_k = int_0^T (T - s)^k / k! x(s) ds,    k = 0, 1, ...

and nu = sum_k W0^k u S_k. Truncating that sum at order N gives the signature-based means, whose error decays
factorially in N.

Three integration methods are available for means: `ode` (adaptive Runge-Kutta on every sample interval),
`quadrature` (Gauss-Legendre quadrature with a matrix exponential per node) and `hold` (exact discretisation of the
ODE for piecewise-linear inputs, with one matrix exponential per distinct sample step).
"""

import json
import math
import pathlib
from os import PathLike
from typing import Callable, Literal

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.special import gammaln

from stoch_rnn.cache import BaseFeatureCache, feature_key
from stoch_rnn.interface import BasisMeans, LabeledDataset, MeanVector, PartialSignature, Path, ReservoirSystem
from stoch_rnn.paths import interpolate
from stoch_rnn.pool import pool_map
from stoch_rnn.utils import DomainError, NumericalError, check_finite, gauss_legendre_grid, logger, spectral_norm

MeanMethod = Literal["ode", "quadrature", "hold"]

QUADRATURE_NODES_PER_UNIT = 64.0
ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
DEFAULT_TRUNCATION_TARGET = 1e-6
MAX_TRUNCATION_ORDER = 500

Forcing = Callable[[np.ndarray], np.ndarray]
"""Linear map from path values, shape (k, r), to forcing terms, shape (k, n, ...)."""


def _check_path_system(path: Path, system: ReservoirSystem) -> None:
    if path.r != system.r:
        raise DomainError(f"Path dimension {path.r} does not match reservoir input dimension {system.r}.")
    if not math.isclose(path.T, system.T, rel_tol=1e-9):
        raise DomainError(f"Path horizon {path.T} does not match reservoir horizon {system.T}.")


def _integrate_ode(W0: np.ndarray, path: Path, forcing: Forcing, state_shape: tuple[int, ...]) -> np.ndarray:
    n = W0.shape[0]
    y = np.zeros(state_shape)
    for k in range(path.num_samples - 1):
        t0, t1 = path.times[k], path.times[k + 1]
        x0, slope = path.values[k], (path.values[k + 1] - path.values[k]) / (t1 - t0)
        f0, f_slope = forcing(x0[None, :])[0], forcing(slope[None, :])[0]

        def rhs(t: float, state: np.ndarray) -> np.ndarray:
            Y = state.reshape(n, -1)
            drift = W0 @ Y + (f0 + (t - t0) * f_slope).reshape(n, -1)
            return drift.reshape(-1)

        solution = solve_ivp(rhs, (t0, t1), y.reshape(-1), method="RK45", rtol=ODE_RTOL, atol=ODE_ATOL)
        if not solution.success:
            raise NumericalError(f"Mean ODE integration failed on [{t0}, {t1}]: {solution.message}")
        y = solution.y[:, -1].reshape(state_shape)
    return y


def _integrate_quadrature(W0: np.ndarray, path: Path, forcing: Forcing) -> np.ndarray:
    nodes, weights = gauss_legendre_grid(path.times, min_nodes_per_unit=QUADRATURE_NODES_PER_UNIT, min_order=3)
    values = forcing(interpolate(path, nodes))
    n = W0.shape[0]
    result = np.zeros(values.shape[1:])
    for s, weight, value in zip(nodes, weights, values):
        E = scipy.linalg.expm(W0 * (path.T - s))
        result += weight * (E @ value.reshape(n, -1)).reshape(values.shape[1:])
    return result


def hold_matrices(W0: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact discretisation of dy/dt = W0 y + f(t) over a step h when f is linear on the step.

    Returns `(Phi, G0, G1)` with Phi = exp(W0 h), G0 = int_0^h exp(W0 (h - s)) ds and
    G1 = int_0^h exp(W0 (h - s)) s ds, so that y(h) = Phi y(0) + G0 f(0) + G1 f'.
    """
    n = W0.shape[0]
    block = np.zeros((3 * n, 3 * n))
    block[:n, :n] = W0
    block[:n, n : 2 * n] = np.eye(n)
    block[n : 2 * n, 2 * n :] = np.eye(n)
    E = scipy.linalg.expm(block * h)
    return E[:n, :n], E[:n, n : 2 * n], E[:n, 2 * n :]


def _integrate_hold(W0: np.ndarray, path: Path, forcing: Forcing) -> np.ndarray:
    n = W0.shape[0]
    steps = np.diff(path.times)
    values = forcing(path.values)
    slopes = np.diff(values, axis=0) / steps.reshape((-1,) + (1,) * (values.ndim - 1))
    matrices: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    y = np.zeros((n, int(np.prod(values.shape[2:], dtype=int))))
    for k, h in enumerate(steps):
        key = float(f"{h:.12e}")
        if key not in matrices:
            matrices[key] = hold_matrices(W0, h)
        Phi, G0, G1 = matrices[key]
        y = Phi @ y + G0 @ values[k].reshape(n, -1) + G1 @ slopes[k].reshape(n, -1)
    return y.reshape(values.shape[1:])


def _mean_tensor(
    path: Path, W0: np.ndarray, forcing: Forcing, state_shape: tuple[int, ...], method: MeanMethod
) -> np.ndarray:
    if method == "ode":
        return _integrate_ode(W0, path, forcing, state_shape)
    elif method == "quadrature":
        return _integrate_quadrature(W0, path, forcing)
    elif method == "hold":
        return _integrate_hold(W0, path, forcing)
    raise DomainError(f"Unknown mean method `{method}`.")


def compute_mean(path: Path, u: np.ndarray, system: ReservoirSystem, method: MeanMethod = "ode") -> MeanVector:
    """
    Compute the mean of the hidden state at the horizon for the path `path` and the input matrix `u`.

    Args:
        path: The input path, on the reservoir's horizon.
        u: Input matrix, shape (n, r).
        system: The reservoir.
        method: `ode` (adaptive RK45 with tolerances 1e-10 / 1e-12), `quadrature` or `hold`.

    Raises:
        DomainError: On dimension or horizon mismatch, or non-finite `u`.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (system.n, system.r):
        raise DomainError(f"`u` must have shape ({system.n}, {system.r}), got {u.shape}.")
    check_finite("u", u)
    _check_path_system(path, system)
    value = _mean_tensor(path, system.W0, lambda x: x @ u.T, (system.n,), method)
    return MeanVector(value=value, source="direct", method=method)


def _basis_forcing(n: int) -> Forcing:
    identity = np.eye(n)
    return lambda x: identity[None, :, :, None] * x[:, None, None, :]


def basis_means(path: Path, system: ReservoirSystem, method: MeanMethod = "hold") -> BasisMeans:
    """Means for every canonical input matrix e_ij: `value[:, i, j]` is the mean with u = e_ij.

    The mean for any u is then `einsum("aij,ij->a", value, u)`.
    """
    _check_path_system(path, system)
    n = system.n
    value = _mean_tensor(path, system.W0, _basis_forcing(n), (n, n, system.r), method)
    return BasisMeans(value=value, source="direct", method=method)


def dataset_basis_means(
    dataset: LabeledDataset,
    system: ReservoirSystem,
    method: MeanMethod = "hold",
    cache: BaseFeatureCache | None = None,
    num_workers: int | None = None,
    show_progress: bool = False,
) -> list[BasisMeans]:
    """Basis means of every path of `dataset`, computed in parallel and looked up in / written to `cache`."""

    def compute(path: Path) -> BasisMeans:
        if cache is None:
            return basis_means(path, system, method=method)
        key = feature_key("basis", path.fingerprint[:32], system.fingerprint[:32], method)
        value = cache.get_or_compute(key, lambda: basis_means(path, system, method=method).value)
        return BasisMeans(value=value, source="direct", method=method)

    return pool_map(compute, dataset.paths, num_workers=num_workers, show_progress=show_progress, desc="Basis means")


def partial_signature(path: Path, N: int) -> PartialSignature:
    """Levels 0..N of the partial signature of `path`.

    The quadrature uses Gauss-Legendre panels aligned with the sample intervals, with enough nodes per panel to
    integrate the piecewise polynomial integrands exactly.
    """
    if N < 0:
        raise DomainError(f"Truncation order must be nonnegative, got {N}.")
    min_order = max(3, math.ceil((N + 2) / 2) + 1)
    nodes, weights = gauss_legendre_grid(path.times, min_nodes_per_unit=QUADRATURE_NODES_PER_UNIT, min_order=min_order)
    x = interpolate(path, nodes)
    lag = path.T - nodes
    power = np.ones_like(nodes)
    levels = np.empty((N + 1, path.r))
    for k in range(N + 1):
        if k > 0:
            power = power * lag / k
        levels[k] = (weights * power) @ x
    return PartialSignature(levels=levels, T=path.T)


def dataset_signatures(
    dataset: LabeledDataset, N: int, num_workers: int | None = None, show_progress: bool = False
) -> list[PartialSignature]:
    return pool_map(
        lambda path: partial_signature(path, N),
        dataset.paths,
        num_workers=num_workers,
        show_progress=show_progress,
        desc="Partial signatures",
    )


def mean_from_signature(signature: PartialSignature, u: np.ndarray, W0: np.ndarray) -> MeanVector:
    """Order-N signature expansion of the mean: sum_{k <= N} W0^k u S_k (Horner scheme)."""
    u = np.asarray(u, dtype=float)
    W0 = np.asarray(W0, dtype=float)
    if u.shape[1] != signature.r or u.shape[0] != W0.shape[0]:
        raise DomainError(f"`u` of shape {u.shape} does not match signature dimension {signature.r} and W0 {W0.shape}.")
    terms = signature.levels @ u.T
    value = terms[-1]
    for k in range(signature.order - 1, -1, -1):
        value = W0 @ value + terms[k]
    return MeanVector(
        value=value, source="signature_truncation", method="signature", truncation_order=signature.order
    )


def truncated_basis_means(signature: PartialSignature, W0: np.ndarray) -> BasisMeans:
    """Basis of the truncated means: `value[a, i, j] = sum_{k <= N} (W0^k)[a, i] S_k[j]`."""
    W0 = np.asarray(W0, dtype=float)
    n = W0.shape[0]
    power = np.eye(n)
    value = np.zeros((n, n, signature.r))
    for k in range(signature.order + 1):
        if k > 0:
            power = W0 @ power
        value += power[:, :, None] * signature.levels[k][None, None, :]
    return BasisMeans(
        value=value, source="signature_truncation", method="signature", truncation_order=signature.order
    )


def truncation_error_bound(Lambda: float, R1: float, W0: np.ndarray, T: float, N: int) -> float:
    """Bound on |<omega, nu> - <omega, nu_N>| for unit omega, ||u|| <= Lambda and paths in the L1-ball of radius R1:

        Lambda R1 exp(||W0|| T) (||W0|| T)^(N + 1) / (N + 1)!
    """
    if Lambda < 0 or R1 < 0 or N < 0:
        raise DomainError("`Lambda`, `R1` and `N` must be nonnegative.")
    a = spectral_norm(np.asarray(W0, dtype=float)) * T
    if a == 0.0 or Lambda == 0.0 or R1 == 0.0:
        return 0.0
    return float(Lambda * R1 * math.exp(a + (N + 1) * math.log(a) - gammaln(N + 2)))


def default_truncation_order(
    Lambda: float, R1: float, W0: np.ndarray, T: float, target: float = DEFAULT_TRUNCATION_TARGET
) -> int:
    """Smallest N whose truncation error bound is below `target`."""
    for N in range(MAX_TRUNCATION_ORDER + 1):
        if truncation_error_bound(Lambda, R1, W0, T, N) < target:
            logger.debug("Truncation order %d reaches bound %.1e", N, target)
            return N
    raise NumericalError(f"No truncation order up to {MAX_TRUNCATION_ORDER} reaches the bound {target}.")


def save_signatures_csv(
    signatures: list[PartialSignature], file: str | PathLike, config: dict | None = None
) -> None:
    """Write partial signatures as rows `path_id,level,component,value` (components numbered from 1)."""
    frames = []
    for path_id, signature in enumerate(signatures):
        levels, components = np.meshgrid(
            np.arange(signature.order + 1), np.arange(1, signature.r + 1), indexing="ij"
        )
        frames.append(
            pd.DataFrame(
                {
                    "path_id": path_id,
                    "level": levels.reshape(-1),
                    "component": components.reshape(-1),
                    "value": signature.levels.reshape(-1),
                }
            )
        )
    table = (
        pd.concat(frames, ignore_index=True)
        if frames
        else pd.DataFrame(columns=["path_id", "level", "component", "value"])
    )
    file = pathlib.Path(file)
    file.parent.mkdir(parents=True, exist_ok=True)
    with file.open("w", newline="") as f:
        if config is not None:
            f.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        table.to_csv(f, index=False, float_format="%.17g")
