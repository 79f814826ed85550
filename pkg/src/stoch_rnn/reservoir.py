"""
**Module:** `stoch_rnn.reservoir`

This module builds the fixed random network of the stochastic RNN

    dy = (W0 y + u x(t)) dt + Sigma dB,    W0 = W - I,    y(0) = 0,

and computes the constants of the Gaussian law of y(T): the covariance

    A = int_0^T exp(W0 (T - s)) Sigma Sigma^T exp(W0^T (T - s)) ds,

its smallest eigenvalue, and the integral of the squared spectral norm of exp(W0 (T - s)) entering the
generalisation bound.

Three covariance methods are available and agree to high accuracy: `ode` integrates the differential Lyapunov
equation, `quadrature` applies Gauss-Legendre quadrature to the defining integral, and `van_loan` reads A off a single
block matrix exponential.

Examples:
    ```python
    from stoch_rnn.reservoir import build_reservoir

    system = build_reservoir(n=50, r=5, T=6.283185307179586, delta=2.0, connectivity_seed=0, noise_seed=1)
    print(system.lambda_min, system.exp_norm_int)
    ```
"""

import json
import pathlib
from os import PathLike
from typing import Literal

import numpy as np
import scipy.linalg
from pydantic import ValidationError
from scipy.integrate import solve_ivp

from stoch_rnn.interface import ReservoirSystem
from stoch_rnn.utils import (
    DataParseError,
    DomainError,
    NumericalError,
    check_finite,
    logger,
    psd_inv_sqrt,
    psd_sqrt,
    uniform_gauss_legendre,
)

__all__ = [
    "CovarianceMethod",
    "build_reservoir",
    "compute_covariance",
    "draw_noise_spectrum",
    "exp_norm_integral",
    "gen_connectivity",
    "gen_noise_matrix",
    "load_reservoir",
    "matrix_exp",
    "min_eigenvalue",
    "psd_inv_sqrt",
    "psd_sqrt",
    "save_reservoir",
]

CovarianceMethod = Literal["ode", "quadrature", "van_loan"]

CONNECTIVITY_SCALE = 0.9
DEFAULT_COVARIANCE_TOL = 1e-9
SYMMETRY_RTOL = 1e-10
EXP_NORM_NODES = 256


def gen_connectivity(n: int, seed: int) -> np.ndarray:
    """Draw W with i.i.d. N(0, s^2) entries, s = 0.9 / sqrt(n) (standard deviation reading of the scale)."""
    if n < 1:
        raise DomainError(f"`n` must be at least 1, got {n}.")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, CONNECTIVITY_SCALE / np.sqrt(n), size=(n, n))


def draw_noise_spectrum(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw the eigenvalues (uniform on (0, 1)) and the Haar-distributed orthogonal basis U of the noise matrix.

    U comes from the QR decomposition of a Gaussian matrix with the signs of R's diagonal moved into Q.
    """
    rng = np.random.default_rng(seed)
    eigenvalues = rng.uniform(0.0, 1.0, size=n)
    Q, R = scipy.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return eigenvalues, Q * signs


def gen_noise_matrix(n: int, delta: float, seed: int) -> np.ndarray:
    """Draw Sigma = delta * U^T diag(lambda) U, a symmetric PSD matrix with eigenvalues delta * lambda_i."""
    if n < 1:
        raise DomainError(f"`n` must be at least 1, got {n}.")
    if delta < 0:
        raise DomainError(f"Noise scale `delta` must be nonnegative, got {delta}.")
    eigenvalues, U = draw_noise_spectrum(n, seed)
    Sigma = delta * (U.T * eigenvalues) @ U
    return (Sigma + Sigma.T) / 2


def matrix_exp(M: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Pade approximants)."""
    M = np.asarray(M, dtype=float)
    check_finite("M", M)
    return scipy.linalg.expm(M)


def _covariance_ode(W0: np.ndarray, Q: np.ndarray, T: float, tol: float) -> np.ndarray:
    n = W0.shape[0]

    def rhs(_: float, a: np.ndarray) -> np.ndarray:
        A = a.reshape(n, n)
        return (Q + W0 @ A + A @ W0.T).reshape(-1)

    solution = solve_ivp(rhs, (0.0, T), np.zeros(n * n), method="DOP853", rtol=1e-12, atol=min(1e-14, tol * 1e-4))
    if not solution.success:
        raise NumericalError(f"Covariance ODE integration failed: {solution.message}")
    return solution.y[:, -1].reshape(n, n)


def _covariance_quadrature_at(W0: np.ndarray, Q: np.ndarray, T: float, num_nodes: int) -> np.ndarray:
    nodes, weights = uniform_gauss_legendre(T, num_nodes, order=16)
    A = np.zeros_like(Q)
    for tau, weight in zip(nodes, weights):
        E = scipy.linalg.expm(W0 * tau)
        A += weight * (E @ Q @ E.T)
    return A


def _covariance_quadrature(
    W0: np.ndarray, Q: np.ndarray, T: float, tol: float, max_doublings: int = 8, verbose: bool = False
) -> np.ndarray:
    num_nodes = 64
    previous = _covariance_quadrature_at(W0, Q, T, num_nodes)
    for _ in range(max_doublings):
        num_nodes *= 2
        current = _covariance_quadrature_at(W0, Q, T, num_nodes)
        change = float(np.linalg.norm(current - previous))
        if verbose:
            logger.info("Covariance quadrature with %d nodes: change %.3e", num_nodes, change)
        if change < tol:
            return current
        previous = current
    raise NumericalError(f"Covariance quadrature did not reach tolerance {tol} with {num_nodes} nodes.")


def _covariance_van_loan(W0: np.ndarray, Q: np.ndarray, T: float) -> np.ndarray:
    n = W0.shape[0]
    F = np.block([[W0, Q], [np.zeros((n, n)), -W0.T]])
    E = scipy.linalg.expm(F * T)
    return E[:n, n:] @ E[:n, :n].T


def compute_covariance(
    W0: np.ndarray,
    Sigma: np.ndarray,
    T: float,
    tol: float = DEFAULT_COVARIANCE_TOL,
    method: CovarianceMethod = "ode",
    verbose: bool = False,
) -> np.ndarray:
    """
    Compute the covariance A of the hidden state at the horizon T.

    Args:
        W0: Drift matrix `W - I`, shape (n, n).
        Sigma: Noise matrix, shape (n, d).
        T: Horizon.
        tol: Target accuracy in Frobenius norm.
        method:
            - `ode`: integrate dA/dt = Sigma Sigma^T + W0 A + A W0^T from A(0) = 0 with an adaptive 8th-order
              Runge-Kutta scheme.
            - `quadrature`: composite Gauss-Legendre quadrature of the defining integral, doubling the number of
              nodes until two successive results differ by less than `tol`.
            - `van_loan`: block matrix exponential of [[W0, Sigma Sigma^T], [0, -W0^T]] T.
        verbose: Log progress at INFO level.

    Returns:
        The symmetrised covariance matrix, shape (n, n).

    Raises:
        DomainError: On inconsistent shapes, non-finite entries or T <= 0.
        NumericalError: If the selected method does not converge.
    """
    W0 = np.asarray(W0, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    if W0.ndim != 2 or W0.shape[0] != W0.shape[1]:
        raise DomainError(f"`W0` must be square, got shape {W0.shape}.")
    if Sigma.ndim != 2 or Sigma.shape[0] != W0.shape[0]:
        raise DomainError(f"`Sigma` must have {W0.shape[0]} rows, got shape {Sigma.shape}.")
    if T <= 0:
        raise DomainError(f"Horizon `T` must be positive, got {T}.")
    check_finite("W0", W0)
    check_finite("Sigma", Sigma)
    Q = Sigma @ Sigma.T
    if method == "ode":
        A = _covariance_ode(W0, Q, T, tol)
    elif method == "quadrature":
        A = _covariance_quadrature(W0, Q, T, tol, verbose=verbose)
    elif method == "van_loan":
        A = _covariance_van_loan(W0, Q, T)
    else:
        raise DomainError(f"Unknown covariance method `{method}`.")
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"Covariance computed with `{method}` has non-finite entries.")
    return (A + A.T) / 2


def min_eigenvalue(A: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Raises:
        DomainError: If `A` is not symmetric to 1e-10 relative accuracy.
    """
    A = np.asarray(A, dtype=float)
    check_finite("A", A)
    scale = float(np.linalg.norm(A))
    if float(np.linalg.norm(A - A.T)) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise DomainError("Matrix is not symmetric.")
    return float(scipy.linalg.eigvalsh(A)[0])


def exp_norm_integral(W0: np.ndarray, T: float, num_nodes: int = EXP_NORM_NODES) -> float:
    """Integral over [0, T] of ||exp(W0 (T - s))||^2 (spectral norm), by Gauss-Legendre quadrature."""
    if T <= 0:
        raise DomainError(f"Horizon `T` must be positive, got {T}.")
    W0 = np.asarray(W0, dtype=float)
    check_finite("W0", W0)
    nodes, weights = uniform_gauss_legendre(T, num_nodes)
    norms = np.array([np.linalg.norm(scipy.linalg.expm(W0 * tau), 2) for tau in nodes])
    return float(np.dot(weights, norms**2))


def build_reservoir(
    n: int,
    r: int,
    T: float,
    delta: float,
    connectivity_seed: int,
    noise_seed: int,
    covariance_method: CovarianceMethod = "ode",
    tol: float = DEFAULT_COVARIANCE_TOL,
    W: np.ndarray | None = None,
    Sigma: np.ndarray | None = None,
    verbose: bool = False,
) -> ReservoirSystem:
    """
    Draw the reservoir and compute the constants of its Gaussian law.

    Args:
        n: Hidden dimension; the Brownian motion has the same dimension.
        r: Input dimension.
        T: Horizon of the input paths.
        delta: Noise scale of Sigma.
        connectivity_seed: Seed of W.
        noise_seed: Seed of Sigma.
        covariance_method: See `compute_covariance`.
        tol: Covariance accuracy.
        W: Use this connectivity matrix instead of drawing one.
        Sigma: Use this noise matrix instead of drawing one (its column count sets the Brownian dimension).
        verbose: Log progress at INFO level.
    """
    W = gen_connectivity(n, connectivity_seed) if W is None else np.asarray(W, dtype=float)
    Sigma = gen_noise_matrix(n, delta, noise_seed) if Sigma is None else np.asarray(Sigma, dtype=float)
    W0 = W - np.eye(n)
    A = compute_covariance(W0, Sigma, T, tol=tol, method=covariance_method, verbose=verbose)
    system = ReservoirSystem(
        n=n,
        r=r,
        d=Sigma.shape[1],
        T=T,
        W=W,
        Sigma=Sigma,
        A=A,
        lambda_min=min_eigenvalue(A),
        exp_norm_int=exp_norm_integral(W0, T),
        delta=delta,
        connectivity_seed=connectivity_seed,
        noise_seed=noise_seed,
        covariance_method=covariance_method,
    )
    message = "Reservoir n=%d delta=%s: lambda_min(A)=%.4e, exp_norm_int=%.4e"
    if verbose:
        logger.info(message, n, delta, system.lambda_min, system.exp_norm_int)
    else:
        logger.debug(message, n, delta, system.lambda_min, system.exp_norm_int)
    return system


def save_reservoir(system: ReservoirSystem, file: str | PathLike, config: dict | None = None) -> None:
    """Write the reservoir (all matrices, seeds and constants) as JSON, optionally with the resolved config."""
    file = pathlib.Path(file)
    file.parent.mkdir(parents=True, exist_ok=True)
    payload = {"reservoir": json.loads(system.model_dump_json())}
    if config is not None:
        payload["config"] = config
    file.write_text(json.dumps(payload, indent=2))


def load_reservoir(file: str | PathLike) -> ReservoirSystem:
    file = pathlib.Path(file)
    if not file.is_file():
        raise FileNotFoundError(f"Reservoir file `{file}` does not exist.")
    try:
        payload = json.loads(file.read_text())
        return ReservoirSystem.model_validate(payload["reservoir"])
    except (json.JSONDecodeError, KeyError, ValidationError) as e:
        raise DataParseError(f"invalid reservoir file ({e})", path=file) from e
