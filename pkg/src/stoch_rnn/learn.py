"""
**Module:** `stoch_rnn.learn`

This module trains the read-out of the stochastic RNN.

Since y(T) ~ N(nu, A), the probability that sign(<y(T), omega> + b) differs from the label v is

    loss = Phi(-v (<nu, omega> + b) / sqrt(omega^T A omega)),

with Phi the standard Gaussian cumulative distribution function. The empirical risk averages it over a sample. It is
minimised over ||u|| <= Lambda (spectral norm), ||omega||_2 = 1 and optionally |b| <= Theta by projected gradient
descent with a backtracking line search and random restarts. The truncated trainer optimises the same objective with
the means replaced by their partial-signature expansions.

The module also provides the soft-margin SVM baseline on whitened means A^{-1/2} nu, solved in the dual by sequential
minimal optimisation.
"""

import json
import math
import pathlib
from os import PathLike
from typing import Sequence

import numpy as np
from pydantic import ValidationError
from scipy.special import ndtr

from stoch_rnn.cache import BaseFeatureCache
from stoch_rnn.features import (
    dataset_basis_means,
    dataset_signatures,
    truncated_basis_means,
    truncation_error_bound,
)
from stoch_rnn.interface import (
    BasisMeans,
    LabeledDataset,
    MeanVector,
    ModelParams,
    ReservoirSystem,
    SvmSolution,
    TrainConfig,
    TrainResult,
)
from stoch_rnn.pool import pool_map
from stoch_rnn.utils import (
    DataParseError,
    DegenerateDirectionError,
    DomainError,
    NumericalError,
    RegimeError,
    logger,
    psd_inv_sqrt,
    spawn_seeds,
)

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SVM_KKT_TOL = 1e-6


def _variance(omega: np.ndarray, A: np.ndarray) -> float:
    q = float(omega @ A @ omega)
    if not q > 0.0:
        raise DegenerateDirectionError(
            f"omega^T A omega = {q:.3e} <= 0: the read-out direction lies in the kernel of the covariance."
        )
    return q


def _as_mean_matrix(means: Sequence[MeanVector] | np.ndarray) -> np.ndarray:
    if isinstance(means, np.ndarray):
        return np.atleast_2d(means)
    return np.stack([mean.value for mean in means])


def loss(nu: MeanVector | np.ndarray, v: int, params: ModelParams, A: np.ndarray) -> float:
    """Probability that the stochastic network misclassifies a path with mean `nu` and label `v`.

    Raises:
        DegenerateDirectionError: If omega^T A omega <= 0.
    """
    value = nu.value if isinstance(nu, MeanVector) else np.asarray(nu, dtype=float)
    q = _variance(params.omega, A)
    return float(ndtr(-v * (value @ params.omega + params.b) / math.sqrt(q)))


def empirical_risk(
    means: Sequence[MeanVector] | np.ndarray, labels: Sequence[int] | np.ndarray, params: ModelParams, A: np.ndarray
) -> float:
    """Average of `loss` over the sample."""
    nu = _as_mean_matrix(means)
    labels = np.asarray(labels, dtype=float)
    if nu.shape[0] != labels.size or labels.size == 0:
        raise DomainError(f"Got {nu.shape[0]} means for {labels.size} labels.")
    q = _variance(params.omega, A)
    return float(np.mean(ndtr(-labels * (nu @ params.omega + params.b) / math.sqrt(q))))


def _stack_basis(basis: Sequence[BasisMeans] | np.ndarray) -> np.ndarray:
    if isinstance(basis, np.ndarray):
        return basis
    return np.stack([item.value for item in basis])


class RiskObjective:
    """Empirical risk and its gradient as functions of (u, omega, b), for a fixed stack of basis means.

    Args:
        basis: Basis means of the sample, shape (m, n, n, r).
        labels: Labels in {-1, +1}, shape (m,).
        A: Covariance of the hidden state, shape (n, n).
    """

    def __init__(self, basis: np.ndarray, labels: np.ndarray, A: np.ndarray):
        self.m, self.n, _, self.r = basis.shape
        self.basis = basis.reshape(self.m, self.n, self.n * self.r)
        self.labels = np.asarray(labels, dtype=float)
        self.A = A

    def means(self, u: np.ndarray) -> np.ndarray:
        return self.basis @ u.reshape(-1)

    def risk(self, u: np.ndarray, omega: np.ndarray, b: float) -> float:
        q = _variance(omega, self.A)
        return float(np.mean(ndtr(-self.labels * (self.means(u) @ omega + b) / math.sqrt(q))))

    def gradient(self, u: np.ndarray, omega: np.ndarray, b: float) -> tuple[np.ndarray, np.ndarray, float]:
        nu = self.means(u)
        q = _variance(omega, self.A)
        shift = nu @ omega + b
        z = shift / math.sqrt(q)
        c = -self.labels * INV_SQRT_2PI * np.exp(-0.5 * z * z) / math.sqrt(q)
        grad_b = float(np.mean(c))
        projected = np.einsum("a,mak->mk", omega, self.basis)
        grad_u = (c @ projected / self.m).reshape(self.n, self.r)
        A_omega = self.A @ omega
        grad_omega = (c @ nu - (c * shift).sum() * A_omega / q) / self.m
        return grad_u, grad_omega, grad_b


def risk_gradient(
    basis: Sequence[BasisMeans] | np.ndarray, labels: Sequence[int] | np.ndarray, params: ModelParams, A: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact gradient of the empirical risk with respect to (u, omega, b).

    With q = omega^T A omega, z = (<nu, omega> + b) / sqrt(q) and c = -v phi(z) / sqrt(q) per example:

        d/du_ij    = mean(c <omega, nu_{e_ij}>)
        d/domega_i = mean(c (nu_i - (A omega)_i (<omega, nu> + b) / q))
        d/db       = mean(c)

    Args:
        basis: Basis means of every example (list of `BasisMeans` or array of shape (m, n, n, r)).
        labels: Labels in {-1, +1}.
        params: Point of evaluation.
        A: Covariance of the hidden state.

    Returns:
        `(grad_u, grad_omega, grad_b)` with shapes (n, r), (n,) and scalar.
    """
    stack = _stack_basis(basis)
    labels = np.asarray(labels)
    if stack.shape[0] != labels.size or labels.size == 0:
        raise DomainError(f"Got {stack.shape[0]} basis means for {labels.size} labels.")
    return RiskObjective(stack, labels, A).gradient(params.u, params.omega, params.b)


# Projected gradient descent


def project_spectral_ball(u: np.ndarray, Lambda: float) -> np.ndarray:
    """Projection onto {||u|| <= Lambda} (spectral norm) by clipping singular values."""
    U, s, Vt = np.linalg.svd(u, full_matrices=False)
    if s.size == 0 or s[0] <= Lambda:
        return u
    return (U * np.minimum(s, Lambda)) @ Vt


def _project(
    u: np.ndarray, omega: np.ndarray, b: float, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray, float]:
    # The risk only depends on (omega, b) up to a positive scaling, so renormalising both is exact
    scale = float(np.linalg.norm(omega))
    if scale == 0.0:
        raise NumericalError("Read-out direction collapsed to zero.")
    omega, b = omega / scale, b / scale
    if cfg.Theta is not None:
        b = float(np.clip(b, -cfg.Theta, cfg.Theta))
    return project_spectral_ball(u, cfg.Lambda), omega, b


def _initial_point(rng: np.random.Generator, n: int, r: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray, float]:
    half_width = 1.0 / math.sqrt(n * r)
    u = rng.uniform(-half_width, half_width, size=(n, r))
    omega = rng.standard_normal(n)
    return _project(u, omega, 0.0, cfg)


def _descend(
    objective: RiskObjective,
    start: tuple[np.ndarray, np.ndarray, float],
    cfg: TrainConfig,
) -> tuple[tuple[np.ndarray, np.ndarray, float], list[float]]:
    u, omega, b = start
    risk = objective.risk(u, omega, b)
    if not math.isfinite(risk):
        raise NumericalError(f"Non-finite empirical risk {risk} at the initial point.")
    trace = [risk]
    step = cfg.initial_step
    for _ in range(cfg.max_iters):
        grad_u, grad_omega, grad_b = objective.gradient(u, omega, b)
        trial = step
        accepted = None
        any_finite = False
        for _ in range(cfg.max_backtracks):
            candidate = _project(u - trial * grad_u, omega - trial * grad_omega, b - trial * grad_b, cfg)
            candidate_risk = objective.risk(*candidate)
            if math.isfinite(candidate_risk):
                any_finite = True
                moved = (
                    float(np.sum((candidate[0] - u) ** 2) + np.sum((candidate[1] - omega) ** 2))
                    + (candidate[2] - b) ** 2
                )
                if candidate_risk <= risk - cfg.armijo * moved / trial:
                    accepted = (candidate, candidate_risk)
                    break
            trial *= cfg.step_shrink
        if accepted is None:
            if not any_finite:
                raise NumericalError("Empirical risk became non-finite during the line search.")
            break
        (u, omega, b), new_risk = accepted
        decrease = risk - new_risk
        risk = new_risk
        trace.append(risk)
        step = trial * cfg.step_growth
        if decrease < cfg.tol:
            break
    return (u, omega, b), trace


def _train(
    basis: np.ndarray,
    labels: np.ndarray,
    system: ReservoirSystem,
    cfg: TrainConfig,
    truncation_order: int | None,
    initial_params: ModelParams | None,
    verbose: bool,
) -> TrainResult:
    if system.lambda_min <= 0:
        raise RegimeError(
            f"The trainer requires a positive definite covariance, got lambda_min(A) = {system.lambda_min:.3e}."
        )
    if basis.shape[0] != labels.size or labels.size == 0:
        raise DomainError(f"Got {basis.shape[0]} examples for {labels.size} labels.")
    objective = RiskObjective(basis, labels, system.A)
    seeds = spawn_seeds(cfg.seed, cfg.restarts)

    def run_restart(index: int) -> tuple[tuple[np.ndarray, np.ndarray, float], list[float]]:
        if index == 0 and initial_params is not None:
            start = _project(np.array(initial_params.u), np.array(initial_params.omega), initial_params.b, cfg)
        else:
            start = _initial_point(np.random.default_rng(seeds[index]), system.n, system.r, cfg)
        result = _descend(objective, start, cfg)
        message = "Restart %d/%d: risk %.6f -> %.6f in %d steps"
        args = (index + 1, cfg.restarts, result[1][0], result[1][-1], len(result[1]) - 1)
        if verbose:
            logger.info(message, *args)
        else:
            logger.debug(message, *args)
        return result

    runs = pool_map(run_restart, range(cfg.restarts), num_workers=cfg.num_workers)
    final_risks = np.array([trace[-1] for _, trace in runs])
    best = int(np.argmin(final_risks))
    (u, omega, b), trace = runs[best]
    return TrainResult(
        params=ModelParams(u=u, omega=omega, b=b),
        risk_trace=np.array(trace),
        restart_risks=final_risks,
        best_restart=best,
        final_risk=float(trace[-1]),
        truncation_order=truncation_order,
        config=cfg,
        reservoir_fingerprint=system.fingerprint,
    )


def erm_train(
    dataset: LabeledDataset,
    system: ReservoirSystem,
    cfg: TrainConfig,
    basis: Sequence[BasisMeans] | np.ndarray | None = None,
    cache: BaseFeatureCache | None = None,
    initial_params: ModelParams | None = None,
    verbose: bool = False,
) -> TrainResult:
    """
    Minimise the empirical risk over ||u|| <= Lambda, ||omega||_2 = 1 (and |b| <= Theta when set).

    Every restart starts from u uniform in [-1/sqrt(nr), 1/sqrt(nr)] (then projected), omega uniform on the sphere and
    b = 0, and runs projected gradient descent with backtracking; only steps that decrease the risk are accepted.
    The restart with the lowest final risk wins.

    Args:
        dataset: Training sample.
        system: The reservoir; its covariance must be positive definite.
        cfg: Training settings. `cfg.truncation_order` is ignored here, see `train_model`.
        basis: Precomputed basis means of `dataset`. Computed (and cached in `cache`) when `None`.
        cache: Feature cache used when computing basis means.
        initial_params: Start the first restart from these parameters instead of a random point.
        verbose: Log restart summaries at INFO level.

    Returns:
        The winning parameters, the risk trace of the winning restart and the final risk of every restart.

    Raises:
        RegimeError: If lambda_min(A) <= 0.
        NumericalError: If the risk becomes non-finite.
    """
    if basis is None:
        basis = dataset_basis_means(dataset, system, cache=cache, num_workers=cfg.num_workers)
    return _train(_stack_basis(basis), np.asarray(dataset.labels), system, cfg, None, initial_params, verbose)


def truncated_erm_train(
    dataset: LabeledDataset,
    system: ReservoirSystem,
    cfg: TrainConfig,
    N: int,
    initial_params: ModelParams | None = None,
    verbose: bool = False,
) -> TrainResult:
    """Minimise the truncated empirical risk, where every mean is replaced by sum_{k <= N} W0^k u S_k."""
    if N < 0:
        raise DomainError(f"Truncation order must be nonnegative, got {N}.")
    signatures = dataset_signatures(dataset, N, num_workers=cfg.num_workers)
    basis = np.stack([truncated_basis_means(signature, system.W0).value for signature in signatures])
    return _train(basis, np.asarray(dataset.labels), system, cfg, N, initial_params, verbose)


def train_model(
    dataset: LabeledDataset,
    system: ReservoirSystem,
    cfg: TrainConfig,
    cache: BaseFeatureCache | None = None,
    verbose: bool = False,
) -> TrainResult:
    """Run `truncated_erm_train` when `cfg.truncation_order` is set, `erm_train` otherwise."""
    if cfg.truncation_order is not None:
        return truncated_erm_train(dataset, system, cfg, cfg.truncation_order, verbose=verbose)
    return erm_train(dataset, system, cfg, cache=cache, verbose=verbose)


def truncation_risk_gap_bound(
    Lambda: float, R1: float, W0: np.ndarray, T: float, N: int, lambda_min: float
) -> float:
    """Bound on the true-objective risk gap between the truncated and the direct empirical risk minimisers:

        Lambda R1 exp(||W0|| T) sqrt(2 / (lambda_min pi)) (||W0|| T)^(N + 1) / (N + 1)!
    """
    if lambda_min <= 0:
        raise RegimeError(f"lambda_min must be positive, got {lambda_min}.")
    return truncation_error_bound(Lambda, R1, W0, T, N) * math.sqrt(2.0 / (lambda_min * math.pi))


def save_model(result: TrainResult, file: str | PathLike, config: dict | None = None) -> None:
    """Write a trained model (parameters, trace, training config, reservoir reference) as JSON."""
    file = pathlib.Path(file)
    file.parent.mkdir(parents=True, exist_ok=True)
    payload = {"model": json.loads(result.model_dump_json())}
    if config is not None:
        payload["config"] = config
    file.write_text(json.dumps(payload, indent=2))


def load_model(file: str | PathLike) -> TrainResult:
    file = pathlib.Path(file)
    if not file.is_file():
        raise FileNotFoundError(f"Model file `{file}` does not exist.")
    try:
        return TrainResult.model_validate(json.loads(file.read_text())["model"])
    except (json.JSONDecodeError, KeyError, ValidationError) as e:
        raise DataParseError(f"invalid model file ({e})", path=file) from e


# Soft-margin SVM baseline


def svm_primal_objective(
    alpha: np.ndarray, b: float, points: np.ndarray, labels: np.ndarray, lambda_reg: float
) -> float:
    """1/2 ||alpha||^2 + lambda sum_i max(0, 1 - v_i (<alpha, z_i> + b))."""
    hinge = np.maximum(0.0, 1.0 - labels * (points @ alpha + b))
    return float(0.5 * alpha @ alpha + lambda_reg * hinge.sum())


def svm_dual_objective(theta: np.ndarray, points: np.ndarray, labels: np.ndarray) -> float:
    """sum_i theta_i - 1/2 ||sum_i theta_i v_i z_i||^2."""
    alpha = (theta * labels) @ points
    return float(theta.sum() - 0.5 * alpha @ alpha)


def _svm_bias(theta: np.ndarray, f: np.ndarray, labels: np.ndarray, C: float) -> tuple[float, bool]:
    eps = 1e-10 * C
    free = (theta > eps) & (theta < C - eps)
    if np.any(free):
        return float(np.mean(labels[free] - f[free])), False
    at_zero, at_c = theta <= eps, theta >= C - eps
    bounds = labels - f
    lower = bounds[((labels > 0) & at_zero) | ((labels < 0) & at_c)]
    upper = bounds[((labels < 0) & at_zero) | ((labels > 0) & at_c)]
    if lower.size and upper.size:
        return float((lower.max() + upper.min()) / 2), True
    return float(lower.max() if lower.size else upper.min()), True


def solve_svm_dual(
    points: np.ndarray, labels: np.ndarray, lambda_reg: float, tol: float = SVM_KKT_TOL, max_iter: int = 100_000
) -> SvmSolution:
    """
    Soft-margin SVM on `points` by sequential minimal optimisation with the maximal violating pair.

    Solves max sum(theta) - 1/2 ||sum theta_i v_i z_i||^2 subject to 0 <= theta_i <= lambda_reg and <theta, v> = 0,
    until the KKT violation drops below `tol`.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=float)
    m = labels.size
    if points.shape[0] != m or m < 2:
        raise DomainError(f"Need at least two points with one label each, got {points.shape[0]} and {m}.")
    if not (np.any(labels > 0) and np.any(labels < 0)):
        raise DomainError("Both classes must be present.")
    C = float(lambda_reg)
    K = points @ points.T
    theta = np.zeros(m)
    grad = -np.ones(m)
    iterations = 0
    violation = math.inf
    while iterations < max_iter:
        score = -labels * grad
        up = ((labels > 0) & (theta < C)) | ((labels < 0) & (theta > 0))
        low = ((labels < 0) & (theta < C)) | ((labels > 0) & (theta > 0))
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        violation = float(score[i] - score[j])
        if violation < tol:
            break
        curvature = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        room_i = C - theta[i] if labels[i] > 0 else theta[i]
        room_j = theta[j] if labels[j] > 0 else C - theta[j]
        step = min(violation / curvature, room_i, room_j)
        theta[i] += step * labels[i]
        theta[j] -= step * labels[j]
        theta[i], theta[j] = min(max(theta[i], 0.0), C), min(max(theta[j], 0.0), C)
        grad += step * labels * (K[:, i] - K[:, j])
        iterations += 1
    else:
        raise NumericalError(f"SMO did not reach KKT tolerance {tol} in {max_iter} iterations (violation {violation}).")
    alpha = (theta * labels) @ points
    b, midpoint = _svm_bias(theta, points @ alpha, labels, C)
    if midpoint:
        logger.warning("No free support vector: SVM bias recovered by the midpoint rule.")
    return SvmSolution(
        alpha=alpha,
        b=b,
        theta=theta,
        lambda_reg=C,
        midpoint_bias=midpoint,
        iterations=iterations,
        kkt_violation=violation,
        primal_objective=svm_primal_objective(alpha, b, points, labels, C),
        dual_objective=svm_dual_objective(theta, points, labels),
    )


def svm_baseline(
    means: Sequence[MeanVector] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    A: np.ndarray,
    lambda_reg: float,
    tol: float = SVM_KKT_TOL,
) -> SvmSolution:
    """Soft-margin SVM on the whitened means A^{-1/2} nu, with u fixed.

    `alpha` and `b` live in the whitened space: a path is classified by sign(<alpha, A^{-1/2} nu> + b).

    Raises:
        RegimeError: If `A` is not positive definite.
    """
    whitened = _as_mean_matrix(means) @ psd_inv_sqrt(np.asarray(A, dtype=float))
    return solve_svm_dual(whitened, np.asarray(labels, dtype=float), lambda_reg, tol=tol)


def svm_predict(solution: SvmSolution, means: Sequence[MeanVector] | np.ndarray, A: np.ndarray) -> np.ndarray:
    """Labels sign(<alpha, A^{-1/2} nu> + b), with sign(0) = +1."""
    scores = _as_mean_matrix(means) @ psd_inv_sqrt(np.asarray(A, dtype=float)) @ solution.alpha + solution.b
    return np.where(scores >= 0, 1, -1)
