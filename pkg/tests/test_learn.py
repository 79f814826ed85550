import math
import tempfile
import unittest
from pathlib import Path as FilePath

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from stoch_rnn.features import (
    basis_means,
    compute_mean,
    dataset_basis_means,
    partial_signature,
    truncated_basis_means,
)
from stoch_rnn.interface import LabeledDataset, ModelParams, Path, TrainConfig
from stoch_rnn.learn import (
    RiskObjective,
    empirical_risk,
    erm_train,
    load_model,
    loss,
    project_spectral_ball,
    risk_gradient,
    save_model,
    solve_svm_dual,
    svm_baseline,
    svm_dual_objective,
    svm_predict,
    svm_primal_objective,
    train_model,
    truncated_erm_train,
    truncation_risk_gap_bound,
)
from stoch_rnn.paths import path_l1_norm
from stoch_rnn.reservoir import build_reservoir
from stoch_rnn.utils import DegenerateDirectionError, DomainError, RegimeError

PHI_AT_ZERO = 1.0 / math.sqrt(2.0 * math.pi)


def unit(vector: np.ndarray) -> np.ndarray:
    return vector / np.linalg.norm(vector)


def random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    M = rng.normal(size=(n, n))
    return M @ M.T / n + 0.5 * np.eye(n)


def white_reservoir(n: int = 3, r: int = 1, T: float = 1.0, seed: int = 0):
    """A reservoir with Sigma = I, so that lambda_min(A) is of order one."""
    return build_reservoir(n=n, r=r, T=T, delta=1.0, connectivity_seed=seed, noise_seed=seed, Sigma=np.eye(n))


def constant_paths_dataset(levels=(0.5, 1.0, 1.5), T: float = 1.0) -> LabeledDataset:
    paths, labels = [], []
    for sign in (1, -1):
        for c in levels:
            paths.append(Path(times=[0.0, T], values=[[sign * c], [sign * c]]))
            labels.append(sign)
    return LabeledDataset(paths=paths, labels=labels, name="constant")


def random_paths_dataset(rng: np.random.Generator, m: int, r: int, T: float = 1.0) -> LabeledDataset:
    paths = []
    for _ in range(m):
        times = np.linspace(0.0, T, 12)
        paths.append(Path(times=times, values=rng.normal(size=(12, r))))
    labels = np.where(np.arange(m) % 2 == 0, 1, -1)
    return LabeledDataset(paths=paths, labels=labels)


class TestLoss(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.A = random_spd(rng, 4)
        self.nu = rng.normal(size=4)
        self.params = ModelParams(u=rng.normal(size=(4, 2)), omega=unit(rng.normal(size=4)), b=0.3)

    def test_zero_shift(self):
        omega = unit(np.array([1.0, 0.0, 0.0, 0.0]))
        params = ModelParams(u=np.zeros((4, 2)), omega=omega, b=0.0)
        self.assertEqual(loss(np.array([0.0, 1.0, -2.0, 3.0]), 1, params, self.A), 0.5)

    def test_one_standard_deviation(self):
        q = float(self.params.omega @ self.A @ self.params.omega)
        params = ModelParams(u=self.params.u, omega=self.params.omega, b=math.sqrt(q))
        self.assertAlmostEqual(loss(np.zeros(4), 1, params, self.A), 0.158655253931457, places=12)

    def test_label_flip_complement(self):
        total = loss(self.nu, 1, self.params, self.A) + loss(self.nu, -1, self.params, self.A)
        self.assertAlmostEqual(total, 1.0, places=12)

    def test_direction_scale_invariance(self):
        scaled = ModelParams(u=self.params.u, omega=3.7 * self.params.omega, b=3.7 * self.params.b)
        self.assertAlmostEqual(loss(self.nu, -1, scaled, self.A), loss(self.nu, -1, self.params, self.A), places=12)

    def test_rescaling_equivalence(self):
        system = white_reservoir(n=4, r=2)
        path = Path(times=np.linspace(0.0, 1.0, 9), values=np.random.default_rng(1).normal(size=(9, 2)))
        alpha = 2.5
        nu_scaled = compute_mean(path, alpha * self.params.u, system, method="hold")
        nu = compute_mean(path, self.params.u, system, method="hold")
        scaled = ModelParams(u=alpha * self.params.u, omega=self.params.omega, b=alpha * self.params.b)
        self.assertAlmostEqual(
            loss(nu_scaled, 1, scaled, system.A), loss(nu, 1, self.params, system.A / alpha**2), places=12
        )

    def test_value_in_open_interval(self):
        value = loss(self.nu, 1, self.params, self.A)
        self.assertGreater(value, 0.0)
        self.assertLess(value, 1.0)

    def test_degenerate_direction(self):
        A = np.diag([0.0, 1.0, 1.0, 1.0])
        params = ModelParams(u=np.zeros((4, 1)), omega=np.array([1.0, 0.0, 0.0, 0.0]), b=0.0)
        with self.assertRaises(DegenerateDirectionError):
            loss(self.nu, 1, params, A)
        with self.assertRaises(RegimeError):
            empirical_risk(self.nu[None, :], [1], params, A)


class TestEmpiricalRisk(unittest.TestCase):
    def test_mean_of_losses(self):
        rng = np.random.default_rng(2)
        A = random_spd(rng, 3)
        means = rng.normal(size=(20, 3))
        labels = rng.choice([-1, 1], size=20)
        params = ModelParams(u=np.zeros((3, 1)), omega=unit(rng.normal(size=3)), b=-0.2)
        expected = np.mean([loss(nu, v, params, A) for nu, v in zip(means, labels)])
        self.assertAlmostEqual(empirical_risk(means, labels, params, A), expected, places=12)
        self.assertAlmostEqual(empirical_risk(means[:1], labels[:1], params, A), loss(means[0], labels[0], params, A))

    def test_all_on_hyperplane(self):
        params = ModelParams(u=np.zeros((2, 1)), omega=np.array([1.0, 0.0]), b=0.0)
        means = np.array([[0.0, 1.0], [0.0, -3.0], [0.0, 2.0]])
        self.assertEqual(empirical_risk(means, [1, -1, 1], params, np.eye(2)), 0.5)

    def test_length_mismatch(self):
        params = ModelParams(u=np.zeros((2, 1)), omega=np.array([1.0, 0.0]), b=0.0)
        with self.assertRaises(DomainError):
            empirical_risk(np.zeros((3, 2)), [1, -1], params, np.eye(2))

    def test_separable_limit(self):
        means = np.array([[1.0, 0.3], [2.0, -0.5], [-1.0, 0.2], [-1.5, 0.0]])
        labels = np.array([1, 1, -1, -1])
        omega, b = np.array([1.0, 0.0]), 0.1
        risks = [
            empirical_risk(alpha * means, labels, ModelParams(u=np.eye(2), omega=omega, b=alpha * b), np.eye(2))
            for alpha in (1.0, 2.0, 4.0, 8.0)
        ]
        self.assertTrue(all(a > b for a, b in zip(risks, risks[1:])))
        self.assertLess(risks[-1], 1e-6)


class TestRiskGradient(unittest.TestCase):
    def test_finite_differences(self):
        rng = np.random.default_rng(3)
        n, r, m, h = 6, 3, 10, 1e-5
        for instance in range(20):
            basis = rng.normal(size=(m, n, n, r))
            labels = rng.choice([-1, 1], size=m)
            A = random_spd(rng, n)
            u, omega, b = rng.normal(size=(n, r)) / n, unit(rng.normal(size=n)), float(rng.normal())
            grad_u, grad_omega, grad_b = risk_gradient(basis, labels, ModelParams(u=u, omega=omega, b=b), A)
            objective = RiskObjective(basis, labels, A)

            numeric_u = np.zeros_like(u)
            for index in np.ndindex(u.shape):
                step = np.zeros_like(u)
                step[index] = h
                numeric_u[index] = (objective.risk(u + step, omega, b) - objective.risk(u - step, omega, b)) / (2 * h)
            numeric_omega = np.zeros_like(omega)
            for i in range(n):
                step = np.zeros(n)
                step[i] = h
                numeric_omega[i] = (objective.risk(u, omega + step, b) - objective.risk(u, omega - step, b)) / (2 * h)
            numeric_b = (objective.risk(u, omega, b + h) - objective.risk(u, omega, b - h)) / (2 * h)

            with self.subTest(instance=instance):
                np.testing.assert_allclose(grad_u, numeric_u, rtol=1e-5, atol=1e-9)
                np.testing.assert_allclose(grad_omega, numeric_omega, rtol=1e-5, atol=1e-9)
                self.assertAlmostEqual(grad_b, numeric_b, delta=1e-5 * abs(numeric_b) + 1e-9)

    def test_symmetric_dataset_bias_gradient(self):
        rng = np.random.default_rng(4)
        basis = rng.normal(size=(1, 3, 3, 2))
        basis = np.concatenate([basis, -basis])
        params = ModelParams(u=rng.normal(size=(3, 2)), omega=unit(rng.normal(size=3)), b=0.0)
        _, _, grad_b = risk_gradient(basis, [1, -1], params, random_spd(rng, 3))
        self.assertAlmostEqual(grad_b, 0.0, places=14)

    def test_orthogonal_mean_bias_gradient(self):
        basis = np.zeros((1, 2, 2, 1))
        basis[0, 1, 1, 0] = 1.0
        params = ModelParams(u=np.ones((2, 1)), omega=np.array([1.0, 0.0]), b=0.0)
        A = np.diag([2.0, 1.0])
        _, _, grad_b = risk_gradient(basis, [1], params, A)
        self.assertAlmostEqual(grad_b, -PHI_AT_ZERO / math.sqrt(2.0), places=14)


class TestProjection(unittest.TestCase):
    def test_inside_ball_unchanged(self):
        u = np.array([[0.3, 0.0], [0.0, 0.2]])
        np.testing.assert_array_equal(project_spectral_ball(u, 1.0), u)

    def test_singular_values_clipped(self):
        rng = np.random.default_rng(5)
        u = rng.normal(size=(5, 3)) * 4
        projected = project_spectral_ball(u, 1.0)
        self.assertAlmostEqual(float(np.linalg.norm(projected, 2)), 1.0, places=12)
        s_before = np.linalg.svd(u, compute_uv=False)
        s_after = np.linalg.svd(projected, compute_uv=False)
        np.testing.assert_allclose(s_after, np.minimum(s_before, 1.0), atol=1e-12)


class TestErmTrain(unittest.TestCase):
    def setUp(self):
        self.system = white_reservoir(n=3, r=1)
        self.dataset = constant_paths_dataset()
        self.cfg = TrainConfig(seed=0, restarts=3, max_iters=300)

    def test_separable_constant_paths(self):
        result = erm_train(self.dataset, self.system, self.cfg)
        params = result.params
        self.assertTrue(params.is_feasible(self.cfg.Lambda))
        means = np.stack([compute_mean(p, params.u, self.system, method="hold").value for p in self.dataset.paths])
        predicted = np.where(means @ params.omega + params.b >= 0, 1, -1)
        np.testing.assert_array_equal(predicted, self.dataset.labels)
        self.assertLess(result.final_risk, 0.5)

    def test_trace_is_nonincreasing(self):
        result = erm_train(self.dataset, self.system, self.cfg)
        self.assertTrue(np.all(np.diff(result.risk_trace) <= 0.0))
        self.assertEqual(result.final_risk, result.risk_trace[-1])
        self.assertEqual(result.final_risk, float(result.restart_risks.min()))
        self.assertEqual(result.restart_risks.size, 3)

    def test_final_risk_matches_objective(self):
        result = erm_train(self.dataset, self.system, self.cfg)
        basis = dataset_basis_means(self.dataset, self.system)
        means = np.stack([item.combine(result.params.u).value for item in basis])
        self.assertAlmostEqual(
            empirical_risk(means, self.dataset.labels, result.params, self.system.A), result.final_risk, places=12
        )

    def test_deterministic(self):
        first = erm_train(self.dataset, self.system, self.cfg)
        second = erm_train(self.dataset, self.system, self.cfg)
        np.testing.assert_array_equal(first.params.u, second.params.u)
        np.testing.assert_array_equal(first.params.omega, second.params.omega)
        self.assertEqual(first.params.b, second.params.b)

    def test_bias_bound(self):
        cfg = self.cfg.model_copy(update={"Theta": 0.05})
        result = erm_train(self.dataset, self.system, cfg)
        self.assertLessEqual(abs(result.params.b), 0.05)

    def test_spectral_bound(self):
        cfg = self.cfg.model_copy(update={"Lambda": 0.2})
        result = erm_train(self.dataset, self.system, cfg)
        self.assertLessEqual(result.params.u_norm, 0.2 + 1e-9)
        self.assertAlmostEqual(float(np.linalg.norm(result.params.omega)), 1.0, places=9)

    def test_requires_definite_covariance(self):
        system = build_reservoir(n=3, r=1, T=1.0, delta=0.0, connectivity_seed=0, noise_seed=0)
        with self.assertRaises(RegimeError):
            erm_train(self.dataset, system, self.cfg)

    def test_save_then_load(self):
        result = erm_train(self.dataset, self.system, self.cfg)
        with tempfile.TemporaryDirectory() as tmp:
            file = FilePath(tmp) / "model.json"
            save_model(result, file, config={"seed": 0})
            loaded = load_model(file)
        np.testing.assert_array_equal(loaded.params.u, result.params.u)
        np.testing.assert_array_equal(loaded.risk_trace, result.risk_trace)
        self.assertEqual(loaded.params.b, result.params.b)
        self.assertEqual(loaded.config.seed, 0)
        self.assertEqual(loaded.reservoir_fingerprint, self.system.fingerprint)


class TestTruncatedTrain(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        self.system = white_reservoir(n=3, r=2, seed=1)
        self.dataset = random_paths_dataset(rng, 10, 2)
        self.cfg = TrainConfig(seed=1, restarts=2, max_iters=1000)

    def test_large_order_matches_direct_objective(self):
        rng = np.random.default_rng(7)
        params = ModelParams(u=project_spectral_ball(rng.normal(size=(3, 2)), 1.0), omega=unit(rng.normal(size=3)), b=0.1)
        direct = [basis_means(p, self.system).combine(params.u).value for p in self.dataset.paths]
        truncated = [
            truncated_basis_means(partial_signature(p, 30), self.system.W0).combine(params.u).value
            for p in self.dataset.paths
        ]
        self.assertAlmostEqual(
            empirical_risk(np.stack(direct), self.dataset.labels, params, self.system.A),
            empirical_risk(np.stack(truncated), self.dataset.labels, params, self.system.A),
            delta=1e-8,
        )

    def test_order_zero_objective(self):
        result = truncated_erm_train(self.dataset, self.system, self.cfg, 0)
        self.assertEqual(result.truncation_order, 0)
        means = [result.params.u @ partial_signature(p, 0).levels[0] for p in self.dataset.paths]
        self.assertAlmostEqual(
            empirical_risk(np.stack(means), self.dataset.labels, result.params, self.system.A),
            result.final_risk,
            places=12,
        )

    def test_risk_gap_within_bound(self):
        basis = np.stack([item.value for item in dataset_basis_means(self.dataset, self.system)])
        R1 = max(path_l1_norm(p) for p in self.dataset.paths)
        for N in (1, 3):
            with self.subTest(N=N):
                truncated = truncated_erm_train(self.dataset, self.system, self.cfg, N)
                direct = erm_train(
                    self.dataset, self.system, self.cfg, basis=basis, initial_params=truncated.params
                )
                objective = RiskObjective(basis, self.dataset.labels, self.system.A)
                gap = objective.risk(truncated.params.u, truncated.params.omega, truncated.params.b) - direct.final_risk
                bound = truncation_risk_gap_bound(
                    self.cfg.Lambda, R1, self.system.W0, self.system.T, N, self.system.lambda_min
                )
                self.assertGreaterEqual(gap, -1e-12)
                self.assertLessEqual(gap, bound)

    def test_risk_gap_within_bound_over_instances(self):
        rng = np.random.default_rng(17)
        cfg = TrainConfig(seed=0, restarts=1, max_iters=400)
        for instance in range(20):
            system = white_reservoir(n=3, r=1, seed=100 + instance)
            dataset = random_paths_dataset(rng, 8, 1)
            basis = np.stack([item.value for item in dataset_basis_means(dataset, system)])
            objective = RiskObjective(basis, dataset.labels, system.A)
            R1 = max(path_l1_norm(p) for p in dataset.paths)
            for N in (0, 1, 2, 3):
                truncated = truncated_erm_train(dataset, system, cfg.model_copy(update={"seed": instance}), N)
                direct = erm_train(dataset, system, cfg, basis=basis, initial_params=truncated.params)
                params = truncated.params
                gap = objective.risk(params.u, params.omega, params.b) - direct.final_risk
                bound = truncation_risk_gap_bound(cfg.Lambda, R1, system.W0, system.T, N, system.lambda_min)
                self.assertGreaterEqual(gap, -1e-12, msg=f"instance {instance}, N = {N}")
                self.assertLessEqual(gap, bound, msg=f"instance {instance}, N = {N}")

    def test_dispatch(self):
        cfg = self.cfg.model_copy(update={"truncation_order": 2, "restarts": 1, "max_iters": 50})
        self.assertEqual(train_model(self.dataset, self.system, cfg).truncation_order, 2)
        cfg = cfg.model_copy(update={"truncation_order": None})
        self.assertIsNone(train_model(self.dataset, self.system, cfg).truncation_order)

    def test_negative_order(self):
        with self.assertRaises(DomainError):
            truncated_erm_train(self.dataset, self.system, self.cfg, -1)


def separable_plane(rng: np.random.Generator, m: int = 20) -> tuple[np.ndarray, np.ndarray]:
    labels = np.where(np.arange(m) < m // 2, 1, -1)
    points = labels[:, None] * np.array([2.0, 2.0]) + 0.5 * rng.normal(size=(m, 2))
    return points, labels


class TestSvm(unittest.TestCase):
    def test_two_symmetric_points(self):
        p = np.array([1.0, 2.0])
        solution = svm_baseline(np.stack([p, -p]), [1, -1], np.eye(2), lambda_reg=100.0)
        np.testing.assert_allclose(solution.alpha, p / (p @ p), atol=1e-9)
        self.assertAlmostEqual(solution.b, 0.0, places=9)
        self.assertFalse(solution.midpoint_bias)

    def test_duality_gap(self):
        points, labels = separable_plane(np.random.default_rng(8))
        solution = solve_svm_dual(points, labels, lambda_reg=1.0, tol=1e-9)
        gap = solution.primal_objective - solution.dual_objective
        self.assertGreaterEqual(gap, -1e-9)
        self.assertLess(gap, 1e-5)
        self.assertAlmostEqual(
            solution.primal_objective, svm_primal_objective(solution.alpha, solution.b, points, labels, 1.0)
        )
        self.assertAlmostEqual(solution.dual_objective, svm_dual_objective(solution.theta, points, labels))
        self.assertTrue(np.all(solution.theta >= 0.0))
        self.assertTrue(np.all(solution.theta <= 1.0))
        self.assertAlmostEqual(float(solution.theta @ labels), 0.0, places=12)

    def test_duplicates_do_not_move_hyperplane(self):
        points, labels = separable_plane(np.random.default_rng(9))
        positive = labels > 0
        duplicated_points = np.concatenate([points] + [points[positive]] * 9)
        duplicated_labels = np.concatenate([labels] + [labels[positive]] * 9)
        original = solve_svm_dual(points, labels, lambda_reg=1e3, tol=1e-9)
        duplicated = solve_svm_dual(duplicated_points, duplicated_labels, lambda_reg=1e3, tol=1e-9)
        np.testing.assert_allclose(duplicated.alpha, original.alpha, atol=1e-4)
        self.assertAlmostEqual(duplicated.b, original.b, delta=1e-4)

    def test_predicts_training_labels(self):
        points, labels = separable_plane(np.random.default_rng(10))
        A = np.diag([4.0, 0.25])
        means = points @ np.diag([2.0, 0.5])
        solution = svm_baseline(means, labels, A, lambda_reg=10.0)
        np.testing.assert_array_equal(svm_predict(solution, means, A), labels)

    def test_requires_both_classes(self):
        with self.assertRaises(DomainError):
            solve_svm_dual(np.ones((3, 2)), [1, 1, 1], lambda_reg=1.0)

    def test_requires_definite_covariance(self):
        with self.assertRaises(RegimeError):
            svm_baseline(np.ones((2, 2)), [1, -1], np.diag([1.0, 0.0]), lambda_reg=1.0)


class TestMonteCarloLoss(unittest.TestCase):
    def test_matches_sampled_misclassification(self):
        rng = np.random.default_rng(11)
        draws = 2**17
        for _ in range(20):
            A = random_spd(rng, 3)
            nu = 0.5 * rng.normal(size=3)
            params = ModelParams(u=np.zeros((3, 1)), omega=unit(rng.normal(size=3)), b=0.5 * float(rng.normal()))
            v = int(rng.choice([-1, 1]))
            sampler = qmc.MultivariateNormalQMC(mean=nu, cov=A, seed=int(rng.integers(2**31)))
            samples = sampler.random(draws)
            predicted = np.where(samples @ params.omega + params.b >= 0, 1, -1)
            frequency = float(np.mean(predicted != v))
            expected = loss(nu, v, params, A)
            sigma = math.sqrt(expected * (1 - expected) / draws)
            self.assertLessEqual(abs(frequency - expected), 3 * sigma + 1.0 / draws)
            q = params.omega @ A @ params.omega
            self.assertAlmostEqual(expected, float(ndtr(-v * (nu @ params.omega + params.b) / math.sqrt(q))))


if __name__ == "__main__":
    unittest.main()
