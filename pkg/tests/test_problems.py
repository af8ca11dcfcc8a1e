"""
Test cases for the problem builders and instance generators.
"""

import os
import sys

import numpy as np
import pytest

# Add the root directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from src.core import (
    BlockContext,
    Iterate,
    ProximalMatrix,
    SolverConfig,
    YContext,
    check_lipschitz,
    compute_constants,
    padmm_iterate,
)
from src.problems import (
    CustomBlockConfig,
    ProblemConstructionError,
    ScadMcpRegressionConfig,
    SlrConfig,
    build_custom_problem,
    build_scad_mcp_regression,
    build_slr_decomposition,
    column_difference_term,
    default_regression_alpha,
    gen_slr_instance,
    gen_sparse_regression,
    make_rng,
    tridiagonal_y_update,
    unvec,
    vec,
)
from src.prox import McpParams, ScadParams, numerical_rank


class TestRandomness:
    """Test cases for seeded generation."""

    def test_pcg64_stream(self):
        """Test the first draws of the seeded generator."""
        values = make_rng(42).random(3)
        np.testing.assert_allclose(
            values, [0.7739560485559633, 0.4388784397520523, 0.8585979199113825], rtol=0, atol=0
        )

    def test_sparse_regression_is_deterministic(self):
        """Test that one seed gives one instance."""
        first = gen_sparse_regression(20, 50, 5, 0.1, 42)
        second = gen_sparse_regression(20, 50, 5, 0.1, 42)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)


class TestSparseRegression:
    """Test cases for the SCAD/MCP regression builder."""

    def setup_method(self):
        self.A, self.y0, self.x_true = gen_sparse_regression(20, 50, 5, 0.0, 42)

    def test_generator_shapes(self):
        """Test shapes, support size and magnitudes of the regression instance."""
        assert self.A.shape == (20, 50)
        assert np.count_nonzero(self.x_true) == 5
        magnitudes = np.abs(self.x_true[self.x_true != 0])
        assert np.all((magnitudes >= 0.5) & (magnitudes <= 1.5))
        np.testing.assert_allclose(self.y0, self.A @ self.x_true)

    def test_generator_rejects_large_support(self):
        """Test that k_nnz above n raises."""
        with pytest.raises(ProblemConstructionError):
            gen_sparse_regression(5, 4, 6, 0.0, 1)

    def test_builder_structure(self):
        """Test the structure of the regression problem."""
        solver = SolverConfig(alpha=4.0)
        problem = build_scad_mcp_regression(
            ScadMcpRegressionConfig(self.A, self.y0, 1.0, ScadParams(lam=0.5, theta=3.7)), solver
        )
        assert problem.name == "scad_regression"
        assert (problem.p, problem.m, problem.q, problem.n) == (1, 20, 20, (50,))
        np.testing.assert_array_equal(problem.B, -np.eye(20))
        assert problem.blocks[0].Q.min_eigenvalue() > 0
        assert problem.smooth.L_h == 1.0

    def test_positive_sigma_for_recommended_parameters(self):
        """Test sigma = 0.125 for the recommended parameters."""
        solver = SolverConfig(alpha=4.0, beta=1.0, epsilon0=1.5)
        problem = build_scad_mcp_regression(
            ScadMcpRegressionConfig(self.A, self.y0, 1.0, ScadParams(lam=0.5, theta=3.7)), solver
        )
        constants = compute_constants(problem, solver)
        assert constants.sigma == pytest.approx(0.125)
        assert constants.lambda_min_D_bar == pytest.approx(1.5)

    def test_weak_convexity_is_opt_in(self):
        """Test that weak convexity is declared only on request."""
        solver = SolverConfig(alpha=4.0)
        plain = build_scad_mcp_regression(
            ScadMcpRegressionConfig(self.A, self.y0, 1.0, McpParams(lam=0.5, theta=3.0)), solver
        )
        declared = build_scad_mcp_regression(
            ScadMcpRegressionConfig(
                self.A, self.y0, 1.0, McpParams(lam=0.5, theta=3.0), declare_weak_convexity=True
            ),
            solver,
        )
        assert plain.name == "mcp_regression"
        assert plain.blocks[0].weak_convexity is None
        assert declared.blocks[0].weak_convexity == pytest.approx(1.0 / 3.0)

    def test_builder_errors(self):
        """Test construction errors of the regression builder."""
        solver = SolverConfig(alpha=1.0)
        penalty = ScadParams(lam=0.5, theta=3.7)
        with pytest.raises(ProblemConstructionError):
            build_scad_mcp_regression(
                ScadMcpRegressionConfig(self.A, self.y0[:5], 1.0, penalty), solver
            )
        with pytest.raises(ProblemConstructionError):
            build_scad_mcp_regression(
                ScadMcpRegressionConfig(self.A, self.y0, 0.0, penalty), solver
            )
        with pytest.raises(ProblemConstructionError):
            build_scad_mcp_regression(
                ScadMcpRegressionConfig(self.A, self.y0, 1.0, penalty, tau=1e-3), solver
            )

    def test_default_alpha(self):
        """Test the default regression alpha."""
        assert default_regression_alpha(2.0) == pytest.approx(2.2)


class TestSlrDecomposition:
    """Test cases for the sparse + low-rank + smooth decomposition."""

    def setup_method(self):
        self.A, self.X1, self.X2, self.Y = gen_slr_instance(12, 10, 2, 8, 42)
        self.solver = SolverConfig(alpha=10.0)

    def test_vec_is_column_major(self):
        """Test column-major vectorization."""
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(vec(X), [1.0, 3.0, 2.0, 4.0])
        np.testing.assert_array_equal(unvec(vec(X), (2, 2)), X)

    def test_instance_components(self):
        """Test rank, sparsity and smoothness of the generated components."""
        assert numerical_rank(self.X1) == 2
        assert np.count_nonzero(self.X2) == 8
        np.testing.assert_allclose(self.A, self.X1 + self.X2 + self.Y)
        second_diff = np.diff(self.Y, n=2, axis=1)
        np.testing.assert_allclose(second_diff, 0.0, atol=1e-12)

    def test_builder_structure(self):
        """Test the structure of the decomposition problem."""
        problem = build_slr_decomposition(SlrConfig(self.A, r=2, s=8), self.solver)
        assert problem.name == "slr_decomposition"
        assert problem.p == 2
        assert problem.n == (120, 120)
        np.testing.assert_allclose(problem.b, -vec(self.A))
        assert [block.name for block in problem.blocks] == ["low_rank", "sparse"]

    def test_builder_errors(self):
        """Test construction errors of the decomposition builder."""
        with pytest.raises(ProblemConstructionError):
            build_slr_decomposition(SlrConfig(self.A, r=11, s=8), self.solver)
        with pytest.raises(ProblemConstructionError):
            build_slr_decomposition(SlrConfig(self.A, r=2, s=8, lambda_step=1.0), self.solver)
        with pytest.raises(ProblemConstructionError):
            build_slr_decomposition(SlrConfig(self.A, r=2, s=8, alpha3=0.0), self.solver)
        dense_p = SolverConfig(alpha=10.0, P=ProximalMatrix.from_dense(np.eye(120)))
        with pytest.raises(ProblemConstructionError):
            build_slr_decomposition(SlrConfig(self.A, r=2, s=8), dense_p)

    def test_column_difference_gradient(self):
        """Test the column-difference gradient and its Lipschitz constant."""
        shape = (4, 5)
        term = column_difference_term(shape, 0.3)
        rng = make_rng(5)
        y = rng.standard_normal(20)
        e = rng.standard_normal(20)
        h = 1e-6
        numeric = (term.h_value(y + h * e) - term.h_value(y - h * e)) / (2 * h)
        assert term.h_grad(y) @ e == pytest.approx(numeric, rel=1e-6)
        assert check_lipschitz(term, 20)

    def test_tridiagonal_solve_matches_dense(self):
        """Test the banded y solve against a dense Kronecker system."""
        shape = (3, 4)
        alpha, alpha3, p = 2.0, 0.3, 0.5
        update = tridiagonal_y_update(shape, alpha3)
        rng = make_rng(9)
        y_prev, z, offset = (rng.standard_normal(12) for _ in range(3))
        P = ProximalMatrix.scaled_identity(12, p)
        ctx = YContext(
            B=np.eye(12), P=P, h_value=lambda y: 0.0, y_prev=y_prev, offset=offset, z=z, alpha=alpha
        )
        lap = np.diag([1.0, 2.0, 2.0, 1.0]) - np.eye(4, k=1) - np.eye(4, k=-1)
        system = 2.0 * alpha3 * np.kron(lap, np.eye(3)) + (alpha + p) * np.eye(12)
        expected = np.linalg.solve(system, -z - alpha * offset + p * y_prev)
        np.testing.assert_allclose(update(ctx), expected, atol=1e-12)

    def test_sweep_keeps_blocks_feasible(self):
        """Test that sweeps keep the rank and cardinality constraints."""
        problem = build_slr_decomposition(SlrConfig(self.A, r=2, s=8), self.solver)
        it = Iterate.initial(problem)
        for _ in range(5):
            it = padmm_iterate(problem, self.solver, it)
        assert numerical_rank(unvec(it.x[0], (12, 10))) <= 2
        assert np.count_nonzero(it.x[1]) <= 8
        assert np.isfinite(problem.objective(it.x, it.y))

    def test_exact_prox_block_update(self):
        """Test the exact projected block update."""
        config = SlrConfig(self.A, r=10, s=8, exact_prox=True)
        problem = build_slr_decomposition(config, self.solver)
        block = problem.blocks[0]
        rng = make_rng(2)
        x_prev, offset, z = (rng.standard_normal(120) for _ in range(3))
        ctx = BlockContext(
            index=0,
            A=block.A,
            Q=block.Q,
            f_value=block.f_value,
            x_prev=x_prev,
            offset=offset,
            z=z,
            alpha=10.0,
        )
        # r = min(m, n): the projection is the identity, so the update is the
        # unconstrained minimizer of the block subproblem
        expected = (0.1 * x_prev - 10.0 * (offset + z / 10.0)) / 10.1
        np.testing.assert_allclose(block.update(ctx), expected, atol=1e-12)


class TestCustomProblem:
    """Test cases for problems assembled from matrices."""

    def setup_method(self):
        rng = make_rng(11)
        self.A1 = rng.standard_normal((3, 2))
        self.A2 = rng.standard_normal((3, 4))
        self.solver = SolverConfig(alpha=2.0)

    def test_mixed_blocks(self):
        """Test a custom problem with an l1 and a quadratic block."""
        blocks = [
            CustomBlockConfig(A=self.A1, penalty="l1", lam=0.2),
            CustomBlockConfig(A=self.A2, penalty="quadratic", H=np.eye(4)),
        ]
        problem = build_custom_problem(
            blocks, np.eye(3), np.zeros(3), -np.eye(3), np.zeros(3), self.solver
        )
        assert problem.n == (2, 4)
        assert [block.name for block in problem.blocks] == ["x1_l1", "x2_quadratic"]
        it = padmm_iterate(problem, self.solver, Iterate.initial(problem))
        assert it.k == 1

    def test_unknown_penalty(self):
        """Test rejection of an unknown penalty name."""
        with pytest.raises(ProblemConstructionError):
            build_custom_problem(
                [CustomBlockConfig(A=self.A1, penalty="huber")],
                np.eye(3),
                np.zeros(3),
                -np.eye(3),
                np.zeros(3),
                self.solver,
            )

    def test_quadratic_without_hessian(self):
        """Test that a quadratic block needs a Hessian."""
        with pytest.raises(ProblemConstructionError):
            build_custom_problem(
                [CustomBlockConfig(A=self.A1, penalty="quadratic")],
                np.eye(3),
                np.zeros(3),
                -np.eye(3),
                np.zeros(3),
                self.solver,
            )

    def test_bad_scad_theta(self):
        """Test that SCAD theta <= 2 is a construction error."""
        with pytest.raises(ProblemConstructionError):
            build_custom_problem(
                [CustomBlockConfig(A=self.A1, penalty="scad", theta=1.5)],
                np.eye(3),
                np.zeros(3),
                -np.eye(3),
                np.zeros(3),
                self.solver,
            )


if __name__ == "__main__":
    pytest.main([__file__])
