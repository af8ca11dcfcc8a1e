"""
Test cases for the runtime checks and the rate classifier.
"""

import os
import sys

import numpy as np
import pytest

# Add the root directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from src.core import (
    BlockSpec,
    Iterate,
    PadmmSolver,
    ProblemSpec,
    ProximalMatrix,
    SmoothTerm,
    SolverConfig,
    TerminationReason,
    TraceRecord,
    compute_constants,
    solve,
)
from src.diagnostics import (
    CheckReport,
    RateRegime,
    check_dual_bounds,
    check_per_update_decrease,
    check_sufficient_decrease,
    check_z_identity,
    error_sequence,
    finite_length_monitor,
    fit_trace_rate,
    kl_rate_fit,
    range_inclusion_residual,
    run_all_checks,
    stationarity_measure,
)
from src.problems import (
    ScadMcpRegressionConfig,
    SlrConfig,
    build_scad_mcp_regression,
    build_slr_decomposition,
    gen_slr_instance,
    gen_sparse_regression,
    unvec,
)
from src.prox import McpParams, ScadParams, numerical_rank


def make_record(k, L_bar, steps=(1.0, 1.0, 1.0)):
    return TraceRecord(
        k=k,
        L_alpha=L_bar,
        L_bar=L_bar,
        residual_norm=0.0,
        step_x=(steps[0],),
        step_y=steps[1],
        step_z=steps[2],
        d_norm=0.0,
        objective=L_bar,
    )


def regression_setup(penalty, alpha=4.0, beta=1.0, check_level="full", max_iter=5000):
    A, y0, _ = gen_sparse_regression(20, 50, 5, 0.0, 42)
    solver = SolverConfig(
        alpha=alpha,
        beta=beta,
        epsilon0=1.5,
        max_iter=max_iter,
        tol_residual=1e-8,
        tol_step=1e-8,
        check_level=check_level,
    )
    problem = build_scad_mcp_regression(ScadMcpRegressionConfig(A, y0, 1.0, penalty), solver)
    return problem, solver


class TestCheckReport:
    """Test cases for CheckReport."""

    def test_compare(self):
        """Test the pass rule lhs <= rhs + slack."""
        assert CheckReport.compare("c", 1, 1.0, 1.0, 0.0).passed
        assert CheckReport.compare("c", 1, 1.0 + 1e-9, 1.0, 1e-8).passed
        assert not CheckReport.compare("c", 1, 1.1, 1.0, 1e-8).passed

    def test_as_dict(self):
        """Test the dictionary form of a report."""
        data = CheckReport.compare("c", 3, 0.5, 1.0, 0.0, note="x").as_dict()
        assert data["name"] == "c" and data["k"] == 3 and data["passed"] is True
        assert data["note"] == "x"


class TestRateFit:
    """Test cases for the empirical rate classifier."""

    def test_geometric_is_linear(self):
        """Test that a geometric sequence is classified linear."""
        e = 0.5 ** np.arange(1, 41)
        est = kl_rate_fit(e)
        assert est.regime == RateRegime.LINEAR
        assert est.Q_hat == pytest.approx(0.5, rel=1e-6)
        assert est.theta_hat == 0.5
        assert est.k0 == 5
        assert est.points == 32

    def test_power_law_is_sublinear(self):
        """Test that k^-2 is classified sublinear with theta 0.6."""
        k = np.arange(1, 201, dtype=float)
        est = kl_rate_fit(k**-2.0)
        assert est.regime == RateRegime.SUBLINEAR
        assert est.r_hat == pytest.approx(2.0, rel=1e-6)
        assert est.theta_hat == pytest.approx(0.6, rel=1e-6)
        assert est.k0 == 4
        assert est.mu_hat is not None and est.mu_hat > 0

    def test_abrupt_drop_is_finite(self):
        """Test that an exact drop to zero is classified finite."""
        e = np.array([4.0, 3.0, 2.0, 1.0] + [0.0] * 30)
        est = kl_rate_fit(e)
        assert est.regime == RateRegime.FINITE
        assert est.theta_hat == 0.0
        assert est.k0 == 5

    def test_all_zero_is_finite(self):
        """Test that an all-zero sequence is finite."""
        assert kl_rate_fit(np.zeros(25)).regime == RateRegime.FINITE

    def test_short_sequence_is_inconclusive(self):
        """Test that too few points are inconclusive."""
        est = kl_rate_fit(0.5 ** np.arange(1, 12))
        assert est.regime == RateRegime.INCONCLUSIVE
        assert est.points < 20

    def test_noise_is_inconclusive(self):
        """Test that a noisy plateau is inconclusive."""
        rng = np.random.Generator(np.random.PCG64(4))
        e = np.concatenate([[1.0], 0.01 + 0.05 * rng.random(99)])
        assert kl_rate_fit(e).regime == RateRegime.INCONCLUSIVE

    def test_empty(self):
        """Test the empty sequence."""
        assert kl_rate_fit([]).regime == RateRegime.INCONCLUSIVE

    def test_error_sequence_drops_tail(self):
        """Test the error sequence and its dropped tail."""
        values = np.arange(10.0, 0.0, -1.0)
        e = error_sequence(values)
        assert e.size == 9
        assert e[0] == 9.0 and e[-1] == 1.0
        assert error_sequence(np.ones(3)).size == 2

    def test_fit_trace_rate_geometric(self):
        """Test the rate fit straight from a trace."""
        trace = [make_record(k, 3.0 + 0.5**k) for k in range(1, 61)]
        est = fit_trace_rate(trace)
        assert est.regime == RateRegime.LINEAR
        assert est.Q_hat == pytest.approx(0.5, rel=1e-3)


class TestChecksOnSyntheticTraces:
    """Test cases for checks evaluated on hand-built traces."""

    def setup_method(self):
        A, y0, _ = gen_sparse_regression(20, 50, 5, 0.0, 42)
        self.solver = SolverConfig(alpha=4.0, beta=1.0, epsilon0=1.5)
        self.problem = build_scad_mcp_regression(
            ScadMcpRegressionConfig(A, y0, 1.0, ScadParams(lam=0.5, theta=3.7)), self.solver
        )
        self.constants = compute_constants(self.problem, self.solver)

    def test_sufficient_decrease_detects_increase(self):
        """Test that an increase of L_bar fails the decrease check."""
        trace = [make_record(1, 10.0), make_record(2, 9.0, (0.1, 0.1, 0.1)), make_record(3, 9.5)]
        reports = check_sufficient_decrease(self.constants, trace)
        assert [r.passed for r in reports] == [True, False]
        assert not any(r.informational for r in reports)

    def test_sufficient_decrease_informational_when_sigma_not_positive(self):
        """Test that sigma <= 0 makes decrease rows informational."""
        solver = SolverConfig(alpha=4.0, beta=1.5, epsilon0=1.5)
        constants = compute_constants(self.problem, solver)
        assert not constants.sigma_positive
        reports = check_sufficient_decrease(constants, [make_record(1, 1.0), make_record(2, 2.0)])
        assert reports[0].informational and not reports[0].passed

    def test_detail_checks_need_full_level(self):
        """Test that detail checks ask for check_level=full."""
        trace = [make_record(1, 1.0)]
        for reports in (
            check_per_update_decrease(self.solver, trace),
            check_z_identity(trace),
            check_dual_bounds(self.problem, self.solver, self.constants, trace),
        ):
            assert len(reports) == 1
            assert reports[0].informational
            assert "check_level=full" in reports[0].note

    def test_range_inclusion(self):
        """Test the range inclusion residual and the skipped dual bounds."""
        assert range_inclusion_residual(self.problem) == 0.0
        block = BlockSpec(
            A=np.array([[0.0], [1.0]]),
            f_value=lambda x: 0.0,
            update=lambda ctx: ctx.x_prev,
            Q=ProximalMatrix.zeros(1),
        )
        smooth = SmoothTerm(
            h_value=lambda y: 0.0, h_grad=lambda y: 0.0 * y, L_h=1.0, hessian=np.zeros((1, 1))
        )
        problem = ProblemSpec(
            blocks=(block,), smooth=smooth, B=np.array([[1.0], [0.0]]), b=np.zeros(2)
        )
        assert range_inclusion_residual(problem) > 0.1
        solver = SolverConfig(alpha=1.0)
        reports = check_dual_bounds(problem, solver, compute_constants(problem, solver), [])
        assert reports[0].informational
        assert reports[0].note.startswith("skipped")

    def test_finite_length_monitor(self):
        """Test totals and tail ratio for geometric steps."""
        trace = [make_record(k, 0.0, (0.5**k, 0.0, 0.0)) for k in range(1, 41)]
        report = finite_length_monitor(trace)
        assert report.total == pytest.approx(1.0 - 0.5**40)
        assert report.tail_ratio == pytest.approx(0.5, rel=1e-9)
        assert report.final_decile_share < 1e-8

    def test_finite_length_short_trace(self):
        """Test that a short trace has no tail ratio."""
        report = finite_length_monitor([make_record(1, 0.0)])
        assert np.isnan(report.tail_ratio)


@pytest.mark.slow
class TestAcceptanceRuns:
    """Full runs with every check on the bundled applications."""

    def test_scad_regression_passes_all_checks(self):
        """Test that every check passes on the SCAD run."""
        problem, solver = regression_setup(ScadParams(lam=0.5, theta=3.7))
        result = solve(problem, solver)
        assert result.constants.sigma_positive
        assert result.reason == TerminationReason.CONVERGED
        verdict = run_all_checks(problem, solver, result)
        assert verdict.passed, [r.as_dict() for r in verdict.failures[:5]]
        assert all(rec.check_flags.get("sufficient_decrease", True) for rec in result.trace)
        assert stationarity_measure(problem, solver, result.iterate, result.previous) < 1e-6

    @pytest.mark.parametrize("beta", [0.5, 1.5])
    def test_scad_regression_other_beta(self, beta):
        """Test convergence and the bound checks at beta 0.5 and 1.5."""
        problem, solver = regression_setup(ScadParams(lam=0.5, theta=3.7), beta=beta)
        result = solve(problem, solver)
        assert result.reason == TerminationReason.CONVERGED
        verdict = run_all_checks(problem, solver, result)
        bound = [r for r in verdict.reports if r.name == "subgradient_bound"]
        assert bound and all(r.passed for r in bound)
        assert all(r.passed for r in verdict.reports if r.name == "z_identity")

    def test_mcp_regression_passes_all_checks(self):
        """Test that every check passes on the MCP run."""
        problem, solver = regression_setup(McpParams(lam=0.5, theta=3.0))
        result = solve(problem, solver)
        assert result.reason == TerminationReason.CONVERGED
        verdict = run_all_checks(problem, solver, result)
        assert verdict.passed, [r.as_dict() for r in verdict.failures[:5]]

    def test_slr_decomposition(self):
        """Test the checks and constraints on a short decomposition run."""
        A, _, _, _ = gen_slr_instance(30, 30, 2, 20, 42)
        solver = SolverConfig(alpha=10.0, beta=1.0, epsilon0=1.5, max_iter=300, check_level="full")
        problem = build_slr_decomposition(SlrConfig(A, r=2, s=20), solver)
        result = solve(problem, solver)
        assert result.constants.sigma_positive
        verdict = run_all_checks(problem, solver, result)
        assert verdict.passed, [r.as_dict() for r in verdict.failures[:5]]
        it = result.iterate
        assert numerical_rank(unvec(it.x[0], (30, 30))) <= 2
        assert np.count_nonzero(it.x[1]) <= 20
        L_bar = np.array([rec.L_bar for rec in result.trace])
        assert np.all(np.diff(L_bar) <= 1e-8 * np.maximum(1.0, np.abs(L_bar[:-1])))

    @pytest.mark.parametrize(
        "penalty", [ScadParams(lam=0.5, theta=3.7), McpParams(lam=0.5, theta=3.0)]
    )
    def test_regression_rate_is_linear(self, penalty):
        """Test the linear regime with Q in (0, 1) on the SCAD and MCP runs."""
        problem, solver = regression_setup(penalty, check_level="cheap")
        result = solve(problem, solver)
        assert result.reason == TerminationReason.CONVERGED
        estimate = fit_trace_rate(result.trace)
        assert estimate.regime == RateRegime.LINEAR, estimate.as_dict()
        assert 0.0 < estimate.Q_hat < 1.0
        assert estimate.fit_r2 >= 0.95

    def test_scad_step_lengths_are_summable(self):
        """Test the decaying tail and the small final-decile share of the step lengths."""
        problem, solver = regression_setup(ScadParams(lam=0.5, theta=3.7), check_level="cheap")
        report = finite_length_monitor(solve(problem, solver).trace)
        assert report.tail_ratio < 1.0
        assert report.final_decile_share < 0.01

    def test_slr_recovers_observation_with_feasible_iterates(self):
        """Test the reconstruction error after 5000 sweeps and feasibility at every iterate."""
        A, _, _, _ = gen_slr_instance(30, 30, 2, 20, 42)
        solver = SolverConfig(alpha=10.0, beta=1.0, epsilon0=1.5, check_level="off")
        problem = build_slr_decomposition(SlrConfig(A, r=2, s=20), solver)
        engine = PadmmSolver(problem, solver)
        it = Iterate.initial(problem)
        for _ in range(5000):
            it, _ = engine.step(it)
            assert numerical_rank(unvec(it.x[0], (30, 30))) <= 2
            assert np.count_nonzero(it.x[1]) <= 20
        relative = np.linalg.norm(problem.residual(it.x, it.y)) / np.linalg.norm(A)
        assert relative <= 1e-3

    def test_start_at_truth_is_stationary(self):
        """Noise-free SLR instance with a constant smooth part is a fixed point."""
        rng = np.random.Generator(np.random.PCG64(42))
        X1 = rng.standard_normal((10, 2)) @ rng.standard_normal((2, 8))
        X2 = np.zeros((10, 8))
        X2[3, 5], X2[7, 1] = 4.0, -3.0
        Y = np.repeat(rng.standard_normal((10, 1)), 8, axis=1)
        A = X1 + X2 + Y
        solver = SolverConfig(alpha=10.0, max_iter=1)
        problem = build_slr_decomposition(SlrConfig(A, r=2, s=2, exact_prox=True), solver)
        init = Iterate.initial(
            problem,
            x=[X1.reshape(-1, order="F"), X2.reshape(-1, order="F")],
            y=Y.reshape(-1, order="F"),
        )
        result = solve(problem, solver, init)
        np.testing.assert_allclose(result.iterate.x[0], init.x[0], atol=1e-8)
        np.testing.assert_allclose(result.iterate.x[1], init.x[1], atol=1e-8)
        np.testing.assert_allclose(result.iterate.y, init.y, atol=1e-8)
        assert result.trace[0].residual_norm < 1e-8


if __name__ == "__main__":
    pytest.main([__file__])
