#!/usr/bin/env python3
"""
Comprehensive Demo Suite for PADMM Lab

Walks through the bundled applications and prints, for each scenario, the
decrease constants, the termination state, the verification verdict and the
classified convergence regime.

Usage:
    python test_comprehensive_demo.py

Requirements:
    - Dependencies installed (see setup.py)
"""

import time
from typing import List, Tuple

import numpy as np

from src.core import CheckLevel, ProblemSpec, SolverConfig, solve
from src.diagnostics import run_all_checks
from src.problems import (
    ScadMcpRegressionConfig,
    SlrConfig,
    build_scad_mcp_regression,
    build_slr_decomposition,
    gen_slr_instance,
    gen_sparse_regression,
)
from src.prox import McpParams, ScadParams, project_cardinality

Scenario = Tuple[str, ProblemSpec, SolverConfig]


class ComprehensiveDemo:
    """Runs every scenario with check_level=full and prints a summary."""

    def __init__(self, seed: int = 42):
        print("🚀 Initializing Comprehensive Demo Suite...")
        print("=" * 80)
        self.seed = seed
        self.A, self.y0, self.x_true = gen_sparse_regression(20, 50, 5, 0.0, seed)
        self.results: List[Tuple[str, bool, str]] = []
        print(f"✅ Sparse regression instance: A {self.A.shape}, {np.count_nonzero(self.x_true)} nonzeros")
        print("=" * 80)

    def regression(self, penalty, beta: float = 1.0, alpha: float = 4.0) -> Scenario:
        solver = SolverConfig(
            alpha=alpha,
            beta=beta,
            epsilon0=1.5,
            max_iter=5000,
            tol_residual=1e-8,
            tol_step=1e-8,
            check_level="full",
        )
        cfg = ScadMcpRegressionConfig(self.A, self.y0, 1.0, penalty)
        kind = "SCAD" if isinstance(penalty, ScadParams) else "MCP"
        return f"{kind} regression, beta={beta}", build_scad_mcp_regression(cfg, solver), solver

    def decomposition(self) -> Scenario:
        A, _, _, _ = gen_slr_instance(30, 30, 2, 20, self.seed)
        solver = SolverConfig(alpha=10.0, epsilon0=1.5, max_iter=10000, check_level="full")
        return "sparse + low-rank + smooth", build_slr_decomposition(SlrConfig(A, 2, 20), solver), solver

    def run_test_scenario(self, title: str, problem: ProblemSpec, solver: SolverConfig) -> None:
        print(f"\n🎯 {title}")
        print("-" * 60)
        start = time.time()
        result = solve(problem, solver)
        elapsed = time.time() - start
        verdict = run_all_checks(problem, solver, result)
        c = result.constants

        print(f"🔢 sigma={c.sigma:.4g}  rho={c.rho_sub:.4g}  c1={c.c1:.4g}  c4={c.c4:.4g}")
        print(f"⏱️ {result.reason.value} after {len(result.trace)} iterations ({elapsed:.2f}s)")
        if result.trace:
            last = result.trace[-1]
            print(f"📊 objective={last.objective:.10g}  residual={last.residual_norm:.2e}")
        rate = verdict.rate
        print(f"📉 regime={rate.regime.value}  theta={rate.theta_hat}  Q={rate.Q_hat}  R^2={rate.fit_r2:.4f}")
        status = "✅ all applicable checks passed" if verdict.passed else f"❌ {len(verdict.failures)} failed checks"
        print(status)
        self.results.append((title, verdict.passed, rate.regime.value))

    def demo_support_recovery(self) -> None:
        """Compare the SCAD estimate's support with the planted one."""
        _, problem, solver = self.regression(ScadParams(lam=0.5, theta=3.7))
        result = solve(problem, solver.model_copy(update={"check_level": CheckLevel.OFF}))
        x = result.iterate.x[0]
        found = set(np.flatnonzero(project_cardinality(x, 5)))
        planted = set(np.flatnonzero(self.x_true))
        print("\n🎯 Support recovery")
        print("-" * 60)
        print(f"🔍 planted={sorted(planted)}  top-5 of estimate={sorted(found)}")
        print(f"📏 ||x - x_true|| = {np.linalg.norm(x - self.x_true):.3e}")

    def run_full_demo(self) -> None:
        for beta in (0.5, 1.0, 1.5):
            self.run_test_scenario(*self.regression(ScadParams(lam=0.5, theta=3.7), beta=beta))
        self.run_test_scenario(*self.regression(McpParams(lam=0.5, theta=3.0)))
        self.run_test_scenario(*self.decomposition())
        self.demo_support_recovery()

        print("\n🎉 DEMO COMPLETE")
        print("=" * 80)
        for title, passed, regime in self.results:
            print(f"{'✅' if passed else '❌'} {title:<32} regime: {regime}")
        print("=" * 80)


def main() -> None:
    try:
        demo = ComprehensiveDemo()
        demo.run_full_demo()
    except KeyboardInterrupt:
        print("\n\n⏹️ Demo interrupted by user")
    except Exception as e:
        print(f"\n❌ Demo failed with error: {e}")
        print("Please check your environment setup")


if __name__ == "__main__":
    main()
