#!/usr/bin/env python3
"""
Batch command-line front-end for PADMM Lab.

    python -m apps.cli run config/examples/scad_regression.json
    python -m apps.cli verify config/examples/scad_regression.json
    python -m apps.cli rate runs/scad_trace.csv

Exit codes: 0 success (run: converged), 2 run stopped at max_iter,
1 any error or failed verification.
"""

import argparse
import json
import logging
import os
import sys
import tempfile
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.settings import settings
from src.core import (
    CheckLevel,
    PadmmError,
    ProblemSpec,
    ProximalMatrix,
    SolveResult,
    SolverConfig,
    TerminationReason,
    TraceRecord,
    solve,
)
from src.diagnostics import (
    VerificationSummary,
    error_sequence,
    kl_rate_fit,
    run_all_checks,
    stationarity_measure,
)
from src.problems import (
    CustomBlockConfig,
    ScadMcpRegressionConfig,
    SlrConfig,
    build_custom_problem,
    build_scad_mcp_regression,
    build_slr_decomposition,
    default_regression_alpha,
    gen_slr_instance,
    gen_sparse_regression,
)
from src.prox import McpParams, ScadParams

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2


def log_separator(title: str, char: str = "=", width: int = 80) -> None:
    """Create a visual separator for console output"""
    separator = char * width
    title_line = f" {title} ".center(width, char)
    print(f"\n{separator}")
    print(title_line)
    print(separator)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)


class RegressionProblem(_Section):
    kind: Literal["scad_regression", "mcp_regression"]
    m: int = Field(default=20, gt=0)
    n: int = Field(default=50, gt=0)
    k_nnz: int = Field(default=5, ge=0)
    noise_sd: float = Field(default=0.0, ge=0)
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0)
    mu: float = Field(default=1.0, gt=0)
    lam: float = Field(default=0.5, gt=0, alias="lambda")
    theta: float = Field(default=3.7, gt=0)
    tau: Optional[float] = Field(default=None, gt=0)
    declare_weak_convexity: bool = False
    A_path: Optional[str] = None
    y0_path: Optional[str] = None


class SlrProblem(_Section):
    kind: Literal["slr"]
    m: int = Field(default=30, gt=0)
    n: int = Field(default=30, gt=0)
    r: int = Field(default=2, ge=0)
    s: int = Field(default=20, ge=0)
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0)
    alpha1: float = Field(default=1.0, gt=0)
    alpha2: float = Field(default=1.0, gt=0)
    alpha3: float = Field(default=0.1, gt=0)
    q1: float = Field(default=0.1, gt=0)
    q2: float = Field(default=0.1, gt=0)
    lambda_step: Optional[float] = Field(default=None, gt=0)
    gamma_step: Optional[float] = Field(default=None, gt=0)
    exact_prox: bool = False
    A_path: Optional[str] = None


class CustomBlock(_Section):
    A_path: str
    penalty: Literal["l1", "scad", "mcp", "quadratic"]
    lam: float = Field(default=1.0, gt=0, alias="lambda")
    theta: float = Field(default=3.7, gt=0)
    tau: Optional[float] = Field(default=None, gt=0)
    H_path: Optional[str] = None
    g_path: Optional[str] = None


class CustomProblem(_Section):
    kind: Literal["custom"]
    blocks: List[CustomBlock] = Field(min_length=1)
    B_path: str
    b_path: Optional[str] = None
    H_path: str
    g_path: Optional[str] = None


class SolverSection(_Section):
    alpha: Optional[float] = Field(default=None, gt=0)
    beta: float = Field(default=1.0, gt=0, lt=2)
    p_scale: float = Field(default=0.0, ge=0)
    epsilon0: float = Field(default=settings.DEFAULT_EPSILON0, gt=1)
    max_iter: int = Field(default=settings.DEFAULT_MAX_ITER, gt=0)
    tol_residual: float = Field(default=settings.DEFAULT_TOL_RESIDUAL, gt=0)
    tol_step: float = Field(default=settings.DEFAULT_TOL_STEP, gt=0)
    check_level: CheckLevel = CheckLevel(settings.DEFAULT_CHECK_LEVEL)


class OutputSection(_Section):
    trace_path: Optional[str] = None
    report_path: Optional[str] = None
    format: Literal["text", "json"] = "text"


class RunConfig(_Section):
    problem: Union[RegressionProblem, SlrProblem, CustomProblem] = Field(discriminator="kind")
    solver: SolverSection = SolverSection()
    output: OutputSection = OutputSection()


class ConfigError(Exception):
    """Config file could not be read, parsed or validated."""


def _line_of(text: str, loc: Sequence[Union[str, int]]) -> int:
    for key in reversed(loc):
        if isinstance(key, str):
            idx = text.find(f'"{key}"')
            if idx >= 0:
                return text.count("\n", 0, idx) + 1
    return 1


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Parse and validate a RunConfig JSON file.

    Raises:
        ConfigError: with ``file:line:`` anchored messages.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = err.get("loc", ())
            where = ".".join(str(part) for part in loc) or "<root>"
            lines.append(f"{path}:{_line_of(text, loc)}: {where}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from exc


def load_matrix(path: Union[str, Path]) -> np.ndarray:
    """
    Dense matrix from CSV (no header) or the binary layout: rows and cols as
    little-endian int64, then float64 values in column-major order.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    if path.suffix.lower() == ".csv":
        return pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=float)

    data = path.read_bytes()
    if len(data) < 16:
        raise ValueError(f"{path}: binary matrix header truncated")
    rows, cols = (int(v) for v in np.frombuffer(data[:16], dtype="<i8"))
    values = np.frombuffer(data[16:], dtype="<f8")
    if rows < 0 or cols < 0 or values.size != rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} values, found {values.size}")
    return values.reshape((rows, cols), order="F").astype(float)


def write_matrix_binary(path: Union[str, Path], M: np.ndarray) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    header = np.array(M.shape, dtype="<i8").tobytes()
    _atomic_write_bytes(Path(path), header + M.ravel(order="F").astype("<f8").tobytes())


def load_vector(path: Union[str, Path]) -> np.ndarray:
    return load_matrix(path).ravel(order="F")


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_frame(trace: Sequence[TraceRecord]) -> pd.DataFrame:
    rows = [
        (
            rec.k,
            rec.L_alpha,
            rec.L_bar,
            rec.residual_norm,
            rec.step_x_total,
            rec.step_y,
            rec.step_z,
            rec.d_norm,
            rec.objective,
        )
        for rec in trace
    ]
    frame = pd.DataFrame(rows, columns=list(settings.TRACE_COLUMNS))
    return frame.astype({"k": "int64"})


def write_trace(path: Union[str, Path], trace: Sequence[TraceRecord]) -> None:
    """CSV trace, 17 significant digits, written atomically."""
    text = trace_frame(trace).to_csv(
        index=False, float_format=settings.TRACE_FLOAT_FORMAT, lineterminator="\n"
    )
    _atomic_write_bytes(Path(path), text.encode("utf-8"))


def read_trace(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    if "L_bar" not in frame.columns:
        raise ValueError(f"{path}: trace has no L_bar column")
    return frame


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> None:
    _atomic_write_bytes(Path(path), (json.dumps(payload, indent=2) + "\n").encode("utf-8"))


def _resolve(base: Path, relative: str) -> Path:
    candidate = Path(relative)
    return candidate if candidate.is_absolute() else base / candidate


def _solver_config(section: SolverSection, alpha: float, q: int, full: bool) -> SolverConfig:
    P = ProximalMatrix.scaled_identity(q, section.p_scale) if section.p_scale > 0 else None
    return SolverConfig(
        alpha=alpha,
        beta=section.beta,
        P=P,
        epsilon0=section.epsilon0,
        max_iter=section.max_iter,
        tol_residual=section.tol_residual,
        tol_step=section.tol_step,
        check_level=CheckLevel.FULL if full else section.check_level,
    )


def build_from_config(
    cfg: RunConfig, base: Path, seed: Optional[int] = None, full: bool = False
) -> Tuple[ProblemSpec, SolverConfig]:
    """
    Assemble (problem, solver) from a validated RunConfig.

    Args:
        cfg: Validated run configuration
        base: Directory that relative matrix paths resolve against
        seed: Overrides the problem's generator seed when given
        full: Force check_level=full
    """
    prob = cfg.problem
    if isinstance(prob, RegressionProblem):
        if prob.A_path is not None:
            A = load_matrix(_resolve(base, prob.A_path))
            if prob.y0_path is None:
                raise ConfigError("problem.y0_path is required with problem.A_path")
            y0 = load_vector(_resolve(base, prob.y0_path))
        else:
            A, y0, _ = gen_sparse_regression(
                prob.m, prob.n, prob.k_nnz, prob.noise_sd, seed if seed is not None else prob.seed
            )
        penalty: Union[ScadParams, McpParams] = (
            ScadParams(lam=prob.lam, theta=prob.theta)
            if prob.kind == "scad_regression"
            else McpParams(lam=prob.lam, theta=prob.theta)
        )
        alpha = cfg.solver.alpha or default_regression_alpha(prob.mu)
        solver = _solver_config(cfg.solver, alpha, A.shape[0], full)
        reg = ScadMcpRegressionConfig(
            A_meas=A,
            y0=y0,
            mu=prob.mu,
            penalty=penalty,
            tau=prob.tau,
            declare_weak_convexity=prob.declare_weak_convexity,
        )
        return build_scad_mcp_regression(reg, solver), solver

    if isinstance(prob, SlrProblem):
        if prob.A_path is not None:
            A_data = load_matrix(_resolve(base, prob.A_path))
        else:
            A_data, _, _, _ = gen_slr_instance(
                prob.m, prob.n, prob.r, prob.s, seed if seed is not None else prob.seed
            )
        solver = _solver_config(cfg.solver, cfg.solver.alpha or 1.0, A_data.size, full)
        slr = SlrConfig(
            A_data=A_data,
            r=prob.r,
            s=prob.s,
            alpha1=prob.alpha1,
            alpha2=prob.alpha2,
            alpha3=prob.alpha3,
            q1=prob.q1,
            q2=prob.q2,
            lambda_step=prob.lambda_step,
            gamma_step=prob.gamma_step,
            exact_prox=prob.exact_prox,
        )
        return build_slr_decomposition(slr, solver), solver

    blocks = [
        CustomBlockConfig(
            A=load_matrix(_resolve(base, blk.A_path)),
            penalty=blk.penalty,
            lam=blk.lam,
            theta=blk.theta,
            tau=blk.tau,
            H=load_matrix(_resolve(base, blk.H_path)) if blk.H_path else None,
            g=load_vector(_resolve(base, blk.g_path)) if blk.g_path else None,
        )
        for blk in prob.blocks
    ]
    B = load_matrix(_resolve(base, prob.B_path))
    H = load_matrix(_resolve(base, prob.H_path))
    g = load_vector(_resolve(base, prob.g_path)) if prob.g_path else np.zeros(B.shape[1])
    b = load_vector(_resolve(base, prob.b_path)) if prob.b_path else np.zeros(B.shape[0])
    solver = _solver_config(cfg.solver, cfg.solver.alpha or 1.0, B.shape[1], full)
    return build_custom_problem(blocks, H, g, B, b, solver), solver


def _prepare(
    config_path: str, seed: Optional[int], full: bool
) -> Tuple[RunConfig, ProblemSpec, SolverConfig]:
    cfg = load_run_config(config_path)
    problem, solver = build_from_config(cfg, Path(config_path).parent, seed=seed, full=full)
    return cfg, problem, solver


def run_summary(problem: ProblemSpec, solver: SolverConfig, result: SolveResult) -> Dict[str, Any]:
    it, prev = result.iterate, result.previous
    last = result.trace[-1] if result.trace else None
    return OrderedDict(
        problem=problem.name,
        termination=result.reason.value,
        iterations=len(result.trace),
        final_objective=last.objective if last else problem.objective(it.x, it.y),
        residual=(
            last.residual_norm if last else float(np.linalg.norm(problem.residual(it.x, it.y)))
        ),
        stationarity=stationarity_measure(problem, solver, it, prev if result.trace else None),
        message=result.message,
        constants=result.constants.summary(),
    )


def _print_summary(summary: Dict[str, Any]) -> None:
    status = "✅" if summary["termination"] == TerminationReason.CONVERGED.value else "⚠️"
    print(
        f"{status} Termination: {summary['termination']} "
        f"after {summary['iterations']} iterations"
    )
    print(f"📊 Objective: {summary['final_objective']:.10g}")
    print(f"📏 Residual: {summary['residual']:.3e}")
    print(f"🎯 Stationarity: {summary['stationarity']:.3e}")
    constants = summary["constants"]
    print(
        f"🔢 sigma={constants['sigma']:.4g} (positive: {constants['sigma_positive']}), "
        f"rho={constants['rho_sub']:.4g}, rho_tilde={constants['rho_tilde']:.4g}"
    )
    if summary["message"]:
        print(f"❌ {summary['message']}")


def cmd_run(config_path: str, seed: Optional[int] = None) -> int:
    """Solve, write the trace and the summary; 0 converged, 2 max_iter, 1 error."""
    log_separator(f"PADMM RUN - {config_path}")
    try:
        cfg, problem, solver = _prepare(config_path, seed, full=False)
        result = solve(problem, solver)
        summary = run_summary(problem, solver, result)
        if cfg.output.trace_path:
            write_trace(_resolve(Path(config_path).parent, cfg.output.trace_path), result.trace)
        if cfg.output.report_path:
            write_json(_resolve(Path(config_path).parent, cfg.output.report_path), summary)
    except ConfigError as exc:
        print(f"❌ {exc}")
        return EXIT_ERROR
    except (PadmmError, ValueError, OSError) as exc:
        logger.error(f"Run failed: {exc}")
        print(f"❌ {exc}")
        return EXIT_ERROR

    if cfg.output.format == "json":
        print(json.dumps(summary, indent=2))
    else:
        _print_summary(summary)

    if result.reason == TerminationReason.CONVERGED:
        return EXIT_OK
    if result.reason == TerminationReason.MAX_ITER:
        return EXIT_MAX_ITER
    return EXIT_ERROR


def _print_check_table(verdict: VerificationSummary) -> None:
    grouped: "OrderedDict[str, List[int]]" = OrderedDict()
    for report in verdict.reports:
        counts = grouped.setdefault(report.name, [0, 0, 0])
        counts[0] += 1
        if not report.passed:
            counts[1 if not report.informational else 2] += 1
    print(f"{'check':<22}{'evaluated':>10}{'failed':>8}{'info-only':>11}")
    print("-" * 51)
    for name, (total, failed, info) in grouped.items():
        print(f"{name:<22}{total:>10}{failed:>8}{info:>11}")
    for report in verdict.failures[:20]:
        print(
            f"❌ {report.name} k={report.k}: lhs={report.lhs:.6e} "
            f"rhs={report.rhs:.6e} slack={report.slack:.1e}"
        )


def cmd_verify(config_path: str, seed: Optional[int] = None) -> int:
    """Run with check_level=full and every diagnostic; 0 iff all applicable checks pass."""
    log_separator(f"PADMM VERIFY - {config_path}")
    try:
        cfg, problem, solver = _prepare(config_path, seed, full=True)
        result = solve(problem, solver)
        if result.reason == TerminationReason.ORACLE_FAILURE:
            print(f"❌ {result.message}")
            return EXIT_ERROR
        verdict = run_all_checks(problem, solver, result)
        base = Path(config_path).parent
        if cfg.output.trace_path:
            write_trace(_resolve(base, cfg.output.trace_path), result.trace)
        if cfg.output.report_path:
            write_json(
                _resolve(base, cfg.output.report_path),
                {
                    "passed": verdict.passed,
                    "summary": run_summary(problem, solver, result),
                    "rate": verdict.rate.as_dict(),
                    "reports": [r.as_dict() for r in verdict.reports],
                },
            )
    except ConfigError as exc:
        print(f"❌ {exc}")
        return EXIT_ERROR
    except (PadmmError, ValueError, OSError) as exc:
        logger.error(f"Verification failed to run: {exc}")
        print(f"❌ {exc}")
        return EXIT_ERROR

    log_separator("CHECKS", "-", 60)
    _print_check_table(verdict)
    fl = verdict.finite_length
    print(f"📈 Step-length total {fl.total:.6g}, tail ratio {fl.tail_ratio:.4g}")
    print(f"📉 Rate regime: {verdict.rate.regime.value} (R^2={verdict.rate.fit_r2:.4f})")
    print("✅ All applicable checks passed" if verdict.passed else "❌ Some checks failed")
    return EXIT_OK if verdict.passed else EXIT_ERROR


def cmd_rate(trace_path: str) -> int:
    """Fit the rate regime of a trace's L_bar column and print it as JSON."""
    try:
        frame = read_trace(trace_path)
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        print(f"❌ cannot read trace: {exc}")
        return EXIT_ERROR
    try:
        L_bar = frame["L_bar"].to_numpy(dtype=float)
    except ValueError as exc:
        print(f"❌ L_bar column is not numeric: {exc}")
        return EXIT_ERROR
    estimate = kl_rate_fit(error_sequence(L_bar))
    print(json.dumps(estimate.as_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="padmm", description=settings.APP_NAME)
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Override the problem generator seed from the config",
    )
    parser.add_argument(
        "--log-level",
        default=settings.LOG_LEVEL,
        help="Logging level (default from PADMM_LOG_LEVEL)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="Solve and write trace + summary")
    run.add_argument("config", help="RunConfig JSON file")
    verify = sub.add_parser("verify", help="Solve with full checks and report them")
    verify.add_argument("config", help="RunConfig JSON file")
    rate = sub.add_parser("rate", help="Classify the convergence regime of a trace")
    rate.add_argument("trace", help="Trace CSV written by run or verify")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    if args.seed is not None and args.seed < 0:
        print("❌ --seed must be a nonnegative integer")
        return EXIT_ERROR
    if args.command == "run":
        return cmd_run(args.config, args.seed)
    if args.command == "verify":
        return cmd_verify(args.config, args.seed)
    return cmd_rate(args.trace)


if __name__ == "__main__":
    sys.exit(main())
