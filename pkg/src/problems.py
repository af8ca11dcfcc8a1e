"""
Problem builders and synthetic instance generators.

Two applications are wired into ``ProblemSpec``:

* SCAD/MCP penalized least squares split as x - y = 0 (``A x - y = 0`` with
  ``B = -I``), with a prox-linear x oracle and an exact quadratic y solve.
* Sparse plus low-rank plus smooth matrix decomposition with three blocks
  (rank-constrained, cardinality-constrained, smooth), matrices flattened in
  column-major order.

Random instances use ``numpy.random.Generator(PCG64(seed))``.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import NDArray

from config.settings import settings

from .core import (
    BlockContext,
    BlockSpec,
    OracleError,
    PadmmError,
    ProblemSpec,
    ProximalMatrix,
    SmoothTerm,
    SolverConfig,
    Vector,
    YContext,
    exact_quadratic_update,
    prox_linear_block,
)
from .prox import (
    McpParams,
    ScadParams,
    l1_prox,
    mcp_prox,
    mcp_value,
    numerical_rank,
    project_cardinality,
    project_rank,
    scad_prox,
    scad_value,
)

logger = logging.getLogger(__name__)

Penalty = Union[ScadParams, McpParams]


class ProblemConstructionError(PadmmError, ValueError):
    """Builder inputs violate the application's requirements."""


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator, stable across platforms for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ScadMcpRegressionConfig:
    """
    min sum_j r(x_j) + mu/2 ||A x - y0||^2 with r SCAD or MCP.

    tau=None picks PROX_LINEAR_TAU_FACTOR * lambda_max(A'A).
    """

    A_meas: NDArray[np.float64]
    y0: NDArray[np.float64]
    mu: float
    penalty: Penalty
    tau: Optional[float] = None
    declare_weak_convexity: bool = False


def penalty_value(penalty: Penalty) -> Callable[[Vector], float]:
    if isinstance(penalty, ScadParams):
        return lambda x: float(np.sum(scad_value(x, penalty)))
    return lambda x: float(np.sum(mcp_value(x, penalty)))


def penalty_prox(penalty: Penalty) -> Callable[[Vector, float], Vector]:
    if isinstance(penalty, ScadParams):
        return lambda v, rho: np.asarray(scad_prox(v, penalty, rho))
    return lambda v, rho: np.asarray(mcp_prox(v, penalty, rho))


def penalty_weak_convexity(penalty: Penalty) -> float:
    """SCAD is 1/(theta-1)-weakly convex, MCP is 1/theta-weakly convex."""
    if isinstance(penalty, ScadParams):
        return 1.0 / (penalty.theta - 1.0)
    return 1.0 / penalty.theta


def default_regression_alpha(mu: float) -> float:
    return settings.REGRESSION_ALPHA_FACTOR * mu


def quadratic_fit_term(y0: Vector, mu: float) -> SmoothTerm:
    """h(y) = mu/2 ||y - y0||^2."""
    y0 = np.asarray(y0, dtype=float)
    return SmoothTerm(
        h_value=lambda y: float(0.5 * mu * np.sum((y - y0) ** 2)),
        h_grad=lambda y: mu * (y - y0),
        L_h=float(mu),
        hessian=mu * np.eye(y0.size),
    )


def build_scad_mcp_regression(
    cfg: ScadMcpRegressionConfig, solver: SolverConfig
) -> ProblemSpec:
    """
    One prox-linear x block (A = A_meas), h(y) = mu/2 ||y - y0||^2, B = -I, b = 0.

    Raises:
        ProblemConstructionError: bad shapes, mu <= 0 or tau too small.
    """
    A = np.asarray(cfg.A_meas, dtype=float)
    y0 = np.asarray(cfg.y0, dtype=float).ravel()
    if A.ndim != 2 or A.shape[0] != y0.size:
        raise ProblemConstructionError(f"A_meas {A.shape} does not match y0 of length {y0.size}")
    if cfg.mu <= 0:
        raise ProblemConstructionError(f"mu must be positive, got {cfg.mu}")
    m, n = A.shape

    lam_max = float(scipy.linalg.eigvalsh(A.T @ A)[-1])
    tau = cfg.tau if cfg.tau is not None else settings.PROX_LINEAR_TAU_FACTOR * lam_max
    kind = "scad" if isinstance(cfg.penalty, ScadParams) else "mcp"
    weak = penalty_weak_convexity(cfg.penalty) if cfg.declare_weak_convexity else None
    try:
        block = prox_linear_block(
            A,
            penalty_value(cfg.penalty),
            penalty_prox(cfg.penalty),
            tau=tau,
            alpha=solver.alpha,
            weak_convexity=weak,
            name=f"x_{kind}",
        )
    except ValueError as exc:
        raise ProblemConstructionError(str(exc)) from exc

    logger.info(f"Built {kind} regression: m={m}, n={n}, mu={cfg.mu}, tau={tau:.6g}")
    return ProblemSpec(
        blocks=(block,),
        smooth=quadratic_fit_term(y0, cfg.mu),
        B=-np.eye(m),
        b=np.zeros(m),
        name=f"{kind}_regression",
    )


def gen_sparse_regression(
    m: int, n: int, k_nnz: int, noise_sd: float, seed: int
) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """
    Gaussian A / sqrt(m), k_nnz-sparse truth with magnitudes in [0.5, 1.5].

    Returns:
        (A, y0, x_true) with y0 = A x_true + noise_sd * noise
    """
    if not 0 <= k_nnz <= n:
        raise ProblemConstructionError(f"k_nnz={k_nnz} must lie in [0, {n}]")
    rng = make_rng(seed)
    A = rng.standard_normal((m, n)) / np.sqrt(m)
    support = rng.choice(n, size=k_nnz, replace=False)
    magnitudes = rng.uniform(0.5, 1.5, size=k_nnz)
    signs = rng.choice([-1.0, 1.0], size=k_nnz)
    x_true = np.zeros(n)
    x_true[support] = signs * magnitudes
    noise = rng.standard_normal(m)
    y0 = A @ x_true
    if noise_sd > 0:
        y0 = y0 + noise_sd * noise
    return A, y0, x_true


@dataclass(frozen=True)
class SlrConfig:
    """
    min a1 d(rank X1 <= r) + a2 d(nnz X2 <= s) + a3 sum_i ||Y_{i+1} - Y_i||^2
    s.t. X1 + X2 + Y = A_data.

    Step sizes default to SLR_STEP_FRACTION / (alpha + q).
    """

    A_data: NDArray[np.float64]
    r: int
    s: int
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 0.1
    q1: float = 0.1
    q2: float = 0.1
    lambda_step: Optional[float] = None
    gamma_step: Optional[float] = None
    exact_prox: bool = False


def vec(X: NDArray[np.float64]) -> NDArray[np.float64]:
    """Column-major vectorization."""
    return np.asarray(X, dtype=float).reshape(-1, order="F")


def unvec(v: NDArray[np.float64], shape: Tuple[int, int]) -> NDArray[np.float64]:
    return np.asarray(v, dtype=float).reshape(shape, order="F")


def column_difference_term(shape: Tuple[int, int], alpha3: float) -> SmoothTerm:
    """h(Y) = alpha3 sum_i ||Y_{i+1} - Y_i||^2 over consecutive columns; L_h = 8 alpha3."""

    def h_value(y: Vector) -> float:
        d = np.diff(unvec(y, shape), axis=1)
        return float(alpha3 * np.sum(d * d))

    def h_grad(y: Vector) -> Vector:
        d = np.diff(unvec(y, shape), axis=1)
        G = np.zeros(shape)
        G[:, :-1] -= d
        G[:, 1:] += d
        return vec(2.0 * alpha3 * G)

    return SmoothTerm(h_value=h_value, h_grad=h_grad, L_h=8.0 * alpha3)


def tridiagonal_y_update(shape: Tuple[int, int], alpha3: float) -> Callable[[YContext], Vector]:
    """
    Exact y oracle for B = I and P = p I: each row of Y solves
    ((alpha + p) I + 2 alpha3 L) y_row = rhs_row with L the path Laplacian.
    """
    m, n = shape
    lap_diag = np.full(n, 2.0)
    if n == 1:
        lap_diag[:] = 0.0
    else:
        lap_diag[0] = lap_diag[-1] = 1.0

    def update(ctx: YContext) -> Vector:
        if ctx.P.dense is not None:
            raise OracleError("y", "tridiagonal solve needs P = p I")
        shift = ctx.alpha + ctx.P.scale
        bands = np.zeros((3, n))
        bands[0, 1:] = -2.0 * alpha3
        bands[1, :] = shift + 2.0 * alpha3 * lap_diag
        bands[2, :-1] = -2.0 * alpha3
        rhs = -ctx.z - ctx.alpha * ctx.offset + ctx.P.scale * ctx.y_prev
        R = unvec(rhs, shape)
        Y = scipy.linalg.solve_banded((1, 1), bands, R.T).T
        return vec(Y)

    return update


def _matrix_block_update(
    project: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    shape: Tuple[int, int],
    step: float,
    q: float,
    exact: bool,
) -> Callable[[BlockContext], Vector]:
    """
    Projected update of one identity-coupled matrix block.

    Gradient form: proj(X - step * alpha * (X + W)) with W = offset + z/alpha.
    Exact form: proj((q X - alpha W) / (alpha + q)).
    """

    def update(ctx: BlockContext) -> Vector:
        W = ctx.target()
        if exact:
            point = (q * ctx.x_prev - ctx.alpha * W) / (ctx.alpha + q)
        else:
            point = ctx.x_prev - step * ctx.alpha * (ctx.x_prev + W)
        return vec(project(unvec(point, shape)))

    return update


def _indicator(
    feasible: Callable[[NDArray[np.float64]], bool], shape: Tuple[int, int]
) -> Callable[[Vector], float]:
    """0 on the feasible set, +inf elsewhere; positive weights leave it unchanged."""

    def value(x: Vector) -> float:
        return 0.0 if feasible(unvec(x, shape)) else float("inf")

    return value


def build_slr_decomposition(cfg: SlrConfig, solver: SolverConfig) -> ProblemSpec:
    """
    Three identity-coupled blocks over vec(X1), vec(X2), vec(Y) with b = -vec(A_data).

    Raises:
        ProblemConstructionError: r or s out of range, nonpositive weights or
            step sizes outside (0, 1/(alpha + q)).
    """
    A_data = np.asarray(cfg.A_data, dtype=float)
    if A_data.ndim != 2:
        raise ProblemConstructionError("A_data must be a matrix")
    m, n = A_data.shape
    shape = (m, n)
    if not 0 <= cfg.r <= min(m, n):
        raise ProblemConstructionError(f"rank bound r={cfg.r} outside [0, {min(m, n)}]")
    if not 0 <= cfg.s <= m * n:
        raise ProblemConstructionError(f"cardinality bound s={cfg.s} outside [0, {m * n}]")
    for label in ("alpha1", "alpha2", "alpha3", "q1", "q2"):
        if getattr(cfg, label) <= 0:
            raise ProblemConstructionError(f"{label} must be positive")
    P = solver.proximal_y(m * n)
    if P.dense is not None:
        raise ProblemConstructionError("the decomposition y solve supports P = p I only")

    alpha = solver.alpha
    lambda_step = (
        cfg.lambda_step
        if cfg.lambda_step is not None
        else settings.SLR_STEP_FRACTION / (alpha + cfg.q1)
    )
    gamma_step = (
        cfg.gamma_step
        if cfg.gamma_step is not None
        else settings.SLR_STEP_FRACTION / (alpha + cfg.q2)
    )
    if not 0 < lambda_step < 1.0 / (alpha + cfg.q1):
        raise ProblemConstructionError(f"lambda_step={lambda_step} outside (0, 1/(alpha+q1))")
    if not 0 < gamma_step < 1.0 / (alpha + cfg.q2):
        raise ProblemConstructionError(f"gamma_step={gamma_step} outside (0, 1/(alpha+q2))")

    N = m * n
    eye = sp.identity(N, format="csr")
    low_rank = BlockSpec(
        A=eye,
        f_value=_indicator(lambda X: numerical_rank(X) <= cfg.r, shape),
        update=_matrix_block_update(
            lambda X: project_rank(X, cfg.r), shape, lambda_step, cfg.q1, cfg.exact_prox
        ),
        Q=ProximalMatrix.scaled_identity(N, cfg.q1),
        name="low_rank",
    )
    sparse = BlockSpec(
        A=eye,
        f_value=_indicator(lambda X: np.count_nonzero(X) <= cfg.s, shape),
        update=_matrix_block_update(
            lambda X: project_cardinality(X, cfg.s), shape, gamma_step, cfg.q2, cfg.exact_prox
        ),
        Q=ProximalMatrix.scaled_identity(N, cfg.q2),
        name="sparse",
    )
    logger.info(
        f"Built sparse+low-rank decomposition: {m}x{n}, r={cfg.r}, s={cfg.s}, "
        f"exact_prox={cfg.exact_prox}"
    )
    return ProblemSpec(
        blocks=(low_rank, sparse),
        smooth=column_difference_term(shape, cfg.alpha3),
        B=eye,
        b=-vec(A_data),
        y_update=tridiagonal_y_update(shape, cfg.alpha3),
        name="slr_decomposition",
    )


def gen_slr_instance(
    m: int, n: int, r: int, s: int, seed: int
) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """
    Rank-r X1 = U V', s-sparse X2 with magnitudes in [1, 2], Y linear across
    columns with a small slope.

    Returns:
        (A, X1, X2, Y) with A = X1 + X2 + Y
    """
    if not 0 <= r <= min(m, n):
        raise ProblemConstructionError(f"r={r} outside [0, {min(m, n)}]")
    if not 0 <= s <= m * n:
        raise ProblemConstructionError(f"s={s} outside [0, {m * n}]")
    rng = make_rng(seed)
    U = rng.standard_normal((m, r))
    V = rng.standard_normal((n, r))
    X1 = U @ V.T

    X2 = np.zeros(m * n)
    positions = rng.choice(m * n, size=s, replace=False)
    X2[positions] = rng.choice([-1.0, 1.0], size=s) * rng.uniform(1.0, 2.0, size=s)
    X2 = X2.reshape((m, n), order="F")

    base = rng.standard_normal((m, 1))
    slope = 0.1 * rng.standard_normal((m, 1))
    t = np.linspace(0.0, 1.0, n)[np.newaxis, :]
    Y = base + slope * t
    return X1 + X2 + Y, X1, X2, Y


@dataclass(frozen=True)
class CustomBlockConfig:
    """One block: coupling matrix and penalty kind with its parameters."""

    A: NDArray[np.float64]
    penalty: str
    lam: float = 1.0
    theta: float = 3.7
    tau: Optional[float] = None
    H: Optional[NDArray[np.float64]] = None
    g: Optional[NDArray[np.float64]] = None


def build_custom_problem(
    blocks: Sequence[CustomBlockConfig],
    hessian: NDArray[np.float64],
    linear: NDArray[np.float64],
    B: NDArray[np.float64],
    b: NDArray[np.float64],
    solver: SolverConfig,
) -> ProblemSpec:
    """
    Blocks with penalty l1 | scad | mcp (prox-linear) or quadratic (exact),
    smooth h(y) = 1/2 y'Hy + g'y.

    Raises:
        ProblemConstructionError: unknown penalty or inconsistent shapes.
    """
    hessian = np.asarray(hessian, dtype=float)
    linear = np.asarray(linear, dtype=float).ravel()
    if hessian.shape != (linear.size, linear.size):
        raise ProblemConstructionError("H must be q x q with q = len(g)")
    eigs = scipy.linalg.eigvalsh(0.5 * (hessian + hessian.T))
    L_h = float(max(np.max(np.abs(eigs)), 1e-12))
    smooth = SmoothTerm(
        h_value=lambda y: float(0.5 * y @ (hessian @ y) + linear @ y),
        h_grad=lambda y: hessian @ y + linear,
        L_h=L_h,
        hessian=hessian,
    )

    specs: List[BlockSpec] = []
    for i, blk in enumerate(blocks):
        A = np.asarray(blk.A, dtype=float)
        lam_max = float(scipy.linalg.eigvalsh(A.T @ A)[-1])
        tau = blk.tau if blk.tau is not None else settings.PROX_LINEAR_TAU_FACTOR * lam_max
        try:
            if blk.penalty == "quadratic":
                if blk.H is None:
                    raise ProblemConstructionError(f"block {i}: quadratic penalty needs H")
                H = np.asarray(blk.H, dtype=float)
                g = np.zeros(A.shape[1]) if blk.g is None else np.asarray(blk.g, dtype=float)
                specs.append(
                    BlockSpec(
                        A=A,
                        f_value=lambda x, H=H, g=g: float(0.5 * x @ (H @ x) + g @ x),
                        update=exact_quadratic_update(H, g),
                        Q=ProximalMatrix.zeros(A.shape[1]),
                        name=f"x{i + 1}_quadratic",
                    )
                )
            elif blk.penalty == "l1":
                lam = blk.lam
                specs.append(
                    prox_linear_block(
                        A,
                        lambda x, lam=lam: float(lam * np.sum(np.abs(x))),
                        lambda v, rho, lam=lam: np.asarray(l1_prox(v, lam, rho)),
                        tau=tau,
                        alpha=solver.alpha,
                        name=f"x{i + 1}_l1",
                    )
                )
            elif blk.penalty in ("scad", "mcp"):
                params: Penalty = (
                    ScadParams(lam=blk.lam, theta=blk.theta)
                    if blk.penalty == "scad"
                    else McpParams(lam=blk.lam, theta=blk.theta)
                )
                specs.append(
                    prox_linear_block(
                        A,
                        penalty_value(params),
                        penalty_prox(params),
                        tau=tau,
                        alpha=solver.alpha,
                        name=f"x{i + 1}_{blk.penalty}",
                    )
                )
            else:
                raise ProblemConstructionError(f"block {i}: unknown penalty {blk.penalty!r}")
        except ProblemConstructionError:
            raise
        except ValueError as exc:
            raise ProblemConstructionError(f"block {i}: {exc}") from exc

    try:
        return ProblemSpec(
            blocks=tuple(specs),
            smooth=smooth,
            B=np.asarray(B, dtype=float),
            b=np.asarray(b, dtype=float).ravel(),
            name="custom",
        )
    except ValueError as exc:
        raise ProblemConstructionError(str(exc)) from exc
