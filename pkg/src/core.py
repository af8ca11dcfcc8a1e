"""
Proximal ADMM engine.

Problem and solver data model, the Gauss-Seidel PADMM sweep, augmented and
modified Lagrangian evaluations, the subgradient surrogate and the constants
that govern the sufficient-decrease theory.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.settings import settings

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]
Matrix = Union[NDArray[np.float64], sp.spmatrix]
ArrayLikeMatrix = Union[NDArray[np.float64], Sequence[Sequence[float]]]


class PadmmError(Exception):
    """Base class for solver errors."""


class DimensionMismatchError(PadmmError, ValueError):
    """Array shapes disagree with the problem dimensions."""


class ProblemSpecError(PadmmError, ValueError):
    """Problem data violates a structural requirement."""


class ConstantsUndefinedError(PadmmError):
    """The decrease constants cannot be formed for this configuration."""


class OracleError(PadmmError):
    """A subproblem oracle failed or returned an unusable point."""

    def __init__(self, block: Union[int, str], message: str):
        self.block = block
        super().__init__(f"oracle for block {block} failed: {message}")


def to_dense(M: Matrix) -> NDArray[np.float64]:
    if sp.issparse(M):
        return np.asarray(M.toarray(), dtype=float)
    return np.asarray(M, dtype=float)


def spectral_norm(M: Matrix) -> float:
    """Largest singular value of a dense or sparse matrix."""
    if min(M.shape) == 0:
        return 0.0
    if sp.issparse(M) and M.shape[0] * M.shape[1] > 4_000_000:
        from scipy.sparse.linalg import svds

        return float(svds(M, k=1, return_singular_vectors=False)[0])
    return float(scipy.linalg.svdvals(to_dense(M))[0])


def smallest_positive_eigenvalue(
    S: NDArray[np.float64], rtol: float = settings.EIGEN_ZERO_RTOL
) -> float:
    """Smallest eigenvalue of symmetric S above rtol * largest magnitude; 0 if none."""
    eigs = scipy.linalg.eigvalsh(S)
    scale = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    positive = eigs[eigs > rtol * scale]
    return float(positive.min()) if positive.size else 0.0


@dataclass(frozen=True)
class ProximalMatrix:
    """
    Symmetric PSD weighting matrix of a proximal term.

    Stored either as ``scale * I`` (``dense is None``) or as a dense array.
    """

    dim: int
    scale: float = 0.0
    dense: Optional[NDArray[np.float64]] = None

    @classmethod
    def zeros(cls, dim: int) -> "ProximalMatrix":
        return cls(dim=dim, scale=0.0)

    @classmethod
    def scaled_identity(cls, dim: int, scale: float) -> "ProximalMatrix":
        if scale < 0:
            raise ProblemSpecError(f"proximal scale must be nonnegative, got {scale}")
        return cls(dim=dim, scale=float(scale))

    @classmethod
    def from_dense(cls, M: ArrayLikeMatrix) -> "ProximalMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatchError(f"proximal matrix must be square, got {M.shape}")
        if not np.allclose(M, M.T, rtol=0.0, atol=settings.PSD_TOL * max(1.0, np.abs(M).max())):
            raise ProblemSpecError("proximal matrix must be symmetric")
        M = 0.5 * (M + M.T)
        eigs = scipy.linalg.eigvalsh(M)
        norm = float(np.max(np.abs(eigs))) if eigs.size else 0.0
        if eigs.size and eigs[0] < -settings.PSD_TOL * norm:
            raise ProblemSpecError(
                f"proximal matrix is not PSD (smallest eigenvalue {eigs[0]:.3e})"
            )
        return cls(dim=M.shape[0], dense=M)

    @property
    def is_zero(self) -> bool:
        return self.dense is None and self.scale == 0.0

    def apply(self, v: Vector) -> Vector:
        if self.dense is None:
            return self.scale * v
        return self.dense @ v

    def quad(self, v: Vector) -> float:
        """v' M v."""
        if self.dense is None:
            return float(self.scale * (v @ v))
        return float(v @ (self.dense @ v))

    def norm(self) -> float:
        if self.dense is None:
            return abs(self.scale)
        return float(np.max(np.abs(scipy.linalg.eigvalsh(self.dense)))) if self.dim else 0.0

    def min_eigenvalue(self) -> float:
        if self.dense is None:
            return self.scale
        return float(scipy.linalg.eigvalsh(self.dense)[0]) if self.dim else 0.0

    def to_dense(self) -> NDArray[np.float64]:
        if self.dense is None:
            return self.scale * np.eye(self.dim)
        return self.dense.copy()


@dataclass(frozen=True)
class BlockContext:
    """Data handed to a block oracle for the x_i subproblem of one sweep."""

    index: int
    A: Matrix
    Q: ProximalMatrix
    f_value: Callable[[Vector], float]
    x_prev: Vector
    offset: Vector
    z: Vector
    alpha: float

    def target(self) -> Vector:
        """offset + z / alpha, the shift inside the completed square."""
        return self.offset + self.z / self.alpha

    def objective(self, x: Vector) -> float:
        """f_i(x) + <z, A x + c> + alpha/2 ||A x + c||^2 + 1/2 ||x - x_prev||_Q^2."""
        r = self.A @ x + self.offset
        dx = x - self.x_prev
        return float(
            self.f_value(x)
            + self.z @ r
            + 0.5 * self.alpha * (r @ r)
            + 0.5 * self.Q.quad(dx)
        )


@dataclass(frozen=True)
class YContext:
    """Data handed to the y oracle."""

    B: Matrix
    P: ProximalMatrix
    h_value: Callable[[Vector], float]
    y_prev: Vector
    offset: Vector
    z: Vector
    alpha: float

    def objective(self, y: Vector) -> float:
        r = self.B @ y + self.offset
        dy = y - self.y_prev
        return float(
            self.h_value(y) + self.z @ r + 0.5 * self.alpha * (r @ r) + 0.5 * self.P.quad(dy)
        )


BlockUpdateOracle = Callable[[BlockContext], Vector]
YUpdateOracle = Callable[[YContext], Vector]


@dataclass(frozen=True)
class BlockSpec:
    """One nonsmooth block: coupling matrix, value oracle, update oracle, prox weight."""

    A: Matrix
    f_value: Callable[[Vector], float]
    update: BlockUpdateOracle
    Q: ProximalMatrix
    weak_convexity: Optional[float] = None
    name: str = ""

    def __post_init__(self) -> None:
        if len(self.A.shape) != 2:
            raise DimensionMismatchError("block matrix A must be two-dimensional")
        if self.Q.dim != self.A.shape[1]:
            raise DimensionMismatchError(
                f"Q is {self.Q.dim}x{self.Q.dim} but block has {self.A.shape[1]} columns"
            )
        if self.weak_convexity is not None and self.weak_convexity < 0:
            raise ProblemSpecError("weak convexity modulus must be nonnegative")

    @property
    def n(self) -> int:
        return int(self.A.shape[1])


@dataclass(frozen=True)
class SmoothTerm:
    """Smooth term h with its gradient and gradient Lipschitz constant."""

    h_value: Callable[[Vector], float]
    h_grad: Callable[[Vector], Vector]
    L_h: float
    hessian: Optional[NDArray[np.float64]] = None

    def __post_init__(self) -> None:
        if not (np.isfinite(self.L_h) and self.L_h > 0):
            raise ProblemSpecError(f"L_h must be positive and finite, got {self.L_h}")


def check_lipschitz(
    smooth: SmoothTerm,
    q: int,
    seed: int = settings.DEFAULT_SEED,
    samples: int = 8,
    delta: float = 1e-4,
) -> bool:
    """Finite-difference check ||grad(y + delta e) - grad(y)|| <= L_h delta (1 + slack)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    bound = smooth.L_h * delta * (1.0 + settings.LIPSCHITZ_SLACK)
    for _ in range(samples):
        y = rng.standard_normal(q)
        e = rng.standard_normal(q)
        e /= np.linalg.norm(e)
        gap = np.linalg.norm(smooth.h_grad(y + delta * e) - smooth.h_grad(y))
        if gap > bound:
            logger.warning(f"Lipschitz check failed: {gap:.3e} > {bound:.3e}")
            return False
    return True


@dataclass(frozen=True)
class ProblemSpec:
    """
    min sum_i f_i(x_i) + h(y)  s.t.  sum_i A_i x_i + B y + b = 0.

    ``y_update`` overrides the default exact quadratic y solve.
    """

    blocks: Tuple[BlockSpec, ...]
    smooth: SmoothTerm
    B: Matrix
    b: Vector
    y_update: Optional[YUpdateOracle] = None
    name: str = "problem"

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        if len(self.blocks) < 1:
            raise ProblemSpecError("at least one block is required")
        m = self.b.shape[0]
        if self.B.shape[0] != m:
            raise DimensionMismatchError(f"B has {self.B.shape[0]} rows, expected {m}")
        for i, block in enumerate(self.blocks):
            if block.A.shape[0] != m:
                raise DimensionMismatchError(
                    f"A_{i} has {block.A.shape[0]} rows, expected {m}"
                )
            if block.n < 1:
                raise DimensionMismatchError(f"block {i} has no columns")
        if self.smooth.hessian is not None and self.smooth.hessian.shape != (self.q, self.q):
            raise DimensionMismatchError("hessian of h must be q x q")

    @property
    def p(self) -> int:
        return len(self.blocks)

    @property
    def m(self) -> int:
        return int(self.b.shape[0])

    @property
    def q(self) -> int:
        return int(self.B.shape[1])

    @property
    def n(self) -> Tuple[int, ...]:
        return tuple(block.n for block in self.blocks)

    def residual(self, x: Sequence[Vector], y: Vector) -> Vector:
        """A x + B y + b."""
        r = self.B @ y + self.b
        for block, xi in zip(self.blocks, x):
            r = r + block.A @ xi
        return np.asarray(r, dtype=float)

    def objective(self, x: Sequence[Vector], y: Vector) -> float:
        return float(sum(block.f_value(xi) for block, xi in zip(self.blocks, x))) + float(
            self.smooth.h_value(y)
        )

    def check_dimensions(self, x: Sequence[Vector], y: Vector, z: Vector) -> None:
        if len(x) != self.p:
            raise DimensionMismatchError(f"expected {self.p} x-blocks, got {len(x)}")
        for i, (xi, ni) in enumerate(zip(x, self.n)):
            if np.shape(xi) != (ni,):
                raise DimensionMismatchError(f"x_{i} has shape {np.shape(xi)}, expected ({ni},)")
        if np.shape(y) != (self.q,):
            raise DimensionMismatchError(f"y has shape {np.shape(y)}, expected ({self.q},)")
        if np.shape(z) != (self.m,):
            raise DimensionMismatchError(f"z has shape {np.shape(z)}, expected ({self.m},)")


class CheckLevel(str, Enum):
    OFF = "off"
    CHEAP = "cheap"
    FULL = "full"


class TerminationReason(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    ORACLE_FAILURE = "oracle_failure"


class SolverConfig(BaseModel):
    """Penalty, dual step, proximal y weight, stopping rule and check level."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha: float = Field(gt=0)
    beta: float = Field(default=1.0, gt=0, lt=2)
    P: Optional[ProximalMatrix] = None
    epsilon0: float = Field(default=settings.DEFAULT_EPSILON0, gt=1)
    max_iter: int = Field(default=settings.DEFAULT_MAX_ITER, gt=0)
    tol_residual: float = Field(default=settings.DEFAULT_TOL_RESIDUAL, gt=0)
    tol_step: float = Field(default=settings.DEFAULT_TOL_STEP, gt=0)
    check_level: CheckLevel = CheckLevel(settings.DEFAULT_CHECK_LEVEL)

    @field_validator("P")
    @classmethod
    def check_p_dimension(cls, value: Optional[ProximalMatrix]) -> Optional[ProximalMatrix]:
        if value is not None and value.dim < 1:
            raise ValueError("P must have positive dimension")
        return value

    def proximal_y(self, q: int) -> ProximalMatrix:
        """P resolved against the y dimension (zero when unset)."""
        if self.P is None:
            return ProximalMatrix.zeros(q)
        if self.P.dim != q:
            raise DimensionMismatchError(f"P is {self.P.dim}x{self.P.dim}, expected {q}x{q}")
        return self.P


@dataclass(frozen=True)
class Iterate:
    """(x^k, y^k, z^k) together with y^{k-1}, z^{k-1}."""

    x: Tuple[Vector, ...]
    y: Vector
    z: Vector
    y_prev: Vector
    z_prev: Vector
    k: int = 0

    @classmethod
    def initial(
        cls,
        problem: ProblemSpec,
        x: Optional[Sequence[Vector]] = None,
        y: Optional[Vector] = None,
        z: Optional[Vector] = None,
    ) -> "Iterate":
        """Zero start unless given; previous y, z equal the current ones."""
        xs = tuple(
            np.zeros(ni) if x is None else np.asarray(x[i], dtype=float).copy()
            for i, ni in enumerate(problem.n)
        )
        y0 = np.zeros(problem.q) if y is None else np.asarray(y, dtype=float).copy()
        z0 = np.zeros(problem.m) if z is None else np.asarray(z, dtype=float).copy()
        problem.check_dimensions(xs, y0, z0)
        return cls(x=xs, y=y0, z=z0, y_prev=y0.copy(), z_prev=z0.copy(), k=0)

    @property
    def dy(self) -> Vector:
        return self.y - self.y_prev

    @property
    def dz(self) -> Vector:
        return self.z - self.z_prev


@dataclass(frozen=True)
class IterationDetails:
    """Intermediate quantities of one sweep, kept at check_level=full."""

    lagrangian_path: Tuple[float, ...]
    block_prox_terms: Tuple[float, ...]
    y_weighted_step: float
    dz_sq: float
    z_identity_gap: float
    residual_norm: float
    dual_identity_gap: float
    dual_identity_scale: float
    dy_sq: float
    dy_prev_sq: float
    btdz_sq: float
    btdz_prev_sq: float
    z_sq: float
    grad_h_sq: float


@dataclass(frozen=True)
class TraceRecord:
    k: int
    L_alpha: float
    L_bar: float
    residual_norm: float
    step_x: Tuple[float, ...]
    step_y: float
    step_z: float
    d_norm: float
    objective: float
    check_flags: Dict[str, bool] = field(default_factory=dict)
    details: Optional[IterationDetails] = None

    @property
    def step_x_total(self) -> float:
        return float(sum(self.step_x))

    @property
    def step_sum(self) -> float:
        return self.step_x_total + self.step_y + self.step_z

    @property
    def step_sq_sum(self) -> float:
        return float(sum(s * s for s in self.step_x) + self.step_y**2 + self.step_z**2)


def augmented_lagrangian(
    problem: ProblemSpec, alpha: float, x: Sequence[Vector], y: Vector, z: Vector
) -> float:
    """
    Augmented Lagrangian sum f_i + h + <z, r> + alpha/2 ||r||^2 with r = Ax + By + b.

    Returns +inf when some f_i is +inf.
    """
    problem.check_dimensions(x, y, z)
    objective = problem.objective(x, y)
    if not np.isfinite(objective):
        return float("inf")
    r = problem.residual(x, y)
    return float(objective + z @ r + 0.5 * alpha * (r @ r))


def modified_lagrangian(
    problem: ProblemSpec,
    config: SolverConfig,
    constants: "ConstantsBundle",
    it: Iterate,
) -> float:
    """Lyapunov value L_alpha + eps0 c5 ||B' dz||^2 + eps0 c3 ||dy||^2."""
    base = augmented_lagrangian(problem, config.alpha, it.x, it.y, it.z)
    btdz = problem.B.T @ it.dz
    dy = it.dy
    return float(
        base
        + config.epsilon0 * constants.c5 * (btdz @ btdz)
        + config.epsilon0 * constants.c3 * (dy @ dy)
    )


@dataclass(frozen=True)
class ConstantsBundle:
    rho_beta: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    D: NDArray[np.float64]
    D_bar: NDArray[np.float64]
    lambda_min_D_bar: float
    tau_bar: float
    sigma: float
    lambda_pp_BtB: float
    rho_sub: float
    rho_tilde: float
    norm_P: float
    norm_B: float
    norm_A_total: float
    norm_Q_total: float
    L_h: float
    q_min: Tuple[float, ...]
    r1: float
    r2: float

    @property
    def sigma_positive(self) -> bool:
        return self.sigma > 0

    @property
    def r1_positive(self) -> bool:
        return self.r1 > 0

    @property
    def r2_positive(self) -> bool:
        return self.r2 > 0

    def summary(self) -> Dict[str, Union[float, bool, List[float]]]:
        """Scalar view for reports (matrices omitted)."""
        return {
            "rho_beta": self.rho_beta,
            "c1": self.c1,
            "c2": self.c2,
            "c3": self.c3,
            "c4": self.c4,
            "c5": self.c5,
            "c6": self.c6,
            "lambda_min_D_bar": self.lambda_min_D_bar,
            "tau_bar": self.tau_bar,
            "sigma": self.sigma,
            "lambda_pp_BtB": self.lambda_pp_BtB,
            "rho_sub": self.rho_sub,
            "rho_tilde": self.rho_tilde,
            "norm_P": self.norm_P,
            "norm_B": self.norm_B,
            "norm_A_total": self.norm_A_total,
            "norm_Q_total": self.norm_Q_total,
            "L_h": self.L_h,
            "q_min": list(self.q_min),
            "r1": self.r1,
            "r2": self.r2,
            "sigma_positive": self.sigma_positive,
            "r1_positive": self.r1_positive,
            "r2_positive": self.r2_positive,
        }


def rho_bound(problem: ProblemSpec, config: SolverConfig) -> float:
    """
    Bound rho with ||d^k|| <= rho * (sum ||dx_i|| + ||dy|| + ||dz||).

    Uses ||Q|| = sum ||Q_i|| and ||A|| = sum ||A_i|| (spectral norms).
    """
    norm_Q = sum(block.Q.norm() for block in problem.blocks)
    norm_A = sum(spectral_norm(block.A) for block in problem.blocks)
    norm_B = spectral_norm(problem.B)
    norm_P = config.proximal_y(problem.q).norm()
    alpha, beta = config.alpha, config.beta
    return float(
        max(
            norm_Q + norm_A**2,
            norm_P + alpha * norm_A * norm_B,
            norm_A + norm_B + 1.0 / (alpha * beta),
        )
    )


def compute_constants(problem: ProblemSpec, config: SolverConfig) -> ConstantsBundle:
    """
    Decrease constants rho(beta), c1..c6, D, D_bar, tau_bar, sigma and the
    subgradient bounds.

    Raises:
        ConstantsUndefinedError: rho(beta) = 1 - |1 - beta| is not positive or
            B'B has no positive eigenvalue.
    """
    alpha, beta, eps0 = config.alpha, config.beta, config.epsilon0
    rho_beta = 1.0 - abs(1.0 - beta)
    if rho_beta <= 0:
        raise ConstantsUndefinedError(f"rho(beta) = {rho_beta} for beta = {beta}")

    B_dense = to_dense(problem.B)
    BtB = B_dense.T @ B_dense
    lam_pp = smallest_positive_eigenvalue(BtB)
    if lam_pp <= 0:
        raise ConstantsUndefinedError("B'B has no positive eigenvalue")

    P = config.proximal_y(problem.q)
    norm_P = P.norm()
    L_h = problem.smooth.L_h
    q = problem.q

    c1 = 1.0 / (alpha * rho_beta * lam_pp)
    c2 = 2.0 * beta / (alpha * rho_beta**2 * lam_pp)
    c3 = c2 * norm_P**2
    c4 = c2 * (norm_P + L_h) ** 2
    c5 = abs(1.0 - beta) * c1 / beta
    c6 = abs(1.0 - beta) / (2.0 * alpha * beta**2 * lam_pp)

    D = 2.0 * P.to_dense() + alpha * BtB - L_h * np.eye(q)
    D_bar = D - 2.0 * eps0 * (c3 + c4) * np.eye(q)
    lambda_min_D_bar = float(scipy.linalg.eigvalsh(D_bar)[0])

    q_min = tuple(block.Q.min_eigenvalue() for block in problem.blocks)
    branches = []
    for block, qi in zip(problem.blocks, q_min):
        best = qi
        if block.weak_convexity is not None:
            A = to_dense(block.A)
            T = alpha * (A.T @ A) - block.weak_convexity * np.eye(block.n)
            best = max(best, smallest_positive_eigenvalue(T))
        branches.append(best)
    tau_bar = float(min(branches))

    sigma = float(min(lambda_min_D_bar, tau_bar, (eps0 - 1.0) / (alpha * beta)))

    norm_Q = float(sum(block.Q.norm() for block in problem.blocks))
    norm_A = float(sum(spectral_norm(block.A) for block in problem.blocks))
    norm_B = spectral_norm(problem.B)
    rho_sub = rho_bound(problem, config)
    rho_tilde = float(
        max(
            norm_Q + norm_A**2,
            norm_P + alpha * norm_A * norm_B + 4.0 * eps0 * c3,
            norm_A + norm_B + 4.0 * eps0 * c5 * norm_B**2 + 1.0 / (alpha * beta),
        )
    )

    return ConstantsBundle(
        rho_beta=rho_beta,
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        c5=c5,
        c6=c6,
        D=D,
        D_bar=D_bar,
        lambda_min_D_bar=lambda_min_D_bar,
        tau_bar=tau_bar,
        sigma=sigma,
        lambda_pp_BtB=lam_pp,
        rho_sub=rho_sub,
        rho_tilde=rho_tilde,
        norm_P=norm_P,
        norm_B=norm_B,
        norm_A_total=norm_A,
        norm_Q_total=norm_Q,
        L_h=L_h,
        q_min=q_min,
        r1=eps0 * c3 + sigma - norm_P**2 * c1,
        r2=eps0 * c5 - c6,
    )


def lagrangian_gradient_step_P(
    hessian: NDArray[np.float64], B: Matrix, alpha: float, step: float
) -> ProximalMatrix:
    """
    P = I/step - hess(h) - alpha B'B, which turns the y update into a single
    gradient step of the augmented Lagrangian with the given step size.

    Raises:
        ProblemSpecError: the step is too long for P to be PSD.
    """
    if step <= 0:
        raise ProblemSpecError(f"step must be positive, got {step}")
    B_dense = to_dense(B)
    M = np.eye(B_dense.shape[1]) / step - hessian - alpha * (B_dense.T @ B_dense)
    return ProximalMatrix.from_dense(M)


def exact_quadratic_update(H: NDArray[np.float64], g: Vector) -> BlockUpdateOracle:
    """
    Exact oracle for f_i(x) = 1/2 x'Hx + g'x.

    Solves (H + alpha A'A + Q) x = -g - A'z - alpha A'c + Q x_prev, caching the
    factorization per (alpha, A, Q). Cache entries hold A and Q so their ids
    stay unique while cached.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    cache: Dict[Tuple[float, int, int], Tuple[Matrix, ProximalMatrix, Any]] = {}

    def update(ctx: BlockContext) -> Vector:
        key = (ctx.alpha, id(ctx.A), id(ctx.Q))
        if key not in cache:
            A = to_dense(ctx.A)
            factor = scipy.linalg.lu_factor(H + ctx.alpha * (A.T @ A) + ctx.Q.to_dense())
            cache[key] = (ctx.A, ctx.Q, factor)
        rhs = -g - ctx.A.T @ ctx.z - ctx.alpha * (ctx.A.T @ ctx.offset) + ctx.Q.apply(ctx.x_prev)
        return np.asarray(scipy.linalg.lu_solve(cache[key][2], rhs), dtype=float)

    return update


def prox_linear_update(
    prox: Callable[[Vector, float], Vector], tau: float, alpha: float
) -> BlockUpdateOracle:
    """
    Oracle for Q = alpha (tau I - A'A):
    x = prox_{f/(alpha tau)}(x_prev - A'(A x_prev + c + z/alpha)/tau).
    """

    def update(ctx: BlockContext) -> Vector:
        if ctx.alpha != alpha:
            raise OracleError(ctx.index, f"built for alpha={alpha}, called with {ctx.alpha}")
        grad_point = ctx.x_prev - ctx.A.T @ (ctx.A @ ctx.x_prev + ctx.target()) / tau
        return np.asarray(prox(np.asarray(grad_point, dtype=float), alpha * tau), dtype=float)

    return update


def prox_linear_block(
    A: Matrix,
    f_value: Callable[[Vector], float],
    prox: Callable[[Vector, float], Vector],
    tau: float,
    alpha: float,
    weak_convexity: Optional[float] = None,
    name: str = "",
) -> BlockSpec:
    """
    Block whose subproblem reduces to a prox of f at a gradient point.

    Raises:
        ProblemSpecError: tau < lambda_max(A'A) (1 + margin), which would leave
            Q indefinite.
    """
    A_dense = to_dense(A)
    AtA = A_dense.T @ A_dense
    lam_max = float(scipy.linalg.eigvalsh(AtA)[-1]) if AtA.size else 0.0
    if tau < lam_max * (1.0 + settings.TAU_MARGIN):
        raise ProblemSpecError(
            f"tau={tau} is below lambda_max(A'A)(1+{settings.TAU_MARGIN})={lam_max:.6g}"
        )
    Q = ProximalMatrix.from_dense(alpha * (tau * np.eye(A_dense.shape[1]) - AtA))
    return BlockSpec(
        A=A,
        f_value=f_value,
        update=prox_linear_update(prox, tau, alpha),
        Q=Q,
        weak_convexity=weak_convexity,
        name=name,
    )


class QuadraticYSolver:
    """
    Exact y update for quadratic h with Hessian H:
    (H + alpha B'B + P) y = -grad_h(0) - B'z - alpha B'c + P y_prev.
    """

    def __init__(self, problem: ProblemSpec, config: SolverConfig):
        if problem.smooth.hessian is None:
            raise ProblemSpecError(
                "h has no Hessian; supply a y_update oracle on the problem"
            )
        B = to_dense(problem.B)
        P = config.proximal_y(problem.q)
        self.grad_at_zero = np.asarray(problem.smooth.h_grad(np.zeros(problem.q)), dtype=float)
        system = problem.smooth.hessian + config.alpha * (B.T @ B) + P.to_dense()
        self.factor = scipy.linalg.lu_factor(system)

    def __call__(self, ctx: YContext) -> Vector:
        rhs = (
            -self.grad_at_zero
            - ctx.B.T @ ctx.z
            - ctx.alpha * (ctx.B.T @ ctx.offset)
            + ctx.P.apply(ctx.y_prev)
        )
        return np.asarray(scipy.linalg.lu_solve(self.factor, rhs), dtype=float)


def subgradient_surrogate(
    problem: ProblemSpec, config: SolverConfig, it_k: Iterate, it_prev: Iterate
) -> Tuple[List[Vector], Vector, Vector, float]:
    """
    Explicit element d^k of the subdifferential of the augmented Lagrangian.

    d_xi = A_i'dz + alpha A_i' A_{>i} dx_{>i} + alpha A_i' B dy - Q_i dx_i,
    d_y = B'dz - P dy, d_z = dz / (alpha beta).

    Returns:
        (d_x blocks, d_y, d_z, sum of component norms)
    """
    alpha, beta = config.alpha, config.beta
    P = config.proximal_y(problem.q)
    dx = [xk - xp for xk, xp in zip(it_k.x, it_prev.x)]
    dy = it_k.y - it_prev.y
    dz = it_k.z - it_prev.z

    B_dy = problem.B @ dy
    later = np.zeros(problem.m)
    d_x: List[Vector] = [np.empty(0)] * problem.p
    for i in reversed(range(problem.p)):
        block = problem.blocks[i]
        d_x[i] = np.asarray(
            block.A.T @ dz
            + alpha * (block.A.T @ later)
            + alpha * (block.A.T @ B_dy)
            - block.Q.apply(dx[i]),
            dtype=float,
        )
        later = later + block.A @ dx[i]
    d_y = np.asarray(problem.B.T @ dz - P.apply(dy), dtype=float)
    d_z = dz / (alpha * beta)
    d_norm = float(
        sum(np.linalg.norm(d) for d in d_x) + np.linalg.norm(d_y) + np.linalg.norm(d_z)
    )
    return d_x, d_y, d_z, d_norm


@dataclass(frozen=True)
class UpdateLedger:
    """Augmented Lagrangian values after each partial update of one sweep."""

    lagrangian_path: Tuple[float, ...]
    block_prox_terms: Tuple[float, ...]
    residual: Vector


@dataclass
class SolveResult:
    iterate: Iterate
    previous: Iterate
    trace: List[TraceRecord]
    reason: TerminationReason
    constants: ConstantsBundle
    message: str = ""
    elapsed: float = 0.0

    def __iter__(self) -> Iterator[Any]:
        return iter((self.iterate, self.trace, self.reason))


class PadmmSolver:
    """Runs PADMM sweeps for one (problem, config) pair."""

    def __init__(
        self,
        problem: ProblemSpec,
        config: SolverConfig,
        constants: Optional[ConstantsBundle] = None,
    ):
        self.problem = problem
        self.config = config
        self.P = config.proximal_y(problem.q)
        self._constants = constants
        if problem.y_update is not None:
            self.y_update: YUpdateOracle = problem.y_update
        else:
            self.y_update = QuadraticYSolver(problem, config)

    @property
    def constants(self) -> ConstantsBundle:
        if self._constants is None:
            self._constants = compute_constants(self.problem, self.config)
        return self._constants

    def _lagrangian(self, x: Sequence[Vector], y: Vector, z: Vector) -> float:
        return augmented_lagrangian(self.problem, self.config.alpha, x, y, z)

    def step(self, it: Iterate, capture: bool = False) -> Tuple[Iterate, Optional[UpdateLedger]]:
        """
        One Gauss-Seidel sweep: x_1..x_p, then y, then z.

        Raises:
            OracleError: a block or y oracle raised or returned a bad vector.
        """
        problem, alpha, beta = self.problem, self.config.alpha, self.config.beta
        x = list(it.x)
        Ax = [block.A @ xi for block, xi in zip(problem.blocks, x)]
        By = problem.B @ it.y
        path: List[float] = []
        prox_terms: List[float] = []
        if capture:
            path.append(self._lagrangian(x, it.y, it.z))

        for i, block in enumerate(problem.blocks):
            offset = By + problem.b
            for j, part in enumerate(Ax):
                if j != i:
                    offset = offset + part
            ctx = BlockContext(
                index=i,
                A=block.A,
                Q=block.Q,
                f_value=block.f_value,
                x_prev=it.x[i],
                offset=np.asarray(offset, dtype=float),
                z=it.z,
                alpha=alpha,
            )
            try:
                xi = np.asarray(block.update(ctx), dtype=float)
            except OracleError:
                raise
            except Exception as exc:
                raise OracleError(i, str(exc)) from exc
            if xi.shape != (block.n,) or not np.all(np.isfinite(xi)):
                raise OracleError(i, f"returned shape {xi.shape} or non-finite entries")
            x[i] = xi
            Ax[i] = block.A @ xi
            if capture:
                path.append(self._lagrangian(x, it.y, it.z))
                prox_terms.append(0.5 * block.Q.quad(xi - it.x[i]))

        Ax_total = np.sum(Ax, axis=0) if len(Ax) > 1 else np.asarray(Ax[0])
        y_ctx = YContext(
            B=problem.B,
            P=self.P,
            h_value=problem.smooth.h_value,
            y_prev=it.y,
            offset=np.asarray(Ax_total + problem.b, dtype=float),
            z=it.z,
            alpha=alpha,
        )
        try:
            y = np.asarray(self.y_update(y_ctx), dtype=float)
        except OracleError:
            raise
        except Exception as exc:
            raise OracleError("y", str(exc)) from exc
        if y.shape != (problem.q,) or not np.all(np.isfinite(y)):
            raise OracleError("y", f"returned shape {y.shape} or non-finite entries")

        r = np.asarray(problem.B @ y + y_ctx.offset, dtype=float)
        z = it.z + alpha * beta * r
        if capture:
            path.append(self._lagrangian(x, y, it.z))
            path.append(self._lagrangian(x, y, z))

        new = Iterate(x=tuple(x), y=y, z=z, y_prev=it.y, z_prev=it.z, k=it.k + 1)
        ledger = (
            UpdateLedger(
                lagrangian_path=tuple(path), block_prox_terms=tuple(prox_terms), residual=r
            )
            if capture
            else None
        )
        return new, ledger

    def _details(self, prev: Iterate, new: Iterate, ledger: UpdateLedger) -> IterationDetails:
        problem, config, c = self.problem, self.config, self.constants
        alpha, beta = config.alpha, config.beta
        dy, dz = new.dy, new.dz
        btdz = problem.B.T @ dz
        btdz_prev = problem.B.T @ prev.dz
        dy_prev = prev.dy
        grad_h = np.asarray(problem.smooth.h_grad(new.y), dtype=float)

        w = -self.P.apply(dy) - grad_h
        bt_z = problem.B.T @ new.z
        dual_gap = bt_z - beta * w - (1.0 - beta) * (problem.B.T @ new.z_prev)
        r = ledger.residual

        return IterationDetails(
            lagrangian_path=ledger.lagrangian_path,
            block_prox_terms=ledger.block_prox_terms,
            y_weighted_step=float(0.5 * dy @ (c.D @ dy)),
            dz_sq=float(dz @ dz),
            z_identity_gap=float(np.linalg.norm(r - dz / (alpha * beta))),
            residual_norm=float(np.linalg.norm(r)),
            dual_identity_gap=float(np.linalg.norm(dual_gap)),
            dual_identity_scale=float(max(1.0, np.linalg.norm(bt_z), np.linalg.norm(w))),
            dy_sq=float(dy @ dy),
            dy_prev_sq=float(dy_prev @ dy_prev),
            btdz_sq=float(btdz @ btdz),
            btdz_prev_sq=float(btdz_prev @ btdz_prev),
            z_sq=float(new.z @ new.z),
            grad_h_sq=float(grad_h @ grad_h),
        )

    def record(
        self,
        prev: Iterate,
        new: Iterate,
        ledger: Optional[UpdateLedger],
        last: Optional[TraceRecord],
    ) -> TraceRecord:
        """Trace record for the transition prev -> new, with inline checks."""
        problem, config, c = self.problem, self.config, self.constants
        L_alpha = self._lagrangian(new.x, new.y, new.z)
        L_bar = modified_lagrangian(problem, config, c, new)
        r = ledger.residual if ledger is not None else problem.residual(new.x, new.y)
        residual_norm = float(np.linalg.norm(r))
        step_x = tuple(float(np.linalg.norm(a - b)) for a, b in zip(new.x, prev.x))
        step_y = float(np.linalg.norm(new.dy))
        step_z = float(np.linalg.norm(new.dz))
        _, _, _, d_norm = subgradient_surrogate(problem, config, new, prev)
        objective = problem.objective(new.x, new.y)

        flags: Dict[str, bool] = {}
        details = None
        if config.check_level != CheckLevel.OFF:
            step_sum = sum(step_x) + step_y + step_z
            flags["subgradient_bound"] = bool(
                d_norm <= c.rho_sub * step_sum * (1.0 + settings.INEQUALITY_SLACK)
            )
            gap = float(np.linalg.norm(r - new.dz / (config.alpha * config.beta)))
            flags["z_identity"] = bool(
                gap <= settings.IDENTITY_TOL * max(1.0, residual_norm)
            )
            if last is not None:
                sq = sum(s * s for s in step_x) + step_y**2 + step_z**2
                flags["sufficient_decrease"] = bool(
                    L_bar + c.sigma * sq
                    <= last.L_bar + settings.INEQUALITY_SLACK * max(1.0, abs(last.L_bar))
                )
        if config.check_level == CheckLevel.FULL and ledger is not None:
            details = self._details(prev, new, ledger)

        return TraceRecord(
            k=new.k,
            L_alpha=L_alpha,
            L_bar=L_bar,
            residual_norm=residual_norm,
            step_x=step_x,
            step_y=step_y,
            step_z=step_z,
            d_norm=d_norm,
            objective=objective,
            check_flags=flags,
            details=details,
        )

    def run(self, init: Optional[Iterate] = None) -> SolveResult:
        problem, config = self.problem, self.config
        constants = self.constants
        if not constants.sigma_positive:
            logger.warning(
                f"sigma = {constants.sigma:.4g} <= 0: sufficient decrease is not "
                "guaranteed for this configuration; running anyway"
            )

        it = init if init is not None else Iterate.initial(problem)
        problem.check_dimensions(it.x, it.y, it.z)
        capture = config.check_level == CheckLevel.FULL
        trace: List[TraceRecord] = []
        previous = it
        reason = TerminationReason.MAX_ITER
        message = ""
        start = time.time()
        logger.info(
            f"Starting PADMM on {problem.name}: p={problem.p}, m={problem.m}, q={problem.q}, "
            f"alpha={config.alpha}, beta={config.beta}, max_iter={config.max_iter}"
        )

        for _ in range(config.max_iter):
            try:
                new, ledger = self.step(it, capture=capture)
            except OracleError as exc:
                logger.error(f"Stopping at iteration {it.k + 1}: {exc}")
                reason = TerminationReason.ORACLE_FAILURE
                message = str(exc)
                break
            rec = self.record(it, new, ledger, trace[-1] if trace else None)
            trace.append(rec)
            previous, it = it, new

            if rec.k % settings.LOG_EVERY == 0:
                logger.debug(
                    f"k={rec.k} L_bar={rec.L_bar:.10g} residual={rec.residual_norm:.3e} "
                    f"steps={rec.step_sum:.3e}"
                )
            if rec.residual_norm <= config.tol_residual and rec.step_sum <= config.tol_step:
                reason = TerminationReason.CONVERGED
                break

        elapsed = time.time() - start
        logger.info(
            f"PADMM finished: reason={reason.value}, iterations={len(trace)}, "
            f"elapsed={elapsed:.3f}s"
        )
        return SolveResult(
            iterate=it,
            previous=previous,
            trace=trace,
            reason=reason,
            constants=constants,
            message=message,
            elapsed=elapsed,
        )


def padmm_iterate(problem: ProblemSpec, config: SolverConfig, it: Iterate) -> Iterate:
    """One PADMM sweep from ``it``."""
    new, _ = PadmmSolver(problem, config).step(it)
    return new


def solve(
    problem: ProblemSpec,
    config: SolverConfig,
    init: Optional[Iterate] = None,
) -> SolveResult:
    """
    Iterate until ||Ax+By+b|| <= tol_residual and the step sum <= tol_step,
    or until max_iter sweeps.

    Returns:
        SolveResult; unpacks as (iterate, trace, reason).
    """
    return PadmmSolver(problem, config).run(init)
