"""
Scalar proximal operators and matrix projections.

The SCAD and MCP proxes solve ``argmin_t r(t) + rho/2 (t - v)^2`` exactly by
enumerating the stationary point of every quadratic piece together with the
breakpoints, then keeping the candidate with the smallest objective value.
All operators act elementwise on arrays.
"""

import logging
from typing import Union

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from config.settings import settings

logger = logging.getLogger(__name__)

FloatOrArray = Union[float, NDArray[np.float64]]


class ScadParams(BaseModel):
    """Parameters of the SCAD penalty r1(t; lambda, theta)."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(gt=0, alias="lambda")
    theta: float = Field(gt=2)


class McpParams(BaseModel):
    """Parameters of the MCP penalty r2(t; lambda, theta)."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(gt=0, alias="lambda")
    theta: float = Field(gt=0)


def _restore(values: NDArray[np.float64], like: ArrayLike) -> FloatOrArray:
    if np.ndim(like) == 0:
        return float(values)
    return values


def scad_value(t: ArrayLike, p: ScadParams) -> FloatOrArray:
    """
    Evaluate the SCAD penalty elementwise.

    Args:
        t: Scalar or array argument
        p: SCAD parameters

    Returns:
        lam*|t| on |t| <= lam, the concave middle piece up to theta*lam and
        the constant (theta+1)*lam^2/2 beyond.
    """
    a = np.abs(np.asarray(t, dtype=float))
    lam, theta = p.lam, p.theta
    middle = (-(a**2) + 2.0 * theta * lam * a - lam**2) / (2.0 * (theta - 1.0))
    flat = (theta + 1.0) * lam**2 / 2.0
    out = np.where(a <= lam, lam * a, np.where(a <= theta * lam, middle, flat))
    return _restore(out, t)


def mcp_value(t: ArrayLike, p: McpParams) -> FloatOrArray:
    """Evaluate the MCP penalty elementwise."""
    a = np.abs(np.asarray(t, dtype=float))
    lam, theta = p.lam, p.theta
    out = np.where(a <= theta * lam, lam * a - a**2 / (2.0 * theta), theta * lam**2 / 2.0)
    return _restore(out, t)


def _pick_best(
    candidates: NDArray[np.float64],
    objective: NDArray[np.float64],
) -> NDArray[np.float64]:
    # first candidate wins on ties
    best = np.argmin(objective, axis=0)
    return np.take_along_axis(candidates, best[np.newaxis, ...], axis=0)[0]


def scad_prox(v: ArrayLike, p: ScadParams, rho: float) -> FloatOrArray:
    """
    Exact proximal map of the SCAD penalty at curvature rho.

    Args:
        v: Scalar or array point
        p: SCAD parameters
        rho: Curvature of the quadratic coupling, must be positive

    Returns:
        Global minimizer of r1(t) + rho/2 (t - v)^2, elementwise.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    v_arr = np.asarray(v, dtype=float)
    a = np.abs(v_arr)
    lam, theta = p.lam, p.theta

    piece_small = np.clip(a - lam / rho, 0.0, lam)
    denom = rho * (theta - 1.0) - 1.0
    if denom != 0.0:
        piece_mid = np.clip((rho * a * (theta - 1.0) - theta * lam) / denom, lam, theta * lam)
    else:
        piece_mid = np.full_like(a, lam)
    piece_flat = np.maximum(a, theta * lam)

    candidates = np.stack(
        [
            np.zeros_like(a),
            piece_small,
            piece_mid,
            np.full_like(a, lam),
            np.full_like(a, theta * lam),
            piece_flat,
        ]
    )
    objective = np.asarray(scad_value(candidates, p)) + 0.5 * rho * (candidates - a) ** 2
    out = np.sign(v_arr) * _pick_best(candidates, objective)
    return _restore(out, v)


def mcp_prox(v: ArrayLike, p: McpParams, rho: float) -> FloatOrArray:
    """Exact proximal map of the MCP penalty at curvature rho."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    v_arr = np.asarray(v, dtype=float)
    a = np.abs(v_arr)
    lam, theta = p.lam, p.theta
    knee = theta * lam

    curvature = rho - 1.0 / theta
    if curvature != 0.0:
        piece_inner = np.clip((rho * a - lam) / curvature, 0.0, knee)
    else:
        piece_inner = np.zeros_like(a)
    piece_flat = np.maximum(a, knee)

    candidates = np.stack(
        [np.zeros_like(a), piece_inner, np.full_like(a, knee), piece_flat]
    )
    objective = np.asarray(mcp_value(candidates, p)) + 0.5 * rho * (candidates - a) ** 2
    out = np.sign(v_arr) * _pick_best(candidates, objective)
    return _restore(out, v)


def soft_threshold(v: ArrayLike, t: float) -> FloatOrArray:
    """
    Soft-thresholding operator sign(v) * max(|v| - t, 0).

    Examples
    --------
    >>> soft_threshold(3.0, 1.0)
    2.0
    >>> soft_threshold(-0.5, 1.0)
    0.0
    """
    if t < 0:
        raise ValueError(f"threshold must be nonnegative, got {t}")
    v_arr = np.asarray(v, dtype=float)
    out = np.sign(v_arr) * np.maximum(np.abs(v_arr) - t, 0.0)
    return _restore(out, v)


def l1_prox(v: ArrayLike, lam: float, rho: float) -> FloatOrArray:
    """Prox of lam*|t| at curvature rho."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return soft_threshold(v, lam / rho)


def numerical_rank(X: NDArray[np.float64], rtol: float = settings.RANK_RTOL) -> int:
    """Number of singular values above rtol times the largest one."""
    if X.size == 0:
        return 0
    s = scipy.linalg.svd(X, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def project_rank(X: NDArray[np.float64], r: int) -> NDArray[np.float64]:
    """
    Best rank-<=r approximation in Frobenius norm.

    Args:
        X: m x n matrix
        r: Rank bound, 0 <= r

    Returns:
        X itself (as a copy) when its numerical rank is already <= r,
        otherwise the truncated SVD keeping the r largest singular values.
    """
    if r < 0:
        raise ValueError(f"rank bound must be nonnegative, got {r}")
    X = np.asarray(X, dtype=float)
    if r >= min(X.shape):
        return X.copy()
    if r == 0:
        return np.zeros_like(X)

    U, s, Vt = scipy.linalg.svd(X, full_matrices=False)
    if s[0] == 0.0 or s[r] <= settings.RANK_RTOL * s[0]:
        return X.copy()
    return (U[:, :r] * s[:r]) @ Vt[:r, :]


def project_cardinality(X: ArrayLike, s: int) -> NDArray[np.float64]:
    """
    Keep the s entries of largest magnitude and zero the rest.

    Ties are broken by first index in row-major order. Kept entries are
    copied bitwise.
    """
    if s < 0:
        raise ValueError(f"cardinality bound must be nonnegative, got {s}")
    X = np.asarray(X, dtype=float)
    flat = X.ravel(order="C")
    out = np.zeros_like(flat)
    if s > 0:
        keep = np.argsort(-np.abs(flat), kind="stable")[:s]
        out[keep] = flat[keep]
    return out.reshape(X.shape, order="C")
