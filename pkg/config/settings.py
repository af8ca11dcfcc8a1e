"""
Configuration settings for PADMM Lab.
"""

import logging
import os

from dotenv import load_dotenv

# Load environment variables (logging only; solver defaults are fixed below)
load_dotenv()

logger = logging.getLogger(__name__)


class Settings:
    """Application settings and configuration."""

    # Application Configuration
    APP_NAME: str = "PADMM Lab - proximal ADMM solver and diagnostics"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"
    LOG_LEVEL: str = os.getenv("PADMM_LOG_LEVEL", "DEBUG" if DEBUG else "INFO")

    # Solver defaults
    DEFAULT_MAX_ITER: int = 5000
    DEFAULT_TOL_RESIDUAL: float = 1e-6
    DEFAULT_TOL_STEP: float = 1e-6
    DEFAULT_EPSILON0: float = 1.5
    DEFAULT_CHECK_LEVEL: str = "cheap"
    LOG_EVERY: int = 500

    # Numerical tolerances
    INEQUALITY_SLACK: float = 1e-8
    IDENTITY_TOL: float = 1e-10
    EIGEN_ZERO_RTOL: float = 1e-10
    PSD_TOL: float = 1e-10
    LIPSCHITZ_SLACK: float = 1e-6
    TAU_MARGIN: float = 1e-6
    RANK_RTOL: float = 1e-12
    A3_RESIDUAL_TOL: float = 1e-8

    # Problem defaults
    PROX_LINEAR_TAU_FACTOR: float = 1.05
    REGRESSION_ALPHA_FACTOR: float = 1.1
    SLR_STEP_FRACTION: float = 0.99
    DEFAULT_SEED: int = 42

    # Rate fitting
    RATE_MIN_POINTS: int = 20
    RATE_R2_THRESHOLD: float = 0.95
    RATE_ZERO_TOL: float = 1e-14
    RATE_FIT_FLOOR: float = 1e-11
    RATE_DROP_FRACTION: float = 0.1

    # Output Configuration
    TRACE_FLOAT_FORMAT: str = "%.17g"
    TRACE_COLUMNS = (
        "k",
        "L_alpha",
        "L_bar",
        "residual",
        "step_x_total",
        "step_y",
        "step_z",
        "d_norm",
        "objective",
    )

    @classmethod
    def validate(cls) -> bool:
        """Validate that the numeric defaults are usable."""
        problems = []
        if cls.DEFAULT_EPSILON0 <= 1.0:
            problems.append("DEFAULT_EPSILON0 must exceed 1")
        if cls.DEFAULT_MAX_ITER < 1:
            problems.append("DEFAULT_MAX_ITER must be positive")
        if cls.DEFAULT_CHECK_LEVEL not in ("off", "cheap", "full"):
            problems.append(f"unknown DEFAULT_CHECK_LEVEL {cls.DEFAULT_CHECK_LEVEL!r}")
        if cls.PROX_LINEAR_TAU_FACTOR <= 1.0 + cls.TAU_MARGIN:
            problems.append("PROX_LINEAR_TAU_FACTOR leaves Q indefinite")
        if not 0.0 < cls.SLR_STEP_FRACTION < 1.0:
            problems.append("SLR_STEP_FRACTION must lie in (0, 1)")

        if problems:
            logger.error(f"Invalid configuration: {problems}")
            return False

        return True


# Global settings instance
settings = Settings()
