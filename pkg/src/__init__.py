"""
PADMM Lab - multi-block proximal ADMM for nonconvex nonsmooth problems
Core source code package.
"""

__version__ = "1.0.0"
__author__ = "Sahit"
__description__ = "Proximal ADMM solver with runtime convergence diagnostics"
