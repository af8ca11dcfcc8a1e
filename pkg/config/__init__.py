"""
PADMM Lab - Configuration
Contains solver defaults, numeric tolerances and example run configs.
"""
