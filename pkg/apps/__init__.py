"""
PADMM Lab - Application Entry Points
Contains the batch command-line front-end.
"""
