"""
Test suite for the PADMM Lab package.
"""
