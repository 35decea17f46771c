"""
Test package for the GRID label-noise-robust learning project.
"""
