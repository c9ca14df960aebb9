"""Numerical laboratory for fronts of randomized F-KPP and parabolic Anderson equations."""

__version__ = "0.1.0"
