"""
pymcgs - Monte Carlo graph search over candidate solutions
"""

__version__ = "0.1.0"
