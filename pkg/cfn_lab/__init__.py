"""
CFN Lab
Entropy-stable conservative flux form networks for hyperbolic conservation laws
"""

__version__ = "0.1.0"
