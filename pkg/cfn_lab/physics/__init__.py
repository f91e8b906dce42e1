"""
Physics Module
"""

from .systems import (
    PdeName,
    PdeSystem,
    Burgers1D,
    Burgers2D,
    ShallowWater,
    Euler,
    get_system,
    flux,
    jacobian,
    spectral_radius,
    entropy_pair,
)
from .initial_conditions import (
    IcSampler,
    BuiltinCase,
    BUILTIN_CASES,
    PARAMETER_RANGES,
    child_generator,
    initial_condition,
    sample_initial_condition,
    builtin_initial_condition,
)

__all__ = [
    'PdeName',
    'PdeSystem',
    'Burgers1D',
    'Burgers2D',
    'ShallowWater',
    'Euler',
    'get_system',
    'flux',
    'jacobian',
    'spectral_radius',
    'entropy_pair',
    'IcSampler',
    'BuiltinCase',
    'BUILTIN_CASES',
    'PARAMETER_RANGES',
    'child_generator',
    'initial_condition',
    'sample_initial_condition',
    'builtin_initial_condition',
]
