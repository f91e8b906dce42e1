"""
Classical Solvers Module
"""

from .limiters import minmod_phi, limited_slopes, reconstruct_interfaces, max_first, min_first
from .integrators import (
    TimeIntegrator,
    STAGE_WEIGHTS,
    integrate_stages,
    tvdrk3_step,
)
from .schemes import (
    SchemeVariant,
    FluxModel,
    TrueFlux,
    kt_interface_flux,
    lw_interface_flux,
    mlw_interface_flux,
    stencil_interface_flux,
    flux_divergence,
    interface_fluxes,
    scheme_rhs,
)
from .reference import (
    SolverConfig,
    classical_rhs,
    kt_rhs,
    lw_step,
    mlw_step,
    max_stable_dt,
    solve_reference,
)

__all__ = [
    'minmod_phi',
    'limited_slopes',
    'reconstruct_interfaces',
    'max_first',
    'min_first',
    'TimeIntegrator',
    'STAGE_WEIGHTS',
    'integrate_stages',
    'tvdrk3_step',
    'SchemeVariant',
    'FluxModel',
    'TrueFlux',
    'kt_interface_flux',
    'lw_interface_flux',
    'mlw_interface_flux',
    'stencil_interface_flux',
    'flux_divergence',
    'interface_fluxes',
    'scheme_rhs',
    'SolverConfig',
    'classical_rhs',
    'kt_rhs',
    'lw_step',
    'mlw_step',
    'max_stable_dt',
    'solve_reference',
]
