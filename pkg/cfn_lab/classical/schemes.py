"""
Conservative Schemes
Interface-flux kernels shared by the true-flux solvers and the learned dynamics.

Every scheme is written as interface fluxes G_{j+1/2}; the update of a cell
is always -(G_{j+1/2} - G_{j-1/2}) / dx, so conservation is structural. The
kernels only talk to a `FluxModel`, which is either the true flux of a
PdeSystem or a neural flux.
"""

from enum import Enum
from typing import Callable, List, Optional, Protocol, Sequence

import torch

from ..config import settings
from ..errors import ConfigurationError, UnsupportedOperationError
from ..grid import GHOST_WIDTH, BoundarySpec, Mesh, pad_values
from ..physics import PdeSystem
from .limiters import max_first, reconstruct_interfaces


class SchemeVariant(str, Enum):
    KT = "kt"
    LW = "lw"
    MLW = "mlw"
    BASIC = "basic"


class FluxModel(Protocol):
    """Flux, Jacobian and wave-speed bound on variables-first tensors [m, ...]."""
    m: int

    def flux(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor: ...

    def jacobian(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor: ...

    def speed(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor: ...


class TrueFlux:
    """FluxModel backed by the analytic flux of a PDE system."""

    def __init__(self, system: PdeSystem):
        self.system = system
        self.m = system.m

    def flux(self, u, axis=0):
        return self.system.flux(u, axis)

    def jacobian(self, u, axis=0):
        return self.system.jacobian(u, axis)

    def speed(self, u, axis=0):
        return self.system.spectral_radius(u, axis)


def matvec(a: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """[m, m, ...] x [m, ...] -> [m, ...]."""
    return torch.einsum("ij...,j...->i...", a, v)


def _axis_view(padded: torch.Tensor, axis: int, width: int = GHOST_WIDTH) -> torch.Tensor:
    """Drop the ghost cells of every spatial axis except `axis`."""
    out = padded
    for other in range(1, padded.ndim):
        if other != axis + 1:
            out = out.narrow(other, width, out.shape[other] - 2 * width)
    return out


def _neighbours(padded: torch.Tensor, count_offset: int = 3):
    """Left/right cell states of each interface of a width-2 padded 1D array."""
    length = padded.shape[1]
    count = length - count_offset
    return padded.narrow(1, 1, count), padded.narrow(1, 2, count)


# ============ Interface fluxes ============

def kt_interface_flux(
    padded: torch.Tensor,
    model: FluxModel,
    axis: int,
    dx: float,
    eps: Optional[float] = None,
) -> torch.Tensor:
    """H_{j+1/2} = (F(u⁺) + F(u⁻))/2 - a_{j+1/2}/2 (u⁺ - u⁻), a = max(speed(u⁺), speed(u⁻))."""
    u_minus, u_plus = reconstruct_interfaces(_axis_view(padded, axis), dx, axis, eps)
    average = 0.5 * (model.flux(u_plus, axis) + model.flux(u_minus, axis))
    a = max_first(model.speed(u_plus, axis), model.speed(u_minus, axis))
    return average - 0.5 * a.unsqueeze(0) * (u_plus - u_minus)


def lw_interface_flux(padded: torch.Tensor, model: FluxModel, dx: float, dt: float) -> torch.Tensor:
    left, right = _neighbours(padded)
    f_left, f_right = model.flux(left), model.flux(right)
    a_half = model.jacobian(0.5 * (left + right))
    return 0.5 * (f_right + f_left) - 0.5 * (dt / dx) * matvec(a_half, f_right - f_left)


def mlw_interface_flux(
    padded: torch.Tensor,
    model: FluxModel,
    dx: float,
    dt: float,
    c: float = 0.05,
    alpha: float = 1.0,
    eps: Optional[float] = None,
) -> torch.Tensor:
    """LW flux with the secant quotient Δ₊F/Δ₊u and the switched viscosity C γ Δ₊F'(u) Δ₊u."""
    eps = settings.quotient_eps if eps is None else eps
    left, right = _neighbours(padded)
    f_left, f_right = model.flux(left), model.flux(right)
    du, df = right - left, f_right - f_left

    flat = du.abs() < eps
    mean_jacobian = model.jacobian(0.5 * (left + right))
    diagonal = torch.diagonal(mean_jacobian, dim1=0, dim2=1).movedim(-1, 0)
    quotient = torch.where(flat, diagonal, df / torch.where(flat, torch.ones_like(du), du))

    switch = (du.abs() / dx ** alpha >= 1.0).to(du.dtype)
    jump_jacobian = model.jacobian(right) - model.jacobian(left)
    viscosity = c * switch * matvec(jump_jacobian, du)

    return 0.5 * (f_right + f_left) - 0.5 * (dt / dx) * quotient * df - viscosity


def stencil_interface_flux(
    padded: torch.Tensor,
    stencil_flux: Callable[[torch.Tensor], torch.Tensor],
    p: int = 1,
    q: int = 1,
) -> torch.Tensor:
    """f_{j+1/2} = F(ū_{j-p}, ..., ū_{j+q}); stencil_flux maps [(p+q+1)m, ...] to [m, ...]."""
    width = GHOST_WIDTH
    if not (0 <= p <= width - 1 and 0 <= q <= width):
        raise ConfigurationError(f"stencil (p={p}, q={q}) exceeds the ghost width {width}")
    count = padded.shape[1] - 2 * width + 1
    columns = [padded.narrow(1, width - 1 + k, count) for k in range(-p, q + 1)]
    return stencil_flux(torch.cat(columns, dim=0))


# ============ Right-hand sides ============

def flux_divergence(fluxes: Sequence[torch.Tensor], spacings: Sequence[float]) -> torch.Tensor:
    """-Σ_axis (G_{j+1/2} - G_{j-1/2}) / dx_axis."""
    total = None
    for axis, (g, dx) in enumerate(zip(fluxes, spacings)):
        dim = axis + 1
        size = g.shape[dim]
        term = -(g.narrow(dim, 1, size - 1) - g.narrow(dim, 0, size - 1)) / dx
        total = term if total is None else total + term
    return total


def interface_fluxes(
    values: torch.Tensor,
    model: FluxModel,
    bc: BoundarySpec,
    mesh: Mesh,
    scheme: SchemeVariant,
    dt: Optional[float] = None,
    mlw_c: float = 0.05,
    mlw_alpha: float = 1.0,
    stencil_flux: Optional[Callable[[torch.Tensor], torch.Tensor]] = None,
    stencil: Sequence[int] = (1, 1),
) -> List[torch.Tensor]:
    """Interface fluxes per axis for one scheme evaluation."""
    padded = pad_values(values, bc, GHOST_WIDTH)
    spacings = mesh.spacings

    if scheme == SchemeVariant.KT:
        return [kt_interface_flux(padded, model, axis, spacings[axis]) for axis in range(mesh.dim)]

    if mesh.dim != 1:
        raise UnsupportedOperationError(f"{scheme.value} scheme is defined on 1D meshes only")
    if scheme == SchemeVariant.BASIC:
        if stencil_flux is None:
            raise ConfigurationError("basic scheme needs a stencil flux")
        return [stencil_interface_flux(padded, stencil_flux, *stencil)]
    if dt is None:
        raise ConfigurationError(f"{scheme.value} scheme needs dt")
    if scheme == SchemeVariant.LW:
        return [lw_interface_flux(padded, model, spacings[0], dt)]
    return [mlw_interface_flux(padded, model, spacings[0], dt, mlw_c, mlw_alpha)]


def scheme_rhs(
    values: torch.Tensor,
    model: FluxModel,
    bc: BoundarySpec,
    mesh: Mesh,
    scheme: SchemeVariant,
    **options,
) -> torch.Tensor:
    """Time derivative (for the one-step schemes, the update per unit dt)."""
    return flux_divergence(interface_fluxes(values, model, bc, mesh, scheme, **options), mesh.spacings)
