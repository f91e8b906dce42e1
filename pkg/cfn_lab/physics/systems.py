"""
Prototype PDE Systems
True fluxes, Jacobians, spectral radii and entropy pairs.

All tensor methods take states variables-first, ``u`` of shape [m, ...], and
broadcast over the trailing cell axes. They are used for reference data and
metrics only; learned models never see them.
"""

import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Type, Union

import numpy as np
import torch

from ..errors import ConfigurationError, PhysicalStateError
from ..grid import BoundarySpec, Mesh, build_mesh


class PdeName(str, Enum):
    BURGERS1D = "burgers1d"
    SHALLOW_WATER = "shallow_water"
    EULER = "euler"
    BURGERS2D = "burgers2d"


def _require_positive(name: str, x: torch.Tensor) -> None:
    if bool((x <= 0).any()):
        raise PhysicalStateError(name)


class PdeSystem(ABC):
    """A named hyperbolic conservation law with known flux and entropy pair."""

    name: PdeName
    m: int = 1
    dim: int = 1
    periodic: bool = True
    domain: Tuple[float, float] = (0.0, 1.0)
    variable_names: Tuple[str, ...] = ("u",)

    # Dataset and training defaults
    default_dt: float = 0.005
    default_steps: int = 20
    default_lr: float = 1e-4
    default_batch: int = 10

    def __init__(self, g: float = 1.0, gamma: float = 1.4):
        self.g = float(g)
        self.gamma = float(gamma)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name.value}, m={self.m}, dim={self.dim})"

    def check_state(self, u: torch.Tensor) -> None:
        """Raise PhysicalStateError when u leaves the physical domain."""

    @abstractmethod
    def flux(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor:
        ...

    @abstractmethod
    def jacobian(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor:
        """[m, m, ...] with rows indexing flux components."""

    @abstractmethod
    def spectral_radius(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor:
        ...

    @abstractmethod
    def entropy(self, u: torch.Tensor) -> torch.Tensor:
        ...

    @abstractmethod
    def entropy_flux(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor:
        ...

    def mesh(self, n: int) -> Mesh:
        return build_mesh(self.domain[0], self.domain[1], n, self.dim, self.periodic)

    def boundary_for(self, values: np.ndarray) -> BoundarySpec:
        """Periodic, or Dirichlet frozen at the first and last cells of `values`."""
        if self.periodic:
            return BoundarySpec.periodic()
        return BoundarySpec.dirichlet(values[:, 0], values[:, -1])


class Burgers1D(PdeSystem):
    name = PdeName.BURGERS1D
    domain = (0.0, 2.0 * math.pi)

    def flux(self, u, axis=0):
        return 0.5 * u * u

    def jacobian(self, u, axis=0):
        return u.unsqueeze(0)

    def spectral_radius(self, u, axis=0):
        return u[0].abs()

    def entropy(self, u):
        return 0.5 * u[0] ** 2

    def entropy_flux(self, u, axis=0):
        return u[0] ** 3 / 6.0


class Burgers2D(Burgers1D):
    """u_t + (u²/2)_x + (u²/2)_y = 0 on the unit square."""
    name = PdeName.BURGERS2D
    dim = 2
    domain = (0.0, 1.0)
    default_dt = 0.0005
    default_batch = 1


class ShallowWater(PdeSystem):
    """Conserved variables (h, hu) with gravity g."""
    name = PdeName.SHALLOW_WATER
    m = 2
    periodic = False
    domain = (-5.0, 5.0)
    variable_names = ("h", "hu")
    default_lr = 2e-3

    def check_state(self, u):
        _require_positive("h", u[0])

    def _velocity(self, u):
        self.check_state(u)
        return u[1] / u[0]

    def flux(self, u, axis=0):
        h, hu = u[0], u[1]
        v = self._velocity(u)
        return torch.stack([hu, hu * v + 0.5 * self.g * h * h])

    def jacobian(self, u, axis=0):
        h = u[0]
        v = self._velocity(u)
        zero, one = torch.zeros_like(h), torch.ones_like(h)
        return torch.stack([
            torch.stack([zero, one]),
            torch.stack([self.g * h - v * v, 2.0 * v]),
        ])

    def spectral_radius(self, u, axis=0):
        v = self._velocity(u)
        return v.abs() + torch.sqrt(self.g * u[0])

    def entropy(self, u):
        h = u[0]
        v = self._velocity(u)
        return 0.5 * self.g * h * h + 0.5 * h * v * v

    def entropy_flux(self, u, axis=0):
        h = u[0]
        v = self._velocity(u)
        return 0.5 * h * v ** 3 + self.g * h * h * v


class Euler(PdeSystem):
    """1D gas dynamics, conserved (rho, rho*u, E), ideal gas with ratio gamma."""
    name = PdeName.EULER
    m = 3
    periodic = False
    domain = (-5.0, 5.0)
    variable_names = ("rho", "rhou", "E")
    default_dt = 0.002
    default_steps = 300
    default_lr = 2e-3

    def primitives(self, u: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(rho, velocity, pressure), validated."""
        rho, mom, energy = u[0], u[1], u[2]
        _require_positive("rho", rho)
        v = mom / rho
        p = (self.gamma - 1.0) * (energy - 0.5 * rho * v * v)
        _require_positive("p", p)
        return rho, v, p

    def check_state(self, u):
        self.primitives(u)

    def flux(self, u, axis=0):
        _, v, p = self.primitives(u)
        mom, energy = u[1], u[2]
        return torch.stack([mom, mom * v + p, v * (energy + p)])

    def jacobian(self, u, axis=0):
        rho, v, p = self.primitives(u)
        g = self.gamma
        enthalpy = (u[2] + p) / rho
        zero, one = torch.zeros_like(rho), torch.ones_like(rho)
        return torch.stack([
            torch.stack([zero, one, zero]),
            torch.stack([0.5 * (g - 3.0) * v * v, (3.0 - g) * v, (g - 1.0) * one]),
            torch.stack([v * (0.5 * (g - 1.0) * v * v - enthalpy), enthalpy - (g - 1.0) * v * v, g * v]),
        ])

    def spectral_radius(self, u, axis=0):
        rho, v, p = self.primitives(u)
        return v.abs() + torch.sqrt(self.gamma * p / rho)

    def _specific_entropy(self, u):
        rho, _, p = self.primitives(u)
        return torch.log(p / rho ** self.gamma)

    def entropy(self, u):
        return -u[0] * self._specific_entropy(u)

    def entropy_flux(self, u, axis=0):
        return -u[1] * self._specific_entropy(u)


SYSTEMS: Dict[PdeName, Type[PdeSystem]] = {
    PdeName.BURGERS1D: Burgers1D,
    PdeName.SHALLOW_WATER: ShallowWater,
    PdeName.EULER: Euler,
    PdeName.BURGERS2D: Burgers2D,
}


def get_system(name: Union[str, PdeName], g: float = 1.0, gamma: float = 1.4) -> PdeSystem:
    try:
        key = PdeName(name)
    except ValueError:
        raise ConfigurationError(
            f"unknown PDE '{name}', expected one of {[p.value for p in PdeName]}"
        ) from None
    return SYSTEMS[key](g=g, gamma=gamma)


# ============ Array-level operations ============

def as_state_tensor(u: Union[float, Sequence[float], np.ndarray, torch.Tensor]) -> torch.Tensor:
    if isinstance(u, torch.Tensor):
        return u.to(torch.float64)
    return torch.as_tensor(np.atleast_1d(np.asarray(u, dtype=np.float64)))


def _out(t: torch.Tensor) -> Union[float, np.ndarray]:
    t = t.detach()
    return float(t) if t.ndim == 0 else t.numpy()


def flux(sys: PdeSystem, u, axis: Optional[int] = None) -> np.ndarray:
    """Analytic flux; on 2D systems without an axis, the per-axis pair stacked as [dim, m, ...]."""
    x = as_state_tensor(u)
    if axis is None and sys.dim == 2:
        return np.stack([sys.flux(x, a).numpy() for a in range(sys.dim)])
    return sys.flux(x, axis or 0).numpy()


def jacobian(sys: PdeSystem, u, axis: int = 0) -> np.ndarray:
    return sys.jacobian(as_state_tensor(u), axis).numpy()


def spectral_radius(sys: PdeSystem, u, axis: int = 0) -> Union[float, np.ndarray]:
    return _out(sys.spectral_radius(as_state_tensor(u), axis))


def entropy_pair(sys: PdeSystem, u, axis: int = 0):
    """(U, F) of the system's standard entropy pair."""
    x = as_state_tensor(u)
    return _out(sys.entropy(x)), _out(sys.entropy_flux(x, axis))
