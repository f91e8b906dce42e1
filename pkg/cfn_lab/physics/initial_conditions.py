"""
Initial Conditions
Seeded parameter samplers and the fixed test cases of the four prototype problems
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from ..errors import ConfigurationError
from ..grid import FieldState, Mesh
from .systems import PdeName, PdeSystem, get_system


Interval = Tuple[float, float]

# Shu-Osher reference values, perturbed multiplicatively by EULER_SPREAD
EULER_HATS = {
    "rho_l": 3.857135,
    "eps": 0.2,
    "p_l": 10.33333,
    "p_r": 1.0,
    "u_l": 2.62936,
    "x_0": -4.0,
}
EULER_SPREAD = 0.1
EULER_X1 = 3.29867

# Dam break: h_l + xi_l, h_r + xi_r, u_l + xi_ul, u_r + xi_ur, x_0 + xi_x
DAM_BREAK_BASE = {"h_l": 3.5, "h_r": 1.0, "u_l": 0.0, "u_r": 0.0, "x_0": 0.0}
DAM_BREAK_PERTURBATION = {"h_l": 0.2, "h_r": 0.2, "u_l": 0.1, "u_r": 0.1, "x_0": 0.1}


def _euler_interval(hat: float) -> Interval:
    lo, hi = hat * (1.0 - EULER_SPREAD), hat * (1.0 + EULER_SPREAD)
    return (min(lo, hi), max(lo, hi))


PARAMETER_RANGES: Dict[PdeName, Dict[str, Interval]] = {
    PdeName.BURGERS1D: {"alpha": (0.75, 1.25), "beta": (-0.25, 0.25)},
    PdeName.SHALLOW_WATER: {
        key: (DAM_BREAK_BASE[key] - width, DAM_BREAK_BASE[key] + width)
        for key, width in DAM_BREAK_PERTURBATION.items()
    },
    PdeName.EULER: {key: _euler_interval(hat) for key, hat in EULER_HATS.items()},
    PdeName.BURGERS2D: {
        "alpha": (0.75, 1.25),
        "beta": (-0.25, 0.25),
        "x_0": (0.5, 1.5),
        "y_0": (-0.5, 0.5),
    },
}


@dataclass(frozen=True)
class BuiltinCase:
    """A fixed initial condition with its reference resolution and horizon."""
    pde: PdeName
    params: Dict[str, float]
    n: int
    dt: float
    steps: int


BUILTIN_CASES: Dict[str, BuiltinCase] = {
    "burgers-test": BuiltinCase(PdeName.BURGERS1D, {"alpha": 1.05609, "beta": 0.1997}, 512, 0.005, 600),
    "sw-test": BuiltinCase(
        PdeName.SHALLOW_WATER,
        {"h_l": 3.5691196, "h_r": 1.178673, "u_l": -0.064667, "u_r": -0.045197, "x_0": 0.003832},
        512, 0.005, 200,
    ),
    "euler-test": BuiltinCase(PdeName.EULER, dict(EULER_HATS), 512, 0.002, 800),
    "b2d-test": BuiltinCase(
        PdeName.BURGERS2D,
        {"x_0": 1.032833, "y_0": 0.034137, "alpha": 1.004777, "beta": 0.106782},
        200, 0.0005, 1600,
    ),
}


def child_generator(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for one (master seed, trajectory index) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass(frozen=True)
class IcSampler:
    pde: PdeName
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pde", PdeName(self.pde))

    @property
    def ranges(self) -> Dict[str, Interval]:
        return PARAMETER_RANGES[self.pde]

    def draw(self, index: int = 0) -> Dict[str, float]:
        """Parameters for trajectory `index`, uniform on the closed intervals."""
        rng = child_generator(self.seed, index)
        return {key: float(rng.uniform(lo, hi)) for key, (lo, hi) in self.ranges.items()}


# ============ Profiles ============

def _burgers1d(params, mesh, sys):
    x = mesh.centers()[0]
    return (params["alpha"] * np.sin(x) + params["beta"])[None]


def _shallow_water(params, mesh, sys):
    x = mesh.centers()[0]
    left = x < params["x_0"]
    h = np.where(left, params["h_l"], params["h_r"])
    u = np.where(left, params["u_l"], params["u_r"])
    return np.stack([h, h * u])


def _euler(params, mesh, sys):
    x = mesh.centers()[0]
    left = x <= params["x_0"]
    wave = 1.0 + params["eps"] * np.sin(5.0 * x)
    rho = np.where(left, params["rho_l"], np.where(x <= EULER_X1, wave, wave * np.exp(-(x - EULER_X1) ** 4)))
    u = np.where(left, params["u_l"], 0.0)
    p = np.where(left, params["p_l"], params["p_r"])
    # local initial pressure
    energy = p / (sys.gamma - 1.0) + 0.5 * rho * u * u
    return np.stack([rho, rho * u, energy])


def _burgers2d(params, mesh, sys):
    x, y = np.meshgrid(*mesh.centers(), indexing="ij")
    u = params["alpha"] * np.sin(2.0 * math.pi * x + params["x_0"]) * np.cos(2.0 * math.pi * y + params["y_0"])
    return (u + params["beta"])[None]


PROFILES = {
    PdeName.BURGERS1D: _burgers1d,
    PdeName.SHALLOW_WATER: _shallow_water,
    PdeName.EULER: _euler,
    PdeName.BURGERS2D: _burgers2d,
}


def initial_condition(
    pde: Union[str, PdeName],
    mesh: Mesh,
    params: Dict[str, float],
    sys: Optional[PdeSystem] = None,
) -> FieldState:
    """Evaluate the parametrised profile of `pde` at the mesh cell centres."""
    sys = sys or get_system(pde)
    if mesh.dim != sys.dim or mesh.periodic != sys.periodic:
        raise ConfigurationError(
            f"mesh (dim={mesh.dim}, periodic={mesh.periodic}) does not fit {sys.name.value}"
        )
    missing = set(PARAMETER_RANGES[sys.name]) - set(params)
    if missing:
        raise ConfigurationError(f"missing initial-condition parameters: {sorted(missing)}")
    return FieldState(mesh, PROFILES[sys.name](params, mesh, sys), 0.0)


def sample_initial_condition(
    sampler: IcSampler,
    mesh: Mesh,
    index: int = 0,
    sys: Optional[PdeSystem] = None,
) -> FieldState:
    return initial_condition(sampler.pde, mesh, sampler.draw(index), sys)


def builtin_initial_condition(name: str, n: Optional[int] = None, sys: Optional[PdeSystem] = None) -> FieldState:
    """One of the built-in test cases, optionally on another grid size."""
    try:
        case = BUILTIN_CASES[name]
    except KeyError:
        raise ConfigurationError(f"unknown built-in case '{name}', expected one of {sorted(BUILTIN_CASES)}") from None
    sys = sys or get_system(case.pde)
    return initial_condition(case.pde, sys.mesh(n or case.n), case.params, sys)
