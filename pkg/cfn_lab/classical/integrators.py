"""
Time Integration
Forward Euler and the three-stage TVD Runge-Kutta method
"""

from enum import Enum
from typing import Callable, Dict, List, Tuple, Union

import torch

from ..grid import FieldState


Rhs = Callable[[torch.Tensor], torch.Tensor]


class TimeIntegrator(str, Enum):
    TVDRK3 = "tvdrk3"
    EULER = "euler"
    ONE_STEP = "one_step"


# Weights of each stage's right-hand side in the final update
STAGE_WEIGHTS: Dict[TimeIntegrator, Tuple[float, ...]] = {
    TimeIntegrator.TVDRK3: (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0),
    TimeIntegrator.EULER: (1.0,),
    TimeIntegrator.ONE_STEP: (1.0,),
}


def integrate_stages(
    rhs: Rhs,
    z: torch.Tensor,
    dt: float,
    integrator: TimeIntegrator = TimeIntegrator.TVDRK3,
) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    """Advance z by dt; also return the stage states the rhs was evaluated at."""
    if integrator != TimeIntegrator.TVDRK3:
        return z + dt * rhs(z), [z]

    z1 = z + dt * rhs(z)
    z2 = 0.75 * z + 0.25 * z1 + 0.25 * dt * rhs(z1)
    out = z / 3.0 + (2.0 / 3.0) * z2 + (2.0 / 3.0) * dt * rhs(z2)
    return out, [z, z1, z2]


def tvdrk3_step(
    rhs: Rhs,
    s: Union[FieldState, torch.Tensor],
    dt: float,
) -> Union[FieldState, torch.Tensor]:
    if isinstance(s, FieldState):
        out, _ = integrate_stages(rhs, s.tensor(), dt)
        return FieldState(s.mesh, out.detach().numpy(), s.time + dt)
    out, _ = integrate_stages(rhs, s, dt)
    return out
