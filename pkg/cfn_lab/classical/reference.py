"""
Reference Solver
True-flux KT / LW / modLW stepping and CFL sub-stepped trajectory generation
"""

from typing import Iterator, List, Optional, Tuple

import numpy as np
import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..config import settings
from ..errors import ConfigurationError, DivergenceError, PhysicalStateError, SolverBlowUpError
from ..grid import BoundarySpec, FieldState, Mesh, TimeGrid, Trajectory
from ..physics import PdeSystem
from .integrators import TimeIntegrator, integrate_stages
from .schemes import SchemeVariant, TrueFlux, scheme_rhs


class SolverConfig(BaseModel):
    """Classical solver settings."""
    model_config = ConfigDict(extra="forbid")

    scheme: SchemeVariant = SchemeVariant.KT
    cfl: float = Field(default=settings.reference_cfl, gt=0.0, le=1.0)
    mlw_C: float = Field(default=0.05, gt=0.0)
    mlw_alpha: float = Field(default=1.0, gt=0.0)

    @field_validator("scheme")
    @classmethod
    def _classical_only(cls, v: SchemeVariant) -> SchemeVariant:
        if v == SchemeVariant.BASIC:
            raise ValueError("the basic stencil scheme needs a learned flux")
        return v


def classical_rhs(
    values: torch.Tensor,
    sys: PdeSystem,
    bc: BoundarySpec,
    mesh: Mesh,
    cfg: Optional[SolverConfig] = None,
    dt: Optional[float] = None,
) -> torch.Tensor:
    cfg = cfg or SolverConfig()
    return scheme_rhs(
        values, TrueFlux(sys), bc, mesh, cfg.scheme,
        dt=dt, mlw_c=cfg.mlw_C, mlw_alpha=cfg.mlw_alpha,
    )


def kt_rhs(s: FieldState, sys: PdeSystem, bc: BoundarySpec) -> np.ndarray:
    """dū/dt of the semi-discrete KT scheme with the true flux."""
    with torch.no_grad():
        return classical_rhs(s.tensor(), sys, bc, s.mesh).numpy()


def _one_step(s: FieldState, sys, bc, dt, cfg: SolverConfig) -> FieldState:
    if s.mesh.dim != 1:
        raise ConfigurationError(f"{cfg.scheme.value} steps are defined on 1D meshes only")
    with torch.no_grad():
        z = s.tensor()
        out = z + dt * classical_rhs(z, sys, bc, s.mesh, cfg, dt)
    if not torch.isfinite(out).all():
        raise DivergenceError(
            f"{cfg.scheme.value} step produced non-finite values at t={s.time + dt:.6g} (CFL violated?)",
            time=s.time + dt,
        )
    return FieldState(s.mesh, out.numpy(), s.time + dt)


def lw_step(s: FieldState, sys: PdeSystem, bc: BoundarySpec, dt: float) -> FieldState:
    return _one_step(s, sys, bc, dt, SolverConfig(scheme=SchemeVariant.LW))


def mlw_step(
    s: FieldState,
    sys: PdeSystem,
    bc: BoundarySpec,
    dt: float,
    cfg: Optional[SolverConfig] = None,
) -> FieldState:
    cfg = cfg.model_copy(update={"scheme": SchemeVariant.MLW}) if cfg else SolverConfig(scheme=SchemeVariant.MLW)
    return _one_step(s, sys, bc, dt, cfg)


def max_stable_dt(values: torch.Tensor, sys: PdeSystem, mesh: Mesh, cfl: float) -> float:
    """cfl / Σ_axis (max speed / dx_axis); inf for a state at rest."""
    rate = sum(
        float(sys.spectral_radius(values, axis).max()) / dx
        for axis, dx in enumerate(mesh.spacings)
    )
    return cfl / rate if rate > 0 else float("inf")


def solver_integrator(cfg: SolverConfig) -> TimeIntegrator:
    return TimeIntegrator.TVDRK3 if cfg.scheme == SchemeVariant.KT else TimeIntegrator.ONE_STEP


def cfl_substeps(
    z: torch.Tensor,
    sys: PdeSystem,
    mesh: Mesh,
    bc: BoundarySpec,
    cfg: SolverConfig,
    t: float,
    target: float,
    dt: float,
) -> Iterator[Tuple[float, float, torch.Tensor, List[torch.Tensor]]]:
    """Advance z from t to target at the CFL limit.

    Yields (time reached, sub-step size, new state, stage states). The last
    sub-step lands exactly on target; a remainder below 1e-12 dt is folded
    into it.
    """
    integrator = solver_integrator(cfg)
    while t < target:
        h = min(max_stable_dt(z, sys, mesh, cfg.cfl), target - t)
        landing = target - t - h <= 1e-12 * dt
        if landing:
            h = target - t
        z, stages = integrate_stages(lambda v: classical_rhs(v, sys, bc, mesh, cfg, h), z, h, integrator)
        t = target if landing else t + h
        yield t, h, z, stages


def solve_reference(
    ic: FieldState,
    sys: PdeSystem,
    cfg: Optional[SolverConfig] = None,
    tg: Optional[TimeGrid] = None,
    bc: Optional[BoundarySpec] = None,
    trajectory_index: Optional[int] = None,
) -> Trajectory:
    """Record the true-flux solution at t_l = l dt, sub-stepping at the CFL target."""
    cfg = cfg or SolverConfig()
    tg = tg or TimeGrid(sys.default_dt, sys.default_steps)
    bc = bc or sys.boundary_for(ic.values)
    mesh = ic.mesh
    label = "" if trajectory_index is None else f" (trajectory {trajectory_index})"

    records = [ic.values.copy()]
    z = ic.tensor().clone()
    t = 0.0

    with torch.no_grad():
        for l in range(1, tg.steps + 1):
            try:
                for t, _, z, _ in cfl_substeps(z, sys, mesh, bc, cfg, (l - 1) * tg.dt, l * tg.dt, tg.dt):
                    if not torch.isfinite(z).all():
                        logger.error(f"Reference solve blew up{label} at t={t:.6g}")
                        raise SolverBlowUpError(
                            f"non-finite state at t={t:.6g}{label}", time=t,
                            trajectory_index=trajectory_index, partial=np.stack(records),
                        )
            except PhysicalStateError as e:
                logger.error(f"Reference solve failed{label} near t={t:.6g}: {e}")
                raise SolverBlowUpError(
                    f"{e} near t={t:.6g}{label}", time=t,
                    trajectory_index=trajectory_index, partial=np.stack(records),
                ) from e
            records.append(z.numpy().copy())

    return Trajectory(
        mesh, bc, np.stack(records), tg.dt, 0.0,
        {"pde": sys.name.value, "scheme": cfg.scheme.value, "cfl": cfg.cfl},
    )
