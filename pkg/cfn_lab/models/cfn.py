"""
Conservative Flux Form Networks
Neural flux, spectral-radius surrogate and the KT / LW / modLW / basic update operators
"""

from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..classical.integrators import TimeIntegrator, integrate_stages
from ..classical.schemes import SchemeVariant, flux_divergence, interface_fluxes
from ..errors import ConfigurationError, DivergenceError, UnsupportedOperationError
from ..grid import BoundarySpec, FieldState, Mesh, Trajectory
from .autodiff import Activation, MlpParams, init_params, input_jacobian, mlp_forward


DEFAULT_INTEGRATORS: Dict[SchemeVariant, TimeIntegrator] = {
    SchemeVariant.KT: TimeIntegrator.TVDRK3,
    SchemeVariant.BASIC: TimeIntegrator.EULER,
    SchemeVariant.LW: TimeIntegrator.ONE_STEP,
    SchemeVariant.MLW: TimeIntegrator.ONE_STEP,
}

ALLOWED_INTEGRATORS: Dict[SchemeVariant, Tuple[TimeIntegrator, ...]] = {
    SchemeVariant.KT: (TimeIntegrator.TVDRK3, TimeIntegrator.EULER),
    SchemeVariant.BASIC: (TimeIntegrator.EULER, TimeIntegrator.TVDRK3),
    SchemeVariant.LW: (TimeIntegrator.ONE_STEP, TimeIntegrator.TVDRK3),
    SchemeVariant.MLW: (TimeIntegrator.ONE_STEP, TimeIntegrator.TVDRK3),
}


class CfnConfig(BaseModel):
    """Architecture and scheme choices of a CFN model."""
    model_config = ConfigDict(extra="forbid")

    variant: SchemeVariant = SchemeVariant.KT
    flux_hidden: List[int] = Field(default_factory=lambda: [64] * 5)
    radius_hidden: List[int] = Field(default_factory=lambda: [64] * 2)
    flux_activation: Activation = Activation.SILU
    radius_activation: Activation = Activation.RELU
    closed_form_speed: bool = False
    integrator: Optional[TimeIntegrator] = None
    mlw_C: float = Field(default=0.05, gt=0.0)
    mlw_alpha: float = Field(default=1.0, gt=0.0)
    stencil_p: int = Field(default=1, ge=0, le=1)
    stencil_q: int = Field(default=1, ge=0, le=2)
    seed: int = 0

    @model_validator(mode="after")
    def _check_integrator(self) -> "CfnConfig":
        if self.integrator is not None and self.integrator not in ALLOWED_INTEGRATORS[self.variant]:
            raise ValueError(
                f"integrator {self.integrator.value} is not available for the {self.variant.value} variant"
            )
        if any(h < 1 for h in self.flux_hidden + self.radius_hidden):
            raise ValueError("hidden layer widths must be positive")
        return self

    def resolved_integrator(self) -> TimeIntegrator:
        return self.integrator or DEFAULT_INTEGRATORS[self.variant]


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    positive = x > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, x, torch.ones_like(x))), torch.zeros_like(x))


def closed_form_radius(jac: torch.Tensor) -> torch.Tensor:
    """Spectral radius of [..., m, m] Jacobians for m = 1 or 2."""
    m = jac.shape[-1]
    if m == 1:
        return jac[..., 0, 0].abs()
    if m == 2:
        trace = jac[..., 0, 0] + jac[..., 1, 1]
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        disc = 0.25 * trace * trace - det
        # complex pair: |lambda|^2 = det
        return torch.where(disc > 0, 0.5 * trace.abs() + _safe_sqrt(disc), _safe_sqrt(det))
    raise UnsupportedOperationError(f"no closed-form spectral radius for {m} state variables")


@dataclass
class CfnModel:
    """Learned surrogate dynamics on a fixed mesh and time step."""
    variant: SchemeVariant
    flux_net: MlpParams
    radius_net: Optional[MlpParams]
    m: int
    mesh: Mesh
    dt: float
    bc: BoundarySpec
    closed_form_speed: bool = False
    integrator: TimeIntegrator = TimeIntegrator.TVDRK3
    mlw_C: float = 0.05
    mlw_alpha: float = 1.0
    stencil: Tuple[int, int] = (1, 1)

    def __post_init__(self):
        self.variant = SchemeVariant(self.variant)
        self.integrator = TimeIntegrator(self.integrator)
        self.stencil = tuple(self.stencil)
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.integrator not in ALLOWED_INTEGRATORS[self.variant]:
            raise ConfigurationError(f"integrator {self.integrator.value} not available for {self.variant.value}")
        if self.bc.is_periodic != self.mesh.periodic:
            raise ConfigurationError("boundary kind does not match mesh periodicity")
        self.bc.validate(self.m)
        if self.variant != SchemeVariant.KT and self.mesh.dim != 1:
            raise ConfigurationError(f"the {self.variant.value} variant is defined on 1D meshes only")

        if self.flux_net.input_dim != self.flux_input_dim or self.flux_net.output_dim != self.flux_output_dim:
            raise ConfigurationError(
                f"flux net maps {self.flux_net.input_dim} -> {self.flux_net.output_dim}, "
                f"expected {self.flux_input_dim} -> {self.flux_output_dim}"
            )
        if self.variant == SchemeVariant.KT:
            if self.radius_net is None:
                raise ConfigurationError("the KT variant needs a radius net")
            if self.radius_net.input_dim != self.m * self.m or self.radius_net.output_dim != 1:
                raise ConfigurationError(f"radius net must map {self.m * self.m} -> 1")
            if self.closed_form_speed and self.m > 2:
                raise ConfigurationError("closed-form speed is available for one or two state variables")
        elif self.radius_net is not None:
            raise ConfigurationError(f"the {self.variant.value} variant has no radius net")

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def dx(self) -> float:
        return self.mesh.dx

    @property
    def flux_input_dim(self) -> int:
        if self.variant == SchemeVariant.BASIC:
            return (self.stencil[0] + self.stencil[1] + 1) * self.m
        return self.m

    @property
    def flux_output_dim(self) -> int:
        return self.dim * self.m if self.variant == SchemeVariant.KT else self.m

    def param_sets(self) -> List[MlpParams]:
        return [self.flux_net] + ([self.radius_net] if self.radius_net is not None else [])

    def flux_model(self) -> "NeuralFlux":
        return NeuralFlux(self)

    def describe(self) -> Dict[str, Any]:
        return {
            "variant": self.variant.value,
            "m": self.m,
            "dim": self.dim,
            "integrator": self.integrator.value,
            "closed_form_speed": self.closed_form_speed,
            "flux_dims": self.flux_net.layer_dims,
            "radius_dims": self.radius_net.layer_dims if self.radius_net is not None else None,
        }


class NeuralFlux:
    """FluxModel view of a CfnModel; tensors are variables-first [m, ...]."""

    def __init__(self, model: CfnModel):
        self.model = model
        self.m = model.m

    def _rows(self, axis: int) -> slice:
        return slice(axis * self.m, (axis + 1) * self.m)

    def flux(self, u, axis=0):
        out = mlp_forward(self.model.flux_net, u.movedim(0, -1))
        return out[..., self._rows(axis)].movedim(-1, 0)

    def point_jacobian(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor:
        """[..., m, m] Jacobian of the axis flux at points u [..., m]."""
        rows = range(axis * self.m, (axis + 1) * self.m)
        return input_jacobian(self.model.flux_net, u, outputs=rows)

    def jacobian(self, u, axis=0):
        return self.point_jacobian(u.movedim(0, -1), axis).movedim(-2, 0).movedim(-1, 1)

    def point_speed(self, u: torch.Tensor, axis: int = 0) -> torch.Tensor:
        jac = self.point_jacobian(u, axis)
        if self.model.closed_form_speed:
            return closed_form_radius(jac)
        return mlp_forward(self.model.radius_net, jac.flatten(-2))[..., 0].abs()

    def speed(self, u, axis=0):
        return self.point_speed(u.movedim(0, -1), axis)

    def stencil_flux(self, columns: torch.Tensor) -> torch.Tensor:
        return mlp_forward(self.model.flux_net, columns.movedim(0, -1)).movedim(-1, 0)


@dataclass
class RolloutResult:
    states: List[FieldState]
    dt: float

    def to_trajectory(self, bc: BoundarySpec, provenance: Optional[Dict[str, Any]] = None) -> Trajectory:
        return Trajectory.from_states(self.states, bc, self.dt, provenance)


# ============ Construction ============

def build_model(cfg: CfnConfig, m: int, mesh: Mesh, dt: float, bc: BoundarySpec) -> CfnModel:
    """Freshly initialised model for m state variables on `mesh`."""
    variant = cfg.variant
    stencil = (cfg.stencil_p, cfg.stencil_q)
    d_in = (stencil[0] + stencil[1] + 1) * m if variant == SchemeVariant.BASIC else m
    d_out = mesh.dim * m if variant == SchemeVariant.KT else m

    flux_net = init_params([d_in] + list(cfg.flux_hidden) + [d_out], cfg.flux_activation, cfg.seed)
    radius_net = None
    if variant == SchemeVariant.KT:
        radius_net = init_params([m * m] + list(cfg.radius_hidden) + [1], cfg.radius_activation, cfg.seed + 1)

    return CfnModel(
        variant=variant,
        flux_net=flux_net,
        radius_net=radius_net,
        m=m,
        mesh=mesh,
        dt=dt,
        bc=bc,
        closed_form_speed=cfg.closed_form_speed,
        integrator=cfg.resolved_integrator(),
        mlw_C=cfg.mlw_C,
        mlw_alpha=cfg.mlw_alpha,
        stencil=stencil,
    )


def retarget(model: CfnModel, mesh: Mesh, bc: Optional[BoundarySpec] = None) -> CfnModel:
    """Same networks on another mesh of the same domain; dt is unchanged."""
    if mesh.dim != model.mesh.dim or mesh.periodic != model.mesh.periodic:
        raise ConfigurationError("target mesh must match the model's dimension and periodicity")
    if any((a.a, a.b) != (b.a, b.b) for a, b in zip(mesh.axes, model.mesh.axes)):
        raise ConfigurationError("target mesh must cover the model's domain")
    return replace(model, mesh=mesh, bc=bc or model.bc)


# ============ Operators ============

def neural_flux(model: CfnModel, u) -> torch.Tensor:
    v = torch.as_tensor(u, dtype=torch.float64)
    if v.shape[-1] != model.flux_input_dim:
        raise ConfigurationError(f"neural flux expects {model.flux_input_dim} inputs, got {v.shape[-1]}")
    return mlp_forward(model.flux_net, v)


def surrogate_radius(model: CfnModel, u, axis: int = 0) -> torch.Tensor:
    """|rho_w(flattened dF/du)| at points u [..., m] (closed form when configured)."""
    if model.variant != SchemeVariant.KT:
        raise UnsupportedOperationError(f"the {model.variant.value} variant has no spectral-radius surrogate")
    v = torch.as_tensor(u, dtype=torch.float64)
    if v.shape[-1] != model.m:
        raise ConfigurationError(f"expected {model.m} state variables, got {v.shape[-1]}")
    return model.flux_model().point_speed(v, axis)


def model_interface_fluxes(model: CfnModel, z: torch.Tensor) -> List[torch.Tensor]:
    flux = model.flux_model()
    return interface_fluxes(
        z, flux, model.bc, model.mesh, model.variant,
        dt=model.dt,
        mlw_c=model.mlw_C,
        mlw_alpha=model.mlw_alpha,
        stencil_flux=flux.stencil_flux,
        stencil=model.stencil,
    )


def model_rhs(model: CfnModel, z: torch.Tensor) -> torch.Tensor:
    return flux_divergence(model_interface_fluxes(model, z), model.mesh.spacings)


def kt_neural_rhs(model: CfnModel, s: FieldState) -> np.ndarray:
    if model.variant != SchemeVariant.KT:
        raise UnsupportedOperationError("kt_neural_rhs requires the KT variant")
    with torch.no_grad():
        return model_rhs(model, s.tensor()).numpy()


def step_tensor(model: CfnModel, z: torch.Tensor) -> torch.Tensor:
    out, _ = integrate_stages(lambda v: model_rhs(model, v), z, model.dt, model.integrator)
    return out


def step(model: CfnModel, s: FieldState) -> FieldState:
    """Advance one dt with the model's update operator."""
    with torch.no_grad():
        out = step_tensor(model, s.tensor())
    if not torch.isfinite(out).all():
        raise DivergenceError(
            f"{model.variant.value} step produced non-finite values at t={s.time + model.dt:.6g}",
            partial=s, step=1, time=s.time + model.dt,
        )
    return FieldState(s.mesh, out.numpy(), s.time + model.dt)


def rollout_tensor(model: CfnModel, z0: torch.Tensor, steps: int) -> List[torch.Tensor]:
    """steps+1 states from z0, differentiable when grad mode is on."""
    states = [z0]
    z = z0
    for k in range(1, steps + 1):
        z = step_tensor(model, z)
        if not torch.isfinite(z).all():
            raise DivergenceError(
                f"{model.variant.value} rollout diverged at step {k}",
                partial=[s.detach() for s in states], step=k,
            )
        states.append(z)
    return states


def rollout(model: CfnModel, s0: FieldState, K: int, differentiable: bool = False) -> RolloutResult:
    """K applications of the update operator from s0."""
    if K < 1:
        raise ConfigurationError(f"rollout needs K >= 1, got {K}")
    if s0.mesh != model.mesh:
        raise ConfigurationError("initial state mesh does not match the model mesh")

    def _states(tensors: Sequence[torch.Tensor]) -> List[FieldState]:
        return [
            FieldState(s0.mesh, t.detach().numpy().copy(), s0.time + k * model.dt)
            for k, t in enumerate(tensors)
        ]

    try:
        with torch.set_grad_enabled(differentiable):
            tensors = rollout_tensor(model, s0.tensor(), K)
    except DivergenceError as e:
        logger.error(f"Rollout diverged at step {e.step}")
        raise DivergenceError(str(e), partial=RolloutResult(_states(e.partial), model.dt), step=e.step) from e
    return RolloutResult(_states(tensors), model.dt)
