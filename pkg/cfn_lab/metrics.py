"""
Metrics
Conservation and entropy audits, relative errors, total variation and shock tracking
"""

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from loguru import logger

from .classical import STAGE_WEIGHTS, SolverConfig, TimeIntegrator, TrueFlux, integrate_stages
from .classical.reference import cfl_substeps, solver_integrator
from .classical.schemes import flux_divergence, interface_fluxes
from .config import settings
from .errors import ConfigurationError, MetricError, UnsupportedOperationError
from .grid import FieldState, Trajectory, total_variation
from .models import CfnModel, model_interface_fluxes
from .physics import PdeSystem


@dataclass
class MetricSeries:
    """Per-time metric values of one prediction; arrays are indexed [time] or [time, variable]."""
    times: np.ndarray
    variable_names: Sequence[str]
    conserved: Optional[np.ndarray] = None
    entropy: Optional[np.ndarray] = None
    relative_l2: Optional[np.ndarray] = None
    total_variation: Optional[np.ndarray] = None
    shock: Optional[np.ndarray] = None
    shock_error: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("conserved", "entropy", "relative_l2", "total_variation", "shock", "shock_error"):
            series = getattr(self, name)
            if series is not None and len(series) != len(self.times):
                raise ConfigurationError(f"{name} series has {len(series)} entries for {len(self.times)} times")

    def rows(self) -> List[Tuple[float, str, str, float]]:
        """(t, metric, variable, value) rows in time order."""
        out = []
        per_variable = (
            ("conserved_remainder", self.conserved),
            ("relative_l2", self.relative_l2),
            ("total_variation", self.total_variation),
            ("shock_location", self.shock),
            ("shock_location_error", self.shock_error),
        )
        for l, t in enumerate(self.times):
            for metric, series in per_variable[:1]:
                if series is not None:
                    out.extend((t, metric, v, series[l, k]) for k, v in enumerate(self.variable_names))
            if self.entropy is not None:
                out.append((t, "entropy_remainder", "entropy", self.entropy[l]))
            for metric, series in per_variable[1:]:
                if series is not None:
                    out.extend((t, metric, v, series[l, k]) for k, v in enumerate(self.variable_names))
        return out


# ============ Conservation ============

@dataclass
class _Auditor:
    """Sub-steps of one recorded step and the interface fluxes at their stages."""
    substeps: Callable[[torch.Tensor, int], Iterable[Tuple[float, List[torch.Tensor]]]]
    fluxes: Callable[[torch.Tensor, float], List[torch.Tensor]]
    integrator: TimeIntegrator


def _auditor(
    pred: Trajectory,
    model: Union[CfnModel, PdeSystem],
    solver: Optional[SolverConfig] = None,
) -> _Auditor:
    if isinstance(model, PdeSystem):
        # replays the reference solver's CFL sub-steps from each recorded state
        cfg, flux, mesh, bc = solver or SolverConfig(), TrueFlux(model), pred.mesh, pred.bc

        def substeps(z, l):
            steps = cfl_substeps(z, model, mesh, bc, cfg, l * pred.dt, (l + 1) * pred.dt, pred.dt)
            return [(h, stages) for _, h, _, stages in steps]

        def fluxes(z, h):
            return interface_fluxes(
                z, flux, bc, mesh, cfg.scheme, dt=h, mlw_c=cfg.mlw_C, mlw_alpha=cfg.mlw_alpha,
            )

        return _Auditor(substeps, fluxes, solver_integrator(cfg))

    if pred.mesh != model.mesh:
        raise ConfigurationError("prediction mesh does not match the model mesh")
    if not math.isclose(pred.dt, model.dt, rel_tol=1e-12):
        raise ConfigurationError(f"prediction dt {pred.dt} does not match model dt {model.dt}")
    if pred.m != model.m:
        raise ConfigurationError(f"prediction has {pred.m} variables, model has {model.m}")
    model = replace(model, bc=pred.bc) if pred.bc != model.bc else model

    def rhs(z):
        return flux_divergence(model_interface_fluxes(model, z), model.mesh.spacings)

    def substeps(z, l):
        _, stages = integrate_stages(rhs, z, model.dt, model.integrator)
        return [(pred.dt, stages)]

    return _Auditor(substeps, lambda z, h: model_interface_fluxes(model, z), model.integrator)


def _boundary_flux(fluxes: Sequence[torch.Tensor], pred: Trajectory) -> np.ndarray:
    """F_a - F_b per variable, integrated over the other axes."""
    mesh = pred.mesh
    if not mesh.periodic:
        h = fluxes[0]
        # interfaces x_{1/2} and x_{n-1/2}
        return (h[:, 1] - h[:, -2]).numpy()
    total = np.zeros(pred.m)
    for axis, h in enumerate(fluxes):
        dim = axis + 1
        jump = h.narrow(dim, 0, 1) - h.narrow(dim, h.shape[dim] - 1, 1)
        others = [dx for k, dx in enumerate(mesh.spacings) if k != axis]
        total += jump.reshape(pred.m, -1).sum(dim=1).numpy() * float(np.prod(others))
    return total


def _interior(values: np.ndarray, pred: Trajectory) -> np.ndarray:
    """Cells entering the remainder sums: 1..n-1 on Dirichlet axes, all on periodic ones."""
    return values if pred.mesh.periodic else values[..., 1:-1]


def boundary_flux_series(
    pred: Trajectory,
    model: Union[CfnModel, PdeSystem],
    solver: Optional[SolverConfig] = None,
) -> np.ndarray:
    """Stage-weighted F_a - F_b of each step s -> s+1, averaged over its sub-steps, shape [L, m]."""
    auditor = _auditor(pred, model, solver)
    weights = STAGE_WEIGHTS[auditor.integrator]
    offset = int(round(pred.t0 / pred.dt))
    out = np.zeros((pred.steps, pred.m))
    with torch.no_grad():
        for s in range(pred.steps):
            for h, stages in auditor.substeps(torch.from_numpy(pred.values[s]), offset + s):
                for w, z in zip(weights, stages):
                    out[s] += (h / pred.dt) * w * _boundary_flux(auditor.fluxes(z, h), pred)
    return out


def conserved_remainder(
    pred: Trajectory,
    model: Union[CfnModel, PdeSystem],
    solver: Optional[SolverConfig] = None,
) -> np.ndarray:
    """C(u(t_l)) per conserved variable, shape [L+1, m].

    `model` is the CFN that produced the prediction (learned interface fluxes and
    its own time integrator), or the PDE system of a classical reference made
    with `solver` (default settings when omitted).
    """
    volume = pred.mesh.cell_volume
    cells = _interior(pred.values, pred)
    axes = tuple(range(2, cells.ndim))
    mass_change = (cells - cells[:1]).sum(axis=axes) * volume
    boundary = np.zeros((pred.steps + 1, pred.m))
    if pred.steps:
        boundary[1:] = np.cumsum(boundary_flux_series(pred, model, solver), axis=0) * pred.dt
    return np.abs(mass_change - boundary)


# ============ Entropy ============

def entropy_remainder(pred: Trajectory, sys: PdeSystem) -> np.ndarray:
    """𝒥(u(t_l)) with the true entropy pair, shape [L+1]; non-positive for entropy-stable output."""
    if pred.m != sys.m or pred.mesh.dim != sys.dim:
        raise ConfigurationError(f"prediction does not fit {sys.name.value}")
    values = torch.from_numpy(pred.values)
    with torch.no_grad():
        entropy = torch.stack([sys.entropy(v) for v in values]).numpy()

    cells = _interior(entropy[:, None], pred)[:, 0]
    axes = tuple(range(1, cells.ndim))
    change = (cells - cells[:1]).sum(axis=axes) * pred.mesh.cell_volume
    if pred.mesh.periodic:
        return change

    # F_a - F_b from the boundary cells u_0, u_n of each step s -> s+1
    with torch.no_grad():
        left = sys.entropy_flux(values[:-1, :, 0].T).numpy()
        right = sys.entropy_flux(values[:-1, :, -1].T).numpy()
    boundary = np.zeros(pred.steps + 1)
    boundary[1:] = np.cumsum(left - right) * pred.dt
    return change - boundary


# ============ Errors ============

def relative_l2(pred: FieldState, truth: FieldState) -> np.ndarray:
    """||pred - truth|| / ||truth|| per variable with cell-volume weights."""
    if pred.values.shape != truth.values.shape or pred.mesh != truth.mesh:
        raise ConfigurationError(f"shapes differ: {pred.values.shape} vs {truth.values.shape}")
    volume = pred.mesh.cell_volume
    axes = tuple(range(1, truth.values.ndim))
    num = np.sqrt(volume * ((pred.values - truth.values) ** 2).sum(axis=axes))
    den = np.sqrt(volume * (truth.values ** 2).sum(axis=axes))
    if (den == 0).any():
        zero = [k for k in range(len(den)) if den[k] == 0]
        raise MetricError(f"reference is identically zero for variables {zero} (e.g. initial momentum at rest)")
    return num / den


def shock_location(s: FieldState, var: int = 0) -> int:
    """Index j maximising |u_{j+1} - u_j|; ties go to the smallest j."""
    if s.mesh.dim != 1:
        raise UnsupportedOperationError("shock location is defined for 1D states")
    return int(np.argmax(np.abs(np.diff(s.values[var]))))


def _relative_l2_or_nan(pred: FieldState, truth: FieldState) -> np.ndarray:
    volume = pred.mesh.cell_volume
    axes = tuple(range(1, truth.values.ndim))
    den = np.sqrt(volume * (truth.values ** 2).sum(axis=axes))
    if (den > 0).all():
        return relative_l2(pred, truth)
    num = np.sqrt(volume * ((pred.values - truth.values) ** 2).sum(axis=axes))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


# ============ Evaluation ============

def align_reference(pred: Trajectory, reference: Trajectory) -> Trajectory:
    """Reference restricted to the prediction's grid and time span."""
    from .data_manager import coarsen

    if not math.isclose(pred.dt, reference.dt, rel_tol=1e-9):
        raise ConfigurationError(f"prediction dt {pred.dt} differs from reference dt {reference.dt}")
    if reference.mesh != pred.mesh:
        if reference.mesh.with_intervals(pred.mesh.n) != pred.mesh or reference.mesh.n % pred.mesh.n:
            raise ConfigurationError("reference mesh is not a refinement of the prediction mesh")
        factor = reference.mesh.n // pred.mesh.n
        logger.info(f"Subsampling reference by {factor} to the prediction grid")
        reference = coarsen(reference, factor)
    steps = min(pred.steps, reference.steps)
    if steps < pred.steps:
        logger.warning(f"Reference covers {steps} of {pred.steps} predicted steps")
    return reference.window(0, steps)


def evaluate_prediction(
    pred: Trajectory,
    reference: Optional[Trajectory] = None,
    model: Optional[Union[CfnModel, PdeSystem]] = None,
    sys: Optional[PdeSystem] = None,
    variable_names: Optional[Sequence[str]] = None,
) -> MetricSeries:
    """Every metric the inputs allow."""
    names = list(variable_names or (sys.variable_names if sys else [f"u{k}" for k in range(pred.m)]))
    if reference is not None:
        reference = align_reference(pred, reference)
        pred = pred.window(0, reference.steps)

    series: Dict[str, np.ndarray] = {}
    if model is not None:
        series["conserved"] = conserved_remainder(pred, model)
    if sys is not None:
        series["entropy"] = entropy_remainder(pred, sys)
    if reference is not None:
        rel = np.stack([_relative_l2_or_nan(p, r) for p, r in zip(pred.states(), reference.states())])
        if np.isnan(rel).any():
            logger.warning("Reference is identically zero for some variables at some times; relative l2 set to NaN")
        series["relative_l2"] = rel
    if pred.mesh.dim == 1:
        states = pred.states()
        series["total_variation"] = np.array([[total_variation(s, k) for k in range(pred.m)] for s in states])
        series["shock"] = np.array([[shock_location(s, k) for k in range(pred.m)] for s in states])
        if reference is not None:
            ref_shock = np.array([[shock_location(s, k) for k in range(pred.m)] for s in reference.states()])
            series["shock_error"] = np.abs(series["shock"] - ref_shock)

    return MetricSeries(pred.times, names, **series)


def write_metrics_csv(series: MetricSeries, path: Union[str, Path]) -> Path:
    path = Path(path)
    digits = settings.csv_digits
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "metric", "variable", "value"])
        for t, metric, variable, value in series.rows():
            writer.writerow([f"{t:.{digits}g}", metric, variable, f"{float(value):.{digits}g}"])
    return path
