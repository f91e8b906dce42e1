"""
Data Manager - trajectory datasets and model checkpoints
Reference-data generation, noise and coarsening protocols, and bit-exact persistence
"""

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .classical import SolverConfig, solve_reference
from .config import settings
from .errors import ConfigurationError, DataFormatError
from .grid import MIN_INTERVALS, AxisGrid, BoundaryKind, BoundarySpec, Mesh, TimeGrid, Trajectory
from .models import Activation, CfnModel, MlpParams
from .physics import (
    BUILTIN_CASES,
    IcSampler,
    PdeName,
    PdeSystem,
    builtin_initial_condition,
    get_system,
    sample_initial_condition,
)


PathLike = Union[str, Path]

MANIFEST_FILE = "manifest.json"
TRAJECTORY_FILE = "traj_%04d.bin"
CHECKPOINT_MAGIC = b"CFNLAB-CHECKPOINT"
COARSEN_FACTORS = (1, 2, 4, 8)
PAYLOAD_DTYPE = np.dtype("<f8")

# Noise streams are kept apart from the IC-parameter streams of the same seed
NOISE_STREAM = 1


def checksum(payload: bytes) -> str:
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


# ============ Manifest ============

class TrajectoryRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index: int
    file: str
    checksum: str
    steps: int
    params: Dict[str, float] = Field(default_factory=dict)
    dirichlet_values: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None


class DatasetManifest(BaseModel):
    """Canonical description of a dataset directory."""
    model_config = ConfigDict(extra="forbid")

    format_version: int = settings.format_version
    pde: PdeName
    m: int = Field(ge=1)
    dim: int = Field(ge=1, le=2)
    a: float
    b: float
    n: int = Field(ge=1)
    dx: float = Field(gt=0)
    dt: float = Field(gt=0)
    L: int = Field(ge=0)
    L_train: int = Field(ge=1)
    N_traj: int = Field(ge=1)
    noise_eta: float = Field(default=0.0, ge=0.0, le=1.0)
    noise_scale: Optional[float] = None
    coarsen_factor: int = 1
    g: float = 1.0
    gamma: float = 1.4
    bc_kind: BoundaryKind
    variable_names: List[str]
    seed: int = 0
    solver: Dict[str, Any] = Field(default_factory=dict)
    source: Optional[str] = None
    trajectories: List[TrajectoryRecord] = Field(default_factory=list)

    def system(self) -> PdeSystem:
        return get_system(self.pde, g=self.g, gamma=self.gamma)

    def mesh(self) -> Mesh:
        axis = AxisGrid(self.a, self.b, self.n)
        return Mesh(tuple(axis for _ in range(self.dim)), self.bc_kind == BoundaryKind.PERIODIC)

    def cells(self) -> int:
        return int(np.prod(self.mesh().shape))

    def payload_bytes(self, steps: Optional[int] = None) -> int:
        steps = self.L if steps is None else steps
        return PAYLOAD_DTYPE.itemsize * (steps + 1) * self.m * self.cells()


@dataclass
class Dataset:
    manifest: DatasetManifest
    trajectories: List[Trajectory] = field(default_factory=list)

    def __post_init__(self):
        if len(self.trajectories) != self.manifest.N_traj:
            raise ConfigurationError(
                f"manifest declares {self.manifest.N_traj} trajectories, got {len(self.trajectories)}"
            )

    def __len__(self) -> int:
        return len(self.trajectories)

    def __getitem__(self, index: int) -> Trajectory:
        return self.trajectories[index]

    @property
    def mesh(self) -> Mesh:
        return self.manifest.mesh()

    @property
    def dt(self) -> float:
        return self.manifest.dt

    def system(self) -> PdeSystem:
        return self.manifest.system()


def _bc_values(bc: BoundarySpec):
    return None if bc.is_periodic else bc.dirichlet_values


def _records(trajectories: Sequence[Trajectory]) -> List[TrajectoryRecord]:
    """Records with placeholder checksums; save_dataset fills them in."""
    return [
        TrajectoryRecord(
            index=k,
            file=TRAJECTORY_FILE % k,
            checksum="",
            steps=traj.steps,
            params={key: float(v) for key, v in traj.provenance.get("params", {}).items()},
            dirichlet_values=_bc_values(traj.bc),
        )
        for k, traj in enumerate(trajectories)
    ]


def _manifest_for(
    sys: PdeSystem,
    mesh: Mesh,
    dt: float,
    trajectories: Sequence[Trajectory],
    L_train: Optional[int],
    seed: int,
    solver: Optional[SolverConfig] = None,
    source: Optional[str] = None,
) -> DatasetManifest:
    L = trajectories[0].steps
    axis = mesh.axes[0]
    return DatasetManifest(
        pde=sys.name,
        m=sys.m,
        dim=mesh.dim,
        a=axis.a,
        b=axis.b,
        n=axis.n,
        dx=axis.dx,
        dt=dt,
        L=L,
        L_train=L_train or min(L, 20) or 1,
        N_traj=len(trajectories),
        g=sys.g,
        gamma=sys.gamma,
        bc_kind=BoundaryKind.PERIODIC if mesh.periodic else BoundaryKind.DIRICHLET,
        variable_names=list(sys.variable_names),
        seed=seed,
        solver=solver.model_dump(mode="json") if solver else {},
        source=source,
        trajectories=_records(trajectories),
    )


# ============ Generation ============

def generate_dataset(
    pde: Union[str, PdeName],
    n: int,
    dt: Optional[float] = None,
    L: Optional[int] = None,
    n_traj: int = 1,
    seed: int = 0,
    L_train: Optional[int] = None,
    solver_cfg: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
    g: float = 1.0,
    gamma: float = 1.4,
) -> Dataset:
    """N_traj reference trajectories from seeded random initial conditions."""
    if n_traj < 1:
        raise ConfigurationError(f"N_traj must be at least 1, got {n_traj}")
    sys = get_system(pde, g=g, gamma=gamma)
    dt = sys.default_dt if dt is None else dt
    L = sys.default_steps if L is None else L
    tg = TimeGrid(dt, L)
    mesh = sys.mesh(n)
    solver_cfg = solver_cfg or SolverConfig()
    sampler = IcSampler(sys.name, seed)
    workers = workers or settings.default_workers

    logger.info(
        f"Generating {n_traj} {sys.name.value} trajectories (n={n}, dt={dt}, L={L}, seed={seed}, workers={workers})"
    )

    def _solve(index: int) -> Trajectory:
        params = sampler.draw(index)
        ic = sample_initial_condition(sampler, mesh, index, sys)
        traj = solve_reference(ic, sys, solver_cfg, tg, trajectory_index=index)
        traj.provenance.update({"seed": seed, "index": index, "params": params})
        logger.debug(f"Trajectory {index} solved")
        return traj

    if workers > 1 and n_traj > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(_solve, range(n_traj)))
    else:
        trajectories = [_solve(k) for k in range(n_traj)]

    manifest = _manifest_for(sys, mesh, dt, trajectories, L_train or min(L, 20) or 1, seed, solver_cfg)
    logger.info(f"Generated {n_traj} trajectories")
    return Dataset(manifest, trajectories)


def generate_builtin_dataset(
    name: str,
    n: Optional[int] = None,
    dt: Optional[float] = None,
    L: Optional[int] = None,
    solver_cfg: Optional[SolverConfig] = None,
    g: float = 1.0,
    gamma: float = 1.4,
) -> Dataset:
    """One reference trajectory from a named built-in test case."""
    if name not in BUILTIN_CASES:
        raise ConfigurationError(f"unknown built-in case '{name}', expected one of {sorted(BUILTIN_CASES)}")
    case = BUILTIN_CASES[name]
    sys = get_system(case.pde, g=g, gamma=gamma)
    ic = builtin_initial_condition(name, n, sys)
    tg = TimeGrid(dt or case.dt, case.steps if L is None else L)
    solver_cfg = solver_cfg or SolverConfig()

    logger.info(f"Solving built-in case {name} (n={ic.mesh.n}, dt={tg.dt}, L={tg.steps})")
    traj = solve_reference(ic, sys, solver_cfg, tg, trajectory_index=0)
    traj.provenance.update({"params": dict(case.params), "case": name})
    manifest = _manifest_for(sys, ic.mesh, tg.dt, [traj], None, 0, solver_cfg, source=name)
    return Dataset(manifest, [traj])


def dataset_from_trajectory(template: DatasetManifest, traj: Trajectory, source: Optional[str] = None) -> Dataset:
    """One-trajectory dataset (e.g. a prediction) described like `template`."""
    axis = traj.mesh.axes[0]
    manifest = template.model_copy(update={
        "n": axis.n,
        "dx": axis.dx,
        "dt": traj.dt,
        "L": traj.steps,
        "L_train": max(1, min(template.L_train, traj.steps)),
        "N_traj": 1,
        "noise_eta": 0.0,
        "noise_scale": None,
        "coarsen_factor": 1,
        "source": source,
        "trajectories": _records([traj]),
    })
    return Dataset(manifest, [traj])


# ============ Noise and coarsening ============

def mean_abs(trajectories: Sequence[Trajectory]) -> float:
    """Mean |u| over every entry of every trajectory."""
    total = sum(float(np.abs(t.values).sum()) for t in trajectories)
    count = sum(t.values.size for t in trajectories)
    return total / count


def noise_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index), NOISE_STREAM])))


def add_noise(traj: Trajectory, eta: float, seed: int, scale: Optional[float] = None, index: int = 0) -> Trajectory:
    """u + eta * scale * xi with xi standard normal; scale defaults to the trajectory's mean |u|."""
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f"noise intensity eta must lie in [0, 1], got {eta}")
    if eta == 0.0:
        return replace(traj, values=traj.values.copy(), provenance=dict(traj.provenance))
    scale = mean_abs([traj]) if scale is None else scale
    xi = noise_generator(seed, index).standard_normal(traj.values.shape)
    provenance = dict(traj.provenance, noise={"eta": eta, "scale": scale, "seed": seed})
    return replace(traj, values=traj.values + eta * scale * xi, provenance=provenance)


def add_noise_dataset(ds: Dataset, eta: float, seed: int) -> Dataset:
    """Noisy copy of a dataset with one dataset-wide scale."""
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f"noise intensity eta must lie in [0, 1], got {eta}")
    if ds.manifest.noise_eta > 0:
        logger.warning(f"Dataset already carries noise (eta={ds.manifest.noise_eta}); adding more")
    scale = mean_abs(ds.trajectories)
    noisy = [add_noise(t, eta, seed, scale, k) for k, t in enumerate(ds.trajectories)]
    logger.info(f"Added noise eta={eta} with scale {scale:.6g} to {len(noisy)} trajectories")
    manifest = ds.manifest.model_copy(update={"noise_eta": eta, "noise_scale": scale, "seed": ds.manifest.seed})
    return Dataset(manifest.model_copy(update={"trajectories": _records(noisy)}), noisy)


def coarsen(traj: Trajectory, factor: int) -> Trajectory:
    """Keep every factor-th cell average (endpoints included); dt unchanged."""
    if factor not in COARSEN_FACTORS:
        raise ConfigurationError(f"coarsening factor must be one of {COARSEN_FACTORS}, got {factor}")
    n = traj.mesh.n
    if n % factor:
        raise ConfigurationError(f"factor {factor} does not divide n={n}")
    if factor == 1:
        return replace(traj, values=traj.values.copy(), provenance=dict(traj.provenance))
    if n // factor < MIN_INTERVALS:
        raise ConfigurationError(f"coarsening n={n} by {factor} leaves fewer than {MIN_INTERVALS} intervals")
    mesh = traj.mesh.with_intervals(n // factor)
    index = (slice(None), slice(None)) + (slice(None, None, factor),) * traj.mesh.dim
    return replace(traj, mesh=mesh, values=np.ascontiguousarray(traj.values[index]))


def coarsen_dataset(ds: Dataset, factor: int) -> Dataset:
    trajectories = [coarsen(t, factor) for t in ds.trajectories]
    mesh = trajectories[0].mesh
    manifest = ds.manifest.model_copy(update={
        "n": mesh.n,
        "dx": mesh.dx,
        "coarsen_factor": ds.manifest.coarsen_factor * factor,
        "trajectories": _records(trajectories),
    })
    logger.info(f"Coarsened dataset n={ds.manifest.n} -> {mesh.n}")
    return Dataset(manifest, trajectories)


# ============ Dataset persistence ============

def save_dataset(ds: Dataset, path: PathLike) -> Path:
    """Payloads first, manifest last."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records = []
    for record, traj in zip(_records(ds.trajectories), ds.trajectories):
        payload = np.ascontiguousarray(traj.values, dtype=PAYLOAD_DTYPE).tobytes()
        (path / record.file).write_bytes(payload)
        records.append(record.model_copy(update={"checksum": checksum(payload)}))

    manifest = ds.manifest.model_copy(update={"trajectories": records, "N_traj": len(records)})
    text = json.dumps(manifest.model_dump(mode="json"), sort_keys=True, indent=2)
    (path / MANIFEST_FILE).write_text(text + "\n", encoding="utf-8")
    logger.info(f"Saved {len(records)} trajectories to {path}")
    return path


def load_manifest(path: PathLike) -> DatasetManifest:
    file = Path(path) / MANIFEST_FILE
    try:
        raw = json.loads(file.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataFormatError(f"no dataset manifest at {file}") from None
    except json.JSONDecodeError as e:
        raise DataFormatError(f"unreadable manifest {file}: {e}") from e
    if raw.get("format_version") != settings.format_version:
        raise DataFormatError(
            f"dataset format version {raw.get('format_version')} is not supported "
            f"(expected {settings.format_version})"
        )
    try:
        return DatasetManifest.model_validate(raw)
    except ValidationError as e:
        raise DataFormatError(f"invalid manifest {file}: {e}") from e


def load_dataset(path: PathLike) -> Dataset:
    path = Path(path)
    manifest = load_manifest(path)
    mesh = manifest.mesh()
    trajectories = []
    for record in manifest.trajectories:
        file = path / record.file
        try:
            payload = file.read_bytes()
        except FileNotFoundError:
            raise DataFormatError(f"missing trajectory payload {file}") from None
        expected = manifest.payload_bytes(record.steps)
        if len(payload) != expected:
            raise DataFormatError(f"truncated payload {file}: {len(payload)} bytes, expected {expected}")
        if checksum(payload) != record.checksum:
            raise DataFormatError(f"checksum mismatch for {file}")

        values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).astype(np.float64)
        values = values.reshape((record.steps + 1, manifest.m) + mesh.shape)
        if manifest.bc_kind == BoundaryKind.PERIODIC:
            bc = BoundarySpec.periodic()
        else:
            if record.dirichlet_values is None:
                raise DataFormatError(f"trajectory {record.index} lacks Dirichlet values")
            bc = BoundarySpec.dirichlet(*record.dirichlet_values)
        provenance = {"pde": manifest.pde.value, "seed": manifest.seed, "index": record.index, "params": record.params}
        trajectories.append(Trajectory(mesh, bc, values, manifest.dt, 0.0, provenance))

    if len(trajectories) != manifest.N_traj:
        raise DataFormatError(f"manifest lists {len(trajectories)} trajectories, declares {manifest.N_traj}")
    logger.debug(f"Loaded {len(trajectories)} trajectories from {path}")
    return Dataset(manifest, trajectories)


def export_csv(traj: Trajectory, var: int, path: PathLike) -> Path:
    """Long-format CSV of one variable: t, x (, y), value."""
    if not 0 <= var < traj.m:
        raise ConfigurationError(f"variable index {var} outside 0..{traj.m - 1}")
    path = Path(path)
    digits = settings.csv_digits
    centers = traj.mesh.centers()
    header = ["t", "x", "value"] if traj.mesh.dim == 1 else ["t", "x", "y", "value"]

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for t, state in zip(traj.times, traj.values):
            for idx in np.ndindex(*traj.mesh.shape):
                coords = [f"{centers[k][i]:.{digits}g}" for k, i in enumerate(idx)]
                writer.writerow([f"{t:.{digits}g}", *coords, f"{state[var][idx]:.{digits}g}"])
    return path


# ============ Checkpoints ============

class NetHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layer_dims: List[int]
    activation: Activation


class CheckpointHeader(BaseModel):
    """Everything needed to rebuild a CfnModel except the parameter values."""
    model_config = ConfigDict(extra="forbid")

    format_version: int = settings.format_version
    variant: str
    m: int
    a: float
    b: float
    n: int
    dim: int
    periodic: bool
    dt: float
    dirichlet_values: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None
    closed_form_speed: bool
    integrator: str
    mlw_C: float
    mlw_alpha: float
    stencil: Tuple[int, int]
    flux_net: NetHeader
    radius_net: Optional[NetHeader] = None
    optimizer: Dict[str, Any] = Field(default_factory=dict)
    best_loss: Optional[float] = None
    seed: Optional[int] = None
    manifest: Optional[Dict[str, Any]] = None
    payload_bytes: int
    checksum: str

    @model_validator(mode="after")
    def _boundary_values(self) -> "CheckpointHeader":
        if not self.periodic and self.dirichlet_values is None:
            raise ValueError("a Dirichlet model needs its boundary values")
        return self


@dataclass
class Checkpoint:
    model: CfnModel
    header: CheckpointHeader

    @property
    def manifest(self) -> Optional[DatasetManifest]:
        if self.header.manifest is None:
            return None
        return DatasetManifest.model_validate(self.header.manifest)


def _net_header(p: MlpParams) -> NetHeader:
    return NetHeader(layer_dims=p.layer_dims, activation=p.activation)


def save_checkpoint(
    model: CfnModel,
    path: PathLike,
    manifest: Optional[DatasetManifest] = None,
    optimizer: Optional[Dict[str, Any]] = None,
    best_loss: Optional[float] = None,
    seed: Optional[int] = None,
) -> Path:
    """Magic line, one-line JSON header, little-endian float64 parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = [t.detach().numpy() for p in model.param_sets() for t in p.tensors()]
    payload = b"".join(np.ascontiguousarray(b, dtype=PAYLOAD_DTYPE).tobytes() for b in blocks)
    axis = model.mesh.axes[0]

    header = CheckpointHeader(
        variant=model.variant.value,
        m=model.m,
        a=axis.a,
        b=axis.b,
        n=axis.n,
        dim=model.dim,
        periodic=model.mesh.periodic,
        dt=model.dt,
        dirichlet_values=_bc_values(model.bc),
        closed_form_speed=model.closed_form_speed,
        integrator=model.integrator.value,
        mlw_C=model.mlw_C,
        mlw_alpha=model.mlw_alpha,
        stencil=model.stencil,
        flux_net=_net_header(model.flux_net),
        radius_net=_net_header(model.radius_net) if model.radius_net is not None else None,
        optimizer=optimizer or {},
        best_loss=best_loss,
        seed=seed,
        manifest=manifest.model_dump(mode="json", exclude={"trajectories"}) if manifest else None,
        payload_bytes=len(payload),
        checksum=checksum(payload),
    )
    text = json.dumps(header.model_dump(mode="json"), sort_keys=True)
    path.write_bytes(CHECKPOINT_MAGIC + b"\n" + text.encode("utf-8") + b"\n" + payload)
    logger.debug(f"Checkpoint written to {path}")
    return path


def _read_net(spec: NetHeader, payload: bytes, offset: int) -> Tuple[MlpParams, int]:
    dims = spec.layer_dims
    shapes = [(d_out, d_in) for d_in, d_out in zip(dims[:-1], dims[1:])] + [(d,) for d in dims[1:-1]]
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        end = offset + count * PAYLOAD_DTYPE.itemsize
        block = np.frombuffer(payload[offset:end], dtype=PAYLOAD_DTYPE).astype(np.float64).reshape(shape)
        tensors.append(torch.from_numpy(block))
        offset = end
    n_weights = len(dims) - 1
    return MlpParams(tensors[:n_weights], tensors[n_weights:], spec.activation), offset


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataFormatError(f"no checkpoint at {path}") from None

    magic, sep, rest = raw.partition(b"\n")
    if magic != CHECKPOINT_MAGIC or not sep:
        raise DataFormatError(f"{path} is not a checkpoint")
    header_line, sep, payload = rest.partition(b"\n")
    try:
        raw_header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"unreadable checkpoint header in {path}: {e}") from e
    if raw_header.get("format_version") != settings.format_version:
        raise DataFormatError(f"checkpoint format version {raw_header.get('format_version')} is not supported")
    try:
        header = CheckpointHeader.model_validate(raw_header)
    except ValidationError as e:
        raise DataFormatError(f"invalid checkpoint header in {path}: {e}") from e

    if len(payload) != header.payload_bytes:
        raise DataFormatError(f"truncated checkpoint {path}: {len(payload)} bytes, expected {header.payload_bytes}")
    if checksum(payload) != header.checksum:
        raise DataFormatError(f"checksum mismatch for checkpoint {path}")

    flux_net, offset = _read_net(header.flux_net, payload, 0)
    radius_net = None
    if header.radius_net is not None:
        radius_net, offset = _read_net(header.radius_net, payload, offset)

    axis = AxisGrid(header.a, header.b, header.n)
    mesh = Mesh(tuple(axis for _ in range(header.dim)), header.periodic)
    bc = BoundarySpec.periodic() if header.periodic else BoundarySpec.dirichlet(*header.dirichlet_values)
    try:
        model = CfnModel(
            variant=header.variant,
            flux_net=flux_net,
            radius_net=radius_net,
            m=header.m,
            mesh=mesh,
            dt=header.dt,
            bc=bc,
            closed_form_speed=header.closed_form_speed,
            integrator=header.integrator,
            mlw_C=header.mlw_C,
            mlw_alpha=header.mlw_alpha,
            stencil=header.stencil,
        )
    except (ConfigurationError, ValueError) as e:
        raise DataFormatError(f"checkpoint {path} describes an invalid model: {e}") from e
    return Checkpoint(model, header)
