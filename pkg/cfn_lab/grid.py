"""
Grid Core
Uniform meshes, cell-average states, trajectories and ghost-cell padding
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .errors import ConfigurationError, UnsupportedOperationError


ArrayLike = Union[np.ndarray, torch.Tensor]

MIN_INTERVALS = 8
GHOST_WIDTH = 2


class BoundaryKind(str, Enum):
    """Boundary condition kinds."""
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class AxisGrid:
    """One uniform axis [a, b] split into n intervals."""
    a: float
    b: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.b <= self.a:
            raise ConfigurationError(f"axis requires finite b > a, got a={self.a}, b={self.b}")
        if self.n < 1:
            raise ConfigurationError(f"axis requires n >= 1, got {self.n}")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.n

    def cells(self, periodic: bool) -> int:
        # ū_n is ū_0 again on a periodic axis, so it is not stored
        return self.n if periodic else self.n + 1

    def centers(self, periodic: bool) -> np.ndarray:
        return self.a + self.dx * np.arange(self.cells(periodic), dtype=np.float64)


@dataclass(frozen=True)
class Mesh:
    """A 1D or 2D tensor-product mesh."""
    axes: Tuple[AxisGrid, ...]
    periodic: bool = True

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ConfigurationError(f"mesh dimension must be 1 or 2, got {len(self.axes)}")
        if len(self.axes) == 2 and not self.periodic:
            raise UnsupportedOperationError("2D meshes support periodic boundaries only")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def dx(self) -> float:
        return self.axes[0].dx

    @property
    def spacings(self) -> Tuple[float, ...]:
        return tuple(axis.dx for axis in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def n(self) -> int:
        return self.axes[0].n

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(axis.cells(self.periodic) for axis in self.axes)

    def centers(self) -> List[np.ndarray]:
        return [axis.centers(self.periodic) for axis in self.axes]

    def with_intervals(self, n: int) -> "Mesh":
        """Same domain, n intervals per axis."""
        return Mesh(tuple(AxisGrid(ax.a, ax.b, n) for ax in self.axes), self.periodic)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise ConfigurationError(f"steps must be non-negative, got {self.steps}")

    def times(self, t0: float = 0.0) -> np.ndarray:
        return t0 + self.dt * np.arange(self.steps + 1, dtype=np.float64)


@dataclass(frozen=True)
class BoundarySpec:
    kind: BoundaryKind
    # (left, right) state vectors, each of length m
    dirichlet_values: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None

    @classmethod
    def periodic(cls) -> "BoundarySpec":
        return cls(BoundaryKind.PERIODIC)

    @classmethod
    def dirichlet(cls, left: Sequence[float], right: Sequence[float]) -> "BoundarySpec":
        return cls(
            BoundaryKind.DIRICHLET,
            (tuple(float(v) for v in np.ravel(left)), tuple(float(v) for v in np.ravel(right))),
        )

    @property
    def is_periodic(self) -> bool:
        return self.kind == BoundaryKind.PERIODIC

    def validate(self, m: int) -> None:
        if self.kind == BoundaryKind.DIRICHLET:
            if self.dirichlet_values is None:
                raise ConfigurationError("Dirichlet boundary requires left/right values")
            left, right = self.dirichlet_values
            if len(left) != m or len(right) != m:
                raise ConfigurationError(
                    f"Dirichlet values must have length {m}, got {len(left)} and {len(right)}"
                )


@dataclass
class FieldState:
    """Cell averages of m state variables, variables first: [m, *mesh.shape]."""
    mesh: Mesh
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = self.mesh.shape
        if self.values.ndim != 1 + self.mesh.dim or tuple(self.values.shape[1:]) != expected:
            raise ConfigurationError(
                f"values of shape {self.values.shape} do not match mesh cells {expected}"
            )
        if not np.isfinite(self.values).all():
            raise ConfigurationError(f"state at t={self.time} contains non-finite values")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.values)


@dataclass
class Trajectory:
    """States at t0, t0+dt, ..., stacked as [L+1, m, *cells]."""
    mesh: Mesh
    bc: BoundarySpec
    values: np.ndarray
    dt: float
    t0: float = 0.0
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 + self.mesh.dim or tuple(self.values.shape[2:]) != self.mesh.shape:
            raise ConfigurationError(
                f"trajectory of shape {self.values.shape} does not match mesh cells {self.mesh.shape}"
            )
        if self.bc.is_periodic != self.mesh.periodic:
            raise ConfigurationError("boundary kind does not match mesh periodicity")
        self.bc.validate(self.m)

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1, dtype=np.float64)

    def state(self, l: int) -> FieldState:
        return FieldState(self.mesh, self.values[l], float(self.times[l]))

    def states(self) -> List[FieldState]:
        return [self.state(l) for l in range(self.steps + 1)]

    def window(self, start: int, length: int) -> "Trajectory":
        """Sub-trajectory with length+1 states starting at index start."""
        if start < 0 or start + length > self.steps:
            raise ConfigurationError(
                f"window [{start}, {start + length}] outside trajectory of {self.steps} steps"
            )
        return Trajectory(
            self.mesh,
            self.bc,
            self.values[start:start + length + 1],
            self.dt,
            float(self.t0 + start * self.dt),
            dict(self.provenance),
        )

    @classmethod
    def from_states(
        cls,
        states: Sequence[FieldState],
        bc: BoundarySpec,
        dt: float,
        provenance: Optional[Dict[str, Any]] = None,
    ) -> "Trajectory":
        if not states:
            raise ConfigurationError("a trajectory needs at least one state")
        values = np.stack([s.values for s in states])
        return cls(states[0].mesh, bc, values, dt, states[0].time, provenance or {})


# ===================== OPERATIONS =====================

def build_mesh(a: float, b: float, n: int, dim: int = 1, periodic: bool = True) -> Mesh:
    """Build a uniform mesh with n intervals per axis over [a, b]^dim."""
    if dim not in (1, 2):
        raise ConfigurationError(f"dim must be 1 or 2, got {dim}")
    if n < MIN_INTERVALS:
        raise ConfigurationError(
            f"n must be at least {MIN_INTERVALS} (two ghost cells per side plus interior), got {n}"
        )
    axis = AxisGrid(float(a), float(b), int(n))
    return Mesh(tuple(axis for _ in range(dim)), periodic)


def pad_values(values: ArrayLike, bc: BoundarySpec, width: int = GHOST_WIDTH) -> ArrayLike:
    """Add `width` ghost cells per side on every spatial axis of [m, *cells]."""
    if width not in (1, 2):
        raise ConfigurationError(f"ghost width must be 1 or 2, got {width}")
    from_numpy = not isinstance(values, torch.Tensor)
    t = torch.from_numpy(np.ascontiguousarray(values)) if from_numpy else values

    if bc.is_periodic:
        for axis in range(1, t.ndim):
            size = t.shape[axis]
            t = torch.cat([t.narrow(axis, size - width, width), t, t.narrow(axis, 0, width)], dim=axis)
    else:
        if t.ndim != 2:
            raise UnsupportedOperationError("Dirichlet padding is defined for 1D states only")
        bc.validate(t.shape[0])
        left, right = bc.dirichlet_values
        dtype = t.dtype if t.is_floating_point() else torch.float64
        t = t.to(dtype)
        left_ghost = torch.tensor(left, dtype=dtype).unsqueeze(1).expand(-1, width)
        right_ghost = torch.tensor(right, dtype=dtype).unsqueeze(1).expand(-1, width)
        t = torch.cat([left_ghost, t, right_ghost], dim=1)

    return t.numpy() if from_numpy else t


def pad_state(s: FieldState, bc: BoundarySpec, width: int = GHOST_WIDTH) -> np.ndarray:
    if bc.is_periodic != s.mesh.periodic:
        raise ConfigurationError("boundary kind does not match mesh periodicity")
    return pad_values(s.values, bc, width)


def total_variation(s: FieldState, var: int = 0) -> float:
    """Sum of |ū_{j+1} - ū_j| over a 1D state, including the wrap term when periodic."""
    if s.mesh.dim != 1:
        raise UnsupportedOperationError("total variation is defined for 1D states")
    u = s.values[var]
    tv = float(np.abs(np.diff(u)).sum())
    if s.mesh.periodic:
        tv += float(abs(u[0] - u[-1]))
    return tv
