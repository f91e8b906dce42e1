"""
Differentiable Networks
Dense MLPs, input Jacobians and parameter gradients on torch autograd
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from ..errors import ConfigurationError, UnsupportedOperationError


DTYPE = torch.float64


class Activation(str, Enum):
    SILU = "silu"
    RELU = "relu"

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        if self is Activation.SILU:
            return F.silu(x)
        return torch.relu(x)


@dataclass
class MlpParams:
    """Weights W^(1..M) (d_m x d_{m-1}) and biases b^(1..M-1); the last layer has no bias."""
    weights: List[torch.Tensor]
    biases: List[torch.Tensor] = field(default_factory=list)
    activation: Activation = Activation.SILU

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if not self.weights:
            raise ConfigurationError("an MLP needs at least one layer")
        if len(self.biases) != len(self.weights) - 1:
            raise ConfigurationError(
                f"expected {len(self.weights) - 1} bias vectors, got {len(self.biases)}"
            )
        for k, w in enumerate(self.weights):
            if w.ndim != 2:
                raise ConfigurationError(f"weight {k} must be a matrix, got shape {tuple(w.shape)}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ConfigurationError(f"weight {k} does not chain onto weight {k - 1}")
            if k < len(self.biases) and self.biases[k].shape != (w.shape[0],):
                raise ConfigurationError(f"bias {k} must have shape ({w.shape[0]},)")

    @property
    def layer_dims(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def tensors(self) -> List[torch.Tensor]:
        """All parameter blocks in a fixed order: weights, then biases."""
        return list(self.weights) + list(self.biases)

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors())

    def clone(self) -> "MlpParams":
        return MlpParams(
            [w.detach().clone() for w in self.weights],
            [b.detach().clone() for b in self.biases],
            self.activation,
        )

    def with_tensors(self, tensors: Sequence[torch.Tensor]) -> "MlpParams":
        """Same architecture, blocks replaced in `tensors()` order."""
        count = len(self.weights)
        return MlpParams(list(tensors[:count]), list(tensors[count:]), self.activation)

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.tensors())


def init_params(layer_dims: Sequence[int], activation: Activation = Activation.SILU, seed: int = 0) -> MlpParams:
    """Glorot-uniform weights, zero biases, reproducible from `seed`."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"invalid layer dims {dims}")
    generator = torch.Generator().manual_seed(int(seed))
    weights = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (d_in + d_out))
        weights.append((torch.rand(d_out, d_in, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound)
    biases = [torch.zeros(d, dtype=DTYPE) for d in dims[1:-1]]
    return MlpParams(weights, biases, Activation(activation))


def zero_params(layer_dims: Sequence[int], activation: Activation = Activation.SILU) -> MlpParams:
    dims = [int(d) for d in layer_dims]
    weights = [torch.zeros(d_out, d_in, dtype=DTYPE) for d_in, d_out in zip(dims[:-1], dims[1:])]
    return MlpParams(weights, [torch.zeros(d, dtype=DTYPE) for d in dims[1:-1]], Activation(activation))


def mlp_forward(p: MlpParams, v: torch.Tensor) -> torch.Tensor:
    """y = W^(M) h^(M-1), h^(k) = act(W^(k) h^(k-1) + b^(k)); batched over leading axes of v."""
    v = torch.as_tensor(v, dtype=DTYPE)
    if v.ndim == 0 or v.shape[-1] != p.input_dim:
        raise ConfigurationError(f"input of shape {tuple(v.shape)} does not match d_0 = {p.input_dim}")
    h = v
    for w, b in zip(p.weights[:-1], p.biases):
        h = p.activation(h @ w.T + b)
    return h @ p.weights[-1].T


def input_jacobian(
    p: MlpParams,
    v: torch.Tensor,
    create_graph: Optional[bool] = None,
    outputs: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """dy/dv as [..., d_M, d_0], one reverse pass per output row.

    `outputs` restricts the rows computed. Differentiable with respect to
    parameters and v whenever grad mode is on.
    """
    v = torch.as_tensor(v, dtype=DTYPE)
    if create_graph is None:
        create_graph = torch.is_grad_enabled()
    with torch.enable_grad():
        x = v if v.requires_grad else v.detach().requires_grad_(True)
        y = mlp_forward(p, x)
        rows = []
        for i in (range(y.shape[-1]) if outputs is None else outputs):
            (g,) = torch.autograd.grad(
                y[..., i].sum(), x,
                create_graph=create_graph, retain_graph=True, allow_unused=True,
            )
            rows.append(torch.zeros_like(x) if g is None else g)
    return torch.stack(rows, dim=-2)


class Tape:
    """Records which parameter blocks a scalar program depends on.

    Each tape owns one reverse sweep; concurrent evaluations use private
    tapes over the same parameter sets.
    """

    def __init__(self, *param_sets: MlpParams):
        self.param_sets = param_sets
        self.leaves: List[torch.Tensor] = [t for p in param_sets for t in p.tensors()]
        for t in self.leaves:
            if not t.requires_grad:
                t.requires_grad_(True)

    def gradient(self, loss: torch.Tensor) -> List[MlpParams]:
        """Reverse sweep; unused blocks get exact zeros."""
        if not isinstance(loss, torch.Tensor) or loss.ndim != 0:
            raise UnsupportedOperationError("gradients are defined for scalar tensor programs")
        if not loss.requires_grad:
            grads = [None] * len(self.leaves)
        else:
            grads = torch.autograd.grad(loss, self.leaves, allow_unused=True)
        flat = [torch.zeros_like(t) if g is None else g.detach() for t, g in zip(self.leaves, grads)]

        out, offset = [], 0
        for p in self.param_sets:
            count = len(p.tensors())
            out.append(p.with_tensors([t.detach() for t in flat[offset:offset + count]]))
            offset += count
        return out


def grad_params(
    loss_fn: Callable[..., torch.Tensor],
    param_sets: Sequence[MlpParams],
    *inputs,
) -> Tuple[float, List[MlpParams]]:
    """(loss value, gradients shaped like each parameter set) of loss_fn(*param_sets, *inputs)."""
    tape = Tape(*param_sets)
    with torch.enable_grad():
        loss = loss_fn(*param_sets, *inputs)
        grads = tape.gradient(loss)
    return float(loss.detach()), grads
