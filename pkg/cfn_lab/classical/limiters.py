"""
Slope Limiting
Minmod limiter and the piecewise-linear interface reconstruction
"""

from typing import Optional, Tuple, Union

import numpy as np
import torch

from ..config import settings


ArrayLike = Union[np.ndarray, torch.Tensor]


def max_first(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise max; ties (and their gradient) go to `a`."""
    return torch.where(a >= b, a, b)


def min_first(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.where(a <= b, a, b)


def minmod_phi(r: Union[float, torch.Tensor]) -> Union[float, torch.Tensor]:
    """phi(r) = max(0, min(r, (1 + r) / 2, 1))."""
    if isinstance(r, torch.Tensor):
        inner = min_first(min_first(r, 0.5 * (1.0 + r)), torch.ones_like(r))
        return max_first(torch.zeros_like(r), inner)
    return max(0.0, min(r, (1.0 + r) / 2.0, 1.0))


def limited_slopes(padded: torch.Tensor, axis: int = 0, eps: Optional[float] = None) -> torch.Tensor:
    """Limited undivided slopes phi(r_j) * (ū_{j+1} - ū_j) for padded cells 1 .. len-2.

    A flat forward difference (|ū_{j+1} - ū_j| < eps) gives slope 0.
    """
    eps = settings.slope_eps if eps is None else eps
    dim = axis + 1
    diff = torch.diff(padded, dim=dim)
    size = diff.shape[dim]
    backward = diff.narrow(dim, 0, size - 1)
    forward = diff.narrow(dim, 1, size - 1)

    flat = forward.abs() < eps
    safe_forward = torch.where(flat, torch.ones_like(forward), forward)
    r = backward / safe_forward
    return torch.where(flat, torch.zeros_like(forward), minmod_phi(r) * forward)


def reconstruct_interfaces(
    padded: ArrayLike,
    dx: float = 1.0,
    axis: int = 0,
    eps: Optional[float] = None,
) -> Tuple[ArrayLike, ArrayLike]:
    """Interface values (u⁻, u⁺) at every j+1/2 reachable from a width-2 padded array.

    With N interior cells the result has N+1 interfaces, from the left
    boundary interface to the right one, along the given spatial axis.
    """
    from_numpy = not isinstance(padded, torch.Tensor)
    p = torch.from_numpy(np.ascontiguousarray(padded, dtype=np.float64)) if from_numpy else padded

    dim = axis + 1
    length = p.shape[dim]
    slopes = limited_slopes(p, axis, eps)
    ux = slopes / dx

    count = length - 3
    u_minus = p.narrow(dim, 1, count) + 0.5 * dx * ux.narrow(dim, 0, count)
    u_plus = p.narrow(dim, 2, count) - 0.5 * dx * ux.narrow(dim, 1, count)

    if from_numpy:
        return u_minus.numpy(), u_plus.numpy()
    return u_minus, u_plus
