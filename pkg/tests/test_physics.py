import math

import numpy as np
import pytest
import torch

from cfn_lab.errors import ConfigurationError, PhysicalStateError
from cfn_lab.physics import (
    BUILTIN_CASES,
    PARAMETER_RANGES,
    IcSampler,
    PdeName,
    builtin_initial_condition,
    entropy_pair,
    flux,
    get_system,
    initial_condition,
    jacobian,
    sample_initial_condition,
    spectral_radius,
)


def test_burgers_flux_and_speed():
    sys = get_system("burgers1d")
    assert flux(sys, 2.0)[0] == pytest.approx(2.0)
    assert spectral_radius(sys, -3.0) == pytest.approx(3.0)
    u, f = entropy_pair(sys, 2.0)
    assert u == pytest.approx(2.0)
    assert f == pytest.approx(8.0 / 6.0)


def test_burgers2d_flux_is_same_on_both_axes():
    sys = get_system(PdeName.BURGERS2D)
    out = flux(sys, [[0.5, 1.0]])
    assert out.shape == (2, 1, 2)
    np.testing.assert_allclose(out[0], out[1])


def test_shallow_water_at_rest():
    sys = get_system("shallow_water", g=1.0)
    np.testing.assert_allclose(flux(sys, [1.0, 0.0]), [0.0, 0.5])
    assert spectral_radius(sys, [1.0, 0.0]) == pytest.approx(1.0)


@pytest.mark.parametrize("pde,state", [
    ("shallow_water", [2.0, 1.0]),
    ("euler", [1.0, 0.5, 2.5]),
])
def test_spectral_radius_matches_jacobian_eigenvalues(pde, state):
    sys = get_system(pde)
    eig = np.linalg.eigvals(jacobian(sys, state))
    assert spectral_radius(sys, state) == pytest.approx(np.abs(eig).max(), rel=1e-10)


def test_jacobian_matches_autograd():
    sys = get_system("euler")
    u = torch.tensor([1.2, 0.3, 2.9], dtype=torch.float64)
    auto = torch.autograd.functional.jacobian(lambda v: sys.flux(v), u)
    np.testing.assert_allclose(jacobian(sys, u.numpy()), auto.numpy(), atol=1e-12)


def test_non_physical_states_raise():
    with pytest.raises(PhysicalStateError):
        flux(get_system("shallow_water"), [0.0, 1.0])
    with pytest.raises(PhysicalStateError):
        # negative pressure
        flux(get_system("euler"), [1.0, 2.0, 1.0])


def test_unknown_pde():
    with pytest.raises(ConfigurationError):
        get_system("advection")


def test_sampler_is_reproducible_and_in_range():
    sampler = IcSampler(PdeName.SHALLOW_WATER, seed=3)
    first = sampler.draw(5)
    assert first == IcSampler("shallow_water", seed=3).draw(5)
    assert first != sampler.draw(6)
    for key, (lo, hi) in PARAMETER_RANGES[PdeName.SHALLOW_WATER].items():
        assert lo <= first[key] <= hi


def test_dam_break_profile():
    sys = get_system("shallow_water")
    params = {"h_l": 3.5, "h_r": 1.0, "u_l": 0.0, "u_r": 0.0, "x_0": 0.0}
    s = initial_condition("shallow_water", sys.mesh(10), params)
    assert s.values.shape == (2, 11)
    assert s.values[0, 0] == 3.5
    assert s.values[0, -1] == 1.0
    np.testing.assert_array_equal(s.values[1], 0.0)


def test_burgers_profile():
    sys = get_system("burgers1d")
    mesh = sys.mesh(16)
    s = initial_condition("burgers1d", mesh, {"alpha": 1.0, "beta": 0.5})
    np.testing.assert_allclose(s.values[0], np.sin(mesh.centers()[0]) + 0.5)


def test_profile_rejects_wrong_mesh_and_missing_params():
    sys = get_system("burgers1d")
    with pytest.raises(ConfigurationError):
        initial_condition("burgers1d", get_system("shallow_water").mesh(8), {"alpha": 1.0, "beta": 0.0})
    with pytest.raises(ConfigurationError):
        initial_condition("burgers1d", sys.mesh(8), {"alpha": 1.0})


def test_sampled_euler_state_is_physical():
    sys = get_system("euler")
    s = sample_initial_condition(IcSampler("euler", seed=1), sys.mesh(64), index=2)
    sys.check_state(torch.from_numpy(s.values))


@pytest.mark.parametrize("name", sorted(BUILTIN_CASES))
def test_builtin_cases_on_small_grids(name):
    s = builtin_initial_condition(name, n=16)
    case = BUILTIN_CASES[name]
    sys = get_system(case.pde)
    assert s.values.shape[0] == sys.m
    assert s.mesh.dim == sys.dim
    assert np.isfinite(s.values).all()


def test_unknown_builtin_case():
    with pytest.raises(ConfigurationError):
        builtin_initial_condition("sod")


def test_shallow_water_boundary_freezes_end_cells():
    sys = get_system("shallow_water")
    values = np.array([[3.0, 2.0, 1.0], [0.1, 0.2, 0.3]])
    bc = sys.boundary_for(values)
    assert not bc.is_periodic
    assert bc.dirichlet_values == ((3.0, 0.1), (1.0, 0.3))
    assert get_system("burgers1d").boundary_for(values[:1]).is_periodic


def test_burgers_domain():
    assert get_system("burgers1d").domain == (0.0, 2.0 * math.pi)


def _random_states(pde, count=20, seed=0):
    """Physical states as [m, count]."""
    rng = np.random.default_rng(seed)
    if pde in ("burgers1d", "burgers2d"):
        return torch.from_numpy(rng.uniform(-2.0, 2.0, (1, count)))
    if pde == "shallow_water":
        h = rng.uniform(0.5, 3.0, count)
        return torch.from_numpy(np.stack([h, h * rng.uniform(-1.0, 1.0, count)]))
    rho, v, p = rng.uniform(0.5, 2.0, count), rng.uniform(-1.0, 1.0, count), rng.uniform(0.5, 2.0, count)
    return torch.from_numpy(np.stack([rho, rho * v, p / 0.4 + 0.5 * rho * v * v]))


def _central_difference(fn, u, j, h=1e-6):
    e = torch.zeros_like(u)
    e[j] = h
    return (fn(u + e) - fn(u - e)) / (2 * h)


@pytest.mark.parametrize("pde", ["burgers1d", "burgers2d", "shallow_water", "euler"])
def test_jacobian_matches_finite_differences(pde):
    sys = get_system(pde)
    u = _random_states(pde)
    for axis in range(sys.dim):
        jac = sys.jacobian(u, axis)
        for j in range(sys.m):
            fd = _central_difference(lambda v: sys.flux(v, axis), u, j)
            assert torch.allclose(jac[:, j], fd, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("pde", ["burgers1d", "burgers2d", "shallow_water", "euler"])
def test_entropy_flux_is_compatible(pde):
    # F'(u) = U'(u) f'(u)
    sys = get_system(pde)
    u = _random_states(pde, seed=1)
    d_entropy = torch.stack([_central_difference(sys.entropy, u, i) for i in range(sys.m)])
    for axis in range(sys.dim):
        jac = sys.jacobian(u, axis)
        for j in range(sys.m):
            d_flux = _central_difference(lambda v: sys.entropy_flux(v, axis), u, j)
            expected = (d_entropy * jac[:, j]).sum(dim=0)
            assert torch.allclose(d_flux, expected, rtol=1e-6, atol=1e-7)
