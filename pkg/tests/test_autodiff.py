import math
import warnings

import pytest
import torch

from cfn_lab.errors import ConfigurationError, UnsupportedOperationError
from cfn_lab.models import (
    DEFAULT_DECAY,
    Activation,
    AdamState,
    MlpParams,
    Tape,
    adam_step,
    decayed_learning_rate,
    grad_params,
    init_params,
    input_jacobian,
    mlp_forward,
    zero_params,
)


def test_init_is_reproducible():
    a = init_params([2, 5, 3], seed=4)
    b = init_params([2, 5, 3], seed=4)
    c = init_params([2, 5, 3], seed=5)
    assert all(torch.equal(x, y) for x, y in zip(a.tensors(), b.tensors()))
    assert not torch.equal(a.weights[0], c.weights[0])
    assert a.layer_dims == [2, 5, 3]
    assert len(a.biases) == 1
    assert a.num_parameters() == 2 * 5 + 5 * 3 + 5


def test_init_bounds_follow_glorot():
    p = init_params([10, 30], seed=0)
    assert float(p.weights[0].abs().max()) <= (6.0 / 40.0) ** 0.5


def test_invalid_layers():
    with pytest.raises(ConfigurationError):
        init_params([3])
    with pytest.raises(ConfigurationError):
        MlpParams([torch.zeros(4, 2, dtype=torch.float64), torch.zeros(3, 5, dtype=torch.float64)],
                  [torch.zeros(4, dtype=torch.float64)])


def test_forward_shapes_and_zero_net():
    p = init_params([2, 4, 3], seed=1)
    assert mlp_forward(p, torch.ones(7, 2, dtype=torch.float64)).shape == (7, 3)
    z = zero_params([2, 4, 3])
    assert torch.equal(mlp_forward(z, torch.ones(2, dtype=torch.float64)), torch.zeros(3, dtype=torch.float64))
    with pytest.raises(ConfigurationError):
        mlp_forward(p, torch.ones(3, dtype=torch.float64))


def test_single_layer_is_linear():
    w = torch.tensor([[2.0, -1.0]], dtype=torch.float64)
    p = MlpParams([w], [], Activation.RELU)
    v = torch.tensor([3.0, 4.0], dtype=torch.float64)
    assert float(mlp_forward(p, v)[0]) == pytest.approx(2.0)
    jac = input_jacobian(p, v)
    assert torch.allclose(jac, w)


def test_input_jacobian_matches_autograd():
    p = init_params([3, 6, 2], seed=2)
    v = torch.tensor([0.1, -0.4, 0.7], dtype=torch.float64)
    expected = torch.autograd.functional.jacobian(lambda x: mlp_forward(p, x), v)
    assert torch.allclose(input_jacobian(p, v), expected, atol=1e-14)
    assert torch.allclose(input_jacobian(p, v, outputs=[1])[0], expected[1], atol=1e-14)


def test_input_jacobian_batched():
    p = init_params([2, 5, 2], seed=3)
    v = torch.randn(4, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    jac = input_jacobian(p, v)
    assert jac.shape == (4, 2, 2)
    for k in range(4):
        single = torch.autograd.functional.jacobian(lambda x: mlp_forward(p, x), v[k])
        assert torch.allclose(jac[k], single, atol=1e-14)


def test_input_jacobian_matches_finite_differences():
    p = init_params([2, 7, 7, 3], seed=8)
    points = torch.randn(5, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    h = 1e-6
    for v in points:
        jac = input_jacobian(p, v)
        for j in range(2):
            e = torch.zeros(2, dtype=torch.float64)
            e[j] = h
            fd = (mlp_forward(p, v + e) - mlp_forward(p, v - e)) / (2 * h)
            assert torch.allclose(jac[:, j], fd, atol=1e-8)


@pytest.mark.parametrize("x", [-3.0, -0.5, 0.0, 0.7, 4.0])
def test_input_jacobian_uses_silu_derivative(x):
    one = torch.ones(1, 1, dtype=torch.float64)
    p = MlpParams([one, one.clone()], [torch.zeros(1, dtype=torch.float64)])
    sig = 1.0 / (1.0 + math.exp(-x))
    expected = sig * (1.0 + x * (1.0 - sig))
    assert float(input_jacobian(p, torch.tensor([x], dtype=torch.float64))) == pytest.approx(expected, rel=1e-12)


def test_gradient_matches_finite_differences():
    p = init_params([1, 4, 1], seed=6)
    v = torch.tensor([[0.3], [-0.8]], dtype=torch.float64)

    def loss(params, x):
        return (mlp_forward(params, x) ** 2).sum()

    value, (grad,) = grad_params(loss, [p], v)
    h = 1e-6
    w = p.weights[0].detach().clone()
    w_plus, w_minus = w.clone(), w.clone()
    w_plus[2, 0] += h
    w_minus[2, 0] -= h
    fd = (loss(MlpParams([w_plus, p.weights[1].detach()], [p.biases[0].detach()]), v)
          - loss(MlpParams([w_minus, p.weights[1].detach()], [p.biases[0].detach()]), v)) / (2 * h)
    assert float(grad.weights[0][2, 0]) == pytest.approx(float(fd), rel=1e-6, abs=1e-9)
    assert value == pytest.approx(float(loss(p, v)))


def test_unused_parameters_get_zero_gradient():
    used = init_params([1, 2, 1], seed=0)
    unused = init_params([1, 2, 1], seed=1)
    tape = Tape(used, unused)
    loss = mlp_forward(used, torch.ones(1, dtype=torch.float64)).sum()
    g_used, g_unused = tape.gradient(loss)
    assert all(not bool(t.any()) for t in g_unused.tensors())
    assert g_used.layer_dims == used.layer_dims


def test_gradient_requires_scalar():
    p = init_params([1, 2, 1], seed=0)
    tape = Tape(p)
    with pytest.raises(UnsupportedOperationError):
        tape.gradient(mlp_forward(p, torch.ones(3, 1, dtype=torch.float64)))


def test_learning_rate_decay():
    assert decayed_learning_rate(1e-3, DEFAULT_DECAY, 0) == pytest.approx(1e-3)
    assert decayed_learning_rate(1e-3, 0.5, 3) == pytest.approx(1.25e-4)


def test_adam_first_step_moves_by_lr():
    p = init_params([1, 1], seed=0)
    start = p.weights[0].detach().clone()
    state = AdamState([p], base_lr=0.01)
    grad = p.with_tensors([torch.full_like(p.weights[0], 3.0)])
    adam_step(state, [p], [grad])
    assert state.step_count == 1
    assert torch.allclose(p.weights[0].detach(), start - 0.01, atol=1e-8)
    first, second = state.moments()[0]
    assert torch.allclose(first, torch.full_like(first, 0.3))
    assert torch.allclose(second, torch.full_like(second, 9.0 * 0.001))


def test_adam_skips_non_finite_and_zero_gradients():
    p = init_params([1, 2, 1], seed=0)
    start = [t.detach().clone() for t in p.tensors()]
    state = AdamState([p], base_lr=0.1)

    bad = p.with_tensors([torch.full_like(t, float("nan")) for t in p.tensors()])
    adam_step(state, [p], [bad])
    assert state.skipped_steps == 1
    assert state.step_count == 0

    zero = p.with_tensors([torch.zeros_like(t) for t in p.tensors()])
    adam_step(state, [p], [zero])
    assert state.step_count == 1
    assert all(torch.equal(a.detach(), b) for a, b in zip(p.tensors(), start))


def test_adam_epoch_decay():
    p = init_params([1, 1], seed=0)
    state = AdamState([p], base_lr=0.1, decay=0.5)
    state.end_epoch()
    state.end_epoch()
    assert state.effective_lr == pytest.approx(0.025)
    assert state.optimizer.param_groups[0]["lr"] == pytest.approx(0.025)


def test_adam_rejects_foreign_parameters():
    p, q = init_params([1, 1], seed=0), init_params([1, 1], seed=1)
    state = AdamState([p], base_lr=0.1)
    with pytest.raises(ConfigurationError):
        adam_step(state, [q], [q])


def test_zero_gradient_keeps_bias_correction_in_step():
    p = init_params([1, 1], seed=0)
    state = AdamState([p], base_lr=0.01)
    adam_step(state, [p], [p.with_tensors([torch.zeros_like(p.weights[0])])])
    start = p.weights[0].detach().clone()
    adam_step(state, [p], [p.with_tensors([torch.full_like(p.weights[0], 3.0)])])
    assert state.step_count == 2
    assert float(state.optimizer.state[p.weights[0]]["step"]) == 2.0
    # t = 2: m_hat = 0.1 g / (1 - 0.9^2), v_hat = 0.001 g^2 / (1 - 0.999^2)
    m_hat = 0.1 / (1 - 0.9 ** 2)
    v_hat = 0.001 / (1 - 0.999 ** 2)
    moved = float(start - p.weights[0].detach())
    assert moved == pytest.approx(0.01 * m_hat / math.sqrt(v_hat), rel=1e-6)


def test_epoch_decay_before_first_update_is_silent():
    p = init_params([1, 1], seed=0)
    state = AdamState([p], base_lr=0.1, decay=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error", UserWarning)
        state.end_epoch()
        adam_step(state, [p], [p.with_tensors([torch.ones_like(p.weights[0])])])
        state.end_epoch()
    assert state.optimizer.param_groups[0]["lr"] == pytest.approx(0.025)
