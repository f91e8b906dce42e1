"""
Models Module
"""

from .autodiff import (
    DTYPE,
    Activation,
    MlpParams,
    Tape,
    init_params,
    zero_params,
    mlp_forward,
    input_jacobian,
    grad_params,
)
from .optim import AdamState, adam_step, decayed_learning_rate, DEFAULT_DECAY
from .cfn import (
    CfnConfig,
    CfnModel,
    NeuralFlux,
    RolloutResult,
    DEFAULT_INTEGRATORS,
    ALLOWED_INTEGRATORS,
    closed_form_radius,
    build_model,
    retarget,
    neural_flux,
    surrogate_radius,
    model_interface_fluxes,
    model_rhs,
    kt_neural_rhs,
    step_tensor,
    step,
    rollout_tensor,
    rollout,
)

__all__ = [
    'DTYPE',
    'Activation',
    'MlpParams',
    'Tape',
    'init_params',
    'zero_params',
    'mlp_forward',
    'input_jacobian',
    'grad_params',
    'AdamState',
    'adam_step',
    'decayed_learning_rate',
    'DEFAULT_DECAY',
    'CfnConfig',
    'CfnModel',
    'NeuralFlux',
    'RolloutResult',
    'DEFAULT_INTEGRATORS',
    'ALLOWED_INTEGRATORS',
    'closed_form_radius',
    'build_model',
    'retarget',
    'neural_flux',
    'surrogate_radius',
    'model_interface_fluxes',
    'model_rhs',
    'kt_neural_rhs',
    'step_tensor',
    'step',
    'rollout_tensor',
    'rollout',
]
