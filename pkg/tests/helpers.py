import math

from cfn_lab.classical import SchemeVariant
from cfn_lab.grid import BoundarySpec, build_mesh
from cfn_lab.models import CfnConfig, build_model, zero_params


def small_model(variant=SchemeVariant.KT, mesh=None, dt=0.01, bc=None, m=1, seed=0, **options):
    """A narrow CFN for fast tests."""
    mesh = mesh or build_mesh(0.0, 2.0 * math.pi, 16)
    bc = bc or BoundarySpec.periodic()
    cfg = CfnConfig(variant=variant, flux_hidden=[8, 8], radius_hidden=[8], seed=seed, **options)
    return build_model(cfg, m, mesh, dt, bc)


def zeroed(model):
    """Same architecture with every parameter set to zero."""
    model.flux_net = zero_params(model.flux_net.layer_dims, model.flux_net.activation)
    if model.radius_net is not None:
        model.radius_net = zero_params(model.radius_net.layer_dims, model.radius_net.activation)
    return model
