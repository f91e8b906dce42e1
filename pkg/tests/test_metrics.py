import csv
from dataclasses import replace

import numpy as np
import pytest

from cfn_lab.classical import SolverConfig, max_stable_dt, solve_reference
from cfn_lab.data_manager import coarsen
from cfn_lab.errors import ConfigurationError, MetricError, UnsupportedOperationError
from cfn_lab.grid import BoundarySpec, FieldState, TimeGrid, Trajectory, build_mesh
from cfn_lab.metrics import (
    MetricSeries,
    align_reference,
    boundary_flux_series,
    conserved_remainder,
    entropy_remainder,
    evaluate_prediction,
    relative_l2,
    shock_location,
    write_metrics_csv,
)
from cfn_lab.physics import get_system, initial_condition
from cfn_lab.pipeline import predict

from .helpers import small_model


def test_reference_burgers_conserves(burgers_dataset):
    sys = get_system("burgers1d")
    remainder = conserved_remainder(burgers_dataset[0], sys)
    assert remainder.shape == (7, 1)
    assert remainder.max() <= 1e-12


def test_periodic_boundary_flux_cancels(burgers_dataset):
    flux = boundary_flux_series(burgers_dataset[0], get_system("burgers1d"))
    assert flux.shape == (6, 1)
    np.testing.assert_allclose(flux, 0.0, atol=1e-14)


def test_dam_break_reference_conserves_with_boundary_flux(dam_break_dataset):
    sys = get_system("shallow_water")
    remainder = conserved_remainder(dam_break_dataset[0], sys)
    assert remainder.shape == (5, 2)
    assert remainder.max() <= 1e-10


def test_cfn_prediction_conserves(burgers_dataset):
    traj = burgers_dataset[0]
    model = small_model(mesh=traj.mesh, dt=traj.dt, seed=4)
    pred = predict(model, traj.state(0), 4)
    assert conserved_remainder(pred, model).max() <= 1e-12


@pytest.mark.parametrize("variant", ["kt", "mlw", "basic"])
def test_dirichlet_cfn_prediction_conserves(dam_break_dataset, variant):
    traj = dam_break_dataset[0]
    model = small_model(variant=variant, mesh=traj.mesh, dt=traj.dt, bc=traj.bc, m=2, seed=5)
    pred = predict(model, traj.state(0), 3)
    assert conserved_remainder(pred, model).max() <= 1e-10


def test_conservation_audit_checks_model_fit(burgers_dataset):
    model = small_model(mesh=burgers_dataset.mesh, dt=0.5)
    with pytest.raises(ConfigurationError):
        conserved_remainder(burgers_dataset[0], model)


def test_entropy_decays_for_reference_burgers(burgers_dataset):
    remainder = entropy_remainder(burgers_dataset[1], get_system("burgers1d"))
    assert remainder.shape == (7,)
    assert remainder[0] == 0.0
    assert remainder.max() <= 1e-8


def test_entropy_remainder_is_zero_for_steady_state():
    sys = get_system("shallow_water")
    mesh = sys.mesh(16)
    values = np.stack([np.stack([np.full(17, 2.0), np.zeros(17)])] * 3)
    traj = Trajectory(mesh, sys.boundary_for(values[0]), values, 0.01)
    np.testing.assert_allclose(entropy_remainder(traj, sys), 0.0, atol=1e-14)


def test_entropy_remainder_rejects_wrong_system(burgers_dataset):
    with pytest.raises(ConfigurationError):
        entropy_remainder(burgers_dataset[0], get_system("euler"))


def test_relative_l2(periodic_mesh, sine_state):
    double = FieldState(periodic_mesh, 2 * sine_state.values)
    np.testing.assert_allclose(relative_l2(double, sine_state), [1.0])
    np.testing.assert_allclose(relative_l2(sine_state, sine_state), [0.0])
    with pytest.raises(MetricError):
        relative_l2(sine_state, FieldState(periodic_mesh, np.zeros((1, 16))))


def test_conserved_remainder_ignores_constant_shift(burgers_dataset):
    traj = burgers_dataset[0]
    model = small_model(mesh=traj.mesh, dt=traj.dt, seed=4)
    pred = predict(model, traj.state(0), 4)
    shifted = replace(pred, values=pred.values + 3.0)
    np.testing.assert_allclose(conserved_remainder(shifted, model), conserved_remainder(pred, model), atol=1e-12)


def test_relative_l2_of_one_cell_bump(periodic_mesh, sine_state):
    bump = sine_state.values.copy()
    bump[0, 5] += 0.25
    truth_norm = np.sqrt(periodic_mesh.cell_volume * (sine_state.values ** 2).sum())
    expected = np.sqrt(periodic_mesh.cell_volume) * 0.25 / truth_norm
    np.testing.assert_allclose(relative_l2(FieldState(periodic_mesh, bump), sine_state), [expected], rtol=1e-12)


def test_relative_l2_triangle_bound(periodic_mesh):
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b, c = (FieldState(periodic_mesh, rng.normal(size=(1, 16))) for _ in range(3))
        ratio = np.sqrt((b.values ** 2).sum() / (c.values ** 2).sum())
        bound = relative_l2(a, b) * ratio + relative_l2(b, c)
        assert relative_l2(a, c)[0] <= bound[0] * (1 + 1e-12)


def test_shock_location_ties_go_left():
    mesh = build_mesh(0.0, 1.0, 8)
    s = FieldState(mesh, np.array([[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]]))
    assert shock_location(s) == 1


def test_shock_location_is_1d_only():
    mesh = build_mesh(0.0, 1.0, 8, dim=2)
    with pytest.raises(UnsupportedOperationError):
        shock_location(FieldState(mesh, np.zeros((1, 8, 8))))


def test_align_reference_subsamples_finer_grid():
    fine_mesh = build_mesh(0.0, 1.0, 32)
    values = np.random.default_rng(0).normal(size=(5, 1, 32))
    reference = Trajectory(fine_mesh, BoundarySpec.periodic(), values, 0.1)
    pred = Trajectory(build_mesh(0.0, 1.0, 16), BoundarySpec.periodic(), values[:3, :, ::2], 0.1)
    aligned = align_reference(pred, reference)
    assert aligned.steps == 2
    np.testing.assert_array_equal(aligned.values, coarsen(reference, 2).values[:3])


def test_align_reference_rejects_other_dt(burgers_dataset):
    other = Trajectory(burgers_dataset.mesh, BoundarySpec.periodic(), burgers_dataset[0].values, 0.02)
    with pytest.raises(ConfigurationError):
        align_reference(burgers_dataset[0], other)


def test_evaluate_prediction_against_itself(burgers_dataset):
    traj = burgers_dataset[2]
    sys = get_system("burgers1d")
    series = evaluate_prediction(traj, traj, sys, sys)
    np.testing.assert_allclose(series.relative_l2, 0.0)
    np.testing.assert_array_equal(series.shock_error, 0)
    assert series.total_variation.shape == (7, 1)
    metrics = {row[1] for row in series.rows()}
    assert metrics == {
        "conserved_remainder", "entropy_remainder", "relative_l2",
        "total_variation", "shock_location", "shock_location_error",
    }


def test_evaluate_marks_zero_reference_as_nan():
    sys = get_system("shallow_water")
    values = np.stack([np.stack([np.full(17, 2.0), np.zeros(17)])] * 2)
    traj = Trajectory(sys.mesh(16), sys.boundary_for(values[0]), values, 0.01)
    series = evaluate_prediction(traj, traj, variable_names=["h", "hu"])
    assert np.isnan(series.relative_l2[0, 1])
    assert series.relative_l2[0, 0] == 0.0
    assert series.conserved is None


def test_metric_series_checks_lengths():
    with pytest.raises(ConfigurationError):
        MetricSeries(np.arange(3.0), ["u"], relative_l2=np.zeros((2, 1)))


def test_write_metrics_csv(tmp_path, burgers_dataset):
    sys = get_system("burgers1d")
    series = evaluate_prediction(burgers_dataset[0], sys=sys)
    path = write_metrics_csv(series, tmp_path / "metrics.csv")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "metric", "variable", "value"]
    assert rows[1][1] == "entropy_remainder"
    assert len(rows) == 1 + len(series.rows())


def test_entropy_boundary_flux_follows_boundary_cells():
    sys = get_system("shallow_water")
    values = np.stack([np.stack([np.full(17, 2.0), np.zeros(17)])] * 3)
    values[1, :, 0] = (2.5, 0.3)
    values[1, :, -1] = (1.5, -0.2)
    traj = Trajectory(sys.mesh(16), sys.boundary_for(values[0]), values, 0.01)

    def flux(h, hu):
        v = hu / h
        return 0.5 * h * v ** 3 + h * h * v

    expected = [0.0, 0.0, -(flux(2.5, 0.3) - flux(1.5, -0.2)) * 0.01]
    np.testing.assert_allclose(entropy_remainder(traj, sys), expected, atol=1e-15)


def test_reference_audit_replays_cfl_substeps():
    sys = get_system("shallow_water")
    params = {"h_l": 3.5, "h_r": 1.0, "u_l": 0.0, "u_r": 0.0, "x_0": 0.0}
    ic = initial_condition("shallow_water", sys.mesh(32), params, sys)
    assert max_stable_dt(ic.tensor(), sys, ic.mesh, SolverConfig().cfl) < 0.1
    # waves reach both frozen ends well before t = 4
    traj = solve_reference(ic, sys, tg=TimeGrid(0.2, 20))
    assert np.ptp(boundary_flux_series(traj, sys)[:, 0]) > 1e-3
    assert conserved_remainder(traj, sys).max() <= 1e-10
