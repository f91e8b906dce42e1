"""
Training Pipeline
Recurrent-loss optimisation of CFN models over trajectory windows
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from .classical import SchemeVariant, TimeIntegrator
from .config import settings
from .data_manager import Dataset, save_checkpoint
from .errors import ConfigurationError, DivergenceError, TrainingError
from .grid import BoundarySpec, FieldState, Trajectory
from .models import (
    DEFAULT_DECAY,
    DTYPE,
    Activation,
    AdamState,
    CfnConfig,
    CfnModel,
    MlpParams,
    Tape,
    adam_step,
    build_model,
    rollout,
    rollout_tensor,
)


class TrainConfig(BaseModel):
    """Training hyper-parameters; unset lr and batch fall back to per-PDE defaults."""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=500, ge=1)
    base_lr: Optional[float] = Field(default=None, gt=0.0)
    lr_decay: float = Field(default=DEFAULT_DECAY, gt=0.0, le=1.0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    window: int = Field(default=20, ge=1)
    validation_count: int = Field(default=40, ge=0)
    seed: int = 0

    # Model
    variant: SchemeVariant = SchemeVariant.KT
    closed_form_speed: bool = False
    integrator: Optional[TimeIntegrator] = None
    flux_hidden: List[int] = Field(default_factory=lambda: [64] * 5)
    radius_hidden: List[int] = Field(default_factory=lambda: [64] * 2)
    flux_activation: Activation = Activation.SILU
    radius_activation: Activation = Activation.RELU
    mlw_C: float = Field(default=0.05, gt=0.0)
    mlw_alpha: float = Field(default=1.0, gt=0.0)
    stencil_p: int = Field(default=1, ge=0, le=1)
    stencil_q: int = Field(default=1, ge=0, le=2)

    # Adam
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)

    sentinel_loss: float = Field(default=settings.sentinel_loss, gt=0.0)
    workers: int = Field(default=1, ge=1)

    def cfn_config(self) -> CfnConfig:
        return CfnConfig(
            variant=self.variant,
            flux_hidden=self.flux_hidden,
            radius_hidden=self.radius_hidden,
            flux_activation=self.flux_activation,
            radius_activation=self.radius_activation,
            closed_form_speed=self.closed_form_speed,
            integrator=self.integrator,
            mlw_C=self.mlw_C,
            mlw_alpha=self.mlw_alpha,
            stencil_p=self.stencil_p,
            stencil_q=self.stencil_q,
            seed=self.seed,
        )


@dataclass
class EpochRecord:
    """Losses after one epoch; epoch 0 is the untrained model."""
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_time: float
    diverged_windows: int = 0
    improved: bool = False


@dataclass
class TrainReport:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    skipped_steps: int = 0

    @property
    def best_loss(self) -> float:
        return self.records[self.best_epoch].val_loss

    @property
    def initial(self) -> EpochRecord:
        return self.records[0]

    @property
    def diverged_windows(self) -> int:
        return sum(r.diverged_windows for r in self.records)

    CSV_HEADER = ("epoch", "train_loss", "val_loss", "lr", "wall_time", "diverged_windows", "improved")

    def rows(self) -> List[Tuple]:
        return [
            (r.epoch, r.train_loss, r.val_loss, r.lr, r.wall_time, r.diverged_windows, int(r.improved))
            for r in self.records
        ]


@dataclass
class WindowResult:
    loss: float
    grads: Optional[List[MlpParams]]
    diverged: bool = False


# ============ Loss ============

def _check_window(model: CfnModel, window: Trajectory) -> None:
    if window.mesh != model.mesh:
        raise ConfigurationError("window mesh does not match the model mesh")
    if not math.isclose(window.dt, model.dt, rel_tol=1e-12):
        raise ConfigurationError(f"window dt {window.dt} does not match model dt {model.dt}")
    if window.steps < 1:
        raise ConfigurationError("a training window needs at least one step")


def _window_model(model: CfnModel, window: Trajectory) -> CfnModel:
    # Dirichlet data carries its own frozen boundary values
    return model if window.bc == model.bc else replace(model, bc=window.bc)


def _window_loss(model: CfnModel, window: Trajectory) -> torch.Tensor:
    data = torch.from_numpy(window.values)
    states = rollout_tensor(_window_model(model, window), data[0], window.steps)
    loss = sum(((u - d) ** 2).sum() for u, d in zip(states[1:], data[1:])) / window.steps
    if not torch.isfinite(loss):
        raise DivergenceError("non-finite recurrent loss", step=window.steps)
    return loss


def recurrent_loss(model: CfnModel, window: Trajectory, sentinel: Optional[float] = None) -> torch.Tensor:
    """(1/L) Σ_{l=1..L} ||u_NN(t_l) - u(t_l)||² of the rollout from the window's first state.

    A diverging rollout yields the constant `sentinel` (no gradient).
    """
    _check_window(model, window)
    try:
        return _window_loss(model, window)
    except DivergenceError as e:
        sentinel = settings.sentinel_loss if sentinel is None else sentinel
        logger.warning(f"Rollout diverged in training window ({e}); using sentinel loss {sentinel:g}")
        return torch.tensor(sentinel, dtype=DTYPE)


def window_gradient(model: CfnModel, window: Trajectory, sentinel: float) -> WindowResult:
    """Loss and parameter gradients of one window on a private tape."""
    tape = Tape(*model.param_sets())
    try:
        with torch.enable_grad():
            loss = _window_loss(model, window)
            grads = tape.gradient(loss)
    except DivergenceError:
        zeros = [p.with_tensors([torch.zeros_like(t) for t in p.tensors()]) for p in model.param_sets()]
        return WindowResult(sentinel, zeros, diverged=True)
    return WindowResult(float(loss.detach()), grads)


def window_value(model: CfnModel, window: Trajectory, sentinel: float) -> WindowResult:
    try:
        with torch.no_grad():
            return WindowResult(float(_window_loss(model, window)), None)
    except DivergenceError:
        return WindowResult(sentinel, None, diverged=True)


def mean_gradient(results: Sequence[WindowResult], like: Sequence[MlpParams]) -> List[MlpParams]:
    """Average of per-window gradients, summed in window order."""
    out = []
    for k, p in enumerate(like):
        acc = [torch.zeros_like(t) for t in p.tensors()]
        for r in results:
            for a, g in zip(acc, r.grads[k].tensors()):
                a += g
        out.append(p.with_tensors([a / len(results) for a in acc]))
    return out


# ============ Pipeline ============

class TrainingPipeline:
    """
    Trains one CFN model on a dataset:
    - splits trajectories into training and held-out validation sets
    - samples training windows per epoch and shuffles them into mini-batches
    - averages window gradients in a fixed order and applies Adam
    - keeps the parameters with the lowest validation loss
    """

    def __init__(
        self,
        dataset: Dataset,
        cfg: TrainConfig,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None,
        checkpoint_path: Optional[Path] = None,
    ):
        """
        Args:
            dataset: Trajectories and their manifest
            cfg: Training configuration
            on_epoch: Called with each EpochRecord, epoch 0 included
            checkpoint_path: Where improved parameters are saved, if given
        """
        if len(dataset) == 0:
            raise ConfigurationError("cannot train on an empty dataset")
        self.dataset = dataset
        self.cfg = cfg
        self.on_epoch = on_epoch
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None

        self.system = dataset.system()
        self.lr = cfg.base_lr or self.system.default_lr
        self.batch_size = cfg.batch_size or self.system.default_batch
        self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed])))

        first = dataset[0]
        for traj in dataset.trajectories:
            if traj.mesh != first.mesh or traj.m != first.m or not math.isclose(traj.dt, first.dt, rel_tol=1e-12):
                raise ConfigurationError("dataset trajectories do not share mesh, m and dt")
            if traj.steps < cfg.window:
                raise ConfigurationError(f"window {cfg.window} is longer than a trajectory of {traj.steps} steps")
        if first.m != self.system.m:
            raise ConfigurationError(f"dataset has {first.m} variables, {self.system.name.value} expects {self.system.m}")

        self.model = build_model(cfg.cfn_config(), first.m, first.mesh, first.dt, first.bc)
        self.train_set, self.val_set = self._split()
        self.val_windows = [self._window(t) for t in self.val_set]
        self.optimizer = AdamState(
            self.model.param_sets(), self.lr, cfg.lr_decay, cfg.beta1, cfg.beta2, cfg.adam_eps
        )
        self.report = TrainReport()
        self._best: Optional[List[MlpParams]] = None

    def _split(self) -> Tuple[List[Trajectory], List[Trajectory]]:
        n = len(self.dataset)
        count = self.cfg.validation_count
        if count >= n:
            count = n // 5
            logger.warning(
                f"validation_count {self.cfg.validation_count} >= {n} trajectories; using {count}"
                + (" (checkpoint chosen by training loss)" if count == 0 else "")
            )
        return list(self.dataset.trajectories[:n - count]), list(self.dataset.trajectories[n - count:])

    def _window(self, traj: Trajectory) -> Trajectory:
        span = traj.steps - self.cfg.window
        if span == 0:
            return traj.window(0, self.cfg.window)
        start = int(self.rng.integers(0, span + 1))
        return traj.window(start, self.cfg.window)

    def _map(self, fn, windows):
        if self.cfg.workers > 1 and len(windows) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(fn, windows))
        return [fn(w) for w in windows]

    def _evaluate(self, windows: Sequence[Trajectory]) -> Tuple[float, int]:
        sentinel = self.cfg.sentinel_loss
        results = self._map(lambda w: window_value(self.model, w, sentinel), windows)
        return float(np.mean([r.loss for r in results])), sum(r.diverged for r in results)

    def _selection_loss(self, train_windows: Sequence[Trajectory]) -> float:
        if self.val_windows:
            return self._evaluate(self.val_windows)[0]
        return self._evaluate(train_windows)[0]

    def _record(self, record: EpochRecord) -> None:
        best = self.report.records[self.report.best_epoch].val_loss if self.report.records else math.inf
        if record.val_loss < best or self._best is None:
            record.improved = True
            self.report.best_epoch = len(self.report.records)
            self._best = [p.clone() for p in self.model.param_sets()]
            if self.checkpoint_path is not None:
                save_checkpoint(
                    self._best_model(), self.checkpoint_path, self.dataset.manifest,
                    self.optimizer.config(), record.val_loss, self.cfg.seed,
                )
        self.report.records.append(record)
        logger.info(
            f"Epoch {record.epoch}: train={record.train_loss:.6g} val={record.val_loss:.6g} "
            f"lr={record.lr:.3g}{' *' if record.improved else ''}"
        )
        if self.on_epoch is not None:
            self.on_epoch(record)

    def _best_model(self) -> CfnModel:
        best = self._best or self.model.param_sets()
        flux_net = best[0].clone()
        radius_net = best[1].clone() if len(best) > 1 else None
        return replace(self.model, flux_net=flux_net, radius_net=radius_net)

    def run_epoch(self, epoch: int) -> EpochRecord:
        start = time.time()
        windows = [self._window(t) for t in self.train_set]
        order = self.rng.permutation(len(windows))
        sentinel = self.cfg.sentinel_loss
        losses, diverged = [], 0

        for first in range(0, len(order), self.batch_size):
            batch = [windows[k] for k in order[first:first + self.batch_size]]
            results = self._map(lambda w: window_gradient(self.model, w, sentinel), batch)
            losses.extend(r.loss for r in results)
            diverged += sum(r.diverged for r in results)
            grads = mean_gradient(results, self.model.param_sets())
            adam_step(self.optimizer, self.model.param_sets(), grads)

        lr = self.optimizer.effective_lr
        self.optimizer.end_epoch()
        val_loss = self._selection_loss(windows)
        if diverged:
            logger.warning(f"Epoch {epoch}: {diverged} training windows diverged")
        return EpochRecord(epoch, float(np.mean(losses)), val_loss, lr, time.time() - start, diverged)

    def run(self) -> Tuple[CfnModel, TrainReport]:
        logger.info(
            f"Training {self.cfg.variant.value} CFN on {len(self.train_set)} trajectories "
            f"({len(self.val_set)} held out), {self.cfg.epochs} epochs, lr={self.lr:g}, batch={self.batch_size}"
        )
        start = time.time()
        initial_windows = [self._window(t) for t in self.train_set]
        train_loss, _ = self._evaluate(initial_windows)
        val_loss = self._selection_loss(initial_windows)
        self._record(EpochRecord(0, train_loss, val_loss, self.optimizer.effective_lr, time.time() - start))

        for epoch in range(1, self.cfg.epochs + 1):
            self._record(self.run_epoch(epoch))

        self.report.skipped_steps = self.optimizer.skipped_steps
        if not math.isfinite(self.report.best_loss):
            logger.error("Training finished without a finite validation loss")
            raise TrainingError("best validation loss is not finite")
        logger.info(f"Best epoch {self.report.best_epoch} with loss {self.report.best_loss:.6g}")
        return self._best_model(), self.report


def train(
    dataset: Dataset,
    cfg: Optional[TrainConfig] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    checkpoint_path: Optional[Path] = None,
) -> Tuple[CfnModel, TrainReport]:
    """Train a CFN model and return the best checkpoint with its report."""
    return TrainingPipeline(dataset, cfg or TrainConfig(), on_epoch, checkpoint_path).run()


# ============ Prediction ============

def predict(model: CfnModel, ic: FieldState, K: int, bc: Optional[BoundarySpec] = None) -> Trajectory:
    """K-step rollout without tapes, recorded as a trajectory from ic."""
    if K < 0:
        raise ConfigurationError(f"K must be non-negative, got {K}")
    if ic.mesh != model.mesh:
        raise ConfigurationError("initial condition mesh does not match the model mesh")
    if ic.m != model.m:
        raise ConfigurationError(f"initial condition has {ic.m} variables, model expects {model.m}")
    if bc is None and not model.bc.is_periodic:
        bc = BoundarySpec.dirichlet(ic.values[:, 0], ic.values[:, -1])
    model = replace(model, bc=bc) if bc is not None else model
    provenance = {"model": model.describe()}

    if K == 0:
        return Trajectory.from_states([ic], model.bc, model.dt, provenance)
    try:
        result = rollout(model, ic, K)
    except DivergenceError as e:
        partial = e.partial.to_trajectory(model.bc, provenance)
        raise DivergenceError(str(e), partial=partial, step=e.step) from e
    return result.to_trajectory(model.bc, provenance)
