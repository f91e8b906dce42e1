"""
CFN Lab command line
Reference data, corruption, training, prediction and evaluation runs
"""

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .classical import SchemeVariant, SolverConfig, TimeIntegrator
from .config import settings
from .data_manager import (
    COARSEN_FACTORS,
    add_noise_dataset,
    coarsen_dataset,
    dataset_from_trajectory,
    export_csv,
    generate_builtin_dataset,
    generate_dataset,
    load_checkpoint,
    load_dataset,
    save_dataset,
)
from .errors import (
    EXIT_CONFIGURATION,
    EXIT_DIVERGENCE,
    EXIT_OK,
    EXIT_TRAINING,
    ConfigurationError,
    DataFormatError,
    DivergenceError,
    PhysicalStateError,
    TrainingError,
    UnsupportedOperationError,
)
from .grid import MIN_INTERVALS
from .metrics import evaluate_prediction, write_metrics_csv
from .models import retarget
from .physics import BUILTIN_CASES, PdeName, builtin_initial_condition
from .pipeline import EpochRecord, TrainConfig, predict, train


# ============ Run configurations ============

class RunModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ReferenceRun(RunModel):
    pde: Optional[PdeName] = None
    ic: Optional[str] = None
    n: Optional[int] = Field(default=None, ge=MIN_INTERVALS)
    dt: Optional[float] = Field(default=None, gt=0.0)
    steps: Optional[int] = Field(default=None, ge=1)
    traj: int = Field(default=1, ge=1)
    seed: int = 0
    window: Optional[int] = Field(default=None, ge=1)
    scheme: SchemeVariant = SchemeVariant.KT
    cfl: float = Field(default=settings.reference_cfl, gt=0.0, le=1.0)
    g: float = Field(default=1.0, gt=0.0)
    gamma: float = Field(default=1.4, gt=1.0)
    out: Path

    @model_validator(mode="after")
    def _one_source(self) -> "ReferenceRun":
        if (self.pde is None) == (self.ic is None):
            raise ValueError("give exactly one of --pde or --ic")
        if self.ic is not None and self.ic not in BUILTIN_CASES:
            raise ValueError(f"unknown built-in case '{self.ic}', expected one of {sorted(BUILTIN_CASES)}")
        return self


class CorruptRun(RunModel):
    data: Path
    eta: float = Field(ge=0.0, le=1.0)
    seed: int = 0
    out: Path


class CoarsenRun(RunModel):
    data: Path
    factor: int
    out: Path

    @model_validator(mode="after")
    def _factor(self) -> "CoarsenRun":
        if self.factor not in COARSEN_FACTORS:
            raise ValueError(f"--factor must be one of {COARSEN_FACTORS}")
        return self


class TrainRun(RunModel):
    data: Path
    variant: SchemeVariant = SchemeVariant.KT
    epochs: int = Field(default=500, ge=1)
    lr: Optional[float] = Field(default=None, gt=0.0)
    lr_decay: Optional[float] = None
    batch: Optional[int] = Field(default=None, ge=1)
    window: int = Field(default=20, ge=1)
    val: int = Field(default=40, ge=0)
    seed: int = 0
    closed_form_speed: bool = False
    integrator: Optional[TimeIntegrator] = None
    flux_hidden: Optional[List[int]] = None
    radius_hidden: Optional[List[int]] = None
    stencil_p: int = 1
    stencil_q: int = 1
    out: Path
    report: Optional[Path] = None

    def train_config(self, workers: int) -> TrainConfig:
        extra: Dict[str, Any] = {}
        if self.lr_decay is not None:
            extra["lr_decay"] = self.lr_decay
        if self.flux_hidden is not None:
            extra["flux_hidden"] = self.flux_hidden
        if self.radius_hidden is not None:
            extra["radius_hidden"] = self.radius_hidden
        return TrainConfig(
            epochs=self.epochs,
            base_lr=self.lr,
            batch_size=self.batch,
            window=self.window,
            validation_count=self.val,
            seed=self.seed,
            variant=self.variant,
            closed_form_speed=self.closed_form_speed,
            integrator=self.integrator,
            stencil_p=self.stencil_p,
            stencil_q=self.stencil_q,
            workers=workers,
            **extra,
        )


class PredictRun(RunModel):
    model: Path
    ic_from: str
    data: Optional[Path] = None
    steps: int = Field(ge=0)
    n: Optional[int] = Field(default=None, ge=MIN_INTERVALS)
    out: Path

    @model_validator(mode="after")
    def _source(self) -> "PredictRun":
        if self.ic_from.isdigit() and self.data is None:
            raise ValueError("--ic-from with a trajectory index needs --data")
        if not self.ic_from.isdigit() and self.ic_from not in BUILTIN_CASES:
            raise ValueError(f"--ic-from must be an index or one of {sorted(BUILTIN_CASES)}")
        return self


class EvaluateRun(RunModel):
    pred: Path
    reference: Optional[Path] = None
    model: Optional[Path] = None
    index: int = Field(default=0, ge=0)
    out_csv: Path


class ExportRun(RunModel):
    data: Path
    index: int = Field(default=0, ge=0)
    var: Union[int, str] = 0
    out: Path


# ============ Commands ============

def cmd_reference(run: ReferenceRun, workers: int) -> int:
    solver = SolverConfig(scheme=run.scheme, cfl=run.cfl)
    if run.ic is not None:
        ds = generate_builtin_dataset(run.ic, run.n, run.dt, run.steps, solver, run.g, run.gamma)
    else:
        ds = generate_dataset(
            run.pde, run.n or 512, run.dt, run.steps, run.traj, run.seed,
            L_train=run.window, solver_cfg=solver, workers=workers, g=run.g, gamma=run.gamma,
        )
    save_dataset(ds, run.out)
    return EXIT_OK


def cmd_corrupt(run: CorruptRun, workers: int) -> int:
    save_dataset(add_noise_dataset(load_dataset(run.data), run.eta, run.seed), run.out)
    return EXIT_OK


def cmd_coarsen(run: CoarsenRun, workers: int) -> int:
    save_dataset(coarsen_dataset(load_dataset(run.data), run.factor), run.out)
    return EXIT_OK


def cmd_train(run: TrainRun, workers: int) -> int:
    ds = load_dataset(run.data)
    cfg = run.train_config(workers)

    writer = csv.writer(sys.stdout)
    writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
    digits = settings.csv_digits

    def on_epoch(record: EpochRecord) -> None:
        writer.writerow([
            record.epoch,
            f"{record.train_loss:.{digits}g}",
            f"{record.val_loss:.{digits}g}",
            f"{record.lr:.{digits}g}",
        ])
        sys.stdout.flush()

    # the pipeline writes the checkpoint whenever the selection loss improves
    _, report = train(ds, cfg, on_epoch, checkpoint_path=run.out)

    report_path = run.report or run.out.with_name(run.out.stem + "_report.csv")
    with open(report_path, "w", newline="", encoding="utf-8") as f:
        report_writer = csv.writer(f)
        report_writer.writerow(report.CSV_HEADER)
        for row in report.rows():
            report_writer.writerow([f"{v:.{digits}g}" if isinstance(v, float) else v for v in row])
    logger.info(f"Checkpoint {run.out}, report {report_path}")
    return EXIT_OK


def cmd_predict(run: PredictRun, workers: int) -> int:
    checkpoint = load_checkpoint(run.model)
    manifest = checkpoint.manifest
    if manifest is None:
        raise ConfigurationError(f"checkpoint {run.model} carries no dataset manifest")
    model = checkpoint.model
    sys_ = manifest.system()

    if run.ic_from.isdigit():
        source = load_dataset(run.data)
        index = int(run.ic_from)
        if index >= len(source):
            raise ConfigurationError(f"trajectory index {index} outside dataset of {len(source)}")
        ic, bc = source[index].state(0), source[index].bc
    else:
        case = BUILTIN_CASES[run.ic_from]
        if case.pde != manifest.pde:
            raise ConfigurationError(f"{run.ic_from} is a {case.pde.value} case, model is {manifest.pde.value}")
        ic = builtin_initial_condition(run.ic_from, run.n or model.mesh.n, sys_)
        bc = sys_.boundary_for(ic.values)

    if ic.mesh != model.mesh:
        logger.info(f"Retargeting model from n={model.mesh.n} to n={ic.mesh.n}")
        model = retarget(model, ic.mesh, bc)

    code = EXIT_OK
    try:
        traj = predict(model, ic, run.steps, bc)
    except DivergenceError as e:
        logger.error(f"Prediction diverged at step {e.step}; writing {e.partial.steps} steps")
        traj, code = e.partial, EXIT_DIVERGENCE
    traj.provenance["pde"] = manifest.pde.value
    save_dataset(dataset_from_trajectory(manifest, traj, f"predict:{run.ic_from}"), run.out)
    return code


def cmd_evaluate(run: EvaluateRun, workers: int) -> int:
    pred_ds = load_dataset(run.pred)
    pred = pred_ds[0]
    reference = None
    if run.reference is not None:
        ref_ds = load_dataset(run.reference)
        if run.index >= len(ref_ds):
            raise ConfigurationError(f"reference index {run.index} outside dataset of {len(ref_ds)}")
        reference = ref_ds[run.index]
    model = None
    if run.model is not None:
        model = load_checkpoint(run.model).model
        if model.mesh != pred.mesh:
            model = retarget(model, pred.mesh, pred.bc)

    series = evaluate_prediction(pred, reference, model, pred_ds.system(), pred_ds.manifest.variable_names)
    write_metrics_csv(series, run.out_csv)
    logger.info(f"Metrics written to {run.out_csv}")
    return EXIT_OK


def cmd_export(run: ExportRun, workers: int) -> int:
    ds = load_dataset(run.data)
    if run.index >= len(ds):
        raise ConfigurationError(f"trajectory index {run.index} outside dataset of {len(ds)}")
    names = ds.manifest.variable_names
    var = run.var
    if isinstance(var, str):
        if var not in names:
            raise ConfigurationError(f"unknown variable '{var}', expected one of {names}")
        var = names.index(var)
    export_csv(ds[run.index], var, run.out)
    return EXIT_OK


COMMANDS: Dict[str, tuple] = {
    "reference": (ReferenceRun, cmd_reference),
    "corrupt": (CorruptRun, cmd_corrupt),
    "coarsen": (CoarsenRun, cmd_coarsen),
    "train": (TrainRun, cmd_train),
    "predict": (PredictRun, cmd_predict),
    "evaluate": (EvaluateRun, cmd_evaluate),
    "export": (ExportRun, cmd_export),
}


# ============ Argument parsing ============

def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfn_lab",
        description="Entropy-stable conservative flux form networks",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("--log-level", dest="log_level", help="loguru level (default INFO)")
    parser.add_argument("--workers", type=int, help="parallel workers (default: all cores)")
    parser.add_argument("--config", type=Path, help="JSON file whose keys mirror the flags; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reference", help="generate a reference dataset", argument_default=argparse.SUPPRESS)
    p.add_argument("--pde", choices=[e.value for e in PdeName])
    p.add_argument("--ic", help=f"built-in test case: {', '.join(BUILTIN_CASES)}")
    p.add_argument("--n", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--traj", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int, help="training window length recorded in the manifest")
    p.add_argument("--scheme", choices=["kt", "lw", "mlw"])
    p.add_argument("--cfl", type=float)
    p.add_argument("--g", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("corrupt", help="add Gaussian observation noise", argument_default=argparse.SUPPRESS)
    p.add_argument("--data", type=Path)
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("coarsen", help="subsample to a coarser grid", argument_default=argparse.SUPPRESS)
    p.add_argument("--data", type=Path)
    p.add_argument("--factor", type=int)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("train", help="train a CFN model", argument_default=argparse.SUPPRESS)
    p.add_argument("--data", type=Path)
    p.add_argument("--variant", choices=[e.value for e in SchemeVariant])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--closed-form-speed", dest="closed_form_speed", action="store_true")
    p.add_argument("--integrator", choices=[e.value for e in TimeIntegrator])
    p.add_argument("--flux-hidden", dest="flux_hidden", type=_int_list, help="comma-separated widths")
    p.add_argument("--radius-hidden", dest="radius_hidden", type=_int_list, help="comma-separated widths")
    p.add_argument("--stencil-p", dest="stencil_p", type=int)
    p.add_argument("--stencil-q", dest="stencil_q", type=int)
    p.add_argument("--out", type=Path, help="checkpoint file")
    p.add_argument("--report", type=Path, help="per-epoch CSV report")

    p = sub.add_parser("predict", help="roll a trained model forward", argument_default=argparse.SUPPRESS)
    p.add_argument("--model", type=Path)
    p.add_argument("--ic-from", dest="ic_from", help="dataset trajectory index or built-in case name")
    p.add_argument("--data", type=Path, help="dataset for --ic-from INDEX")
    p.add_argument("--steps", type=int)
    p.add_argument("--n", type=int, help="grid size for built-in initial conditions")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("evaluate", help="metric series of a prediction", argument_default=argparse.SUPPRESS)
    p.add_argument("--pred", type=Path)
    p.add_argument("--reference", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--index", type=int, help="reference trajectory index")
    p.add_argument("--out-csv", dest="out_csv", type=Path)

    p = sub.add_parser("export", help="CSV of one trajectory variable", argument_default=argparse.SUPPRESS)
    p.add_argument("--data", type=Path)
    p.add_argument("--index", type=int)
    p.add_argument("--var", help="variable index or name")
    p.add_argument("--out", type=Path)
    return parser


def load_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return {key.replace("-", "_"): value for key, value in raw.items()}


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper())


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")

    try:
        options = load_config_file(args.pop("config", None))
    except ConfigurationError as e:
        configure_logging(settings.log_level)
        logger.error(str(e))
        return EXIT_CONFIGURATION
    options.update(args)
    try:
        configure_logging(str(options.pop("log_level", settings.log_level)))
    except ValueError as e:
        configure_logging(settings.log_level)
        logger.error(f"invalid log level: {e}")
        return EXIT_CONFIGURATION
    workers = int(options.pop("workers", settings.default_workers))

    if "var" in options and isinstance(options["var"], str) and options["var"].isdigit():
        options["var"] = int(options["var"])

    run_model, handler = COMMANDS[command]
    try:
        run = run_model.model_validate(options)
        return handler(run, workers)
    except ValidationError as e:
        parser.print_usage(sys.stderr)
        logger.error(f"Invalid {command} configuration:\n{e}")
        return EXIT_CONFIGURATION
    except (ConfigurationError, UnsupportedOperationError, DataFormatError) as e:
        logger.error(f"{command}: {e}")
        return EXIT_CONFIGURATION
    except (DivergenceError, PhysicalStateError) as e:
        logger.error(f"{command}: numerical divergence: {e}")
        return EXIT_DIVERGENCE
    except TrainingError as e:
        logger.error(f"{command}: {e}")
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
