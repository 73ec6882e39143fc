"""Policy fitness: train under a schedule, score on held-out data.

Two trainers are built in:

* ``analytic``: gradient descent on a quadratic or Rosenbrock objective.
  There is no data; the objective value plays the role of both validation
  and test loss, and accuracy is reported as ``1 / (1 + loss)``.
* ``mlp``: a small softmax classifier on a synthetic split, trained with
  mini-batch SGD. Fitness is test accuracy of the final model.

The scheduler is called once per epoch, before the first batch.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import mlp as nn
from .data import DataSplit, SyntheticSpec, make_synthetic_dataset
from .grammar import Grammar, default_autolr_grammar, format_real
from .scheduler import DEFAULT_INITIAL_LR, Const, eval_scheduler, lr_grid

REFERENCE_TRAIN_SIZE = 7000


@dataclass
class EarlyStop:
    patience: int = 3
    metric: str = "val_loss"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.metric != "val_loss":
            raise ValueError("only val_loss is supported as early-stop metric")


@dataclass
class TrainingConfig:
    """``batch_size`` is given at the 7000-example reference scale and shrunk
    in proportion to the actual training set unless ``scale_batch`` is off."""

    epochs: int = 100
    batch_size: int = 1000
    scale_batch: bool = True
    early_stop: Optional[EarlyStop] = None
    train_seed: int = 0
    initial_prev_lr: float = DEFAULT_INITIAL_LR
    augmentation: Optional[dict] = None

    def __post_init__(self):
        if isinstance(self.early_stop, dict):
            self.early_stop = EarlyStop(**self.early_stop)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.augmentation:
            warnings.warn("data augmentation settings are ignored by the built-in trainers")

    def effective_batch_size(self, n_train: int) -> int:
        if not self.scale_batch:
            return self.batch_size
        return max(1, round(self.batch_size * n_train / REFERENCE_TRAIN_SIZE))


@dataclass
class TrainerSpec:
    kind: str = "analytic"
    objective: str = "quadratic"
    spectrum: list = field(default_factory=lambda: [30.0])
    start_point: Optional[list] = None
    steps_per_epoch: int = 1
    layer_sizes: list = field(default_factory=lambda: [2, 16, 4])
    hidden_activation: str = "relu"
    dataset: SyntheticSpec = field(default_factory=SyntheticSpec)
    data_seed: int = 0

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = SyntheticSpec(**self.dataset)
        if self.kind not in ("analytic", "mlp"):
            raise ValueError(f"unknown trainer kind {self.kind!r}")
        if self.kind == "analytic":
            if self.objective not in ("quadratic", "rosenbrock"):
                raise ValueError(f"unknown objective {self.objective!r}")
            if self.objective == "quadratic" and (not self.spectrum or min(self.spectrum) <= 0):
                raise ValueError("quadratic spectrum entries must be > 0")
            if self.steps_per_epoch < 1:
                raise ValueError("steps_per_epoch must be >= 1")
        else:
            if len(self.layer_sizes) < 2:
                raise ValueError("layer_sizes needs at least 2 entries")
            if self.layer_sizes[0] != self.dataset.n_features or self.layer_sizes[-1] != self.dataset.n_classes:
                raise ValueError("layer_sizes must start at n_features and end at n_classes")

    def initial_point(self) -> np.ndarray:
        if self.start_point is not None:
            return np.array(self.start_point, dtype=float)
        if self.objective == "quadratic":
            return np.ones(len(self.spectrum))
        return np.array([-1.2, 1.0])

    def make_split(self) -> Optional[DataSplit]:
        return make_synthetic_dataset(self.dataset, self.data_seed) if self.kind == "mlp" else None

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class FitnessReport:
    fitness: float
    best_validation_accuracy: float
    epochs_trained: int
    early_stopped: bool
    trace: list
    note: str = ""
    final_state: object = field(default=None, repr=False, compare=False)

    @property
    def test_accuracy(self):
        return self.fitness


def early_stop_check(validation_losses, patience: int) -> bool:
    """True when each of the last ``patience`` losses failed to strictly
    beat the best loss recorded before it."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if len(validation_losses) < patience + 1:
        return False
    best_before = min(validation_losses[:-patience])
    return min(validation_losses[-patience:]) >= best_before


# --- analytic objectives -----------------------------------------------------------

def _objective(trainer: TrainerSpec):
    if trainer.objective == "quadratic":
        lam = np.array(trainer.spectrum, dtype=float)

        def f(w):
            return 0.5 * float(np.sum(lam * w * w))

        def grad(w):
            return lam * w
    else:
        def f(w):
            x, y = w
            return float((1 - x) ** 2 + 100 * (y - x * x) ** 2)

        def grad(w):
            x, y = w
            return np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
    return f, grad


def analytic_accuracy(loss: float) -> float:
    return 1.0 / (1.0 + loss)


def _train_analytic(ast, trainer, config):
    f, grad = _objective(trainer)
    w = trainer.initial_point()
    prev = config.initial_prev_lr
    trace, losses = [], []
    early, note = False, ""
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            lr = eval_scheduler(ast, prev, epoch)
            prev = lr
            for _ in range(trainer.steps_per_epoch):
                w = w - lr * grad(w)
            loss = f(w)
            if not math.isfinite(loss) or not np.all(np.isfinite(w)):
                trace.append(EpochRecord(epoch, lr, math.inf, math.inf, 0.0))
                return FitnessReport(0.0, _best_acc(trace), epoch, True, trace,
                                     note=f"diverged at epoch {epoch}", final_state=w)
            trace.append(EpochRecord(epoch, lr, loss, loss, analytic_accuracy(loss)))
            losses.append(loss)
            if config.early_stop and early_stop_check(losses, config.early_stop.patience):
                early = True
                break
    return FitnessReport(analytic_accuracy(losses[-1]), _best_acc(trace), len(trace), early,
                         trace, note=note, final_state=w)


def _best_acc(trace):
    return max((r.val_acc for r in trace), default=0.0)


# --- MLP ----------------------------------------------------------------------------

def _seed(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(parts)))


def _train_mlp(ast, trainer, split, config, model=None):
    if split is None:
        raise ValueError("the mlp trainer needs a data split")
    if model is None:
        model = nn.init_mlp(trainer.layer_sizes, _seed(config.train_seed, 0), trainer.hidden_activation)
    X, y = split.train.X, split.train.y
    n = len(y)
    bs = config.effective_batch_size(n)
    prev = config.initial_prev_lr
    trace, losses = [], []
    early = False
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(1, config.epochs + 1):
            lr = eval_scheduler(ast, prev, epoch)
            prev = lr
            order = _seed(config.train_seed, 1, epoch).permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                loss, grads = nn.mlp_forward_backward(model, (X[idx], y[idx]))
                total += loss * len(idx)
                nn.sgd_step(model, grads, lr)
            train_loss = total / n
            val_loss, val_acc = nn.loss_and_accuracy(model, split.validation.X, split.validation.y)
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                trace.append(EpochRecord(epoch, lr, train_loss, val_loss, val_acc))
                return FitnessReport(0.0, _best_acc(trace), epoch, True, trace,
                                     note=f"diverged at epoch {epoch}", final_state=model)
            trace.append(EpochRecord(epoch, lr, train_loss, val_loss, val_acc))
            losses.append(val_loss)
            if config.early_stop and early_stop_check(losses, config.early_stop.patience):
                early = True
                break
    _, test_acc = nn.loss_and_accuracy(model, split.test.X, split.test.y)
    return FitnessReport(test_acc, _best_acc(trace), len(trace), early, trace, final_state=model)


def evaluate_policy(ast, trainer: TrainerSpec, split: Optional[DataSplit],
                    config: TrainingConfig) -> FitnessReport:
    """Train a fresh model under ``ast`` and return its held-out score."""
    if trainer.kind == "analytic":
        return _train_analytic(ast, trainer, config)
    return _train_mlp(ast, trainer, split, config)


@dataclass
class PolicyFitness:
    """Picklable fitness function for the evolution engine."""

    trainer: TrainerSpec
    split: Optional[DataSplit]
    config: TrainingConfig

    def __call__(self, individual, train_seed):
        cfg = replace(self.config, train_seed=train_seed)
        return evaluate_policy(individual.ast, self.trainer, self.split, cfg)


@dataclass
class OracleTable:
    """Rows of ``(lr, fitness, final_val_loss)`` in grid order.

    The argmax breaks fitness ties by lower final validation loss, since
    ``1 / (1 + loss)`` rounds to exactly 1.0 once the loss is tiny.
    """

    rows: list

    def _key(self, row):
        return (row[1], -row[2])

    @property
    def argmax(self) -> float:
        return max(self.rows, key=self._key)[0]

    @property
    def best_fitness(self) -> float:
        return max(r[1] for r in self.rows)

    def fitness_of(self, lr: float) -> float:
        for v, fit, _ in self.rows:
            if v == lr:
                return fit
        raise KeyError(lr)


def brute_force_constants(trainer: TrainerSpec, split: Optional[DataSplit], config: TrainingConfig,
                          grammar: Optional[Grammar] = None) -> OracleTable:
    """Evaluate every constant policy on the learning-rate grid."""
    grammar = grammar or default_autolr_grammar()
    rows = []
    for v in lr_grid(grammar):
        rep = evaluate_policy(Const(v), trainer, split, config)
        rows.append((v, rep.fitness, rep.trace[-1].val_loss))
    return OracleTable(rows)


def write_trace_csv(report: FitnessReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_loss", "val_acc"])
        for r in report.trace:
            w.writerow([r.epoch, format_real(r.lr), repr(r.train_loss), repr(r.val_loss), repr(r.val_acc)])


def write_oracle_csv(table: OracleTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lr", "fitness", "final_val_loss"])
        for lr, fit, loss in table.rows:
            w.writerow([format_real(lr), repr(fit), repr(loss)])
