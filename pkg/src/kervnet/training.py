"""Losses, optimizers, the early-stopping epoch loop and k-fold splits."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (ConfigurationError, DomainError, NumericDivergenceError, ShapeError,
                     TrainingDivergenceError)
from .layers import Softmax
from .models import Model
from .tensor import Rng, as_tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
LOSSES = ("cross_entropy", "rmse")


# ---------------------------------------------------------------- losses


def cross_entropy(probs, onehot) -> float:
    """Mean over the batch of ``-log p(true class)``, with ``p`` floored at 1e-12."""
    p = as_tensor(probs)
    y = as_tensor(onehot)
    if p.shape != y.shape:
        raise ShapeError(f"cross_entropy: {p.shape} vs {y.shape}")
    if not np.allclose(p.sum(axis=-1), 1.0, atol=1e-6):
        raise DomainError("cross_entropy expects rows of probabilities summing to 1")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise DomainError("labels are not one-hot")
    true_p = (p * y).sum(axis=-1)
    return float(-np.mean(np.log(np.maximum(true_p, PROB_FLOOR))))


def rmse(x, xhat) -> float:
    x = as_tensor(x)
    xhat = as_tensor(xhat)
    if x.shape != xhat.shape:
        raise ShapeError(f"rmse: shape mismatch {x.shape} vs {xhat.shape}")
    return float(np.sqrt(np.mean((x - xhat) ** 2)))


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _loss_and_grad(model: Model, out: np.ndarray, target: np.ndarray, loss: str):
    """Loss value and the gradient to start backpropagation with.

    Returns ``(value, grad, start)``; for cross-entropy after a final softmax
    the gradient is taken directly w.r.t. the softmax input (``start`` is the
    index of the last layer to backpropagate through).
    """
    last = len(model.layers) - 1
    if loss == "cross_entropy":
        value = cross_entropy(out, target)
        n = out.shape[0]
        if isinstance(model.layers[-1], Softmax):
            return value, (out - target) / n, last - 1
        return value, -target / (n * np.maximum(out, PROB_FLOOR)), last
    value = rmse(target, out)
    if value == 0.0:
        return value, np.zeros_like(out), last
    return value, (out - target) / (out.size * value), last


# ---------------------------------------------------------------- optimizers


@dataclass
class TrainSchedule:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.0
    decay: float = 0.0
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.patience >= self.max_epochs:
            raise ConfigurationError("patience must be smaller than max_epochs")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")

    @classmethod
    def ronao(cls, seed: int = 0) -> "TrainSchedule":
        return cls("sgd_momentum", 0.02, 0.5, 5e-5, 128, 5000, 100, seed)


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def sgd_momentum_step(params: dict, grads: dict, state: OptimizerState,
                      schedule: TrainSchedule, iteration: int | None = None) -> dict:
    """Classical momentum with inverse-time decay ``lr / (1 + decay * iteration)``.

    ``iteration`` counts previous updates (defaults to ``state.step``).
    """
    it = state.step if iteration is None else iteration
    lr = schedule.learning_rate / (1.0 + schedule.decay * it)
    for name, g in grads.items():
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(g)
        v *= schedule.momentum
        v += g
        params[name] -= lr * v
    state.step = it + 1
    return params


ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(params: dict, grads: dict, state: OptimizerState, schedule: TrainSchedule) -> dict:
    state.step += 1
    t = state.step
    lr = schedule.learning_rate / (1.0 + schedule.decay * (t - 1))
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params


# ---------------------------------------------------------------- fit


@dataclass
class TrainReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    wall_time: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.val_losses)

    def lines(self) -> list[str]:
        out = [f"epoch {i + 1} train_loss={t!r} val_loss={v!r}"
               for i, (t, v) in enumerate(zip(self.train_losses, self.val_losses))]
        out.append(f"best_epoch {self.best_epoch} best_val_loss={self.best_val_loss!r}")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_loss(model: Model, data, loss: str, batch_size: int = 256) -> float:
    X, Y = data
    out = model.predict(X, batch_size)
    if loss == "cross_entropy":
        return cross_entropy(out, Y)
    return rmse(Y, out)


def fit(model: Model, train, validation, schedule: TrainSchedule,
        loss: str = "cross_entropy") -> TrainReport:
    """Mini-batch training with early stopping on the validation loss.

    ``train`` and ``validation`` are ``(inputs, targets)`` pairs (one-hot
    targets for cross-entropy, the inputs themselves for an autoencoder).
    The model ends up holding the weights of the best validation epoch.
    """
    if loss not in LOSSES:
        raise ConfigurationError(f"unknown loss {loss!r}")
    X, Y = train
    if len(X) == 0 or len(validation[0]) == 0:
        raise ConfigurationError("fit needs non-empty train and validation splits")
    started = time.perf_counter()
    rng = Rng(schedule.seed)
    shuffle = rng.spawn("shuffle")
    model.set_dropout_rng(rng.spawn("dropout"))
    state = OptimizerState()
    report = TrainReport()
    best_state = model.state_dict()
    wait = 0
    params = model.parameters()
    bs = schedule.batch_size
    # overflow surfaces as a non-finite loss or a named layer error below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, schedule.max_epochs + 1):
            order = shuffle.permutation(len(X))
            total, weight = 0.0, 0
            try:
                for start in range(0, len(X), bs):
                    idx = order[start : start + bs]
                    out = model.forward(X[idx], train=True)
                    value, grad, last = _loss_and_grad(model, out, Y[idx], loss)
                    if not math.isfinite(value):
                        raise FloatingPointError(f"non-finite {loss} at epoch {epoch}")
                    grads = model.backward_from(last, grad)
                    if schedule.optimizer == "adam":
                        adam_step(params, grads, state, schedule)
                    else:
                        sgd_momentum_step(params, grads, state, schedule)
                    # rmse aggregates as root of the size-weighted mean square
                    total += (value**2 if loss == "rmse" else value) * len(idx)
                    weight += len(idx)
                val = evaluate_loss(model, validation, loss)
            except (FloatingPointError, NumericDivergenceError) as exc:
                report.wall_time = time.perf_counter() - started
                raise TrainingDivergenceError(f"training diverged: {exc}", report) from exc
            if not math.isfinite(val):
                report.wall_time = time.perf_counter() - started
                raise TrainingDivergenceError(f"non-finite validation loss at epoch {epoch}", report)
            train_loss = total / weight
            report.train_losses.append(math.sqrt(train_loss) if loss == "rmse" else train_loss)
            report.val_losses.append(val)
            log.info("epoch %d train_loss=%.6g val_loss=%.6g", epoch, report.train_losses[-1], val)
            if val < report.best_val_loss:
                report.best_val_loss, report.best_epoch = val, epoch
                best_state = model.state_dict()
                wait = 0
            else:
                wait += 1
                if wait >= schedule.patience:
                    break
    model.load_state_dict(best_state)
    report.wall_time = time.perf_counter() - started
    return report


def kfold(dataset, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold ``(train_idx, val_idx)`` splits; fold sizes differ by at most one."""
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if k > n:
        raise ConfigurationError(f"k={k} exceeds dataset size {n}")
    order = Rng(seed).spawn("kfold").permutation(n)
    folds = np.array_split(order, k)
    return [(np.sort(np.concatenate(folds[:i] + folds[i + 1 :])), np.sort(f))
            for i, f in enumerate(folds)]
